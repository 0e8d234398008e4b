#pragma once

#include <stdexcept>
#include <string>

namespace dmanus {

struct SingularityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct JointLimitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedMode : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct WrongCount : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SplitViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptySubset : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SourceStalled : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ModelMissing : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ExhaustedScene : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dmanus
