#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dmanus/errors.hpp"
#include "dmanus/geom.hpp"
#include "dmanus/skin.hpp"

namespace dmanus::hand {

// 10 DoF: finger1 (abduction, mcp, pip), finger2 (abduction, mcp, pip),
// thumb (roll, abduction, mcp, ip).
inline constexpr int kNumJoints = 10;

struct JointState {
  std::array<double, kNumJoints> angles{};      // rad
  std::array<double, kNumJoints> velocities{};  // rad/s
};

struct JointLimits {
  std::array<double, kNumJoints> min;
  std::array<double, kNumJoints> max;

  static JointLimits defaults();  // +-1.57 rad on every joint
  void check(const JointState& joints) const;  // throws JointLimitError
  double clamp(int joint, double angle) const;
};

enum class ControlMode : std::uint8_t { Position, Velocity, Current, PWM };

const char* control_mode_name(ControlMode m);

// Patch poses in the hand frame for a joint configuration. Palm pose is the
// identity. Index order: finger1, finger2, thumb, palm.
struct PatchPoses {
  std::array<Pose, 4> poses;

  const Pose& finger(int i) const { return poses[i]; }
  const Pose& palm() const { return poses[3]; }
};

PatchPoses forward_kinematics(const JointState& joints,
                              const JointLimits& limits = JointLimits::defaults());

// Golden-file text form: one line per patch `name x y z qw qx qy qz`.
std::string format_patch_poses(const PatchPoses& poses);

enum class Softness : std::uint8_t { Hard = 0, Medium = 1, Soft = 2 };
enum class Texture : std::uint8_t { Smooth = 0, Medium = 1, Rough = 2 };

const char* softness_name(Softness s);
const char* texture_name(Texture t);
Softness softness_from_name(const std::string& s);
Texture texture_from_name(const std::string& s);

struct SynthObject {
  std::string name;
  Softness softness = Softness::Hard;
  Texture texture = Texture::Smooth;
  double radius = 35.0;             // mm
  double compliance = 0.05;         // mm/N
  double texture_amplitude = 0.05;  // mm
  double texture_wavelength = 20.0; // mm
  std::uint64_t seed = 0;
};

// Text catalog: `name softness texture radius compliance amp wavelength seed`
std::string serialize_catalog(const std::vector<SynthObject>& objects);
std::vector<SynthObject> parse_catalog(std::istream& in);

struct BabbleConfig {
  std::uint64_t seed = 0;
  double duration_s = 10.0;
  int rate_hz = 30;          // in {10, 20, 30}
  double amplitude = 0.6;    // rad
  double noise_sigma = 0.05; // rad

  int frame_count() const;  // duration_s * rate_hz, exact
  void validate() const;    // throws ConfigError on bad rate
};

// Target joint state at frame t_index: per-joint multi-sine around a flexion
// bias plus seed-deterministic Gaussian noise, clamped to limits. The
// underlying script is a function of continuous time, so different rates
// sample the same motion.
JointState babble_policy(const BabbleConfig& cfg, int t_index,
                         const JointLimits& limits = JointLimits::defaults());

// First-order position servo with a slew-rate limit, clamped to limits.
// Throws UnsupportedMode for modes other than Position.
JointState simulate_step(const JointState& joints, const JointState& target,
                         double dt, ControlMode mode = ControlMode::Position,
                         const JointLimits& limits = JointLimits::defaults());

inline constexpr double kServoRateLimit = 4.0;  // rad/s

// How the object is held against the skin.
enum class ContactScenario : std::uint8_t { PalmUp, Grip };

struct ContactConfig {
  ContactScenario scenario = ContactScenario::PalmUp;
  // Extra press depth applied on top of the babble-driven profile; the bin
  // harness ramps this during descent.
  double extra_press = 0.0;  // mm
  // Scales the whole press profile; 0 lifts the object off the skin.
  double press_gain = 1.0;
  // Per-interaction rubbing phase; the recorder salts this with the
  // trajectory seed so texture phase varies between recordings.
  std::uint64_t rub_seed = 0;
};

// Per-dipole skin displacement for an object interacting with the hand at
// time t (seconds). Softness sets contact area up and peak depth down;
// texture adds a spatial ripple attenuated by compliance.
skin::DeformationField contact_model(const SynthObject& obj,
                                     const JointState& joints, double t,
                                     const skin::MagnetometerLayout& layout,
                                     const skin::DipoleGrid& grid,
                                     const ContactConfig& contact = {});

// Largest skin indentation the contact model will command (mm); kept well
// below the 2 mm skin thickness and the dipole flight height.
inline constexpr double kMaxIndentation = 1.2;

}  // namespace dmanus::hand
