#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dmanus/dataset.hpp"
#include "dmanus/percept.hpp"

namespace dmanus::binsort {

struct BinSceneConfig {
  std::uint64_t seed = 0;
  int initial_objects = 6;
  bool refill = true;  // replace each successfully grasped object
  bool prototype_objects = false;  // class-center parameters, strongly separable
  double half_x = 80.0;  // bin footprint, mm
  double half_y = 80.0;
};

struct PlacedObject {
  hand::SynthObject object;
  double x = 0.0;
  double y = 0.0;
};

class BinScene {
 public:
  explicit BinScene(BinSceneConfig cfg);

  const std::vector<PlacedObject>& objects() const { return objects_; }
  const BinSceneConfig& config() const { return cfg_; }

  // Index of the nearest object within radius of (x, y), or -1.
  int nearest_within(double x, double y, double radius) const;

  // Removes a grasped object; adds a fresh one when the refill policy is on.
  void remove(int index);

  bool empty() const { return objects_.empty(); }

 private:
  PlacedObject make_object();

  BinSceneConfig cfg_;
  std::vector<PlacedObject> objects_;
  std::uint64_t spawned_ = 0;
};

struct ApproachResult {
  double x = 0.0;
  double y = 0.0;
  skin::FluxFrame baseline;  // mean of 100 rest frames at the approach pose
};

// Samples a uniform (x, y) over the bin footprint and takes the baseline
// there; the classification path reuses this baseline unchanged.
ApproachResult approach(const BinScene& scene, const dataset::SimSetup& sim,
                        std::uint64_t seed);

// Frame supplier for the descent; the production implementation runs the
// simulator, tests can inject analytic ramps. Decisions depend only on the
// frames it returns.
class DescendSource {
 public:
  virtual ~DescendSource() = default;
  virtual skin::FluxFrame frame_at(int step) = 0;
};

struct TriggerResult {
  bool contact = false;  // false = floor reached (NoContact)
  int step = -1;
};

inline constexpr int kDescendMaxSteps = 60;

// Lowers the hand stepwise; triggers at the first step where the Euclidean
// norm of the baseline-subtracted 168-vector exceeds threshold.
TriggerResult descend_and_trigger(DescendSource& source,
                                  const skin::FluxFrame& baseline,
                                  double threshold,
                                  int max_steps = kDescendMaxSteps);

// Simulator-backed descent toward the scene's nearest object.
class SimDescendSource : public DescendSource {
 public:
  SimDescendSource(const dataset::SimSetup& sim, const BinScene& scene,
                   double x, double y, std::uint64_t seed);
  skin::FluxFrame frame_at(int step) override;

 private:
  const dataset::SimSetup& sim_;
  std::optional<hand::SynthObject> target_;
  double press_per_step_ = 0.0;
  int contact_step_ = 0;
  std::uint64_t seed_ = 0;
};

struct EpisodeResult {
  std::uint64_t episode_seed = 0;
  int trigger_step = -1;  // -1 = NoContact
  bool grasp_success = false;
  int true_softness = -1;
  int true_texture = -1;
  int predicted_softness = -1;  // present only when grasp_success
  int predicted_texture = -1;
  int bin_assigned = -1;  // softness * 3 + texture
  int frames_used = 0;
};

struct SortingModels {
  percept::ModelBundle softness;
  percept::ModelBundle texture;
};

// Per-timestep softness/texture prediction from a recorded window; pure in
// (frames, baseline, models) - object geometry is not an input.
std::pair<int, int> classify_window(const std::vector<skin::FluxFrame>& frames,
                                    const skin::FluxFrame& baseline,
                                    const SortingModels& models);

struct EpisodeConfig {
  double trigger_threshold = 0.0;  // 0 = default: 10x baseline noise sigma
  double descend_step_mm = 2.0;
  double capture_radius = 25.0;  // graspable offset between palm and object
  int window_rate_hz = 30;
  double window_duration_s = 10.0;
};

EpisodeResult run_episode(BinScene& scene, const dataset::SimSetup& sim,
                          const SortingModels& models,
                          const EpisodeConfig& cfg, std::uint64_t episode_seed);

struct SessionReport {
  std::vector<EpisodeResult> episodes;
  int successful_grasps = 0;
  double softness_accuracy = 0.0;
  double texture_accuracy = 0.0;
  double both_accuracy = 0.0;
};

// Repeats episodes until n successful grasps. Throws ExhaustedScene when the
// scene runs dry or progress stalls.
SessionReport run_session(BinScene& scene, const dataset::SimSetup& sim,
                          const SortingModels& models, const EpisodeConfig& cfg,
                          int n_successful_grasps, std::uint64_t seed);

// Transcript: one line per episode
//   seed step_triggered success true_s true_t pred_s pred_t
std::string format_transcript(const SessionReport& report);

}  // namespace dmanus::binsort
