#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmanus/hand.hpp"
#include "dmanus/skin.hpp"

namespace dmanus::dataset {

enum class Task : std::uint8_t {
  Material = 0,
  Softness = 1,
  Texture = 2,
  SoftnessTexture = 3
};

const char* task_name(Task t);
Task task_from_name(const std::string& name);

// All labels an object can carry; tasks pick the field they train on.
struct Label {
  int material = -1;
  int softness = -1;
  int texture = -1;

  bool operator==(const Label&) const = default;
};

struct Trajectory {
  std::vector<skin::FluxFrame> frames;
  std::vector<hand::JointState> joints;
  skin::FluxFrame baseline;
  Label label;
  std::string object_name;
  int rate_hz = 30;
  std::uint64_t seed = 0;
};

// Mean of exactly 100 frames (componentwise); seq/timestamp from the last
// input. Throws WrongCount otherwise.
skin::FluxFrame compute_baseline(std::span<const skin::FluxFrame> frames);

inline constexpr int kBaselineFrames = 100;

// Frames replaced by frame - baseline (componentwise); baseline kept so the
// operation can be undone.
Trajectory subtract_baseline(const Trajectory& traj);

// Simulation bundle shared by the recorder and the bin-sort harness.
struct SimSetup {
  skin::MagnetometerLayout layout;
  skin::DipoleGrid grid;
  std::array<double, skin::kFluxDim> rest_accum;  // cached baseline sums
  double noise_sigma = skin::kDefaultNoiseSigma;

  static SimSetup standard(double noise_sigma = skin::kDefaultNoiseSigma,
                           double magnetization_scale = 1.0);
};

// Records one palm-up interaction: 100 rest frames averaged into the
// baseline, then duration x rate babble frames with contact-driven flux.
// object_present = false records the same motion with nothing on the palm
// (bare-skin control used by the baseline-neutrality checks).
Trajectory record_trajectory(const SimSetup& sim, const hand::SynthObject& obj,
                             const hand::BabbleConfig& cfg,
                             const Label& label,
                             hand::ContactScenario scenario =
                                 hand::ContactScenario::PalmUp,
                             bool object_present = true);

struct DatasetManifest {
  Task task = Task::Material;
  // object name -> trajectory indices into Dataset::trajectories
  std::vector<std::pair<std::string, std::vector<int>>> train;
  std::vector<std::pair<std::string, std::vector<int>>> val;
  std::vector<std::string> warnings;

  std::vector<int> train_ids() const;
  std::vector<int> val_ids() const;
};

enum class SplitRule : std::uint8_t {
  WithinObject = 0,  // material task: per-object 30/5 split
  ByObject = 1       // softness/texture: val objects held out entirely
};

struct ObjectTrajectories {
  std::string object;
  std::vector<int> trajectory_ids;
  bool holdout = false;  // ByObject: true marks a validation object
};

// Deterministic split given seed. WithinObject draws val trajectories per
// object; ByObject routes holdout objects to val. Throws SplitViolation when
// the requested counts cannot be met.
DatasetManifest build_manifest(Task task,
                               const std::vector<ObjectTrajectories>& objects,
                               int train_per_object, int val_per_object,
                               SplitRule rule, std::uint64_t seed);

struct Dataset {
  std::uint32_t layout_hash = 0;
  DatasetManifest manifest;
  std::vector<hand::SynthObject> objects;
  std::vector<Trajectory> trajectories;
};

// The six fixed surface treatments of the material-identification task.
std::vector<hand::SynthObject> material_catalog();

// Procedural objects over the 3x3 softness x texture grid. Training objects
// draw parameters from the inner band of each class range; holdout objects
// draw from the outer margins, outside the train hull.
std::vector<hand::SynthObject> softtex_catalog(int train_per_cell,
                                               int val_per_cell,
                                               std::uint64_t seed);

struct CollectConfig {
  Task task = Task::Material;
  int rate_hz = 30;
  std::uint64_t seed = 0;
  double noise_sigma = skin::kDefaultNoiseSigma;
  // Material task: trajectories per class (30/5 split at the default 35).
  int per_material = 35;
  // Softness/texture tasks: objects per (softness, texture) cell.
  int train_objects_per_cell = 2;
  int val_objects_per_cell = 1;
  int per_train_object = 15;
  int per_val_object = 5;
};

// Records the full dataset for a task; deterministic in cfg.seed, parallel
// across trajectories.
Dataset collect(const CollectConfig& cfg);

// DMTD container, bit-exact round trip. Writes are atomic (tmp + rename).
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

inline constexpr std::uint32_t kDatasetVersion = 1;

}  // namespace dmanus::dataset
