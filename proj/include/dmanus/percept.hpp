#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmanus/dataset.hpp"
#include "dmanus/nn.hpp"

namespace dmanus::percept {

enum class ComponentMask : std::uint8_t {
  Finger1 = 0,
  Finger2 = 1,
  Finger3 = 2,
  Palm = 3,
  All = 4
};

const char* mask_name(ComponentMask m);
ComponentMask mask_from_name(const std::string& name);
int mask_dim(ComponentMask m);  // 24 / 24 / 24 / 96 / 168
std::vector<ComponentMask> all_masks();

// Slices the flattened 168-vector to the mask's sites, site order preserved.
std::vector<double> apply_mask(std::span<const double> frame,
                               ComponentMask mask);

// Fixed input scaling applied to baseline-subtracted flux before a model
// sees it; keeps activations in a trainable range without data-dependent
// statistics.
inline constexpr double kFeatureScale = 0.25;  // 1 / (4 microtesla)

// Baseline-subtracted, masked, scaled per-timestep inputs of one trajectory.
std::vector<std::vector<double>> feature_sequence(const dataset::Trajectory& t,
                                                  ComponentMask mask);

// At step t concatenates frames t, t-skip, ..., t-(stack-1)*skip, padding
// early history with frame 0. Output dim = stack_size * input dim. Throws
// ConfigError when (stack-1)*skip >= sequence length.
std::vector<std::vector<double>> frame_stack_transform(
    const std::vector<std::vector<double>>& sequence, int stack_size,
    int frame_skip);

enum class TextureVariant : std::uint8_t {
  Vanilla = 0,
  Joint = 1,
  SoftnessConditioned = 2
};

const char* variant_name(TextureVariant v);
TextureVariant variant_from_name(const std::string& name);

struct TrainOptions {
  nn::ModelKind arch = nn::ModelKind::LSTM;
  ComponentMask mask = ComponentMask::All;
  TextureVariant variant = TextureVariant::Vanilla;  // texture task only
  double lambda = 1.0;                               // joint model loss weight
  int lstm_layers = 1;
  int lstm_width = 32;
  std::vector<int> fc_sizes = {32};
  int stack_size = 2;
  int frame_skip = 5;
  int epochs = 8;
  int batch_size = 8;
  double lr = 3e-3;
  std::uint64_t seed = 0;
  int threads = 2;
};

struct ModelBundle {
  dataset::Task task = dataset::Task::Material;
  TextureVariant variant = TextureVariant::Vanilla;
  ComponentMask mask = ComponentMask::All;
  double lambda = 1.0;
  nn::ModelWeights primary;
  // Softness-conditioned texture: router predicts softness, one texture
  // model per softness class.
  std::optional<nn::ModelWeights> router;
  std::vector<nn::ModelWeights> submodels;
  std::vector<nn::EpochMetrics> train_metrics;
};

// Trains the task's model(s) on the manifest's training split.
// Material -> 6-class; Softness -> 3-class; Texture: Vanilla 3-class,
// Joint two-headed with the composite loss, SoftnessConditioned a router
// plus three per-softness submodels (EmptySubset when a softness class has
// no training data).
ModelBundle train_task(dataset::Task task, const dataset::Dataset& ds,
                       const TrainOptions& options);

struct EvalReport {
  double frame_accuracy = 0.0;
  double trajectory_accuracy = 0.0;  // majority vote over timesteps
  double final_step_accuracy = 0.0;
  std::vector<std::vector<int>> confusion;  // trajectory votes, rows = true
  std::vector<double> per_class_accuracy;
  int n_trajectories = 0;
  int n_classes = 0;
  // Softness-conditioned extras: headline mean over the three softness
  // categories and the ground-truth-routed diagnostic.
  double mean_over_softness = -1.0;
  double gt_routed_accuracy = -1.0;
};

// Headline number for comparisons: mean-over-softness for the conditioned
// texture model, plain trajectory accuracy otherwise.
double headline_accuracy(const EvalReport& report);

// Scores the manifest's validation split. The softness-conditioned bundle
// routes every trajectory through the submodel picked by the router's
// majority-vote softness prediction.
EvalReport evaluate(const ModelBundle& bundle, const dataset::Dataset& ds);

// Per-timestep class predictions for one trajectory (deployment path).
std::vector<int> predict_sequence(const ModelBundle& bundle,
                                  const std::vector<std::vector<double>>& features);

// Trains one model per component mask with identical seeds and config.
std::vector<std::pair<ComponentMask, EvalReport>> component_ablation(
    dataset::Task task, const dataset::Dataset& ds, TrainOptions options);

struct SweepPoint {
  nn::ModelKind arch = nn::ModelKind::LSTM;
  int stack_size = 1;
  int frame_skip = 1;
  int layers = 1;        // lstm layers or fc depth for frame-stacking
  int layer_size = 32;
  // lexicographic order used for deterministic tie-breaks
  auto tie() const { return std::tuple(static_cast<int>(arch), stack_size,
                                       frame_skip, layers, layer_size); }
  std::string describe() const;
};

struct SweepRow {
  SweepPoint point;
  double frame_accuracy = 0.0;
  double trajectory_accuracy = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  SweepPoint best;  // highest frame accuracy, ties broken lexicographically
};

// Mirrors the published sweep ranges.
std::vector<SweepPoint> default_framestack_grid();
std::vector<SweepPoint> default_lstm_grid();

SweepResult sweep(dataset::Task task, const dataset::Dataset& ds,
                  std::span<const SweepPoint> grid, TrainOptions base);

// Bundle persistence: a directory of DMNN checkpoints plus a manifest file.
void save_bundle(const ModelBundle& bundle, const std::string& dir);
ModelBundle load_bundle(const std::string& dir);

int task_label(dataset::Task task, const dataset::Label& label);
int task_classes(dataset::Task task);

}  // namespace dmanus::percept
