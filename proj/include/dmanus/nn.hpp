#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dmanus/errors.hpp"

namespace dmanus::nn {

enum class ModelKind : std::uint8_t { LSTM = 0, FrameStack = 1 };

const char* model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string& name);

struct ModelSpec {
  ModelKind kind = ModelKind::LSTM;
  int input_dim = 168;
  int lstm_layers = 2;
  int lstm_width = 512;
  std::vector<int> fc_sizes = {256, 128, 64};
  int n_classes = 0;
  // Second classification head sharing the trunk (joint softness-texture
  // training); 0 disables it.
  int aux_classes = 0;
  // FrameStack temporal context; ignored by the LSTM kind.
  int stack_size = 1;
  int frame_skip = 1;

  // Per-timestep vector width the model consumes.
  int model_input_dim() const {
    return kind == ModelKind::FrameStack ? input_dim * stack_size : input_dim;
  }
  // Width of the feature entering the fully connected head.
  int feature_dim() const {
    return kind == ModelKind::LSTM ? lstm_width : model_input_dim();
  }
  std::size_t param_count() const;
  void validate() const;  // throws ConfigError

  bool operator==(const ModelSpec&) const = default;
};

// Flat parameter store keyed by layer name. Array shapes:
//   lstm{l}.wx [4H x D]  lstm{l}.wh [4H x H]  lstm{l}.b [4H]
//   fc{k}.w [out x in]   fc{k}.b [out]
//   out.w / out.b, aux.w / aux.b
// Gate rows are blocked input, forget, cell, output.
struct ModelWeights {
  ModelSpec spec;
  std::uint64_t init_seed = 0;
  std::map<std::string, std::vector<double>> arrays;

  std::vector<double>& at(const std::string& name);
  const std::vector<double>& at(const std::string& name) const;
  // Canonical array order used for init, optimizer state, and checkpoints.
  static std::vector<std::string> array_names(const ModelSpec& spec);
};

// Fan-in scaled uniform init; LSTM forget-gate biases start at 1.0.
ModelWeights init_weights(const ModelSpec& spec, std::uint64_t seed);

// Per-timestep top-layer hidden states for an input sequence (zero initial
// state). Throws ShapeError when an input width mismatches the spec.
std::vector<std::vector<double>> lstm_forward(
    const ModelSpec& spec, const ModelWeights& weights,
    std::span<const std::vector<double>> sequence);

// FC head applied to one feature vector; returns n_classes logits.
std::vector<double> head_forward(const ModelSpec& spec,
                                 const ModelWeights& weights,
                                 std::span<const double> feature);

// Aux head logits (joint model); requires aux_classes > 0.
std::vector<double> aux_head_forward(const ModelSpec& spec,
                                     const ModelWeights& weights,
                                     std::span<const double> feature);

// -log softmax(logits)[target], max-shifted. Throws IndexError.
double cross_entropy(std::span<const double> logits, int target);

// L_ce(softness) + lambda * L_ce(texture)
double composite_cross_entropy(std::span<const double> softness_logits,
                               std::span<const double> texture_logits,
                               int softness_target, int texture_target,
                               double lambda);

struct Sample {
  const std::vector<std::vector<double>>* sequence = nullptr;
  int target = 0;
  int aux_target = -1;  // joint model second-head label
};

using Gradients = std::map<std::string, std::vector<double>>;

struct BatchResult {
  double loss = 0.0;           // mean over timesteps and samples
  long correct = 0;            // argmax hits over all timesteps (primary head)
  long total = 0;
  Gradients gradients;
};

// Analytic gradients of the mean per-timestep loss over the batch, BPTT over
// the full sequence for LSTM models. Per-sample contributions are reduced in
// sample order, so results do not depend on thread count.
BatchResult backward(const ModelSpec& spec, const ModelWeights& weights,
                     std::span<const Sample> batch, double lambda = 1.0,
                     int threads = 1);

// Loss only (used by the finite-difference oracle path).
double batch_loss(const ModelSpec& spec, const ModelWeights& weights,
                  std::span<const Sample> batch, double lambda = 1.0);

// Per-timestep logits for a single sequence; convenience for evaluation.
std::vector<std::vector<double>> sequence_logits(
    const ModelSpec& spec, const ModelWeights& weights,
    std::span<const std::vector<double>> sequence, bool aux_head = false);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 8;
  int epochs = 10;
  std::uint64_t seed = 0;
  double lambda = 1.0;  // texture-loss weight of the composite loss
  int threads = 1;
};

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
  double frame_accuracy = 0.0;
};

class Adam {
 public:
  Adam(const ModelSpec& spec, AdamConfig cfg);
  void step(ModelWeights& weights, const Gradients& grads);

 private:
  AdamConfig cfg_;
  std::map<std::string, std::vector<double>> m_, v_;
  long t_ = 0;
};

// Adam training loop, deterministic given (weights.init_seed, data, cfg).
// Throws DivergenceError when the loss stops being finite.
std::vector<EpochMetrics> train(const ModelSpec& spec, ModelWeights& weights,
                                std::span<const Sample> data,
                                const TrainConfig& cfg);

struct GradCheckEntry {
  std::string array;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> per_array;
};

// Compares analytic gradients against central finite differences
// (h = 1e-4) parameter by parameter on a small config.
GradCheckReport grad_check(const ModelSpec& spec, std::uint64_t seed,
                           double h = 1e-4);

// Exercises the standard small configs (MLP head, 2-layer LSTM at sequence
// length 5, frame-stack head, composite loss) and returns the worst case.
GradCheckReport grad_check_suite(std::uint64_t seed);

// Checkpoint file: magic DMNN, version, spec block, named flat arrays,
// CRC-32 trailer.
void save_weights(const ModelWeights& weights, const std::string& path);
ModelWeights load_weights(const std::string& path);

}  // namespace dmanus::nn
