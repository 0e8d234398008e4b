#include "dmanus/nn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "dmanus/binio.hpp"
#include "dmanus/rng.hpp"
#include "dmanus/wire.hpp"

namespace dmanus::nn {

namespace {

// y += W x, W row-major [rows x cols]
void matvec_acc(const double* w, const double* x, double* y, int rows,
                int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* wr = w + static_cast<std::size_t>(r) * cols;
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] += acc;
  }
}

// y += W^T d
void matvec_t_acc(const double* w, const double* d, double* y, int rows,
                  int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* wr = w + static_cast<std::size_t>(r) * cols;
    const double dr = d[r];
    if (dr == 0.0) continue;
    for (int c = 0; c < cols; ++c) y[c] += wr[c] * dr;
  }
}

// W += d (outer) x
void outer_acc(double* w, const double* d, const double* x, int rows,
               int cols) {
  for (int r = 0; r < rows; ++r) {
    double* wr = w + static_cast<std::size_t>(r) * cols;
    const double dr = d[r];
    if (dr == 0.0) continue;
    for (int c = 0; c < cols; ++c) wr[c] += dr * x[c];
  }
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

const char* model_kind_name(ModelKind k) {
  return k == ModelKind::LSTM ? "lstm" : "framestack";
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "lstm") return ModelKind::LSTM;
  if (name == "framestack") return ModelKind::FrameStack;
  throw ConfigError("unknown model kind: " + name);
}

void ModelSpec::validate() const {
  if (input_dim <= 0) throw ConfigError("input_dim must be positive");
  if (n_classes < 1) throw ConfigError("n_classes must be at least 1");
  if (aux_classes < 0) throw ConfigError("aux_classes must be >= 0");
  if (kind == ModelKind::LSTM) {
    if (lstm_layers < 1 || lstm_width < 1)
      throw ConfigError("LSTM needs at least one layer and unit");
  } else {
    if (stack_size < 1 || frame_skip < 1)
      throw ConfigError("stack_size and frame_skip must be >= 1");
  }
  for (int s : fc_sizes)
    if (s < 1) throw ConfigError("fc sizes must be positive");
}

std::size_t ModelSpec::param_count() const {
  std::size_t count = 0;
  if (kind == ModelKind::LSTM) {
    int in = input_dim;
    for (int l = 0; l < lstm_layers; ++l) {
      count += static_cast<std::size_t>(4 * lstm_width) * (in + lstm_width + 1);
      in = lstm_width;
    }
  }
  int in = feature_dim();
  for (int s : fc_sizes) {
    count += static_cast<std::size_t>(s) * (in + 1);
    in = s;
  }
  count += static_cast<std::size_t>(n_classes) * (in + 1);
  if (aux_classes > 0) count += static_cast<std::size_t>(aux_classes) * (in + 1);
  return count;
}

std::vector<std::string> ModelWeights::array_names(const ModelSpec& spec) {
  std::vector<std::string> names;
  if (spec.kind == ModelKind::LSTM) {
    for (int l = 0; l < spec.lstm_layers; ++l) {
      names.push_back("lstm" + std::to_string(l) + ".wx");
      names.push_back("lstm" + std::to_string(l) + ".wh");
      names.push_back("lstm" + std::to_string(l) + ".b");
    }
  }
  for (std::size_t k = 0; k < spec.fc_sizes.size(); ++k) {
    names.push_back("fc" + std::to_string(k) + ".w");
    names.push_back("fc" + std::to_string(k) + ".b");
  }
  names.push_back("out.w");
  names.push_back("out.b");
  if (spec.aux_classes > 0) {
    names.push_back("aux.w");
    names.push_back("aux.b");
  }
  return names;
}

std::vector<double>& ModelWeights::at(const std::string& name) {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw ShapeError("missing weight array: " + name);
  return it->second;
}

const std::vector<double>& ModelWeights::at(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw ShapeError("missing weight array: " + name);
  return it->second;
}

namespace {

struct ArrayShape {
  int rows = 0;
  int cols = 1;  // 1 for bias vectors
};

ArrayShape shape_of(const ModelSpec& spec, const std::string& name) {
  if (name.rfind("lstm", 0) == 0) {
    const int l = std::stoi(name.substr(4, name.find('.') - 4));
    const int in = l == 0 ? spec.input_dim : spec.lstm_width;
    if (name.ends_with(".wx")) return {4 * spec.lstm_width, in};
    if (name.ends_with(".wh")) return {4 * spec.lstm_width, spec.lstm_width};
    return {4 * spec.lstm_width, 1};
  }
  std::vector<int> dims;
  dims.push_back(spec.feature_dim());
  for (int s : spec.fc_sizes) dims.push_back(s);
  if (name.rfind("fc", 0) == 0) {
    const int k = std::stoi(name.substr(2, name.find('.') - 2));
    if (name.ends_with(".w")) return {dims[k + 1], dims[k]};
    return {dims[k + 1], 1};
  }
  const int last = dims.back();
  if (name == "out.w") return {spec.n_classes, last};
  if (name == "out.b") return {spec.n_classes, 1};
  if (name == "aux.w") return {spec.aux_classes, last};
  if (name == "aux.b") return {spec.aux_classes, 1};
  throw ShapeError("unknown array name: " + name);
}

}  // namespace

ModelWeights init_weights(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelWeights w;
  w.spec = spec;
  w.init_seed = seed;
  Rng root(seed);
  const auto names = ModelWeights::array_names(spec);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto sh = shape_of(spec, names[i]);
    std::vector<double> a(static_cast<std::size_t>(sh.rows) * sh.cols, 0.0);
    Rng rng = root.fork(i);
    if (names[i].ends_with(".b")) {
      // biases start at zero; LSTM forget gates at 1
      if (names[i].rfind("lstm", 0) == 0)
        for (int r = spec.lstm_width; r < 2 * spec.lstm_width; ++r) a[r] = 1.0;
    } else {
      const double scale = 1.0 / std::sqrt(static_cast<double>(sh.cols));
      for (auto& v : a) v = rng.uniform(-scale, scale);
    }
    w.arrays.emplace(names[i], std::move(a));
  }
  return w;
}

namespace {

// Full activation record of one sequence pass, enough to run BPTT.
struct LstmLayerCache {
  // T x H each; gates stored as T x 4H in i,f,g,o block order
  std::vector<double> z;   // pre-activations are overwritten by activations
  std::vector<double> c;
  std::vector<double> tc;
  std::vector<double> h;
};

struct ForwardCache {
  std::vector<LstmLayerCache> layers;
  // head activations per timestep: trunk[k] has T x fc_sizes[k]
  std::vector<std::vector<double>> trunk;
  std::vector<double> logits;      // T x n_classes
  std::vector<double> aux_logits;  // T x aux_classes
  // closest approach of any fc pre-activation to the ReLU kink
  double min_abs_z = std::numeric_limits<double>::infinity();
};

void check_sequence(const ModelSpec& spec,
                    std::span<const std::vector<double>> sequence) {
  const int d = spec.model_input_dim();
  for (const auto& x : sequence)
    if (static_cast<int>(x.size()) != d)
      throw ShapeError("input vector width " + std::to_string(x.size()) +
                       " != expected " + std::to_string(d));
}

// Runs the LSTM stack, filling cache; returns nothing (use cache.h).
void lstm_pass(const ModelSpec& spec, const ModelWeights& weights,
               std::span<const std::vector<double>> sequence,
               ForwardCache& cache) {
  const int T = static_cast<int>(sequence.size());
  const int H = spec.lstm_width;
  cache.layers.resize(spec.lstm_layers);
  const std::vector<double>* below = nullptr;  // h of the previous layer

  for (int l = 0; l < spec.lstm_layers; ++l) {
    const int D = l == 0 ? spec.input_dim : H;
    auto& lc = cache.layers[l];
    lc.z.assign(static_cast<std::size_t>(T) * 4 * H, 0.0);
    lc.c.assign(static_cast<std::size_t>(T) * H, 0.0);
    lc.tc.assign(static_cast<std::size_t>(T) * H, 0.0);
    lc.h.assign(static_cast<std::size_t>(T) * H, 0.0);
    const double* wx = weights.at("lstm" + std::to_string(l) + ".wx").data();
    const double* wh = weights.at("lstm" + std::to_string(l) + ".wh").data();
    const double* b = weights.at("lstm" + std::to_string(l) + ".b").data();

    for (int t = 0; t < T; ++t) {
      double* z = lc.z.data() + static_cast<std::size_t>(t) * 4 * H;
      for (int r = 0; r < 4 * H; ++r) z[r] = b[r];
      const double* x =
          l == 0 ? sequence[t].data()
                 : below->data() + static_cast<std::size_t>(t) * H;
      matvec_acc(wx, x, z, 4 * H, D);
      if (t > 0)
        matvec_acc(wh, lc.h.data() + static_cast<std::size_t>(t - 1) * H, z,
                   4 * H, H);
      double* c = lc.c.data() + static_cast<std::size_t>(t) * H;
      double* tc = lc.tc.data() + static_cast<std::size_t>(t) * H;
      double* h = lc.h.data() + static_cast<std::size_t>(t) * H;
      const double* cp =
          t > 0 ? lc.c.data() + static_cast<std::size_t>(t - 1) * H : nullptr;
      for (int u = 0; u < H; ++u) {
        const double ig = sigmoid(z[u]);
        const double fg = sigmoid(z[H + u]);
        const double gg = std::tanh(z[2 * H + u]);
        const double og = sigmoid(z[3 * H + u]);
        z[u] = ig;
        z[H + u] = fg;
        z[2 * H + u] = gg;
        z[3 * H + u] = og;
        c[u] = fg * (cp ? cp[u] : 0.0) + ig * gg;
        tc[u] = std::tanh(c[u]);
        h[u] = og * tc[u];
      }
    }
    below = &lc.h;
  }
}

// Head pass for one timestep feature; fills trunk activations at t.
void head_pass(const ModelSpec& spec, const ModelWeights& weights,
               const double* feature, int t, ForwardCache& cache) {
  const int n_fc = static_cast<int>(spec.fc_sizes.size());
  const double* in = feature;
  int in_dim = spec.feature_dim();
  for (int k = 0; k < n_fc; ++k) {
    const int out_dim = spec.fc_sizes[k];
    double* a = cache.trunk[k].data() + static_cast<std::size_t>(t) * out_dim;
    const auto& w = weights.at("fc" + std::to_string(k) + ".w");
    const auto& b = weights.at("fc" + std::to_string(k) + ".b");
    for (int r = 0; r < out_dim; ++r) a[r] = b[r];
    matvec_acc(w.data(), in, a, out_dim, in_dim);
    for (int r = 0; r < out_dim; ++r) {
      cache.min_abs_z = std::min(cache.min_abs_z, std::abs(a[r]));
      a[r] = a[r] > 0.0 ? a[r] : 0.0;
    }
    in = a;
    in_dim = out_dim;
  }
  {
    double* lg = cache.logits.data() +
                 static_cast<std::size_t>(t) * spec.n_classes;
    const auto& w = weights.at("out.w");
    const auto& b = weights.at("out.b");
    for (int r = 0; r < spec.n_classes; ++r) lg[r] = b[r];
    matvec_acc(w.data(), in, lg, spec.n_classes, in_dim);
  }
  if (spec.aux_classes > 0) {
    double* lg = cache.aux_logits.data() +
                 static_cast<std::size_t>(t) * spec.aux_classes;
    const auto& w = weights.at("aux.w");
    const auto& b = weights.at("aux.b");
    for (int r = 0; r < spec.aux_classes; ++r) lg[r] = b[r];
    matvec_acc(w.data(), in, lg, spec.aux_classes, in_dim);
  }
}

void forward_pass(const ModelSpec& spec, const ModelWeights& weights,
                  std::span<const std::vector<double>> sequence,
                  ForwardCache& cache) {
  check_sequence(spec, sequence);
  const int T = static_cast<int>(sequence.size());
  cache.trunk.assign(spec.fc_sizes.size(), {});
  for (std::size_t k = 0; k < spec.fc_sizes.size(); ++k)
    cache.trunk[k].assign(static_cast<std::size_t>(T) * spec.fc_sizes[k], 0.0);
  cache.logits.assign(static_cast<std::size_t>(T) * spec.n_classes, 0.0);
  if (spec.aux_classes > 0)
    cache.aux_logits.assign(static_cast<std::size_t>(T) * spec.aux_classes, 0.0);

  if (spec.kind == ModelKind::LSTM) {
    lstm_pass(spec, weights, sequence, cache);
    const auto& top = cache.layers.back().h;
    for (int t = 0; t < T; ++t)
      head_pass(spec, weights,
                top.data() + static_cast<std::size_t>(t) * spec.lstm_width, t,
                cache);
  } else {
    for (int t = 0; t < T; ++t)
      head_pass(spec, weights, sequence[t].data(), t, cache);
  }
}

double log_sum_exp(const double* logits, int n) {
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(logits[i] - mx);
  return mx + std::log(s);
}

}  // namespace

std::vector<std::vector<double>> lstm_forward(
    const ModelSpec& spec, const ModelWeights& weights,
    std::span<const std::vector<double>> sequence) {
  if (spec.kind != ModelKind::LSTM)
    throw ConfigError("lstm_forward requires an LSTM spec");
  check_sequence(spec, sequence);
  ForwardCache cache;
  lstm_pass(spec, weights, sequence, cache);
  const int T = static_cast<int>(sequence.size());
  const int H = spec.lstm_width;
  std::vector<std::vector<double>> out(T, std::vector<double>(H));
  const auto& top = cache.layers.back().h;
  for (int t = 0; t < T; ++t)
    std::copy_n(top.data() + static_cast<std::size_t>(t) * H, H, out[t].data());
  return out;
}

namespace {

std::vector<double> head_only(const ModelSpec& spec,
                              const ModelWeights& weights,
                              std::span<const double> feature, bool aux) {
  if (static_cast<int>(feature.size()) != spec.feature_dim())
    throw ShapeError("feature width " + std::to_string(feature.size()) +
                     " != expected " + std::to_string(spec.feature_dim()));
  std::vector<double> in(feature.begin(), feature.end());
  int in_dim = spec.feature_dim();
  for (std::size_t k = 0; k < spec.fc_sizes.size(); ++k) {
    const int out_dim = spec.fc_sizes[k];
    std::vector<double> a(out_dim);
    const auto& w = weights.at("fc" + std::to_string(k) + ".w");
    const auto& b = weights.at("fc" + std::to_string(k) + ".b");
    for (int r = 0; r < out_dim; ++r) a[r] = b[r];
    matvec_acc(w.data(), in.data(), a.data(), out_dim, in_dim);
    for (auto& v : a) v = v > 0.0 ? v : 0.0;
    in = std::move(a);
    in_dim = out_dim;
  }
  const int n = aux ? spec.aux_classes : spec.n_classes;
  const auto& w = weights.at(aux ? "aux.w" : "out.w");
  const auto& b = weights.at(aux ? "aux.b" : "out.b");
  std::vector<double> logits(n);
  for (int r = 0; r < n; ++r) logits[r] = b[r];
  matvec_acc(w.data(), in.data(), logits.data(), n, in_dim);
  return logits;
}

}  // namespace

std::vector<double> head_forward(const ModelSpec& spec,
                                 const ModelWeights& weights,
                                 std::span<const double> feature) {
  return head_only(spec, weights, feature, false);
}

std::vector<double> aux_head_forward(const ModelSpec& spec,
                                     const ModelWeights& weights,
                                     std::span<const double> feature) {
  if (spec.aux_classes <= 0) throw ConfigError("spec has no aux head");
  return head_only(spec, weights, feature, true);
}

double cross_entropy(std::span<const double> logits, int target) {
  if (target < 0 || target >= static_cast<int>(logits.size()))
    throw IndexError("cross_entropy target out of range");
  return log_sum_exp(logits.data(), static_cast<int>(logits.size())) -
         logits[target];
}

double composite_cross_entropy(std::span<const double> softness_logits,
                               std::span<const double> texture_logits,
                               int softness_target, int texture_target,
                               double lambda) {
  return cross_entropy(softness_logits, softness_target) +
         lambda * cross_entropy(texture_logits, texture_target);
}

namespace {

struct SampleResult {
  double loss = 0.0;
  long correct = 0;
  long total = 0;
};

// Backprop one sample; gradient contributions are added into `grads`
// (already scaled by 1/T; batch mean is applied by the caller).
SampleResult sample_backward(const ModelSpec& spec,
                             const ModelWeights& weights, const Sample& sample,
                             double lambda, Gradients& grads) {
  const auto& seq = *sample.sequence;
  const int T = static_cast<int>(seq.size());
  if (T == 0) throw ShapeError("empty sequence");
  ForwardCache cache;
  forward_pass(spec, weights, seq, cache);

  SampleResult res;
  const double wstep = 1.0 / T;
  const int n_fc = static_cast<int>(spec.fc_sizes.size());

  // feature gradient per timestep (input of the head)
  const int fdim = spec.feature_dim();
  std::vector<double> dfeature(static_cast<std::size_t>(T) * fdim, 0.0);

  std::vector<double> dlogits(spec.n_classes);
  std::vector<double> daux(std::max(spec.aux_classes, 1));
  std::vector<double> dbuf_a, dbuf_b;

  for (int t = 0; t < T; ++t) {
    const double* lg =
        cache.logits.data() + static_cast<std::size_t>(t) * spec.n_classes;
    const double lse = log_sum_exp(lg, spec.n_classes);
    if (sample.target < 0 || sample.target >= spec.n_classes)
      throw IndexError("target out of range");
    res.loss += wstep * (lse - lg[sample.target]);
    int arg = 0;
    for (int j = 1; j < spec.n_classes; ++j)
      if (lg[j] > lg[arg]) arg = j;
    res.correct += arg == sample.target;
    res.total += 1;
    for (int j = 0; j < spec.n_classes; ++j)
      dlogits[j] = wstep * (std::exp(lg[j] - lse) - (j == sample.target));

    if (spec.aux_classes > 0 && sample.aux_target >= 0) {
      const double* alg = cache.aux_logits.data() +
                          static_cast<std::size_t>(t) * spec.aux_classes;
      const double alse = log_sum_exp(alg, spec.aux_classes);
      res.loss += wstep * lambda * (alse - alg[sample.aux_target]);
      for (int j = 0; j < spec.aux_classes; ++j)
        daux[j] = wstep * lambda *
                  (std::exp(alg[j] - alse) - (j == sample.aux_target));
    }

    // head backward for this timestep
    const double* trunk_in =
        n_fc > 0 ? cache.trunk[n_fc - 1].data() +
                       static_cast<std::size_t>(t) * spec.fc_sizes[n_fc - 1]
                 : nullptr;
    const double* feature =
        spec.kind == ModelKind::LSTM
            ? cache.layers.back().h.data() +
                  static_cast<std::size_t>(t) * spec.lstm_width
            : seq[t].data();
    const double* last_act = n_fc > 0 ? trunk_in : feature;
    const int last_dim = n_fc > 0 ? spec.fc_sizes[n_fc - 1] : fdim;

    dbuf_a.assign(last_dim, 0.0);
    {
      auto& gw = grads.at("out.w");
      auto& gb = grads.at("out.b");
      outer_acc(gw.data(), dlogits.data(), last_act, spec.n_classes, last_dim);
      for (int j = 0; j < spec.n_classes; ++j) gb[j] += dlogits[j];
      matvec_t_acc(weights.at("out.w").data(), dlogits.data(), dbuf_a.data(),
                   spec.n_classes, last_dim);
    }
    if (spec.aux_classes > 0 && sample.aux_target >= 0) {
      auto& gw = grads.at("aux.w");
      auto& gb = grads.at("aux.b");
      outer_acc(gw.data(), daux.data(), last_act, spec.aux_classes, last_dim);
      for (int j = 0; j < spec.aux_classes; ++j) gb[j] += daux[j];
      matvec_t_acc(weights.at("aux.w").data(), daux.data(), dbuf_a.data(),
                   spec.aux_classes, last_dim);
    }

    // fc chain backward
    for (int k = n_fc - 1; k >= 0; --k) {
      const int out_dim = spec.fc_sizes[k];
      const double* act =
          cache.trunk[k].data() + static_cast<std::size_t>(t) * out_dim;
      for (int r = 0; r < out_dim; ++r)
        if (act[r] <= 0.0) dbuf_a[r] = 0.0;  // ReLU gate
      const int in_dim = k == 0 ? fdim : spec.fc_sizes[k - 1];
      const double* in_act =
          k == 0 ? feature
                 : cache.trunk[k - 1].data() +
                       static_cast<std::size_t>(t) * spec.fc_sizes[k - 1];
      auto& gw = grads.at("fc" + std::to_string(k) + ".w");
      auto& gb = grads.at("fc" + std::to_string(k) + ".b");
      outer_acc(gw.data(), dbuf_a.data(), in_act, out_dim, in_dim);
      for (int r = 0; r < out_dim; ++r) gb[r] += dbuf_a[r];
      dbuf_b.assign(in_dim, 0.0);
      matvec_t_acc(weights.at("fc" + std::to_string(k) + ".w").data(),
                   dbuf_a.data(), dbuf_b.data(), out_dim, in_dim);
      dbuf_a = dbuf_b;
    }
    double* df = dfeature.data() + static_cast<std::size_t>(t) * fdim;
    for (int i = 0; i < fdim; ++i) df[i] += dbuf_a[i];
  }

  if (spec.kind != ModelKind::LSTM) return res;

  // BPTT, top layer down
  const int H = spec.lstm_width;
  std::vector<double> dh_ext = std::move(dfeature);  // T x H for the top layer
  for (int l = spec.lstm_layers - 1; l >= 0; --l) {
    const int D = l == 0 ? spec.input_dim : H;
    const auto& lc = cache.layers[l];
    const auto& wx = weights.at("lstm" + std::to_string(l) + ".wx");
    const auto& wh = weights.at("lstm" + std::to_string(l) + ".wh");
    auto& gwx = grads.at("lstm" + std::to_string(l) + ".wx");
    auto& gwh = grads.at("lstm" + std::to_string(l) + ".wh");
    auto& gb = grads.at("lstm" + std::to_string(l) + ".b");

    std::vector<double> dh(H, 0.0), dc(H, 0.0), dz(4 * H);
    std::vector<double> dx(static_cast<std::size_t>(T) * D, 0.0);

    for (int t = T - 1; t >= 0; --t) {
      const double* z = lc.z.data() + static_cast<std::size_t>(t) * 4 * H;
      const double* tc = lc.tc.data() + static_cast<std::size_t>(t) * H;
      const double* cp =
          t > 0 ? lc.c.data() + static_cast<std::size_t>(t - 1) * H : nullptr;
      for (int u = 0; u < H; ++u) {
        const double dht = dh[u] + dh_ext[static_cast<std::size_t>(t) * H + u];
        const double ig = z[u], fg = z[H + u], gg = z[2 * H + u],
                     og = z[3 * H + u];
        const double dct = dc[u] + dht * og * (1.0 - tc[u] * tc[u]);
        dz[u] = dct * gg * ig * (1.0 - ig);
        dz[H + u] = dct * (cp ? cp[u] : 0.0) * fg * (1.0 - fg);
        dz[2 * H + u] = dct * ig * (1.0 - gg * gg);
        dz[3 * H + u] = dht * tc[u] * og * (1.0 - og);
        dc[u] = dct * fg;
      }
      const double* x =
          l == 0 ? seq[t].data()
                 : cache.layers[l - 1].h.data() + static_cast<std::size_t>(t) * H;
      outer_acc(gwx.data(), dz.data(), x, 4 * H, D);
      for (int r = 0; r < 4 * H; ++r) gb[r] += dz[r];
      if (t > 0) {
        const double* hp = lc.h.data() + static_cast<std::size_t>(t - 1) * H;
        outer_acc(gwh.data(), dz.data(), hp, 4 * H, H);
        std::fill(dh.begin(), dh.end(), 0.0);
        matvec_t_acc(wh.data(), dz.data(), dh.data(), 4 * H, H);
      }
      matvec_t_acc(wx.data(), dz.data(),
                   dx.data() + static_cast<std::size_t>(t) * D, 4 * H, D);
    }
    if (l > 0) dh_ext = std::move(dx);
  }
  return res;
}

Gradients zero_gradients(const ModelSpec& spec) {
  Gradients g;
  for (const auto& name : ModelWeights::array_names(spec)) {
    const auto sh = shape_of(spec, name);
    g.emplace(name,
              std::vector<double>(static_cast<std::size_t>(sh.rows) * sh.cols,
                                  0.0));
  }
  return g;
}

}  // namespace

BatchResult backward(const ModelSpec& spec, const ModelWeights& weights,
                     std::span<const Sample> batch, double lambda,
                     int threads) {
  spec.validate();
  if (batch.empty()) throw ShapeError("empty batch");
  const int B = static_cast<int>(batch.size());
  std::vector<Gradients> per_sample(B);
  std::vector<SampleResult> results(B);

  const int workers = std::clamp(threads, 1, B);
  std::atomic<int> cursor{0};
  auto work = [&]() {
    for (;;) {
      const int i = cursor.fetch_add(1);
      if (i >= B) return;
      per_sample[i] = zero_gradients(spec);
      results[i] =
          sample_backward(spec, weights, batch[i], lambda, per_sample[i]);
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  BatchResult out;
  out.gradients = std::move(per_sample[0]);
  for (int i = 1; i < B; ++i)
    for (auto& [name, g] : out.gradients) {
      const auto& src = per_sample[i].at(name);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += src[k];
    }
  const double inv = 1.0 / B;
  for (auto& [name, g] : out.gradients)
    for (auto& v : g) v *= inv;
  for (int i = 0; i < B; ++i) {
    out.loss += results[i].loss * inv;
    out.correct += results[i].correct;
    out.total += results[i].total;
  }
  return out;
}

double batch_loss(const ModelSpec& spec, const ModelWeights& weights,
                  std::span<const Sample> batch, double lambda) {
  double loss = 0.0;
  for (const auto& sample : batch) {
    const auto& seq = *sample.sequence;
    ForwardCache cache;
    forward_pass(spec, weights, seq, cache);
    const int T = static_cast<int>(seq.size());
    double sl = 0.0;
    for (int t = 0; t < T; ++t) {
      const double* lg =
          cache.logits.data() + static_cast<std::size_t>(t) * spec.n_classes;
      sl += log_sum_exp(lg, spec.n_classes) - lg[sample.target];
      if (spec.aux_classes > 0 && sample.aux_target >= 0) {
        const double* alg = cache.aux_logits.data() +
                            static_cast<std::size_t>(t) * spec.aux_classes;
        sl += lambda *
              (log_sum_exp(alg, spec.aux_classes) - alg[sample.aux_target]);
      }
    }
    loss += sl / T;
  }
  return loss / static_cast<double>(batch.size());
}

std::vector<std::vector<double>> sequence_logits(
    const ModelSpec& spec, const ModelWeights& weights,
    std::span<const std::vector<double>> sequence, bool aux_head) {
  ForwardCache cache;
  forward_pass(spec, weights, sequence, cache);
  const int T = static_cast<int>(sequence.size());
  const int n = aux_head ? spec.aux_classes : spec.n_classes;
  const auto& src = aux_head ? cache.aux_logits : cache.logits;
  std::vector<std::vector<double>> out(T, std::vector<double>(n));
  for (int t = 0; t < T; ++t)
    std::copy_n(src.data() + static_cast<std::size_t>(t) * n, n, out[t].data());
  return out;
}

Adam::Adam(const ModelSpec& spec, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& name : ModelWeights::array_names(spec)) {
    const auto sh = shape_of(spec, name);
    const std::size_t n = static_cast<std::size_t>(sh.rows) * sh.cols;
    m_.emplace(name, std::vector<double>(n, 0.0));
    v_.emplace(name, std::vector<double>(n, 0.0));
  }
}

void Adam::step(ModelWeights& weights, const Gradients& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (auto& [name, w] : weights.arrays) {
    const auto& g = grads.at(name);
    auto& m = m_.at(name);
    auto& v = v_.at(name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
    }
  }
}

std::vector<EpochMetrics> train(const ModelSpec& spec, ModelWeights& weights,
                                std::span<const Sample> data,
                                const TrainConfig& cfg) {
  spec.validate();
  if (data.empty()) throw ShapeError("training set is empty");
  Adam adam(spec, cfg.adam);
  std::vector<EpochMetrics> metrics;
  std::vector<int> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(cfg.seed ^ (0xA5A5A5A5ULL * (epoch + 1)));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);

    double loss_sum = 0.0;
    long correct = 0, total = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Sample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      BatchResult res =
          backward(spec, weights, batch, cfg.lambda, cfg.threads);
      if (!std::isfinite(res.loss))
        throw DivergenceError("training loss is not finite");
      if (cfg.adam.lr != 0.0) adam.step(weights, res.gradients);
      loss_sum += res.loss;
      correct += res.correct;
      total += res.total;
      ++batches;
    }
    metrics.push_back({epoch, loss_sum / batches,
                       total > 0 ? static_cast<double>(correct) / total : 0.0});
  }
  return metrics;
}

GradCheckReport grad_check(const ModelSpec& spec, std::uint64_t seed,
                           double h) {
  spec.validate();
  if (spec.param_count() > 10000)
    throw ConfigError("grad_check wants a small config (<= 10k parameters)");
  Rng rng(seed ^ 0xFEEDFACEULL);

  const int T = spec.kind == ModelKind::LSTM ? 5 : 4;
  std::vector<std::vector<std::vector<double>>> seqs(2);
  std::vector<Sample> batch;
  for (auto& seq : seqs) {
    seq.assign(T, std::vector<double>(spec.model_input_dim()));
    for (auto& x : seq)
      for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    Sample s;
    s.sequence = &seq;
    s.target = static_cast<int>(rng.below(spec.n_classes));
    s.aux_target = spec.aux_classes > 0
                       ? static_cast<int>(rng.below(spec.aux_classes))
                       : -1;
    batch.push_back(s);
  }
  const double lambda = 0.7;

  // The loss is only piecewise differentiable in the ReLU kinks; central
  // differences are meaningful only at a point where every pre-activation
  // clears the kink by more than the probe can move it. Redraw the
  // checkpoint (deterministically) until that holds.
  ModelWeights weights;
  for (std::uint64_t attempt = 0;; ++attempt) {
    weights = init_weights(spec, seed ^ (attempt * 0x9E3779B97F4A7C15ULL));
    Rng jitter(seed + 31 * attempt);
    for (auto& [name, arr] : weights.arrays) {
      if (name.ends_with(".b"))
        for (auto& v : arr) v += jitter.uniform(-0.6, 0.6);
      else
        for (auto& v : arr) v *= 2.0;
    }
    double min_abs_z = std::numeric_limits<double>::infinity();
    for (const auto& sample : batch) {
      ForwardCache cache;
      forward_pass(spec, weights, *sample.sequence, cache);
      min_abs_z = std::min(min_abs_z, cache.min_abs_z);
    }
    if (min_abs_z > 100.0 * h) break;
    if (attempt > 200)
      throw ConfigError("no kink-free checkpoint found for grad_check");
  }

  const BatchResult analytic = backward(spec, weights, batch, lambda);
  GradCheckReport report;
  for (const auto& name : ModelWeights::array_names(spec)) {
    GradCheckEntry entry;
    entry.array = name;
    auto& arr = weights.at(name);
    const auto& g = analytic.gradients.at(name);
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const double saved = arr[i];
      arr[i] = saved + h;
      const double up = batch_loss(spec, weights, batch, lambda);
      arr[i] = saved - h;
      const double down = batch_loss(spec, weights, batch, lambda);
      arr[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max(std::abs(g[i]) + std::abs(numeric), 1e-8);
      entry.max_rel_error =
          std::max(entry.max_rel_error, std::abs(g[i] - numeric) / denom);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_array.push_back(std::move(entry));
  }
  return report;
}

GradCheckReport grad_check_suite(std::uint64_t seed) {
  GradCheckReport worst;
  auto merge = [&worst](const GradCheckReport& r, const std::string& prefix) {
    for (const auto& e : r.per_array)
      worst.per_array.push_back({prefix + "/" + e.array, e.max_rel_error});
    worst.max_rel_error = std::max(worst.max_rel_error, r.max_rel_error);
  };

  ModelSpec mlp;
  mlp.kind = ModelKind::FrameStack;
  mlp.input_dim = 6;
  mlp.stack_size = 1;
  mlp.fc_sizes = {8, 6};
  mlp.n_classes = 3;
  merge(grad_check(mlp, seed), "mlp");

  ModelSpec lstm;
  lstm.kind = ModelKind::LSTM;
  lstm.input_dim = 5;
  lstm.lstm_layers = 2;
  lstm.lstm_width = 6;
  lstm.fc_sizes = {7};
  lstm.n_classes = 3;
  merge(grad_check(lstm, seed + 1), "lstm2");

  ModelSpec stack;
  stack.kind = ModelKind::FrameStack;
  stack.input_dim = 4;
  stack.stack_size = 3;
  stack.frame_skip = 2;
  stack.fc_sizes = {8};
  stack.n_classes = 3;
  merge(grad_check(stack, seed + 2), "framestack");

  ModelSpec joint;
  joint.kind = ModelKind::LSTM;
  joint.input_dim = 4;
  joint.lstm_layers = 1;
  joint.lstm_width = 5;
  joint.fc_sizes = {6};
  joint.n_classes = 3;
  joint.aux_classes = 3;
  merge(grad_check(joint, seed + 3), "composite");

  return worst;
}

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'M', 'N', 'N'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_weights(const ModelWeights& weights, const std::string& path) {
  std::ostringstream body(std::ios::binary);
  binio::write_bytes(body, kCheckpointMagic, 4);
  binio::write_u32(body, kCheckpointVersion);
  const auto& s = weights.spec;
  binio::write_u8(body, static_cast<std::uint8_t>(s.kind));
  binio::write_u32(body, static_cast<std::uint32_t>(s.input_dim));
  binio::write_u32(body, static_cast<std::uint32_t>(s.lstm_layers));
  binio::write_u32(body, static_cast<std::uint32_t>(s.lstm_width));
  binio::write_u32(body, static_cast<std::uint32_t>(s.fc_sizes.size()));
  for (int v : s.fc_sizes) binio::write_u32(body, static_cast<std::uint32_t>(v));
  binio::write_u32(body, static_cast<std::uint32_t>(s.n_classes));
  binio::write_u32(body, static_cast<std::uint32_t>(s.aux_classes));
  binio::write_u32(body, static_cast<std::uint32_t>(s.stack_size));
  binio::write_u32(body, static_cast<std::uint32_t>(s.frame_skip));
  binio::write_u64(body, weights.init_seed);
  binio::write_u32(body, static_cast<std::uint32_t>(weights.arrays.size()));
  for (const auto& [name, arr] : weights.arrays) {
    binio::write_str(body, name);
    binio::write_u64(body, arr.size());
    for (double v : arr) binio::write_f64(body, v);
  }
  const std::string bytes = body.str();
  const std::uint32_t crc = wire::crc32(
      {reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    binio::write_u32(out, crc);
    if (!out) throw IoError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot rename " + tmp + " to " + path);
}

ModelWeights load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw FormatError("checkpoint too short");
  const std::string body = bytes.substr(0, bytes.size() - 4);
  std::istringstream tail(bytes.substr(bytes.size() - 4));
  const std::uint32_t stored = binio::read_u32(tail);
  const std::uint32_t actual = wire::crc32(
      {reinterpret_cast<const std::uint8_t*>(body.data()), body.size()});
  if (stored != actual) throw FormatError("checkpoint crc mismatch");

  std::istringstream ss(body, std::ios::binary);
  char magic[4];
  binio::read_bytes(ss, magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("bad checkpoint magic");
  if (binio::read_u32(ss) != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version");

  ModelWeights w;
  w.spec.kind = static_cast<ModelKind>(binio::read_u8(ss));
  w.spec.input_dim = static_cast<int>(binio::read_u32(ss));
  w.spec.lstm_layers = static_cast<int>(binio::read_u32(ss));
  w.spec.lstm_width = static_cast<int>(binio::read_u32(ss));
  w.spec.fc_sizes.resize(binio::read_u32(ss));
  for (auto& v : w.spec.fc_sizes) v = static_cast<int>(binio::read_u32(ss));
  w.spec.n_classes = static_cast<int>(binio::read_u32(ss));
  w.spec.aux_classes = static_cast<int>(binio::read_u32(ss));
  w.spec.stack_size = static_cast<int>(binio::read_u32(ss));
  w.spec.frame_skip = static_cast<int>(binio::read_u32(ss));
  w.init_seed = binio::read_u64(ss);
  const std::uint32_t n_arrays = binio::read_u32(ss);
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    const std::string name = binio::read_str(ss);
    std::vector<double> arr(binio::read_u64(ss));
    for (auto& v : arr) v = binio::read_f64(ss);
    w.arrays.emplace(name, std::move(arr));
  }
  // shapes must match the spec exactly
  for (const auto& name : ModelWeights::array_names(w.spec)) {
    const auto sh = shape_of(w.spec, name);
    if (w.at(name).size() != static_cast<std::size_t>(sh.rows) * sh.cols)
      throw FormatError("checkpoint array " + name + " has wrong shape");
  }
  for (const auto& [name, arr] : w.arrays)
    for (double v : arr)
      if (!std::isfinite(v))
        throw FormatError("checkpoint contains non-finite values");
  return w;
}

}  // namespace dmanus::nn
