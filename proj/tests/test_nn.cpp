#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dmanus/nn.hpp"
#include "dmanus/rng.hpp"

using namespace dmanus;
using namespace dmanus::nn;

namespace {

// deterministic parameter filling shared with the pre-build oracle
void fill_arrays(ModelWeights& w, const std::vector<std::string>& order) {
  int k = 0;
  for (const auto& name : order)
    for (auto& v : w.at(name)) v = 0.1 * std::sin(0.7 * k++ + 0.3);
}

std::vector<std::vector<double>> oracle_inputs(int T, int D) {
  std::vector<std::vector<double>> xs(T, std::vector<double>(D));
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < D; ++i)
      xs[t][i] = 0.5 * std::sin(0.9 * (t * D + i) + 0.2);
  return xs;
}

std::string temp_path(const char* name) {
  return std::string(DMANUS_BINARY_DIR) + "/" + name;
}

}  // namespace

TEST_CASE("zero weights give all-zero hidden states") {
  ModelSpec spec;
  spec.kind = ModelKind::LSTM;
  spec.input_dim = 4;
  spec.lstm_layers = 2;
  spec.lstm_width = 3;
  spec.fc_sizes = {};
  spec.n_classes = 2;
  ModelWeights w = init_weights(spec, 1);
  for (auto& [name, arr] : w.arrays) std::fill(arr.begin(), arr.end(), 0.0);

  const auto xs = oracle_inputs(6, 4);
  const auto hidden = lstm_forward(spec, w, xs);
  REQUIRE(hidden.size() == 6);
  for (const auto& h : hidden)
    for (double v : h) CHECK(v == 0.0);
}

TEST_CASE("causality: a length-1 sequence equals the first step of a longer one") {
  ModelSpec spec;
  spec.kind = ModelKind::LSTM;
  spec.input_dim = 3;
  spec.lstm_layers = 1;
  spec.lstm_width = 4;
  spec.fc_sizes = {};
  spec.n_classes = 2;
  const ModelWeights w = init_weights(spec, 7);
  const auto xs = oracle_inputs(5, 3);
  const std::vector<std::vector<double>> first(xs.begin(), xs.begin() + 1);
  const auto h_short = lstm_forward(spec, w, first);
  const auto h_long = lstm_forward(spec, w, xs);
  for (int u = 0; u < 4; ++u) CHECK(h_short[0][u] == h_long[0][u]);
}

TEST_CASE("lstm hidden states match the straight-line cell-equation oracle") {
  ModelSpec spec;
  spec.kind = ModelKind::LSTM;
  spec.input_dim = 3;
  spec.lstm_layers = 1;
  spec.lstm_width = 4;
  spec.fc_sizes = {};
  spec.n_classes = 2;
  ModelWeights w = init_weights(spec, 0);
  fill_arrays(w, {"lstm0.wx", "lstm0.wh", "lstm0.b"});

  const auto hidden = lstm_forward(spec, w, oracle_inputs(3, 3));
  REQUIRE(hidden.size() == 3);
  const double expected[3][4] = {
      {-0.00365205362078451, 0.0161046814276943, -0.02283526109255947,
       -0.044132935137402},
      {0.01518556362900667, -0.0119660408116741, -0.02254256201014071,
       -0.03700990834947396},
      {0.02020335823472558, 0.00122023269475559, -0.0439969088899852,
       -0.04318991245013697}};
  for (int t = 0; t < 3; ++t)
    for (int u = 0; u < 4; ++u)
      CHECK(hidden[t][u] == doctest::Approx(expected[t][u]).epsilon(1e-12));
}

TEST_CASE("shape violations are rejected") {
  ModelSpec spec;
  spec.kind = ModelKind::LSTM;
  spec.input_dim = 3;
  spec.lstm_layers = 1;
  spec.lstm_width = 4;
  spec.n_classes = 2;
  const ModelWeights w = init_weights(spec, 0);
  const auto bad = oracle_inputs(2, 5);
  CHECK_THROWS_AS(lstm_forward(spec, w, bad), ShapeError);
  std::vector<double> bad_feature(3, 0.0);
  CHECK_THROWS_AS(head_forward(spec, w, bad_feature), ShapeError);
}

TEST_CASE("head with zero input and zero weights emits the output bias") {
  ModelSpec spec;
  spec.kind = ModelKind::FrameStack;
  spec.input_dim = 5;
  spec.fc_sizes = {4};
  spec.n_classes = 3;
  ModelWeights w = init_weights(spec, 3);
  for (auto& [name, arr] : w.arrays) std::fill(arr.begin(), arr.end(), 0.0);
  w.at("out.b") = {0.5, -0.25, 1.5};
  const std::vector<double> zero(5, 0.0);
  const auto logits = head_forward(spec, w, zero);
  CHECK(logits == std::vector<double>{0.5, -0.25, 1.5});
}

TEST_CASE("head logits match the hand-computed matrix oracle") {
  ModelSpec spec;
  spec.kind = ModelKind::FrameStack;
  spec.input_dim = 3;
  spec.fc_sizes = {4};
  spec.n_classes = 2;
  ModelWeights w = init_weights(spec, 0);
  fill_arrays(w, {"fc0.w", "fc0.b", "out.w", "out.b"});
  const auto x = oracle_inputs(1, 3)[0];
  const auto logits = head_forward(spec, w, x);
  REQUIRE(logits.size() == 2);
  CHECK(logits[0] == doctest::Approx(-0.11169714555691179).epsilon(1e-12));
  CHECK(logits[1] == doctest::Approx(-0.07173957560119429).epsilon(1e-12));
}

TEST_CASE("relu: zeroing negative pre-activations changes nothing downstream") {
  ModelSpec spec;
  spec.kind = ModelKind::FrameStack;
  spec.input_dim = 4;
  spec.fc_sizes = {6};
  spec.n_classes = 3;
  ModelWeights w = init_weights(spec, 9);
  const auto x = oracle_inputs(1, 4)[0];
  const auto before = head_forward(spec, w, x);

  // find a unit whose pre-activation is negative and rewire its outgoing row
  auto& fc_w = w.at("fc0.w");
  auto& fc_b = w.at("fc0.b");
  int dead = -1;
  for (int u = 0; u < 6 && dead < 0; ++u) {
    double z = fc_b[u];
    for (int i = 0; i < 4; ++i) z += fc_w[u * 4 + i] * x[i];
    if (z < -1e-6) dead = u;
  }
  REQUIRE(dead >= 0);
  auto& out_w = w.at("out.w");
  for (int c = 0; c < 3; ++c) out_w[c * 6 + dead] = 123.0;
  const auto after = head_forward(spec, w, x);
  for (int c = 0; c < 3; ++c) CHECK(before[c] == after[c]);
}

TEST_CASE("cross entropy on uniform logits is ln(n)") {
  const std::vector<double> logits4(4, 0.7);
  CHECK(cross_entropy(logits4, 1) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  const std::vector<double> logits2(2, 0.3);
  CHECK(cross_entropy(logits2, 0) ==
        doctest::Approx(0.69314718055994530942).epsilon(1e-12));
}

TEST_CASE("cross entropy matches the high-precision softmax oracle") {
  const std::vector<double> logits = {1.7, -0.4, 0.9, 0.05};
  CHECK(cross_entropy(logits, 2) ==
        doctest::Approx(1.3674905864404784878).epsilon(1e-14));
  CHECK_THROWS_AS(cross_entropy(logits, 4), IndexError);
  CHECK_THROWS_AS(cross_entropy(logits, -1), IndexError);
}

TEST_CASE("composite loss reduces to the softness loss at lambda 0") {
  const std::vector<double> ls = {0.2, -1.1, 0.7};
  const std::vector<double> lt = {0.3, 0.4, -0.2};
  CHECK(composite_cross_entropy(ls, lt, 0, 1, 0.0) == cross_entropy(ls, 0));
  CHECK(composite_cross_entropy(ls, lt, 0, 1, 0.7) ==
        doctest::Approx(1.7003160840798496265).epsilon(1e-14));
}

TEST_CASE("softmax shift invariance and argmax scale stability") {
  Rng rng(31);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> logits(5);
    for (auto& v : logits) v = rng.uniform(-8.0, 8.0);
    const double shift = rng.uniform(-50.0, 50.0);
    std::vector<double> shifted = logits;
    for (auto& v : shifted) v += shift;
    CHECK(std::abs(cross_entropy(shifted, 2) - cross_entropy(logits, 2)) < 1e-9);

    const double k = rng.uniform(0.01, 100.0);
    int arg0 = 0, argk = 0;
    for (int i = 1; i < 5; ++i) {
      if (logits[i] > logits[arg0]) arg0 = i;
      if (k * logits[i] > k * logits[argk]) argk = i;
    }
    CHECK(arg0 == argk);
  }
}

TEST_CASE("gradient of a duplicated batch equals the single-sample gradient") {
  ModelSpec spec;
  spec.kind = ModelKind::LSTM;
  spec.input_dim = 3;
  spec.lstm_layers = 1;
  spec.lstm_width = 4;
  spec.fc_sizes = {5};
  spec.n_classes = 3;
  const ModelWeights w = init_weights(spec, 11);
  const auto seq = oracle_inputs(6, 3);
  Sample s;
  s.sequence = &seq;
  s.target = 1;
  const auto single = backward(spec, w, std::vector<Sample>{s});
  const auto doubled = backward(spec, w, std::vector<Sample>{s, s});
  for (const auto& [name, g] : single.gradients) {
    const auto& g2 = doubled.gradients.at(name);
    for (std::size_t i = 0; i < g.size(); ++i)
      CHECK(g[i] == doctest::Approx(g2[i]).epsilon(1e-12));
  }
  CHECK(single.loss == doctest::Approx(doubled.loss).epsilon(1e-12));
}

TEST_CASE("dead relu paths get exactly zero gradient") {
  ModelSpec spec;
  spec.kind = ModelKind::FrameStack;
  spec.input_dim = 3;
  spec.fc_sizes = {4};
  spec.n_classes = 2;
  ModelWeights w = init_weights(spec, 2);
  // force one unit permanently off
  auto& fc_w = w.at("fc0.w");
  auto& fc_b = w.at("fc0.b");
  for (int i = 0; i < 3; ++i) fc_w[2 * 3 + i] = 0.0;
  fc_b[2] = -5.0;

  const auto seq = oracle_inputs(4, 3);
  Sample s;
  s.sequence = &seq;
  s.target = 0;
  const auto res = backward(spec, w, std::vector<Sample>{s});
  const auto& gw = res.gradients.at("fc0.w");
  const auto& gb = res.gradients.at("fc0.b");
  for (int i = 0; i < 3; ++i) CHECK(gw[2 * 3 + i] == 0.0);
  CHECK(gb[2] == 0.0);
}

TEST_CASE("finite differences confirm every gradient (mlp + lstm)") {
  const GradCheckReport report = grad_check_suite(7);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("constant-loss degenerate config has zero gradients everywhere") {
  ModelSpec spec;
  spec.kind = ModelKind::FrameStack;
  spec.input_dim = 3;
  spec.fc_sizes = {4};
  spec.n_classes = 1;  // single class: loss is identically zero
  const GradCheckReport report = grad_check(spec, 5);
  CHECK(report.max_rel_error == 0.0);
}

TEST_CASE("gradient threading does not change the result") {
  ModelSpec spec;
  spec.kind = ModelKind::LSTM;
  spec.input_dim = 4;
  spec.lstm_layers = 2;
  spec.lstm_width = 5;
  spec.fc_sizes = {6};
  spec.n_classes = 3;
  const ModelWeights w = init_weights(spec, 21);
  std::vector<std::vector<std::vector<double>>> seqs;
  std::vector<Sample> batch;
  Rng rng(3);
  for (int i = 0; i < 6; ++i) {
    seqs.push_back(oracle_inputs(8, 4));
    for (auto& x : seqs.back())
      for (auto& v : x) v += 0.01 * rng.gaussian();
  }
  for (int i = 0; i < 6; ++i) {
    Sample s;
    s.sequence = &seqs[i];
    s.target = i % 3;
    batch.push_back(s);
  }
  const auto a = backward(spec, w, batch, 1.0, 1);
  const auto b = backward(spec, w, batch, 1.0, 4);
  for (const auto& [name, g] : a.gradients) {
    const auto& g2 = b.gradients.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == g2[i]);
  }
}

TEST_CASE("training overfits two tiny trajectories of distinct classes") {
  ModelSpec spec;
  spec.kind = ModelKind::LSTM;
  spec.input_dim = 4;
  spec.lstm_layers = 1;
  spec.lstm_width = 6;
  spec.fc_sizes = {6};
  spec.n_classes = 2;
  ModelWeights w = init_weights(spec, 5);

  Rng rng(8);
  std::vector<std::vector<std::vector<double>>> seqs(2);
  for (int c = 0; c < 2; ++c) {
    seqs[c].assign(10, std::vector<double>(4));
    for (auto& x : seqs[c])
      for (int i = 0; i < 4; ++i)
        x[i] = (c == 0 ? 0.8 : -0.8) + 0.1 * rng.gaussian();
  }
  std::vector<Sample> data;
  for (int c = 0; c < 2; ++c) {
    Sample s;
    s.sequence = &seqs[c];
    s.target = c;
    data.push_back(s);
  }
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 2;
  cfg.seed = 1;
  const auto metrics = train(spec, w, data, cfg);
  bool reached = false;
  for (const auto& m : metrics) reached |= m.frame_accuracy == 1.0;
  CHECK(reached);
}

TEST_CASE("lr = 0 leaves the weights untouched") {
  ModelSpec spec;
  spec.kind = ModelKind::FrameStack;
  spec.input_dim = 4;
  spec.fc_sizes = {5};
  spec.n_classes = 2;
  ModelWeights w = init_weights(spec, 6);
  const ModelWeights before = w;
  const auto seq = oracle_inputs(5, 4);
  Sample s;
  s.sequence = &seq;
  s.target = 1;
  TrainConfig cfg;
  cfg.adam.lr = 0.0;
  cfg.epochs = 5;
  train(spec, w, std::vector<Sample>{s}, cfg);
  for (const auto& [name, arr] : before.arrays) CHECK(w.at(name) == arr);
}

TEST_CASE("training is bit-deterministic in the seed") {
  ModelSpec spec;
  spec.kind = ModelKind::LSTM;
  spec.input_dim = 3;
  spec.lstm_layers = 1;
  spec.lstm_width = 4;
  spec.fc_sizes = {4};
  spec.n_classes = 2;

  const auto seq0 = oracle_inputs(6, 3);
  auto seq1 = oracle_inputs(6, 3);
  for (auto& x : seq1)
    for (auto& v : x) v = -v;
  std::vector<Sample> data(2);
  data[0].sequence = &seq0;
  data[0].target = 0;
  data[1].sequence = &seq1;
  data[1].target = 1;

  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 33;
  cfg.threads = 2;

  ModelWeights a = init_weights(spec, 42);
  ModelWeights b = init_weights(spec, 42);
  const auto ma = train(spec, a, data, cfg);
  const auto mb = train(spec, b, data, cfg);
  for (const auto& [name, arr] : a.arrays) CHECK(b.at(name) == arr);
  REQUIRE(ma.size() == mb.size());
  for (std::size_t i = 0; i < ma.size(); ++i) {
    CHECK(ma[i].mean_loss == mb[i].mean_loss);
    CHECK(ma[i].frame_accuracy == mb[i].frame_accuracy);
  }
}

TEST_CASE("checkpoint round trip preserves spec and every parameter") {
  ModelSpec spec;
  spec.kind = ModelKind::LSTM;
  spec.input_dim = 7;
  spec.lstm_layers = 2;
  spec.lstm_width = 5;
  spec.fc_sizes = {6, 4};
  spec.n_classes = 3;
  spec.aux_classes = 3;
  ModelWeights w = init_weights(spec, 99);
  const std::string path = temp_path("weights.dmnn");
  save_weights(w, path);
  const ModelWeights back = load_weights(path);
  CHECK(back.spec == spec);
  CHECK(back.init_seed == 99);
  for (const auto& [name, arr] : w.arrays) CHECK(back.at(name) == arr);

  // corrupting a byte breaks the crc trailer
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(40);
  f.put('\x7f');
  f.close();
  CHECK_THROWS_AS(load_weights(path), FormatError);
  std::remove(path.c_str());
}
