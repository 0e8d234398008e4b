#include "dmanus/percept.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dmanus::percept {

namespace {

struct SiteRange {
  int first;
  int count;
};

SiteRange mask_sites(ComponentMask m) {
  switch (m) {
    case ComponentMask::Finger1: return {0, 8};
    case ComponentMask::Finger2: return {8, 8};
    case ComponentMask::Finger3: return {16, 8};
    case ComponentMask::Palm: return {24, 32};
    case ComponentMask::All: return {0, 56};
  }
  return {0, 56};
}

}  // namespace

const char* mask_name(ComponentMask m) {
  switch (m) {
    case ComponentMask::Finger1: return "finger1";
    case ComponentMask::Finger2: return "finger2";
    case ComponentMask::Finger3: return "finger3";
    case ComponentMask::Palm: return "palm";
    case ComponentMask::All: return "all";
  }
  return "?";
}

ComponentMask mask_from_name(const std::string& name) {
  for (ComponentMask m : all_masks())
    if (name == mask_name(m)) return m;
  throw ConfigError("unknown component mask: " + name);
}

int mask_dim(ComponentMask m) { return mask_sites(m).count * 3; }

std::vector<ComponentMask> all_masks() {
  return {ComponentMask::Finger1, ComponentMask::Finger2,
          ComponentMask::Finger3, ComponentMask::Palm, ComponentMask::All};
}

std::vector<double> apply_mask(std::span<const double> frame,
                               ComponentMask mask) {
  if (frame.size() != skin::kFluxDim)
    throw ShapeError("apply_mask expects a 168-dim frame");
  const SiteRange r = mask_sites(mask);
  return {frame.begin() + r.first * 3,
          frame.begin() + (r.first + r.count) * 3};
}

std::vector<std::vector<double>> feature_sequence(const dataset::Trajectory& t,
                                                  ComponentMask mask) {
  const SiteRange r = mask_sites(mask);
  std::vector<std::vector<double>> out;
  out.reserve(t.frames.size());
  for (const auto& f : t.frames) {
    std::vector<double> v(static_cast<std::size_t>(r.count) * 3);
    for (int i = 0; i < r.count * 3; ++i) {
      const int k = r.first * 3 + i;
      v[i] = kFeatureScale * (static_cast<double>(f.values[k]) -
                              static_cast<double>(t.baseline.values[k]));
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<std::vector<double>> frame_stack_transform(
    const std::vector<std::vector<double>>& sequence, int stack_size,
    int frame_skip) {
  if (stack_size < 1 || frame_skip < 1)
    throw ConfigError("stack_size and frame_skip must be >= 1");
  const int T = static_cast<int>(sequence.size());
  if (T == 0) return {};
  if ((stack_size - 1) * frame_skip >= T)
    throw ConfigError("(stack_size-1)*frame_skip must be < sequence length");
  const int dim = static_cast<int>(sequence[0].size());
  std::vector<std::vector<double>> out(T);
  for (int t = 0; t < T; ++t) {
    std::vector<double> v(static_cast<std::size_t>(stack_size) * dim);
    for (int s = 0; s < stack_size; ++s) {
      const int src = std::max(0, t - s * frame_skip);  // frame-0 padding
      std::copy(sequence[src].begin(), sequence[src].end(),
                v.begin() + static_cast<std::size_t>(s) * dim);
    }
    out[t] = std::move(v);
  }
  return out;
}

const char* variant_name(TextureVariant v) {
  switch (v) {
    case TextureVariant::Vanilla: return "vanilla";
    case TextureVariant::Joint: return "joint";
    case TextureVariant::SoftnessConditioned: return "softness_conditioned";
  }
  return "?";
}

TextureVariant variant_from_name(const std::string& name) {
  if (name == "vanilla") return TextureVariant::Vanilla;
  if (name == "joint") return TextureVariant::Joint;
  if (name == "softness_conditioned") return TextureVariant::SoftnessConditioned;
  throw ConfigError("unknown texture variant: " + name);
}

int task_label(dataset::Task task, const dataset::Label& label) {
  switch (task) {
    case dataset::Task::Material: return label.material;
    case dataset::Task::Softness: return label.softness;
    case dataset::Task::Texture: return label.texture;
    case dataset::Task::SoftnessTexture: return label.softness * 3 + label.texture;
  }
  return -1;
}

int task_classes(dataset::Task task) {
  switch (task) {
    case dataset::Task::Material: return 6;
    case dataset::Task::Softness: return 3;
    case dataset::Task::Texture: return 3;
    case dataset::Task::SoftnessTexture: return 9;
  }
  return 0;
}

namespace {

nn::ModelSpec make_spec(dataset::Task task, const TrainOptions& opt,
                        bool joint) {
  nn::ModelSpec spec;
  spec.kind = opt.arch;
  spec.input_dim = mask_dim(opt.mask);
  spec.lstm_layers = opt.lstm_layers;
  spec.lstm_width = opt.lstm_width;
  spec.fc_sizes = opt.fc_sizes;
  spec.stack_size = opt.arch == nn::ModelKind::FrameStack ? opt.stack_size : 1;
  spec.frame_skip = opt.arch == nn::ModelKind::FrameStack ? opt.frame_skip : 1;
  if (joint) {
    spec.n_classes = 3;   // softness head
    spec.aux_classes = 3; // texture head
  } else {
    spec.n_classes = task_classes(task);
  }
  return spec;
}

nn::TrainConfig make_train_config(const TrainOptions& opt) {
  nn::TrainConfig cfg;
  cfg.adam.lr = opt.lr;
  cfg.batch_size = opt.batch_size;
  cfg.epochs = opt.epochs;
  cfg.seed = opt.seed;
  cfg.lambda = opt.lambda;
  cfg.threads = opt.threads;
  return cfg;
}

struct PreparedSet {
  // owns the feature sequences backing the samples
  std::vector<std::vector<std::vector<double>>> sequences;
  std::vector<nn::Sample> samples;
  std::vector<int> trajectory_ids;
};

PreparedSet prepare(const dataset::Dataset& ds, const std::vector<int>& ids,
                    const nn::ModelSpec& spec, const TrainOptions& opt,
                    dataset::Task label_task, bool joint) {
  PreparedSet set;
  set.sequences.reserve(ids.size());
  for (int id : ids) {
    const auto& traj = ds.trajectories[id];
    auto features = feature_sequence(traj, opt.mask);
    if (spec.kind == nn::ModelKind::FrameStack)
      features = frame_stack_transform(features, spec.stack_size,
                                       spec.frame_skip);
    set.sequences.push_back(std::move(features));
    nn::Sample s;
    s.sequence = &set.sequences.back();
    if (joint) {
      s.target = traj.label.softness;
      s.aux_target = traj.label.texture;
    } else {
      s.target = task_label(label_task, traj.label);
    }
    if (s.target < 0) throw ConfigError("trajectory lacks the task label");
    set.samples.push_back(s);
    set.trajectory_ids.push_back(id);
  }
  // pointers must survive vector reallocation
  for (std::size_t i = 0; i < set.samples.size(); ++i)
    set.samples[i].sequence = &set.sequences[i];
  return set;
}

nn::ModelWeights train_single(const nn::ModelSpec& spec,
                              const PreparedSet& set, const TrainOptions& opt,
                              std::vector<nn::EpochMetrics>* metrics_out) {
  nn::ModelWeights weights = nn::init_weights(spec, opt.seed);
  auto metrics = nn::train(spec, weights, set.samples, make_train_config(opt));
  if (metrics_out)
    metrics_out->insert(metrics_out->end(), metrics.begin(), metrics.end());
  return weights;
}

}  // namespace

ModelBundle train_task(dataset::Task task, const dataset::Dataset& ds,
                       const TrainOptions& options) {
  ModelBundle bundle;
  bundle.task = task;
  bundle.variant = options.variant;
  bundle.mask = options.mask;
  bundle.lambda = options.lambda;

  const auto train_ids = ds.manifest.train_ids();
  if (train_ids.empty()) throw ConfigError("manifest has no training data");

  if (task != dataset::Task::Texture ||
      options.variant == TextureVariant::Vanilla) {
    const auto spec = make_spec(task, options, false);
    const auto set = prepare(ds, train_ids, spec, options, task, false);
    bundle.primary = train_single(spec, set, options, &bundle.train_metrics);
    return bundle;
  }

  if (options.variant == TextureVariant::Joint) {
    const auto spec = make_spec(task, options, true);
    const auto set = prepare(ds, train_ids, spec, options, task, true);
    bundle.primary = train_single(spec, set, options, &bundle.train_metrics);
    return bundle;
  }

  // Softness-conditioned: a softness router plus one texture model per
  // softness class, each trained only on its softness subset.
  {
    const auto spec = make_spec(dataset::Task::Softness, options, false);
    const auto set =
        prepare(ds, train_ids, spec, options, dataset::Task::Softness, false);
    bundle.router = train_single(spec, set, options, &bundle.train_metrics);
  }
  for (int softness = 0; softness < 3; ++softness) {
    std::vector<int> subset;
    for (int id : train_ids)
      if (ds.trajectories[id].label.softness == softness) subset.push_back(id);
    if (subset.empty())
      throw EmptySubset("no training objects with softness class " +
                        std::to_string(softness));
    TrainOptions sub_opt = options;
    sub_opt.seed = options.seed + 101 * (softness + 1);
    const auto spec = make_spec(dataset::Task::Texture, sub_opt, false);
    const auto set =
        prepare(ds, subset, spec, sub_opt, dataset::Task::Texture, false);
    bundle.submodels.push_back(
        train_single(spec, set, sub_opt, &bundle.train_metrics));
  }
  bundle.primary = *bundle.router;  // deployment entry point is the router
  return bundle;
}

namespace {

int argmax(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

int majority_vote(const std::vector<int>& votes, int n_classes) {
  std::vector<int> counts(n_classes, 0);
  for (int v : votes) counts[v]++;
  int best = 0;
  for (int c = 1; c < n_classes; ++c)
    if (counts[c] > counts[best]) best = c;  // ties favor the lower class id
  return best;
}

std::vector<int> model_predictions(const nn::ModelWeights& weights,
                                   const std::vector<std::vector<double>>& features,
                                   bool aux_head) {
  const auto logits =
      nn::sequence_logits(weights.spec, weights, features, aux_head);
  std::vector<int> preds(logits.size());
  for (std::size_t t = 0; t < logits.size(); ++t) preds[t] = argmax(logits[t]);
  return preds;
}

std::vector<std::vector<double>> bundle_features(
    const ModelBundle& bundle, const dataset::Trajectory& traj) {
  auto features = feature_sequence(traj, bundle.mask);
  const auto& spec = bundle.primary.spec;
  if (spec.kind == nn::ModelKind::FrameStack)
    features = frame_stack_transform(features, spec.stack_size, spec.frame_skip);
  return features;
}

}  // namespace

std::vector<int> predict_sequence(const ModelBundle& bundle,
                                  const std::vector<std::vector<double>>& features) {
  if (bundle.variant == TextureVariant::SoftnessConditioned &&
      bundle.task == dataset::Task::Texture) {
    if (!bundle.router || bundle.submodels.size() != 3)
      throw ModelMissing("softness-conditioned bundle is incomplete");
    const auto softness_preds = model_predictions(*bundle.router, features, false);
    const int softness = majority_vote(softness_preds, 3);
    return model_predictions(bundle.submodels[softness], features, false);
  }
  const bool aux = bundle.variant == TextureVariant::Joint &&
                   bundle.task == dataset::Task::Texture;
  return model_predictions(bundle.primary, features, aux);
}

double headline_accuracy(const EvalReport& report) {
  return report.mean_over_softness >= 0.0 ? report.mean_over_softness
                                          : report.trajectory_accuracy;
}

EvalReport evaluate(const ModelBundle& bundle, const dataset::Dataset& ds) {
  const auto val_ids = ds.manifest.val_ids();
  EvalReport report;
  report.n_classes = task_classes(bundle.task);
  report.n_trajectories = static_cast<int>(val_ids.size());
  report.confusion.assign(report.n_classes,
                          std::vector<int>(report.n_classes, 0));
  if (val_ids.empty()) return report;

  long frame_hits = 0, frame_total = 0, final_hits = 0, traj_hits = 0;
  // softness-conditioned bookkeeping: per true-softness category
  std::array<long, 3> cat_hits{0, 0, 0};
  std::array<long, 3> cat_total{0, 0, 0};
  long gt_hits = 0;

  const bool conditioned =
      bundle.variant == TextureVariant::SoftnessConditioned &&
      bundle.task == dataset::Task::Texture;

  for (int id : val_ids) {
    const auto& traj = ds.trajectories[id];
    const int label = task_label(bundle.task, traj.label);
    const auto features = bundle_features(bundle, traj);
    const auto preds = predict_sequence(bundle, features);
    for (int p : preds) frame_hits += p == label;
    frame_total += static_cast<long>(preds.size());
    final_hits += preds.back() == label;
    const int vote = majority_vote(preds, report.n_classes);
    traj_hits += vote == label;
    report.confusion[label][vote]++;

    if (conditioned) {
      const int s = traj.label.softness;
      cat_total[s] += 1;
      cat_hits[s] += vote == label;
      const auto gt_preds =
          model_predictions(bundle.submodels[s], features, false);
      gt_hits += majority_vote(gt_preds, 3) == label;
    }
  }

  report.frame_accuracy = static_cast<double>(frame_hits) / frame_total;
  report.trajectory_accuracy =
      static_cast<double>(traj_hits) / report.n_trajectories;
  report.final_step_accuracy =
      static_cast<double>(final_hits) / report.n_trajectories;
  report.per_class_accuracy.assign(report.n_classes, 0.0);
  for (int c = 0; c < report.n_classes; ++c) {
    long row = 0;
    for (int p = 0; p < report.n_classes; ++p) row += report.confusion[c][p];
    if (row > 0)
      report.per_class_accuracy[c] =
          static_cast<double>(report.confusion[c][c]) / row;
  }
  if (conditioned) {
    double mean = 0.0;
    int cats = 0;
    for (int s = 0; s < 3; ++s)
      if (cat_total[s] > 0) {
        mean += static_cast<double>(cat_hits[s]) / cat_total[s];
        ++cats;
      }
    report.mean_over_softness = cats > 0 ? mean / cats : 0.0;
    report.gt_routed_accuracy =
        static_cast<double>(gt_hits) / report.n_trajectories;
  }
  return report;
}

std::vector<std::pair<ComponentMask, EvalReport>> component_ablation(
    dataset::Task task, const dataset::Dataset& ds, TrainOptions options) {
  std::vector<std::pair<ComponentMask, EvalReport>> out;
  for (ComponentMask mask : all_masks()) {
    TrainOptions opt = options;
    opt.mask = mask;
    const ModelBundle bundle = train_task(task, ds, opt);
    out.emplace_back(mask, evaluate(bundle, ds));
  }
  return out;
}

std::string SweepPoint::describe() const {
  std::ostringstream out;
  out << model_kind_name(arch) << " layers=" << layers
      << " size=" << layer_size;
  if (arch == nn::ModelKind::FrameStack)
    out << " stack=" << stack_size << " skip=" << frame_skip;
  return out.str();
}

std::vector<SweepPoint> default_framestack_grid() {
  std::vector<SweepPoint> grid;
  for (int stack : {2, 5, 8, 11})
    for (int skip : {1, 2, 5, 8, 11})
      for (int layers : {2, 3, 4})
        for (int size : {64, 128, 256, 512, 1024})
          grid.push_back({nn::ModelKind::FrameStack, stack, skip, layers, size});
  return grid;
}

std::vector<SweepPoint> default_lstm_grid() {
  std::vector<SweepPoint> grid;
  for (int layers : {2, 3, 4})
    for (int size : {128, 256, 512, 1024})
      grid.push_back({nn::ModelKind::LSTM, 1, 1, layers, size});
  return grid;
}

SweepResult sweep(dataset::Task task, const dataset::Dataset& ds,
                  std::span<const SweepPoint> grid, TrainOptions base) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  SweepResult result;
  for (const auto& point : grid) {
    TrainOptions opt = base;
    opt.arch = point.arch;
    opt.stack_size = point.stack_size;
    opt.frame_skip = point.frame_skip;
    if (point.arch == nn::ModelKind::LSTM) {
      opt.lstm_layers = point.layers;
      opt.lstm_width = point.layer_size;
    } else {
      opt.fc_sizes.assign(point.layers, point.layer_size);
    }
    const ModelBundle bundle = train_task(task, ds, opt);
    const EvalReport report = evaluate(bundle, ds);
    result.rows.push_back({point, report.frame_accuracy,
                           report.trajectory_accuracy});
  }
  const SweepRow* best = &result.rows[0];
  for (const auto& row : result.rows) {
    if (row.frame_accuracy > best->frame_accuracy ||
        (row.frame_accuracy == best->frame_accuracy &&
         row.point.tie() < best->point.tie()))
      best = &row;
  }
  result.best = best->point;
  return result;
}

namespace {

namespace fs = std::filesystem;

void write_bundle_manifest(const ModelBundle& bundle, const fs::path& dir) {
  std::ofstream out(dir / "bundle.txt");
  if (!out) throw IoError("cannot write bundle manifest");
  out << "task " << dataset::task_name(bundle.task) << "\n";
  out << "variant " << variant_name(bundle.variant) << "\n";
  out << "mask " << mask_name(bundle.mask) << "\n";
  out << "lambda " << bundle.lambda << "\n";
  out << "router " << (bundle.router ? 1 : 0) << "\n";
  out << "submodels " << bundle.submodels.size() << "\n";
}

}  // namespace

void save_bundle(const ModelBundle& bundle, const std::string& dir) {
  fs::create_directories(dir);
  write_bundle_manifest(bundle, dir);
  nn::save_weights(bundle.primary, (fs::path(dir) / "primary.dmnn").string());
  if (bundle.router)
    nn::save_weights(*bundle.router, (fs::path(dir) / "router.dmnn").string());
  for (std::size_t i = 0; i < bundle.submodels.size(); ++i)
    nn::save_weights(bundle.submodels[i],
                     (fs::path(dir) / ("submodel" + std::to_string(i) + ".dmnn"))
                         .string());
}

ModelBundle load_bundle(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "bundle.txt");
  if (!in) throw IoError("cannot open bundle manifest in " + dir);
  ModelBundle bundle;
  std::string key;
  int has_router = 0;
  std::size_t n_sub = 0;
  while (in >> key) {
    if (key == "task") {
      std::string v;
      in >> v;
      bundle.task = dataset::task_from_name(v);
    } else if (key == "variant") {
      std::string v;
      in >> v;
      bundle.variant = variant_from_name(v);
    } else if (key == "mask") {
      std::string v;
      in >> v;
      bundle.mask = mask_from_name(v);
    } else if (key == "lambda") {
      in >> bundle.lambda;
    } else if (key == "router") {
      in >> has_router;
    } else if (key == "submodels") {
      in >> n_sub;
    } else {
      throw FormatError("unknown bundle manifest key: " + key);
    }
  }
  bundle.primary = nn::load_weights((fs::path(dir) / "primary.dmnn").string());
  if (has_router)
    bundle.router = nn::load_weights((fs::path(dir) / "router.dmnn").string());
  for (std::size_t i = 0; i < n_sub; ++i)
    bundle.submodels.push_back(nn::load_weights(
        (fs::path(dir) / ("submodel" + std::to_string(i) + ".dmnn")).string()));
  return bundle;
}

}  // namespace dmanus::percept
