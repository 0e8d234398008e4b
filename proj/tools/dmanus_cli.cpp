// dmanus: experiment driver for the tactile-hand testbed.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dmanus/binsort.hpp"
#include "dmanus/dataset.hpp"
#include "dmanus/nn.hpp"
#include "dmanus/percept.hpp"
#include "dmanus/skin.hpp"
#include "dmanus/stream.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dmanus;

namespace {

// Output paths resolve against DMANUS_DATA_DIR when set and relative.
std::string resolve_out(const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  const char* root = std::getenv("DMANUS_DATA_DIR");
  if (!root || !*root) return path;
  fs::create_directories(root);
  return (fs::path(root) / path).string();
}

// Every command echoes its effective configuration next to its output so a
// run can be replayed exactly.
void write_config_echo(const std::string& anchor, const json& config) {
  const std::string path = anchor + ".runconfig.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config echo: " + path);
  out << config.dump(2) << "\n";
}

json eval_to_json(const percept::EvalReport& r) {
  json j;
  j["frame_accuracy"] = r.frame_accuracy;
  j["trajectory_accuracy"] = r.trajectory_accuracy;
  j["final_step_accuracy"] = r.final_step_accuracy;
  j["n_trajectories"] = r.n_trajectories;
  j["n_classes"] = r.n_classes;
  j["confusion"] = r.confusion;
  j["per_class_accuracy"] = r.per_class_accuracy;
  if (r.mean_over_softness >= 0.0) {
    j["mean_over_softness"] = r.mean_over_softness;
    j["gt_routed_accuracy"] = r.gt_routed_accuracy;
  }
  return j;
}

void print_eval(const percept::EvalReport& r) {
  std::printf("validation: frame %.4f  trajectory %.4f  final-step %.4f  (n=%d)\n",
              r.frame_accuracy, r.trajectory_accuracy, r.final_step_accuracy,
              r.n_trajectories);
  if (r.mean_over_softness >= 0.0)
    std::printf("softness-conditioned: mean-over-categories %.4f  gt-routed %.4f\n",
                r.mean_over_softness, r.gt_routed_accuracy);
}

percept::TrainOptions options_from(const std::string& arch,
                                   const std::string& variant,
                                   const std::string& mask, int width,
                                   int layers, std::vector<int> fc, int stack,
                                   int skip, int epochs, int batch, double lr,
                                   double lambda, std::uint64_t seed) {
  percept::TrainOptions opt;
  opt.arch = nn::model_kind_from_name(arch);
  opt.variant = percept::variant_from_name(variant);
  opt.mask = percept::mask_from_name(mask);
  opt.lstm_width = width;
  opt.lstm_layers = layers;
  if (!fc.empty()) opt.fc_sizes = std::move(fc);
  opt.stack_size = stack;
  opt.frame_skip = skip;
  opt.epochs = epochs;
  opt.batch_size = batch;
  opt.lr = lr;
  opt.lambda = lambda;
  opt.seed = seed;
  return opt;
}

int cmd_layout(const std::string& out_path, const std::string& check_path) {
  if (!check_path.empty()) {
    const auto layout = skin::load_layout(check_path);
    std::printf("layout ok: %zu sites\n", layout.sites.size());
    return 0;
  }
  const std::string path = resolve_out(out_path);
  skin::save_layout(skin::default_layout(), path);
  write_config_echo(path, {{"command", "layout"}, {"out", out_path}});
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

hand::SynthObject pick_object(const std::string& name) {
  for (const auto& o : dataset::material_catalog())
    if (o.name == name) return o;
  const auto grid = dataset::softtex_catalog(1, 0, 7);
  for (const auto& o : grid)
    if (o.name == name) return o;
  throw ConfigError("unknown object: " + name +
                    " (use a material name or train_sXtY_0)");
}

int cmd_stream_serve(int rate, int port, std::int64_t frames,
                     const std::string& object, std::uint64_t seed,
                     double noise) {
  stream::StreamConfig cfg;
  cfg.rate_hz = rate;
  cfg.transport = stream::Transport::Tcp;
  cfg.tcp_port = port;
  cfg.max_frames = frames;
  hand::BabbleConfig bc;
  bc.seed = seed;
  bc.rate_hz = rate;
  auto source = std::make_unique<stream::SimFrameSource>(
      dataset::SimSetup::standard(noise), pick_object(object), bc);
  stream::StreamServer server(std::move(source), cfg);
  auto consumer = server.subscribe();
  std::printf("serving on 127.0.0.1:%d at %d Hz\n", server.port(), rate);
  std::fflush(stdout);
  server.start();
  std::uint32_t count = 0;
  while (auto f = consumer->next()) ++count;
  server.stop();
  std::printf("served %u frames\n", count);
  return 0;
}

int cmd_stream_record(int rate, std::size_t frames, const std::string& out,
                      const std::string& object, std::uint64_t seed,
                      double noise) {
  const std::string path = resolve_out(out);
  hand::BabbleConfig bc;
  bc.seed = seed;
  bc.rate_hz = rate;
  stream::SimFrameSource source(dataset::SimSetup::standard(noise),
                                pick_object(object), bc);
  const std::size_t written = stream::record_source_to_file(source, path, frames);
  write_config_echo(path, {{"command", "stream record"},
                           {"rate", rate},
                           {"frames", frames},
                           {"object", object},
                           {"seed", seed},
                           {"noise", noise},
                           {"out", out}});
  std::printf("wrote %zu frames (%zu bytes) to %s\n", written,
              written * wire::kFrameSize, path.c_str());
  return 0;
}

int cmd_collect(const std::string& task_name, int rate, std::uint64_t seed,
                double noise, int per_material, int train_per_cell,
                int val_per_cell, int per_train_object, int per_val_object,
                const std::string& out) {
  dataset::CollectConfig cfg;
  cfg.task = dataset::task_from_name(task_name);
  cfg.rate_hz = rate;
  cfg.seed = seed;
  cfg.noise_sigma = noise;
  cfg.per_material = per_material;
  cfg.train_objects_per_cell = train_per_cell;
  cfg.val_objects_per_cell = val_per_cell;
  cfg.per_train_object = per_train_object;
  cfg.per_val_object = per_val_object;

  const dataset::Dataset ds = dataset::collect(cfg);
  const std::string path = resolve_out(out);
  dataset::save_dataset(ds, path);
  write_config_echo(path, {{"command", "collect"},
                           {"task", task_name},
                           {"rate", rate},
                           {"seed", seed},
                           {"noise", noise},
                           {"per_material", per_material},
                           {"train_per_cell", train_per_cell},
                           {"val_per_cell", val_per_cell},
                           {"per_train_object", per_train_object},
                           {"per_val_object", per_val_object},
                           {"out", out}});
  std::printf("collected %zu trajectories (%zu train / %zu val) -> %s\n",
              ds.trajectories.size(), ds.manifest.train_ids().size(),
              ds.manifest.val_ids().size(), path.c_str());
  for (const auto& w : ds.manifest.warnings)
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  return 0;
}

int cmd_train(const std::string& data, const std::string& task_name,
              const percept::TrainOptions& opt, const std::string& out,
              const std::string& metrics__, const json& echo) {
  const dataset::Dataset ds = dataset::load_dataset(data);
  const dataset::Task task = dataset::task_from_name(task_name);
  const percept::ModelBundle bundle = percept::train_task(task, ds, opt);
  const percept::EvalReport report = percept::evaluate(bundle, ds);

  const std::string dir = resolve_out(out);
  percept::save_bundle(bundle, dir);
  write_config_echo(dir + "/bundle", echo);

  json metrics;
  metrics["command"] = "train";
  metrics["task"] = task_name;
  metrics["variant"] = percept::variant_name(opt.variant);
  metrics["mask"] = percept::mask_name(opt.mask);
  metrics["arch"] = nn::model_kind_name(opt.arch);
  metrics["eval"] = eval_to_json(report);
  json epochs = json::array();
  for (const auto& m : bundle.train_metrics)
    epochs.push_back({{"epoch", m.epoch},
                      {"loss", m.mean_loss},
                      {"accuracy", m.frame_accuracy}});
  metrics["train"] = epochs;
  const std::string metrics_path =
      resolve_out(metrics__.empty() ? dir + "/metrics.json" : metrics__);
  std::ofstream mout(metrics_path);
  mout << metrics.dump(2) << "\n";

  std::printf("trained %s/%s (%s, mask %s) -> %s\n", task_name.c_str(),
              percept::variant_name(opt.variant),
              nn::model_kind_name(opt.arch), percept::mask_name(opt.mask),
              dir.c_str());
  print_eval(report);
  return 0;
}

int cmd_eval(const std::string& model_dir, const std::string& data,
             const std::string& out) {
  const percept::ModelBundle bundle = percept::load_bundle(model_dir);
  const dataset::Dataset ds = dataset::load_dataset(data);
  const percept::EvalReport report = percept::evaluate(bundle, ds);
  print_eval(report);
  if (!out.empty()) {
    const std::string path = resolve_out(out);
    std::ofstream jout(path);
    jout << eval_to_json(report).dump(2) << "\n";
    write_config_echo(path, {{"command", "eval"},
                             {"model", model_dir},
                             {"data", data},
                             {"out", out}});
  }
  return 0;
}

int cmd_ablate(const std::string& data, const std::string& task_name,
               percept::TrainOptions opt, const std::string& out,
               const json& echo) {
  const dataset::Dataset ds = dataset::load_dataset(data);
  const dataset::Task task = dataset::task_from_name(task_name);
  const auto results = percept::component_ablation(task, ds, opt);

  const std::string path = resolve_out(out);
  std::ofstream tout(path);
  tout << "# component ablation: " << task_name << "\n";
  tout << "# component frame_accuracy trajectory_accuracy\n";
  json rows = json::array();
  for (const auto& [mask, report] : results) {
    tout << percept::mask_name(mask) << ' ' << report.frame_accuracy << ' '
         << report.trajectory_accuracy << "\n";
    rows.push_back({{"component", percept::mask_name(mask)},
                    {"eval", eval_to_json(report)}});
    std::printf("%-8s frame %.4f traj %.4f\n", percept::mask_name(mask),
                report.frame_accuracy, report.trajectory_accuracy);
  }
  std::ofstream jout(path + ".json");
  jout << json{{"command", "ablate"}, {"task", task_name}, {"rows", rows}}.dump(2)
       << "\n";
  write_config_echo(path, echo);
  return 0;
}

int cmd_sweep(const std::string& data, const std::string& task_name,
              percept::TrainOptions base, const std::string& arch,
              std::vector<int> stacks, std::vector<int> skips,
              std::vector<int> layer_counts, std::vector<int> sizes,
              const std::string& out, const json& echo) {
  const dataset::Dataset ds = dataset::load_dataset(data);
  const dataset::Task task = dataset::task_from_name(task_name);

  std::vector<percept::SweepPoint> grid;
  const nn::ModelKind kind = nn::model_kind_from_name(arch);
  if (stacks.empty()) stacks = {1};
  if (skips.empty()) skips = {1};
  for (int stack : stacks)
    for (int skip : skips)
      for (int layers : layer_counts)
        for (int size : sizes)
          grid.push_back({kind, stack, skip, layers, size});

  const percept::SweepResult result = percept::sweep(task, ds, grid, base);
  const std::string path = resolve_out(out);
  std::ofstream tout(path);
  tout << "# sweep: " << task_name << " (" << arch << ")\n";
  tout << "# config | frame_accuracy trajectory_accuracy\n";
  for (const auto& row : result.rows) {
    tout << row.point.describe() << " | " << row.frame_accuracy << ' '
         << row.trajectory_accuracy << "\n";
    std::printf("%-40s frame %.4f traj %.4f\n", row.point.describe().c_str(),
                row.frame_accuracy, row.trajectory_accuracy);
  }
  tout << "best: " << result.best.describe() << "\n";
  std::printf("best: %s\n", result.best.describe().c_str());
  write_config_echo(path, echo);
  return 0;
}

int cmd_binsort(const std::string& softness_dir, const std::string& texture_dir,
                int grasps, std::uint64_t seed, double noise, bool prototype,
                const std::string& out, const json& echo) {
  binsort::SortingModels models;
  models.softness = percept::load_bundle(softness_dir);
  models.texture = percept::load_bundle(texture_dir);

  binsort::BinSceneConfig scene_cfg;
  scene_cfg.seed = seed;
  scene_cfg.prototype_objects = prototype;
  binsort::BinScene scene(scene_cfg);
  const dataset::SimSetup sim = dataset::SimSetup::standard(noise);
  binsort::EpisodeConfig episode_cfg;

  const binsort::SessionReport report =
      binsort::run_session(scene, sim, models, episode_cfg, grasps, seed);
  const std::string transcript = binsort::format_transcript(report);
  if (!out.empty()) {
    const std::string path = resolve_out(out);
    std::ofstream tout(path);
    tout << transcript;
    write_config_echo(path, echo);
  }
  std::fputs(transcript.c_str(), stdout);
  std::printf("session: %d grasps, softness %.3f texture %.3f both %.3f\n",
              report.successful_grasps, report.softness_accuracy,
              report.texture_accuracy, report.both_accuracy);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  const nn::GradCheckReport report = nn::grad_check_suite(seed);
  std::printf("max relative error: %.3e\n", report.max_rel_error);
  for (const auto& e : report.per_array)
    std::printf("  %-28s %.3e\n", e.array.c_str(), e.max_rel_error);
  return report.max_rel_error < 1e-4 ? 0 : 1;
}

int cmd_report(const std::vector<std::string>& metrics_files,
               const std::string& out) {
  std::ostringstream table;
  table << "Task                     Validation accuracy\n";
  table << "---------------------------------------------\n";
  std::vector<json> loaded;
  for (const auto& file : metrics_files) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open metrics file: " + file);
    json j;
    in >> j;
    loaded.push_back(j);
  }
  for (const auto& j : loaded) {
    if (!j.contains("eval")) continue;
    std::string name = j.value("task", "?");
    if (j.contains("variant") && j["variant"] != "vanilla")
      name += " (" + j["variant"].get<std::string>() + ")";
    if (j.contains("arch")) name += " [" + j["arch"].get<std::string>() + "]";
    if (j.contains("mask") && j["mask"] != "all")
      name += " {" + j["mask"].get<std::string>() + "}";
    const auto& e = j["eval"];
    const double acc = e.contains("mean_over_softness")
                           ? e["mean_over_softness"].get<double>()
                           : e["trajectory_accuracy"].get<double>();
    char line[160];
    std::snprintf(line, sizeof(line), "%-32s %.2f%%\n", name.c_str(),
                  100.0 * acc);
    table << line;
  }
  const std::string text = table.str();
  std::fputs(text.c_str(), stdout);
  if (!out.empty()) {
    std::ofstream tout(resolve_out(out));
    tout << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dmanus tactile-hand testbed"};
  app.require_subcommand(1);

  // layout
  auto* layout = app.add_subcommand("layout", "write or check the 56-site layout");
  std::string layout_out = "layout.txt", layout_check;
  layout->add_option("--out", layout_out, "output path");
  layout->add_option("--check", layout_check, "validate an existing layout file");

  // stream
  auto* stream_cmd = app.add_subcommand("stream", "sensor streaming");
  stream_cmd->require_subcommand(1);
  auto* serve = stream_cmd->add_subcommand("serve", "serve frames over tcp");
  int serve_rate = 30, serve_port = 0;
  std::int64_t serve_frames = 300;
  std::string serve_object = "uncovered";
  std::uint64_t serve_seed = 0;
  double serve_noise = skin::kDefaultNoiseSigma;
  serve->add_option("--rate", serve_rate, "frames per second (10/20/30)");
  serve->add_option("--port", serve_port, "tcp port (0 = ephemeral)");
  serve->add_option("--frames", serve_frames, "frame count (-1 = unbounded)");
  serve->add_option("--object", serve_object, "object in the hand");
  serve->add_option("--seed", serve_seed, "babble seed");
  serve->add_option("--noise", serve_noise, "sensor noise sigma (uT)");

  auto* record = stream_cmd->add_subcommand("record", "record frames to a file");
  int record_rate = 30;
  std::size_t record_frames = 300;
  std::string record_out = "frames.bin", record_object = "uncovered";
  std::uint64_t record_seed = 0;
  double record_noise = skin::kDefaultNoiseSigma;
  record->add_option("--rate", record_rate, "frames per second (10/20/30)");
  record->add_option("--frames", record_frames, "frame count");
  record->add_option("--out", record_out, "output file")->required();
  record->add_option("--object", record_object, "object in the hand");
  record->add_option("--seed", record_seed, "babble seed");
  record->add_option("--noise", record_noise, "sensor noise sigma (uT)");

  // collect
  auto* collect = app.add_subcommand("collect", "record a labeled dataset");
  std::string collect_task = "material", collect_out;
  int collect_rate = 30, per_material = 35;
  int train_per_cell = 2, val_per_cell = 1, per_train_object = 15,
      per_val_object = 5;
  std::uint64_t collect_seed = 0;
  double collect_noise = skin::kDefaultNoiseSigma;
  collect->add_option("--task", collect_task,
                      "material|softness|texture|softness_texture");
  collect->add_option("--rate", collect_rate, "frames per second (10/20/30)");
  collect->add_option("--seed", collect_seed, "dataset seed");
  collect->add_option("--noise", collect_noise, "sensor noise sigma (uT)");
  collect->add_option("--per-material", per_material,
                      "material task: trajectories per class");
  collect->add_option("--train-per-cell", train_per_cell,
                      "softness/texture: train objects per class cell");
  collect->add_option("--val-per-cell", val_per_cell,
                      "softness/texture: holdout objects per class cell");
  collect->add_option("--per-object", per_train_object,
                      "trajectories per training object");
  collect->add_option("--per-val-object", per_val_object,
                      "trajectories per holdout object");
  collect->add_option("--out", collect_out, "output .dmtd path")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a task model");
  std::string train_data, train_task = "material", train_arch = "lstm",
              train_variant = "vanilla", train_mask = "all", train_out,
              train_metrics;
  int train_width = 32, train_layers = 1, train_stack = 2, train_skip = 5,
      train_epochs = 30, train_batch = 8;
  std::vector<int> train_fc;
  double train_lr = 3e-3, train_lambda = 1.0;
  std::uint64_t train_seed = 0;
  train_cmd->add_option("--data", train_data, ".dmtd dataset")->required();
  train_cmd->add_option("--task", train_task, "material|softness|texture");
  train_cmd->add_option("--arch", train_arch, "lstm|framestack");
  train_cmd->add_option("--variant", train_variant,
                        "vanilla|joint|softness_conditioned (texture)");
  train_cmd->add_option("--mask", train_mask,
                        "all|palm|finger1|finger2|finger3");
  train_cmd->add_option("--width", train_width, "lstm width");
  train_cmd->add_option("--layers", train_layers, "lstm layers");
  train_cmd->add_option("--fc", train_fc, "fully connected sizes");
  train_cmd->add_option("--stack", train_stack, "frame-stack stack-size");
  train_cmd->add_option("--skip", train_skip, "frame-stack frame-skip");
  train_cmd->add_option("--epochs", train_epochs, "training epochs");
  train_cmd->add_option("--batch", train_batch, "batch size");
  train_cmd->add_option("--lr", train_lr, "learning rate");
  train_cmd->add_option("--lambda", train_lambda, "composite texture weight");
  train_cmd->add_option("--seed", train_seed, "training seed");
  train_cmd->add_option("--out", train_out, "model bundle directory")->required();
  train_cmd->add_option("--metrics", train_metrics, "metrics json path");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained bundle");
  std::string eval_model, eval_data, eval_out;
  eval_cmd->add_option("--model", eval_model, "bundle directory")->required();
  eval_cmd->add_option("--data", eval_data, ".dmtd dataset")->required();
  eval_cmd->add_option("--out", eval_out, "report json path");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "per-component model comparison");
  std::string ablate_data, ablate_task = "softness", ablate_out = "ablation.txt";
  int ablate_epochs = 30, ablate_width = 32;
  std::uint64_t ablate_seed = 0;
  ablate->add_option("--data", ablate_data, ".dmtd dataset")->required();
  ablate->add_option("--task", ablate_task, "softness|texture|material");
  ablate->add_option("--epochs", ablate_epochs, "training epochs");
  ablate->add_option("--width", ablate_width, "lstm width");
  ablate->add_option("--seed", ablate_seed, "training seed");
  ablate->add_option("--out", ablate_out, "table output path");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "hyperparameter grid sweep");
  std::string sweep_data, sweep_task = "material", sweep_arch = "framestack",
              sweep_out = "sweep.txt";
  std::vector<int> sweep_stacks{2, 5, 8, 11}, sweep_skips{1, 2, 5, 8, 11},
      sweep_layers{2, 3, 4}, sweep_sizes{64, 128, 256, 512, 1024};
  int sweep_epochs = 20;
  std::uint64_t sweep_seed = 0;
  sweep_cmd->add_option("--data", sweep_data, ".dmtd dataset")->required();
  sweep_cmd->add_option("--task", sweep_task, "task to sweep");
  sweep_cmd->add_option("--arch", sweep_arch, "lstm|framestack");
  sweep_cmd->add_option("--stacks", sweep_stacks, "stack-size grid");
  sweep_cmd->add_option("--skips", sweep_skips, "frame-skip grid");
  sweep_cmd->add_option("--layers", sweep_layers, "layer-count grid");
  sweep_cmd->add_option("--sizes", sweep_sizes, "layer-size grid");
  sweep_cmd->add_option("--epochs", sweep_epochs, "epochs per grid point");
  sweep_cmd->add_option("--seed", sweep_seed, "shared training seed");
  sweep_cmd->add_option("--out", sweep_out, "table output path");

  // binsort
  auto* binsort_cmd = app.add_subcommand("binsort", "closed-loop bin sorting");
  std::string bs_softness, bs_texture, bs_out = "transcript.txt";
  int bs_grasps = 20;
  std::uint64_t bs_seed = 0;
  double bs_noise = skin::kDefaultNoiseSigma;
  bool bs_prototype = false;
  binsort_cmd->add_option("--softness-model", bs_softness, "softness bundle dir")
      ->required();
  binsort_cmd->add_option("--texture-model", bs_texture, "texture bundle dir")
      ->required();
  binsort_cmd->add_option("--grasps", bs_grasps, "successful grasps to collect");
  binsort_cmd->add_option("--seed", bs_seed, "session seed");
  binsort_cmd->add_option("--noise", bs_noise, "sensor noise sigma (uT)");
  binsort_cmd->add_flag("--prototype", bs_prototype,
                        "strongly separable class-center objects");
  binsort_cmd->add_option("--out", bs_out, "transcript path");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck",
                                       "finite-difference gradient audit");
  std::uint64_t gc_seed = 7;
  gradcheck->add_option("--seed", gc_seed, "audit seed");

  // report
  auto* report_cmd = app.add_subcommand("report", "render metrics tables");
  std::vector<std::string> report_files;
  std::string report_out;
  report_cmd->add_option("--metrics", report_files, "metrics json files")
      ->required();
  report_cmd->add_option("--out", report_out, "table output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*layout) return cmd_layout(layout_out, layout_check);
    if (*serve)
      return cmd_stream_serve(serve_rate, serve_port, serve_frames,
                              serve_object, serve_seed, serve_noise);
    if (*record)
      return cmd_stream_record(record_rate, record_frames, record_out,
                               record_object, record_seed, record_noise);
    if (*collect)
      return cmd_collect(collect_task, collect_rate, collect_seed,
                         collect_noise, per_material, train_per_cell,
                         val_per_cell, per_train_object, per_val_object,
                         collect_out);
    if (*train_cmd) {
      const auto opt = options_from(train_arch, train_variant, train_mask,
                                    train_width, train_layers, train_fc,
                                    train_stack, train_skip, train_epochs,
                                    train_batch, train_lr, train_lambda,
                                    train_seed);
      const json echo = {{"command", "train"},       {"data", train_data},
                         {"task", train_task},       {"arch", train_arch},
                         {"variant", train_variant}, {"mask", train_mask},
                         {"width", train_width},     {"layers", train_layers},
                         {"stack", train_stack},     {"skip", train_skip},
                         {"epochs", train_epochs},   {"batch", train_batch},
                         {"lr", train_lr},           {"lambda", train_lambda},
                         {"seed", train_seed},       {"out", train_out}};
      return cmd_train(train_data, train_task, opt, train_out, train_metrics,
                       echo);
    }
    if (*eval_cmd) return cmd_eval(eval_model, eval_data, eval_out);
    if (*ablate) {
      percept::TrainOptions opt;
      opt.epochs = ablate_epochs;
      opt.lstm_width = ablate_width;
      opt.seed = ablate_seed;
      const json echo = {{"command", "ablate"},
                         {"data", ablate_data},
                         {"task", ablate_task},
                         {"epochs", ablate_epochs},
                         {"width", ablate_width},
                         {"seed", ablate_seed},
                         {"out", ablate_out}};
      return cmd_ablate(ablate_data, ablate_task, opt, ablate_out, echo);
    }
    if (*sweep_cmd) {
      percept::TrainOptions base;
      base.epochs = sweep_epochs;
      base.seed = sweep_seed;
      const json echo = {{"command", "sweep"},   {"data", sweep_data},
                         {"task", sweep_task},   {"arch", sweep_arch},
                         {"stacks", sweep_stacks}, {"skips", sweep_skips},
                         {"layers", sweep_layers}, {"sizes", sweep_sizes},
                         {"epochs", sweep_epochs}, {"seed", sweep_seed},
                         {"out", sweep_out}};
      return cmd_sweep(sweep_data, sweep_task, base, sweep_arch, sweep_stacks,
                       sweep_skips, sweep_layers, sweep_sizes, sweep_out, echo);
    }
    if (*binsort_cmd) {
      const json echo = {{"command", "binsort"},
                         {"softness_model", bs_softness},
                         {"texture_model", bs_texture},
                         {"grasps", bs_grasps},
                         {"seed", bs_seed},
                         {"noise", bs_noise},
                         {"prototype", bs_prototype},
                         {"out", bs_out}};
      return cmd_binsort(bs_softness, bs_texture, bs_grasps, bs_seed, bs_noise,
                         bs_prototype, bs_out, echo);
    }
    if (*gradcheck) return cmd_gradcheck(gc_seed);
    if (*report_cmd) return cmd_report(report_files, report_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
