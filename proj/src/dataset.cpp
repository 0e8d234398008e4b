#include "dmanus/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "dmanus/binio.hpp"
#include "dmanus/rng.hpp"
#include "dmanus/wire.hpp"

namespace dmanus::dataset {

namespace {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                          std::uint64_t b = 0) {
  Rng rng(base ^ (0x9E3779B97F4A7C15ULL * (a + 1)) ^
          (0xC2B2AE3D27D4EB4FULL * (b + 1)));
  return rng.next_u64();
}

int worker_count() {
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp(hw, 1u, 8u));
}

}  // namespace

const char* task_name(Task t) {
  switch (t) {
    case Task::Material: return "material";
    case Task::Softness: return "softness";
    case Task::Texture: return "texture";
    case Task::SoftnessTexture: return "softness_texture";
  }
  return "?";
}

Task task_from_name(const std::string& name) {
  if (name == "material") return Task::Material;
  if (name == "softness") return Task::Softness;
  if (name == "texture") return Task::Texture;
  if (name == "softness_texture") return Task::SoftnessTexture;
  throw ConfigError("unknown task: " + name);
}

skin::FluxFrame compute_baseline(std::span<const skin::FluxFrame> frames) {
  if (frames.size() != kBaselineFrames)
    throw WrongCount("baseline needs exactly 100 frames, got " +
                     std::to_string(frames.size()));
  std::array<double, skin::kFluxDim> sum{};
  for (const auto& f : frames)
    for (int i = 0; i < skin::kFluxDim; ++i) sum[i] += f.values[i];
  skin::FluxFrame out;
  out.seq = frames.back().seq;
  out.timestamp_ns = frames.back().timestamp_ns;
  for (int i = 0; i < skin::kFluxDim; ++i)
    out.values[i] = skin::wire_quantize(sum[i] / kBaselineFrames);
  return out;
}

Trajectory subtract_baseline(const Trajectory& traj) {
  // Wire-quantized inputs differ by exactly representable doubles, so the
  // subtraction is lossless and adding the baseline back restores the
  // original frames bit for bit.
  Trajectory out = traj;
  for (auto& f : out.frames)
    for (int i = 0; i < skin::kFluxDim; ++i)
      f.values[i] -= traj.baseline.values[i];
  return out;
}

SimSetup SimSetup::standard(double noise_sigma, double magnetization_scale) {
  SimSetup sim;
  sim.layout = skin::default_layout();
  sim.grid = skin::default_grid(sim.layout, magnetization_scale);
  sim.rest_accum = skin::baseline_accum(sim.layout, sim.grid);
  sim.noise_sigma = noise_sigma;
  return sim;
}

Trajectory record_trajectory(const SimSetup& sim, const hand::SynthObject& obj,
                             const hand::BabbleConfig& cfg, const Label& label,
                             hand::ContactScenario scenario,
                             bool object_present) {
  cfg.validate();
  Trajectory traj;
  traj.label = label;
  traj.object_name = obj.name;
  traj.rate_hz = cfg.rate_hz;
  traj.seed = cfg.seed;

  hand::ContactConfig contact;
  contact.scenario = scenario;
  contact.rub_seed = cfg.seed;
  if (!object_present) contact.press_gain = 0.0;

  // Rest pose during the baseline window: babble script bias, no motion.
  hand::BabbleConfig rest_cfg = cfg;
  rest_cfg.amplitude = 0.0;
  rest_cfg.noise_sigma = 0.0;
  const hand::JointState rest = hand::babble_policy(rest_cfg, 0);
  const skin::DeformationField rest_deform =
      hand::contact_model(obj, rest, 0.0, sim.layout, sim.grid, contact);
  const skin::FluxFrame rest_frame =
      skin::skin_response(sim.layout, sim.grid, rest_deform, sim.rest_accum);

  std::vector<skin::FluxFrame> baseline_window(kBaselineFrames);
  for (int k = 0; k < kBaselineFrames; ++k) {
    skin::FluxFrame f = skin::add_sensor_noise(
        rest_frame, sim.noise_sigma, derive_seed(cfg.seed, 0xB5, k));
    f.seq = static_cast<std::uint32_t>(k);
    f.timestamp_ns = 0;
    baseline_window[k] = f;
  }
  traj.baseline = compute_baseline(baseline_window);

  const int n = cfg.frame_count();
  const double dt = 1.0 / cfg.rate_hz;
  traj.frames.reserve(n);
  traj.joints.reserve(n);

  hand::JointState joints = rest;
  for (int t = 0; t < n; ++t) {
    const hand::JointState target = hand::babble_policy(cfg, t);
    joints = hand::simulate_step(joints, target, dt);
    const skin::DeformationField deform = hand::contact_model(
        obj, joints, t * dt, sim.layout, sim.grid, contact);
    skin::FluxFrame frame =
        skin::skin_response(sim.layout, sim.grid, deform, sim.rest_accum);
    frame = skin::add_sensor_noise(frame, sim.noise_sigma,
                                   derive_seed(cfg.seed, 0xF7, t));
    frame.seq = static_cast<std::uint32_t>(t);
    frame.timestamp_ns = static_cast<std::uint64_t>(t) * 1000000000ULL /
                         static_cast<std::uint64_t>(cfg.rate_hz);
    traj.frames.push_back(frame);
    traj.joints.push_back(joints);
  }
  return traj;
}

std::vector<int> DatasetManifest::train_ids() const {
  std::vector<int> ids;
  for (const auto& [obj, v] : train) ids.insert(ids.end(), v.begin(), v.end());
  return ids;
}

std::vector<int> DatasetManifest::val_ids() const {
  std::vector<int> ids;
  for (const auto& [obj, v] : val) ids.insert(ids.end(), v.begin(), v.end());
  return ids;
}

DatasetManifest build_manifest(Task task,
                               const std::vector<ObjectTrajectories>& objects,
                               int train_per_object, int val_per_object,
                               SplitRule rule, std::uint64_t seed) {
  DatasetManifest m;
  m.task = task;
  if (rule == SplitRule::WithinObject) {
    for (std::size_t oi = 0; oi < objects.size(); ++oi) {
      const auto& obj = objects[oi];
      const int total = static_cast<int>(obj.trajectory_ids.size());
      if (total != train_per_object + val_per_object)
        throw SplitViolation("object " + obj.object + " has " +
                             std::to_string(total) + " trajectories, expected " +
                             std::to_string(train_per_object + val_per_object));
      std::vector<int> ids = obj.trajectory_ids;
      // seeded Fisher-Yates so the split is deterministic
      Rng rng(derive_seed(seed, 0x51, oi));
      for (int i = total - 1; i > 0; --i)
        std::swap(ids[i], ids[rng.below(static_cast<std::uint64_t>(i) + 1)]);
      std::vector<int> tr(ids.begin(), ids.begin() + train_per_object);
      std::vector<int> va(ids.begin() + train_per_object, ids.end());
      std::sort(tr.begin(), tr.end());
      std::sort(va.begin(), va.end());
      m.train.emplace_back(obj.object, std::move(tr));
      if (!va.empty()) m.val.emplace_back(obj.object, std::move(va));
    }
  } else {
    for (const auto& obj : objects) {
      const int total = static_cast<int>(obj.trajectory_ids.size());
      if (obj.holdout) {
        if (total != val_per_object)
          throw SplitViolation("holdout object " + obj.object + " needs " +
                               std::to_string(val_per_object) + " trajectories");
        m.val.emplace_back(obj.object, obj.trajectory_ids);
      } else {
        if (total != train_per_object)
          throw SplitViolation("train object " + obj.object + " needs " +
                               std::to_string(train_per_object) + " trajectories");
        m.train.emplace_back(obj.object, obj.trajectory_ids);
      }
    }
    for (const auto& [to, _] : m.train)
      for (const auto& [vo, __] : m.val)
        if (to == vo)
          throw SplitViolation("object " + to + " in both train and val");
  }
  const auto tr = m.train_ids();
  auto va = m.val_ids();
  std::vector<int> all = tr;
  all.insert(all.end(), va.begin(), va.end());
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end())
    throw SplitViolation("trajectory assigned to both train and val");
  if (va.empty()) m.warnings.push_back("degenerate split: empty validation set");
  return m;
}

std::vector<hand::SynthObject> material_catalog() {
  // Six identical balls with distinct surface treatments.
  std::vector<hand::SynthObject> objects;
  auto add = [&](const char* name, hand::Softness s, hand::Texture t, double c,
                 double amp, double wl, std::uint64_t seed) {
    hand::SynthObject o;
    o.name = name;
    o.softness = s;
    o.texture = t;
    o.radius = 35.0;
    o.compliance = c;
    o.texture_amplitude = amp;
    o.texture_wavelength = wl;
    o.seed = seed;
    objects.push_back(o);
  };
  add("uncovered", hand::Softness::Hard, hand::Texture::Smooth, 0.03, 0.02, 20.0, 11);
  add("bubble_small", hand::Softness::Medium, hand::Texture::Rough, 0.14, 0.36, 7.0, 12);
  add("bubble_large", hand::Softness::Medium, hand::Texture::Medium, 0.18, 0.40, 15.0, 13);
  add("cardboard", hand::Softness::Hard, hand::Texture::Medium, 0.06, 0.30, 11.0, 14);
  add("sponge", hand::Softness::Soft, hand::Texture::Smooth, 0.38, 0.10, 18.0, 15);
  add("combo", hand::Softness::Soft, hand::Texture::Rough, 0.30, 0.42, 9.0, 16);
  return objects;
}

namespace {

struct Range {
  double lo, hi;
  double inner(double u) const { return lo + (0.2 + 0.6 * u) * (hi - lo); }
  double outer(double u, bool high_side) const {
    return high_side ? hi - 0.12 * u * (hi - lo) : lo + 0.12 * u * (hi - lo);
  }
};

constexpr Range kCompliance[3] = {{0.02, 0.08}, {0.12, 0.22}, {0.30, 0.45}};
constexpr Range kAmplitude[3] = {{0.01, 0.05}, {0.12, 0.22}, {0.32, 0.50}};
// Wavelength depends on the softness cell: compliant objects stretch their
// surface pattern, so a soft rough object overlaps a hard medium one. This
// is what makes texture gradation inconsistent across softness categories.
constexpr Range kWavelength[3][3] = {
    // smooth        medium        rough
    {{16.0, 21.0}, {10.0, 13.0}, {5.5, 7.5}},   // hard
    {{19.0, 24.0}, {12.0, 16.0}, {7.0, 9.5}},   // medium
    {{22.0, 28.0}, {15.0, 19.0}, {9.0, 12.0}},  // soft
};
constexpr Range kRadius = {25.0, 45.0};

}  // namespace

std::vector<hand::SynthObject> softtex_catalog(int train_per_cell,
                                               int val_per_cell,
                                               std::uint64_t seed) {
  std::vector<hand::SynthObject> objects;
  for (int pass = 0; pass < 2; ++pass) {
    const bool holdout = pass == 1;
    const int per_cell = holdout ? val_per_cell : train_per_cell;
    for (int s = 0; s < 3; ++s) {
      for (int t = 0; t < 3; ++t) {
        for (int k = 0; k < per_cell; ++k) {
          Rng rng(derive_seed(seed, 0xC0 + pass, (s * 3 + t) * 64 + k));
          hand::SynthObject o;
          std::ostringstream name;
          name << (holdout ? "val" : "train") << "_s" << s << "t" << t << "_" << k;
          o.name = name.str();
          o.softness = static_cast<hand::Softness>(s);
          o.texture = static_cast<hand::Texture>(t);
          if (holdout) {
            // parameters outside the convex hull of the training draws
            o.compliance = kCompliance[s].outer(rng.uniform(), rng.below(2) == 1);
            o.texture_amplitude = kAmplitude[t].outer(rng.uniform(), rng.below(2) == 1);
            o.texture_wavelength = kWavelength[s][t].outer(rng.uniform(), rng.below(2) == 1);
          } else {
            o.compliance = kCompliance[s].inner(rng.uniform());
            o.texture_amplitude = kAmplitude[t].inner(rng.uniform());
            o.texture_wavelength = kWavelength[s][t].inner(rng.uniform());
          }
          o.radius = kRadius.inner(rng.uniform());
          o.seed = rng.next_u64();
          objects.push_back(std::move(o));
        }
      }
    }
  }
  return objects;
}

namespace {

// Record trajectories for a list of (object index, per-object count) jobs in
// parallel; results land in slot order so thread count never changes bytes.
std::vector<Trajectory> record_all(const SimSetup& sim,
                                   const std::vector<hand::SynthObject>& objects,
                                   const std::vector<int>& counts,
                                   const CollectConfig& cfg,
                                   std::vector<ObjectTrajectories>& layout_out) {
  struct Job {
    int object_index;
    int traj_index;
    int slot;
  };
  std::vector<Job> jobs;
  int slot = 0;
  for (std::size_t oi = 0; oi < objects.size(); ++oi) {
    ObjectTrajectories ot;
    ot.object = objects[oi].name;
    for (int k = 0; k < counts[oi]; ++k) {
      jobs.push_back({static_cast<int>(oi), k, slot});
      ot.trajectory_ids.push_back(slot);
      ++slot;
    }
    layout_out.push_back(std::move(ot));
  }

  std::vector<Trajectory> out(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const Job& job = jobs[j];
      const auto& obj = objects[job.object_index];
      hand::BabbleConfig bc;
      bc.rate_hz = cfg.rate_hz;
      bc.seed = derive_seed(cfg.seed, job.object_index, job.traj_index);
      Label label;
      label.material =
          cfg.task == Task::Material ? job.object_index : -1;
      label.softness = static_cast<int>(obj.softness);
      label.texture = static_cast<int>(obj.texture);
      out[job.slot] = record_trajectory(sim, obj, bc, label);
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < worker_count(); ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace

Dataset collect(const CollectConfig& cfg) {
  const SimSetup sim = SimSetup::standard(cfg.noise_sigma);
  Dataset ds;
  ds.layout_hash = [] {
    const auto text = skin::serialize_layout(skin::default_layout());
    return wire::crc32({reinterpret_cast<const std::uint8_t*>(text.data()),
                        text.size()});
  }();

  std::vector<ObjectTrajectories> per_object;
  if (cfg.task == Task::Material) {
    ds.objects = material_catalog();
    std::vector<int> counts(ds.objects.size(), cfg.per_material);
    ds.trajectories = record_all(sim, ds.objects, counts, cfg, per_object);
    const int val = cfg.per_material == 35 ? 5 : cfg.per_material / 7;
    ds.manifest = build_manifest(cfg.task, per_object, cfg.per_material - val,
                                 val, SplitRule::WithinObject, cfg.seed);
  } else {
    ds.objects = softtex_catalog(cfg.train_objects_per_cell,
                                 cfg.val_objects_per_cell, cfg.seed);
    std::vector<int> counts;
    for (const auto& o : ds.objects)
      counts.push_back(o.name.rfind("val", 0) == 0 ? cfg.per_val_object
                                                   : cfg.per_train_object);
    ds.trajectories = record_all(sim, ds.objects, counts, cfg, per_object);
    for (auto& ot : per_object) ot.holdout = ot.object.rfind("val", 0) == 0;
    ds.manifest = build_manifest(cfg.task, per_object, cfg.per_train_object,
                                 cfg.per_val_object, SplitRule::ByObject,
                                 cfg.seed);
  }
  return ds;
}

namespace {

constexpr char kDatasetMagic[4] = {'D', 'M', 'T', 'D'};

void write_frame(std::ostream& out, const skin::FluxFrame& f) {
  const auto bytes = wire::encode_frame(f);
  binio::write_bytes(out, bytes.data(), bytes.size());
}

skin::FluxFrame read_frame(std::istream& in) {
  std::vector<std::uint8_t> bytes(wire::kFrameSize);
  binio::read_bytes(in, bytes.data(), bytes.size());
  return wire::decode_frame(bytes);
}

void write_manifest_side(std::ostream& out,
                         const std::vector<std::pair<std::string, std::vector<int>>>& side) {
  binio::write_u32(out, static_cast<std::uint32_t>(side.size()));
  for (const auto& [name, ids] : side) {
    binio::write_str(out, name);
    binio::write_u32(out, static_cast<std::uint32_t>(ids.size()));
    for (int id : ids) binio::write_u32(out, static_cast<std::uint32_t>(id));
  }
}

void read_manifest_side(std::istream& in,
                        std::vector<std::pair<std::string, std::vector<int>>>& side) {
  const std::uint32_t n = binio::read_u32(in);
  side.resize(n);
  for (auto& [name, ids] : side) {
    name = binio::read_str(in);
    ids.resize(binio::read_u32(in));
    for (auto& id : ids) id = static_cast<int>(binio::read_u32(in));
  }
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    binio::write_bytes(out, kDatasetMagic, 4);
    binio::write_u32(out, kDatasetVersion);
    binio::write_u32(out, ds.layout_hash);

    binio::write_u8(out, static_cast<std::uint8_t>(ds.manifest.task));
    write_manifest_side(out, ds.manifest.train);
    write_manifest_side(out, ds.manifest.val);
    binio::write_u32(out, static_cast<std::uint32_t>(ds.manifest.warnings.size()));
    for (const auto& w : ds.manifest.warnings) binio::write_str(out, w);

    binio::write_u32(out, static_cast<std::uint32_t>(ds.objects.size()));
    for (const auto& o : ds.objects) {
      binio::write_str(out, o.name);
      binio::write_u8(out, static_cast<std::uint8_t>(o.softness));
      binio::write_u8(out, static_cast<std::uint8_t>(o.texture));
      binio::write_f64(out, o.radius);
      binio::write_f64(out, o.compliance);
      binio::write_f64(out, o.texture_amplitude);
      binio::write_f64(out, o.texture_wavelength);
      binio::write_u64(out, o.seed);
    }

    binio::write_u32(out, static_cast<std::uint32_t>(ds.trajectories.size()));
    for (const auto& t : ds.trajectories) {
      binio::write_str(out, t.object_name);
      binio::write_u32(out, static_cast<std::uint32_t>(t.label.material));
      binio::write_u32(out, static_cast<std::uint32_t>(t.label.softness));
      binio::write_u32(out, static_cast<std::uint32_t>(t.label.texture));
      binio::write_u32(out, static_cast<std::uint32_t>(t.rate_hz));
      binio::write_u64(out, t.seed);
      binio::write_u32(out, static_cast<std::uint32_t>(t.frames.size()));
      binio::write_u32(out, static_cast<std::uint32_t>(t.joints.size()));
      write_frame(out, t.baseline);
      for (const auto& f : t.frames) write_frame(out, f);
      for (const auto& j : t.joints) {
        for (double a : j.angles) binio::write_f64(out, a);
        for (double v : j.velocities) binio::write_f64(out, v);
      }
    }
    if (!out) throw IoError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot rename " + tmp + " to " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  binio::read_bytes(in, magic, 4);
  if (std::memcmp(magic, kDatasetMagic, 4) != 0)
    throw FormatError("bad dataset magic");
  const std::uint32_t version = binio::read_u32(in);
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version");

  Dataset ds;
  ds.layout_hash = binio::read_u32(in);
  ds.manifest.task = static_cast<Task>(binio::read_u8(in));
  read_manifest_side(in, ds.manifest.train);
  read_manifest_side(in, ds.manifest.val);
  ds.manifest.warnings.resize(binio::read_u32(in));
  for (auto& w : ds.manifest.warnings) w = binio::read_str(in);

  ds.objects.resize(binio::read_u32(in));
  for (auto& o : ds.objects) {
    o.name = binio::read_str(in);
    o.softness = static_cast<hand::Softness>(binio::read_u8(in));
    o.texture = static_cast<hand::Texture>(binio::read_u8(in));
    o.radius = binio::read_f64(in);
    o.compliance = binio::read_f64(in);
    o.texture_amplitude = binio::read_f64(in);
    o.texture_wavelength = binio::read_f64(in);
    o.seed = binio::read_u64(in);
  }

  ds.trajectories.resize(binio::read_u32(in));
  for (auto& t : ds.trajectories) {
    t.object_name = binio::read_str(in);
    t.label.material = static_cast<int>(binio::read_u32(in));
    t.label.softness = static_cast<int>(binio::read_u32(in));
    t.label.texture = static_cast<int>(binio::read_u32(in));
    t.rate_hz = static_cast<int>(binio::read_u32(in));
    t.seed = binio::read_u64(in);
    const std::uint32_t n_frames = binio::read_u32(in);
    const std::uint32_t n_joints = binio::read_u32(in);
    t.baseline = read_frame(in);
    t.frames.resize(n_frames);
    for (auto& f : t.frames) f = read_frame(in);
    t.joints.resize(n_joints);
    for (auto& j : t.joints) {
      for (double& a : j.angles) a = binio::read_f64(in);
      for (double& v : j.velocities) v = binio::read_f64(in);
    }
  }
  return ds;
}

}  // namespace dmanus::dataset
