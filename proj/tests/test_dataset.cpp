#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dmanus/dataset.hpp"
#include "dmanus/rng.hpp"

using namespace dmanus;
using namespace dmanus::dataset;

namespace {

skin::FluxFrame constant_frame(double v) {
  skin::FluxFrame f;
  f.values.fill(v);
  return f;
}

SimSetup quiet_sim() { return SimSetup::standard(/*noise_sigma=*/0.5); }

hand::SynthObject some_object() {
  hand::SynthObject o;
  o.name = "ball";
  o.softness = hand::Softness::Medium;
  o.texture = hand::Texture::Rough;
  o.radius = 35.0;
  o.compliance = 0.17;
  o.texture_amplitude = 0.4;
  o.texture_wavelength = 8.0;
  o.seed = 3;
  return o;
}

std::string temp_path(const char* name) {
  return std::string(DMANUS_BINARY_DIR) + "/" + name;
}

}  // namespace

TEST_CASE("baseline of 100 identical frames is that frame") {
  std::vector<skin::FluxFrame> frames(100, constant_frame(3.25f));
  frames.back().seq = 99;
  frames.back().timestamp_ns = 1234;
  const skin::FluxFrame base = compute_baseline(frames);
  for (double v : base.values) CHECK(v == 3.25);
  CHECK(base.seq == 99);
  CHECK(base.timestamp_ns == 1234);
}

TEST_CASE("baseline of +v/-v halves is zero") {
  std::vector<skin::FluxFrame> frames;
  for (int i = 0; i < 50; ++i) frames.push_back(constant_frame(7.5f));
  for (int i = 0; i < 50; ++i) frames.push_back(constant_frame(-7.5f));
  const skin::FluxFrame base = compute_baseline(frames);
  for (double v : base.values) CHECK(v == 0.0);
}

TEST_CASE("baseline rejects anything but exactly 100 frames") {
  std::vector<skin::FluxFrame> frames(99);
  CHECK_THROWS_AS(compute_baseline(frames), WrongCount);
  frames.resize(101);
  CHECK_THROWS_AS(compute_baseline(frames), WrongCount);
}

TEST_CASE("baseline matches a two-pass mean oracle within one ulp") {
  Rng rng(404);
  std::vector<skin::FluxFrame> frames(100);
  for (auto& f : frames)
    for (auto& v : f.values) v = skin::wire_quantize(rng.uniform(-300.0, 300.0));
  const skin::FluxFrame base = compute_baseline(frames);

  // independent two-pass mean: sum, then correction pass around the mean
  for (int i = 0; i < skin::kFluxDim; ++i) {
    double sum = 0.0;
    for (const auto& f : frames) sum += f.values[i];
    const double first = sum / 100.0;
    double corr = 0.0;
    for (const auto& f : frames) corr += f.values[i] - first;
    const float oracle = static_cast<float>(first + corr / 100.0);
    const float got = static_cast<float>(base.values[i]);
    CHECK(std::abs(std::nextafter(got, oracle) - oracle) <= 0.0f);
  }
}

TEST_CASE("subtract_baseline: frames equal to baseline become zero") {
  Trajectory traj;
  traj.baseline = constant_frame(11.0f);
  traj.frames.assign(5, constant_frame(11.0f));
  const Trajectory out = subtract_baseline(traj);
  for (const auto& f : out.frames)
    for (double v : f.values) CHECK(v == 0.0);
}

TEST_CASE("subtract_baseline with a zero baseline is the identity") {
  Trajectory traj;
  traj.baseline = constant_frame(0.0f);
  traj.frames.assign(3, constant_frame(-4.5f));
  const Trajectory out = subtract_baseline(traj);
  for (const auto& f : out.frames)
    for (double v : f.values) CHECK(v == -4.5);
}

TEST_CASE("recorded trajectories restore bit-exactly after subtract + add") {
  const SimSetup sim = quiet_sim();
  hand::BabbleConfig cfg;
  cfg.seed = 5;
  cfg.duration_s = 1.0;
  const Trajectory traj = record_trajectory(sim, some_object(), cfg, Label{});
  const Trajectory sub = subtract_baseline(traj);
  for (std::size_t k = 0; k < traj.frames.size(); ++k)
    for (int i = 0; i < skin::kFluxDim; ++i) {
      const double back = sub.frames[k].values[i] + traj.baseline.values[i];
      CHECK(back == traj.frames[k].values[i]);
    }
}

TEST_CASE("recording produces duration x rate frames") {
  const SimSetup sim = quiet_sim();
  hand::BabbleConfig cfg;
  cfg.seed = 9;
  Label label;
  label.softness = 1;
  const Trajectory t30 = record_trajectory(sim, some_object(), cfg, label);
  CHECK(t30.frames.size() == 300);
  CHECK(t30.joints.size() == 300);
  CHECK(t30.label.softness == 1);
  CHECK(t30.frames.front().seq == 0);
  CHECK(t30.frames.back().seq == 299);

  cfg.rate_hz = 10;
  const Trajectory t10 = record_trajectory(sim, some_object(), cfg, label);
  CHECK(t10.frames.size() == 100);
}

TEST_CASE("recording is deterministic in (seed, object)") {
  const SimSetup sim = quiet_sim();
  hand::BabbleConfig cfg;
  cfg.seed = 31;
  cfg.duration_s = 2.0;
  const Trajectory a = record_trajectory(sim, some_object(), cfg, Label{});
  const Trajectory b = record_trajectory(sim, some_object(), cfg, Label{});
  REQUIRE(a.frames.size() == b.frames.size());
  CHECK(a.baseline == b.baseline);
  for (std::size_t i = 0; i < a.frames.size(); ++i)
    CHECK(a.frames[i] == b.frames[i]);
}

TEST_CASE("baseline neutrality: no contact leaves only sensor noise") {
  SimSetup sim = SimSetup::standard(2.0);
  hand::BabbleConfig cfg;
  cfg.seed = 12;
  const Trajectory traj =
      record_trajectory(sim, some_object(), cfg, Label{},
                        hand::ContactScenario::PalmUp, /*object_present=*/false);
  const Trajectory sub = subtract_baseline(traj);
  long ok = 0, total = 0;
  for (const auto& f : sub.frames)
    for (float v : f.values) {
      ok += std::abs(v) <= 5.0 * sim.noise_sigma;
      ++total;
    }
  CHECK(static_cast<double>(ok) / total >= 0.99);
}

TEST_CASE("manifest: material task splits 30/5 per class") {
  std::vector<ObjectTrajectories> objects;
  int next = 0;
  for (int c = 0; c < 6; ++c) {
    ObjectTrajectories ot;
    ot.object = "material" + std::to_string(c);
    for (int k = 0; k < 35; ++k) ot.trajectory_ids.push_back(next++);
    objects.push_back(ot);
  }
  const DatasetManifest m =
      build_manifest(Task::Material, objects, 30, 5, SplitRule::WithinObject, 7);
  CHECK(m.train_ids().size() == 180);
  CHECK(m.val_ids().size() == 30);
  CHECK(m.warnings.empty());

  // conservation and disjointness
  auto tr = m.train_ids();
  auto va = m.val_ids();
  std::vector<int> all = tr;
  all.insert(all.end(), va.begin(), va.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 210; ++i) CHECK(all[i] == i);
}

TEST_CASE("manifest: by-object holdout keeps objects disjoint") {
  std::vector<ObjectTrajectories> objects;
  int next = 0;
  for (int i = 0; i < 20; ++i) {
    ObjectTrajectories ot;
    ot.object = "train" + std::to_string(i);
    for (int k = 0; k < 15; ++k) ot.trajectory_ids.push_back(next++);
    objects.push_back(ot);
  }
  for (int i = 0; i < 9; ++i) {
    ObjectTrajectories ot;
    ot.object = "val" + std::to_string(i);
    ot.holdout = true;
    for (int k = 0; k < 5; ++k) ot.trajectory_ids.push_back(next++);
    objects.push_back(ot);
  }
  const DatasetManifest m =
      build_manifest(Task::Softness, objects, 15, 5, SplitRule::ByObject, 0);
  CHECK(m.train_ids().size() == 300);
  CHECK(m.val_ids().size() == 45);
  for (const auto& [to, _] : m.train)
    for (const auto& [vo, __] : m.val) CHECK(to != vo);
}

TEST_CASE("manifest: degenerate all-train split is flagged") {
  std::vector<ObjectTrajectories> objects(1);
  objects[0].object = "only";
  for (int k = 0; k < 12; ++k) objects[0].trajectory_ids.push_back(k);
  const DatasetManifest m =
      build_manifest(Task::Material, objects, 12, 0, SplitRule::WithinObject, 1);
  CHECK(m.val_ids().empty());
  REQUIRE(m.warnings.size() == 1);
  CHECK(m.warnings[0].find("empty validation") != std::string::npos);
}

TEST_CASE("manifest: count violations are rejected") {
  std::vector<ObjectTrajectories> objects(1);
  objects[0].object = "o";
  objects[0].trajectory_ids = {0, 1, 2};
  CHECK_THROWS_AS(
      build_manifest(Task::Material, objects, 30, 5, SplitRule::WithinObject, 0),
      SplitViolation);
  CHECK_THROWS_AS(
      build_manifest(Task::Softness, objects, 15, 5, SplitRule::ByObject, 0),
      SplitViolation);
}

TEST_CASE("softness/texture catalog: class parameters are ordered and val sits outside the train hull") {
  const auto objects = softtex_catalog(2, 1, 42);
  CHECK(objects.size() == 2 * 9 + 9);
  double max_compliance[3] = {0, 0, 0};
  double min_compliance[3] = {1e9, 1e9, 1e9};
  for (const auto& o : objects) {
    const int s = static_cast<int>(o.softness);
    max_compliance[s] = std::max(max_compliance[s], o.compliance);
    min_compliance[s] = std::min(min_compliance[s], o.compliance);
  }
  // compliance strictly increases hard -> medium -> soft, across all draws
  CHECK(max_compliance[0] < min_compliance[1]);
  CHECK(max_compliance[1] < min_compliance[2]);

  // within a softness class, texture amplitude strictly increases
  for (int s = 0; s < 3; ++s) {
    double max_amp[3] = {0, 0, 0};
    double min_amp[3] = {1e9, 1e9, 1e9};
    for (const auto& o : objects) {
      if (static_cast<int>(o.softness) != s) continue;
      const int t = static_cast<int>(o.texture);
      max_amp[t] = std::max(max_amp[t], o.texture_amplitude);
      min_amp[t] = std::min(min_amp[t], o.texture_amplitude);
    }
    CHECK(max_amp[0] < min_amp[1]);
    CHECK(max_amp[1] < min_amp[2]);
  }

  // every holdout parameter lies outside the train draws' hull
  for (int s = 0; s < 3; ++s) {
    double train_lo = 1e9, train_hi = 0;
    for (const auto& o : objects)
      if (static_cast<int>(o.softness) == s && o.name.rfind("train", 0) == 0) {
        train_lo = std::min(train_lo, o.compliance);
        train_hi = std::max(train_hi, o.compliance);
      }
    for (const auto& o : objects)
      if (static_cast<int>(o.softness) == s && o.name.rfind("val", 0) == 0)
        CHECK((o.compliance < train_lo || o.compliance > train_hi));
  }
}

TEST_CASE("dataset container round trip is bit-exact") {
  const SimSetup sim = quiet_sim();
  Dataset ds;
  ds.layout_hash = 0xABCD1234;
  ds.manifest.task = Task::Texture;
  ds.manifest.train = {{"a", {0}}};
  ds.manifest.val = {{"b", {1}}};
  ds.objects = {some_object()};
  hand::BabbleConfig cfg;
  cfg.seed = 77;
  cfg.duration_s = 1.0;
  Label label;
  label.softness = 2;
  label.texture = 0;
  ds.trajectories.push_back(record_trajectory(sim, some_object(), cfg, label));
  cfg.seed = 78;
  ds.trajectories.push_back(record_trajectory(sim, some_object(), cfg, label));

  const std::string path = temp_path("roundtrip.dmtd");
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);

  CHECK(back.layout_hash == ds.layout_hash);
  CHECK(back.manifest.task == ds.manifest.task);
  CHECK(back.manifest.train == ds.manifest.train);
  CHECK(back.manifest.val == ds.manifest.val);
  REQUIRE(back.objects.size() == 1);
  CHECK(back.objects[0].compliance == ds.objects[0].compliance);
  REQUIRE(back.trajectories.size() == 2);
  for (int k = 0; k < 2; ++k) {
    const auto& a = ds.trajectories[k];
    const auto& b = back.trajectories[k];
    CHECK(a.baseline == b.baseline);
    CHECK(a.label == b.label);
    CHECK(a.object_name == b.object_name);
    CHECK(a.rate_hz == b.rate_hz);
    CHECK(a.seed == b.seed);
    REQUIRE(a.frames.size() == b.frames.size());
    for (std::size_t i = 0; i < a.frames.size(); ++i)
      CHECK(a.frames[i] == b.frames[i]);
    REQUIRE(a.joints.size() == b.joints.size());
    for (std::size_t i = 0; i < a.joints.size(); ++i) {
      CHECK(a.joints[i].angles == b.joints[i].angles);
      CHECK(a.joints[i].velocities == b.joints[i].velocities);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("empty dataset round trips and corrupt magic is rejected") {
  Dataset ds;
  const std::string path = temp_path("empty.dmtd");
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  CHECK(back.trajectories.empty());

  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(0);
  f.put('X');
  f.close();
  CHECK_THROWS_AS(load_dataset(path), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("collect is deterministic byte-for-byte") {
  CollectConfig cfg;
  cfg.task = Task::Material;
  cfg.per_material = 7;  // desk-scale: 6 train / 1 val per class
  cfg.seed = 5;
  const Dataset a = collect(cfg);
  const Dataset b = collect(cfg);
  const std::string pa = temp_path("det_a.dmtd");
  const std::string pb = temp_path("det_b.dmtd");
  save_dataset(a, pa);
  save_dataset(b, pb);
  std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(fa)),
                       std::istreambuf_iterator<char>());
  const std::string bb((std::istreambuf_iterator<char>(fb)),
                       std::istreambuf_iterator<char>());
  CHECK(ba == bb);
  CHECK(a.trajectories.size() == 42);
  CHECK(a.manifest.train_ids().size() == 36);
  CHECK(a.manifest.val_ids().size() == 6);
  std::remove(pa.c_str());
  std::remove(pb.c_str());
}
