#include "dmanus/binsort.hpp"

#include <cmath>
#include <sstream>

#include "dmanus/rng.hpp"

namespace dmanus::binsort {

namespace {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                          std::uint64_t b = 0) {
  Rng rng(base ^ (0x9E3779B97F4A7C15ULL * (a + 1)) ^
          (0xC2B2AE3D27D4EB4FULL * (b + 1)));
  return rng.next_u64();
}

// Class-center object parameters: maximally separable bin contents.
hand::SynthObject prototype_object(int softness, int texture,
                                   std::uint64_t seed) {
  static constexpr double kComplianceCenter[3] = {0.05, 0.17, 0.375};
  static constexpr double kAmplitudeCenter[3] = {0.03, 0.17, 0.41};
  static constexpr double kWavelengthCenter[3][3] = {
      {18.5, 11.5, 6.5}, {21.5, 14.0, 8.25}, {25.0, 17.0, 10.5}};
  hand::SynthObject o;
  std::ostringstream name;
  name << "proto_s" << softness << "t" << texture;
  o.name = name.str();
  o.softness = static_cast<hand::Softness>(softness);
  o.texture = static_cast<hand::Texture>(texture);
  o.radius = 35.0;
  o.compliance = kComplianceCenter[softness];
  o.texture_amplitude = kAmplitudeCenter[texture];
  o.texture_wavelength = kWavelengthCenter[softness][texture];
  o.seed = seed;
  return o;
}

}  // namespace

BinScene::BinScene(BinSceneConfig cfg) : cfg_(cfg) {
  if (cfg_.initial_objects < 1)
    throw ConfigError("a bin scene needs at least one object");
  for (int i = 0; i < cfg_.initial_objects; ++i)
    objects_.push_back(make_object());
}

PlacedObject BinScene::make_object() {
  const std::uint64_t obj_seed = derive_seed(cfg_.seed, 0xB1, spawned_);
  Rng rng(obj_seed);
  const int softness = static_cast<int>(spawned_ % 3);
  const int texture = static_cast<int>((spawned_ / 3) % 3);
  ++spawned_;

  PlacedObject placed;
  if (cfg_.prototype_objects) {
    placed.object = prototype_object(softness, texture, obj_seed);
  } else {
    // unseen-object draws matching the holdout parameter bands
    auto catalog = dataset::softtex_catalog(0, 1, obj_seed);
    placed.object = catalog[static_cast<std::size_t>(softness) * 3 + texture];
    placed.object.name += "_bin";
  }
  placed.x = rng.uniform(-0.8 * cfg_.half_x, 0.8 * cfg_.half_x);
  placed.y = rng.uniform(-0.8 * cfg_.half_y, 0.8 * cfg_.half_y);
  return placed;
}

int BinScene::nearest_within(double x, double y, double radius) const {
  int best = -1;
  double best_d = radius;
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    const double d = std::hypot(objects_[i].x - x, objects_[i].y - y);
    if (d <= best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

void BinScene::remove(int index) {
  objects_.erase(objects_.begin() + index);
  if (cfg_.refill) objects_.push_back(make_object());
}

ApproachResult approach(const BinScene& scene, const dataset::SimSetup& sim,
                        std::uint64_t seed) {
  Rng rng(seed);
  ApproachResult out;
  out.x = rng.uniform(-scene.config().half_x, scene.config().half_x);
  out.y = rng.uniform(-scene.config().half_y, scene.config().half_y);

  // 100 no-contact frames at the approach pose, averaged; same procedure as
  // the recorder's baseline.
  const skin::FluxFrame rest = skin::baseline_field(sim.layout, sim.grid);
  std::vector<skin::FluxFrame> window(dataset::kBaselineFrames);
  for (int k = 0; k < dataset::kBaselineFrames; ++k) {
    skin::FluxFrame f = skin::add_sensor_noise(rest, sim.noise_sigma,
                                               derive_seed(seed, 0xA9, k));
    f.seq = static_cast<std::uint32_t>(k);
    window[k] = f;
  }
  out.baseline = dataset::compute_baseline(window);
  return out;
}

TriggerResult descend_and_trigger(DescendSource& source,
                                  const skin::FluxFrame& baseline,
                                  double threshold, int max_steps) {
  if (threshold <= 0.0) throw ConfigError("trigger threshold must be positive");
  for (int step = 0; step < max_steps; ++step) {
    const skin::FluxFrame frame = source.frame_at(step);
    double norm2 = 0.0;
    for (int i = 0; i < skin::kFluxDim; ++i) {
      const double d = static_cast<double>(frame.values[i]) -
                       static_cast<double>(baseline.values[i]);
      norm2 += d * d;
    }
    if (std::sqrt(norm2) > threshold) return {true, step};
  }
  return {false, -1};
}

SimDescendSource::SimDescendSource(const dataset::SimSetup& sim,
                                   const BinScene& scene, double x, double y,
                                   std::uint64_t seed)
    : sim_(sim), seed_(seed) {
  // Objects outside this lateral reach never touch the descending palm.
  const int idx = scene.nearest_within(x, y, 55.0);
  if (idx >= 0) {
    target_ = scene.objects()[idx].object;
    // Taller objects are met earlier in the descent.
    contact_step_ =
        std::max(1, static_cast<int>(30.0 - target_->radius / 4.0));
    press_per_step_ = 0.05;
  }
}

skin::FluxFrame SimDescendSource::frame_at(int step) {
  skin::FluxFrame frame;
  if (!target_ || step < contact_step_) {
    frame = skin::baseline_field(sim_.layout, sim_.grid);
  } else {
    hand::ContactConfig contact;
    contact.scenario = hand::ContactScenario::PalmUp;
    contact.press_gain = 0.0;
    contact.extra_press = press_per_step_ * (step - contact_step_ + 1);
    // Palm-down hover: fingers extended, only the palm meets the object.
    hand::JointState joints;
    const auto deform = hand::contact_model(*target_, joints, 0.0, sim_.layout,
                                            sim_.grid, contact);
    frame = skin::skin_response(sim_.layout, sim_.grid, deform, sim_.rest_accum);
  }
  frame = skin::add_sensor_noise(frame, sim_.noise_sigma,
                                 derive_seed(seed_, 0xDE, step));
  frame.seq = static_cast<std::uint32_t>(step);
  return frame;
}

std::pair<int, int> classify_window(const std::vector<skin::FluxFrame>& frames,
                                    const skin::FluxFrame& baseline,
                                    const SortingModels& models) {
  dataset::Trajectory traj;
  traj.frames = frames;
  traj.baseline = baseline;

  const auto features = percept::feature_sequence(traj, models.softness.mask);
  const auto softness_preds = percept::predict_sequence(models.softness, features);
  std::array<int, 3> counts{0, 0, 0};
  for (int p : softness_preds) counts[p]++;
  int softness = 0;
  for (int c = 1; c < 3; ++c)
    if (counts[c] > counts[softness]) softness = c;

  int texture;
  if (models.texture.variant == percept::TextureVariant::SoftnessConditioned) {
    if (models.texture.submodels.size() != 3)
      throw ModelMissing("softness-conditioned texture bundle is incomplete");
    // route through the softness decision made above
    const auto tex_logits = nn::sequence_logits(
        models.texture.submodels[softness].spec,
        models.texture.submodels[softness], features, false);
    std::array<int, 3> tex_counts{0, 0, 0};
    for (const auto& lg : tex_logits) {
      int best = 0;
      for (int j = 1; j < 3; ++j)
        if (lg[j] > lg[best]) best = j;
      tex_counts[best]++;
    }
    texture = 0;
    for (int c = 1; c < 3; ++c)
      if (tex_counts[c] > tex_counts[texture]) texture = c;
  } else {
    const auto preds = percept::predict_sequence(models.texture, features);
    std::array<int, 3> tex_counts{0, 0, 0};
    for (int p : preds) tex_counts[p]++;
    texture = 0;
    for (int c = 1; c < 3; ++c)
      if (tex_counts[c] > tex_counts[texture]) texture = c;
  }
  return {softness, texture};
}

EpisodeResult run_episode(BinScene& scene, const dataset::SimSetup& sim,
                          const SortingModels& models, const EpisodeConfig& cfg,
                          std::uint64_t episode_seed) {
  if (models.softness.primary.arrays.empty() ||
      models.texture.primary.arrays.empty())
    throw ModelMissing("bin sorting needs softness and texture models");

  EpisodeResult result;
  result.episode_seed = episode_seed;

  const ApproachResult app = approach(scene, sim, episode_seed);
  double threshold = cfg.trigger_threshold;
  if (threshold <= 0.0) {
    // default: 10x the noise floor of the baseline window norm
    threshold = 10.0 * sim.noise_sigma * std::sqrt(double(skin::kFluxDim));
  }

  SimDescendSource source(sim, scene, app.x, app.y, episode_seed);
  const TriggerResult trig =
      descend_and_trigger(source, app.baseline, threshold);
  result.trigger_step = trig.contact ? trig.step : -1;
  if (!trig.contact) return result;

  const int target = scene.nearest_within(app.x, app.y, cfg.capture_radius);
  if (target < 0) return result;  // touched something but the grasp slips off

  const hand::SynthObject obj = scene.objects()[target].object;
  result.true_softness = static_cast<int>(obj.softness);
  result.true_texture = static_cast<int>(obj.texture);

  // Close the fingers: 1 s of servo steps toward a grip pose. The grasp
  // holds when at least two fingertip patches plus the palm stay deformed
  // through the whole second.
  hand::BabbleConfig grip_cfg;
  grip_cfg.seed = derive_seed(episode_seed, 0x6C);
  grip_cfg.rate_hz = cfg.window_rate_hz;
  hand::ContactConfig grip_contact;
  grip_contact.scenario = hand::ContactScenario::Grip;

  const auto patches = skin::default_grid_patches(sim.layout);
  hand::BabbleConfig rest_cfg = grip_cfg;
  rest_cfg.amplitude = 0.0;
  rest_cfg.noise_sigma = 0.0;
  hand::JointState joints = hand::babble_policy(rest_cfg, 0);
  bool held = true;
  for (int k = 0; k < cfg.window_rate_hz; ++k) {
    joints = hand::simulate_step(joints, hand::babble_policy(rest_cfg, 0),
                                 1.0 / cfg.window_rate_hz);
    const auto deform = hand::contact_model(obj, joints, 0.0, sim.layout,
                                            sim.grid, grip_contact);
    std::array<bool, 4> touched{false, false, false, false};
    for (std::size_t di = 0; di < deform.displacements.size(); ++di) {
      const auto& d = deform.displacements[di];
      if (d.x != 0.0 || d.y != 0.0 || d.z != 0.0)
        touched[static_cast<int>(patches[di])] = true;
    }
    const int fingers = touched[0] + touched[1] + touched[2];
    if (fingers < 2 || !touched[3]) {
      held = false;
      break;
    }
    ++result.frames_used;
  }
  if (!held) return result;

  result.grasp_success = true;

  // Classification window: same 10 s / 30 Hz recipe as training, gripped.
  hand::BabbleConfig window_cfg = grip_cfg;
  window_cfg.duration_s = cfg.window_duration_s;
  dataset::SimSetup sim_copy = sim;  // recorder needs the cached rest sums
  dataset::Label label;
  label.softness = result.true_softness;
  label.texture = result.true_texture;
  dataset::Trajectory window =
      dataset::record_trajectory(sim_copy, obj, window_cfg, label,
                                 hand::ContactScenario::Grip);
  result.frames_used += static_cast<int>(window.frames.size());

  // The harness keeps the approach baseline: the hand is palm-down here and
  // must not re-baseline with palm-up statistics.
  const auto [soft_pred, tex_pred] =
      classify_window(window.frames, app.baseline, models);
  result.predicted_softness = soft_pred;
  result.predicted_texture = tex_pred;
  result.bin_assigned = soft_pred * 3 + tex_pred;

  scene.remove(target);
  return result;
}

SessionReport run_session(BinScene& scene, const dataset::SimSetup& sim,
                          const SortingModels& models, const EpisodeConfig& cfg,
                          int n_successful_grasps, std::uint64_t seed) {
  SessionReport report;
  long soft_hits = 0, tex_hits = 0, both_hits = 0;
  const int max_episodes = std::max(50, 50 * n_successful_grasps);
  int episode = 0;
  while (report.successful_grasps < n_successful_grasps) {
    if (scene.empty()) throw ExhaustedScene("bin is empty");
    if (episode >= max_episodes)
      throw ExhaustedScene("no graspable objects after " +
                           std::to_string(episode) + " episodes");
    EpisodeResult result = run_episode(scene, sim, models, cfg,
                                       derive_seed(seed, 0xE9, episode));
    ++episode;
    if (result.grasp_success) {
      ++report.successful_grasps;
      soft_hits += result.predicted_softness == result.true_softness;
      tex_hits += result.predicted_texture == result.true_texture;
      both_hits += result.predicted_softness == result.true_softness &&
                   result.predicted_texture == result.true_texture;
    }
    report.episodes.push_back(std::move(result));
  }
  if (report.successful_grasps > 0) {
    report.softness_accuracy =
        static_cast<double>(soft_hits) / report.successful_grasps;
    report.texture_accuracy =
        static_cast<double>(tex_hits) / report.successful_grasps;
    report.both_accuracy =
        static_cast<double>(both_hits) / report.successful_grasps;
  }
  return report;
}

std::string format_transcript(const SessionReport& report) {
  std::ostringstream out;
  out << "# seed step_triggered success true_s true_t pred_s pred_t\n";
  for (const auto& e : report.episodes) {
    out << e.episode_seed << ' ' << e.trigger_step << ' '
        << (e.grasp_success ? 1 : 0) << ' ' << e.true_softness << ' '
        << e.true_texture << ' ' << e.predicted_softness << ' '
        << e.predicted_texture << "\n";
  }
  out << "# grasps " << report.successful_grasps << " softness_acc "
      << report.softness_accuracy << " texture_acc " << report.texture_accuracy
      << " both_acc " << report.both_accuracy << "\n";
  return out.str();
}

}  // namespace dmanus::binsort
