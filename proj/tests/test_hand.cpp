#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "dmanus/hand.hpp"

using namespace dmanus;
using namespace dmanus::hand;

namespace {

JointState zeros() { return JointState{}; }

SynthObject test_object(Softness s, Texture t, double compliance, double amp,
                        double wl, std::uint64_t seed = 5) {
  SynthObject o;
  o.name = "test";
  o.softness = s;
  o.texture = t;
  o.radius = 35.0;
  o.compliance = compliance;
  o.texture_amplitude = amp;
  o.texture_wavelength = wl;
  o.seed = seed;
  return o;
}

// displacement field of the babble rest pose for an object
skin::DeformationField rest_contact(const SynthObject& obj,
                                    const skin::MagnetometerLayout& layout,
                                    const skin::DipoleGrid& grid) {
  BabbleConfig cfg;
  cfg.amplitude = 0.0;
  cfg.noise_sigma = 0.0;
  const JointState rest = babble_policy(cfg, 0);
  return contact_model(obj, rest, 0.0, layout, grid);
}

}  // namespace

TEST_CASE("open hand matches the golden pose file") {
  const PatchPoses poses = forward_kinematics(zeros());
  const std::string got = format_patch_poses(poses);

  std::ifstream in(std::string(DMANUS_SOURCE_DIR) +
                   "/data/golden/open_hand_pose.txt");
  REQUIRE(in.good());
  std::stringstream want;
  want << in.rdbuf();
  CHECK(got == want.str());
}

TEST_CASE("fk matches the independent transform-chain oracle") {
  JointState j;
  j.angles[0] = 0.3;  // finger1 abduction
  j.angles[1] = 0.3;  // finger1 mcp
  j.angles[2] = 0.3;  // finger1 pip
  const PatchPoses poses = forward_kinematics(j);
  const Pose& f1 = poses.finger(0);
  CHECK(f1.position.x == doctest::Approx(122.54314044137513).epsilon(1e-12));
  CHECK(f1.position.y == doctest::Approx(-14.106458249008949).epsilon(1e-12));
  CHECK(f1.position.z == doctest::Approx(28.67574578106445).epsilon(1e-12));
  CHECK(f1.orientation.w == doctest::Approx(0.9446090901443596).epsilon(1e-12));
  CHECK(f1.orientation.x == doctest::Approx(0.04416198779168267).epsilon(1e-12));
  CHECK(f1.orientation.y == doctest::Approx(-0.29220183329241467).epsilon(1e-12));
  CHECK(f1.orientation.z == doctest::Approx(0.14276370081881545).epsilon(1e-12));
}

TEST_CASE("thumb joints do not move the finger chains") {
  JointState j;
  j.angles[6] = 0.4;  // thumb roll
  j.angles[9] = 0.7;  // thumb ip (the fourth thumb DoF)
  const PatchPoses moved = forward_kinematics(j);
  const PatchPoses open = forward_kinematics(zeros());
  for (int f = 0; f < 2; ++f) {
    CHECK(moved.finger(f).position.x == open.finger(f).position.x);
    CHECK(moved.finger(f).position.y == open.finger(f).position.y);
    CHECK(moved.finger(f).position.z == open.finger(f).position.z);
  }
  CHECK(moved.finger(2).position.z != open.finger(2).position.z);
}

TEST_CASE("fk rejects out-of-limit joints") {
  JointState j;
  j.angles[4] = 2.0;
  CHECK_THROWS_AS(forward_kinematics(j), JointLimitError);
}

TEST_CASE("palm pose is the identity") {
  const PatchPoses poses = forward_kinematics(zeros());
  CHECK(poses.palm().position.x == 0.0);
  CHECK(poses.palm().orientation.w == 1.0);
}

TEST_CASE("babble: zero noise is a pure multi-sine, seeds reproduce") {
  BabbleConfig cfg;
  cfg.seed = 3;
  cfg.noise_sigma = 0.0;
  const JointState a = babble_policy(cfg, 17);
  const JointState b = babble_policy(cfg, 17);
  for (int j = 0; j < kNumJoints; ++j) CHECK(a.angles[j] == b.angles[j]);

  cfg.noise_sigma = 0.05;
  const JointState c = babble_policy(cfg, 17);
  const JointState d = babble_policy(cfg, 17);
  for (int j = 0; j < kNumJoints; ++j) CHECK(c.angles[j] == d.angles[j]);
}

TEST_CASE("babble: amplitude 0 and noise 0 hold the rest pose") {
  BabbleConfig cfg;
  cfg.amplitude = 0.0;
  cfg.noise_sigma = 0.0;
  const JointState first = babble_policy(cfg, 0);
  for (int t : {1, 50, 299}) {
    const JointState s = babble_policy(cfg, t);
    for (int j = 0; j < kNumJoints; ++j) CHECK(s.angles[j] == first.angles[j]);
  }
}

TEST_CASE("babble frame count is duration times rate, exactly") {
  BabbleConfig cfg;
  CHECK(cfg.frame_count() == 300);
  cfg.rate_hz = 10;
  CHECK(cfg.frame_count() == 100);
  cfg.rate_hz = 17;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("babble samples one continuous script across rates") {
  BabbleConfig slow, fast;
  slow.seed = fast.seed = 11;
  slow.noise_sigma = fast.noise_sigma = 0.0;
  slow.rate_hz = 10;
  fast.rate_hz = 30;
  // frame k at 10 Hz is the same instant as frame 3k at 30 Hz
  for (int k : {0, 10, 40, 99}) {
    const JointState a = babble_policy(slow, k);
    const JointState b = babble_policy(fast, 3 * k);
    for (int j = 0; j < kNumJoints; ++j)
      CHECK(a.angles[j] == doctest::Approx(b.angles[j]).epsilon(1e-12));
  }
}

TEST_CASE("servo: reaching the target is a fixed point") {
  JointState j;
  j.angles[1] = 0.5;
  const JointState next = simulate_step(j, j, 1.0 / 30.0);
  for (int k = 0; k < kNumJoints; ++k) CHECK(next.angles[k] == j.angles[k]);
}

TEST_CASE("servo converges and clamps at the joint limits") {
  JointState j;
  JointState target;
  target.angles[2] = 1.0;
  for (int i = 0; i < 300; ++i) j = simulate_step(j, target, 1.0 / 30.0);
  CHECK(j.angles[2] == doctest::Approx(1.0).epsilon(1e-9));

  target.angles[2] = 5.0;  // beyond the 1.57 limit
  for (int i = 0; i < 300; ++i) j = simulate_step(j, target, 1.0 / 30.0);
  CHECK(j.angles[2] == 1.57);
}

TEST_CASE("servo respects the per-step rate limit") {
  JointState j;
  JointState target;
  target.angles[0] = 1.0;
  const double dt = 1.0 / 30.0;
  const JointState next = simulate_step(j, target, dt);
  CHECK(next.angles[0] == doctest::Approx(kServoRateLimit * dt));
}

TEST_CASE("only position control has dynamics") {
  JointState j;
  CHECK_THROWS_AS(simulate_step(j, j, 0.01, ControlMode::Velocity),
                  UnsupportedMode);
  CHECK_THROWS_AS(simulate_step(j, j, 0.01, ControlMode::PWM), UnsupportedMode);
  CHECK_THROWS_AS(simulate_step(j, j, 0.01, ControlMode::Current),
                  UnsupportedMode);
}

TEST_CASE("lifted object produces a zero deformation field") {
  const auto layout = skin::default_layout();
  const auto grid = skin::default_grid(layout);
  const SynthObject obj = test_object(Softness::Medium, Texture::Medium, 0.17,
                                      0.17, 12.0);
  ContactConfig lifted;
  lifted.press_gain = 0.0;
  JointState j;
  j.angles[1] = 0.8;
  const auto field = contact_model(obj, j, 0.0, layout, grid, lifted);
  CHECK(field.is_zero());
}

TEST_CASE("soft objects: larger contact patch, smaller peak displacement") {
  const auto layout = skin::default_layout();
  const auto grid = skin::default_grid(layout);
  const SynthObject hard = test_object(Softness::Hard, Texture::Smooth, 0.04,
                                       0.0, 20.0);
  SynthObject soft = hard;
  soft.softness = Softness::Soft;
  soft.compliance = 0.4;

  const auto fh = rest_contact(hard, layout, grid);
  const auto fs = rest_contact(soft, layout, grid);
  int count_h = 0, count_s = 0;
  double max_h = 0.0, max_s = 0.0;
  for (std::size_t i = 0; i < fh.displacements.size(); ++i) {
    const double dh = fh.displacements[i].norm();
    const double ds = fs.displacements[i].norm();
    count_h += dh > 0.0;
    count_s += ds > 0.0;
    max_h = std::max(max_h, dh);
    max_s = std::max(max_s, ds);
  }
  CHECK(count_s > count_h);
  CHECK(max_s < max_h);
}

TEST_CASE("rough texture raises the high-frequency spatial variance") {
  const auto layout = skin::default_layout();
  const auto grid = skin::default_grid(layout);
  const SynthObject smooth = test_object(Softness::Hard, Texture::Smooth, 0.05,
                                         0.03, 21.0);
  SynthObject rough = smooth;
  rough.texture = Texture::Rough;
  rough.texture_amplitude = 0.41;
  rough.texture_wavelength = 7.5;
  SynthObject flat = smooth;
  flat.texture_amplitude = 0.0;  // analytic no-ripple reference

  const auto f_smooth = rest_contact(smooth, layout, grid);
  const auto f_rough = rest_contact(rough, layout, grid);
  const auto f_flat = rest_contact(flat, layout, grid);

  // ripple term isolated against the rippleless twin
  auto ripple_variance = [&](const skin::DeformationField& f) {
    double sum = 0.0, sum2 = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < f.displacements.size(); ++i) {
      const double r = f.displacements[i].z - f_flat.displacements[i].z;
      sum += r;
      sum2 += r * r;
      ++n;
    }
    const double mean = sum / n;
    return sum2 / n - mean * mean;
  };
  CHECK(ripple_variance(f_rough) > ripple_variance(f_smooth));
}

TEST_CASE("skin indentation never exceeds the 2 mm skin thickness") {
  const auto layout = skin::default_layout();
  const auto grid = skin::default_grid(layout);
  const SynthObject obj = test_object(Softness::Hard, Texture::Rough, 0.03,
                                      0.5, 6.0);
  BabbleConfig cfg;
  cfg.seed = 21;
  JointState j = babble_policy(cfg, 0);
  for (int t = 0; t < 100; ++t) {
    j = simulate_step(j, babble_policy(cfg, t), 1.0 / 30.0);
    const auto field = contact_model(obj, j, t / 30.0, layout, grid);
    for (const auto& d : field.displacements) CHECK(d.norm() <= 2.0);
  }
}

TEST_CASE("class monotonicity over a full babble trajectory") {
  const auto layout = skin::default_layout();
  const auto grid = skin::default_grid(layout);
  BabbleConfig cfg;
  cfg.seed = 4;

  // identical objects across the softness scale
  const double compliances[3] = {0.05, 0.17, 0.375};
  double mean_area[3] = {0, 0, 0};
  for (int s = 0; s < 3; ++s) {
    SynthObject obj = test_object(static_cast<Softness>(s), Texture::Medium,
                                  compliances[s], 0.17, 12.0);
    JointState j = babble_policy(cfg, 0);
    for (int t = 0; t < 300; ++t) {
      j = simulate_step(j, babble_policy(cfg, t), 1.0 / 30.0);
      const auto field = contact_model(obj, j, t / 30.0, layout, grid);
      int count = 0;
      for (const auto& d : field.displacements) count += d.norm() > 0.0;
      mean_area[s] += count;
    }
    mean_area[s] /= 300.0;
  }
  CHECK(mean_area[2] > mean_area[1]);  // soft > medium
  CHECK(mean_area[1] > mean_area[0]);  // medium > hard

  // ripple variance ordering within one softness class
  const double amps[3] = {0.03, 0.17, 0.41};
  const double wls[3] = {21.5, 14.0, 8.25};
  double hf_var[3] = {0, 0, 0};
  for (int tx = 0; tx < 3; ++tx) {
    SynthObject obj = test_object(Softness::Medium, static_cast<Texture>(tx),
                                  0.17, amps[tx], wls[tx]);
    SynthObject flat = obj;
    flat.texture_amplitude = 0.0;
    JointState j = babble_policy(cfg, 0);
    for (int t = 0; t < 300; ++t) {
      j = simulate_step(j, babble_policy(cfg, t), 1.0 / 30.0);
      const auto f = contact_model(obj, j, t / 30.0, layout, grid);
      const auto f0 = contact_model(flat, j, t / 30.0, layout, grid);
      double sum = 0.0, sum2 = 0.0;
      int n = 0;
      for (std::size_t i = 0; i < f.displacements.size(); ++i) {
        const double r = f.displacements[i].z - f0.displacements[i].z;
        sum += r;
        sum2 += r * r;
        ++n;
      }
      hf_var[tx] += sum2 / n - (sum / n) * (sum / n);
    }
  }
  CHECK(hf_var[2] > hf_var[1]);  // rough > medium
  CHECK(hf_var[1] > hf_var[0]);  // medium > smooth
}

TEST_CASE("object catalog round trip") {
  std::vector<SynthObject> objects = {
      test_object(Softness::Hard, Texture::Rough, 0.05, 0.4, 7.0, 9),
      test_object(Softness::Soft, Texture::Smooth, 0.4, 0.02, 20.0, 10)};
  objects[0].name = "a";
  objects[1].name = "b";
  const std::string text = serialize_catalog(objects);
  std::istringstream in(text);
  const auto back = parse_catalog(in);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a");
  CHECK(back[0].softness == Softness::Hard);
  CHECK(back[0].texture == Texture::Rough);
  CHECK(back[0].compliance == objects[0].compliance);
  CHECK(back[1].texture_wavelength == objects[1].texture_wavelength);
  CHECK(back[1].seed == 10);
}

TEST_CASE("determinism: a full joint and deformation sequence reproduces") {
  const auto layout = skin::default_layout();
  const auto grid = skin::default_grid(layout);
  const SynthObject obj = test_object(Softness::Medium, Texture::Rough, 0.2,
                                      0.4, 8.0);
  BabbleConfig cfg;
  cfg.seed = 77;
  auto run = [&]() {
    std::vector<double> trace;
    JointState j = babble_policy(cfg, 0);
    for (int t = 0; t < 60; ++t) {
      j = simulate_step(j, babble_policy(cfg, t), 1.0 / 30.0);
      const auto f = contact_model(obj, j, t / 30.0, layout, grid);
      for (const auto& d : f.displacements) trace.push_back(d.z);
      for (double a : j.angles) trace.push_back(a);
    }
    return trace;
  };
  CHECK(run() == run());
}
