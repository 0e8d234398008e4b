#include "dmanus/hand.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dmanus/rng.hpp"

namespace dmanus::hand {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Kinematic constants (mm). Finger chains run along local +x at rest;
// flexion about -y curls the tip toward +z (over the palm).
const Vec3 kFinger1Base{55.0, -35.0, 0.0};
const Vec3 kFinger2Base{55.0, 35.0, 0.0};
const Vec3 kThumbBase{-55.0, 0.0, 0.0};
constexpr double kFingerProximal = 55.0;
constexpr double kFingerPatchOffset = 22.0;
constexpr double kThumbProximal = 45.0;
constexpr double kThumbPatchOffset = 20.0;

// Flexion joints (excludes abductions and the thumb roll).
constexpr std::array<int, 6> kFlexJoints{1, 2, 4, 5, 8, 9};

// Contact shaping. Compliance raises contact area and lowers peak depth;
// texture ripple is attenuated on compliant objects, which is what couples
// the texture signal to softness.
constexpr double kPressBase = 0.12;       // mm
constexpr double kPressGainFlex = 0.80;   // mm per unit normalized flexion
constexpr double kPeakSoftening = 4.0;    // 1/(mm/N)
constexpr double kAreaGain = 1.6;         // 1/(mm/N)
constexpr double kAreaScale = 2.2;
constexpr double kRippleSoftening = 8.0;  // 1/(mm/N)
constexpr double kDriftGain = 10.0;       // mm per rad of abduction mix
constexpr double kFingerTouchMargin = 12.0;  // mm
constexpr double kShearFraction = 0.2;

struct BabbleScript {
  // 3 sine components per joint
  std::array<std::array<double, 3>, kNumJoints> freq;
  std::array<std::array<double, 3>, kNumJoints> phase;
  std::array<double, kNumJoints> weight;
  std::array<double, kNumJoints> bias;
};

// One fixed script: the babble is "scripted", the per-trajectory variation
// comes from the seeded noise term alone.
const BabbleScript& babble_script() {
  static const BabbleScript script = [] {
    BabbleScript s;
    Rng root(0x5C819D);
    for (int j = 0; j < kNumJoints; ++j) {
      Rng rng = root.fork(j);
      for (int k = 0; k < 3; ++k) {
        s.freq[j][k] = rng.uniform(0.2, 1.5);
        s.phase[j][k] = rng.uniform(0.0, 2.0 * kPi);
      }
      s.weight[j] = rng.uniform(0.7, 1.0);
      s.bias[j] = 0.0;
    }
    for (int j : kFlexJoints) s.bias[j] = 0.8;
    return s;
  }();
  return script;
}

}  // namespace

JointLimits JointLimits::defaults() {
  JointLimits l;
  l.min.fill(-1.57);
  l.max.fill(1.57);
  return l;
}

void JointLimits::check(const JointState& joints) const {
  for (int j = 0; j < kNumJoints; ++j) {
    if (joints.angles[j] < min[j] || joints.angles[j] > max[j]) {
      std::ostringstream msg;
      msg << "joint " << j << " angle " << joints.angles[j]
          << " outside [" << min[j] << ", " << max[j] << "]";
      throw JointLimitError(msg.str());
    }
  }
}

double JointLimits::clamp(int joint, double angle) const {
  return std::clamp(angle, min[joint], max[joint]);
}

const char* control_mode_name(ControlMode m) {
  switch (m) {
    case ControlMode::Position: return "position";
    case ControlMode::Velocity: return "velocity";
    case ControlMode::Current: return "current";
    case ControlMode::PWM: return "pwm";
  }
  return "?";
}

PatchPoses forward_kinematics(const JointState& joints,
                              const JointLimits& limits) {
  limits.check(joints);
  const auto& a = joints.angles;

  auto finger = [](const Vec3& base, double abd, double mcp, double pip,
                   const Quat& mount, double proximal, double patch_offset) {
    Pose pose{base, Quat{}};
    pose = pose.then(mount * Quat::rot_z(abd) * Quat::rot_y(-mcp), {0, 0, 0});
    pose = pose.then(Quat::rot_y(-pip), {proximal, 0, 0});
    pose = pose.then(Quat{}, {patch_offset, 0, 0});
    return pose;
  };

  PatchPoses out;
  out.poses[0] = finger(kFinger1Base, a[0], a[1], a[2], Quat{}, kFingerProximal,
                        kFingerPatchOffset);
  out.poses[1] = finger(kFinger2Base, a[3], a[4], a[5], Quat{}, kFingerProximal,
                        kFingerPatchOffset);
  // Exact half-turn about z; the thumb opposes the fingers.
  const Quat thumb_mount{0.0, 0.0, 0.0, 1.0};
  out.poses[2] = finger(kThumbBase, a[7], a[8], a[9],
                        thumb_mount * Quat::rot_x(a[6]), kThumbProximal,
                        kThumbPatchOffset);
  out.poses[3] = Pose{};  // palm is the hand frame
  return out;
}

std::string format_patch_poses(const PatchPoses& poses) {
  static const char* names[4] = {"finger1", "finger2", "finger3", "palm"};
  std::ostringstream out;
  out.precision(12);
  for (int i = 0; i < 4; ++i) {
    const Pose& p = poses.poses[i];
    out << names[i] << ' ' << p.position.x << ' ' << p.position.y << ' '
        << p.position.z << ' ' << p.orientation.w << ' ' << p.orientation.x
        << ' ' << p.orientation.y << ' ' << p.orientation.z << "\n";
  }
  return out.str();
}

const char* softness_name(Softness s) {
  switch (s) {
    case Softness::Hard: return "hard";
    case Softness::Medium: return "medium";
    case Softness::Soft: return "soft";
  }
  return "?";
}

const char* texture_name(Texture t) {
  switch (t) {
    case Texture::Smooth: return "smooth";
    case Texture::Medium: return "medium";
    case Texture::Rough: return "rough";
  }
  return "?";
}

Softness softness_from_name(const std::string& s) {
  if (s == "hard") return Softness::Hard;
  if (s == "medium") return Softness::Medium;
  if (s == "soft") return Softness::Soft;
  throw FormatError("unknown softness: " + s);
}

Texture texture_from_name(const std::string& s) {
  if (s == "smooth") return Texture::Smooth;
  if (s == "medium") return Texture::Medium;
  if (s == "rough") return Texture::Rough;
  throw FormatError("unknown texture: " + s);
}

std::string serialize_catalog(const std::vector<SynthObject>& objects) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& o : objects) {
    out << o.name << ' ' << softness_name(o.softness) << ' '
        << texture_name(o.texture) << ' ' << o.radius << ' ' << o.compliance
        << ' ' << o.texture_amplitude << ' ' << o.texture_wavelength << ' '
        << o.seed << "\n";
  }
  return out.str();
}

std::vector<SynthObject> parse_catalog(std::istream& in) {
  std::vector<SynthObject> objects;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SynthObject o;
    std::string softness, texture;
    if (!(ls >> o.name >> softness >> texture >> o.radius >> o.compliance >>
          o.texture_amplitude >> o.texture_wavelength >> o.seed))
      throw FormatError("bad catalog line: " + line);
    o.softness = softness_from_name(softness);
    o.texture = texture_from_name(texture);
    objects.push_back(std::move(o));
  }
  return objects;
}

int BabbleConfig::frame_count() const {
  return static_cast<int>(std::lround(duration_s * rate_hz));
}

void BabbleConfig::validate() const {
  if (rate_hz != 10 && rate_hz != 20 && rate_hz != 30)
    throw ConfigError("rate_hz must be one of 10, 20, 30");
  if (duration_s <= 0) throw ConfigError("duration_s must be positive");
}

JointState babble_policy(const BabbleConfig& cfg, int t_index,
                         const JointLimits& limits) {
  cfg.validate();
  const BabbleScript& script = babble_script();
  const double t = static_cast<double>(t_index) / cfg.rate_hz;

  // Per-frame noise is drawn from a stream forked on t_index so calls are
  // order-independent.
  Rng noise = Rng(cfg.seed).fork(0x10000 + static_cast<std::uint64_t>(t_index));

  JointState target;
  static constexpr double kMix[3] = {0.55, 0.30, 0.15};
  for (int j = 0; j < kNumJoints; ++j) {
    double v = 0.0;
    for (int k = 0; k < 3; ++k)
      v += kMix[k] * std::sin(2.0 * kPi * script.freq[j][k] * t +
                              script.phase[j][k]);
    double angle = script.bias[j] + cfg.amplitude * script.weight[j] * v;
    if (cfg.noise_sigma > 0.0) angle += cfg.noise_sigma * noise.gaussian();
    target.angles[j] = limits.clamp(j, angle);
  }
  return target;
}

JointState simulate_step(const JointState& joints, const JointState& target,
                         double dt, ControlMode mode,
                         const JointLimits& limits) {
  if (mode != ControlMode::Position)
    throw UnsupportedMode(std::string("no dynamics for control mode ") +
                          control_mode_name(mode));
  if (dt <= 0.0) throw ConfigError("dt must be positive");
  JointState next;
  const double max_step = kServoRateLimit * dt;
  for (int j = 0; j < kNumJoints; ++j) {
    const double err = target.angles[j] - joints.angles[j];
    const double step = std::clamp(err, -max_step, max_step);
    next.angles[j] = limits.clamp(j, joints.angles[j] + step);
    next.velocities[j] = step / dt;
  }
  return next;
}

namespace {

double normalized_flexion(const JointState& joints) {
  double sum = 0.0;
  for (int j : kFlexJoints)
    sum += std::clamp(joints.angles[j], 0.0, 1.5) / 1.5;
  return sum / kFlexJoints.size();
}

struct RippleParams {
  double ux, uy;     // grain direction
  double shift;      // rubbing offset along the grain, mm
  double amp;        // compliance-attenuated amplitude, mm
  double wavelength; // mm
};

double ripple_at(const RippleParams& r, double px, double py) {
  const double u = px * r.ux + py * r.uy - r.shift;
  const double w = 2.0 * kPi / r.wavelength;
  return r.amp * (0.7 * std::sin(w * u) + 0.3 * std::sin(2.0 * w * u + 1.1));
}

}  // namespace

skin::DeformationField contact_model(const SynthObject& obj,
                                     const JointState& joints, double t,
                                     const skin::MagnetometerLayout& layout,
                                     const skin::DipoleGrid& grid,
                                     const ContactConfig& contact) {
  skin::DeformationField field;
  field.displacements.assign(grid.dipoles.size(), Vec3{});

  const double flex = normalized_flexion(joints);
  const double depth =
      contact.press_gain * (kPressBase + kPressGainFlex * flex) +
      contact.extra_press;
  if (depth <= 0.0) return field;

  const double c = obj.compliance;
  const double peak = std::min(kMaxIndentation, depth / (1.0 + kPeakSoftening * c));
  const double area_radius =
      kAreaScale * std::sqrt(2.0 * obj.radius * depth) * (1.0 + kAreaGain * c);

  // Object drift over the palm, driven by the abduction joints; this is what
  // rubs the texture grain across the sensing grid.
  const auto& a = joints.angles;
  const double ox = kDriftGain * (0.9 * a[0] - 0.8 * a[3] + 0.4 * a[6]);
  const double oy = kDriftGain * (0.3 * a[0] + 0.5 * a[3] - 0.8 * a[7]);

  // Grain direction is the object's own; the rubbing motion belongs to the
  // interaction and is salted per recording.
  Rng grain(obj.seed);
  const double alpha = grain.uniform(0.0, 2.0 * kPi);
  Rng rub(obj.seed ^ (0xA24BAED4963EE407ULL * (contact.rub_seed + 1)));
  const double rub_freq = rub.uniform(0.7, 1.3);  // Hz
  const double rub_phase = rub.uniform(0.0, 2.0 * kPi);
  RippleParams ripple;
  ripple.ux = std::cos(alpha);
  ripple.uy = std::sin(alpha);
  ripple.shift = ox * ripple.ux + oy * ripple.uy +
                 0.3 * (oy * ripple.ux - ox * ripple.uy) +
                 2.5 * std::sin(2.0 * kPi * rub_freq * t + rub_phase);
  ripple.amp = obj.texture_amplitude / (1.0 + kRippleSoftening * c);
  ripple.wavelength = obj.texture_wavelength;

  const auto patches = skin::default_grid_patches(layout);
  const PatchPoses poses = forward_kinematics(joints);

  // Fingertip rest-pose patch centers; per-patch frames coincide with the
  // hand frame at the rest pose, so displacements are expressed there.
  const Vec3 rest_centers[3] = {
      {132.0, -35.0, 0.0}, {132.0, 35.0, 0.0}, {-120.0, 0.0, 0.0}};
  const Vec3 object_center{ox, oy, obj.radius - depth};

  double finger_depth[3] = {0.0, 0.0, 0.0};
  double finger_shift[3] = {0.0, 0.0, 0.0};
  for (int f = 0; f < 3; ++f) {
    const double dist = (poses.finger(f).position - object_center).norm();
    const double overlap = obj.radius + kFingerTouchMargin - dist;
    if (contact.scenario == ContactScenario::Grip && flex > 0.15) {
      finger_depth[f] = std::min(kMaxIndentation,
                                 0.8 * depth / (1.0 + kPeakSoftening * c));
    } else if (overlap > 0.0) {
      finger_depth[f] =
          std::min(kMaxIndentation,
                   0.15 * overlap / (1.0 + kPeakSoftening * c));
    }
    // Pad-local rubbing as the fingertip slides over the object surface.
    finger_shift[f] = 2.0 * (poses.finger(f).position.z - object_center.z);
  }

  for (std::size_t di = 0; di < grid.dipoles.size(); ++di) {
    const Vec3& p = grid.dipoles[di].rest_position;
    double total = 0.0;
    double shear = 0.0;
    if (patches[di] == skin::Patch::Palm) {
      const double dx = p.x - ox;
      const double dy = p.y - oy;
      const double rho2 = (dx * dx + dy * dy) / (area_radius * area_radius);
      if (rho2 >= 1.0) continue;
      const double wgt = 1.0 - rho2;
      total = (peak + ripple_at(ripple, p.x, p.y)) * wgt;
      shear = kShearFraction * ripple_at(ripple, p.x + 0.25 * ripple.wavelength,
                                         p.y) * wgt;
    } else {
      const int f = static_cast<int>(patches[di]);
      if (finger_depth[f] <= 0.0) continue;
      const Vec3 local = p - rest_centers[f];
      const double rho2 = (local.x * local.x + local.y * local.y) / (8.0 * 8.0);
      if (rho2 >= 1.0) continue;
      const double wgt = 1.0 - rho2;
      RippleParams fr = ripple;
      fr.shift = ripple.shift + finger_shift[f];
      total = (finger_depth[f] + ripple_at(fr, local.x, local.y)) * wgt;
      shear = kShearFraction * ripple_at(fr, local.x + 0.25 * fr.wavelength,
                                         local.y) * wgt;
    }
    if (total <= 0.0) continue;
    total = std::min(total, kMaxIndentation);
    field.displacements[di] =
        Vec3{ripple.ux, ripple.uy, 0.0} * shear + Vec3{0.0, 0.0, -total};
  }
  return field;
}

}  // namespace dmanus::hand
