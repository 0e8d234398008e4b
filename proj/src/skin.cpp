#include "dmanus/skin.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dmanus/rng.hpp"

namespace dmanus::skin {

namespace {

// mu0/4pi in microtesla * mm^3 / (A*mm^2)
constexpr double kFieldConstant = 100.0;

constexpr int kPalmCols = 8;   // along x (finger direction)
constexpr int kPalmRows = 4;   // along y
constexpr double kPalmPitch = 14.0;
constexpr int kFingerCols = 4;  // along local x
constexpr int kFingerRows = 2;
constexpr double kFingerPitch = 4.0;

// Fingertip patch centers in the rest (open hand) pose. Finger chains are
// defined in hand.cpp; these are the zero-angle patch poses.
const Vec3 kFinger1Patch{132.0, -35.0, 0.0};
const Vec3 kFinger2Patch{132.0, 35.0, 0.0};
const Vec3 kThumbPatch{-120.0, 0.0, 0.0};

}  // namespace

const char* patch_name(Patch p) {
  switch (p) {
    case Patch::Finger1: return "finger1";
    case Patch::Finger2: return "finger2";
    case Patch::Finger3: return "finger3";
    case Patch::Palm: return "palm";
  }
  return "?";
}

Patch patch_from_name(const std::string& name) {
  if (name == "finger1") return Patch::Finger1;
  if (name == "finger2") return Patch::Finger2;
  if (name == "finger3") return Patch::Finger3;
  if (name == "palm") return Patch::Palm;
  throw FormatError("unknown patch name: " + name);
}

void MagnetometerLayout::validate() const {
  if (sites.size() != kNumSites)
    throw FormatError("layout must have exactly 56 sites");
  std::array<int, 4> per_patch{0, 0, 0, 0};
  std::array<bool, kNumSites> seen{};
  for (const auto& s : sites) {
    if (s.id < 0 || s.id >= kNumSites || seen[s.id])
      throw FormatError("site ids must be unique and dense in 0..55");
    seen[s.id] = true;
    per_patch[static_cast<int>(s.patch)]++;
    if (std::abs(s.orientation.norm() - 1.0) > 1e-6)
      throw FormatError("site orientation must be a unit quaternion");
  }
  if (per_patch[0] != kSitesPerFinger || per_patch[1] != kSitesPerFinger ||
      per_patch[2] != kSitesPerFinger || per_patch[3] != kPalmSites)
    throw FormatError("layout must have 8 sites per fingertip and 32 palm sites");
  for (const auto& s : sites) {
    if (s.patch == Patch::Palm &&
        (std::abs(s.position.x) > 55.0 || std::abs(s.position.y) > 60.0))
      throw FormatError("palm sites must lie inside the 110x120 mm area");
  }
}

MagnetometerLayout default_layout() {
  MagnetometerLayout layout;
  layout.sites.reserve(kNumSites);
  int id = 0;

  auto add_finger = [&](const Vec3& center, const Quat& orient, Patch patch) {
    for (int row = 0; row < kFingerRows; ++row) {
      for (int col = 0; col < kFingerCols; ++col) {
        const Vec3 local{(col - (kFingerCols - 1) / 2.0) * kFingerPitch,
                         (row - (kFingerRows - 1) / 2.0) * kFingerPitch, 0.0};
        layout.sites.push_back(
            {id++, orient.rotate(local) + center, orient, patch});
      }
    }
  };

  add_finger(kFinger1Patch, Quat{}, Patch::Finger1);
  add_finger(kFinger2Patch, Quat{}, Patch::Finger2);
  // exact half-turn about z, matching the thumb mount
  add_finger(kThumbPatch, Quat{0.0, 0.0, 0.0, 1.0}, Patch::Finger3);

  for (int row = 0; row < kPalmRows; ++row) {
    for (int col = 0; col < kPalmCols; ++col) {
      const Vec3 pos{(col - (kPalmCols - 1) / 2.0) * kPalmPitch,
                     (row - (kPalmRows - 1) / 2.0) * kPalmPitch, 0.0};
      layout.sites.push_back({id++, pos, Quat{}, Patch::Palm});
    }
  }
  layout.validate();
  return layout;
}

std::string serialize_layout(const MagnetometerLayout& layout) {
  std::ostringstream out;
  out.precision(17);
  out << "DMLAYOUT 1 " << layout.sites.size() << "\n";
  for (const auto& s : layout.sites) {
    out << s.id << ' ' << patch_name(s.patch) << ' ' << s.position.x << ' '
        << s.position.y << ' ' << s.position.z << ' ' << s.orientation.w << ' '
        << s.orientation.x << ' ' << s.orientation.y << ' ' << s.orientation.z
        << "\n";
  }
  return out.str();
}

MagnetometerLayout parse_layout(std::istream& in) {
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  if (!(in >> magic >> version >> count) || magic != "DMLAYOUT")
    throw FormatError("bad layout header");
  if (version != 1) throw FormatError("unsupported layout version");
  MagnetometerLayout layout;
  layout.sites.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& s = layout.sites[i];
    std::string patch;
    if (!(in >> s.id >> patch >> s.position.x >> s.position.y >> s.position.z >>
          s.orientation.w >> s.orientation.x >> s.orientation.y >>
          s.orientation.z))
      throw FormatError("truncated layout file");
    s.patch = patch_from_name(patch);
  }
  layout.validate();
  return layout;
}

MagnetometerLayout load_layout(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open layout file: " + path);
  return parse_layout(in);
}

void save_layout(const MagnetometerLayout& layout, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write layout file: " + path);
  out << serialize_layout(layout);
}

DipoleGrid default_grid(const MagnetometerLayout& layout,
                        double magnetization_scale) {
  DipoleGrid grid;
  grid.magnetization_scale = magnetization_scale;
  for (const auto& s : layout.sites) {
    const Vec3 up = s.orientation.rotate({0.0, 0.0, 1.0});
    grid.dipoles.push_back({s.position + kDipoleHeight * up,
                            kSiteMoment * up});
    if (s.patch == Patch::Palm) {
      for (int k = 0; k < 8; ++k) {
        const double a = k * 0.78539816339744830962;  // pi/4
        const Vec3 offset{kRingRadius * std::cos(a), kRingRadius * std::sin(a),
                          0.0};
        grid.dipoles.push_back(
            {s.position + offset + kDipoleHeight * up, kRingMoment * up});
      }
    }
  }
  return grid;
}

std::vector<Patch> default_grid_patches(const MagnetometerLayout& layout) {
  std::vector<Patch> patches;
  for (const auto& s : layout.sites) {
    patches.push_back(s.patch);
    if (s.patch == Patch::Palm)
      for (int k = 0; k < 8; ++k) patches.push_back(Patch::Palm);
  }
  return patches;
}

bool DeformationField::is_zero() const {
  for (const auto& d : displacements)
    if (d.x != 0.0 || d.y != 0.0 || d.z != 0.0) return false;
  return true;
}

Vec3 dipole_flux(const Vec3& moment, const Vec3& source_pos,
                 const Vec3& sensor_pos) {
  const Vec3 r = sensor_pos - source_pos;
  const double dist = r.norm();
  if (dist <= kMinSeparation)
    throw SingularityError("sensor within 0.1 mm of dipole");
  const double inv = 1.0 / dist;
  const Vec3 rh = r * inv;
  const double mdotr = moment.dot(rh);
  const double inv3 = inv * inv * inv;
  return kFieldConstant * inv3 * (3.0 * mdotr * rh - moment);
}

namespace {

// Accumulates sum_j flux_j rotated into each site frame; caller applies the
// magnetization scale. `displaced` may be null (rest state).
void accumulate(const MagnetometerLayout& layout, const DipoleGrid& grid,
                const DeformationField* deform, bool delta,
                std::array<double, kFluxDim>& out) {
  out.fill(0.0);
  for (std::size_t si = 0; si < layout.sites.size(); ++si) {
    const auto& site = layout.sites[si];
    double ax = 0.0, ay = 0.0, az = 0.0;
    for (std::size_t di = 0; di < grid.dipoles.size(); ++di) {
      const auto& d = grid.dipoles[di];
      if (delta) {
        const Vec3& disp = deform->displacements[di];
        if (disp.x == 0.0 && disp.y == 0.0 && disp.z == 0.0) continue;
        const Vec3 moved =
            dipole_flux(d.moment, d.rest_position + disp, site.position);
        const Vec3 rest = dipole_flux(d.moment, d.rest_position, site.position);
        ax += moved.x - rest.x;
        ay += moved.y - rest.y;
        az += moved.z - rest.z;
      } else {
        const Vec3 b = dipole_flux(d.moment, d.rest_position, site.position);
        ax += b.x;
        ay += b.y;
        az += b.z;
      }
    }
    const Vec3 local = site.orientation.rotate_inv({ax, ay, az});
    out[site.id * 3 + 0] = local.x;
    out[site.id * 3 + 1] = local.y;
    out[site.id * 3 + 2] = local.z;
  }
}

}  // namespace

std::array<double, kFluxDim> flux_deviation(const MagnetometerLayout& layout,
                                            const DipoleGrid& grid,
                                            const DeformationField& deform) {
  if (deform.displacements.size() != grid.dipoles.size())
    throw DimensionMismatch("deformation field size != dipole count");
  std::array<double, kFluxDim> acc;
  accumulate(layout, grid, &deform, /*delta=*/true, acc);
  for (double& v : acc) v *= grid.magnetization_scale;
  return acc;
}

std::array<double, kFluxDim> baseline_accum(const MagnetometerLayout& layout,
                                            const DipoleGrid& grid) {
  std::array<double, kFluxDim> acc;
  accumulate(layout, grid, nullptr, /*delta=*/false, acc);
  for (double& v : acc) v *= grid.magnetization_scale;
  return acc;
}

FluxFrame baseline_field(const MagnetometerLayout& layout,
                         const DipoleGrid& grid) {
  const auto acc = baseline_accum(layout, grid);
  FluxFrame frame;
  for (int i = 0; i < kFluxDim; ++i) frame.values[i] = wire_quantize(acc[i]);
  return frame;
}

FluxFrame skin_response(const MagnetometerLayout& layout,
                        const DipoleGrid& grid,
                        const DeformationField& deform,
                        const std::array<double, kFluxDim>& baseline) {
  const auto dev = flux_deviation(layout, grid, deform);
  FluxFrame frame;
  for (int i = 0; i < kFluxDim; ++i)
    frame.values[i] = wire_quantize(baseline[i] + dev[i]);
  return frame;
}

FluxFrame skin_response(const MagnetometerLayout& layout,
                        const DipoleGrid& grid,
                        const DeformationField& deform) {
  return skin_response(layout, grid, deform, baseline_accum(layout, grid));
}

FluxFrame add_sensor_noise(const FluxFrame& frame, double noise_sigma,
                           std::uint64_t rng_seed) {
  if (noise_sigma == 0.0) return frame;
  Rng rng(rng_seed);
  FluxFrame out = frame;
  for (auto& v : out.values)
    v = wire_quantize(v + noise_sigma * rng.gaussian());
  return out;
}

}  // namespace dmanus::skin
