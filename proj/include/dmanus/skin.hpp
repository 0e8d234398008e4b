#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dmanus/errors.hpp"
#include "dmanus/geom.hpp"

namespace dmanus::skin {

// Flux vector per frame: 56 sites x 3 axes, flattened in site-id order.
inline constexpr int kNumSites = 56;
inline constexpr int kSitesPerFinger = 8;
inline constexpr int kPalmSites = 32;
inline constexpr int kFluxDim = kNumSites * 3;

enum class Patch : std::uint8_t { Finger1 = 0, Finger2 = 1, Finger3 = 2, Palm = 3 };

const char* patch_name(Patch p);
Patch patch_from_name(const std::string& name);

struct MagnetometerSite {
  int id = 0;
  Vec3 position;     // mm, hand frame, rest pose
  Quat orientation;  // unit quaternion, site frame -> hand frame
  Patch patch = Patch::Palm;
};

struct MagnetometerLayout {
  std::vector<MagnetometerSite> sites;

  // Throws FormatError if the 56-site structure or patch counts are broken.
  void validate() const;
};

// One fingertip pad: 2x4 site grid at 4 mm pitch. Palm: 4x8 grid at 14 mm
// pitch inside the 110 x 120 mm sensing rectangle. Site ids run finger1,
// finger2, finger3(thumb), palm.
MagnetometerLayout default_layout();

// Text serialization: header "DMLAYOUT 1 56", then one line per site:
// id patch x y z qw qx qy qz
std::string serialize_layout(const MagnetometerLayout& layout);
MagnetometerLayout parse_layout(std::istream& in);
MagnetometerLayout load_layout(const std::string& path);
void save_layout(const MagnetometerLayout& layout, const std::string& path);

struct Dipole {
  Vec3 rest_position;  // mm, hand frame
  Vec3 moment;         // A*mm^2
};

struct DipoleGrid {
  std::vector<Dipole> dipoles;
  double magnetization_scale = 1.0;
};

// One dipole per site at kDipoleHeight above it, plus an 8-dipole ring of
// radius kRingRadius per palm site.
inline constexpr double kDipoleHeight = 1.4;   // mm above site plane
inline constexpr double kRingRadius = 5.0;     // mm
inline constexpr double kSiteMoment = 1.0;     // A*mm^2, +z at rest
inline constexpr double kRingMoment = 0.125;   // A*mm^2

DipoleGrid default_grid(const MagnetometerLayout& layout,
                        double magnetization_scale = 1.0);

// Which patch each dipole of default_grid() belongs to, in grid order.
std::vector<Patch> default_grid_patches(const MagnetometerLayout& layout);

struct DeformationField {
  std::vector<Vec3> displacements;  // mm, one per dipole

  bool is_zero() const;
};

// Flux values carried on the wire are 32-bit floats; producers quantize
// through this so in-memory frames and their wire encoding agree bit for bit.
inline double wire_quantize(double v) {
  return static_cast<double>(static_cast<float>(v));
}

struct FluxFrame {
  std::uint32_t seq = 0;
  std::uint64_t timestamp_ns = 0;
  // microtesla; produced frames are wire-quantized, derived frames (such as
  // baseline-subtracted data) may carry full precision
  std::array<double, kFluxDim> values{};

  double& at(int site, int axis) { return values[site * 3 + axis]; }
  double at(int site, int axis) const { return values[site * 3 + axis]; }

  bool operator==(const FluxFrame&) const = default;
};

// Point-dipole field in microtesla; positions in mm, moment in A*mm^2.
// Throws SingularityError when |sensor - source| <= 0.1 mm.
Vec3 dipole_flux(const Vec3& moment, const Vec3& source_pos,
                 const Vec3& sensor_pos);

inline constexpr double kMinSeparation = 0.1;  // mm

// Per-component flux deviation from the rest field, in double precision:
// scale * sum_j [flux(displaced_j) - flux(rest_j)] rotated into each site
// frame. The single trailing multiply is what makes magnetization-scale
// equivariance exact in floating point.
std::array<double, kFluxDim> flux_deviation(const MagnetometerLayout& layout,
                                            const DipoleGrid& grid,
                                            const DeformationField& deform);

// Rest-state flux sums (already scaled by magnetization_scale), double
// precision; baseline_field() is the FluxFrame quantization of this.
std::array<double, kFluxDim> baseline_accum(const MagnetometerLayout& layout,
                                            const DipoleGrid& grid);

FluxFrame baseline_field(const MagnetometerLayout& layout,
                         const DipoleGrid& grid);

// baseline + deviation, quantized to the frame's 32-bit storage.
// Throws DimensionMismatch when deform and grid sizes differ.
FluxFrame skin_response(const MagnetometerLayout& layout,
                        const DipoleGrid& grid,
                        const DeformationField& deform);

// Cached-baseline variant used by the recorder's inner loop.
FluxFrame skin_response(const MagnetometerLayout& layout,
                        const DipoleGrid& grid,
                        const DeformationField& deform,
                        const std::array<double, kFluxDim>& baseline);

// i.i.d. zero-mean Gaussian perturbation per component, seed-deterministic.
// sigma = 0 returns the frame unchanged.
FluxFrame add_sensor_noise(const FluxFrame& frame, double noise_sigma,
                           std::uint64_t rng_seed);

inline constexpr double kDefaultNoiseSigma = 2.0;  // microtesla

}  // namespace dmanus::skin
