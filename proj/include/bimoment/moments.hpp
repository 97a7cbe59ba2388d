#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bimoment/csp.hpp"

namespace bimoment {

struct Provenance {
  std::string state_label;
  int segment_id = kFullDomain;
  int time_index = 0;
  double time_fs = 0.0;

  auto operator<=>(const Provenance&) const = default;
};

// [M00, M20, M11, M02] of one CSP.
struct MomentVector {
  double m00 = 0.0, m20 = 0.0, m11 = 0.0, m02 = 0.0;
  bool normalized = false;
  Provenance provenance;

  std::array<double, 4> values() const { return {m00, m20, m11, m02}; }
};

// Min-max pools: order p = i + j (M20, M11 and M02 share a pool) or one pool
// per component.
enum class Pooling { kPerOrder, kPerComponent };

Pooling parse_pooling(const std::string& name);
std::string to_string(Pooling p);

// What log(1 + d) is taken of: the stored bin volume, or volume per unit
// range-space area (bin volume / bin area in f1*f2 units).
enum class MomentWeight { kBinVolume, kRangeDensity };

MomentWeight parse_moment_weight(const std::string& name);
std::string to_string(MomentWeight w);

// sum_x sum_y x^i y^j I(x, y) with x, y the pixel centers in [0,1]^2.
// `image` is width*height, x-fastest.
double raw_moment(std::span<const double> image, int width, int height, int i, int j);

// Moments of log(1 + d) over window-normalized bin centers.
MomentVector csp_moments(const CSPHistogram& hist, const Provenance& provenance = {},
                         MomentWeight weight = MomentWeight::kBinVolume);

std::vector<MomentVector> normalize_moments(const std::vector<MomentVector>& raw,
                                            Pooling pooling = Pooling::kPerOrder);

// Orientation (degrees, in (-90, 90]) of the density's principal axis, from
// the central second moments of d over bin centers in range units.
double principal_axis_angle_deg(const CSPHistogram& hist);

// Rows keyed by provenance; raw and normalized must be parallel.
std::string moments_csv(const std::vector<MomentVector>& raw, const std::vector<MomentVector>& normalized);
std::string moments_json(const std::vector<MomentVector>& raw, const std::vector<MomentVector>& normalized,
                         Pooling pooling, MomentWeight weight = MomentWeight::kBinVolume);

struct MomentTable {
  std::vector<MomentVector> raw;
  std::vector<MomentVector> normalized;
  Pooling pooling = Pooling::kPerOrder;
  MomentWeight weight = MomentWeight::kBinVolume;
};

MomentTable parse_moments_json(const std::string& text);

}  // namespace bimoment
