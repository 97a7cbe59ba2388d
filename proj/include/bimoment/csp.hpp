#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bimoment/field.hpp"
#include "bimoment/segmentation.hpp"

namespace bimoment {

using Point2 = std::array<double, 2>;

// Reserved segment ids. Atom ids are taken from the seeds and never negative
// in practice; these sit below kUnassigned.
inline constexpr int kBoundarySegment = -2;  // tets whose vertices straddle segments
inline constexpr int kFullDomain = -3;       // unpeeled CSP

std::string segment_key(int segment_id);
int parse_segment_key(const std::string& key);

struct Resolution {
  int r1 = 256;
  int r2 = 256;
  bool operator==(const Resolution&) const = default;
};

// Discrete continuous scatterplot. Bin (i1, i2) covers
// [min1 + i1*w1, min1 + (i1+1)*w1) x [min2 + i2*w2, ...); density stores the
// spatial volume mapped into the bin, f1-fastest.
struct CSPHistogram {
  RangeWindow window;
  Resolution res;
  std::vector<double> density;
  double out_of_window = 0.0;

  CSPHistogram() = default;
  CSPHistogram(const RangeWindow& w, Resolution r);

  double& at(int i1, int i2) { return density[static_cast<std::size_t>(i1) + static_cast<std::size_t>(res.r1) * i2]; }
  double at(int i1, int i2) const {
    return density[static_cast<std::size_t>(i1) + static_cast<std::size_t>(res.r1) * i2];
  }
  double total_mass() const;
  // Bin center in window-normalized [0,1]^2 coordinates.
  Point2 normalized_center(int i1, int i2) const {
    return {(i1 + 0.5) / res.r1, (i2 + 0.5) / res.r2};
  }
  Point2 center(int i1, int i2) const;
  std::size_t nonzero_bins() const;

  CSPHistogram& operator+=(const CSPHistogram& other);
};

// --- Tetrahedral decomposition -----------------------------------------------

using Tet = std::array<std::size_t, 4>;

// Six tets sharing the cell's main diagonal (0,0,0)-(1,1,1). The split is the
// same translated pattern in every cell, so shared faces get the same diagonal.
std::array<Tet, 6> tet_decompose(const GridSpec& grid, int ci, int cj, int ck);

// Corner offsets (bit 0 = x, bit 1 = y, bit 2 = z) of the six tets.
extern const std::array<std::array<int, 4>, 6> kFreudenthalCorners;

double tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

// --- Footprints --------------------------------------------------------------

enum class FootprintKind { kTriangle, kQuad, kSegment, kPoint };

// Image density of one linear tet: a tent with value `peak` at `apex`, falling
// linearly to zero on the hull boundary, integrating to `volume`. Segment and
// point footprints carry the full volume on a line or a single value.
struct TetFootprint {
  FootprintKind kind = FootprintKind::kPoint;
  std::vector<Point2> hull;  // counter-clockwise; 2 endpoints for segments, 1 for points
  Point2 apex{0.0, 0.0};
  double peak = 0.0;
  double volume = 0.0;

  double hull_area() const;
};

inline constexpr double kDegenerateAreaEpsilon = 1e-12;

TetFootprint tet_footprint(std::span<const Point2, 4> values, double volume,
                           double area_epsilon = kDegenerateAreaEpsilon);

// Deposits the footprint (given in the histogram's range coordinates) into
// hist. Tent mass is integrated exactly over every overlapped bin and then
// rescaled so that deposited + out-of-window mass equals fp.volume.
void rasterize_footprint(const TetFootprint& fp, CSPHistogram& hist);

// --- CSP computation ---------------------------------------------------------

struct CSPOptions {
  // 0 = default (BIMOMENT_THREADS or hardware concurrency). Per-thread
  // histograms are merged in a fixed order, so a given thread count is
  // reproducible; strict forces a single accumulator.
  int threads = 0;
  bool strict = false;
};

int default_thread_count();

using TetMask = std::function<bool(const Tet&)>;

CSPHistogram compute_csp(const BivariateField& field, const RangeWindow& window, Resolution res,
                         const TetMask& mask = {}, const CSPOptions& opts = {});

// Peel for one segment, or kBoundarySegment for straddling tets.
CSPHistogram peel_csp(const BivariateField& field, const LabelGrid& labels, int segment_id,
                      const RangeWindow& window, Resolution res, const CSPOptions& opts = {});

// All peels (every seeding atom plus kBoundarySegment) in one pass.
std::map<int, CSPHistogram> peel_all(const BivariateField& field, const LabelGrid& labels,
                                     const RangeWindow& window, Resolution res, const CSPOptions& opts = {});

// Brute-force reference: stratified uniform samples over the domain with
// trilinear evaluation, each carrying domain_volume / n_samples.
CSPHistogram mc_csp_oracle(const BivariateField& field, const RangeWindow& window, Resolution res,
                           std::size_t n_samples, std::uint64_t rng_seed);

// Sum of |a - b| over bins. Histograms must share window and resolution.
double l1_distance(const CSPHistogram& a, const CSPHistogram& b);

// --- Persistence -------------------------------------------------------------

struct CSPMeta {
  int segment_id = kFullDomain;
  int time_index = 0;
  std::string state_label;
};

// float64 bins at <stem>.bin plus a JSON sidecar at <stem>.json.
void write_csp(const std::filesystem::path& stem, const CSPHistogram& hist, const CSPMeta& meta);
std::pair<CSPHistogram, CSPMeta> read_csp(const std::filesystem::path& stem);
std::string csp_sidecar_json(const CSPHistogram& hist, const CSPMeta& meta);

// PNG of log(1 + d) through a light-to-dark yellow map, f2 pointing up.
void render_csp_png(const CSPHistogram& hist, const std::filesystem::path& path);
std::array<std::uint8_t, 3> yellow_colormap(double t);

}  // namespace bimoment
