#pragma once

#include <array>
#include <compare>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bimoment/moments.hpp"

namespace bimoment {

using Vec4 = std::array<double, 4>;

// PCA over 4D moment vectors. Rows of `components` are principal axes in
// descending eigenvalue order; each row's largest-magnitude entry is positive.
struct PCAModel {
  Vec4 mean{};
  std::array<Vec4, 4> components{};
  Vec4 eigenvalues{};

  Vec4 explained_variance_ratio() const;
};

PCAModel fit_pca(std::vector<Vec4> vectors);
Vec4 project(const PCAModel& model, const Vec4& v);
Vec4 reconstruct(const PCAModel& model, const Vec4& scores);

struct TrackKey {
  std::string state_label;
  int segment_id = 0;
  auto operator<=>(const TrackKey&) const = default;
};

struct TrackPoint {
  int time_index = 0;
  double time_fs = 0.0;
  Vec4 scores{};
};

// One time-ordered track per (state, segment), full 4D scores retained.
struct TrackSet {
  std::map<TrackKey, std::vector<TrackPoint>> tracks;

  std::size_t point_count() const;
};

TrackSet build_tracks(const PCAModel& model, const std::vector<MomentVector>& normalized);

// Axis numbers are 1-based PC indices, e.g. {1, 3}.
using AxisPair = std::pair<int, int>;
void validate_axes(const AxisPair& axes);
Point2 slice_point(const TrackPoint& p, const AxisPair& axes);

struct TrackMetrics {
  TrackKey key;
  double arc_length = 0.0;
  double bbox_area = 0.0;
  double max_step = 0.0;
};

// Sorted by descending bbox_area (ties by key).
std::vector<TrackMetrics> track_metrics(const TrackSet& tracks, const AxisPair& axes);

// All points of every track at one time index.
std::vector<std::pair<TrackKey, TrackPoint>> slice_time(const TrackSet& tracks, int time_index);

std::string pca_tracks_json(const PCAModel& model, const TrackSet& tracks);
std::string tracks_csv(const TrackSet& tracks);
std::pair<PCAModel, TrackSet> parse_pca_tracks_json(const std::string& text);

}  // namespace bimoment
