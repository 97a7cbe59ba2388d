#include "bimoment/embedding.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <json.hpp>

namespace bimoment {

Vec4 PCAModel::explained_variance_ratio() const {
  const double total = eigenvalues[0] + eigenvalues[1] + eigenvalues[2] + eigenvalues[3];
  Vec4 r{};
  if (total > 0.0)
    for (int i = 0; i < 4; ++i) r[i] = eigenvalues[i] / total;
  return r;
}

PCAModel fit_pca(std::vector<Vec4> vectors) {
  if (vectors.size() < 2) throw ValidationError("PCA needs at least two vectors");
  // Canonical order makes the fit independent of input order, bit for bit.
  std::sort(vectors.begin(), vectors.end());

  const double n = static_cast<double>(vectors.size());
  PCAModel model;
  for (const auto& v : vectors)
    for (int i = 0; i < 4; ++i) model.mean[i] += v[i];
  for (auto& m : model.mean) m /= n;

  Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
  for (const auto& v : vectors) {
    Eigen::Vector4d d(v[0] - model.mean[0], v[1] - model.mean[1], v[2] - model.mean[2], v[3] - model.mean[3]);
    cov.noalias() += d * d.transpose();
  }
  cov /= (n - 1.0);

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("PCA eigendecomposition failed");

  // Eigen sorts ascending.
  for (int r = 0; r < 4; ++r) {
    const int c = 3 - r;
    model.eigenvalues[r] = std::max(0.0, solver.eigenvalues()(c));
    Vec4 axis;
    for (int i = 0; i < 4; ++i) axis[i] = solver.eigenvectors()(i, c);
    int big = 0;
    for (int i = 1; i < 4; ++i)
      if (std::abs(axis[i]) > std::abs(axis[big])) big = i;
    if (axis[big] < 0.0)
      for (auto& a : axis) a = -a;
    model.components[r] = axis;
  }
  return model;
}

Vec4 project(const PCAModel& model, const Vec4& v) {
  Vec4 s{};
  for (int r = 0; r < 4; ++r)
    for (int i = 0; i < 4; ++i) s[r] += model.components[r][i] * (v[i] - model.mean[i]);
  return s;
}

Vec4 reconstruct(const PCAModel& model, const Vec4& scores) {
  Vec4 v = model.mean;
  for (int r = 0; r < 4; ++r)
    for (int i = 0; i < 4; ++i) v[i] += model.components[r][i] * scores[r];
  return v;
}

std::size_t TrackSet::point_count() const {
  std::size_t n = 0;
  for (const auto& [k, t] : tracks) n += t.size();
  return n;
}

TrackSet build_tracks(const PCAModel& model, const std::vector<MomentVector>& normalized) {
  TrackSet set;
  for (const auto& m : normalized) {
    if (!m.normalized) throw ValidationError("tracks are built from normalized moment vectors");
    const auto& p = m.provenance;
    set.tracks[{p.state_label, p.segment_id}].push_back({p.time_index, p.time_fs, project(model, m.values())});
  }
  for (auto& [key, track] : set.tracks) {
    std::sort(track.begin(), track.end(), [](const TrackPoint& a, const TrackPoint& b) {
      return a.time_index < b.time_index;
    });
    for (std::size_t i = 1; i < track.size(); ++i) {
      if (track[i].time_index == track[i - 1].time_index)
        throw ValidationError(fmt::format("duplicate moment vector for state '{}', segment {}, time index {}",
                                          key.state_label, segment_key(key.segment_id), track[i].time_index));
      if (!(track[i].time_fs > track[i - 1].time_fs))
        throw ValidationError(fmt::format("track '{}'/{} has non-increasing time stamps", key.state_label,
                                          segment_key(key.segment_id)));
    }
  }
  return set;
}

void validate_axes(const AxisPair& axes) {
  const auto ok = [](int a) { return a >= 1 && a <= 4; };
  if (!ok(axes.first) || !ok(axes.second) || axes.first == axes.second)
    throw ValidationError(fmt::format("invalid axis pair ({}, {}); expected two distinct PCs in 1..4", axes.first,
                                      axes.second));
}

Point2 slice_point(const TrackPoint& p, const AxisPair& axes) {
  return {p.scores[axes.first - 1], p.scores[axes.second - 1]};
}

std::vector<TrackMetrics> track_metrics(const TrackSet& tracks, const AxisPair& axes) {
  validate_axes(axes);
  std::vector<TrackMetrics> out;
  for (const auto& [key, track] : tracks.tracks) {
    TrackMetrics m;
    m.key = key;
    if (!track.empty()) {
      auto lo = slice_point(track.front(), axes), hi = lo;
      for (std::size_t i = 0; i < track.size(); ++i) {
        const auto p = slice_point(track[i], axes);
        for (int a = 0; a < 2; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a]);
        }
        if (i > 0) {
          const auto q = slice_point(track[i - 1], axes);
          const double step = std::hypot(p[0] - q[0], p[1] - q[1]);
          m.arc_length += step;
          m.max_step = std::max(m.max_step, step);
        }
      }
      m.bbox_area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    }
    out.push_back(m);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const TrackMetrics& a, const TrackMetrics& b) { return a.bbox_area > b.bbox_area; });
  return out;
}

std::vector<std::pair<TrackKey, TrackPoint>> slice_time(const TrackSet& tracks, int time_index) {
  std::vector<std::pair<TrackKey, TrackPoint>> out;
  for (const auto& [key, track] : tracks.tracks)
    for (const auto& p : track)
      if (p.time_index == time_index) out.emplace_back(key, p);
  return out;
}

std::string pca_tracks_json(const PCAModel& model, const TrackSet& tracks) {
  nlohmann::ordered_json j;
  auto& m = j["model"];
  m["mean"] = model.mean;
  m["components"] = model.components;
  m["eigenvalues"] = model.eigenvalues;
  m["explained_variance_ratio"] = model.explained_variance_ratio();
  m["loadings"] = nlohmann::ordered_json::array();
  static const std::array<const char*, 4> kNames{"M00", "M20", "M11", "M02"};
  for (int r = 0; r < 4; ++r) {
    nlohmann::ordered_json l;
    l["component"] = fmt::format("PC{}", r + 1);
    for (int i = 0; i < 4; ++i) l[kNames[i]] = model.components[r][i];
    m["loadings"].push_back(l);
  }
  auto& arr = j["tracks"] = nlohmann::ordered_json::array();
  for (const auto& [key, track] : tracks.tracks) {
    nlohmann::ordered_json t;
    t["state_label"] = key.state_label;
    t["segment_id"] = key.segment_id;
    t["points"] = nlohmann::ordered_json::array();
    for (const auto& p : track)
      t["points"].push_back({{"time_index", p.time_index}, {"time_fs", p.time_fs}, {"scores", p.scores}});
    arr.push_back(t);
  }
  return j.dump(1) + "\n";
}

std::string tracks_csv(const TrackSet& tracks) {
  std::string out = "state_label,segment_id,time_index,time_fs,pc1,pc2,pc3,pc4\n";
  for (const auto& [key, track] : tracks.tracks)
    for (const auto& p : track)
      out += fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", key.state_label,
                         segment_key(key.segment_id), p.time_index, p.time_fs, p.scores[0], p.scores[1], p.scores[2],
                         p.scores[3]);
  return out;
}

std::pair<PCAModel, TrackSet> parse_pca_tracks_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  PCAModel model;
  const auto& m = j.at("model");
  model.mean = m.at("mean").get<Vec4>();
  model.components = m.at("components").get<std::array<Vec4, 4>>();
  model.eigenvalues = m.at("eigenvalues").get<Vec4>();
  TrackSet set;
  for (const auto& t : j.at("tracks")) {
    auto& track = set.tracks[{t.at("state_label").get<std::string>(), t.at("segment_id").get<int>()}];
    for (const auto& p : t.at("points"))
      track.push_back({p.at("time_index").get<int>(), p.at("time_fs").get<double>(), p.at("scores").get<Vec4>()});
  }
  return {model, set};
}

}  // namespace bimoment
