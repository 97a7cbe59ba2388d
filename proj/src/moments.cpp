#include "bimoment/moments.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <json.hpp>

namespace bimoment {

Pooling parse_pooling(const std::string& name) {
  if (name == "per-order") return Pooling::kPerOrder;
  if (name == "per-component") return Pooling::kPerComponent;
  throw ValidationError(fmt::format("unknown moment pooling '{}'", name));
}

std::string to_string(Pooling p) { return p == Pooling::kPerOrder ? "per-order" : "per-component"; }

MomentWeight parse_moment_weight(const std::string& name) {
  if (name == "bin-volume") return MomentWeight::kBinVolume;
  if (name == "range-density") return MomentWeight::kRangeDensity;
  throw ValidationError(fmt::format("unknown moment weight '{}'", name));
}

std::string to_string(MomentWeight w) { return w == MomentWeight::kBinVolume ? "bin-volume" : "range-density"; }

double raw_moment(std::span<const double> image, int width, int height, int i, int j) {
  if (i < 0 || j < 0) throw ValidationError("moment orders must be non-negative");
  if (width < 1 || height < 1 || image.size() != static_cast<std::size_t>(width) * height)
    throw ValidationError("image size does not match its dimensions");
  double m = 0.0;
  for (int y = 0; y < height; ++y) {
    const double yc = std::pow((y + 0.5) / height, j);
    for (int x = 0; x < width; ++x)
      m += std::pow((x + 0.5) / width, i) * yc * image[static_cast<std::size_t>(x) + static_cast<std::size_t>(width) * y];
  }
  return m;
}

MomentVector csp_moments(const CSPHistogram& hist, const Provenance& provenance, MomentWeight weight) {
  MomentVector m;
  m.provenance = provenance;
  const double bin_area = hist.window.width1() / hist.res.r1 * (hist.window.width2() / hist.res.r2);
  const double scale = weight == MomentWeight::kRangeDensity ? 1.0 / bin_area : 1.0;
  for (int y = 0; y < hist.res.r2; ++y)
    for (int x = 0; x < hist.res.r1; ++x) {
      const double d = hist.at(x, y);
      if (d == 0.0) continue;
      const double w = std::log1p(d * scale);
      const auto [u, v] = hist.normalized_center(x, y);
      m.m00 += w;
      m.m20 += u * u * w;
      m.m11 += u * v * w;
      m.m02 += v * v * w;
    }
  return m;
}

namespace {

struct Pool {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double scale(double v) const { return hi > lo ? (v - lo) / (hi - lo) : 0.0; }
};

}  // namespace

std::vector<MomentVector> normalize_moments(const std::vector<MomentVector>& raw, Pooling pooling) {
  if (raw.empty()) throw ValidationError("normalization needs at least one moment vector");
  std::array<Pool, 4> pools;
  for (const auto& m : raw) {
    if (m.normalized) throw ValidationError("normalize_moments expects raw moment vectors");
    const auto v = m.values();
    for (int c = 0; c < 4; ++c) {
      const int p = pooling == Pooling::kPerOrder ? (c == 0 ? 0 : 1) : c;
      pools[p].add(v[c]);
    }
  }
  std::vector<MomentVector> out;
  out.reserve(raw.size());
  for (const auto& m : raw) {
    auto pool = [&](int c) -> const Pool& { return pools[pooling == Pooling::kPerOrder ? (c == 0 ? 0 : 1) : c]; };
    MomentVector n;
    n.provenance = m.provenance;
    n.normalized = true;
    n.m00 = pool(0).scale(m.m00);
    n.m20 = pool(1).scale(m.m20);
    n.m11 = pool(2).scale(m.m11);
    n.m02 = pool(3).scale(m.m02);
    out.push_back(n);
  }
  return out;
}

double principal_axis_angle_deg(const CSPHistogram& hist) {
  double m0 = 0.0, mx = 0.0, my = 0.0;
  for (int y = 0; y < hist.res.r2; ++y)
    for (int x = 0; x < hist.res.r1; ++x) {
      const double d = hist.at(x, y);
      const auto [u, v] = hist.center(x, y);
      m0 += d;
      mx += u * d;
      my += v * d;
    }
  if (!(m0 > 0.0)) throw ValidationError("principal axis of an empty CSP is undefined");
  const double cx = mx / m0, cy = my / m0;
  double mu20 = 0.0, mu11 = 0.0, mu02 = 0.0;
  for (int y = 0; y < hist.res.r2; ++y)
    for (int x = 0; x < hist.res.r1; ++x) {
      const double d = hist.at(x, y);
      const auto [u, v] = hist.center(x, y);
      mu20 += (u - cx) * (u - cx) * d;
      mu11 += (u - cx) * (v - cy) * d;
      mu02 += (v - cy) * (v - cy) * d;
    }
  return 0.5 * std::atan2(2.0 * mu11, mu20 - mu02) * 180.0 / std::numbers::pi;
}

std::string moments_csv(const std::vector<MomentVector>& raw, const std::vector<MomentVector>& normalized) {
  if (raw.size() != normalized.size()) throw ValidationError("raw and normalized moment lists differ in length");
  std::string out = "state_label,segment_id,time_index,time_fs,m00,m20,m11,m02,m00_n,m20_n,m11_n,m02_n\n";
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    const auto& n = normalized[i];
    out += fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n",
                       r.provenance.state_label, segment_key(r.provenance.segment_id), r.provenance.time_index,
                       r.provenance.time_fs, r.m00, r.m20, r.m11, r.m02, n.m00, n.m20, n.m11, n.m02);
  }
  return out;
}

std::string moments_json(const std::vector<MomentVector>& raw, const std::vector<MomentVector>& normalized,
                         Pooling pooling, MomentWeight weight) {
  if (raw.size() != normalized.size()) throw ValidationError("raw and normalized moment lists differ in length");
  nlohmann::ordered_json j;
  j["pooling"] = to_string(pooling);
  j["weight"] = to_string(weight);
  auto& rows = j["rows"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& p = raw[i].provenance;
    rows.push_back({{"state_label", p.state_label},
                    {"segment_id", p.segment_id},
                    {"time_index", p.time_index},
                    {"time_fs", p.time_fs},
                    {"raw", raw[i].values()},
                    {"normalized", normalized[i].values()}});
  }
  return j.dump(1) + "\n";
}

MomentTable parse_moments_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MomentTable t;
  t.pooling = parse_pooling(j.value("pooling", std::string("per-order")));
  t.weight = parse_moment_weight(j.value("weight", std::string("bin-volume")));
  for (const auto& row : j.at("rows")) {
    Provenance p{row.at("state_label").get<std::string>(), row.at("segment_id").get<int>(),
                 row.at("time_index").get<int>(), row.at("time_fs").get<double>()};
    auto make = [&](const nlohmann::json& a, bool normalized) {
      MomentVector m;
      m.m00 = a.at(0).get<double>();
      m.m20 = a.at(1).get<double>();
      m.m11 = a.at(2).get<double>();
      m.m02 = a.at(3).get<double>();
      m.normalized = normalized;
      m.provenance = p;
      return m;
    };
    t.raw.push_back(make(row.at("raw"), false));
    t.normalized.push_back(make(row.at("normalized"), true));
  }
  return t;
}

}  // namespace bimoment
