#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "bimoment/embedding.hpp"
#include "oracles.hpp"

using namespace bimoment;

namespace {

std::vector<Vec4> random_vectors(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec4> v;
  // Correlated columns so the spectrum is spread out.
  for (int i = 0; i < n; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    v.push_back({a, 0.6 * a + 0.3 * b, 0.2 * a + 0.1 * b + 0.05 * c, 0.4 * c + 0.01 * d});
  }
  return v;
}

MomentVector normalized_mv(const std::string& state, int seg, int t, const Vec4& v) {
  MomentVector m;
  m.m00 = v[0];
  m.m20 = v[1];
  m.m11 = v[2];
  m.m02 = v[3];
  m.normalized = true;
  m.provenance = {state, seg, t, 0.5 * t};
  return m;
}

}  // namespace

TEST_CASE("PCA matches a Jacobi eigensolver") {
  std::mt19937_64 rng(2023);
  for (int trial = 0; trial < 50; ++trial) {
    const auto v = random_vectors(rng, 50);
    const auto model = fit_pca(v);
    const auto ref = oracle::jacobi(oracle::covariance(v));
    for (int r = 0; r < 4; ++r) {
      CHECK(std::abs(model.eigenvalues[r] - std::max(0.0, ref.values[r])) < 1e-8);
      for (int i = 0; i < 4; ++i) CHECK(std::abs(model.components[r][i] - ref.axes[r][i]) < 1e-6);
    }
  }
}

TEST_CASE("PCA model invariants") {
  std::mt19937_64 rng(8);
  const auto v = random_vectors(rng, 40);
  const auto model = fit_pca(v);
  for (int r = 0; r < 4; ++r)
    for (int s = 0; s < 4; ++s) {
      double dot = 0.0;
      for (int i = 0; i < 4; ++i) dot += model.components[r][i] * model.components[s][i];
      CHECK(std::abs(dot - (r == s ? 1.0 : 0.0)) < 1e-10);
    }
  for (int r = 0; r < 3; ++r) CHECK(model.eigenvalues[r] >= model.eigenvalues[r + 1]);
  for (double e : model.eigenvalues) CHECK(e >= 0.0);
  const auto cov = oracle::covariance(v);
  const double trace = cov[0][0] + cov[1][1] + cov[2][2] + cov[3][3];
  CHECK(std::abs(model.eigenvalues[0] + model.eigenvalues[1] + model.eigenvalues[2] + model.eigenvalues[3] - trace) <
        1e-9);
  const auto ratio = model.explained_variance_ratio();
  CHECK(ratio[0] + ratio[1] + ratio[2] + ratio[3] == doctest::Approx(1.0));

  for (const auto& x : v) {
    const auto back = reconstruct(model, project(model, x));
    for (int i = 0; i < 4; ++i) CHECK(std::abs(back[i] - x[i]) < 1e-9);
  }
  const auto at_mean = project(model, model.mean);
  for (double s : at_mean) CHECK(std::abs(s) < 1e-12);
  Vec4 shifted = model.mean;
  for (int i = 0; i < 4; ++i) shifted[i] += model.components[0][i];
  const auto e1 = project(model, shifted);
  CHECK(e1[0] == doctest::Approx(1.0).epsilon(1e-12));
  for (int r = 1; r < 4; ++r) CHECK(std::abs(e1[r]) < 1e-12);
}

TEST_CASE("PCA is independent of input order") {
  std::mt19937_64 rng(77);
  auto v = random_vectors(rng, 60);
  const auto a = fit_pca(v);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(v.begin(), v.end(), rng);
    const auto b = fit_pca(v);
    CHECK(a.eigenvalues == b.eigenvalues);
    CHECK(a.components == b.components);
    CHECK(a.mean == b.mean);
  }
}

TEST_CASE("PCA degenerate inputs") {
  SUBCASE("identical vectors") {
    const auto m = fit_pca({{0.1, 0.2, 0.3, 0.4}, {0.1, 0.2, 0.3, 0.4}, {0.1, 0.2, 0.3, 0.4}});
    for (double e : m.eigenvalues) CHECK(e == doctest::Approx(0.0).epsilon(1e-15));
    for (double s : project(m, {0.1, 0.2, 0.3, 0.4})) CHECK(std::abs(s) < 1e-15);
  }
  SUBCASE("two vectors") {
    const Vec4 a{0, 0, 0, 0}, b{1, 2, 0, 2};
    const auto m = fit_pca({a, b});
    for (int i = 0; i < 4; ++i) CHECK(m.components[0][i] == doctest::Approx(b[i] / 3.0));
    for (int r = 1; r < 4; ++r) CHECK(m.eigenvalues[r] == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("too few") { CHECK_THROWS_AS(fit_pca({{1, 2, 3, 4}}), ValidationError); }
}

TEST_CASE("tracks") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  SUBCASE("one segment, three steps") {
    std::vector<MomentVector> rows;
    for (int t : {2, 0, 1}) rows.push_back(normalized_mv("S1", 3, t, {u(rng), u(rng), u(rng), u(rng)}));
    std::vector<Vec4> vals;
    for (const auto& r : rows) vals.push_back(r.values());
    const auto tracks = build_tracks(fit_pca(vals), rows);
    REQUIRE(tracks.tracks.size() == 1);
    const auto& tr = tracks.tracks.begin()->second;
    REQUIRE(tr.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(tr[i].time_index == i);
  }
  SUBCASE("identical sequences give identical tracks") {
    std::vector<MomentVector> rows;
    for (int t = 0; t < 5; ++t) {
      const Vec4 v{u(rng), u(rng), u(rng), u(rng)};
      rows.push_back(normalized_mv("S1", 1, t, v));
      rows.push_back(normalized_mv("S1", 2, t, v));
    }
    std::vector<Vec4> vals;
    for (const auto& r : rows) vals.push_back(r.values());
    const auto tracks = build_tracks(fit_pca(vals), rows);
    const auto& a = tracks.tracks.at({"S1", 1});
    const auto& b = tracks.tracks.at({"S1", 2});
    for (int t = 0; t < 5; ++t) CHECK(a[t].scores == b[t].scores);
  }
  SUBCASE("two states, eleven segments, 82 steps") {
    std::vector<MomentVector> rows;
    std::vector<Vec4> vals;
    for (const char* state : {"S1", "S2"})
      for (int seg = 1; seg <= 11; ++seg)
        for (int t = 0; t < 82; ++t) {
          rows.push_back(normalized_mv(state, seg, t, {u(rng), u(rng), u(rng), u(rng)}));
          vals.push_back(rows.back().values());
        }
    const auto tracks = build_tracks(fit_pca(vals), rows);
    CHECK(tracks.tracks.size() == 22);
    CHECK(tracks.point_count() == 1804);
    for (const auto& [key, tr] : tracks.tracks) {
      CHECK(tr.size() == 82);
      for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr[i].time_index > tr[i - 1].time_index);
    }
    CHECK(slice_time(tracks, 40).size() == 22);
  }
  SUBCASE("duplicates and raw input are rejected") {
    std::vector<MomentVector> rows{normalized_mv("S1", 1, 0, {0, 0, 0, 0}), normalized_mv("S1", 1, 0, {1, 1, 1, 1})};
    const auto model = fit_pca({{0, 0, 0, 0}, {1, 1, 1, 1}});
    CHECK_THROWS_AS(build_tracks(model, rows), ValidationError);
    rows.pop_back();
    rows[0].normalized = false;
    CHECK_THROWS_AS(build_tracks(model, rows), ValidationError);
  }
}

TEST_CASE("track metrics") {
  PCAModel identity;
  for (int i = 0; i < 4; ++i) identity.components[i][i] = 1.0;
  TrackSet set;
  set.tracks[{"A", 1}] = {{0, 0.0, {0, 0, 0, 0}}, {1, 1.0, {3, 4, 0, 0}}};
  set.tracks[{"A", 2}] = {{0, 0.0, {1, 1, 1, 1}}, {1, 1.0, {1, 1, 1, 1}}, {2, 2.0, {1, 1, 1, 1}}};
  set.tracks[{"B", 1}] = {{0, 0.0, {0, 0, 0, 0}}, {1, 1.0, {1, 0, 5, 0}}, {2, 2.0, {2, 1, 5, 0}}};
  const auto m = track_metrics(set, {1, 2});
  REQUIRE(m.size() == 3);
  CHECK(m[0].key == TrackKey{"A", 1});
  CHECK(m[0].arc_length == doctest::Approx(5.0));
  CHECK(m[0].bbox_area == doctest::Approx(12.0));
  CHECK(m[0].max_step == doctest::Approx(5.0));
  CHECK(m[2].key == TrackKey{"A", 2});
  CHECK(m[2].arc_length == 0.0);
  CHECK(m[2].bbox_area == 0.0);
  // PC1-PC3 view of the same tracks needs no refit.
  const auto m13 = track_metrics(set, {1, 3});
  CHECK(m13[0].key == TrackKey{"B", 1});
  CHECK(m13[0].bbox_area == doctest::Approx(10.0));
  CHECK_THROWS_AS(track_metrics(set, {1, 1}), ValidationError);
  CHECK_THROWS_AS(track_metrics(set, {0, 2}), ValidationError);
  CHECK_THROWS_AS(validate_axes({2, 5}), ValidationError);
}

TEST_CASE("slices agree with full scores") {
  TrackPoint p{3, 1.5, {0.1, -0.2, 0.3, -0.4}};
  CHECK(slice_point(p, {2, 3}) == Point2{-0.2, 0.3});
  CHECK(slice_point(p, {4, 1}) == Point2{-0.4, 0.1});
}

TEST_CASE("track export round trip") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<MomentVector> rows;
  std::vector<Vec4> vals;
  for (int seg : {1, kBoundarySegment})
    for (int t = 0; t < 4; ++t) {
      rows.push_back(normalized_mv("S2", seg, t, {u(rng), u(rng), u(rng), u(rng)}));
      vals.push_back(rows.back().values());
    }
  const auto model = fit_pca(vals);
  const auto tracks = build_tracks(model, rows);
  const auto [m2, t2] = parse_pca_tracks_json(pca_tracks_json(model, tracks));
  CHECK(m2.mean == model.mean);
  CHECK(m2.components == model.components);
  CHECK(m2.eigenvalues == model.eigenvalues);
  CHECK(t2.tracks.size() == 2);
  for (const auto& [key, tr] : tracks.tracks) {
    const auto& other = t2.tracks.at(key);
    REQUIRE(other.size() == tr.size());
    for (std::size_t i = 0; i < tr.size(); ++i) CHECK(other[i].scores == tr[i].scores);
  }
  const auto csv = tracks_csv(tracks);
  CHECK(csv.rfind("state_label,segment_id,time_index,time_fs,pc1,pc2,pc3,pc4\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
}
