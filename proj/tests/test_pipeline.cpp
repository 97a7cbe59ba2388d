#include <doctest.h>

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "bimoment/binary_io.hpp"
#include "bimoment/pipeline.hpp"
#include "test_util.hpp"

using namespace bimoment;
namespace fs = std::filesystem;

namespace {

AnalysisManifest synthetic_manifest(const fs::path& out, int steps = 50, int n = 16) {
  AnalysisManifest m;
  SyntheticSpec rot{SyntheticKind::kRotation, steps, std::nullopt, 0, n, 3};
  SyntheticSpec scl{SyntheticKind::kScaling, steps, 0.0, 0, n, 3};
  m.series = {{"fR", {}, rot}, {"fS", {}, scl}};
  m.res = {32, 32};
  m.output_dir = out;
  return m;
}

RunOptions strict() {
  RunOptions o;
  o.strict = true;
  return o;
}

std::vector<fs::path> artifacts(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != run_layout::kLog) out.push_back(fs::relative(e.path(), dir));
  std::sort(out.begin(), out.end());
  return out;
}

// 11 atoms in a 9^3 box, two smooth channels that drift with t.
void write_molecule_series(const fs::path& dir, const std::string& state, int steps, double phase,
                           nlohmann::json& series) {
  GridSpec g{{9, 9, 9}, {-2.0, -2.0, -2.0}, {0.5, 0.5, 0.5}};
  const char* elements[] = {"C", "C", "C", "C", "O", "H", "H", "H", "H", "H", "H"};
  AtomList atoms;
  for (int a = 0; a < 11; ++a) {
    const double ang = 2.0 * M_PI * a / 11.0;
    atoms.push_back({a + 1, elements[a], {1.4 * std::cos(ang), 1.4 * std::sin(ang), 0.3 * (a % 3 - 1)}, 0.0});
  }
  series = {{"state_label", state}, {"steps", nlohmann::json::array()}};
  for (int t = 0; t < steps; ++t) {
    std::vector<double> a(g.vertex_count()), b(g.vertex_count());
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto p = g.position(i);
      a[i] = std::exp(-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / (2.0 + 0.01 * t)) * std::cos(p[0] + phase);
      b[i] = std::exp(-((p[0] - 0.5) * (p[0] - 0.5) + p[1] * p[1]) / 1.5) * std::sin(p[1] + 0.02 * t);
    }
    const auto f1 = dir / fmt::format("{}_{:03d}_hole.cube", state, t);
    const auto f2 = dir / fmt::format("{}_{:03d}_particle.cube", state, t);
    write_cube(f1, ScalarGrid(g, a), atoms);
    write_cube(f2, ScalarGrid(g, b), atoms);
    series["steps"].push_back({{"time_fs", 0.48 * t}, {"f1_path", f1.filename().string()}, {"f2_path", f2.filename().string()}});
  }
}

}  // namespace

TEST_CASE("manifest parsing") {
  TempDir dir("manifest");
  write_text(dir / "a.cube", "");
  write_text(dir / "b.cube", "");
  const auto m = parse_manifest(R"({
    "series": [
      {"state_label": "S1", "steps": [{"time_fs": 0.0, "f1_path": "a.cube", "f2_path": "b.cube"}]},
      {"state_label": "syn", "synthetic": {"kind": "scaling", "steps": 7, "seed": 3}}
    ],
    "csp": {"res": [64, 32], "window": {"min1": 0, "max1": 1, "min2": -1, "max2": 1}, "padding": 0.1},
    "moments": {"pooling": "per-component", "weight": "bin-volume"},
    "segmentation": {"weights": "zero"},
    "output_dir": "out"
  })",
                                dir.path());
  CHECK_NOTHROW(m.validate());
  CHECK(m.series.size() == 2);
  CHECK(m.series[0].steps[0].f1_path == dir / "a.cube");
  CHECK(m.series[1].step_count() == 7);
  CHECK(m.res == Resolution{64, 32});
  CHECK(m.window == RangeWindow{0, 1, -1, 1});
  CHECK(m.pooling == Pooling::kPerComponent);
  CHECK(m.moment_weight == MomentWeight::kBinVolume);
  CHECK(AnalysisManifest{}.moment_weight == MomentWeight::kRangeDensity);
  CHECK(m.weights == WeightSource::kZero);
  CHECK(m.output_dir == dir / "out");

  const auto again = parse_manifest(manifest_json(m), dir.path());
  CHECK(manifest_json(again) == manifest_json(m));

  // b drawn from the seed lies in [-0.5, 0] and is reproducible.
  const double b = synthetic_offset(*m.series[1].synthetic);
  CHECK((b >= -0.5 && b <= 0.0));
  CHECK(synthetic_offset(*m.series[1].synthetic) == b);
}

TEST_CASE("manifest validation errors") {
  TempDir dir("manifest_bad");
  auto check_invalid = [&](const std::string& text) {
    CHECK_THROWS_AS(parse_manifest(text, dir.path()).validate(), ValidationError);
  };
  check_invalid(R"({"series": []})");
  check_invalid(R"({"series": [{"state_label": "x", "synthetic": {"kind": "rotation"}}], "csp": {"res": 1}})");
  check_invalid(R"({"series": [{"state_label": "x", "synthetic": {"kind": "rotation"}}], "csp": {"padding": -0.1}})");
  check_invalid(R"({"series": [{"state_label": "a b", "synthetic": {"kind": "rotation"}}]})");
  check_invalid(R"({"series": [{"state_label": "x", "synthetic": {"kind": "rotation"}},
                               {"state_label": "x", "synthetic": {"kind": "scaling"}}]})");
  check_invalid(R"({"series": [{"state_label": "x", "synthetic": {"kind": "spiral"}}]})");
  check_invalid(R"({"series": [{"state_label": "x", "synthetic": {"kind": "scaling", "b": 0.3}}]})");
  check_invalid(R"({"series": [{"state_label": "x", "steps": [{"time_fs": 0, "f1_path": "no.cube", "f2_path": "no.cube"}]}]})");
  check_invalid("{not json");
  check_invalid(R"({"series": [{"synthetic": {"kind": "rotation"}}]})");
  CHECK_THROWS_AS(load_manifest(dir / "missing.json"), ValidationError);
}

TEST_CASE("empty series list fails validation") {
  TempDir dir("empty");
  AnalysisManifest m;
  m.output_dir = dir / "out";
  try {
    run_pipeline(m, strict());
    FAIL("expected a validation failure");
  } catch (const StageError& e) {
    CHECK(e.stage() == "validate");
  }
}

TEST_CASE("synthetic run produces the expected artifacts") {
  TempDir dir("synthetic");
  const auto report = run_pipeline(synthetic_manifest(dir / "run"), strict());
  CHECK(report.series == 2);
  CHECK(report.steps == 100);
  CHECK(report.segment_csps == 100);
  CHECK(report.moment_rows == 100);
  CHECK(report.tracks == 2);
  CHECK(report.global_mass_residual < 1e-6);

  const fs::path out = dir / "run";
  for (const char* f : {run_layout::kManifest, run_layout::kWindow, run_layout::kMomentsCsv, run_layout::kMomentsJson,
                        run_layout::kTracksJson, run_layout::kTracksCsv, run_layout::kFields, run_layout::kReport})
    CHECK(fs::exists(out / f));
  for (int t : {0, 49}) {
    CHECK(fs::exists(fs::path(run_layout::csp_stem(out, "fR", t, 1)) += ".bin"));
    CHECK(fs::exists(fs::path(run_layout::csp_stem(out, "fS", t, kFullDomain)) += ".json"));
    CHECK(fs::exists(fs::path(run_layout::label_stem(out, "fS", t)) += ".bin"));
  }

  const auto rep = nlohmann::json::parse(read_text(out / run_layout::kReport));
  CHECK(rep["status"] == "ok");
  CHECK(rep["moment_rows"] == 100);
  CHECK_FALSE(rep.contains("elapsed_s"));

  const auto csv = read_text(out / run_layout::kMomentsCsv);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 101);
  const auto [model, tracks] = parse_pca_tracks_json(read_text(out / run_layout::kTracksJson));
  REQUIRE(tracks.tracks.size() == 2);
  for (const auto& [key, tr] : tracks.tracks) {
    CHECK(tr.size() == 50);
    CHECK(key.segment_id == 1);
  }
  // The single-atom peel is the full CSP.
  const auto full = read_csp(run_layout::csp_stem(out, "fR", 10, kFullDomain)).first;
  const auto peel = read_csp(run_layout::csp_stem(out, "fR", 10, 1)).first;
  CHECK(full.density == peel.density);
}

TEST_CASE("strict runs are byte-identical and reruns hit the cache") {
  TempDir dir("determinism");
  auto m = synthetic_manifest(dir / "a", 6, 12);
  m.series[1].synthetic->b.reset();  // b drawn from the seed
  RunOptions o = strict();
  o.seed = 17;
  run_pipeline(m, o);
  m.output_dir = dir / "b";
  run_pipeline(m, o);
  const auto files = artifacts(dir / "a");
  CHECK(files == artifacts(dir / "b"));
  CHECK(files.size() > 20);
  for (const auto& f : files) CHECK_MESSAGE(read_text(dir / "a" / f) == read_text(dir / "b" / f), f.string());

  const auto again = run_pipeline(m, o);
  CHECK(again.cache_hits == again.steps);
  for (const auto& f : files) CHECK_MESSAGE(read_text(dir / "a" / f) == read_text(dir / "b" / f), f.string());

  // A different seed draws a different b, so the scaling series changes.
  o.seed = 18;
  m.output_dir = dir / "c";
  run_pipeline(m, o);
  CHECK(read_text(dir / "a" / run_layout::kMomentsCsv) != read_text(dir / "c" / run_layout::kMomentsCsv));
}

TEST_CASE("MVK-shaped cube run: 2 states x 11 segments x 82 steps") {
  TempDir dir("mvk");
  nlohmann::json s1, s2;
  write_molecule_series(dir.path(), "S1", 82, 0.0, s1);
  write_molecule_series(dir.path(), "S2", 82, 0.7, s2);
  nlohmann::json manifest = {{"series", {s1, s2}}, {"csp", {{"res", 16}}}, {"output_dir", "run"}};
  write_text(dir / "manifest.json", manifest.dump());
  RunOptions o;
  o.threads = 2;
  const auto report = run_pipeline(load_manifest(dir / "manifest.json"), o);
  CHECK(report.steps == 164);
  CHECK(report.moment_rows == 1804);
  CHECK(report.tracks == 22);
  CHECK(report.global_mass_residual < 1e-6);
  const auto [model, tracks] = parse_pca_tracks_json(read_text(dir / "run" / run_layout::kTracksJson));
  CHECK(tracks.point_count() == 1804);
  for (const auto& [key, tr] : tracks.tracks) {
    CHECK(tr.size() == 82);
    CHECK(tr[1].time_fs == doctest::Approx(0.48));
  }
}

TEST_CASE("stage failures name the stage and flag partial outputs") {
  TempDir dir("failure");
  GridSpec g{{3, 3, 3}};
  write_cube(dir / "ok.cube", ScalarGrid(g, std::vector<double>(27, 1.0)), {{1, "H", {1, 1, 1}, 0.0}});
  auto text = read_text(dir / "ok.cube");
  text.resize(text.size() - 40);  // drop the last values
  write_text(dir / "cut.cube", text);
  nlohmann::json manifest = {
      {"series",
       {{{"state_label", "S1"},
         {"steps",
          {{{"time_fs", 0.0}, {"f1_path", "ok.cube"}, {"f2_path", "ok.cube"}},
           {{"time_fs", 1.0}, {"f1_path", "ok.cube"}, {"f2_path", "cut.cube"}}}}}}},
      {"csp", {{"res", 8}}},
      {"output_dir", "run"}};
  write_text(dir / "m.json", manifest.dump());
  try {
    run_pipeline(load_manifest(dir / "m.json"), strict());
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "window");
    CHECK(e.key() == "S1/1");
  }
  const auto rep = nlohmann::json::parse(read_text(dir / "run" / run_layout::kReport));
  CHECK(rep["status"] == "failed");
  CHECK(rep["failed_stage"] == "window");
  CHECK(rep["failed_key"] == "S1/1");
  CHECK(rep["partial_outputs"] == true);
}

TEST_CASE("with a fixed window a corrupt cube fails at load") {
  TempDir dir("failure_load");
  GridSpec g{{3, 3, 3}};
  write_cube(dir / "ok.cube", ScalarGrid(g, std::vector<double>(27, 0.5)), {{1, "H", {1, 1, 1}, 0.0}});
  write_text(dir / "cut.cube", "garbage\n");
  nlohmann::json manifest = {
      {"series",
       {{{"state_label", "S1"},
         {"steps",
          {{{"time_fs", 0.0}, {"f1_path", "ok.cube"}, {"f2_path", "ok.cube"}},
           {{"time_fs", 1.0}, {"f1_path", "cut.cube"}, {"f2_path", "ok.cube"}}}}}}},
      {"csp", {{"res", 8}, {"window", {{"min1", 0}, {"max1", 1}, {"min2", 0}, {"max2", 1}}}}},
      {"output_dir", "run"}};
  write_text(dir / "m.json", manifest.dump());
  try {
    run_pipeline(load_manifest(dir / "m.json"), strict());
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "load");
    CHECK(e.key() == "S1/1");
  }
  // The first step was written before the failure.
  CHECK(fs::exists(fs::path(run_layout::csp_stem(dir / "run", "S1", 0, kFullDomain)) += ".json"));
  const auto rep = nlohmann::json::parse(read_text(dir / "run" / run_layout::kReport));
  CHECK(rep["failed_stage"] == "load");
}
