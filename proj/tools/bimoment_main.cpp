#include <cstdlib>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "bimoment/binary_io.hpp"
#include "bimoment/csp.hpp"
#include "bimoment/embedding.hpp"
#include "bimoment/fiber.hpp"
#include "bimoment/manifest.hpp"
#include "bimoment/moments.hpp"
#include "bimoment/pipeline.hpp"
#include "bimoment/segmentation.hpp"
#include "bimoment/service.hpp"

namespace fs = std::filesystem;
using namespace bimoment;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Common {
  bool strict = false;
  int threads = 0;
  std::optional<std::uint64_t> seed;

  CSPOptions csp() const { return {threads, strict}; }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_flag("--strict", c.strict, "Deterministic single-accumulator mode");
  cmd->add_option("--threads", c.threads, "Worker threads (default: BIMOMENT_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--seed", c.seed, "Seed for all randomness");
}

WeightSource parse_weights(const std::string& s) {
  if (s == "covalent") return WeightSource::kCovalent;
  if (s == "zero") return WeightSource::kZero;
  throw ValidationError(fmt::format("unknown weight source '{}'", s));
}

RangeWindow parse_window(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      v.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw ValidationError(fmt::format("bad window value '{}'", part));
    }
  }
  if (v.size() != 4) throw ValidationError("window must be min1,max1,min2,max2");
  RangeWindow w{v[0], v[1], v[2], v[3]};
  w.validate();
  return w;
}

Resolution parse_res(const std::vector<int>& r) {
  if (r.size() == 1) return {r[0], r[0]};
  if (r.size() == 2) return {r[0], r[1]};
  throw ValidationError("--res takes one or two integers");
}

BivariateField load_pair(const fs::path& f1, const fs::path& f2, AtomList* atoms = nullptr) {
  auto [g1, a1] = load_cube(f1);
  auto [g2, a2] = load_cube(f2);
  if (atoms) *atoms = std::move(a1);
  return {std::move(g1), std::move(g2)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bimoment: moment-based analysis of time-varying bivariate fields"};
  app.require_subcommand(1);
  Common common;

  // run
  auto* run = app.add_subcommand("run", "Full pipeline from a manifest");
  fs::path manifest_path;
  std::optional<fs::path> run_out;
  run->add_option("--manifest,manifest", manifest_path, "Analysis manifest (JSON)")->required();
  run->add_option("--out", run_out, "Output directory (overrides the manifest)");
  add_common(run, common);

  // gen
  auto* gen = app.add_subcommand("gen", "Emit synthetic cube files and a manifest");
  std::string gen_kind = "rotation";
  int gen_steps = 50, gen_n = 64, gen_nz = 64;
  std::optional<double> gen_b;
  fs::path gen_out = "synthetic";
  gen->add_option("--kind", gen_kind, "rotation | scaling")->check(CLI::IsMember({"rotation", "scaling"}));
  gen->add_option("--steps", gen_steps, "Time steps")->check(CLI::PositiveNumber);
  gen->add_option("--n", gen_n, "Points along x and y")->check(CLI::Range(2, 4096));
  gen->add_option("--nz", gen_nz, "Points along z")->check(CLI::Range(2, 4096));
  gen->add_option("--b", gen_b, "Scaling offset in [-0.5, 0] (default: drawn from --seed)");
  gen->add_option("--out", gen_out, "Output directory");
  add_common(gen, common);

  // segment
  auto* seg = app.add_subcommand("segment", "Weighted-Voronoi labels from a cube's atoms");
  fs::path seg_cube, seg_out;
  std::string seg_weights = "covalent";
  seg->add_option("--cube", seg_cube, "Cube file supplying grid and atoms")->required()->check(CLI::ExistingFile);
  seg->add_option("--weights", seg_weights, "covalent | zero");
  seg->add_option("--out", seg_out, "Output stem (.bin + .json)")->required();
  add_common(seg, common);

  // csp
  auto* csp = app.add_subcommand("csp", "Continuous scatterplot of a cube pair");
  fs::path csp_f1, csp_f2, csp_out;
  std::optional<fs::path> csp_labels;
  std::string csp_segment = "all", csp_window = "auto", csp_weights = "covalent";
  std::vector<int> csp_res{256};
  double csp_padding = 0.05;
  csp->add_option("--f1", csp_f1)->required()->check(CLI::ExistingFile);
  csp->add_option("--f2", csp_f2)->required()->check(CLI::ExistingFile);
  csp->add_option("--segment", csp_segment, "all | boundary | atom id");
  csp->add_option("--labels", csp_labels, "Label grid stem (default: computed from f1's atoms)");
  csp->add_option("--weights", csp_weights, "covalent | zero, when labels are computed");
  csp->add_option("--res", csp_res, "Bins per axis (one or two values)")->expected(1, 2);
  csp->add_option("--window", csp_window, "auto | min1,max1,min2,max2");
  csp->add_option("--padding", csp_padding, "Padding of the auto window")->check(CLI::NonNegativeNumber);
  csp->add_option("--out", csp_out, "Output stem (.bin + .json)")->required();
  add_common(csp, common);

  // moments
  auto* mom = app.add_subcommand("moments", "Moments of stored CSPs");
  std::vector<fs::path> mom_csps;
  std::string mom_pooling = "per-order";
  std::string mom_weight = "range-density";
  fs::path mom_out;
  mom->add_option("--csp", mom_csps, "CSP stems")->required();
  mom->add_option("--pooling", mom_pooling, "per-order | per-component");
  mom->add_option("--weight", mom_weight, "range-density | bin-volume");
  mom->add_option("--out", mom_out, "Output file (.csv or .json)")->required();
  add_common(mom, common);

  // pca
  auto* pca = app.add_subcommand("pca", "PCA embedding and tracks from moments JSON");
  fs::path pca_moments, pca_out;
  std::optional<fs::path> pca_csv;
  pca->add_option("--moments", pca_moments, "moments.json")->required()->check(CLI::ExistingFile);
  pca->add_option("--out", pca_out, "tracks.json")->required();
  pca->add_option("--csv", pca_csv, "Also write tracks as CSV");
  add_common(pca, common);

  // fiber
  auto* fib = app.add_subcommand("fiber", "Fiber surface of a control polygon");
  fs::path fib_f1, fib_f2, fib_poly, fib_out;
  bool fib_open = false;
  fib->add_option("--f1", fib_f1)->required()->check(CLI::ExistingFile);
  fib->add_option("--f2", fib_f2)->required()->check(CLI::ExistingFile);
  fib->add_option("--polygon", fib_poly, "Polygon JSON")->required()->check(CLI::ExistingFile);
  fib->add_flag("--open", fib_open, "Treat the vertices as an open polyline and close it outside the range");
  fib->add_option("--out", fib_out, "Mesh file (.obj or .json)")->required();
  add_common(fib, common);

  // render
  auto* ren = app.add_subcommand("render", "CSP to PNG (log scale)");
  fs::path ren_csp, ren_out;
  ren->add_option("--csp", ren_csp, "CSP stem")->required();
  ren->add_option("--out", ren_out, "PNG path")->required();
  add_common(ren, common);

  // serve
  auto* srv = app.add_subcommand("serve", "HTTP API over a run directory");
  fs::path srv_dir;
  std::string srv_host = "127.0.0.1";
  int srv_port = 8080;
  ServiceOptions srv_opts;
  int srv_timeout_ms = 30000;
  srv->add_option("--data-dir", srv_dir, "Run directory")->required();
  srv->add_option("--host", srv_host);
  srv->add_option("--port", srv_port)->check(CLI::Range(0, 65535));
  srv->add_option("--cache-steps", srv_opts.field_cache_steps, "Fields kept in memory")->check(CLI::PositiveNumber);
  srv->add_option("--fiber-timeout-ms", srv_timeout_ms)->check(CLI::PositiveNumber);
  srv->add_option("--cors-origin", srv_opts.cors_origin);
  add_common(srv, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (run->parsed()) {
      auto manifest = load_manifest(manifest_path);
      if (run_out) manifest.output_dir = fs::absolute(*run_out);
      RunOptions opts;
      opts.strict = common.strict;
      opts.threads = common.threads;
      opts.seed = common.seed;
      opts.progress = [](const std::string& msg) { std::cerr << msg << "\n"; };
      const auto r = run_pipeline(manifest, opts);
      std::cout << fmt::format("{} steps, {} segment CSPs, {} moment rows, {} tracks; mass residual {:.3g}\n", r.steps,
                               r.segment_csps, r.moment_rows, r.tracks, r.global_mass_residual);
    } else if (gen->parsed()) {
      SyntheticSpec spec;
      spec.kind = gen_kind == "rotation" ? SyntheticKind::kRotation : SyntheticKind::kScaling;
      spec.steps = gen_steps;
      spec.b = gen_b;
      spec.seed = common.seed.value_or(0);
      spec.n = gen_n;
      spec.nz = gen_nz;
      SeriesSpec series{gen_kind, {}, spec};
      AnalysisManifest m;
      SeriesSpec cubes{gen_kind, {}, std::nullopt};
      for (int t = 0; t < gen_steps; ++t) {
        const auto step = load_step(step_source(series, static_cast<std::size_t>(t)));
        const fs::path f1 = gen_out / fmt::format("{}_{:04d}_f1.cube", gen_kind, t);
        const fs::path f2 = gen_out / fmt::format("{}_{:04d}_f2.cube", gen_kind, t);
        fs::create_directories(gen_out);
        write_cube(f1, step.field.f1(), step.atoms, fmt::format("{} t={} f1", gen_kind, t));
        write_cube(f2, step.field.f2(), step.atoms, fmt::format("{} t={} f2", gen_kind, t));
        cubes.steps.push_back({static_cast<double>(t), fs::absolute(f1), fs::absolute(f2)});
      }
      m.series.push_back(cubes);
      m.weights = WeightSource::kZero;
      m.output_dir = fs::absolute(gen_out / "run");
      write_text(gen_out / "manifest.json", manifest_json(m));
      std::cout << fmt::format("wrote {} steps to {}\n", gen_steps, gen_out.string());
    } else if (seg->parsed()) {
      auto [grid, atoms] = load_cube(seg_cube);
      if (parse_weights(seg_weights) == WeightSource::kZero)
        for (auto& a : atoms) a.weight = 0.0;
      const auto labels = label_power_diagram(grid.spec(), atoms);
      write_label_grid(seg_out, labels);
      for (const auto& [id, n] : segment_vertex_counts(labels)) std::cout << fmt::format("segment {}: {} vertices\n", id, n);
    } else if (csp->parsed()) {
      AtomList atoms;
      const auto field = load_pair(csp_f1, csp_f2, &atoms);
      const Resolution res = parse_res(csp_res);
      const RangeWindow window =
          csp_window == "auto" ? window_from_range(field_range(field), csp_padding) : parse_window(csp_window);
      const int segment = parse_segment_key(csp_segment);
      CSPHistogram h;
      if (segment == kFullDomain) {
        h = compute_csp(field, window, res, {}, common.csp());
      } else {
        if (parse_weights(csp_weights) == WeightSource::kZero)
          for (auto& a : atoms) a.weight = 0.0;
        const auto labels = csp_labels ? read_label_grid(*csp_labels) : label_power_diagram(field.spec(), atoms);
        h = peel_csp(field, labels, segment, window, res, common.csp());
      }
      write_csp(csp_out, h, {segment, 0, ""});
      std::cout << fmt::format("mass {:.17g} (+{:.3g} outside window), {} nonzero bins\n", h.total_mass(),
                               h.out_of_window, h.nonzero_bins());
    } else if (mom->parsed()) {
      const MomentWeight weight = parse_moment_weight(mom_weight);
      std::vector<MomentVector> raw;
      for (const auto& stem : mom_csps) {
        const auto [h, meta] = read_csp(stem);
        raw.push_back(csp_moments(h, {meta.state_label, meta.segment_id, meta.time_index, 0.0}, weight));
      }
      const Pooling pooling = parse_pooling(mom_pooling);
      const auto normalized = normalize_moments(raw, pooling);
      write_text(mom_out, mom_out.extension() == ".json" ? moments_json(raw, normalized, pooling, weight)
                                                         : moments_csv(raw, normalized));
    } else if (pca->parsed()) {
      const auto table = parse_moments_json(read_text(pca_moments));
      std::vector<Vec4> vectors;
      for (const auto& m : table.normalized) vectors.push_back(m.values());
      const auto model = fit_pca(vectors);
      const auto tracks = build_tracks(model, table.normalized);
      write_text(pca_out, pca_tracks_json(model, tracks));
      if (pca_csv) write_text(*pca_csv, tracks_csv(tracks));
      const auto ratio = model.explained_variance_ratio();
      std::cout << fmt::format("{} tracks; explained variance {:.3f} {:.3f} {:.3f} {:.3f}\n", tracks.tracks.size(),
                               ratio[0], ratio[1], ratio[2], ratio[3]);
    } else if (fib->parsed()) {
      const auto field = load_pair(fib_f1, fib_f2);
      auto poly = parse_polygon_json(read_text(fib_poly));
      const auto window = window_from_range(field_range(field), 0.0);
      if (fib_open) poly = close_polyline(poly.vertices, window);
      const auto mesh = extract_fiber_surface(field, poly);
      export_mesh(mesh, fib_out, mesh_format_from_path(fib_out));
      std::cout << fmt::format("{} vertices, {} triangles\n", mesh.positions.size(), mesh.triangles.size());
    } else if (ren->parsed()) {
      render_csp_png(read_csp(ren_csp).first, ren_out);
    } else if (srv->parsed()) {
      srv_opts.fiber_timeout = std::chrono::milliseconds(srv_timeout_ms);
      std::cerr << fmt::format("serving {} on http://{}:{}\n", srv_dir.string(), srv_host, srv_port);
      serve(srv_dir, srv_host, srv_port, srv_opts);
    }
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const StageError& e) {
    std::cerr << "error in stage " << e.stage() << " (" << e.key() << "): " << e.what() << "\n";
    // A stage that failed validation is still a validation failure.
    return e.stage() == "validate" ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return EXIT_SUCCESS;
}
