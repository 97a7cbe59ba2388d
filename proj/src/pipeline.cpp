#include "bimoment/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "bimoment/binary_io.hpp"
#include "bimoment/hash.hpp"
#include "bimoment/segmentation.hpp"

namespace bimoment {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace run_layout {

fs::path csp_stem(const fs::path& out, const std::string& state, int t, int segment_id) {
  return out / "csp" / state / fmt::format("{:04d}", t) / segment_key(segment_id);
}

fs::path label_stem(const fs::path& out, const std::string& state, int t) {
  return out / "labels" / state / fmt::format("{:04d}", t);
}

}  // namespace run_layout

namespace {

// Bumped whenever cached CSP contents would change.
constexpr const char* kCacheVersion = "bimoment-csp-v1";

std::string step_cache_key(const LoadedStep& step, const RangeWindow& w, Resolution res) {
  Sha256 h;
  h.update(kCacheVersion);
  const auto& g = step.field.spec();
  h.update(fmt::format("dims {} {} {} origin {:a} {:a} {:a} spacing {:a} {:a} {:a}", g.dims[0], g.dims[1], g.dims[2],
                       g.origin[0], g.origin[1], g.origin[2], g.spacing[0], g.spacing[1], g.spacing[2]));
  h.update(std::span<const double>(step.field.f1().values()));
  h.update(std::span<const double>(step.field.f2().values()));
  for (const auto& a : step.atoms)
    h.update(fmt::format("atom {} {:a} {:a} {:a} {:a}", a.id, a.center[0], a.center[1], a.center[2], a.weight));
  h.update(fmt::format("window {:a} {:a} {:a} {:a} res {} {}", w.min1, w.max1, w.min2, w.max2, res.r1, res.r2));
  return h.hex();
}

template <class F>
auto stage(const char* name, const std::string& key, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, key, e.what());
  }
}

std::string window_json(const RangeWindow& w) {
  ojson j{{"min1", w.min1}, {"max1", w.max1}, {"min2", w.min2}, {"max2", w.max2}};
  return j.dump(1) + "\n";
}

}  // namespace

RangeWindow analysis_window(const AnalysisManifest& manifest) {
  if (manifest.window) return *manifest.window;
  std::vector<ChannelRange> ranges;
  for (const auto& s : manifest.series)
    for (std::size_t i = 0; i < s.step_count(); ++i) {
      const auto key = fmt::format("{}/{}", s.state_label, i);
      ranges.push_back(stage("window", key, [&] { return field_range(load_step(step_source(s, i), manifest.weights).field); }));
    }
  return global_range_window(ranges, manifest.padding);
}

RunReport run_pipeline(AnalysisManifest manifest, const RunOptions& options) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  if (options.seed)
    for (std::size_t i = 0; i < manifest.series.size(); ++i)
      if (manifest.series[i].synthetic) manifest.series[i].synthetic->seed = *options.seed + i;
  stage("validate", "manifest", [&] { manifest.validate(); });

  const fs::path out = manifest.output_dir;
  fs::create_directories(out);
  auto say = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };

  RunReport report;
  report.series = manifest.series.size();
  std::ostringstream log;
  std::string failed_stage, failed_key;

  auto write_report = [&](const std::string& status) {
    ojson j;
    j["status"] = status;
    if (status != "ok") {
      j["failed_stage"] = failed_stage;
      j["failed_key"] = failed_key;
      j["partial_outputs"] = true;
    }
    j["series"] = report.series;
    j["steps"] = report.steps;
    j["segment_csps"] = report.segment_csps;
    j["boundary_csps"] = report.boundary_csps;
    j["moment_rows"] = report.moment_rows;
    j["tracks"] = report.tracks;
    j["window"] = nlohmann::ordered_json::parse(window_json(report.window));
    j["mass"] = {{"total_grid_volume", report.total_grid_volume},
                 {"global_relative_residual", report.global_mass_residual},
                 {"max_step_relative_residual", report.max_step_mass_residual}};
    const double seconds = std::chrono::duration<double>(clock::now() - t_start).count();
    log << fmt::format("status {}\ncache_hits {}\nelapsed_s {:.3f}\n", status, report.cache_hits, seconds);
    if (!options.strict) {
      j["cache_hits"] = report.cache_hits;
      j["elapsed_s"] = seconds;
    }
    write_text(out / run_layout::kReport, j.dump(1) + "\n");
    write_text(out / run_layout::kLog, log.str());
  };

  try {
    AnalysisManifest stored = manifest;
    stored.output_dir = ".";
    write_text(out / run_layout::kManifest, manifest_json(stored));

    say("computing range window");
    report.window = stage("window", "all", [&] { return analysis_window(manifest); });
    write_text(out / run_layout::kWindow, window_json(report.window));

    CSPOptions csp_opts;
    csp_opts.strict = options.strict;
    csp_opts.threads = options.threads;

    std::vector<MomentVector> raw;
    ojson fields;
    fields["steps"] = ojson::array();
    double volume_sum = 0.0, mass_sum = 0.0;

    for (const auto& series : manifest.series) {
      for (std::size_t i = 0; i < series.step_count(); ++i) {
        const int t = static_cast<int>(i);
        const std::string key = fmt::format("{}/{}", series.state_label, t);
        const auto t_step = clock::now();
        const StepSource source = step_source(series, i);
        const double time_fs = step_time_fs(series, i);
        auto step = stage("load", key, [&] { return load_step(source, manifest.weights); });

        ojson entry;
        entry["state_label"] = series.state_label;
        entry["time_index"] = t;
        entry["time_fs"] = time_fs;
        entry["source"] = step_source_json(source);
        entry["atoms"] = ojson::array();
        for (const auto& a : step.atoms)
          entry["atoms"].push_back({{"id", a.id}, {"element", a.element}, {"center", a.center}, {"weight", a.weight}});
        fields["steps"].push_back(entry);

        const auto labels = stage("segment", key, [&] {
          auto l = label_power_diagram(step.field.spec(), step.atoms);
          write_label_grid(run_layout::label_stem(out, series.state_label, t), l);
          return l;
        });

        auto peels = stage("csp", key, [&] {
          const auto cache_key = step_cache_key(step, report.window, manifest.res);
          const fs::path cache_file = run_layout::csp_stem(out, series.state_label, t, kFullDomain).parent_path() / "cache.json";
          std::map<int, CSPHistogram> result;
          if (fs::exists(cache_file)) {
            const auto cached = nlohmann::json::parse(read_text(cache_file));
            if (cached.value("key", std::string()) == cache_key) {
              bool complete = true;
              for (const auto& a : labels.atoms)
                complete = complete && fs::exists(fs::path(run_layout::csp_stem(out, series.state_label, t, a.id)) += ".bin");
              if (complete) {
                for (const auto& a : labels.atoms)
                  result.emplace(a.id, read_csp(run_layout::csp_stem(out, series.state_label, t, a.id)).first);
                result.emplace(kBoundarySegment,
                               read_csp(run_layout::csp_stem(out, series.state_label, t, kBoundarySegment)).first);
                ++report.cache_hits;
                return result;
              }
            }
          }
          result = peel_all(step.field, labels, report.window, manifest.res, csp_opts);
          CSPHistogram full(report.window, manifest.res);
          for (const auto& [id, h] : result) {
            write_csp(run_layout::csp_stem(out, series.state_label, t, id), h, {id, t, series.state_label});
            full += h;
          }
          write_csp(run_layout::csp_stem(out, series.state_label, t, kFullDomain), full,
                    {kFullDomain, t, series.state_label});
          write_text(cache_file, ojson{{"key", cache_key}}.dump(1) + "\n");
          return result;
        });

        const double volume = step.field.spec().volume();
        double mass = 0.0;
        for (const auto& [id, h] : peels) {
          mass += h.total_mass() + h.out_of_window;
          if (id == kBoundarySegment) {
            ++report.boundary_csps;
            continue;
          }
          ++report.segment_csps;
          raw.push_back(csp_moments(h, {series.state_label, id, t, time_fs}, manifest.moment_weight));
        }
        volume_sum += volume;
        mass_sum += mass;
        report.max_step_mass_residual = std::max(report.max_step_mass_residual, std::abs(mass - volume) / volume);
        ++report.steps;
        log << fmt::format("step {} {:.3f}s\n", key, std::chrono::duration<double>(clock::now() - t_step).count());
        say(fmt::format("step {} done", key));
      }
    }
    report.total_grid_volume = volume_sum;
    report.global_mass_residual = std::abs(mass_sum - volume_sum) / volume_sum;
    write_text(out / run_layout::kFields, fields.dump(1) + "\n");

    say("normalizing moments");
    const auto normalized = stage("moments", "all", [&] {
      auto n = normalize_moments(raw, manifest.pooling);
      write_text(out / run_layout::kMomentsCsv, moments_csv(raw, n));
      write_text(out / run_layout::kMomentsJson, moments_json(raw, n, manifest.pooling, manifest.moment_weight));
      return n;
    });
    report.moment_rows = normalized.size();

    say("fitting PCA and building tracks");
    stage("pca", "all", [&] {
      std::vector<Vec4> vectors;
      for (const auto& m : normalized) vectors.push_back(m.values());
      const auto model = fit_pca(vectors);
      const auto tracks = build_tracks(model, normalized);
      report.tracks = tracks.tracks.size();
      write_text(out / run_layout::kTracksJson, pca_tracks_json(model, tracks));
      write_text(out / run_layout::kTracksCsv, tracks_csv(tracks));
    });
  } catch (const StageError& e) {
    failed_stage = e.stage();
    failed_key = e.key();
    log << "error " << e.what() << "\n";
    write_report("failed");
    throw;
  }
  write_report("ok");
  return report;
}

}  // namespace bimoment
