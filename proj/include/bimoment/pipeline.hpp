#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "bimoment/embedding.hpp"
#include "bimoment/manifest.hpp"

namespace bimoment {

// A stage failed; carries the stage name and the input key it was working on.
class StageError : public Error {
 public:
  StageError(std::string stage, std::string key, const std::string& what)
      : Error(stage + " [" + key + "]: " + what), stage_(std::move(stage)), key_(std::move(key)) {}
  const std::string& stage() const { return stage_; }
  const std::string& key() const { return key_; }

 private:
  std::string stage_;
  std::string key_;
};

struct RunOptions {
  // Single accumulator, fixed tet order, and no volatile fields (timings,
  // cache hits) in JSON/CSV outputs; those go to run.log instead.
  bool strict = false;
  int threads = 0;
  std::optional<std::uint64_t> seed;  // overrides synthetic series seeds
  std::function<void(const std::string&)> progress;
};

struct RunReport {
  std::size_t series = 0;
  std::size_t steps = 0;
  std::size_t segment_csps = 0;
  std::size_t boundary_csps = 0;
  std::size_t moment_rows = 0;
  std::size_t tracks = 0;
  std::size_t cache_hits = 0;
  double total_grid_volume = 0.0;
  double global_mass_residual = 0.0;  // relative
  double max_step_mass_residual = 0.0;
  RangeWindow window;
};

// Paths inside a run directory.
namespace run_layout {
std::filesystem::path csp_stem(const std::filesystem::path& out, const std::string& state, int t, int segment_id);
std::filesystem::path label_stem(const std::filesystem::path& out, const std::string& state, int t);
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kWindow = "window.json";
inline constexpr const char* kMomentsCsv = "moments.csv";
inline constexpr const char* kMomentsJson = "moments.json";
inline constexpr const char* kTracksJson = "tracks.json";
inline constexpr const char* kTracksCsv = "tracks.csv";
inline constexpr const char* kFields = "fields.json";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kLog = "run.log";
}  // namespace run_layout

// Segmentation -> peeled CSPs -> moments -> global PCA -> tracks, written
// under manifest.output_dir. Peels are cached by a content hash of the step's
// inputs and the CSP configuration.
RunReport run_pipeline(AnalysisManifest manifest, const RunOptions& options = {});

// Derived window (or the manifest's explicit one).
RangeWindow analysis_window(const AnalysisManifest& manifest);

}  // namespace bimoment
