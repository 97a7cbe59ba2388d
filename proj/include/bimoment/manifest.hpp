#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "bimoment/csp.hpp"
#include "bimoment/field.hpp"
#include "bimoment/moments.hpp"

namespace bimoment {

enum class SyntheticKind { kRotation, kScaling };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::kRotation;
  int steps = 50;
  std::optional<double> b;  // scaling offset; drawn from seed when absent
  std::uint64_t seed = 0;
  int n = 64;   // points per axis in x and y
  int nz = 4;   // constant z slabs
};

struct CubeStepSpec {
  double time_fs = 0.0;
  std::filesystem::path f1_path;
  std::filesystem::path f2_path;
};

struct SeriesSpec {
  std::string state_label;
  std::vector<CubeStepSpec> steps;
  std::optional<SyntheticSpec> synthetic;

  std::size_t step_count() const { return synthetic ? static_cast<std::size_t>(synthetic->steps) : steps.size(); }
};

enum class WeightSource { kCovalent, kZero };

struct AnalysisManifest {
  std::vector<SeriesSpec> series;
  Resolution res{256, 256};
  std::optional<RangeWindow> window;  // nullopt = derive from data
  double padding = 0.05;
  Pooling pooling = Pooling::kPerOrder;
  MomentWeight moment_weight = MomentWeight::kRangeDensity;
  WeightSource weights = WeightSource::kCovalent;
  std::filesystem::path output_dir;

  // Throws ValidationError: empty series, bad labels, res < 2, padding < 0,
  // missing cube files.
  void validate() const;
};

// Relative paths resolve against base_dir.
AnalysisManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);
AnalysisManifest load_manifest(const std::filesystem::path& path);
std::string manifest_json(const AnalysisManifest& manifest);

// Scaling offset b in [-0.5, 0] for a synthetic series.
double synthetic_offset(const SyntheticSpec& spec);

// Where one step's field comes from; enough to reload it later.
struct SyntheticStep {
  SyntheticKind kind;
  int t;
  double b;
  int n, nz;
};
using StepSource = std::variant<SyntheticStep, CubeStepSpec>;

StepSource step_source(const SeriesSpec& series, std::size_t step);
double step_time_fs(const SeriesSpec& series, std::size_t step);

struct LoadedStep {
  BivariateField field;
  AtomList atoms;
};

// Synthetic steps get a single seed (id 1) at the domain center, so the
// peel of that segment is the full CSP.
LoadedStep load_step(const StepSource& source, WeightSource weights = WeightSource::kCovalent);

nlohmann::ordered_json step_source_json(const StepSource& source);
StepSource parse_step_source(const nlohmann::json& j);

}  // namespace bimoment
