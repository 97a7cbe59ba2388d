#include "bimoment/manifest.hpp"

#include <random>
#include <regex>

#include <fmt/format.h>

#include "bimoment/binary_io.hpp"

namespace bimoment {

namespace fs = std::filesystem;

namespace {

SyntheticKind parse_kind(const std::string& s) {
  if (s == "rotation") return SyntheticKind::kRotation;
  if (s == "scaling") return SyntheticKind::kScaling;
  throw ValidationError(fmt::format("unknown synthetic kind '{}' (rotation|scaling)", s));
}

const char* kind_name(SyntheticKind k) { return k == SyntheticKind::kRotation ? "rotation" : "scaling"; }

WeightSource parse_weights(const std::string& s) {
  if (s == "covalent") return WeightSource::kCovalent;
  if (s == "zero") return WeightSource::kZero;
  throw ValidationError(fmt::format("unknown weight source '{}' (covalent|zero)", s));
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

void AnalysisManifest::validate() const {
  if (series.empty()) throw ValidationError("manifest lists no series");
  if (res.r1 < 2 || res.r2 < 2) throw ValidationError("csp.res must be at least 2 per axis");
  if (!(padding >= 0.0)) throw ValidationError("csp.padding must be non-negative");
  if (window) window->validate();
  static const std::regex kLabel("[A-Za-z0-9_.-]+");
  std::vector<std::string> labels;
  for (const auto& s : series) {
    if (!std::regex_match(s.state_label, kLabel))
      throw ValidationError(fmt::format("state label '{}' must match [A-Za-z0-9_.-]+", s.state_label));
    if (std::find(labels.begin(), labels.end(), s.state_label) != labels.end())
      throw ValidationError(fmt::format("duplicate state label '{}'", s.state_label));
    labels.push_back(s.state_label);
    if (s.synthetic) {
      if (s.synthetic->steps < 1) throw ValidationError("synthetic series need at least one step");
      if (s.synthetic->n < 2 || s.synthetic->nz < 2) throw ValidationError("synthetic grids need n, nz >= 2");
      if (s.synthetic->b && (*s.synthetic->b < -0.5 || *s.synthetic->b > 0.0))
        throw ValidationError("synthetic b must lie in [-0.5, 0]");
      continue;
    }
    if (s.steps.empty()) throw ValidationError(fmt::format("series '{}' has no steps", s.state_label));
    for (std::size_t i = 0; i < s.steps.size(); ++i) {
      if (i > 0 && !(s.steps[i].time_fs > s.steps[i - 1].time_fs))
        throw ValidationError(fmt::format("series '{}': time_fs must be strictly increasing", s.state_label));
      for (const auto& p : {s.steps[i].f1_path, s.steps[i].f2_path})
        if (!fs::exists(p)) throw ValidationError(fmt::format("series '{}': missing file '{}'", s.state_label, p.string()));
    }
  }
}

AnalysisManifest parse_manifest(const std::string& text, const fs::path& base_dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("manifest is not valid JSON: {}", e.what()));
  }
  AnalysisManifest m;
  try {
    for (const auto& s : j.at("series")) {
      SeriesSpec spec;
      spec.state_label = s.at("state_label").get<std::string>();
      if (s.contains("synthetic")) {
        const auto& y = s.at("synthetic");
        SyntheticSpec syn;
        syn.kind = parse_kind(y.at("kind").get<std::string>());
        syn.steps = get_or(y, "steps", 50);
        if (y.contains("b")) syn.b = y.at("b").get<double>();
        syn.seed = get_or<std::uint64_t>(y, "seed", 0);
        syn.n = get_or(y, "n", 64);
        syn.nz = get_or(y, "nz", 4);
        spec.synthetic = syn;
      } else {
        for (const auto& st : s.at("steps"))
          spec.steps.push_back({st.at("time_fs").get<double>(), resolve(base_dir, st.at("f1_path").get<std::string>()),
                                resolve(base_dir, st.at("f2_path").get<std::string>())});
      }
      m.series.push_back(std::move(spec));
    }
    if (j.contains("csp")) {
      const auto& c = j.at("csp");
      if (c.contains("res")) {
        const auto& r = c.at("res");
        m.res = r.is_array() ? Resolution{r.at(0).get<int>(), r.at(1).get<int>()} : Resolution{r.get<int>(), r.get<int>()};
      }
      if (c.contains("window") && !(c.at("window").is_string() && c.at("window").get<std::string>() == "auto")) {
        const auto& w = c.at("window");
        m.window = RangeWindow{w.at("min1").get<double>(), w.at("max1").get<double>(), w.at("min2").get<double>(),
                               w.at("max2").get<double>()};
      }
      m.padding = get_or(c, "padding", 0.05);
    }
    if (j.contains("moments")) {
      m.pooling = parse_pooling(get_or<std::string>(j.at("moments"), "pooling", "per-order"));
      m.moment_weight = parse_moment_weight(get_or<std::string>(j.at("moments"), "weight", "range-density"));
    }
    if (j.contains("segmentation"))
      m.weights = parse_weights(get_or<std::string>(j.at("segmentation"), "weights", "covalent"));
    m.output_dir = resolve(base_dir, get_or<std::string>(j, "output_dir", "run"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed manifest: {}", e.what()));
  }
  return m;
}

AnalysisManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError(fmt::format("manifest '{}' does not exist", path.string()));
  return parse_manifest(read_text(path), fs::absolute(path).parent_path());
}

std::string manifest_json(const AnalysisManifest& m) {
  nlohmann::ordered_json j;
  auto& arr = j["series"] = nlohmann::ordered_json::array();
  for (const auto& s : m.series) {
    nlohmann::ordered_json o;
    o["state_label"] = s.state_label;
    if (s.synthetic) {
      const auto& y = *s.synthetic;
      o["synthetic"] = {{"kind", kind_name(y.kind)}, {"steps", y.steps}, {"seed", y.seed}, {"n", y.n}, {"nz", y.nz}};
      if (y.b) o["synthetic"]["b"] = *y.b;
    } else {
      o["steps"] = nlohmann::ordered_json::array();
      for (const auto& st : s.steps)
        o["steps"].push_back({{"time_fs", st.time_fs}, {"f1_path", st.f1_path.string()}, {"f2_path", st.f2_path.string()}});
    }
    arr.push_back(o);
  }
  j["csp"]["res"] = {m.res.r1, m.res.r2};
  if (m.window)
    j["csp"]["window"] = {{"min1", m.window->min1}, {"max1", m.window->max1}, {"min2", m.window->min2}, {"max2", m.window->max2}};
  else
    j["csp"]["window"] = "auto";
  j["csp"]["padding"] = m.padding;
  j["moments"]["pooling"] = to_string(m.pooling);
  j["moments"]["weight"] = to_string(m.moment_weight);
  j["segmentation"]["weights"] = m.weights == WeightSource::kCovalent ? "covalent" : "zero";
  j["output_dir"] = m.output_dir.string();
  return j.dump(1) + "\n";
}

double synthetic_offset(const SyntheticSpec& spec) {
  if (spec.b) return *spec.b;
  std::mt19937_64 rng(spec.seed);
  return std::uniform_real_distribution<double>(-0.5, 0.0)(rng);
}

StepSource step_source(const SeriesSpec& series, std::size_t step) {
  if (step >= series.step_count()) throw NotFoundError(fmt::format("series '{}' has no step {}", series.state_label, step));
  if (series.synthetic) {
    const auto& y = *series.synthetic;
    return SyntheticStep{y.kind, static_cast<int>(step), y.kind == SyntheticKind::kScaling ? synthetic_offset(y) : 0.0, y.n,
                         y.nz};
  }
  return series.steps[step];
}

double step_time_fs(const SeriesSpec& series, std::size_t step) {
  return series.synthetic ? static_cast<double>(step) : series.steps.at(step).time_fs;
}

LoadedStep load_step(const StepSource& source, WeightSource weights) {
  LoadedStep out;
  if (const auto* syn = std::get_if<SyntheticStep>(&source)) {
    const GridSpec grid = synthetic_grid(syn->n, syn->nz);
    out.field = syn->kind == SyntheticKind::kRotation ? gen_rotation_field(syn->t, grid)
                                                      : gen_scaling_field(syn->t, syn->b, grid);
    out.atoms = {Atom{1, "X", {0.5, 0.5, 0.5}, 0.0}};
    return out;
  }
  const auto& cube = std::get<CubeStepSpec>(source);
  auto c1 = read_cube(cube.f1_path);
  auto c2 = read_cube(cube.f2_path);
  out.field = BivariateField(std::move(c1.grid), std::move(c2.grid));
  out.atoms = std::move(c1.atoms);
  if (weights == WeightSource::kZero)
    for (auto& a : out.atoms) a.weight = 0.0;
  return out;
}

nlohmann::ordered_json step_source_json(const StepSource& source) {
  nlohmann::ordered_json j;
  if (const auto* syn = std::get_if<SyntheticStep>(&source)) {
    j["synthetic"] = {{"kind", kind_name(syn->kind)}, {"t", syn->t}, {"b", syn->b}, {"n", syn->n}, {"nz", syn->nz}};
  } else {
    const auto& c = std::get<CubeStepSpec>(source);
    j["cube"] = {{"time_fs", c.time_fs}, {"f1_path", c.f1_path.string()}, {"f2_path", c.f2_path.string()}};
  }
  return j;
}

StepSource parse_step_source(const nlohmann::json& j) {
  if (j.contains("synthetic")) {
    const auto& y = j.at("synthetic");
    return SyntheticStep{parse_kind(y.at("kind").get<std::string>()), y.at("t").get<int>(), y.at("b").get<double>(),
                         y.at("n").get<int>(), y.at("nz").get<int>()};
  }
  const auto& c = j.at("cube");
  return CubeStepSpec{c.at("time_fs").get<double>(), c.at("f1_path").get<std::string>(), c.at("f2_path").get<std::string>()};
}

}  // namespace bimoment
