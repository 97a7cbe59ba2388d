#include "bimoment/field.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "element_table_data.hpp"

namespace bimoment {

namespace {

constexpr double kBohrPerAngstrom = 1.0 / 0.529177210903;

}  // namespace

void GridSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] <= 0) throw ValidationError(fmt::format("grid dims must be positive (axis {} = {})", a, dims[a]));
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
      throw ValidationError(fmt::format("grid spacing must be positive (axis {} = {})", a, spacing[a]));
  }
}

std::size_t GridSpec::cell_count() const {
  std::size_t n = 1;
  for (int a = 0; a < 3; ++a) n *= static_cast<std::size_t>(std::max(dims[a] - 1, 0));
  return n;
}

Vec3 GridSpec::position(std::size_t linear) const {
  const auto nx = static_cast<std::size_t>(dims[0]);
  const auto ny = static_cast<std::size_t>(dims[1]);
  const int i = static_cast<int>(linear % nx);
  const int j = static_cast<int>((linear / nx) % ny);
  const int k = static_cast<int>(linear / (nx * ny));
  return position(i, j, k);
}

ScalarGrid::ScalarGrid(GridSpec spec, std::vector<double> values)
    : spec_(spec), values_(std::move(values)) {
  spec_.validate();
  if (values_.size() != spec_.vertex_count())
    throw ValidationError(fmt::format("grid has {} values, dims require {}", values_.size(), spec_.vertex_count()));
  for (double v : values_)
    if (!std::isfinite(v)) throw ValidationError("grid contains non-finite values");
}

std::pair<double, double> ScalarGrid::minmax() const {
  auto [lo, hi] = std::minmax_element(values_.begin(), values_.end());
  return {*lo, *hi};
}

BivariateField::BivariateField(ScalarGrid f1, ScalarGrid f2) : f1_(std::move(f1)), f2_(std::move(f2)) {
  if (!(f1_.spec() == f2_.spec())) throw ValidationError("f1 and f2 must share dims, origin and spacing");
}

void validate_atoms(const AtomList& atoms) {
  std::set<int> seen;
  for (const auto& a : atoms) {
    if (!seen.insert(a.id).second) throw ValidationError(fmt::format("duplicate atom id {}", a.id));
    if (a.weight < 0.0) throw ValidationError(fmt::format("atom {} has negative weight", a.id));
  }
}

void RangeWindow::validate() const {
  if (!(min1 < max1) || !(min2 < max2) || !std::isfinite(min1) || !std::isfinite(max1) ||
      !std::isfinite(min2) || !std::isfinite(max2))
    throw ValidationError(fmt::format("degenerate range window [{}, {}] x [{}, {}]", min1, max1, min2, max2));
}

void BivariateTimeSeries::validate() const {
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (!(steps[i].time_fs > steps[i - 1].time_fs))
      throw ValidationError(fmt::format("series '{}': time stamps must be strictly increasing", state_label));
    if (steps[i].field.spec().dims != steps[0].field.spec().dims)
      throw ValidationError(fmt::format("series '{}': all steps must share grid dims", state_label));
  }
}

// --- Gaussian cube -----------------------------------------------------------

namespace {

class LineReader {
 public:
  explicit LineReader(const std::string& text) : in_(text) {}

  bool next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  }
  std::string require(const char* what) {
    std::string line;
    if (!next(line)) throw ParseError(fmt::format("unexpected end of file, expected {}", what), line_no_ + 1);
    return line;
  }
  int line_no() const { return line_no_; }

 private:
  std::istringstream in_;
  int line_no_ = 0;
};

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

bool to_double(std::string_view tok, double& out) {
  // from_chars rejects a leading '+', which some writers emit.
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  // Fortran-style exponents (1.0D-03).
  std::string buf(tok);
  for (auto& c : buf)
    if (c == 'D' || c == 'd') c = 'e';
  auto [p, ec] = std::from_chars(buf.data(), buf.data() + buf.size(), out);
  return ec == std::errc() && p == buf.data() + buf.size();
}

bool to_int(std::string_view tok, long& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && p == tok.data() + tok.size();
}

std::vector<double> parse_reals(const std::string& line, std::size_t min_count, int line_no, const char* what) {
  auto toks = split_ws(line);
  if (toks.size() < min_count)
    throw ParseError(fmt::format("malformed {}: expected {} fields, got {}", what, min_count, toks.size()), line_no);
  std::vector<double> out;
  for (auto t : toks) {
    double v;
    if (!to_double(t, v)) throw ParseError(fmt::format("malformed {}: bad number '{}'", what, t), line_no);
    out.push_back(v);
  }
  return out;
}

long parse_count(const std::vector<double>& fields, std::size_t i, int line_no, const char* what) {
  const double v = fields[i];
  if (v != std::floor(v)) throw ParseError(fmt::format("malformed {}: count must be integral", what), line_no);
  return static_cast<long>(v);
}

}  // namespace

CubeFile parse_cube(const std::string& text) {
  LineReader reader(text);
  reader.require("comment line 1");
  reader.require("comment line 2");

  const auto header_line = reader.require("atom count and origin");
  auto header = parse_reals(header_line, 4, reader.line_no(), "atom/origin record");
  const long natoms_signed = parse_count(header, 0, reader.line_no(), "atom/origin record");
  const long nval = header.size() >= 5 ? parse_count(header, 4, reader.line_no(), "atom/origin record") : 1;
  if (nval != 1) throw UnsupportedFormatError("cube files with more than one value per voxel are not supported");
  const std::size_t natoms = static_cast<std::size_t>(std::labs(natoms_signed));

  GridSpec spec;
  spec.origin = {header[1], header[2], header[3]};
  bool angstrom = false;
  for (int a = 0; a < 3; ++a) {
    const auto axis_line = reader.require("axis record");
    auto axis = parse_reals(axis_line, 4, reader.line_no(), "axis record");
    long n = parse_count(axis, 0, reader.line_no(), "axis record");
    if (n == 0) throw ParseError("malformed axis record: zero voxel count", reader.line_no());
    if (n < 0) {
      angstrom = true;
      n = -n;
    }
    spec.dims[a] = static_cast<int>(n);
    for (int b = 0; b < 3; ++b) {
      if (b != a && axis[1 + b] != 0.0)
        throw UnsupportedFormatError(fmt::format("non-orthogonal or non-axis-aligned cube axis {} (line {})", a, reader.line_no()));
    }
    if (!(axis[1 + a] > 0.0))
      throw UnsupportedFormatError(fmt::format("cube axis {} must have positive step (line {})", a, reader.line_no()));
    spec.spacing[a] = axis[1 + a];
  }

  CubeFile cube;
  cube.angstrom = angstrom;
  for (std::size_t i = 0; i < natoms; ++i) {
    const auto atom_line = reader.require("atom record");
    auto rec = parse_reals(atom_line, 5, reader.line_no(), "atom record");
    const long z = parse_count(rec, 0, reader.line_no(), "atom record");
    Atom atom;
    atom.id = static_cast<int>(i) + 1;
    atom.center = {rec[2], rec[3], rec[4]};
    std::string symbol = "X";
    for (const auto& e : element_table())
      if (e.z == z) symbol = e.symbol;
    atom.element = symbol;
    atom.weight = default_atom_weight(symbol, angstrom);
    cube.atoms.push_back(atom);
  }

  // Remaining tokens; the orbital-id record (negative atom count) comes first.
  std::string line;
  std::vector<std::pair<double, int>> tokens;
  bool first_data_line = true;
  long orbital_ids_to_skip = 0;
  while (reader.next(line)) {
    auto toks = split_ws(line);
    for (auto t : toks) {
      if (natoms_signed < 0 && first_data_line) {
        long m;
        if (!to_int(t, m) || m < 0) throw ParseError("malformed orbital id record", reader.line_no());
        orbital_ids_to_skip = m;
        first_data_line = false;
        continue;
      }
      if (orbital_ids_to_skip > 0) {
        long id;
        if (!to_int(t, id)) throw ParseError("malformed orbital id record", reader.line_no());
        --orbital_ids_to_skip;
        continue;
      }
      double v;
      if (!to_double(t, v)) throw ParseError(fmt::format("bad value '{}'", t), reader.line_no());
      if (!std::isfinite(v)) throw ParseError("non-finite value in volumetric data", reader.line_no());
      tokens.emplace_back(v, reader.line_no());
    }
  }

  const std::size_t expected = spec.vertex_count();
  if (tokens.size() != expected)
    throw TruncationError(fmt::format("cube value count mismatch: expected {}, found {}", expected, tokens.size()));

  // File order is z-fastest; remap to x-fastest.
  std::vector<double> values(expected);
  std::size_t n = 0;
  for (int i = 0; i < spec.dims[0]; ++i)
    for (int j = 0; j < spec.dims[1]; ++j)
      for (int k = 0; k < spec.dims[2]; ++k) values[spec.index(i, j, k)] = tokens[n++].first;

  cube.grid = ScalarGrid(spec, std::move(values));
  return cube;
}

CubeFile read_cube(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError(fmt::format("cannot open cube file '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_cube(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()), e.line());
  } catch (const TruncationError& e) {
    throw TruncationError(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const UnsupportedFormatError& e) {
    throw UnsupportedFormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::pair<ScalarGrid, AtomList> load_cube(const std::filesystem::path& path) {
  auto cube = read_cube(path);
  return {std::move(cube.grid), std::move(cube.atoms)};
}

std::string format_cube(const ScalarGrid& grid, const AtomList& atoms, const std::string& comment) {
  const auto& s = grid.spec();
  std::string out;
  out += comment + "\n";
  out += "OUTER LOOP: X, MIDDLE LOOP: Y, INNER LOOP: Z\n";
  out += fmt::format("{:5d} {:.17g} {:.17g} {:.17g}\n", atoms.size(), s.origin[0], s.origin[1], s.origin[2]);
  for (int a = 0; a < 3; ++a) {
    Vec3 axis{0.0, 0.0, 0.0};
    axis[a] = s.spacing[a];
    out += fmt::format("{:5d} {:.17g} {:.17g} {:.17g}\n", s.dims[a], axis[0], axis[1], axis[2]);
  }
  for (const auto& atom : atoms) {
    int z = 0;
    for (const auto& e : element_table())
      if (e.symbol == atom.element) z = e.z;
    out += fmt::format("{:5d} {:.17g} {:.17g} {:.17g} {:.17g}\n", z, static_cast<double>(z), atom.center[0],
                       atom.center[1], atom.center[2]);
  }
  for (int i = 0; i < s.dims[0]; ++i)
    for (int j = 0; j < s.dims[1]; ++j) {
      for (int k = 0; k < s.dims[2]; ++k) {
        out += fmt::format("{:.17g}", grid.at(i, j, k));
        out += (k % 6 == 5 || k == s.dims[2] - 1) ? '\n' : ' ';
      }
    }
  return out;
}

void write_cube(const std::filesystem::path& path, const ScalarGrid& grid, const AtomList& atoms,
                const std::string& comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write cube file '{}'", path.string()));
  out << format_cube(grid, atoms, comment);
  if (!out) throw Error(fmt::format("write failed for '{}'", path.string()));
}

// --- Element table -----------------------------------------------------------

namespace {

struct ElementTable {
  int version = 0;
  std::vector<ElementInfo> elements;
};

const ElementTable& table() {
  static const ElementTable t = [] {
    ElementTable out;
    const auto doc = nlohmann::json::parse(kElementTableJson);
    out.version = doc.at("version").get<int>();
    for (const auto& e : doc.at("elements"))
      out.elements.push_back({e.at("z").get<int>(), e.at("symbol").get<std::string>(),
                              e.at("covalent_radius").get<double>()});
    return out;
  }();
  return t;
}

}  // namespace

const std::vector<ElementInfo>& element_table() { return table().elements; }
int element_table_version() { return table().version; }

const ElementInfo& element_by_z(int z) {
  for (const auto& e : element_table())
    if (e.z == z) return e;
  throw NotFoundError(fmt::format("no element with Z = {}", z));
}

const ElementInfo& element_by_symbol(const std::string& symbol) {
  for (const auto& e : element_table())
    if (e.symbol == symbol) return e;
  throw NotFoundError(fmt::format("unknown element '{}'", symbol));
}

double default_atom_weight(const std::string& element, bool angstrom_units) {
  double r = element_by_symbol(element).covalent_radius_angstrom;
  if (!angstrom_units) r *= kBohrPerAngstrom;
  return r * r;
}

// --- Synthetic fields --------------------------------------------------------

GridSpec synthetic_grid(int n, int nz) {
  if (n < 2 || nz < 2) throw ValidationError("synthetic grids need at least 2 points per axis");
  GridSpec g;
  g.dims = {n, n, nz};
  g.origin = {0.0, 0.0, 0.0};
  g.spacing = {1.0 / (n - 1), 1.0 / (n - 1), 1.0 / (nz - 1)};
  return g;
}

double rotation_coefficient(int t) { return 0.01 + 0.02 * t; }
double scaling_coefficient(int t) { return 1.0 - 0.02 * t; }

namespace {

template <class F>
BivariateField sample_xy(const GridSpec& grid, F&& second) {
  grid.validate();
  std::vector<double> v1(grid.vertex_count()), v2(grid.vertex_count());
  for (int k = 0; k < grid.dims[2]; ++k)
    for (int j = 0; j < grid.dims[1]; ++j)
      for (int i = 0; i < grid.dims[0]; ++i) {
        const auto p = grid.position(i, j, k);
        const auto idx = grid.index(i, j, k);
        v1[idx] = p[0];
        v2[idx] = second(p[0], p[1]);
      }
  return BivariateField(ScalarGrid(grid, std::move(v1)), ScalarGrid(grid, std::move(v2)));
}

}  // namespace

BivariateField rotation_field(double a, const GridSpec& grid) {
  return sample_xy(grid, [a](double x, double y) { return a * y + (1.0 - a) * x; });
}

BivariateField scaling_field(double a, double b, const GridSpec& grid) {
  return sample_xy(grid, [a, b](double x, double) { return a * (x + b); });
}

BivariateField gen_rotation_field(int t, const GridSpec& grid) {
  if (t < 0) throw ValidationError("time step must be non-negative");
  return rotation_field(rotation_coefficient(t), grid);
}

BivariateField gen_scaling_field(int t, double b, const GridSpec& grid) {
  if (t < 0) throw ValidationError("time step must be non-negative");
  return scaling_field(scaling_coefficient(t), b, grid);
}

// --- Range window ------------------------------------------------------------

ChannelRange field_range(const BivariateField& field) {
  auto [lo1, hi1] = field.f1().minmax();
  auto [lo2, hi2] = field.f2().minmax();
  return {lo1, hi1, lo2, hi2};
}

namespace {

std::pair<double, double> pad(double lo, double hi, double padding) {
  if (lo == hi) return {lo - 0.5, hi + 0.5};
  const double d = padding * (hi - lo);
  return {lo - d, hi + d};
}

}  // namespace

RangeWindow window_from_range(const ChannelRange& r, double padding) {
  if (padding < 0.0) throw ValidationError("padding must be non-negative");
  auto [a1, b1] = pad(r.min1, r.max1, padding);
  auto [a2, b2] = pad(r.min2, r.max2, padding);
  return {a1, b1, a2, b2};
}

RangeWindow global_range_window(const std::vector<ChannelRange>& ranges, double padding) {
  if (ranges.empty()) throw ValidationError("global range window needs at least one field");
  ChannelRange u = ranges.front();
  for (const auto& r : ranges) {
    u.min1 = std::min(u.min1, r.min1);
    u.max1 = std::max(u.max1, r.max1);
    u.min2 = std::min(u.min2, r.min2);
    u.max2 = std::max(u.max2, r.max2);
  }
  return window_from_range(u, padding);
}

RangeWindow global_range_window(const std::vector<BivariateTimeSeries>& series, double padding) {
  std::vector<ChannelRange> ranges;
  for (const auto& s : series)
    for (const auto& step : s.steps) ranges.push_back(field_range(step.field));
  return global_range_window(ranges, padding);
}

}  // namespace bimoment
