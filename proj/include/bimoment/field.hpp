#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bimoment/error.hpp"

namespace bimoment {

using Vec3 = std::array<double, 3>;

// Geometry of an axis-aligned regular grid. dims counts sample points per
// axis; the grid spans (dims-1)*spacing in world units.
struct GridSpec {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 origin{0.0, 0.0, 0.0};
  Vec3 spacing{1.0, 1.0, 1.0};

  // Throws ValidationError on non-positive dims or spacing.
  void validate() const;

  std::size_t vertex_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t cell_count() const;
  double cell_volume() const { return spacing[0] * spacing[1] * spacing[2]; }
  double volume() const { return static_cast<double>(cell_count()) * cell_volume(); }

  // x-fastest linear index.
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
  Vec3 position(int i, int j, int k) const {
    return {origin[0] + i * spacing[0], origin[1] + j * spacing[1], origin[2] + k * spacing[2]};
  }
  Vec3 position(std::size_t linear) const;

  bool operator==(const GridSpec&) const = default;
};

// One scalar field sampled on a GridSpec, values x-fastest.
class ScalarGrid {
 public:
  ScalarGrid() = default;
  ScalarGrid(GridSpec spec, std::vector<double> values);

  const GridSpec& spec() const { return spec_; }
  const std::vector<double>& values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double at(int i, int j, int k) const { return values_[spec_.index(i, j, k)]; }

  std::pair<double, double> minmax() const;

 private:
  GridSpec spec_;
  std::vector<double> values_;
};

class BivariateField {
 public:
  BivariateField() = default;
  // Throws ValidationError when the two grids differ in geometry.
  BivariateField(ScalarGrid f1, ScalarGrid f2);

  const ScalarGrid& f1() const { return f1_; }
  const ScalarGrid& f2() const { return f2_; }
  const GridSpec& spec() const { return f1_.spec(); }

 private:
  ScalarGrid f1_;
  ScalarGrid f2_;
};

struct Atom {
  int id = 0;
  std::string element;
  Vec3 center{0.0, 0.0, 0.0};
  double weight = 0.0;  // squared length, same units as the grid
};

using AtomList = std::vector<Atom>;

// Throws ValidationError on duplicate ids or negative weights.
void validate_atoms(const AtomList& atoms);

struct RangeWindow {
  double min1 = 0.0, max1 = 1.0;
  double min2 = 0.0, max2 = 1.0;

  void validate() const;
  double width1() const { return max1 - min1; }
  double width2() const { return max2 - min2; }
  bool operator==(const RangeWindow&) const = default;
};

struct TimeStep {
  double time_fs = 0.0;
  BivariateField field;
  AtomList seeds;
};

struct BivariateTimeSeries {
  std::string state_label;
  std::vector<TimeStep> steps;

  // Strictly increasing time stamps and shared dims.
  void validate() const;
};

// --- Gaussian cube -----------------------------------------------------------

struct CubeFile {
  ScalarGrid grid;
  AtomList atoms;
  bool angstrom = false;  // negative voxel counts in the header
};

CubeFile read_cube(const std::filesystem::path& path);
CubeFile parse_cube(const std::string& text);
std::pair<ScalarGrid, AtomList> load_cube(const std::filesystem::path& path);

// Values are written with round-trip precision, so read_cube(write_cube(g))
// reproduces g bit-exactly.
void write_cube(const std::filesystem::path& path, const ScalarGrid& grid, const AtomList& atoms,
                const std::string& comment = "bimoment");
std::string format_cube(const ScalarGrid& grid, const AtomList& atoms,
                        const std::string& comment = "bimoment");

// --- Element table -----------------------------------------------------------

struct ElementInfo {
  int z = 0;
  std::string symbol;
  double covalent_radius_angstrom = 0.0;
};

// Bundled element table (data/covalent_radii.json).
const std::vector<ElementInfo>& element_table();
int element_table_version();
const ElementInfo& element_by_z(int z);
const ElementInfo& element_by_symbol(const std::string& symbol);

// Squared covalent radius in the requested length unit.
double default_atom_weight(const std::string& element, bool angstrom_units);

// --- Synthetic fields --------------------------------------------------------

// Unit cube sampled with n points in x and y, and nz constant slabs in z.
GridSpec synthetic_grid(int n = 64, int nz = 64);

double rotation_coefficient(int t);
double scaling_coefficient(int t);

// Same families with the coefficient given directly.
BivariateField rotation_field(double a, const GridSpec& grid);
BivariateField scaling_field(double a, double b, const GridSpec& grid);

// f1 = x, f2 = a*y + (1-a)*x with a = 0.01 + 0.02 t.
BivariateField gen_rotation_field(int t, const GridSpec& grid);
// f1 = x, f2 = a*(x + b) with a = 1 - 0.02 t.
BivariateField gen_scaling_field(int t, double b, const GridSpec& grid);

// --- Range window ------------------------------------------------------------

struct ChannelRange {
  double min1, max1, min2, max2;
};

ChannelRange field_range(const BivariateField& field);
RangeWindow window_from_range(const ChannelRange& range, double padding);
RangeWindow global_range_window(const std::vector<BivariateTimeSeries>& series, double padding);
RangeWindow global_range_window(const std::vector<ChannelRange>& ranges, double padding);

}  // namespace bimoment
