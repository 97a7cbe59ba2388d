#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bimoment/field.hpp"

namespace bimoment {

inline constexpr int kUnassigned = -1;

// Per-vertex segment ids over a grid. Vertex v belongs to the atom with the
// smallest power distance |v - c|^2 - w.
struct LabelGrid {
  GridSpec spec;
  std::vector<std::int32_t> labels;
  AtomList atoms;  // seeding atoms, for the id map

  bool has_segment(int id) const;
};

LabelGrid label_power_diagram(const GridSpec& grid, const AtomList& atoms);

// Counts for every seeding atom id (zero when a seed owns no vertex).
std::map<int, std::size_t> segment_vertex_counts(const LabelGrid& labels);

// int32 little-endian labels at <stem>.bin plus a JSON sidecar <stem>.json.
void write_label_grid(const std::filesystem::path& stem, const LabelGrid& labels);
LabelGrid read_label_grid(const std::filesystem::path& stem);

}  // namespace bimoment
