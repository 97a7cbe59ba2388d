#include "bimoment/segmentation.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include <fmt/format.h>
#include <json.hpp>

#include "bimoment/binary_io.hpp"

namespace bimoment {

bool LabelGrid::has_segment(int id) const {
  return std::any_of(atoms.begin(), atoms.end(), [id](const Atom& a) { return a.id == id; });
}

LabelGrid label_power_diagram(const GridSpec& grid, const AtomList& atoms) {
  grid.validate();
  if (atoms.empty()) throw ValidationError("power diagram labeling needs at least one atom");
  validate_atoms(atoms);

  // Ascending id order so strict '<' resolves ties to the smallest id.
  AtomList sorted = atoms;
  std::sort(sorted.begin(), sorted.end(), [](const Atom& a, const Atom& b) { return a.id < b.id; });

  LabelGrid out;
  out.spec = grid;
  out.atoms = sorted;
  out.labels.resize(grid.vertex_count());
  for (int k = 0; k < grid.dims[2]; ++k)
    for (int j = 0; j < grid.dims[1]; ++j)
      for (int i = 0; i < grid.dims[0]; ++i) {
        const Vec3 p = grid.position(i, j, k);
        double best = std::numeric_limits<double>::infinity();
        int best_id = kUnassigned;
        for (const auto& a : sorted) {
          const double dx = p[0] - a.center[0], dy = p[1] - a.center[1], dz = p[2] - a.center[2];
          const double d = dx * dx + dy * dy + dz * dz - a.weight;
          if (d < best) {
            best = d;
            best_id = a.id;
          }
        }
        out.labels[grid.index(i, j, k)] = best_id;
      }
  return out;
}

std::map<int, std::size_t> segment_vertex_counts(const LabelGrid& labels) {
  labels.spec.validate();
  if (labels.labels.size() != labels.spec.vertex_count())
    throw ValidationError("label grid size does not match its dims");
  std::map<int, std::size_t> counts;
  for (const auto& a : labels.atoms) counts[a.id] = 0;
  for (auto l : labels.labels) ++counts[l];
  return counts;
}

void write_label_grid(const std::filesystem::path& stem, const LabelGrid& labels) {
  auto bin = stem;
  bin += ".bin";
  auto side = stem;
  side += ".json";
  write_binary(bin, std::span<const std::int32_t>(labels.labels));

  nlohmann::json j;
  j["dims"] = labels.spec.dims;
  j["origin"] = labels.spec.origin;
  j["spacing"] = labels.spec.spacing;
  auto& ids = j["id_map"] = nlohmann::json::array();
  for (const auto& a : labels.atoms)
    ids.push_back({{"id", a.id}, {"element", a.element}, {"center", a.center}, {"weight", a.weight}});
  write_text(side, j.dump(1) + "\n");
}

LabelGrid read_label_grid(const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto side = stem;
  side += ".json";
  const auto j = nlohmann::json::parse(read_text(side));
  LabelGrid out;
  out.spec.dims = j.at("dims").get<std::array<int, 3>>();
  out.spec.origin = j.at("origin").get<Vec3>();
  out.spec.spacing = j.at("spacing").get<Vec3>();
  for (const auto& a : j.at("id_map"))
    out.atoms.push_back({a.at("id").get<int>(), a.at("element").get<std::string>(), a.at("center").get<Vec3>(),
                         a.at("weight").get<double>()});
  out.labels = read_binary<std::int32_t>(bin);
  if (out.labels.size() != out.spec.vertex_count())
    throw TruncationError(fmt::format("label file '{}' has {} entries, expected {}", bin.string(),
                                      out.labels.size(), out.spec.vertex_count()));
  return out;
}

}  // namespace bimoment
