#include <cmath>
#include <cstdio>
#include <memory>

#include <fmt/format.h>
#include <json.hpp>
#include <png.h>

#include "bimoment/binary_io.hpp"
#include "bimoment/csp.hpp"

namespace bimoment {

namespace {

std::filesystem::path with_ext(std::filesystem::path stem, const char* ext) {
  stem += ext;
  return stem;
}

}  // namespace

std::string csp_sidecar_json(const CSPHistogram& hist, const CSPMeta& meta) {
  nlohmann::ordered_json j;
  j["window"] = {{"min1", hist.window.min1}, {"max1", hist.window.max1},
                 {"min2", hist.window.min2}, {"max2", hist.window.max2}};
  j["res"] = {hist.res.r1, hist.res.r2};
  j["total_mass"] = hist.total_mass();
  j["out_of_window"] = hist.out_of_window;
  j["segment_id"] = meta.segment_id;
  j["segment_key"] = segment_key(meta.segment_id);
  j["time_index"] = meta.time_index;
  j["state_label"] = meta.state_label;
  return j.dump(1) + "\n";
}

void write_csp(const std::filesystem::path& stem, const CSPHistogram& hist, const CSPMeta& meta) {
  write_binary(with_ext(stem, ".bin"), std::span<const double>(hist.density));
  write_text(with_ext(stem, ".json"), csp_sidecar_json(hist, meta));
}

std::pair<CSPHistogram, CSPMeta> read_csp(const std::filesystem::path& stem) {
  const auto j = nlohmann::json::parse(read_text(with_ext(stem, ".json")));
  const auto& w = j.at("window");
  RangeWindow window{w.at("min1").get<double>(), w.at("max1").get<double>(), w.at("min2").get<double>(),
                     w.at("max2").get<double>()};
  Resolution res{j.at("res").at(0).get<int>(), j.at("res").at(1).get<int>()};
  CSPHistogram hist(window, res);
  hist.out_of_window = j.at("out_of_window").get<double>();
  auto bins = read_binary<double>(with_ext(stem, ".bin"));
  if (bins.size() != hist.density.size())
    throw TruncationError(fmt::format("CSP '{}' has {} bins, expected {}", stem.string(), bins.size(),
                                      hist.density.size()));
  hist.density = std::move(bins);
  CSPMeta meta{j.at("segment_id").get<int>(), j.at("time_index").get<int>(), j.at("state_label").get<std::string>()};
  return {std::move(hist), std::move(meta)};
}

std::array<std::uint8_t, 3> yellow_colormap(double t) {
  static constexpr std::array<std::array<double, 3>, 6> kStops = {{
      {255, 255, 229},
      {255, 247, 188},
      {254, 227, 145},
      {254, 196, 79},
      {236, 160, 30},
      {204, 120, 2},
  }};
  t = std::clamp(t, 0.0, 1.0) * (kStops.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(t), kStops.size() - 2);
  const double f = t - i;
  std::array<std::uint8_t, 3> rgb;
  for (int c = 0; c < 3; ++c)
    rgb[c] = static_cast<std::uint8_t>(std::lround(kStops[i][c] + f * (kStops[i + 1][c] - kStops[i][c])));
  return rgb;
}

namespace {

// Only plain locals live across setjmp here; the caller owns every buffer.
bool encode_png(FILE* fp, png_uint_32 width, png_uint_32 height, png_bytep* rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

void render_csp_png(const CSPHistogram& hist, const std::filesystem::path& path) {
  double vmax = 0.0;
  for (double d : hist.density) vmax = std::max(vmax, std::log1p(d));

  // Top row of the image is the highest f2 bin.
  const std::size_t stride = static_cast<std::size_t>(hist.res.r1) * 3;
  std::vector<png_byte> pixels(stride * static_cast<std::size_t>(hist.res.r2));
  std::vector<png_bytep> rows(static_cast<std::size_t>(hist.res.r2));
  for (int y = 0; y < hist.res.r2; ++y) {
    png_bytep row = pixels.data() + stride * static_cast<std::size_t>(hist.res.r2 - 1 - y);
    rows[static_cast<std::size_t>(hist.res.r2 - 1 - y)] = row;
    for (int x = 0; x < hist.res.r1; ++x) {
      const double d = hist.at(x, y);
      std::array<std::uint8_t, 3> rgb{255, 255, 255};
      if (d > 0.0 && vmax > 0.0) rgb = yellow_colormap(std::log1p(d) / vmax);
      std::copy(rgb.begin(), rgb.end(), row + 3 * x);
    }
  }

  ensure_parent_dir(path);
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw Error(fmt::format("cannot write '{}'", path.string()));
  if (!encode_png(fp.get(), static_cast<png_uint_32>(hist.res.r1), static_cast<png_uint_32>(hist.res.r2), rows.data()))
    throw Error(fmt::format("PNG encoding failed for '{}'", path.string()));
}

}  // namespace bimoment
