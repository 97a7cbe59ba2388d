#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "bimoment/error.hpp"

namespace bimoment {

// Creates the parent directory of `path`; throws Error instead of filesystem_error.
inline void ensure_parent_dir(const std::filesystem::path& path) {
  if (!path.has_parent_path()) return;
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw Error("cannot create directory for '" + path.string() + "': " + ec.message());
}

// Raw host-order dumps of trivially copyable arrays. All supported targets are
// little-endian.
template <class T>
void write_binary(const std::filesystem::path& path, std::span<const T> data) {
  static_assert(std::is_trivially_copyable_v<T>);
  ensure_parent_dir(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

template <class T>
std::vector<T> read_binary(const std::filesystem::path& path) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw NotFoundError("cannot open '" + path.string() + "'");
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size % sizeof(T) != 0) throw TruncationError("'" + path.string() + "' is not a whole number of records");
  std::vector<T> out(size / sizeof(T));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size));
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace bimoment
