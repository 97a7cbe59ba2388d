#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace bimoment {

// Incremental SHA-256, hex digest.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::string_view bytes);
  Sha256& update(std::span<const double> values);
  std::string hex();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view bytes);

// Standard (padded) base64 via OpenSSL.
std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace bimoment
