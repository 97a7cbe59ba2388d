#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>

#include "bimoment/embedding.hpp"
#include "bimoment/fiber.hpp"
#include "bimoment/manifest.hpp"
#include "bimoment/moments.hpp"

namespace bimoment {

// Immutable view of a completed run directory. Densities and fields stay on
// disk; only their index is held in memory.
struct DatasetSnapshot {
  std::filesystem::path dir;
  std::string manifest_text;
  RangeWindow window;
  Resolution res;
  MomentTable moments;
  PCAModel pca;
  TrackSet tracks;
  // (state, segment id, time index) -> CSP stem
  std::map<std::tuple<std::string, int, int>, std::filesystem::path> csp_index;
  // (state, time index) -> step source
  std::map<std::pair<std::string, int>, StepSource> field_index;
  WeightSource weights = WeightSource::kCovalent;
  std::string content_hash;

  // Throws NotFoundError when dir is missing, empty or not a run directory.
  static DatasetSnapshot load(const std::filesystem::path& dir);
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::map<std::string, std::string> headers;
};

struct ServiceOptions {
  std::size_t field_cache_steps = 4;
  std::chrono::milliseconds fiber_timeout{30000};
  std::string cors_origin = "*";
};

class Service {
 public:
  explicit Service(std::filesystem::path data_dir, ServiceOptions options = {});

  // Loads the snapshot; requests answer 503 until this returns, and 404 if
  // the directory holds no run.
  void load();
  bool ready() const { return state_.load() == State::kReady; }

  // `target` is the request path with an optional query string.
  HttpResponse handle(const std::string& method, const std::string& target, const std::string& body = {},
                      const std::string& if_none_match = {});

  const DatasetSnapshot& snapshot() const { return *snapshot_; }

 private:
  enum class State { kLoading, kReady, kMissing };

  HttpResponse summary() const;
  HttpResponse tracks(const std::map<std::string, std::string>& query) const;
  HttpResponse csp(const std::string& state, const std::string& segment, const std::string& t) const;
  HttpResponse fiber(const std::string& body);
  std::shared_ptr<const BivariateField> field(const std::string& state, int t);

  std::filesystem::path data_dir_;
  ServiceOptions options_;
  std::atomic<State> state_{State::kLoading};
  std::string missing_reason_;
  std::unique_ptr<const DatasetSnapshot> snapshot_;

  std::mutex cache_mutex_;
  std::list<std::pair<std::pair<std::string, int>, std::shared_ptr<const BivariateField>>> field_cache_;
};

// HTTP front end over a Service.
class HttpServer {
 public:
  HttpServer(std::filesystem::path data_dir, ServiceOptions options = {});
  ~HttpServer();

  // Port 0 picks a free port; returns the bound port.
  int bind(const std::string& host, int port);
  // Loads the snapshot in the background and serves until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Blocks serving HTTP on host:port. The snapshot loads after the socket is
// bound, so early requests see 503.
void serve(const std::filesystem::path& data_dir, const std::string& host, int port, ServiceOptions options = {});

}  // namespace bimoment
