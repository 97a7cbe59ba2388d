#include "bimoment/service.hpp"

#include <future>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "bimoment/binary_io.hpp"
#include "bimoment/hash.hpp"
#include "bimoment/pipeline.hpp"

namespace bimoment {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

HttpResponse json_response(int status, const ojson& body) { return {status, body.dump() + "\n", "application/json", {}}; }

HttpResponse error_response(int status, const std::string& message) {
  return json_response(status, ojson{{"error", message}, {"status", status}});
}

std::string percent_decode(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size() && std::isxdigit(static_cast<unsigned char>(s[i + 1])) &&
        std::isxdigit(static_cast<unsigned char>(s[i + 2]))) {
      out += static_cast<char>(std::stoi(s.substr(i + 1, 2), nullptr, 16));
      i += 2;
    } else if (s[i] == '+') {
      out += ' ';
    } else {
      out += s[i];
    }
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) return parts;
    start = pos + 1;
  }
}

std::optional<int> parse_int(const std::string& s) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

ojson window_json(const RangeWindow& w) {
  return {{"min1", w.min1}, {"max1", w.max1}, {"min2", w.min2}, {"max2", w.max2}};
}

}  // namespace

DatasetSnapshot DatasetSnapshot::load(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw NotFoundError(fmt::format("data directory {} does not exist", dir.string()));
  if (fs::is_empty(dir)) throw NotFoundError(fmt::format("data directory {} is empty", dir.string()));
  for (const char* name : {run_layout::kManifest, run_layout::kWindow, run_layout::kMomentsJson,
                           run_layout::kTracksJson, run_layout::kFields})
    if (!fs::exists(dir / name))
      throw NotFoundError(fmt::format("{} is not a run directory (missing {})", dir.string(), name));

  DatasetSnapshot s;
  s.dir = dir;
  s.manifest_text = read_text(dir / run_layout::kManifest);
  const auto manifest = parse_manifest(s.manifest_text, dir);
  s.res = manifest.res;
  s.weights = manifest.weights;
  const auto w = nlohmann::json::parse(read_text(dir / run_layout::kWindow));
  s.window = {w.at("min1"), w.at("max1"), w.at("min2"), w.at("max2")};
  const auto moments_text = read_text(dir / run_layout::kMomentsJson);
  s.moments = parse_moments_json(moments_text);
  const auto tracks_text = read_text(dir / run_layout::kTracksJson);
  std::tie(s.pca, s.tracks) = parse_pca_tracks_json(tracks_text);
  const auto fields_text = read_text(dir / run_layout::kFields);
  const auto fields = nlohmann::json::parse(fields_text);
  for (const auto& step : fields.at("steps"))
    s.field_index.emplace(std::pair{step.at("state_label").get<std::string>(), step.at("time_index").get<int>()},
                          parse_step_source(step.at("source")));

  // csp/<state>/<tttt>/<segment>.json
  const fs::path csp_root = dir / "csp";
  if (fs::is_directory(csp_root)) {
    for (const auto& state_dir : fs::directory_iterator(csp_root)) {
      if (!state_dir.is_directory()) continue;
      for (const auto& step_dir : fs::directory_iterator(state_dir.path())) {
        const auto t = parse_int(step_dir.path().filename().string());
        if (!step_dir.is_directory() || !t) continue;
        for (const auto& f : fs::directory_iterator(step_dir.path())) {
          if (f.path().extension() != ".json" || f.path().stem() == "cache") continue;
          int segment = 0;
          try {
            segment = parse_segment_key(f.path().stem().string());
          } catch (const ValidationError&) {
            continue;
          }
          auto stem = f.path();
          stem.replace_extension();
          s.csp_index.emplace(std::tuple{state_dir.path().filename().string(), segment, *t}, stem);
        }
      }
    }
  }

  Sha256 h;
  h.update(s.manifest_text).update(read_text(dir / run_layout::kWindow)).update(moments_text);
  h.update(tracks_text).update(fields_text);
  for (const auto& [key, stem] : s.csp_index) {
    h.update(fmt::format("{}/{}/{}", std::get<0>(key), std::get<1>(key), std::get<2>(key)));
    h.update(read_text(fs::path(stem) += ".json"));
  }
  s.content_hash = h.hex();
  return s;
}

Service::Service(fs::path data_dir, ServiceOptions options) : data_dir_(std::move(data_dir)), options_(std::move(options)) {}

void Service::load() {
  try {
    snapshot_ = std::make_unique<const DatasetSnapshot>(DatasetSnapshot::load(data_dir_));
    state_ = State::kReady;
  } catch (const NotFoundError& e) {
    missing_reason_ = e.what();
    state_ = State::kMissing;
  }
}

HttpResponse Service::handle(const std::string& method, const std::string& target, const std::string& body,
                             const std::string& if_none_match) {
  HttpResponse r;
  const auto qpos = target.find('?');
  const std::string path = target.substr(0, qpos);
  std::map<std::string, std::string> query;
  if (qpos != std::string::npos)
    for (const auto& kv : split(target.substr(qpos + 1), '&')) {
      if (kv.empty()) continue;
      const auto eq = kv.find('=');
      query[percent_decode(kv.substr(0, eq))] = eq == std::string::npos ? "" : percent_decode(kv.substr(eq + 1));
    }
  auto parts = split(path, '/');
  if (!parts.empty() && parts.front().empty()) parts.erase(parts.begin());

  if (method == "OPTIONS") {
    r = {204, "", "application/json", {}};
  } else if (parts.size() < 3 || parts[0] != "api" || parts[1] != "v1") {
    r = error_response(404, "unknown endpoint");
  } else if (state_ == State::kLoading) {
    r = error_response(503, "dataset is loading");
  } else if (state_ == State::kMissing) {
    r = error_response(404, missing_reason_);
  } else {
    const std::string& endpoint = parts[2];
    const bool is_get = method == "GET" || method == "HEAD";
    try {
      if (endpoint == "summary" && parts.size() == 3) {
        r = is_get ? summary() : error_response(405, "method not allowed");
      } else if (endpoint == "tracks" && parts.size() == 3) {
        r = is_get ? tracks(query) : error_response(405, "method not allowed");
      } else if (endpoint == "csp" && parts.size() == 6) {
        r = is_get ? csp(percent_decode(parts[3]), percent_decode(parts[4]), parts[5])
                   : error_response(405, "method not allowed");
      } else if (endpoint == "fiber" && parts.size() == 3) {
        r = method == "POST" ? fiber(body) : error_response(405, "method not allowed");
      } else {
        r = error_response(404, "unknown endpoint");
      }
    } catch (const ValidationError& e) {
      r = error_response(400, e.what());
    } catch (const NotFoundError& e) {
      r = error_response(404, e.what());
    } catch (const std::exception& e) {
      r = error_response(500, e.what());
    }
    if (is_get && r.status == 200) {
      // GET bodies are pure functions of the snapshot.
      const std::string etag = fmt::format("\"{}-{}\"", snapshot_->content_hash.substr(0, 32),
                                           sha256_hex(target).substr(0, 16));
      r.headers["ETag"] = etag;
      r.headers["Cache-Control"] = "no-cache";
      if (!if_none_match.empty() && if_none_match == etag) r = {304, "", "application/json", {{"ETag", etag}}};
    }
  }
  r.headers["Access-Control-Allow-Origin"] = options_.cors_origin;
  r.headers["Access-Control-Allow-Methods"] = "GET, POST, OPTIONS";
  r.headers["Access-Control-Allow-Headers"] = "Content-Type, If-None-Match";
  r.headers["Access-Control-Expose-Headers"] = "ETag";
  return r;
}

HttpResponse Service::summary() const {
  const auto& s = *snapshot_;
  std::map<std::string, std::set<int>> segments;
  std::map<std::string, std::set<int>> steps;
  for (const auto& [key, _] : s.field_index) steps[key.first].insert(key.second);
  for (const auto& m : s.moments.raw) segments[m.provenance.state_label].insert(m.provenance.segment_id);

  ojson j;
  j["states"] = ojson::array();
  for (const auto& [state, ts] : steps) {
    ojson st;
    st["state_label"] = state;
    st["segments"] = segments[state];
    st["time_steps"] = ts.size();
    ojson times = ojson::array();
    for (int t : ts) times.push_back(t);
    st["time_indices"] = times;
    j["states"].push_back(st);
  }
  j["window"] = window_json(s.window);
  j["res"] = {s.res.r1, s.res.r2};
  j["moment_rows"] = s.moments.raw.size();
  j["pooling"] = to_string(s.moments.pooling);
  j["moment_weight"] = to_string(s.moments.weight);
  ojson pca;
  pca["eigenvalues"] = s.pca.eigenvalues;
  pca["explained_variance_ratio"] = s.pca.explained_variance_ratio();
  pca["mean"] = s.pca.mean;
  pca["loadings"] = s.pca.components;
  pca["loading_labels"] = {"M00", "M20", "M11", "M02"};
  j["pca"] = pca;
  j["content_hash"] = s.content_hash;
  return json_response(200, j);
}

HttpResponse Service::tracks(const std::map<std::string, std::string>& query) const {
  AxisPair axes{1, 2};
  if (auto it = query.find("axes"); it != query.end()) {
    const auto p = split(it->second, ',');
    if (p.size() != 2) throw ValidationError("axes must be two comma-separated PC indices");
    const auto a = parse_int(p[0]), b = parse_int(p[1]);
    if (!a || !b) throw ValidationError("axes must be integers");
    axes = {*a, *b};
  }
  validate_axes(axes);

  std::map<TrackKey, TrackMetrics> metrics;
  for (const auto& m : track_metrics(snapshot_->tracks, axes)) metrics[m.key] = m;
  ojson j;
  j["axes"] = {axes.first, axes.second};
  j["tracks"] = ojson::array();
  for (const auto& [key, points] : snapshot_->tracks.tracks) {
    ojson t;
    t["state_label"] = key.state_label;
    t["segment_id"] = key.segment_id;
    t["points"] = ojson::array();
    for (const auto& p : points) {
      const auto xy = slice_point(p, axes);
      t["points"].push_back({{"time_index", p.time_index}, {"time_fs", p.time_fs}, {"x", xy[0]}, {"y", xy[1]}});
    }
    const auto& m = metrics.at(key);
    t["metrics"] = {{"arc_length", m.arc_length}, {"bbox_area", m.bbox_area}, {"max_step", m.max_step}};
    j["tracks"].push_back(t);
  }
  return json_response(200, j);
}

HttpResponse Service::csp(const std::string& state, const std::string& segment, const std::string& t) const {
  int segment_id = 0;
  try {
    segment_id = parse_segment_key(segment);
  } catch (const ValidationError&) {
    throw NotFoundError(fmt::format("unknown segment '{}'", segment));
  }
  const auto time = parse_int(t);
  if (!time) throw NotFoundError(fmt::format("unknown time index '{}'", t));
  const auto it = snapshot_->csp_index.find({state, segment_id, *time});
  if (it == snapshot_->csp_index.end())
    throw NotFoundError(fmt::format("no CSP for {}/{}/{}", state, segment, *time));
  const auto [hist, meta] = read_csp(it->second);
  ojson j;
  j["state_label"] = meta.state_label;
  j["segment_id"] = meta.segment_id;
  j["segment_key"] = segment_key(meta.segment_id);
  j["time_index"] = meta.time_index;
  j["window"] = window_json(hist.window);
  j["res"] = {hist.res.r1, hist.res.r2};
  j["total_mass"] = hist.total_mass();
  j["out_of_window"] = hist.out_of_window;
  j["encoding"] = "base64-float64-le";
  j["density"] = base64_encode(
      std::string_view(reinterpret_cast<const char*>(hist.density.data()), hist.density.size() * sizeof(double)));
  return json_response(200, j);
}

std::shared_ptr<const BivariateField> Service::field(const std::string& state, int t) {
  const auto key = std::pair{state, t};
  const auto it = snapshot_->field_index.find(key);
  if (it == snapshot_->field_index.end()) throw NotFoundError(fmt::format("unknown step {}/{}", state, t));
  {
    std::lock_guard lock(cache_mutex_);
    for (auto c = field_cache_.begin(); c != field_cache_.end(); ++c)
      if (c->first == key) {
        field_cache_.splice(field_cache_.begin(), field_cache_, c);
        return c->second;
      }
  }
  // Loaded outside the lock; a concurrent miss on the same key loads twice
  // but both results are identical.
  auto loaded = std::make_shared<const BivariateField>(load_step(it->second, snapshot_->weights).field);
  std::lock_guard lock(cache_mutex_);
  for (const auto& c : field_cache_)
    if (c.first == key) return c.second;
  field_cache_.emplace_front(key, loaded);
  while (field_cache_.size() > std::max<std::size_t>(options_.field_cache_steps, 1)) field_cache_.pop_back();
  return loaded;
}

HttpResponse Service::fiber(const std::string& body) {
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("request body is not JSON: {}", e.what()));
  }
  if (!req.is_object() || !req.contains("state") || !req.contains("t") || !req.contains("polygon"))
    throw ValidationError("request needs state, t and polygon");
  if (!req["state"].is_string() || !req["t"].is_number_integer())
    throw ValidationError("state must be a string and t an integer");
  const auto poly_in = parse_polygon_json(req["polygon"].dump());
  const bool closed = req.value("closed", true);
  const auto& window = snapshot_->window;
  ControlPolygon poly = closed ? poly_in : close_polyline(poly_in.vertices, window);
  poly.validate(window);

  auto f = field(req["state"].get<std::string>(), req["t"].get<int>());
  auto task = std::make_shared<std::packaged_task<TriangleMesh()>>(
      [f, poly] { return extract_fiber_surface(*f, poly); });
  auto result = task->get_future();
  std::thread([task] { (*task)(); }).detach();
  if (result.wait_for(options_.fiber_timeout) != std::future_status::ready)
    return error_response(504, "fiber extraction timed out");
  return {200, mesh_json(result.get()), "application/json", {}};
}

struct HttpServer::Impl {
  Service service;
  httplib::Server server;
  Impl(fs::path dir, ServiceOptions options) : service(std::move(dir), std::move(options)) {}
};

HttpServer::HttpServer(fs::path data_dir, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(data_dir), std::move(options))) {
  auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    std::string target = req.target.empty() ? req.path : req.target;
    const auto r = impl_->service.handle(req.method, target, req.body, req.get_header_value("If-None-Match"));
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    if (req.method != "HEAD") res.set_content(r.body, r.content_type);
  };
  impl_->server.Get(R"(/.*)", dispatch);
  impl_->server.Post(R"(/.*)", dispatch);
  impl_->server.Options(R"(/.*)", dispatch);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw Error(fmt::format("cannot bind {}", host));
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error(fmt::format("cannot bind {}:{}", host, port));
  return port;
}

void HttpServer::run() {
  std::thread loader([this] { impl_->service.load(); });
  impl_->server.listen_after_bind();
  loader.join();
}

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

void serve(const fs::path& data_dir, const std::string& host, int port, ServiceOptions options) {
  HttpServer server(data_dir, std::move(options));
  server.bind(host, port);
  server.run();
}

}  // namespace bimoment
