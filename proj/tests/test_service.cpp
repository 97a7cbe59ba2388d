#include <doctest.h>

#include <cstring>
#include <future>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "bimoment/binary_io.hpp"
#include "bimoment/hash.hpp"
#include "bimoment/pipeline.hpp"
#include "bimoment/service.hpp"
#include "test_util.hpp"

using namespace bimoment;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// One small two-state run shared by every case in this file.
const fs::path& run_dir() {
  static TempDir dir("service");
  static const bool done = [] {
    AnalysisManifest m;
    m.series = {{"fR", {}, SyntheticSpec{SyntheticKind::kRotation, 50, std::nullopt, 0, 16, 3}},
                {"fS", {}, SyntheticSpec{SyntheticKind::kScaling, 50, -0.25, 0, 16, 3}}};
    m.res = {24, 24};
    m.output_dir = dir.path();
    RunOptions o;
    o.strict = true;
    run_pipeline(m, o);
    return true;
  }();
  (void)done;
  return dir.path();
}

Service& ready_service() {
  static Service s(run_dir());
  static std::once_flag once;
  std::call_once(once, [] { s.load(); });
  return s;
}

json body(const HttpResponse& r) { return json::parse(r.body); }

std::vector<double> decode_density(const json& j) {
  const auto bytes = base64_decode(j["density"].get<std::string>());
  std::vector<double> out(bytes.size() / sizeof(double));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

const std::string kSquare = R"({"state": "fR", "t": 0, "polygon": [[0.3, 0.3], [0.6, 0.3], [0.6, 0.6], [0.3, 0.6]]})";

}  // namespace

TEST_CASE("requests before load answer 503") {
  Service s(run_dir());
  CHECK(s.handle("GET", "/api/v1/summary").status == 503);
  CHECK(s.handle("OPTIONS", "/api/v1/summary").status == 204);
  s.load();
  CHECK(s.ready());
  CHECK(s.handle("GET", "/api/v1/summary").status == 200);
}

TEST_CASE("missing or empty data directory answers 404") {
  TempDir empty("service_empty");
  Service s(empty.path());
  s.load();
  CHECK_FALSE(s.ready());
  for (const char* target : {"/api/v1/summary", "/api/v1/tracks", "/api/v1/csp/fR/all/0"})
    CHECK(s.handle("GET", target).status == 404);
  CHECK(s.handle("POST", "/api/v1/fiber", kSquare).status == 404);

  Service gone(empty / "nope");
  gone.load();
  CHECK(gone.handle("GET", "/api/v1/summary").status == 404);
  CHECK_THROWS_AS(DatasetSnapshot::load(empty / "nope"), NotFoundError);
}

TEST_CASE("summary") {
  auto& s = ready_service();
  const auto r = s.handle("GET", "/api/v1/summary");
  REQUIRE(r.status == 200);
  CHECK(r.content_type == "application/json");
  CHECK(r.headers.at("Access-Control-Allow-Origin") == "*");
  const auto j = body(r);
  REQUIRE(j["states"].size() == 2);
  for (const auto& st : j["states"]) {
    CHECK(st["segments"] == json::array({1}));
    CHECK(st["time_steps"] == 50);
  }
  CHECK(j["moment_rows"] == 100);
  CHECK(j["pooling"] == "per-order");
  CHECK(j["moment_weight"] == "range-density");
  CHECK(j["res"] == json::array({24, 24}));
  CHECK(j["pca"]["eigenvalues"].size() == 4);
  double ratio = 0.0;
  for (const auto& v : j["pca"]["explained_variance_ratio"]) ratio += v.get<double>();
  CHECK(ratio == doctest::Approx(1.0));

  // Repeated reads are byte-identical and revalidate with the ETag.
  const auto again = s.handle("GET", "/api/v1/summary");
  CHECK(again.body == r.body);
  const auto etag = r.headers.at("ETag");
  CHECK(again.headers.at("ETag") == etag);
  const auto cached = s.handle("GET", "/api/v1/summary", {}, etag);
  CHECK(cached.status == 304);
  CHECK(cached.body.empty());
  CHECK(s.handle("GET", "/api/v1/summary", {}, "\"other\"").status == 200);
  CHECK(s.handle("POST", "/api/v1/summary").status == 405);
  CHECK(s.handle("GET", "/api/v1/nothing").status == 404);
  CHECK(s.handle("GET", "/elsewhere").status == 404);
}

TEST_CASE("tracks") {
  auto& s = ready_service();
  const auto r = s.handle("GET", "/api/v1/tracks?axes=1,3");
  REQUIRE(r.status == 200);
  const auto j = body(r);
  CHECK(j["axes"] == json::array({1, 3}));
  REQUIRE(j["tracks"].size() == 2);
  const auto& full = s.snapshot().tracks.tracks;
  for (const auto& tr : j["tracks"]) {
    const TrackKey key{tr["state_label"], tr["segment_id"]};
    const auto& points = full.at(key);
    REQUIRE(tr["points"].size() == points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto p = slice_point(points[i], {1, 3});
      CHECK(tr["points"][i]["x"].get<double>() == p[0]);
      CHECK(tr["points"][i]["y"].get<double>() == p[1]);
      CHECK(tr["points"][i]["time_index"] == points[i].time_index);
    }
    CHECK(tr["metrics"]["arc_length"].get<double>() > 0.0);
  }
  CHECK(body(s.handle("GET", "/api/v1/tracks"))["axes"] == json::array({1, 2}));
  CHECK(s.handle("GET", "/api/v1/tracks?axes=1,1").status == 400);
  CHECK(s.handle("GET", "/api/v1/tracks?axes=0,2").status == 400);
  CHECK(s.handle("GET", "/api/v1/tracks?axes=1,5").status == 400);
  CHECK(s.handle("GET", "/api/v1/tracks?axes=x").status == 400);
  // Different query, different ETag.
  CHECK(r.headers.at("ETag") != s.handle("GET", "/api/v1/tracks?axes=1,2").headers.at("ETag"));
}

TEST_CASE("csp densities") {
  auto& s = ready_service();
  const auto all = s.handle("GET", "/api/v1/csp/fS/all/12");
  REQUIRE(all.status == 200);
  const auto ja = body(all);
  CHECK(ja["encoding"] == "base64-float64-le");
  CHECK(ja["segment_id"] == kFullDomain);
  CHECK(ja["time_index"] == 12);
  const auto density = decode_density(ja);
  REQUIRE(density.size() == 24u * 24u);

  const auto [hist, meta] = read_csp(run_layout::csp_stem(run_dir(), "fS", 12, kFullDomain));
  CHECK(density == hist.density);
  CHECK(ja["total_mass"].get<double>() == hist.total_mass());
  const auto sidecar = json::parse(read_text(fs::path(run_layout::csp_stem(run_dir(), "fS", 12, kFullDomain)) += ".json"));
  CHECK(ja["total_mass"].get<double>() == doctest::Approx(sidecar["total_mass"].get<double>()).epsilon(1e-12));

  // Peels of the atom segment and the boundary add up to the full CSP.
  const auto one = decode_density(body(s.handle("GET", "/api/v1/csp/fS/1/12")));
  const auto boundary = decode_density(body(s.handle("GET", "/api/v1/csp/fS/boundary/12")));
  double worst = 0.0;
  for (std::size_t i = 0; i < density.size(); ++i) worst = std::max(worst, std::abs(one[i] + boundary[i] - density[i]));
  CHECK(worst <= 1e-9 * hist.total_mass());

  CHECK(s.handle("GET", "/api/v1/csp/fS/7/12").status == 404);
  CHECK(s.handle("GET", "/api/v1/csp/fS/all/50").status == 404);
  CHECK(s.handle("GET", "/api/v1/csp/fS/all/-1").status == 404);
  CHECK(s.handle("GET", "/api/v1/csp/fS/all/x").status == 404);
  CHECK(s.handle("GET", "/api/v1/csp/nobody/all/0").status == 404);
  CHECK(s.handle("GET", "/api/v1/csp/fS/what/0").status == 404);
}

TEST_CASE("fiber extraction") {
  auto& s = ready_service();
  const auto r = s.handle("POST", "/api/v1/fiber", kSquare);
  REQUIRE(r.status == 200);
  const auto mesh = parse_mesh_json(r.body);
  CHECK_FALSE(mesh.empty());
  for (const auto& v : mesh.values) {
    CHECK(v[0] > 0.29);
    CHECK(v[0] < 0.61);
  }

  const auto outside = s.handle(
      "POST", "/api/v1/fiber", R"({"state": "fR", "t": 3, "polygon": [[5, 5], [6, 5], [6, 6], [5, 6]]})");
  REQUIRE(outside.status == 200);
  CHECK(parse_mesh_json(outside.body).empty());

  CHECK(s.handle("POST", "/api/v1/fiber",
                 R"({"state": "fR", "t": 0, "polygon": [[0.3, 0.3], [0.6, 0.6], [0.6, 0.3], [0.3, 0.6]]})")
            .status == 400);
  CHECK(s.handle("POST", "/api/v1/fiber", R"({"state": "fR", "t": 0, "polygon": [[0.3, 0.3], [0.6, 0.6]]})").status ==
        400);
  CHECK(s.handle("POST", "/api/v1/fiber", R"({"state": "fR", "t": 99, "polygon": [[0.3, 0.3], [0.6, 0.3], [0.6, 0.6]]})")
            .status == 404);
  CHECK(s.handle("POST", "/api/v1/fiber", R"({"state": "zz", "t": 0, "polygon": [[0.3, 0.3], [0.6, 0.3], [0.6, 0.6]]})")
            .status == 404);
  CHECK(s.handle("POST", "/api/v1/fiber", "{oops").status == 400);
  CHECK(s.handle("POST", "/api/v1/fiber", R"({"state": "fR"})").status == 400);
  CHECK(s.handle("GET", "/api/v1/fiber").status == 405);

  // An open polyline is closed outside the data range.
  const auto open = s.handle(
      "POST", "/api/v1/fiber", R"({"state": "fR", "t": 0, "closed": false, "polygon": [[0.4, -5], [0.4, 5]]})");
  REQUIRE(open.status == 200);
  CHECK_FALSE(parse_mesh_json(open.body).empty());
}

TEST_CASE("concurrent fiber requests agree") {
  auto& s = ready_service();
  std::vector<std::future<HttpResponse>> futures;
  for (int i = 0; i < 6; ++i)
    futures.push_back(std::async(std::launch::async, [&s, i] {
      const int t = i % 3;
      return s.handle("POST", "/api/v1/fiber",
                      R"({"state": "fS", "t": )" + std::to_string(t) +
                          R"(, "polygon": [[0.2, 0.2], [0.7, 0.2], [0.7, 0.7], [0.2, 0.7]]})");
    }));
  std::vector<std::string> bodies;
  for (auto& f : futures) {
    const auto r = f.get();
    CHECK(r.status == 200);
    bodies.push_back(r.body);
  }
  CHECK(bodies[0] == bodies[3]);
  CHECK(bodies[1] == bodies[4]);
  CHECK(bodies[2] == bodies[5]);
}

TEST_CASE("fiber timeout answers 504") {
  ServiceOptions o;
  o.fiber_timeout = std::chrono::milliseconds(0);
  Service s(run_dir(), o);
  s.load();
  CHECK(s.handle("POST", "/api/v1/fiber", kSquare).status == 504);
  std::this_thread::sleep_for(std::chrono::milliseconds(200));  // let the worker finish
}

TEST_CASE("http round trip") {
  ServiceOptions o;
  o.cors_origin = "http://localhost:5173";
  HttpServer server(run_dir(), o);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread t([&] { server.run(); });

  httplib::Client client("127.0.0.1", port);
  httplib::Result res;
  for (int i = 0; i < 200; ++i) {
    res = client.Get("/api/v1/summary");
    if (res && res->status == 200) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
  CHECK(json::parse(res->body)["moment_rows"] == 100);
  const auto etag = res->get_header_value("ETag");
  const auto cached = client.Get("/api/v1/summary", {{"If-None-Match", etag}});
  REQUIRE(cached);
  CHECK(cached->status == 304);

  const auto fib = client.Post("/api/v1/fiber", kSquare, "application/json");
  REQUIRE(fib);
  CHECK(fib->status == 200);
  CHECK_FALSE(parse_mesh_json(fib->body).empty());
  const auto tr = client.Get("/api/v1/tracks?axes=2%2C3");
  REQUIRE(tr);
  CHECK(json::parse(tr->body)["axes"] == json::array({2, 3}));

  server.stop();
  t.join();
}
