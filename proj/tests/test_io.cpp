#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "expomap/binary_io.hpp"
#include "expomap/config.hpp"
#include "expomap/render.hpp"
#include "test_util.hpp"

using namespace expomap;

namespace {

KeyValues synth_kv() {
  std::istringstream in(
      "# small synthetic run\n"
      "grid.rows = 16\n"
      "grid.cols = 16\n"
      "grid.extent_m = 160\n"
      "synth.sensors = 20   \n"
      "\n"
      "method = cntk_exact\n"
      "cntk.layers = 2\n");
  return parse_key_values(in);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("config: parse, defaults, resolved round trip") {
  const auto kv = synth_kv();
  CHECK(kv.at("grid.rows") == "16");
  CHECK(kv.at("synth.sensors") == "20");
  CHECK(kv.size() == 6);

  const auto cfg = RunConfig::from_key_values(kv);
  CHECK(cfg.grid.rows == 16);
  REQUIRE(cfg.synth);
  CHECK(cfg.synth->sensors == 20);
  CHECK(cfg.method == eval::Method::CntkExact);
  CHECK(cfg.method_cfg.cntk.layers == 2);
  CHECK(cfg.prior == PriorKind::LIP);
  // Synthetic runs hold out the last four sensors unless told otherwise.
  CHECK(cfg.holdout == std::vector<std::string>{"S017", "S018", "S019", "S020"});

  const auto again = RunConfig::from_key_values(cfg.to_key_values());
  CHECK(again.to_key_values() == cfg.to_key_values());
  std::istringstream resolved(cfg.resolved_text());
  CHECK(parse_key_values(resolved) == cfg.to_key_values());
}

TEST_CASE("config: rejects bad input with ConfigError") {
  auto kv = synth_kv();
  kv["grid.colour"] = "blue";
  CHECK(code_of([&] { RunConfig::from_key_values(kv); }) == ErrorCode::ConfigError);

  kv = synth_kv();
  kv["cntk.layers"] = "-3";
  CHECK(code_of([&] { RunConfig::from_key_values(kv); }) == ErrorCode::ConfigError);

  kv = synth_kv();
  kv["cntk.filter"] = "4";
  CHECK(code_of([&] { RunConfig::from_key_values(kv); }) == ErrorCode::ConfigError);

  kv = synth_kv();
  kv["data.sensors_csv"] = "/nonexistent/sensors.csv";
  CHECK(code_of([&] { RunConfig::from_key_values(kv); }) == ErrorCode::ConfigError);

  kv = synth_kv();
  for (auto it = kv.begin(); it != kv.end();) it = it->first.starts_with("synth.") ? kv.erase(it) : ++it;
  kv["data.sensors_csv"] = "/nonexistent/sensors.csv";
  CHECK(code_of([&] { RunConfig::from_key_values(kv); }) == ErrorCode::ConfigError);

  std::istringstream no_eq("grid.rows 16\n");
  CHECK(code_of([&] { parse_key_values(no_eq); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { read_key_values_file("/nonexistent/run.cfg"); }) == ErrorCode::ConfigError);
}

TEST_CASE("render: CSV round trip") {
  Grid<double> g(5, 7);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 12.0);
  for (auto& v : g.flat()) v = u(rng);
  std::stringstream ss;
  write_map_csv(ss, g);
  const auto back = read_map_csv(ss);
  REQUIRE(back.same_shape(g));
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(back[i] - g[i]) <= 1e-9 * std::max(1.0, g[i]));

  std::istringstream ragged("1,2\n3\n");
  CHECK(code_of([&] { read_map_csv(ragged); }) == ErrorCode::FormatError);
  std::istringstream text("1,x\n");
  CHECK(code_of([&] { read_map_csv(text); }) == ErrorCode::FormatError);
}

TEST_CASE("render: PGM scaling") {
  Grid<double> g(2, 2);
  g[0] = 1.0;
  g[1] = 3.0;
  g[2] = 3.0;
  g[3] = 1.0;
  std::ostringstream out;
  write_map_pgm(out, ExposureMap::from_values(g, Units::VoltsPerMeter));
  CHECK(out.str() == "P2\n2 2\n255\n0 255\n255 0\n");

  std::ostringstream flat;
  write_map_pgm(flat, ExposureMap::from_values(Grid<double>(2, 3, 4.2), Units::VoltsPerMeter));
  CHECK(flat.str() == "P2\n3 2\n255\n0 0 0\n0 0 0\n");

  // Excluded pixels render 0 and do not take part in the scaling.
  auto m = ExposureMap::from_values(g, Units::VoltsPerMeter);
  m.values[1] = 100.0;
  m.excluded[1] = 1;
  m.values[3] = 2.0;
  std::ostringstream ex;
  write_map_pgm(ex, m);
  CHECK(ex.str() == "P2\n2 2\n255\n0 0\n255 128\n");
}

TEST_CASE("write_file_atomic replaces the target") {
  const auto dir = std::filesystem::temp_directory_path() / "expomap_atomic_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "a.txt").string();
  write_file_atomic(path, "first");
  write_file_atomic(path, "second");
  std::ifstream f(path);
  std::string s((std::istreambuf_iterator<char>(f)), {});
  CHECK(s == "second");
  std::filesystem::remove_all(dir);
}

TEST_CASE("binary: kernel cache round trip") {
  KernelBlock b;
  b.rows = {0, 5, 9};
  b.cols = {2, 3};
  b.entries.resize(3, 2);
  b.entries << 1.5, -2.0, 0.25, 1e-7, 3.0, 1.0 / 3.0;
  KernelCacheHeader h;
  h.grid_rows = 4;
  h.grid_cols = 4;
  h.layers = 6;
  h.filter = 3;
  h.leaky_slope = 0.1;

  std::stringstream ss;
  write_kernel_cache(ss, b, h);
  KernelCacheHeader h2;
  const auto b2 = read_kernel_cache(ss, &h2);
  CHECK(b2.rows == b.rows);
  CHECK(b2.cols == b.cols);
  CHECK(b2.entries == b.entries);
  CHECK(h2.grid_rows == 4);
  CHECK(h2.layers == 6);
  CHECK(h2.leaky_slope == 0.1);
  CHECK(h2.precision == Precision::F64);

  h.precision = Precision::F32;
  std::stringstream s32;
  write_kernel_cache(s32, b, h);
  const auto b32 = read_kernel_cache(s32);
  CHECK((b32.entries - b.entries).cwiseAbs().maxCoeff() < 1e-6);

  std::stringstream bad("EXPX\1\0\0\0");
  CHECK(code_of([&] { read_kernel_cache(bad); }) == ErrorCode::FormatError);

  std::string full = ss.str();
  std::istringstream truncated(full.substr(0, full.size() - 3));
  CHECK(code_of([&] { read_kernel_cache(truncated); }) == ErrorCode::FormatError);

  // A network file is not a kernel cache.
  std::stringstream net;
  write_net(net, glip::init_net(1, {1, 2, 1}));
  CHECK(code_of([&] { read_kernel_cache(net); }) == ErrorCode::FormatError);
}

TEST_CASE("binary: network round trip is exact") {
  const auto n = glip::init_net(17, {1, 4, 3, 1});
  std::stringstream ss;
  write_net(ss, n);
  const auto m = read_net(ss);
  REQUIRE(m.layers.size() == 3);
  CHECK(m.seed == 17);
  CHECK(m.leaky_slope == n.leaky_slope);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(m.layers[l].in_channels == n.layers[l].in_channels);
    CHECK(m.layers[l].weight == n.layers[l].weight);
    CHECK(m.layers[l].bias == n.layers[l].bias);
  }
  Grid<double> x(6, 6);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(double(i));
  CHECK(glip::forward(m, x) == glip::forward(n, x));
}
