// Batch front end: every subcommand reads a flat key=value config and writes
// its artifacts into the configured output directory.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "expomap/config.hpp"
#include "expomap/error.hpp"
#include "expomap/pipeline.hpp"
#include "expomap/render.hpp"

namespace {

using namespace expomap;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

RunConfig load(const Overrides& o) {
  KeyValues kv = read_key_values_file(o.config);
  if (o.seed) kv["seed"] = std::to_string(*o.seed);
  if (o.out) kv["output.dir"] = *o.out;
  return RunConfig::from_key_values(kv);
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "key=value config file")->required();
  cmd->add_option("--seed", o.seed, "override the config seed");
  cmd->add_option("--out", o.out, "override the output directory");
}

int render(const std::string& map_path, const std::string& format, const std::string& out) {
  std::ifstream f(map_path);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + map_path);
  auto values = read_map_csv(f);
  std::ostringstream os;
  if (format == "csv") {
    write_map_csv(os, values);
  } else {
    write_map_pgm(os, ExposureMap::from_values(std::move(values), Units::VoltsPerMeter));
  }
  write_file_atomic(out, os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense RF-EMF exposure maps from sparse sensors"};
  app.require_subcommand(1);

  Overrides o;
  auto* ingest = app.add_subcommand("ingest", "clean and bin sensor data");
  add_common(ingest, o);
  auto* synth = app.add_subcommand("synth", "write a synthetic sensor CSV and truth maps");
  add_common(synth, o);
  auto* recon = app.add_subcommand("reconstruct", "reconstruct one snapshot");
  add_common(recon, o);
  auto* evaluate = app.add_subcommand("evaluate", "holdout RMSE over a snapshot series");
  add_common(evaluate, o);
  std::size_t images = 10;
  auto* bench = app.add_subcommand("bench", "train/inference timing for every method");
  add_common(bench, o);
  bench->add_option("--images", images, "inference repetitions")->check(CLI::PositiveNumber);

  std::string map_path, format = "pgm", render_out;
  auto* rend = app.add_subcommand("render", "convert a map CSV");
  rend->add_option("--map", map_path, "map CSV")->required();
  rend->add_option("--format", format, "csv or pgm")->check(CLI::IsMember({"csv", "pgm"}));
  rend->add_option("--out", render_out, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*rend) return render(map_path, format, render_out);
    const RunConfig cfg = load(o);
    nlohmann::json report;
    if (*ingest) {
      report = run_ingest(cfg);
    } else if (*synth) {
      report = run_synth(cfg);
    } else if (*recon) {
      report = run_reconstruct(cfg);
    } else if (*evaluate) {
      report = run_evaluate(cfg);
    } else {
      report = run_bench(cfg, images);
    }
    std::cout << "wrote " << cfg.output_dir << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << to_string(e.code()) << ": " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "InternalError: " << e.what() << "\n";
  }
  return 1;
}
