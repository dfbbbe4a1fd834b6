// Command-line front end: one subcommand per experiment.
//
//   qgloc <subcommand> --config PATH [--seed U64] [--workers N] [--out DIR] [--override-suitable]
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "qgloc/config.hpp"
#include "qgloc/errors.hpp"
#include "qgloc/report.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::string out;
  bool override_suitable = false;
};

int emit_error(const std::string& kind, const std::string& message, int code, const std::string& out_dir) {
  const nlohmann::json rec{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
  std::cerr << rec.dump() << "\n";
  if (!out_dir.empty()) {
    std::error_code ec;
    if (fs::is_directory(out_dir, ec)) {
      std::ofstream f(fs::path(out_dir) / "error.json");
      f << rec.dump(2) << "\n";
    }
  }
  return code;
}

int run(const std::string& sub, const Options& opt) {
  using namespace qgloc;
  qgloc::ExperimentConfig cfg;
  if (sub != "selftest") {
    if (opt.config.empty()) throw ConfigError(sub + ": --config is required");
    cfg = load_config(opt.config);
  } else if (!opt.config.empty()) {
    cfg = load_config(opt.config);
  }
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.workers) cfg.workers = *opt.workers;
  if (opt.override_suitable) cfg.override_suitable = true;
  if (cfg.workers == 0) cfg.workers = resolve_workers(0);

  const fs::path dir = opt.out.empty() ? fs::path("out") / sub : fs::path(opt.out);
  fs::create_directories(dir);
  RunManifest man;
  man.subcommand = sub;
  man.config_path = opt.config;
  man.seed = cfg.seed;
  man.workers = cfg.workers;
  man.out_dir = dir.string();
  man.digest = config_digest(sub, cfg);
  man.started = utc_timestamp();
  write_file(dir / "manifest.txt", man.text());

  const auto t0 = std::chrono::steady_clock::now();
  int code = 0;
  try {
    const Report rep = run_experiment(sub, cfg);
    write_report(dir, rep, cfg);
    man.status = "ok";
    if (sub == "selftest" && !rep.results["all_passed"].get<bool>()) {
      man.status = "selftest failed";
      code = 3;
    }
    std::cout << rep.results.dump(2) << "\n";
  } catch (...) {
    man.status = "failed";
    man.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_file(dir / "manifest.txt", man.text());
    throw;
  }
  man.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file(dir / "manifest.txt", man.text());
  std::cerr << "wrote " << dir.string() << " (digest " << man.digest << ")\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anderson localization experiments on random quantum graphs"};
  app.require_subcommand(1);
  Options opt;
  for (const auto& name : qgloc::subcommands()) {
    auto* sc = app.add_subcommand(name, "run the " + name + " experiment");
    sc->add_option("--config", opt.config, "experiment config (YAML or JSON)");
    sc->add_option("--seed", opt.seed, "master seed (overrides the config)");
    sc->add_option("--workers", opt.workers, "worker threads, 0 = all cores (results do not depend on it)");
    sc->add_option("--out", opt.out, "output directory (default out/<subcommand>)");
    sc->add_flag("--override-suitable", opt.override_suitable, "accept override-suitable box sizes");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error("UsageError", e.what(), 2, "");
  }
  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    return run(sub, opt);
  } catch (const qgloc::NumericalError& e) {
    return emit_error("NumericalError", e.what(), 3, opt.out);
  } catch (const qgloc::ConfigError& e) {
    return emit_error("ConfigError", e.what(), 2, opt.out);
  } catch (const qgloc::ParameterError& e) {
    return emit_error("ParameterError", e.what(), 2, opt.out);
  } catch (const qgloc::PreconditionError& e) {
    return emit_error("PreconditionError", e.what(), 2, opt.out);
  } catch (const qgloc::GraphError& e) {
    return emit_error("GraphError", e.what(), 2, opt.out);
  } catch (const std::exception& e) {
    return emit_error("RuntimeError", e.what(), 3, opt.out);
  }
}
