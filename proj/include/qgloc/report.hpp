#pragma once

// Experiment artifacts: JSON report, per-sample CSV tables, two-column plot
// files and the run manifest. Everything scientific is a pure function of
// the configuration; run metadata (workers, timing) lives in the manifest.

#include <openssl/evp.h>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qgloc/config.hpp"
#include "qgloc/errors.hpp"
#include "qgloc/experiments.hpp"
#include "qgloc/format.hpp"

namespace qgloc {

inline constexpr const char* kVersion = "1.0.0";

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s{"spectrum", "secular", "wegner", "ils",   "combes-thomas", "gri",
                                          "decay",    "dynloc",  "msa",    "ultra", "selftest"};
  return s;
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw NumericalError("sha256: OpenSSL digest failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

/// Digest of (subcommand, canonical config). The worker count is not part of it.
inline std::string config_digest(const std::string& subcommand, const ExperimentConfig& cfg) {
  const nlohmann::json j{{"subcommand", subcommand}, {"config", config_to_json(cfg)}};
  return sha256_hex(j.dump());
}

struct Table {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  template <class... T>
  void add(const T&... v) {
    rows.push_back({cell(v)...});
  }

 private:
  static std::string cell(double v) { return round_trip(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }
  static std::string cell(bool v) { return v ? "1" : "0"; }
  template <class I, std::enable_if_t<std::is_integral_v<I> && !std::is_same_v<I, bool>, int> = 0>
  static std::string cell(I v) {
    return std::to_string(v);
  }
};

struct PlotSeries {
  std::string name;
  std::string x_label;
  std::string y_label;
  std::vector<std::pair<double, double>> points;
};

struct Report {
  std::string subcommand;
  nlohmann::json results;
  std::vector<Table> tables;
  std::vector<PlotSeries> plots;
};

namespace detail {

using nlohmann::json;

inline json to_json(const Interval& i) { return json{i.lo, i.hi}; }

inline json to_json(const Proportion& p) {
  return {{"successes", p.successes}, {"trials", p.trials}, {"estimate", p.estimate}, {"ci95", {p.lo, p.hi}}};
}

inline json to_json(const LineFit& f) {
  return {{"slope", f.slope},
          {"intercept", f.intercept},
          {"r2", f.r2},
          {"slope_stderr", f.slope_stderr},
          {"slope_ci95", {f.slope_lo, f.slope_hi}},
          {"points", f.n}};
}

inline json to_json(const DecayFit& f) {
  return {{"gamma_fit", f.gamma_fit}, {"prefactor", f.prefactor}, {"r2", f.r2},
          {"points_used", f.points_used}, {"floor", f.floor}};
}

inline Report spectrum_report(const ExperimentConfig& cfg) {
  Report r;
  PotentialConfig omega;
  const auto sp = spectrum_run(cfg, &omega);
  r.results = {{"side", cfg.sizes.front()},      {"count", sp.size()},   {"method", sp.method},
               {"tol", sp.tol},                  {"iterations", sp.iterations},
               {"eigenvalues", std::vector<double>(sp.eigenvalues.data(), sp.eigenvalues.data() + sp.size())}};
  Table t{"spectrum", {"index", "eigenvalue", "residual"}, {}};
  PlotSeries p{"spectrum", "index", "eigenvalue", {}};
  for (std::size_t i = 0; i < sp.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    t.add(i, sp.eigenvalues[k], sp.residuals[k]);
    p.points.emplace_back(static_cast<double>(i), sp.eigenvalues[k]);
  }
  Table pot{"potential", {"edge", "value"}, {}};
  for (std::size_t e = 0; e < omega.values.size(); ++e) pot.add(e, omega.values[e]);
  r.tables = {t, pot};
  r.plots = {p};
  return r;
}

inline Report secular_report(const ExperimentConfig& cfg) {
  Report r;
  const auto roots = secular_run(cfg);
  Table t{"secular", {"index", "eigenvalue", "multiplicity", "pole_flag"}, {}};
  json arr = json::array();
  for (std::size_t i = 0; i < roots.size(); ++i) {
    t.add(i, roots[i].value, roots[i].multiplicity, roots[i].pole_flag);
    arr.push_back({{"value", roots[i].value}, {"multiplicity", roots[i].multiplicity}, {"pole_flag", roots[i].pole_flag}});
  }
  r.results = {{"side", cfg.sizes.front()}, {"eigenvalues", arr}};
  r.tables = {t};
  return r;
}

inline Report wegner_report(const ExperimentConfig& cfg) {
  Report r;
  const auto w = wegner_experiment(cfg);
  json cells = json::array();
  for (const auto& c : w.cells) {
    cells.push_back({{"side", c.side}, {"interval", to_json(c.interval)}, {"p", to_json(c.p)}});
  }
  json ifits = json::array(), vfits = json::array();
  for (const auto& [L, f] : w.interval_fits) ifits.push_back({{"side", L}, {"fit", to_json(f)}});
  for (const auto& [width, f] : w.volume_fits) vfits.push_back({{"width", width}, {"fit", to_json(f)}});
  const auto& mu = cfg.measure;
  r.results = {{"measure", {{"holder_alpha", mu.holder_alpha()}, {"holder_constant", mu.holder_constant()},
                            {"tail_exponent", mu.tail_exponent()}, {"tail_h0", mu.tail_h0()}}},
               {"cells", cells},
               {"interval_fits", ifits},
               {"volume_fits", vfits},
               {"c_fit", w.c_fit},
               {"bound_holds", w.bound_holds},
               {"paired_monotone", w.paired_monotone},
               {"undersampled_cells", w.undersampled_cells}};
  Table t{"samples", {"seed", "side", "sample", "interval", "lo", "hi", "hit"}, {}};
  const std::size_t ni = w.intervals.size();
  for (std::size_t li = 0; li < cfg.sizes.size(); ++li) {
    for (std::size_t s = 0; s < cfg.samples; ++s) {
      for (std::size_t k = 0; k < ni; ++k) {
        t.add(cfg.seed, cfg.sizes[li], s, k, w.intervals[k].lo, w.intervals[k].hi,
              static_cast<int>(w.hits[(li * cfg.samples + s) * ni + k]));
      }
    }
  }
  r.tables = {t};
  for (int L : cfg.sizes) {
    PlotSeries p{"probability_L" + std::to_string(L), "log_width", "log_p", {}};
    for (const auto& c : w.cells) {
      if (c.side == L && c.p.estimate > 0) p.points.emplace_back(std::log(c.interval.width()), std::log(c.p.estimate));
    }
    r.plots.push_back(p);
  }
  return r;
}

inline Report ils_report(const ExperimentConfig& cfg) {
  Report r;
  const auto res = ils_experiment(cfg);
  json scales = json::array();
  PlotSeries p{"probability", "side", "p", {}};
  for (const auto& s : res.scales) {
    scales.push_back({{"side", s.side}, {"threshold", s.threshold}, {"p", to_json(s.p)}, {"bound_xi", s.bound_xi},
                      {"bound_proof", s.bound_proof}, {"within_proof_bound", s.within_proof_bound}});
    p.points.emplace_back(s.side, s.p.estimate);
  }
  r.results = {{"scales", scales},
               {"strictly_decreasing", res.strictly_decreasing},
               {"all_within_proof_bound", res.all_within_proof_bound},
               {"all_within_xi_bound", res.all_within_xi_bound},
               {"tail_h0", cfg.measure.tail_h0()}};
  if (res.proof_step) {
    const auto& c = *res.proof_step;
    r.results["proof_step"] = {{"side", c.side}, {"h", c.h}, {"samples", c.samples}, {"violations", c.violations},
                               {"min_margin", c.min_margin}, {"event_probability", c.event_probability}};
  }
  Table t{"samples", {"seed", "side", "sample", "threshold", "hit"}, {}};
  for (std::size_t i = 0; i < res.scales.size(); ++i) {
    for (std::size_t s = 0; s < cfg.samples; ++s) {
      t.add(cfg.seed, res.scales[i].side, s, res.scales[i].threshold, static_cast<int>(res.hits[i * cfg.samples + s]));
    }
  }
  r.tables = {t};
  r.plots = {p};
  return r;
}

inline Report combes_thomas_report(const ExperimentConfig& cfg) {
  Report r;
  const auto res = combes_thomas_run(cfg);
  json wins = json::array();
  Table t{"norms", {"seed", "side", "E", "window_r", "window_s", "delta", "norm", "used"}, {}};
  for (std::size_t k = 0; k < res.windows.size(); ++k) {
    const auto& w = res.windows[k];
    wins.push_back({{"window", {w.window.r, w.window.s}}, {"E", w.energy}, {"eta", w.eta}, {"fit", to_json(w.fit)},
                    {"c1", w.c1}, {"sqrt_eta_width", w.sqrt_eta_width}});
    PlotSeries p{"decay_window" + std::to_string(k), "delta", "log_norm", {}};
    for (std::size_t i = 0; i < w.fit.deltas.size(); ++i) {
      t.add(cfg.seed, cfg.sizes.front(), w.energy, w.window.r, w.window.s, w.fit.deltas[i], w.fit.norms[i],
            static_cast<bool>(w.fit.used[i]));
      if (w.fit.norms[i] > 0) p.points.emplace_back(w.fit.deltas[i], std::log(w.fit.norms[i]));
    }
    r.plots.push_back(p);
  }
  json pre = json::array();
  for (const auto& [eta, n, prod] : res.prefactor) pre.push_back({{"eta", eta}, {"norm", n}, {"norm_times_eta", prod}});
  r.results = {{"windows", wins},
               {"rate_monotone", res.rate_monotone},
               {"all_fits_good", res.all_fits_good},
               {"prefactor_delta", res.prefactor_delta},
               {"prefactor", pre},
               {"prefactor_variation", res.prefactor_variation}};
  r.tables = {t};
  return r;
}

inline Report gri_report(const ExperimentConfig& cfg) {
  Report r;
  const auto res = gri_experiment(cfg);
  json geos = json::array();
  Table t{"trials", {"seed", "inner", "outer", "E", "sample", "lhs", "rhs_outer", "rhs_inner", "ratio"}, {}};
  for (const auto& g : res.geometries) {
    const auto& id = g.identity;
    geos.push_back({{"inner", g.inner},
                    {"outer", g.outer},
                    {"max_ratio", g.max_ratio},
                    {"median_ratio", g.median_ratio},
                    {"max_over_median", g.max_over_median},
                    {"identity",
                     {{"trials", id.trials}, {"max_residual", id.max_residual}, {"max_mass_term", id.max_mass_term},
                      {"derivative_form_error", id.derivative_form_error},
                      {"cutoff_derivative_sup", id.cutoff_derivative_sup}}},
                    {"caccioppoli_constant", g.caccioppoli_max}});
    PlotSeries p{"ratios_" + std::to_string(g.inner) + "_" + std::to_string(g.outer), "sample", "ratio", {}};
    for (std::size_t s = 0; s < g.trials.size(); ++s) {
      const auto& tr = g.trials[s];
      t.add(cfg.seed, g.inner, g.outer, res.energy, s, tr.lhs, tr.rhs_outer, tr.rhs_inner, tr.ratio);
      p.points.emplace_back(static_cast<double>(s), tr.ratio);
    }
    r.plots.push_back(p);
  }
  r.results = {{"energy", res.energy}, {"geometries", geos}, {"stability", res.stability}};
  r.tables = {t};
  return r;
}

inline Report decay_report(const ExperimentConfig& cfg) {
  Report r;
  const auto res = eigenfunction_decay_experiment(cfg);
  json sizes = json::array();
  PlotSeries p{"median_gamma", "side", "gamma", {}};
  for (const auto& s : res.sizes) {
    sizes.push_back({{"side", s.side}, {"fits", s.fits}, {"localized", s.localized},
                     {"skipped_samples", s.skipped_samples}, {"median_gamma", s.median_gamma},
                     {"fraction_localized", s.fraction_localized}});
    p.points.emplace_back(s.side, s.median_gamma);
  }
  r.results = {{"window", to_json(res.window)},
               {"boundary_margin", cfg.decay.boundary_margin},
               {"sizes", sizes},
               {"median_ratio", res.median_ratio}};
  Table t{"fits", {"seed", "side", "sample", "energy", "center", "gamma", "r2", "points", "localized"}, {}};
  for (const auto& f : res.fits) t.add(cfg.seed, f.side, f.sample, f.energy, f.center, f.gamma, f.r2, f.points, f.localized);
  r.tables = {t};
  r.plots = {p};
  return r;
}

inline Report dynloc_report(const ExperimentConfig& cfg) {
  Report r;
  const auto res = dynamical_moment_experiment(cfg);
  json sizes = json::array();
  PlotSeries p{"mean_moment", "side", "moment", {}};
  for (const auto& s : res.sizes) {
    sizes.push_back({{"side", s.side}, {"used", s.used}, {"skipped", s.skipped}, {"mean_moment", s.mean_moment},
                     {"mean_sup_t", s.mean_sup_t}});
    if (s.used) p.points.emplace_back(s.side, s.mean_moment);
  }
  r.results = {{"window", to_json(res.window)},
               {"p", res.p},
               {"sizes", sizes},
               {"L_trend", to_json(res.trend)},
               {"trend_non_increasing", res.trend_non_increasing},
               {"sup_within_majorant", res.sup_within_majorant}};
  Table t{"samples", {"seed", "side", "sample", "states", "moment", "sup_t", "majorant"}, {}};
  std::size_t s = 0;
  int prev = -1;
  for (const auto& [L, v] : res.records) {
    s = L == prev ? s + 1 : 0;
    prev = L;
    t.add(cfg.seed, L, s, v.states, v.moment, v.sup_t, v.majorant);
  }
  r.tables = {t};
  r.plots = {p};
  return r;
}

inline Report msa_report(const ExperimentConfig& cfg) {
  Report r;
  const auto res = msa_flow_experiment(cfg);
  json cells = json::array(), dec = json::array();
  for (const auto& c : res.cells) {
    cells.push_back({{"side", c.side}, {"E", c.energy}, {"resonant", c.resonant}, {"bad", to_json(c.bad)}});
  }
  for (const auto& [E, ok] : res.decreasing) dec.push_back({{"E", E}, {"decreasing", ok}});
  r.results = {{"scales", res.scales}, {"energies", res.energies}, {"gamma", res.gamma}, {"cells", cells},
               {"decreasing", dec}};
  Table t{"samples", {"seed", "side", "E", "sample", "flag"}, {}};
  const std::size_t ne = res.energies.size();
  for (std::size_t i = 0; i < res.scales.size(); ++i) {
    for (std::size_t k = 0; k < ne; ++k) {
      for (std::size_t s = 0; s < cfg.samples; ++s) {
        const auto f = res.bad_flags[(i * ne + k) * cfg.samples + s];
        t.add(cfg.seed, res.scales[i], res.energies[k], s, f == 0 ? "good" : f == 1 ? "bad" : "resonant");
      }
    }
  }
  r.tables = {t};
  for (std::size_t k = 0; k < ne; ++k) {
    PlotSeries p{"bad_E" + std::to_string(k), "side", "p_bad", {}};
    for (std::size_t i = 0; i < res.scales.size(); ++i) {
      p.points.emplace_back(res.scales[i], res.cells[i * ne + k].bad.estimate);
    }
    r.plots.push_back(p);
  }
  return r;
}

inline Report ultra_report(const ExperimentConfig& cfg) {
  Report r;
  const auto res = ultracontractivity_experiment(cfg);
  json rows = json::array();
  Table t{"norms", {"t", "norm", "norm_times_t_quarter", "certified", "shift_error"}, {}};
  PlotSeries p{"product", "t", "norm_times_t_quarter", {}};
  for (const auto& row : res.rows) {
    rows.push_back({{"t", row.t}, {"norm", row.norm}, {"product", row.product}, {"certified", row.certified},
                    {"shift_error", row.shift_error}});
    t.add(row.t, row.norm, row.product, row.certified, row.shift_error);
    p.points.emplace_back(row.t, row.product);
  }
  r.results = {{"side", res.side}, {"rows", rows}, {"variation", res.variation}, {"bounded", res.bounded},
               {"all_certified", res.all_certified}};
  r.tables = {t};
  r.plots = {p};
  return r;
}

inline Report selftest_report() {
  Report r;
  const auto cases = selftest();
  json arr = json::array();
  Table t{"selftest", {"name", "passed", "detail"}, {}};
  bool all = true;
  for (const auto& c : cases) {
    arr.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    t.add(c.name, c.passed, c.detail);
    all = all && c.passed;
  }
  r.results = {{"cases", arr}, {"all_passed", all}};
  r.tables = {t};
  return r;
}

}  // namespace detail

inline Report run_experiment(const std::string& subcommand, const ExperimentConfig& cfg) {
  Report r;
  if (subcommand == "spectrum") r = detail::spectrum_report(cfg);
  else if (subcommand == "secular") r = detail::secular_report(cfg);
  else if (subcommand == "wegner") r = detail::wegner_report(cfg);
  else if (subcommand == "ils") r = detail::ils_report(cfg);
  else if (subcommand == "combes-thomas") r = detail::combes_thomas_report(cfg);
  else if (subcommand == "gri") r = detail::gri_report(cfg);
  else if (subcommand == "decay") r = detail::decay_report(cfg);
  else if (subcommand == "dynloc") r = detail::dynloc_report(cfg);
  else if (subcommand == "msa") r = detail::msa_report(cfg);
  else if (subcommand == "ultra") r = detail::ultra_report(cfg);
  else if (subcommand == "selftest") r = detail::selftest_report();
  else throw ConfigError("unknown subcommand '" + subcommand + "'");
  r.subcommand = subcommand;
  return r;
}

/// The JSON report document; byte-identical for identical (subcommand, config).
inline std::string report_json(const Report& r, const ExperimentConfig& cfg) {
  const nlohmann::json j{{"subcommand", r.subcommand},
                         {"version", kVersion},
                         {"config_digest", config_digest(r.subcommand, cfg)},
                         {"config", config_to_json(cfg)},
                         {"results", r.results}};
  return j.dump(2) + "\n";
}

inline std::string table_csv(const Table& t, const std::string& digest) {
  std::ostringstream os;
  os << "# config_digest=" << digest << "\n";
  for (std::size_t i = 0; i < t.header.size(); ++i) os << (i ? "," : "") << t.header[i];
  os << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const bool quote = row[i].find_first_of(",\"\n") != std::string::npos;
      std::string v = row[i];
      if (quote) {
        std::string q = "\"";
        for (char ch : v) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
        v = q + "\"";
      }
      os << (i ? "," : "") << v;
    }
    os << "\n";
  }
  return os.str();
}

inline std::string plot_text(const PlotSeries& p, const std::string& digest) {
  std::ostringstream os;
  os << "# config_digest=" << digest << "\n# " << p.x_label << " " << p.y_label << "\n";
  for (const auto& [x, y] : p.points) os << round_trip(x) << " " << round_trip(y) << "\n";
  return os.str();
}

struct RunManifest {
  std::string subcommand;
  std::string config_path;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::string out_dir;
  std::string digest;
  std::string started;
  std::string status = "running";
  double runtime_seconds = -1.0;

  std::string text() const {
    std::ostringstream os;
    os << "subcommand: " << subcommand << "\n"
       << "config: " << config_path << "\n"
       << "seed: " << seed << "\n"
       << "workers: " << workers << "\n"
       << "out: " << out_dir << "\n"
       << "version: " << kVersion << "\n"
       << "config_digest: " << digest << "\n"
       << "started: " << started << "\n"
       << "status: " << status << "\n";
    if (runtime_seconds >= 0) os << "runtime_seconds: " << round_trip(runtime_seconds) << "\n";
    return os.str();
  }
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  out << content;
  if (!out) throw ConfigError("write failed for '" + p.string() + "'");
}

inline void write_report(const std::filesystem::path& dir, const Report& r, const ExperimentConfig& cfg) {
  const std::string digest = config_digest(r.subcommand, cfg);
  write_file(dir / "report.json", report_json(r, cfg));
  for (const auto& t : r.tables) write_file(dir / (t.name + ".csv"), table_csv(t, digest));
  for (const auto& p : r.plots) write_file(dir / (p.name + ".dat"), plot_text(p, digest));
}

}  // namespace qgloc
