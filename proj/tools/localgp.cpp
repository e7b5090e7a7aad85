// Command-line front end: `design` traces one greedy local design,
// `predict` runs the staged global emulator over a grid, and `bench`
// reproduces the accuracy/timing studies on the built-in problems.
// All file output is CSV with 17-significant-digit floats, so emitted
// numbers round-trip exactly.
//
// Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.

#include <cstdint>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "localgp/localgp.hpp"

namespace {

using localgp::RowMatrix;
using localgp::Vector;

int usage_error(const std::string& msg) {
  std::cerr << "localgp: " << msg << "\nRun with --help for usage.\n";
  return 2;
}

bool parse_double(const std::string& s, double& out) {
  const char* c = s.c_str();
  char* end = nullptr;
  out = std::strtod(c, &end);
  return end != c && *end == '\0';
}

// "auto" keeps theta0 <= 0 so the engine derives it from the distance
// quantile; anything else must be a positive number.
bool parse_theta0(const std::string& s, double& out) {
  if (s == "auto") {
    out = 0.0;
    return true;
  }
  return parse_double(s, out) && out > 0.0;
}

struct Dataset {
  RowMatrix x;
  Vector y;
  std::vector<std::string> names;  // coordinate column names
};

// design.csv: header row, coordinate columns, response as the last column.
Dataset load_design(const std::string& path) {
  const localgp::Table t = localgp::read_csv(path);
  if (t.header.size() < 2) {
    throw localgp::DataError(
        path + ": need coordinate columns plus a trailing response column");
  }
  const int p = static_cast<int>(t.header.size()) - 1;
  const int m = static_cast<int>(t.rows.size());
  Dataset d;
  d.names.assign(t.header.begin(), t.header.end() - 1);
  d.x.resize(m, p);
  d.y.resize(m);
  for (int i = 0; i < m; ++i) {
    for (int c = 0; c < p; ++c) d.x(i, c) = t.rows[i][c];
    d.y(i) = t.rows[i][p];
  }
  return d;
}

struct GridData {
  RowMatrix x;
  std::vector<std::string> names;
};

// grid.csv: header row, coordinate columns only.
GridData load_grid(const std::string& path) {
  const localgp::Table t = localgp::read_csv(path);
  const int p = static_cast<int>(t.header.size());
  const int m = static_cast<int>(t.rows.size());
  GridData g;
  g.names = t.header;
  g.x.resize(m, p);
  for (int i = 0; i < m; ++i) {
    for (int c = 0; c < p; ++c) g.x(i, c) = t.rows[i][c];
  }
  return g;
}

// Flags shared by all three commands.
struct CommonFlags {
  int n0 = 6;
  int n = 50;
  int close = 1000;
  double eta = localgp::kDefaultNugget;
  std::string theta0 = "auto";
  double quantile = 0.1;
  std::uint64_t seed = 42;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, const char* default_out) {
  f.out = default_out;
  cmd->add_option("--start", f.n0, "initial NN seed size n0")
      ->capture_default_str();
  cmd->add_option("--end", f.n, "final local design size n")
      ->capture_default_str();
  cmd->add_option("--close", f.close,
                  "candidate pool size N' (clamped to the design size)")
      ->capture_default_str();
  cmd->add_option("--nugget", f.eta, "correlation nugget eta")
      ->capture_default_str();
  cmd->add_option("--theta0", f.theta0,
                  "lengthscale: 'auto' (distance quantile) or a number > 0")
      ->capture_default_str();
  cmd->add_option("--quantile", f.quantile,
                  "squared-distance quantile behind theta0=auto")
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "RNG seed (theta0 subsample, benchmarks)")
      ->capture_default_str();
  cmd->add_option("--out", f.out, "output CSV path")->capture_default_str();
}

// Flag-only validation; data-dependent checks live in the library.
int check_common(const CommonFlags& f, double& theta0) {
  if (f.n0 < 1 || f.n < f.n0) {
    return usage_error("--start/--end must satisfy 1 <= start <= end");
  }
  if (f.close < f.n) return usage_error("--close must be >= --end");
  if (!(f.eta >= 0.0)) return usage_error("--nugget must be >= 0");
  if (!(f.quantile > 0.0 && f.quantile <= 1.0)) {
    return usage_error("--quantile must be in (0, 1]");
  }
  if (!parse_theta0(f.theta0, theta0)) {
    return usage_error("--theta0 must be 'auto' or a positive number");
  }
  return 0;
}

// ---------------------------------------------------------------- design

struct DesignFlags {
  CommonFlags c;
  std::string method = "alc";
  std::string x_text;
  std::string file;
};

int cmd_design(const DesignFlags& f) {
  double theta0 = 0.0;
  if (const int rc = check_common(f.c, theta0)) return rc;

  const std::vector<std::string> cells =
      localgp::detail::split_csv_line(f.x_text);
  Vector x(static_cast<int>(cells.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    double v = 0.0;
    if (!parse_double(localgp::detail::trim_ws(cells[i]), v)) {
      return usage_error("--x must be a comma-separated numeric vector");
    }
    x(static_cast<int>(i)) = v;
  }

  Dataset data = load_design(f.file);
  if (x.size() != data.x.cols()) {
    throw localgp::DimensionError(
        "--x has " + std::to_string(x.size()) + " coordinates; " + f.file +
        " has " + std::to_string(data.x.cols()));
  }
  const localgp::DesignSet D(std::move(data.x), std::move(data.y));

  localgp::StageConfig cfg;
  cfg.method = localgp::method_from_name(f.method);
  cfg.n0 = f.c.n0;
  cfg.n = f.c.n;
  cfg.close = f.c.close;
  cfg.eta = f.c.eta;
  cfg.stages = 1;
  cfg.estimate_theta = false;

  const double theta =
      theta0 > 0.0 ? theta0 : localgp::theta0_auto(D, f.c.quantile, f.c.seed);
  const localgp::LocalDesignResult res =
      localgp::local_design_partial(x, D, cfg, localgp::Hyper{theta, f.c.eta});

  std::vector<std::string> header = {"step", "row_id"};
  header.insert(header.end(), data.names.begin(), data.names.end());
  header.emplace_back("criterion_value");
  header.emplace_back("vx_after");
  std::vector<std::vector<std::string>> rows;
  rows.reserve(res.trace.size());
  for (const localgp::TraceRow& tr : res.trace) {
    std::vector<std::string> row = {std::to_string(tr.step),
                                    std::to_string(tr.row_id)};
    for (int c = 0; c < D.dim(); ++c) {
      row.push_back(localgp::fmt17(D.X()(tr.row_id, c)));
    }
    row.push_back(localgp::fmt17(tr.criterion));
    row.push_back(localgp::fmt17(tr.vx_after));
    rows.push_back(std::move(row));
  }
  localgp::write_csv_file(f.c.out, header, rows);

  if (res.stalled) {
    std::cerr << "localgp: design stalled after " << res.trace.size() << " of "
              << cfg.n << " points; partial trace written to " << f.c.out
              << "\n";
    return 4;
  }
  std::cerr << "design: " << res.trace.size() << " points at theta=" << theta
            << " -> " << f.c.out << "\n";
  return 0;
}

// --------------------------------------------------------------- predict

struct PredictFlags {
  CommonFlags c;
  std::string method = "alc";
  int stages = 2;
  bool no_mle = false;
  bool no_smooth = false;
  int smooth_k = 12;
  double smooth_bw = 0.0;
  bool refit_after_smooth = false;
  int threads = 0;
  double mle_tol = 1e-5;
  int mle_iters = 50;
  std::string design_file;
  std::string grid_file;
};

int cmd_predict(const PredictFlags& f) {
  double theta0 = 0.0;
  if (const int rc = check_common(f.c, theta0)) return rc;
  if (f.stages < 1) return usage_error("--stages must be >= 1");
  if (f.smooth_k < 1) return usage_error("--smooth-k must be >= 1");
  if (f.mle_iters < 1) return usage_error("--mle-iters must be >= 1");
  if (!(f.mle_tol > 0.0)) return usage_error("--mle-tol must be > 0");
  if (f.threads < 0) return usage_error("--threads must be >= 0");

  Dataset data = load_design(f.design_file);
  const GridData grid = load_grid(f.grid_file);
  if (grid.x.cols() != data.x.cols()) {
    throw localgp::DimensionError(
        f.grid_file + ": " + std::to_string(grid.x.cols()) +
        " columns; design has " + std::to_string(data.x.cols()) +
        " coordinates");
  }
  const localgp::DesignSet D(std::move(data.x), std::move(data.y));

  localgp::StageConfig cfg;
  cfg.method = localgp::method_from_name(f.method);
  cfg.n0 = f.c.n0;
  cfg.n = f.c.n;
  cfg.close = f.c.close;
  cfg.eta = f.c.eta;
  cfg.stages = f.stages;
  cfg.theta0 = theta0;
  cfg.theta0_quantile = f.c.quantile;
  cfg.estimate_theta = !f.no_mle;
  cfg.smooth.enabled = !f.no_smooth;
  cfg.smooth.k = f.smooth_k;
  cfg.smooth.bandwidth = f.smooth_bw;
  cfg.refit_after_smooth = f.refit_after_smooth;
  cfg.workers = f.threads;
  cfg.seed = f.c.seed;
  cfg.mle_tol = f.mle_tol;
  cfg.mle_max_iter = f.mle_iters;

  const localgp::GlobalResult R = localgp::emulate(grid.x, D, cfg);

  std::vector<std::string> header = grid.names;
  for (const char* nm : {"mean", "scale2", "dof", "variance", "theta_hat",
                         "n_used", "status"}) {
    header.emplace_back(nm);
  }
  std::vector<std::vector<std::string>> rows;
  rows.reserve(R.records.size());
  for (std::size_t i = 0; i < R.records.size(); ++i) {
    const localgp::LocationRecord& rec = R.records[i];
    std::vector<std::string> row;
    row.reserve(header.size());
    for (int c = 0; c < grid.x.cols(); ++c) {
      row.push_back(localgp::fmt17(grid.x(static_cast<int>(i), c)));
    }
    row.push_back(localgp::fmt17(rec.pred.mean));
    row.push_back(localgp::fmt17(rec.pred.scale2));
    row.push_back(std::to_string(rec.pred.dof));
    row.push_back(localgp::fmt17(rec.pred.variance));
    row.push_back(localgp::fmt17(rec.pred.theta_hat));
    row.push_back(std::to_string(rec.pred.n_used));
    row.push_back(rec.status);
    rows.push_back(std::move(row));
  }
  localgp::write_csv_file(f.c.out, header, rows);

  std::cerr << "predict: " << R.records.size() << " locations, " << cfg.stages
            << " stage(s), " << R.workers_used << " worker(s), theta0="
            << R.theta0 << ", " << R.failures << " failure(s), "
            << R.total_seconds << " s -> " << f.c.out << "\n";
  return 0;
}

// ----------------------------------------------------------------- bench

struct BenchFlags {
  CommonFlags c;
  std::string problem;
  std::string methods = "alc";
  int reps = 1;
  int n_train = 4000;
  int n_pred = 500;
  int grid_per_dim = 201;
  int n_test = 10000;
  int threads = 0;
};

int cmd_bench(const BenchFlags& f) {
  double theta0 = 0.0;
  if (const int rc = check_common(f.c, theta0)) return rc;
  if (f.reps < 1) return usage_error("--reps must be >= 1");
  if (f.n_train < 2 || f.n_pred < 2 || f.n_test < 2 || f.grid_per_dim < 2) {
    return usage_error("--n-train/--n-pred/--n-test/--grid-per-dim too small");
  }
  if (f.threads < 0) return usage_error("--threads must be >= 0");

  std::vector<std::string> methods;
  for (const std::string& cell : localgp::detail::split_csv_line(f.methods)) {
    std::string name = localgp::detail::trim_ws(cell);
    if (!name.empty()) methods.push_back(std::move(name));
  }
  if (methods.empty()) {
    return usage_error("--methods must name at least one method");
  }

  localgp::StageConfig base = localgp::bench_base(f.problem);
  base.n0 = f.c.n0;
  base.n = f.c.n;
  base.close = f.c.close;
  base.eta = f.c.eta;
  base.theta0 = theta0;
  base.theta0_quantile = f.c.quantile;
  base.workers = f.threads;

  std::vector<localgp::StageConfig> cfgs;
  cfgs.reserve(methods.size());
  for (const std::string& name : methods) {
    try {
      cfgs.push_back(localgp::bench_config(base, name));
    } catch (const localgp::InvalidInputError& e) {
      return usage_error(e.what());
    }
  }

  // Rep-major so every method scores against the same Monte Carlo draw.
  std::vector<std::vector<localgp::MetricsReport>> results(
      methods.size(), std::vector<localgp::MetricsReport>(f.reps));
  for (int rep = 0; rep < f.reps; ++rep) {
    const localgp::BenchData data =
        f.problem == "borehole"
            ? localgp::bench_data_borehole(
                  f.n_train, f.n_pred, localgp::bench_train_seed(f.c.seed, rep),
                  localgp::bench_test_seed(f.c.seed, rep))
            : localgp::bench_data_gramacy2d(
                  f.grid_per_dim, f.n_test,
                  localgp::bench_test_seed(f.c.seed, rep));
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      localgp::StageConfig cfg = cfgs[mi];
      cfg.seed = localgp::bench_train_seed(f.c.seed, rep);
      const localgp::MetricsReport r = localgp::bench_run(data, cfg);
      results[mi][rep] = r;
      std::cerr << "bench: " << f.problem << " " << methods[mi] << " rep "
                << rep << ": rmse=" << r.rmse << " cov=" << r.coverage95
                << " secs=" << r.seconds << "\n";
    }
  }

  const std::vector<std::string> header = {
      "problem",            "method",     "rep",     "seconds", "rmse",
      "sqrt_one_minus_nse", "coverage95", "mean_sd"};
  std::vector<std::vector<std::string>> rows;
  rows.reserve(methods.size() * (f.reps + 1));
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    localgp::MetricsReport mean;
    for (int rep = 0; rep < f.reps; ++rep) {
      const localgp::MetricsReport& r = results[mi][rep];
      rows.push_back({f.problem, methods[mi], std::to_string(rep),
                      localgp::fmt17(r.seconds), localgp::fmt17(r.rmse),
                      localgp::fmt17(r.sqrt_one_minus_nse),
                      localgp::fmt17(r.coverage95),
                      localgp::fmt17(r.mean_sd)});
      mean.seconds += r.seconds;
      mean.rmse += r.rmse;
      mean.sqrt_one_minus_nse += r.sqrt_one_minus_nse;
      mean.coverage95 += r.coverage95;
      mean.mean_sd += r.mean_sd;
    }
    const double k = static_cast<double>(f.reps);
    rows.push_back({f.problem, methods[mi], "-1",
                    localgp::fmt17(mean.seconds / k),
                    localgp::fmt17(mean.rmse / k),
                    localgp::fmt17(mean.sqrt_one_minus_nse / k),
                    localgp::fmt17(mean.coverage95 / k),
                    localgp::fmt17(mean.mean_sd / k)});
  }
  localgp::write_csv_file(f.c.out, header, rows);
  std::cerr << "bench: wrote " << rows.size() << " rows -> " << f.c.out
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"local approximate Gaussian-process emulation"};
  app.require_subcommand(1);

  DesignFlags df;
  PredictFlags pf;
  BenchFlags bf;

  CLI::App* design =
      app.add_subcommand("design", "trace one greedy local design");
  design->add_option("file", df.file, "design CSV (coordinates..., response)")
      ->required();
  design->add_option("--x", df.x_text, "prediction location, comma-separated")
      ->required();
  design->add_option("--method", df.method, "selection criterion")
      ->check(CLI::IsMember({"nn", "alc", "mspe"}))
      ->capture_default_str();
  add_common(design, df.c, "trace.csv");

  CLI::App* predict =
      app.add_subcommand("predict", "staged global prediction over a grid");
  predict
      ->add_option("design", pf.design_file,
                   "design CSV (coordinates..., response)")
      ->required();
  predict->add_option("grid", pf.grid_file, "grid CSV (coordinates only)")
      ->required();
  predict->add_option("--method", pf.method, "selection criterion")
      ->check(CLI::IsMember({"nn", "alc", "mspe"}))
      ->capture_default_str();
  predict->add_option("--stages", pf.stages, "design/MLE stages")
      ->capture_default_str();
  predict->add_flag("--no-mle", pf.no_mle,
                    "skip lengthscale MLE (use theta0 everywhere)");
  predict->add_flag("--no-smooth", pf.no_smooth,
                    "disable spatial smoothing of theta-hat between stages");
  predict->add_option("--smooth-k", pf.smooth_k, "smoothing neighborhood size")
      ->capture_default_str();
  predict
      ->add_option("--smooth-bandwidth", pf.smooth_bw,
                   "kernel bandwidth (<= 0: per-location k-th neighbor "
                   "distance)")
      ->capture_default_str();
  predict->add_flag(
      "--refit-after-smooth", pf.refit_after_smooth,
      "re-run selection (not just the fit) at the smoothed theta");
  predict
      ->add_option("--threads", pf.threads,
                   "worker threads (0: LOCALGP_WORKERS env, then hardware)")
      ->capture_default_str();
  predict->add_option("--mle-tol", pf.mle_tol, "MLE gradient tolerance")
      ->capture_default_str();
  predict->add_option("--mle-iters", pf.mle_iters, "MLE iteration cap")
      ->capture_default_str();
  add_common(predict, pf.c, "predictions.csv");

  CLI::App* bench = app.add_subcommand(
      "bench", "accuracy/timing studies on the built-in problems");
  bench->add_option("problem", bf.problem, "gramacy2d | borehole")
      ->required()
      ->check(CLI::IsMember({"gramacy2d", "borehole"}));
  bench
      ->add_option("--methods", bf.methods,
                   "comma list from: nn nn.nomle nnbig alc alc2 alc.nomle "
                   "mspe mspe2 mspe.nomle")
      ->capture_default_str();
  bench->add_option("--reps", bf.reps, "Monte Carlo repetitions")
      ->capture_default_str();
  bench->add_option("--n-train", bf.n_train, "borehole training size")
      ->capture_default_str();
  bench->add_option("--n-pred", bf.n_pred, "borehole prediction size")
      ->capture_default_str();
  bench->add_option("--grid-per-dim", bf.grid_per_dim,
                    "gramacy2d design grid resolution")
      ->capture_default_str();
  bench->add_option("--n-test", bf.n_test, "gramacy2d test size")
      ->capture_default_str();
  bench
      ->add_option("--threads", bf.threads,
                   "worker threads (0: LOCALGP_WORKERS env, then hardware)")
      ->capture_default_str();
  add_common(bench, bf.c, "metrics.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (design->parsed()) return cmd_design(df);
    if (predict->parsed()) return cmd_predict(pf);
    return cmd_bench(bf);
  } catch (const localgp::DataError& e) {
    std::cerr << "localgp: data error: " << e.what() << "\n";
    return 3;
  } catch (const localgp::InvalidInputError& e) {
    std::cerr << "localgp: invalid input: " << e.what() << "\n";
    return 3;
  } catch (const localgp::DimensionError& e) {
    std::cerr << "localgp: dimension mismatch: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "localgp: " << e.what() << "\n";
    return 4;
  }
}
