// Command-line front end: synth / fit / predict / eval / experiment.
//
// Exit codes: 0 success, 2 usage error, 1 runtime failure.  Every failure
// prints a single line "error: <code>: <detail>" to stderr.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "sgimc/sgimc.hpp"

namespace {

// JSON config files: top-level keys are subcommand names, nested keys map to
// flag names 1:1 (arrays become repeated values).
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool /*write_description*/,
                        std::string /*prefix*/) const override {
    nlohmann::json j = nlohmann::json::object();
    collect(app, default_also, j);
    return j.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    std::vector<CLI::ConfigItem> out;
    walk(j, {}, out);
    return out;
  }

 private:
  static std::string scalar_to_string(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
    if (v.is_number_float()) return sgimc::format_double(v.get<double>());
    throw CLI::ConfigError("config value must be a scalar or array of scalars");
  }

  static void walk(const nlohmann::json& node, std::vector<std::string> parents,
                   std::vector<CLI::ConfigItem>& out) {
    for (auto it = node.begin(); it != node.end(); ++it) {
      const nlohmann::json& v = it.value();
      if (v.is_object()) {
        std::vector<std::string> deeper = parents;
        deeper.push_back(it.key());
        walk(v, std::move(deeper), out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (v.is_array()) {
        for (const nlohmann::json& e : v) item.inputs.push_back(scalar_to_string(e));
      } else if (!v.is_null()) {
        item.inputs.push_back(scalar_to_string(v));
      }
      out.push_back(std::move(item));
    }
  }

  static void collect(const CLI::App* app, bool default_also, nlohmann::json& j) {
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames().front();
      if (!opt->results().empty()) {
        j[name] = opt->results().size() == 1 ? nlohmann::json(opt->results().front())
                                             : nlohmann::json(opt->results());
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    for (const CLI::App* sub : app->get_subcommands({})) {
      nlohmann::json nested = nlohmann::json::object();
      collect(sub, default_also, nested);
      if (!nested.empty()) j[sub->get_name()] = std::move(nested);
    }
  }
};

int fail(const std::string& code, const std::string& detail) {
  std::cerr << "error: " << code << ": " << detail << "\n";
  return 1;
}

std::vector<std::pair<sgimc::index_t, sgimc::index_t>> read_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw sgimc::ParseError(path + ": cannot open for reading");
  std::vector<std::pair<sgimc::index_t, sgimc::index_t>> pairs;
  std::string line;
  sgimc::index_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    sgimc::index_t i = 0, j = 0;
    if (!(ls >> i >> j)) {
      throw sgimc::ParseError(path + ":" + std::to_string(lineno) +
                              ": expected two 0-based indices per line");
    }
    pairs.emplace_back(i, j);
  }
  return pairs;
}

std::vector<double> read_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw sgimc::ParseError(path + ": cannot open for reading");
  std::vector<double> values;
  double v = 0.0;
  while (in >> v) values.push_back(v);
  if (!in.eof()) throw sgimc::ParseError(path + ": non-numeric token");
  return values;
}

void write_values(std::ostream& out, const std::vector<double>& values) {
  for (double v : values) out << sgimc::format_double(v) << "\n";
}

struct SynthArgs {
  std::string sweep;  // "", "rho", "feature"
  double scale = 1.0;
  std::string out = "synth_out";
  bool write_full = false;
  sgimc::SynthSpec spec;
};

int run_synth(const SynthArgs& a, std::uint64_t seed) {
  std::vector<sgimc::SynthSpec> specs;
  if (a.sweep.empty()) {
    sgimc::SynthSpec s = a.spec;
    s.seed = seed;
    specs.push_back(s);
  } else {
    specs = sgimc::sweep_specs(
        a.sweep == "rho" ? sgimc::SweepKind::rho_sweep : sgimc::SweepKind::feature_sweep,
        a.scale, seed);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      specs[i].noise_sd = a.spec.noise_sd;
      specs[i].feature_sd = a.spec.feature_sd;
      specs[i].seed = sgimc::mix_seed(seed, i + 1);
    }
  }
  std::filesystem::create_directories(a.out);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "instance_%03zu", i);
    const std::string base = (std::filesystem::path(a.out) / stem).string();
    sgimc::SynthInstance inst = sgimc::generate(specs[i]);
    sgimc::write_matrix_market(base + "_m.mtx", inst.problem.m);
    sgimc::write_dense_text(base + "_x.txt", inst.problem.x.to_dense());
    sgimc::write_dense_text(base + "_y.txt", inst.problem.y.to_dense());
    sgimc::DatasetBundle bundle;
    bundle.m_path = base + "_m.mtx";
    bundle.x_path = base + "_x.txt";
    bundle.y_path = base + "_y.txt";
    nlohmann::json manifest = sgimc::dataset_bundle_to_json(bundle);
    manifest["n1"] = specs[i].n1;
    manifest["n2"] = specs[i].n2;
    manifest["d"] = specs[i].d;
    manifest["k"] = specs[i].k;
    manifest["rho"] = specs[i].rho;
    manifest["noise_sd"] = specs[i].noise_sd;
    manifest["feature_sd"] = specs[i].feature_sd;
    manifest["seed"] = specs[i].seed;
    if (a.write_full) {
      sgimc::write_dense_text(base + "_mfull.txt", inst.m_full);
      manifest["m_full"] = base + "_mfull.txt";
    }
    std::ofstream mf(base + ".json");
    if (!mf) throw sgimc::ParseError(base + ".json: cannot open for writing");
    mf << manifest.dump(2) << "\n";
  }
  std::cout << "synth: wrote " << specs.size() << " instance manifest(s) under " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-group inductive matrix completion toolkit"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file; explicit flags override it");

  std::uint64_t seed = 0;
  int threads = 1;
  app.add_option("--seed", seed, "base seed for every random stream");
  app.add_option("--threads", threads, "worker pool size for grid/experiment runs");

  // --- synth ---
  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "Generate synthetic instances");
  synth->fallthrough();
  synth->add_option("--sweep", synth_args.sweep, "write a whole sweep instead of one instance")
      ->check(CLI::IsMember({"rho", "feature"}));
  synth->add_option("--scale", synth_args.scale, "proportional shrink of the sweep dimensions");
  synth->add_option("--out", synth_args.out, "output directory");
  synth->add_option("--n1", synth_args.spec.n1);
  synth->add_option("--n2", synth_args.spec.n2);
  synth->add_option("--d", synth_args.spec.d);
  synth->add_option("--k", synth_args.spec.k);
  synth->add_option("--rho", synth_args.spec.rho);
  synth->add_option("--noise_sd", synth_args.spec.noise_sd);
  synth->add_option("--feature_sd", synth_args.spec.feature_sd);
  synth->add_flag("--full", synth_args.write_full, "also write the dense ground truth");

  // --- fit ---
  CLI::App* fitc = app.add_subcommand("fit", "Fit factors to observed entries");
  fitc->fallthrough();
  std::string fit_m, fit_x, fit_y, fit_bundle, fit_solve_json;
  std::string fit_loss = "squared_l2";
  bool fit_remap01 = false, fit_no_timing = false, fit_augment = false;
  std::string fit_out = "model.sgimc", fit_report;
  sgimc::index_t f_k = 0, f_residual_rank = 0;
  double f_lambda = 0, f_lambda_u = 0, f_lambda_v = 0, f_lambda_ridge = 0;
  double f_lambda_u_residual = 0, f_lambda_v_residual = 0;
  std::string f_penalty, f_penalty_u, f_penalty_v;
  bool f_combined = false;
  double f_eta = 0, f_eps_abs = 0, f_eps_rel = 0, f_newton_tol = 0, f_outer_tol = 0;
  int f_max_iter = 0, f_max_newton = 0, f_max_cg = 0, f_outer_max_iter = 0;
  fitc->add_option("--m", fit_m, "observed entries (MatrixMarket)");
  fitc->add_option("--x", fit_x, "row-side features");
  fitc->add_option("--y", fit_y, "column-side features");
  fitc->add_option("--bundle", fit_bundle, "dataset manifest JSON (alternative to --m/--x/--y)");
  fitc->add_option("--loss", fit_loss)->check(CLI::IsMember({"squared_l2", "logistic"}));
  fitc->add_flag("--remap01", fit_remap01, "remap {0,1} observations to {-1,+1}");
  fitc->add_flag("--augment-identity", fit_augment, "append per-entity identity columns");
  fitc->add_option("--solve", fit_solve_json, "solve config JSON file (flags override)");
  fitc->add_option("--k", f_k, "factor rank");
  fitc->add_option("--lambda", f_lambda, "sets lambda_u = lambda_v");
  fitc->add_option("--lambda_u", f_lambda_u);
  fitc->add_option("--lambda_v", f_lambda_v);
  fitc->add_option("--penalty", f_penalty, "sets both penalties: group | frobenius | l1");
  fitc->add_option("--penalty_u", f_penalty_u);
  fitc->add_option("--penalty_v", f_penalty_v);
  fitc->add_option("--lambda_ridge", f_lambda_ridge);
  fitc->add_flag("--combined", f_combined, "add the transductive residual term");
  fitc->add_option("--residual_rank", f_residual_rank);
  fitc->add_option("--lambda_u_residual", f_lambda_u_residual);
  fitc->add_option("--lambda_v_residual", f_lambda_v_residual);
  fitc->add_option("--eta", f_eta, "ADMM step parameter");
  fitc->add_option("--eps_abs", f_eps_abs);
  fitc->add_option("--eps_rel", f_eps_rel);
  fitc->add_option("--max_iter", f_max_iter, "ADMM iteration cap");
  fitc->add_option("--newton_tol", f_newton_tol);
  fitc->add_option("--max_newton", f_max_newton);
  fitc->add_option("--max_cg", f_max_cg);
  fitc->add_option("--outer_tol", f_outer_tol);
  fitc->add_option("--outer_max_iter", f_outer_max_iter);
  fitc->add_option("--out", fit_out, "model output path");
  fitc->add_option("--report", fit_report, "fit report JSON path (default <out>.report.json)");
  fitc->add_flag("--no-timing", fit_no_timing, "zero the seconds fields in the report");

  // --- predict ---
  CLI::App* predictc = app.add_subcommand("predict", "Score explicit (row, col) pairs");
  predictc->fallthrough();
  std::string p_model, p_x, p_y, p_pairs, p_out = "-", p_transform = "linear";
  bool p_no_residual = false;
  predictc->add_option("--model", p_model)->required();
  predictc->add_option("--x", p_x, "row-side features")->required();
  predictc->add_option("--y", p_y, "column-side features")->required();
  predictc->add_option("--pairs", p_pairs, "pair list, one 0-based 'i j' per line")->required();
  predictc->add_option("--out", p_out, "output path, '-' for stdout");
  predictc->add_option("--transform", p_transform)
      ->check(CLI::IsMember({"linear", "probability", "sign"}));
  predictc->add_flag("--no-residual", p_no_residual, "use the inductive part alone");

  // --- eval ---
  CLI::App* evalc = app.add_subcommand("eval", "Compute a metric from predictions and truth");
  evalc->fallthrough();
  std::string e_pred, e_truth, e_metric = "rel_error";
  evalc->add_option("--pred", e_pred, "predictions, one value per line")->required();
  evalc->add_option("--truth", e_truth, "reference values, one per line")->required();
  evalc->add_option("--metric", e_metric)
      ->check(CLI::IsMember({"rel_error", "accuracy", "f1"}));

  // --- experiment ---
  CLI::App* expc = app.add_subcommand("experiment", "Run a sweep study and write a CSV");
  expc->fallthrough();
  std::string x_kind = "rho_sweep", x_out = "experiment.csv", x_solve_json;
  double x_scale = 1.0, x_validation_fraction = 0, x_train_fraction = 0;
  std::vector<std::string> x_methods;
  std::vector<double> x_lambdas;
  std::vector<sgimc::index_t> x_ranks, x_noise_counts;
  std::vector<std::uint64_t> x_seeds;
  bool x_timing = true;
  double x_noise_sd = 0, x_feature_sd = 0;
  sgimc::index_t x_items = 0, x_classes = 0;
  expc->add_option("--kind", x_kind)
      ->check(CLI::IsMember({"rho_sweep", "feature_sweep", "semisynthetic_noise", "rho",
                             "feature", "semisynthetic"}));
  expc->add_option("--scale", x_scale);
  expc->add_option("--methods", x_methods, "method tags (default SGIMC IMC-Frobenius)");
  expc->add_option("--lambdas", x_lambdas);
  expc->add_option("--ranks", x_ranks, "fit ranks; 0 means the generating rank");
  expc->add_option("--validation_fraction", x_validation_fraction);
  expc->add_option("--seeds", x_seeds);
  expc->add_option("--noise_sd", x_noise_sd);
  expc->add_option("--feature_sd", x_feature_sd);
  expc->add_option("--semisynth_items", x_items);
  expc->add_option("--semisynth_classes", x_classes);
  expc->add_option("--semisynth_noise_counts", x_noise_counts);
  expc->add_option("--semisynth_train_fraction", x_train_fraction);
  expc->add_option("--solve", x_solve_json, "base solve config JSON file");
  expc->add_flag("--timing,!--no-timing", x_timing, "wall time in the seconds column");
  expc->add_option("--out", x_out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return run_synth(synth_args, seed);

    if (fitc->parsed()) {
      sgimc::SolveConfig cfg;
      if (!fit_solve_json.empty()) {
        std::ifstream in(fit_solve_json);
        if (!in) throw sgimc::ParseError(fit_solve_json + ": cannot open for reading");
        nlohmann::json j;
        in >> j;
        cfg = sgimc::solve_config_from_json(j, cfg);
      }
      if (fitc->count("--k")) cfg.k = f_k;
      if (fitc->count("--lambda")) cfg.lambda_u = cfg.lambda_v = f_lambda;
      if (fitc->count("--lambda_u")) cfg.lambda_u = f_lambda_u;
      if (fitc->count("--lambda_v")) cfg.lambda_v = f_lambda_v;
      if (fitc->count("--penalty"))
        cfg.penalty_u = cfg.penalty_v = sgimc::penalty_from_name(f_penalty);
      if (fitc->count("--penalty_u")) cfg.penalty_u = sgimc::penalty_from_name(f_penalty_u);
      if (fitc->count("--penalty_v")) cfg.penalty_v = sgimc::penalty_from_name(f_penalty_v);
      if (fitc->count("--lambda_ridge")) cfg.lambda_ridge = f_lambda_ridge;
      if (fitc->count("--combined")) cfg.combined = f_combined;
      if (fitc->count("--residual_rank")) cfg.residual_rank = f_residual_rank;
      if (fitc->count("--lambda_u_residual")) cfg.lambda_u_residual = f_lambda_u_residual;
      if (fitc->count("--lambda_v_residual")) cfg.lambda_v_residual = f_lambda_v_residual;
      if (fitc->count("--eta")) cfg.admm.eta = f_eta;
      if (fitc->count("--eps_abs")) cfg.admm.eps_abs = f_eps_abs;
      if (fitc->count("--eps_rel")) cfg.admm.eps_rel = f_eps_rel;
      if (fitc->count("--max_iter")) cfg.admm.max_iter = f_max_iter;
      if (fitc->count("--newton_tol")) cfg.admm.newton_tol = f_newton_tol;
      if (fitc->count("--max_newton")) cfg.admm.max_newton = f_max_newton;
      if (fitc->count("--max_cg")) cfg.admm.max_cg = f_max_cg;
      if (fitc->count("--outer_tol")) cfg.outer_tol = f_outer_tol;
      if (fitc->count("--outer_max_iter")) cfg.outer_max_iter = f_outer_max_iter;
      cfg.seed = seed;

      sgimc::DatasetBundle bundle;
      if (!fit_bundle.empty()) {
        std::ifstream in(fit_bundle);
        if (!in) throw sgimc::ParseError(fit_bundle + ": cannot open for reading");
        nlohmann::json j;
        in >> j;
        bundle = sgimc::dataset_bundle_from_json(j);
        if (fitc->count("--loss")) bundle.loss = sgimc::loss_from_name(fit_loss);
        if (fitc->count("--remap01")) bundle.remap01 = fit_remap01;
      } else {
        if (fit_m.empty() || fit_x.empty() || fit_y.empty()) {
          std::cerr << "error: usage: fit needs --bundle or all of --m/--x/--y\n";
          return 2;
        }
        bundle.m_path = fit_m;
        bundle.x_path = fit_x;
        bundle.y_path = fit_y;
        bundle.loss = sgimc::loss_from_name(fit_loss);
        bundle.remap01 = fit_remap01;
      }
      sgimc::Problem prob = sgimc::load_problem(bundle);
      if (fit_augment) prob = sgimc::augment_identity(prob);

      auto [factors, report] = sgimc::fit(prob, cfg);
      if (fit_no_timing) {
        report.seconds = 0.0;
        for (sgimc::SweepStats& s : report.sweeps) s.seconds = 0.0;
      }
      sgimc::ModelMeta meta;
      meta.loss = prob.loss;
      meta.penalty_u = sgimc::PenaltyKind(cfg.penalty_u, cfg.lambda_u);
      meta.penalty_v = sgimc::PenaltyKind(cfg.penalty_v, cfg.lambda_v);
      meta.lambda_ridge = cfg.lambda_ridge;
      meta.active_rows_u = report.active_rows_u;
      meta.active_rows_v = report.active_rows_v;
      sgimc::save_model(fit_out, factors, meta);
      const std::string report_path =
          fit_report.empty() ? fit_out + ".report.json" : fit_report;
      std::ofstream rf(report_path);
      if (!rf) throw sgimc::ParseError(report_path + ": cannot open for writing");
      nlohmann::json rj = sgimc::fit_report_to_json(report);
      rj["config"] = sgimc::solve_config_to_json(cfg);
      rf << rj.dump(2) << "\n";
      if (report.aborted) return fail("numerical", "fit aborted: " + report.abort_reason);
      std::cout << "fit: sweeps=" << report.sweeps_run << " converged=" << std::boolalpha
                << report.converged << " active_u=" << report.active_rows_u.size()
                << " active_v=" << report.active_rows_v.size() << " -> " << fit_out << "\n";
      return 0;
    }

    if (predictc->parsed()) {
      sgimc::LoadedModel model = sgimc::load_model(p_model);
      sgimc::FeatureMatrix x = sgimc::read_features(p_x);
      sgimc::FeatureMatrix y = sgimc::read_features(p_y);
      const auto pairs = read_pairs(p_pairs);
      sgimc::PredictOptions opts;
      opts.include_residual = !p_no_residual;
      if (p_transform == "probability") opts.transform = sgimc::PredictTransform::probability;
      else if (p_transform == "sign") opts.transform = sgimc::PredictTransform::sign;
      const std::vector<double> scores = sgimc::predict(model.factors, x, y, pairs, opts);
      if (p_out == "-") {
        write_values(std::cout, scores);
      } else {
        std::ofstream out(p_out);
        if (!out) throw sgimc::ParseError(p_out + ": cannot open for writing");
        write_values(out, scores);
      }
      return 0;
    }

    if (evalc->parsed()) {
      const std::vector<double> pred = read_values(e_pred);
      const std::vector<double> truth = read_values(e_truth);
      double value = 0.0;
      if (e_metric == "rel_error") value = sgimc::metric_rel_error(pred, truth);
      else if (e_metric == "accuracy") value = sgimc::metric_accuracy(pred, truth);
      else value = sgimc::metric_f1(pred, truth);
      std::cout << sgimc::format_double(value) << "\n";
      return 0;
    }

    if (expc->parsed()) {
      sgimc::ExperimentConfig cfg;
      if (!x_solve_json.empty()) {
        std::ifstream in(x_solve_json);
        if (!in) throw sgimc::ParseError(x_solve_json + ": cannot open for reading");
        nlohmann::json j;
        in >> j;
        cfg.base = sgimc::solve_config_from_json(j, cfg.base);
      }
      std::string kind = x_kind;
      if (kind == "rho") kind = "rho_sweep";
      else if (kind == "feature") kind = "feature_sweep";
      else if (kind == "semisynthetic") kind = "semisynthetic_noise";
      cfg.kind = sgimc::experiment_kind_from_name(kind);
      cfg.scale = x_scale;
      if (!x_methods.empty()) cfg.methods = x_methods;
      if (!x_lambdas.empty()) cfg.grid.lambdas = x_lambdas;
      if (!x_ranks.empty()) cfg.grid.ranks = x_ranks;
      if (expc->count("--validation_fraction"))
        cfg.grid.validation_fraction = x_validation_fraction;
      if (!x_seeds.empty()) cfg.grid.seeds = x_seeds;
      if (expc->count("--noise_sd")) cfg.noise_sd = x_noise_sd;
      if (expc->count("--feature_sd")) cfg.feature_sd = x_feature_sd;
      if (expc->count("--semisynth_items")) cfg.semisynth_items = x_items;
      if (expc->count("--semisynth_classes")) cfg.semisynth_classes = x_classes;
      if (!x_noise_counts.empty()) cfg.semisynth_noise_counts = x_noise_counts;
      if (expc->count("--semisynth_train_fraction"))
        cfg.semisynth_train_fraction = x_train_fraction;
      cfg.timing = x_timing;
      cfg.threads = threads;
      cfg.base.seed = seed;
      cfg.out_csv = x_out;

      sgimc::ExperimentResult result = sgimc::run_experiment(cfg);
      std::cout << "experiment: " << result.rows.size() << " rows, " << result.failed
                << " failed -> " << cfg.out_csv << "\n";
      if (result.failed > 0) {
        return fail("numerical", std::to_string(result.failed) + " row(s) have status != ok");
      }
      return 0;
    }
  } catch (const sgimc::ParseError& e) {
    return fail("parse", e.what());
  } catch (const sgimc::ConformanceError& e) {
    return fail("conformance", e.what());
  } catch (const sgimc::ColdStartError& e) {
    return fail("coldstart", e.what());
  } catch (const sgimc::NumericalError& e) {
    return fail("numerical", e.what());
  } catch (const sgimc::ValueError& e) {
    return fail("value", e.what());
  } catch (const sgimc::Error& e) {
    return fail("internal", e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail("parse", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
