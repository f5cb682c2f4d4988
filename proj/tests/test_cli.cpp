#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgimc/io.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr merged
};

const std::string& cli_path() {
  static const std::string path = [] {
    if (const char* env = std::getenv("SGIMC_CLI")) return std::string(env);
    for (const char* candidate :
         {"build/tools/sgimc", "tools/sgimc", "../tools/sgimc", "./sgimc"}) {
      if (fs::exists(candidate)) return fs::absolute(candidate).string();
    }
    FAIL("sgimc binary not found; set SGIMC_CLI");
    return std::string();
  }();
  return path;
}

RunResult run_cli(const std::string& args) {
  RunResult r;
  const std::string cmd = cli_path() + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::size_t got = std::fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, got);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "sgimc_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string wpath(const std::string& name) { return (work_dir() / name).string(); }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> read_value_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<double> out;
  double v = 0.0;
  while (in >> v) out.push_back(v);
  return out;
}

// A small noiseless instance shared by the pipeline tests.
const std::string& synth_dir() {
  static const std::string dir = [] {
    const std::string d = wpath("base");
    const RunResult r = run_cli("synth --out " + d +
                                " --n1 20 --n2 24 --d 5 --k 2 --rho 0.4 --noise_sd 0"
                                " --seed 3 --full");
    REQUIRE(r.exit_code == 0);
    return d;
  }();
  return dir;
}

std::string base_file(const std::string& suffix) {
  return (fs::path(synth_dir()) / ("instance_000" + suffix)).string();
}

// Fitted model plus a pairs/truth file pair over the observed entries,
// built once on first use so tests stay order-independent.
struct Fitted {
  RunResult fit;
  std::string model, report, pairs, truth;
};

const Fitted& fitted() {
  static const Fitted f = [] {
    Fitted out;
    out.model = wpath("model.sgimc");
    out.report = wpath("report.json");
    out.pairs = wpath("pairs.txt");
    out.truth = wpath("truth.txt");
    out.fit = run_cli("fit --bundle " + base_file(".json") +
                      " --k 2 --lambda 1e-4 --no-timing --out " + out.model + " --report " +
                      out.report);
    const sgimc::OmegaSparseMatrix m = sgimc::read_matrix_market(base_file("_m.mtx"));
    std::ofstream pf(out.pairs), tf(out.truth);
    m.for_each([&](sgimc::index_t i, sgimc::index_t j, double v) {
      pf << i << " " << j << "\n";
      tf << sgimc::format_double(v) << "\n";
    });
    return out;
  }();
  return f;
}

}  // namespace

TEST_CASE("help text lists every subcommand", "[cli]") {
  const RunResult r = run_cli("--help");
  CHECK(r.exit_code == 0);
  for (const char* name : {"synth", "fit", "predict", "eval", "experiment"}) {
    CHECK(r.output.find(name) != std::string::npos);
  }
  CHECK(run_cli("fit --help").exit_code == 0);
}

TEST_CASE("usage errors exit with 2", "[cli]") {
  const RunResult none = run_cli("");
  CHECK(none.exit_code == 2);
  CHECK(none.output.find("error: usage:") != std::string::npos);

  const RunResult unknown = run_cli("frobnicate");
  CHECK(unknown.exit_code == 2);

  const RunResult incomplete = run_cli("fit --k 2");
  CHECK(incomplete.exit_code == 2);
  CHECK(incomplete.output.find("error: usage:") != std::string::npos);
}

TEST_CASE("synth writes manifests and data files", "[cli]") {
  REQUIRE(fs::exists(base_file(".json")));
  REQUIRE(fs::exists(base_file("_m.mtx")));
  REQUIRE(fs::exists(base_file("_x.txt")));
  REQUIRE(fs::exists(base_file("_y.txt")));
  REQUIRE(fs::exists(base_file("_mfull.txt")));

  const nlohmann::json manifest = nlohmann::json::parse(slurp(base_file(".json")));
  CHECK(manifest.at("n1").get<int>() == 20);
  CHECK(manifest.at("n2").get<int>() == 24);
  CHECK(manifest.at("d").get<int>() == 5);
  CHECK(manifest.at("k").get<int>() == 2);
  CHECK(manifest.at("rho").get<double>() == 0.4);
  CHECK(manifest.at("loss").get<std::string>() == "squared_l2");

  const sgimc::OmegaSparseMatrix m = sgimc::read_matrix_market(base_file("_m.mtx"));
  CHECK(m.rows() == 20);
  CHECK(m.cols() == 24);
  CHECK(m.nnz() == 192);
}

TEST_CASE("synth sweep emits the whole grid", "[cli]") {
  const std::string dir = wpath("sweep");
  const RunResult r =
      run_cli("synth --sweep rho --scale 0.1 --noise_sd 0 --seed 5 --out " + dir);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("synth: wrote 14 instance manifest(s)") != std::string::npos);
  for (int i = 0; i < 14; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "instance_%03d.json", i);
    REQUIRE(fs::exists(fs::path(dir) / stem));
  }
}

TEST_CASE("fit, predict, and eval chain together", "[cli]") {
  const Fitted& f = fitted();
  REQUIRE(f.fit.exit_code == 0);
  CHECK(f.fit.output.find("fit: sweeps=") != std::string::npos);
  REQUIRE(fs::exists(f.model));

  const nlohmann::json rj = nlohmann::json::parse(slurp(f.report));
  CHECK(rj.at("config").at("k").get<int>() == 2);
  CHECK(rj.at("config").at("lambda_u").get<double>() == 1e-4);
  CHECK(rj.at("sweeps").size() > 0);

  const std::string preds = wpath("preds.txt");
  const RunResult predict = run_cli("predict --model " + f.model + " --x " +
                                    base_file("_x.txt") + " --y " + base_file("_y.txt") +
                                    " --pairs " + f.pairs + " --out " + preds);
  REQUIRE(predict.exit_code == 0);
  REQUIRE(read_value_file(preds).size() == 192);

  const RunResult eval =
      run_cli("eval --pred " + preds + " --truth " + f.truth + " --metric rel_error");
  REQUIRE(eval.exit_code == 0);
  CHECK(std::strtod(eval.output.c_str(), nullptr) < 5e-2);

  const RunResult self = run_cli("eval --pred " + preds + " --truth " + preds +
                                 " --metric rel_error");
  CHECK(std::strtod(self.output.c_str(), nullptr) == 0.0);
}

TEST_CASE("repeated fits are byte-identical", "[cli]") {
  const std::string m1 = wpath("repeat1.sgimc"), m2 = wpath("repeat2.sgimc");
  const std::string args = "fit --bundle " + base_file(".json") +
                           " --k 2 --lambda 1e-4 --seed 11 --no-timing --report " +
                           wpath("repeat.report.json") + " --out ";
  REQUIRE(run_cli(args + m1).exit_code == 0);
  const std::string report1 = slurp(wpath("repeat.report.json"));
  REQUIRE(run_cli(args + m2).exit_code == 0);
  CHECK(slurp(m1) == slurp(m2));
  CHECK(slurp(wpath("repeat.report.json")) == report1);
}

TEST_CASE("prediction transforms", "[cli]") {
  const Fitted& f = fitted();
  REQUIRE(f.fit.exit_code == 0);
  const std::string base = "predict --model " + f.model + " --x " + base_file("_x.txt") +
                           " --y " + base_file("_y.txt") + " --pairs " + f.pairs;

  const std::string prob_out = wpath("prob.txt");
  REQUIRE(run_cli(base + " --transform probability --out " + prob_out).exit_code == 0);
  for (double v : read_value_file(prob_out)) {
    REQUIRE(v > 0.0);
    REQUIRE(v < 1.0);
  }
  const std::string sign_out = wpath("sign.txt");
  REQUIRE(run_cli(base + " --transform sign --out " + sign_out).exit_code == 0);
  for (double v : read_value_file(sign_out)) REQUIRE(std::abs(v) == 1.0);
}

TEST_CASE("a zero model predicts zero everywhere", "[cli]") {
  const std::string model = wpath("zero.sgimc");
  sgimc::FactorPair zero{sgimc::DenseMatrix(5, 2), sgimc::DenseMatrix(5, 2), {}, {}};
  sgimc::save_model(model, zero, sgimc::ModelMeta{});
  const std::string out = wpath("zero_preds.txt");
  const RunResult r = run_cli("predict --model " + model + " --x " + base_file("_x.txt") +
                              " --y " + base_file("_y.txt") + " --pairs " + fitted().pairs +
                              " --out " + out);
  REQUIRE(r.exit_code == 0);
  for (double v : read_value_file(out)) REQUIRE(v == 0.0);
}

TEST_CASE("runtime failures exit with 1 and a reason code", "[cli]") {
  // Gaussian observations are not valid +-1 labels.
  const RunResult bad_labels = run_cli("fit --m " + base_file("_m.mtx") + " --x " +
                                       base_file("_x.txt") + " --y " + base_file("_y.txt") +
                                       " --loss logistic --k 2 --out " + wpath("x.sgimc"));
  CHECK(bad_labels.exit_code == 1);
  CHECK(bad_labels.output.find("error: value:") != std::string::npos);

  // Unknown enum values are usage errors, caught before any work happens.
  CHECK(run_cli("fit --loss huber --k 2").exit_code == 2);

  const RunResult missing = run_cli("predict --model " + wpath("nope.sgimc") + " --x " +
                                    base_file("_x.txt") + " --y " + base_file("_y.txt") +
                                    " --pairs " + fitted().pairs);
  CHECK(missing.exit_code == 1);
  CHECK(missing.output.find("error: parse:") != std::string::npos);

  const RunResult mismatch = run_cli("eval --pred " + fitted().pairs + " --truth " +
                                     fitted().truth + " --metric rel_error");
  CHECK(mismatch.exit_code == 1);
}

TEST_CASE("config files fill in unset options only", "[cli]") {
  const std::string cfg = wpath("config.json");
  {
    std::ofstream out(cfg);
    out << nlohmann::json{{"fit", {{"k", 3}, {"lambda", 1e-3}}}}.dump() << "\n";
  }
  const std::string model = wpath("config_model.sgimc");
  const std::string report = wpath("config_report.json");
  const RunResult r = run_cli("--config " + cfg + " fit --bundle " + base_file(".json") +
                              " --k 2 --no-timing --out " + model + " --report " + report);
  REQUIRE(r.exit_code == 0);
  const nlohmann::json rj = nlohmann::json::parse(slurp(report));
  CHECK(rj.at("config").at("k").get<int>() == 2);  // command line wins
  CHECK(rj.at("config").at("lambda_u").get<double>() == 1e-3);
  CHECK(rj.at("config").at("lambda_v").get<double>() == 1e-3);
}

TEST_CASE("experiment subcommand writes a stable csv", "[cli]") {
  const std::string csv = wpath("exp.csv");
  const std::string args = "experiment --kind rho --scale 0.05 --methods SGIMC --lambdas 1e-4"
                           " --seeds 1 --no-timing --out " + csv;
  const RunResult r = run_cli(args);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("experiment: 14 rows, 0 failed") != std::string::npos);

  const std::string first = slurp(csv);
  std::size_t lines = 0;
  for (char c : first) lines += c == '\n';
  CHECK(lines == 15);  // header + one row per rho
  CHECK(first.rfind("experiment,method,n1,n2,d,k_true,k_fit,rho,lambda,seed,metric,value,"
                    "seconds,status\n", 0) == 0);
  REQUIRE(fs::exists(csv + ".json"));

  REQUIRE(run_cli(args).exit_code == 0);
  CHECK(slurp(csv) == first);
}
