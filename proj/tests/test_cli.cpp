#include <doctest.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "geoelim/cli.hpp"
#include "geoelim/error.hpp"
#include "support.hpp"

using namespace geoelim;
using testsupport::slurp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "geoelim");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), err);
  return {code, err.str()};
}

std::string config() { return (testsupport::desk() / "config.json").string(); }

nlohmann::json last_json_line(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return nlohmann::json::parse(last);
}

// Rows of a two-column numeric CSV after the header.
std::vector<std::pair<double, double>> pairs(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<double, double>> out;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    out.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  return out;
}

}  // namespace

TEST_CASE("simulate writes three fields, three curves and a manifest") {
  const auto out = testsupport::scratch("cli_simulate");
  const auto r = run_cli({"simulate", "--seed", "3", "--out-dir", out.string(), "--set", "simulate.cells_per_side=20"});
  REQUIRE(r.code == 0);
  for (const char* label : {"range0.15_rough", "range0.3_rough", "range0.3_smooth"}) {
    CHECK(fs::exists(out / (std::string("field_") + label + ".csv")));
    CHECK(fs::exists(out / (std::string("curve_") + label + ".csv")));
  }
  for (const char* label : {"range0.15_rough", "range0.3_rough"}) {
    const double range = std::string(label).find("0.15") != std::string::npos ? 0.15 : 0.3;
    bool hit = false;
    for (const auto& [u, rho] : pairs(out / (std::string("curve_") + label + ".csv")))
      if (std::abs(u - range) < 1e-12) hit = std::abs(rho - 0.05) < 1e-9;
    CHECK(hit);
  }
  const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(m["command"] == "simulate");
  CHECK(m["seed"] == 3);
  CHECK(m["outputs"].size() == 6);
}

TEST_CASE("a missing seed is a configuration error reported as JSON") {
  const auto dir = testsupport::scratch("cli_noseed");
  testsupport::spit(dir / "c.json", "{}");
  const auto r = run_cli({"simulate", "--config", (dir / "c.json").string()});
  CHECK(r.code == 2);
  const auto j = last_json_line(r.err);
  CHECK(j["kind"] == "input");
  CHECK(j["message"].get<std::string>().find("seed") != std::string::npos);
  CHECK(run_cli({"simulate", "--bogus"}).code == 2);
}

TEST_CASE("fit on the desk survey writes the parameter table and report") {
  const auto out = testsupport::scratch("cli_fit");
  const auto r = run_cli({"fit", "--config", (testsupport::desk() / "fit_config.json").string(),
                          "--out-dir", out.string()});
  REQUIRE(r.code == 0);
  const auto params = cli::read_fit_parameters(out / "fit_parameters.csv", CorrelationSpec{});
  // The survey was simulated with mu = -3.5, sigma2 = 1.5, phi = 40 km.
  CHECK(params.mu == doctest::Approx(-3.5).epsilon(0.25));
  CHECK(params.sigma2 > 0.5);
  CHECK(params.sigma2 < 4);
  CHECK(params.corr.phi > 5);
  CHECK(params.corr.phi < 150);
  CHECK(slurp(out / "fit_report.txt").find("sigma2") != std::string::npos);
}

TEST_CASE("predict classifies every evaluation unit") {
  const auto out = testsupport::scratch("cli_predict");
  const auto r = run_cli({"predict", "--config", config(), "--out-dir", out.string(), "--set",
                          "predict.n_draws=200", "--set", "fit.mc_samples=500"});
  REQUIRE(r.code == 0);
  std::istringstream in(slurp(out / "predictions.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "eu_id,q,q_mc_stderr,threshold,decision,n_draws");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 3);
  CHECK(fs::exists(out / "p_mean.asc"));
}

TEST_CASE("design: infeasible k exits 4 and lists the units") {
  const auto out = testsupport::scratch("cli_design_bad");
  const auto r = run_cli({"design", "--config", config(), "--out-dir", out.string(), "--set", "design.k=400",
                          "--set", "design.max_restarts=3"});
  CHECK(r.code == 4);
  const auto j = last_json_line(r.err);
  CHECK(j["kind"] == "design_infeasible");
  CHECK(j["eu_ids"].size() == 3);
}

TEST_CASE("design: inhibition raises mean nearest-neighbour distance") {
  auto mean_nn = [](const fs::path& p) {
    std::istringstream in(slurp(p));
    std::string line;
    std::getline(in, line);
    double total = 0;
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
      total += std::stod(f.at(3));
    }
    return total;
  };
  double loose = 0, tight = 0;
  for (const char* seed : {"1", "2", "3", "4", "5", "6", "7", "8", "9", "10"}) {
    const auto a = testsupport::scratch("cli_design_0");
    const auto b = testsupport::scratch("cli_design_2");
    REQUIRE(run_cli({"design", "--config", config(), "--seed", seed, "--out-dir", a.string(), "--set",
                     "design.delta_min=0", "--set", "design.k=30"}).code == 0);
    REQUIRE(run_cli({"design", "--config", config(), "--seed", seed, "--out-dir", b.string(), "--set",
                     "design.delta_min=2", "--set", "design.k=30"}).code == 0);
    loose += mean_nn(a / "regularity.csv");
    tight += mean_nn(b / "regularity.csv");
  }
  CHECK(tight > loose);
}

TEST_CASE("rerunning from a manifest reproduces outputs byte for byte") {
  const auto a = testsupport::scratch("cli_rerun_a");
  const auto b = testsupport::scratch("cli_rerun_b");
  REQUIRE(run_cli({"design", "--config", config(), "--out-dir", a.string()}).code == 0);
  REQUIRE(run_cli({"design", "--config", (a / "manifest.json").string(), "--out-dir", b.string()}).code == 0);
  for (const char* f : {"design.csv", "design.geojson", "regularity.csv", "manifest.json"})
    CHECK(slurp(a / f) == slurp(b / f));
}

TEST_CASE("evaluate with one replicate gives 0/1 cells flagged unreliable") {
  const auto out = testsupport::scratch("cli_eval");
  const auto r = run_cli({"evaluate", "--config", config(), "--out-dir", out.string(),
                          "--set", "evaluate.n_replicates=1", "--set", "evaluate.refit_mode=fixed_corr",
                          "--set", "evaluate.ks=[5]", "--set", "evaluate.ms=[60,100]",
                          "--set", "evaluate.n_draws=100"});
  REQUIRE(r.code == 0);
  const auto table = slurp(out / "npv_table.csv");
  CHECK(table.rfind("k,m=60,m=100\n", 0) == 0);
  const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(m["run"]["stderr_unreliable"] == true);
  std::istringstream in(table);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::stringstream ss(line);
  std::string cell;
  std::getline(ss, cell, ',');
  CHECK(cell == "5");
  while (std::getline(ss, cell, ','))
    CHECK((cell == "NA" || cell.rfind("0.000", 0) == 0 || cell.rfind("1.000", 0) == 0));
}

TEST_CASE("flags take precedence over file values") {
  const auto c = cli::load_config(testsupport::desk() / "config.json", {"design.k=7"}, 99, fs::path("x"), 2);
  CHECK(c.seed == 99);
  CHECK(c.design.k == 7);
  CHECK(c.workers == 2);
  CHECK(c.model.corr.phi == doctest::Approx(0.46 * cli::kKmPerDegree));
  CHECK(!c.effective.contains("workers"));
  CHECK_THROWS_AS(cli::load_config(testsupport::desk() / "config.json", {"model.phi_unit=miles"},
                                   std::nullopt, std::nullopt, std::nullopt),
                  InputError);
}
