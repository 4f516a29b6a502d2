#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "delaycast/delaycast.hpp"

#ifndef DELAYCAST_CLI_PATH
#error "DELAYCAST_CLI_PATH must point at the built binary"
#endif

using namespace delaycast;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string& work_dir() {
  static const std::string dir = [] {
    std::string d = "/tmp/delaycast_cli_" + std::to_string(::getpid());
    std::system(("rm -rf " + d + " && mkdir -p " + d).c_str());
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return work_dir() + "/" + name; }

RunResult run_cli(const std::string& args) {
  const std::string out_path = at("stdout.txt");
  const std::string err_path = at("stderr.txt");
  const std::string cmd = std::string(DELAYCAST_CLI_PATH) + " " + args + " > " + out_path +
                          " 2> " + err_path;
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

// Twelve weeks, ten cases per week: six reported immediately, three one
// week late, one two weeks late.
void write_cases_csv(const std::string& path) {
  std::ofstream out(path);
  out << "event_date,report_date\n";
  const Date start(2022, 1, 2);  // a Sunday
  for (int w = 0; w < 12; ++w) {
    const Date ev = start.plus_days(7 * w);
    for (int k = 0; k < 10; ++k) {
      const int d = k < 6 ? 0 : (k < 9 ? 1 : 2);
      out << ev.iso() << ',' << ev.plus_days(7 * d).iso() << '\n';
    }
  }
}

const std::string& triangle_path() {
  static const std::string path = [] {
    write_cases_csv(at("cases.csv"));
    const auto r = run_cli("ingest --input " + at("cases.csv") +
                           " --max-delay 2 --as-of 2022-03-26 --out " + at("tri.json"));
    REQUIRE(r.code == 0);
    return at("tri.json");
  }();
  return path;
}

// One shared small fit most nowcast/round-trip cases reuse.
const std::string& fit_prefix() {
  static const std::string prefix = [] {
    const std::string p = at("toy");
    const auto r = run_cli("fit --triangle " + triangle_path() +
                           " --chains 2 --iters 1200 --burn 600 --thin 3 --seed 11 "
                           "--out-prefix " + p);
    REQUIRE(r.code == 0);
    return p;
  }();
  return prefix;
}

}  // namespace

TEST_CASE("version flag prints the embedded version", "[cli]") {
  const auto r = run_cli("--version");
  REQUIRE(r.code == 0);
  REQUIRE(r.out == std::string(kVersion) + "\n");
}

TEST_CASE("ingest builds the expected triangle and is idempotent", "[cli]") {
  const auto tri = read_triangle_json(triangle_path());
  REQUIRE(tri.T == 12);
  REQUIRE(tri.D == 2);
  REQUIRE(tri.S == 1);
  // Fully reported rows carry the 6/3/1 delay split.
  REQUIRE(tri.count(0, 0, 0) == 6);
  REQUIRE(tri.count(0, 1, 0) == 3);
  REQUIRE(tri.count(0, 2, 0) == 1);
  // The last row only has its immediate reports by the as-of date.
  REQUIRE(tri.observed(11, 0));
  REQUIRE_FALSE(tri.observed(11, 1));
  REQUIRE(tri.count(11, 0, 0) == 6);

  const auto again = run_cli("ingest --input " + at("cases.csv") +
                             " --max-delay 2 --as-of 2022-03-26 --out " + at("tri2.json"));
  REQUIRE(again.code == 0);
  REQUIRE(slurp(at("tri.json")) == slurp(at("tri2.json")));
}

TEST_CASE("ingest rejects malformed rows with a row number", "[cli]") {
  {
    std::ofstream out(at("bad.csv"));
    out << "event_date,report_date\n2022-01-02,2022-01-09\n2022-01-02,not-a-date\n";
  }
  const auto r = run_cli("ingest --input " + at("bad.csv") +
                         " --max-delay 2 --as-of 2022-02-01 --out " + at("bad.json"));
  REQUIRE(r.code == 2);
  REQUIRE(r.err.find("row 2") != std::string::npos);

  const auto missing = run_cli("ingest --max-delay 2 --as-of 2022-02-01 --out x.json");
  REQUIRE(missing.code == 2);
}

TEST_CASE("fit writes samples, diagnostics and manifest deterministically", "[cli]") {
  const auto& prefix = fit_prefix();
  const std::string samples = slurp(prefix + "_samples.csv");
  REQUIRE(samples.rfind("# delaycast", 0) == 0);

  nlohmann::json diag;
  std::ifstream(prefix + "_diagnostics.json") >> diag;
  REQUIRE(diag.at("model") == "BASE");
  REQUIRE(diag.at("T") == 12);
  REQUIRE(diag.at("diagnostics").at("mu").contains("rhat"));

  nlohmann::json man;
  std::ifstream(prefix + "_manifest.json") >> man;
  REQUIRE(man.at("command") == "fit");
  REQUIRE(man.at("tool_version") == kVersion);
  REQUIRE(man.at("seed") == 11);
  bool digest_checked = false;
  for (const auto& input : man.at("inputs")) {
    if (input.at("path") == triangle_path()) {
      REQUIRE(input.at("digest") == file_digest(triangle_path()));
      digest_checked = true;
    }
  }
  REQUIRE(digest_checked);

  const auto rerun = run_cli("fit --triangle " + triangle_path() +
                             " --chains 2 --iters 1200 --burn 600 --thin 3 --seed 11 "
                             "--out-prefix " + at("toyb"));
  REQUIRE(rerun.code == 0);
  REQUIRE(samples == slurp(at("toyb_samples.csv")));

  const auto reseeded = run_cli("fit --triangle " + triangle_path() +
                                " --chains 2 --iters 1200 --burn 600 --thin 3 --seed 12 "
                                "--out-prefix " + at("toyc"));
  REQUIRE(reseeded.code == 0);
  REQUIRE(samples != slurp(at("toyc_samples.csv")));
}

TEST_CASE("fit under strict mode fails on poor mixing", "[cli]") {
  const std::string flags = "fit --triangle " + triangle_path() +
                            " --chains 3 --iters 60 --burn 20 --thin 1 --seed 1 ";
  const auto strict = run_cli(flags + "--out-prefix " + at("div"));
  REQUIRE(strict.code == 3);
  REQUIRE(strict.err.find("convergence failure") != std::string::npos);
  // Outputs are still written so the run can be inspected.
  REQUIRE(slurp(at("div_samples.csv")).size() > 0);

  const auto lax = run_cli(flags + "--no-strict --out-prefix " + at("div2"));
  REQUIRE(lax.code == 0);
}

TEST_CASE("spatial models refuse to fit without adjacency", "[cli]") {
  const auto r = run_cli("fit --triangle " + triangle_path() + " --model M4 --out-prefix " +
                         at("m4"));
  REQUIRE(r.code == 2);
  REQUIRE(r.err.find("adjacency") != std::string::npos);
}

TEST_CASE("nowcast csv matches the persisted predictive draws", "[cli]") {
  const auto r = run_cli("nowcast --samples " + fit_prefix() + "_samples.csv --triangle " +
                         triangle_path() + " --threshold 64.6 --seed 11 --out " + at("now.csv") +
                         " --draws-out " + at("cells.csv"));
  REQUIRE(r.code == 0);

  const auto now = csv::read_file(at("now.csv"));
  REQUIRE(now.header == std::vector<std::string>{"t", "s", "observed_partial", "mean", "median",
                                                 "q2.5", "q97.5", "exceedance"});
  REQUIRE(now.rows.size() == 2);  // rows T-D..T-1

  const auto cells = csv::read_file(at("cells.csv"));
  std::vector<int> cell_week(cells.header.size(), -1);  // parse "n[t,d]" names
  for (std::size_t c = 1; c < cells.header.size(); ++c) {
    const auto& name = cells.header[c];
    REQUIRE(name.rfind("n[", 0) == 0);
    cell_week[c] = std::stoi(name.substr(2, name.find(',') - 2));
  }

  for (const auto& row : now.rows) {
    const int t = std::stoi(row[0]);
    const double partial = csv::parse_double(row[2]);
    std::vector<double> totals;
    for (const auto& draw_row : cells.rows) {
      double total = partial;
      for (std::size_t c = 1; c < draw_row.size(); ++c)
        if (cell_week[c] == t) total += csv::parse_double(draw_row[c]);
      totals.push_back(total);
    }
    double mean = 0.0;
    for (double v : totals) mean += v;
    mean /= static_cast<double>(totals.size());
    std::sort(totals.begin(), totals.end());
    const auto type1 = [&](double p) {
      const auto m = static_cast<double>(totals.size());
      auto idx = static_cast<std::size_t>(std::ceil(p * m));
      idx = std::clamp<std::size_t>(idx, 1, totals.size());
      return totals[idx - 1];
    };
    REQUIRE(csv::parse_double(row[3]) == Catch::Approx(mean).margin(1e-9));
    REQUIRE(csv::parse_double(row[4]) == Catch::Approx(type1(0.5)).margin(1e-9));
    REQUIRE(csv::parse_double(row[5]) == Catch::Approx(type1(0.025)).margin(1e-9));
    REQUIRE(csv::parse_double(row[6]) == Catch::Approx(type1(0.975)).margin(1e-9));
    double exceed = 0.0;
    for (double v : totals) exceed += v > 64.6 ? 1.0 : 0.0;
    exceed /= static_cast<double>(totals.size());
    REQUIRE(csv::parse_double(row[7]) == Catch::Approx(exceed).margin(1e-9));
  }

  const auto mismatch = run_cli("nowcast --samples " + fit_prefix() +
                                "_samples.csv --triangle " + triangle_path() +
                                " --model M0 --out " + at("now2.csv"));
  REQUIRE(mismatch.code == 2);
}

TEST_CASE("compare dedups models and verifies the criteria identity", "[cli]") {
  const auto r = run_cli("compare --triangle " + triangle_path() +
                         " --models BASE,BASE --chains 2 --iters 600 --burn 300 --thin 3 "
                         "--seed 7 --out " + at("crit.csv"));
  REQUIRE(r.code == 0);
  REQUIRE(r.err.find("duplicate model BASE") != std::string::npos);

  const auto table = csv::read_file(at("crit.csv"));
  REQUIRE(table.header == std::vector<std::string>{"model", "Dbar", "pD", "DIC", "WAIC"});
  REQUIRE(table.rows.size() == 1);
  REQUIRE(table.rows[0][0] == "BASE");
  const double dbar = csv::parse_double(table.rows[0][1]);
  const double pd = csv::parse_double(table.rows[0][2]);
  const double dic = csv::parse_double(table.rows[0][3]);
  REQUIRE(dic == Catch::Approx(dbar + pd).margin(1e-9));
}

TEST_CASE("simulate writes reproducible dataset and truth pairs", "[cli]") {
  {
    SimulationScenario sc;
    sc.spec.T = 8;
    sc.spec.D = 2;
    sc.hyper.mu = 2.0;
    sc.hyper.alpha_sd = 0.2;
    sc.hyper.beta_sd = 0.5;
    sc.hyper.phi = 10.0;
    sc.seed = 5;
    std::ofstream out(at("scen.json"));
    out << scenario_to_json(sc).dump(2) << '\n';
  }
  const auto first = run_cli("simulate --scenario " + at("scen.json") +
                             " --replicates 2 --out-dir " + at("sim1"));
  REQUIRE(first.code == 0);
  const auto second = run_cli("simulate --scenario " + at("scen.json") +
                              " --replicates 2 --out-dir " + at("sim2"));
  REQUIRE(second.code == 0);
  for (const char* name : {"dataset_1.json", "dataset_2.json", "truth_1.json", "truth_2.json"}) {
    const std::string a = slurp(at("sim1/") + name);
    REQUIRE(a.size() > 0);
    REQUIRE(a == slurp(at("sim2/") + name));
  }

  nlohmann::json truth;
  std::ifstream(at("sim1/truth_1.json")) >> truth;
  REQUIRE(truth.at("state").at("alpha").size() == 8);
  REQUIRE(truth.at("counts").size() == 8 * 3);
  const auto tri = read_triangle_json(at("sim1/dataset_1.json"));
  REQUIRE(tri.T == 8);
  REQUIRE_FALSE(tri.observed(7, 1));

  nlohmann::json man;
  std::ifstream(at("sim1/manifest.json")) >> man;
  REQUIRE(man.at("command") == "simulate");

  const auto bad = run_cli("simulate --scenario " + at("cases.csv") + " --out-dir " + at("simx"));
  REQUIRE(bad.code == 2);
}
