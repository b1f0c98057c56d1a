// End-to-end checks of the command-line driver: exit codes, CSV shape, and
// byte-level determinism. The binary path comes from the build system.

#include <catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(PARAMETRIX_CLI_PATH) + " " + args +
                          " 2>/tmp/cli_stderr.txt >/tmp/cli_stdout.txt";
  const int rc = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WEXITSTATUS(rc);
  std::ifstream f("/tmp/cli_stdout.txt");
  std::stringstream ss;
  ss << f.rdbuf();
  r.out = ss.str();
  return r;
}

std::string stderr_text() {
  std::ifstream f("/tmp/cli_stderr.txt");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("check subcommand audits the heat model") {
  const RunResult r = run("check --model heat");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("ellipticity_min") == 0);
  CHECK(r.out.find("# config-hash: ") != std::string::npos);
}

TEST_CASE("check audits the oscillating pair") {
  const RunResult r = run("check --pair oscillating --eps 1 --q 2.01");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("flow_closeness_const") != std::string::npos);
}

TEST_CASE("malformed config exits with code 2") {
  std::ofstream bad("/tmp/bad_config.toml");
  bad << "this is not a config\n";
  bad.close();
  const RunResult r = run("check --config /tmp/bad_config.toml");
  CHECK(r.exit_code == 2);
  CHECK(!stderr_text().empty());
  // a structurally valid file without any model is also a config error
  std::ofstream empty("/tmp/empty_config.json");
  empty << "{}";
  empty.close();
  const RunResult r2 = run("check --config /tmp/empty_config.json");
  CHECK(r2.exit_code == 2);
}

TEST_CASE("density of the heat model is the Gaussian kernel") {
  const RunResult r =
      run("density --model heat --t 0 --s 1 --x 0 --ymin -2 --ymax 2 "
          "--ycount 9 --N 2");
  REQUIRE(r.exit_code == 0);
  std::istringstream is(r.out);
  std::string line;
  std::getline(is, line);
  CHECK(line == "y,term_0,term_1,term_2,total,tail_bound");
  int rows = 0;
  while (std::getline(is, line) && line[0] != '#') {
    double y, t0, t1, t2, total, tail;
    REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf", &y, &t0, &t1,
                        &t2, &total, &tail) == 6);
    const double want = std::exp(-0.5 * y * y) / std::sqrt(2.0 * M_PI);
    CHECK(std::abs(total - want) <= 1e-10 * want + 1e-300);
    ++rows;
  }
  CHECK(rows == 9);
}

TEST_CASE("density with N = 0 returns the proxy alone") {
  const RunResult r =
      run("density --model heat --t 0 --s 1 --x 0 --ymin 0 --ymax 1 "
          "--ycount 3 --N 0");
  REQUIRE(r.exit_code == 0);
  std::istringstream is(r.out);
  std::string line;
  std::getline(is, line);
  CHECK(line == "y,term_0,total,tail_bound");
  std::getline(is, line);
  double y, t0, total, tail;
  REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &y, &t0, &total,
                      &tail) == 4);
  CHECK(total == t0);
}

TEST_CASE("identical runs produce byte-identical output") {
  const std::string args =
      "density --model ou --sigma 0.8 --t 0 --s 0.5 --x 1 --ymin 0 --ymax 3 "
      "--ycount 7 --N 2 --seed 17";
  const RunResult a = run(args);
  const RunResult b = run(args);
  CHECK(a.exit_code == 0);
  CHECK(a.out == b.out);
  CHECK(count_lines(a.out) == 9);  // header + 7 rows + hash trailer
}

TEST_CASE("flow subcommand emits the sampled trajectory") {
  const RunResult r = run("flow --model ou --t 0 --s 1 --y 1.0");
  REQUIRE(r.exit_code == 0);
  std::istringstream is(r.out);
  std::string line;
  std::getline(is, line);
  CHECK(line == "u,theta1");
  std::getline(is, line);
  double u, th;
  REQUIRE(std::sscanf(line.c_str(), "%lf,%lf", &u, &th) == 2);
  CHECK(u == 0.0);
  CHECK(std::abs(th - std::exp(-1.0)) <= 1e-9);
}

TEST_CASE("experiment subcommand writes per-epsilon surfaces") {
  const RunResult r = run(
      "experiment --eps-list 0.5 --q 2.01 --dt 0.25 --out-dir /tmp/px_exp "
      "--threads 2");
  CHECK(r.exit_code == 0);
  std::ifstream surf("/tmp/px_exp/delta_eps_0.5.csv");
  REQUIRE(surf.good());
  std::string line;
  std::getline(surf, line);
  CHECK(line == "t,s,delta_b");
  int rows = 0;
  while (std::getline(surf, line) && line[0] != '#') ++rows;
  CHECK(rows == 10);  // 4+3+2+1 cells at dt = 0.25
  std::ifstream summary("/tmp/px_exp/summary.csv");
  REQUIRE(summary.good());
  std::getline(summary, line);
  CHECK(line ==
        "eps,dt,max_delta_b,argmax_t,argmax_s,diag_argmax_t,fitted_M,"
        "bound_at_argmax");
}

TEST_CASE("bounds emits the flat report schema") {
  const RunResult r = run(
      "bounds --pair oscillating --eps 0.5 --q 2.01 --t 0 --s 1 --N 1 "
      "--dt 0.5 --threads 2");
  REQUIRE(r.exit_code == 0);
  std::istringstream is(r.out);
  std::string line;
  std::getline(is, line);
  CHECK(line ==
        "t,s,eps,delta_b,delta_sigma,M,Mbar,MC,MbarC,lhs,rhs,fittedC,passed");
  int rows = 0;
  while (std::getline(is, line) && line[0] != '#') ++rows;
  CHECK(rows == 2);  // the L1 row, then the L-infinity row
}

TEST_CASE("experiment rejects q <= 2 with a config error") {
  const RunResult r =
      run("experiment --eps-list 0.5 --q 2.0 --dt 0.5 --out-dir /tmp/px_exp2");
  CHECK(r.exit_code == 2);
}
