#include <catch_amalgamated.hpp>

#include "parametrix/config.hpp"
#include "parametrix/csv.hpp"

using namespace parametrix;

TEST_CASE("toml subset parses into the json schema") {
  const std::string toml = R"(
# oscillating run
config_version = 1
seed = 42

[pair]
name = "oscillating"
eps = 0.5
q = 2.01

[quad]
n_time = 16
n_space = 41

[experiment]
eps_list = [1.0, 0.5, 0.2]
out_dir = "runs"
)";
  const json cfg = load_config_text(toml);
  CHECK(cfg.at("config_version").get<int>() == 1);
  CHECK(cfg.at("seed").get<int>() == 42);
  CHECK(cfg.at("pair").at("name").get<std::string>() == "oscillating");
  CHECK(cfg.at("pair").at("eps").get<double>() == 0.5);
  CHECK(cfg.at("quad").at("n_time").get<int>() == 16);
  CHECK(cfg.at("experiment").at("eps_list").size() == 3);
  CHECK(cfg.at("experiment").at("out_dir").get<std::string>() == "runs");
}

TEST_CASE("json configs pass through unchanged") {
  const json cfg = load_config_text(R"({"model":{"name":"heat"},"seed":7})");
  CHECK(cfg.at("model").at("name") == "heat");
}

TEST_CASE("dotted keys and nested arrays") {
  const json cfg = load_config_text(
      "expressions.d = 1\n"
      "expressions.drift = [\"x1\"]\n"
      "expressions.sigma = [[\"0.8\"]]\n");
  const DiffusionSpec spec = spec_from_config(cfg);
  Vec x(1);
  x << 2.0;
  CHECK(spec.drift_at(0.0, x)(0) == 2.0);
  CHECK(spec.sigma_at(0.0, x)(0, 0) == 0.8);
}

TEST_CASE("malformed configs raise config errors") {
  CHECK_THROWS_AS(load_config_text("key value no equals\n"), config_error);
  CHECK_THROWS_AS(load_config_text("{\"model\": oops"), config_error);
  CHECK_THROWS_AS(spec_from_config(json::object()), config_error);
  CHECK_THROWS_AS(pair_from_config(json::object()), config_error);
}

TEST_CASE("pair construction from config") {
  json cfg;
  cfg["pair"] = {{"name", "oscillating"}, {"eps", 0.2}, {"q", 2.01}};
  const PerturbationPair pair = pair_from_config(cfg);
  CHECK(pair.epsilon == 0.2);
  CHECK(pair.delta == 0.75);
  CHECK(pair.alpha == Catch::Approx(std::sqrt(0.2)));
  CHECK(pair.mu.size() == 1);
  CHECK(pair.mu[0].x(0) == 1.0);
}

TEST_CASE("config hash is canonical") {
  const json a = load_config_text(R"({"b": 1, "a": 2})");
  const json b = load_config_text(R"({"a": 2, "b": 1})");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
}

TEST_CASE("csv format") {
  csv_writer w({"name", "value", "flag"});
  w.add_row({std::string("plain"), 1.5, true});
  w.add_row({std::string("quote,me \"here\""), -0.25, false});
  const std::string out = w.str("deadbeef00000000");
  CHECK(out ==
        "name,value,flag\n"
        "plain,1.5,true\n"
        "\"quote,me \"\"here\"\"\",-0.25,false\n"
        "# config-hash: deadbeef00000000\n");
  CHECK_THROWS_AS(w.add_row({1.0}), invalid_param);
}

TEST_CASE("csv doubles round-trip at full precision") {
  csv_writer w({"x"});
  const double v = 0.1 + 0.2;
  w.add_row({v});
  const std::string out = w.str("0");
  const std::string cell = out.substr(out.find('\n') + 1);
  CHECK(std::stod(cell) == v);
}
