#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "coscl/config.hpp"
#include "coscl/errors.hpp"

using namespace coscl;

namespace {

const char* kSample = R"(# a small run
[stream]
kind = rotated_moons
T = 4
input_dim = 2
difficulty = 0.75

[ensemble]
K = 3
gamma = -0.01   # negative values are allowed
total_budget = 900

[learner]
hidden = 16, 8
feature_dim = 6

[strategy]
kind = mas
lambda = 2.5

[run]
seeds = 3, 5, 8
workers = 2
)";

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("parse a config file") {
  const auto c = parse_config(kSample);
  CHECK(c.stream.kind == StreamKind::kRotatedMoons);
  CHECK(c.stream.T == 4);
  CHECK(c.stream.difficulty == 0.75);
  CHECK(c.ensemble.K == 3);
  CHECK(c.ensemble.gamma == -0.01);
  CHECK(c.total_budget == 900);
  CHECK(c.ensemble.learner_template.hidden_widths == std::vector<std::size_t>{16, 8});
  CHECK(c.ensemble.learner_template.input_dim == 2);
  CHECK(c.strategy.kind == StrategyKind::kMas);
  CHECK(c.strategy.lambda == 2.5);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 5, 8});
  CHECK(c.workers == 2);
}

TEST_CASE("defaults fill unspecified keys") {
  const auto c = parse_config("");
  const ExperimentConfig d;
  CHECK(c.canonical() == parse_config("# nothing here\n\n").canonical());
  CHECK(c.stream.T == d.stream.T);
  CHECK(c.ensemble.K == d.ensemble.K);
  // The learner template follows the stream's input width.
  CHECK(c.ensemble.learner_template.input_dim == c.stream.input_dim);
  CHECK(c.ensemble.learner_template.feature_dim > 0);
}

TEST_CASE("canonical form round trips and hashes stably") {
  const auto c = parse_config(kSample);
  const auto again = config_from_key_values(parse_key_values(c.canonical()));
  CHECK(again.canonical() == c.canonical());
  CHECK(again.hash() == c.hash());
  CHECK(c.hash().size() == 16);

  // Reordering and whitespace do not matter.
  const auto a = parse_config("[ensemble]\nK=4\ngamma=0.1\n");
  const auto b = parse_config("# x\n[ensemble]\n  gamma = 0.1\nK   = 4\n");
  CHECK(a.hash() == b.hash());
  // Worker count does not change results, so it is not part of the identity.
  const auto w = parse_config("[ensemble]\nK=4\ngamma=0.1\n[run]\nworkers=3\n");
  CHECK(w.hash() == a.hash());
  CHECK(parse_config("[ensemble]\nK=5\ngamma=0.1\n").hash() != a.hash());
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("malformed lines report their line number") {
  CHECK(error_of("[stream]\nT = 4\nnonsense\n").find("line 3") != std::string::npos);
  CHECK(error_of("[stream\n").find("line 1") != std::string::npos);
  CHECK(error_of("[]\n").find("line 1") != std::string::npos);
  CHECK(error_of("[a]\n = 3\n").find("line 2") != std::string::npos);
  const auto dup = error_of("[stream]\nT = 4\n\nT = 5\n");
  CHECK(dup.find("line 4") != std::string::npos);
  CHECK(dup.find("stream.T") != std::string::npos);
}

TEST_CASE("invalid values and keys are config errors") {
  CHECK(error_of("[stream]\nTT = 4\n").find("stream.TT") != std::string::npos);
  CHECK_THROWS_AS(parse_config("[stream]\nT = four\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[stream]\nT = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[stream]\nkind = spirals\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[ensemble]\nuse_ec = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[ensemble]\nK = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[run]\nseeds =\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[run]\nworkers = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[probes]\nflatness_radii = 0.5, 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[probes]\nflatness_radii = 0, 1, 0.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[learner]\ndropout = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[optimizer]\nlr = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[ensemble]\ntotal_budget = 10\n"), ConfigError);
}

TEST_CASE("resolved learner widths") {
  auto c = parse_config("[stream]\ninput_dim=16\n[learner]\nhidden=64\nfeature_dim=32\n");
  CHECK(c.resolved_learner().hidden_widths == std::vector<std::size_t>{64});
  c.total_budget = parameter_count(c.resolved_learner());
  c.ensemble.mode = EnsembleMode::kSingle;
  CHECK(c.resolved_learner().hidden_widths == std::vector<std::size_t>{64});
  c.ensemble.mode = EnsembleMode::kFeatureEnsemble;
  const auto fe = c.resolved_learner();
  CHECK(c.ensemble.K * parameter_count(fe) <= c.total_budget);
  c.ensemble.mode = EnsembleMode::kClassifierEnsemble;
  CHECK(c.resolved_learner().feature_dim == 32 / c.ensemble.K);
  CHECK(c.model_K() == 1);
  CHECK(c.member_count() == c.ensemble.K);
}

TEST_CASE("load from disk") {
  const auto p = std::filesystem::temp_directory_path() / "coscl_test_config.cfg";
  std::ofstream(p) << kSample;
  CHECK(load_config(p).hash() == parse_config(kSample).hash());
  CHECK_THROWS_AS(load_config(p.string() + ".missing"), ConfigError);
}

TEST_CASE("format_double round trips") {
  for (double v : {0.1, 1e-3, 0.02, 100.0, -2.5e-7, 1.0 / 3.0}) {
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.02) == "0.02");
}
