#include <doctest.h>

#include <cmath>

#include "coscl/ensemble.hpp"
#include "coscl/errors.hpp"
#include "gradcheck.hpp"

using namespace coscl;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

EnsembleConfig small_config(std::size_t K, bool gates) {
  EnsembleConfig cfg;
  cfg.K = K;
  cfg.use_gates = gates;
  cfg.learner_template = LearnerConfig{3, {5}, 4, 0.0, 0};
  return cfg;
}

const std::vector<std::size_t> kTwoTasks{2, 3};

}  // namespace

TEST_CASE("ec_loss worked example") {
  Tensor p1 = Tensor::from({1, 2}, {0.5, 0.5});
  Tensor p2 = Tensor::from({1, 2}, {0.25, 0.75});
  const double kl12 = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
  const double kl21 = 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5);
  const std::vector<Tensor> ps{p1, p2};
  CHECK(ec_loss(ps).item() == doctest::Approx(0.5 * (kl12 + kl21)).epsilon(1e-12));
  CHECK(std::abs(ec_loss(ps).item() - 0.137326) < 1e-6);
}

TEST_CASE("ec_loss properties") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 2 + uniform_index(rng, 4);
    std::vector<Tensor> ps;
    for (std::size_t i = 0; i < K; ++i) ps.push_back(softmax(gradcheck::random_tensor({3, 4}, rng, -3, 3, false)));
    const double v = ec_loss(ps).item();
    CHECK(v >= 0.0);
    std::vector<Tensor> rev(ps.rbegin(), ps.rend());
    CHECK(ec_loss(rev).item() == doctest::Approx(v).epsilon(1e-12));
    std::vector<Tensor> same(K, ps[0]);
    CHECK(ec_loss(same).item() == 0.0);
  }
  const std::vector<Tensor> one{Tensor::from({1, 2}, {0.3, 0.7})};
  CHECK(ec_loss(one).item() == 0.0);
  const std::vector<Tensor> mismatch{Tensor::from({1, 2}, {0.3, 0.7}), Tensor::from({1, 3}, {0.2, 0.3, 0.5})};
  CHECK_THROWS_AS(ec_loss(mismatch), DimensionError);
}

TEST_CASE("gates") {
  EnsembleModel m = EnsembleModel::create(small_config(3, true), kTwoTasks, 1);
  CHECK(m.gate_value(0, 0) == 0.5);
  m.alphas[1][2].mutable_data()[0] = 0.1;
  CHECK(m.gate_value(1, 2) > 1.0 - 1e-4);
  CHECK(m.gate_value(1, 2) < 1.0);
  m.alphas[1][2].mutable_data()[0] = -0.1;
  CHECK(m.gate_value(1, 2) < 1e-4);
  CHECK(m.gate_value(1, 2) > 0.0);
  CHECK_THROWS_AS(m.gate(2, 0), TaskError);
  CHECK_THROWS_AS(forward_joint(m, Tensor::zeros({1, 3}), 5), TaskError);
}

TEST_CASE("forward_joint reduces to a single learner") {
  EnsembleModel m = EnsembleModel::create(small_config(1, false), kTwoTasks, 2);
  Rng rng(1);
  Tensor x = gradcheck::random_tensor({4, 3}, rng, -1, 1, false);
  Tensor direct = add(matmul(features(m.learners[0], x), m.heads[1].weight), m.heads[1].bias);
  CHECK(values(forward_joint(m, x, 1)) == values(direct));
}

TEST_CASE("saturated gates approach ungated logits") {
  EnsembleModel gated = EnsembleModel::create(small_config(3, true), kTwoTasks, 3);
  EnsembleModel plain = gated;
  plain.use_gates = false;
  for (auto& row : gated.alphas) {
    for (auto& a : row) a.mutable_data()[0] = 20.0 / gated.gate_scale;
  }
  Rng rng(2);
  Tensor x = gradcheck::random_tensor({6, 3}, rng, -1, 1, false);
  auto a = values(forward_joint(gated, x, 0)), b = values(forward_joint(plain, x, 0));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst < 1e-3);
}

TEST_CASE("zero features give the head bias") {
  EnsembleModel m = EnsembleModel::create(small_config(2, true), kTwoTasks, 4);
  for (auto& l : m.learners) {
    for (auto& v : l.mix.weight.mutable_data()) v = 0.0;
  }
  m.heads[1].bias.mutable_data()[0] = 0.25;
  m.heads[1].bias.mutable_data()[2] = -1.5;
  Tensor logits = forward_joint(m, Tensor::from({1, 3}, {0.3, -0.2, 0.9}), 1);
  CHECK(values(logits) == std::vector<double>{0.25, 0.0, -1.5});
}

TEST_CASE("per-learner predictions") {
  EnsembleModel m = EnsembleModel::create(small_config(3, true), kTwoTasks, 5);
  Rng rng(3);
  Tensor x = gradcheck::random_tensor({4, 3}, rng, -1, 1, false);
  for (const auto& p : forward_per_learner(m, x, 1)) {
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) s += p.at(r, c);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
  m.learners[1] = m.learners[0];
  m.learners[2] = m.learners[0];
  auto ps = forward_per_learner(m, x, 0);
  CHECK(values(ps[0]) == values(ps[1]));
  CHECK(values(ps[0]) == values(ps[2]));
}

TEST_CASE("per-learner predictions on a hand-set two-learner model") {
  // Learner i: x -> relu(a_i x) * [0, c_i]; identity head; gates off.
  EnsembleConfig cfg;
  cfg.K = 2;
  cfg.use_gates = false;
  cfg.learner_template = LearnerConfig{1, {1}, 2, 0.0, 0};
  const std::vector<std::size_t> cpt{2};
  EnsembleModel m = EnsembleModel::create(cfg, cpt, 0);
  const double a[2] = {1.0, 2.0};
  const double c[2] = {std::log(3.0), std::log(2.0) / 2.0};
  for (int i = 0; i < 2; ++i) {
    m.learners[i].layers[0].weight.mutable_data()[0] = a[i];
    m.learners[i].mix.weight.mutable_data()[0] = 0.0;
    m.learners[i].mix.weight.mutable_data()[1] = c[i];
  }
  auto hw = m.heads[0].weight.mutable_data();
  hw[0] = 1, hw[1] = 0, hw[2] = 0, hw[3] = 1;
  auto ps = forward_per_learner(m, Tensor::from({1, 1}, {1.0}), 0);
  // Learner 0 logits [0, ln 3] -> [1/4, 3/4]; learner 1 logits [0, ln 2] -> [1/3, 2/3].
  CHECK(ps[0].at(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(ps[0].at(0, 1) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(ps[1].at(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(ps[1].at(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("objective composition") {
  EnsembleModel m = EnsembleModel::create(small_config(3, true), kTwoTasks, 6);
  Rng rng(5);
  Batch b{gradcheck::random_tensor({5, 3}, rng, -1, 1, false), {0, 1, 1, 0, 1}};
  const double ce = softmax_cross_entropy(forward_joint(m, b.x, 0), b.labels).item();
  CHECK(coscl_objective(m, b, 0, Tensor(), 0.0).item() == ce);
  Tensor pen = Tensor::scalar(0.75);
  CHECK(coscl_objective(m, b, 0, pen, 0.0).item() == ce + 0.75);

  const double ec = ec_loss(forward_per_learner(m, b.x, 0)).item();
  CHECK(coscl_objective(m, b, 0, Tensor(), 0.02).item() == doctest::Approx(ce + 0.02 * ec).epsilon(1e-14));

  m.learners[1] = m.learners[0];
  m.learners[2] = m.learners[0];
  const double ce_same = softmax_cross_entropy(forward_joint(m, b.x, 0), b.labels).item();
  CHECK(coscl_objective(m, b, 0, Tensor(), 0.02).item() == ce_same);

  Batch empty{Tensor::zeros({1, 3}), {}};
  CHECK_THROWS_AS(coscl_objective(m, empty, 0, Tensor(), 0.0), ContractError);
}

TEST_CASE("objective gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (const auto& c : gradcheck::composite_cases(seed)) {
      INFO(c.name << " seed " << seed);
      CHECK(c.max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("gradients reach learners, gates and the head") {
  EnsembleModel m = gradcheck::toy_ensemble(3, 2);
  Rng rng(8);
  Batch b{gradcheck::random_tensor({4, 3}, rng, -1, 1, false), {0, 1, 0, 1}};
  backward(coscl_objective(m, b, 1, Tensor(), 0.02));
  CHECK(m.alphas[1][0].has_grad());
  CHECK(m.alphas[1][1].has_grad());
  CHECK_FALSE(m.alphas[0][0].has_grad());
  CHECK(m.heads[1].weight.has_grad());
  CHECK(m.learners[0].mix.weight.has_grad());
}

TEST_CASE("common gate rescaling absorbed by the head preserves predictions") {
  EnsembleModel m = EnsembleModel::create(small_config(3, true), kTwoTasks, 7);
  EnsembleModel r = m;
  r.alphas = {};
  r.heads = {};
  auto logit = [](double g) { return std::log(g / (1.0 - g)); };
  for (std::size_t t = 0; t < m.num_tasks(); ++t) {
    r.alphas.emplace_back();
    for (std::size_t i = 0; i < m.K(); ++i) {
      m.alphas[t][i].mutable_data()[0] = logit(0.4) / m.gate_scale;
      r.alphas[t].push_back(Tensor::scalar(logit(0.8) / m.gate_scale, true));
    }
    r.heads.push_back({scale(m.heads[t].weight, 0.5).detach(), m.heads[t].bias.clone()});
  }
  Rng rng(9);
  Tensor x = gradcheck::random_tensor({20, 3}, rng, -1, 1, false);
  for (std::size_t t = 0; t < 2; ++t) {
    Tensor a = forward_joint(m, x, t), b = forward_joint(r, x, t);
    for (std::size_t n = 0; n < a.rows(); ++n) {
      std::size_t am = 0, bm = 0;
      for (std::size_t c = 1; c < a.cols(); ++c) {
        if (a.at(n, c) > a.at(n, am)) am = c;
        if (b.at(n, c) > b.at(n, bm)) bm = c;
      }
      CHECK(am == bm);
    }
  }
}

TEST_CASE("classifier ensemble averages member probabilities") {
  EnsembleModel a = EnsembleModel::create(small_config(1, false), kTwoTasks, 1);
  EnsembleModel b = EnsembleModel::create(small_config(1, false), kTwoTasks, 2);
  Rng rng(1);
  Tensor x = gradcheck::random_tensor({3, 3}, rng, -1, 1, false);
  const std::vector<EnsembleModel> one{a};
  CHECK(values(forward_classifier_ensemble(one, x, 1)) == values(softmax(forward_joint(a, x, 1))));
  const std::vector<EnsembleModel> two{a, b};
  auto avg = values(forward_classifier_ensemble(two, x, 1));
  auto pa = values(softmax(forward_joint(a, x, 1))), pb = values(softmax(forward_joint(b, x, 1)));
  for (std::size_t i = 0; i < avg.size(); ++i) CHECK(avg[i] == doctest::Approx((pa[i] + pb[i]) / 2).epsilon(1e-15));
  for (std::size_t r = 0; r < 3; ++r) CHECK(avg[3 * r] + avg[3 * r + 1] + avg[3 * r + 2] == doctest::Approx(1.0));

  const std::vector<std::size_t> other_cpt{2, 4};
  EnsembleModel c = EnsembleModel::create(small_config(1, false), other_cpt, 3);
  const std::vector<EnsembleModel> bad{a, c};
  CHECK_THROWS_AS(forward_classifier_ensemble(bad, x, 1), DimensionError);
}

TEST_CASE("parameter layout") {
  EnsembleModel m = EnsembleModel::create(small_config(2, true), kTwoTasks, 1);
  const std::size_t learner = parameter_count(m.learners[0]);
  CHECK(m.backbone_parameter_count() == 2 * learner);
  CHECK(m.parameter_count() == 2 * learner + 2 * 2 + (4 * 2 + 2) + (4 * 3 + 3));
  auto ps = m.parameters();
  CHECK(ps.size() == 2 * 4 + 4 + 4);
  CHECK(ps[8].node() == m.alphas[0][0].node());
  CHECK(ps[11].node() == m.alphas[1][1].node());
  CHECK(ps[12].node() == m.heads[0].weight.node());
}

TEST_CASE("config validation") {
  EnsembleConfig cfg = small_config(0, true);
  CHECK_THROWS_AS(EnsembleModel::create(cfg, kTwoTasks, 0), ConfigError);
  cfg = small_config(2, true);
  cfg.gate_scale = 0.0;
  CHECK_THROWS_AS(EnsembleModel::create(cfg, kTwoTasks, 0), ConfigError);
  cfg = small_config(2, true);
  cfg.gamma = -0.5;
  CHECK_NOTHROW(EnsembleModel::create(cfg, kTwoTasks, 0));
  CHECK(parse_ensemble_mode(to_string(EnsembleMode::kClassifierEnsemble)) == EnsembleMode::kClassifierEnsemble);
  CHECK_THROWS_AS(parse_ensemble_mode("bagging"), ConfigError);
}
