#include <doctest.h>

#include <cmath>

#include "cbobcat/errors.hpp"
#include "cbobcat/response_model.hpp"
#include "cbobcat/rng.hpp"

using namespace cbobcat;

namespace {

IrtParams irt_with(std::vector<double> b, double mu = 0.0) {
  IrtParams p;
  p.difficulties = std::move(b);
  p.prior_mean = mu;
  return p;
}

}  // namespace

TEST_CASE("IRT predict_prob") {
  const auto p = irt_with({0.3, -1.0});
  CHECK(predict_prob(p, Ability::scalar(0.3), 0) == 0.5);
  CHECK(predict_prob(p, Ability::scalar(1.0), 1) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
  CHECK(predict_prob(p, Ability::scalar(1.0), 1) == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK_THROWS_AS(predict_prob(p, Ability::scalar(0.0), 2), ArgumentError);
  CHECK_THROWS_AS(predict_prob(p, Ability::scalar(0.0), -1), ArgumentError);
}

TEST_CASE("IRT predict_prob rises with ability and falls with difficulty") {
  double prev = 0.0;
  for (double theta = -30.0; theta <= 30.0; theta += 0.25) {
    const double now = predict_prob(irt_with({0.0}), Ability::scalar(theta), 0);
    CHECK(now > prev);
    CHECK(now <= 1.0);
    prev = now;
  }
  prev = 1.0;
  for (double b = -10.0; b <= 10.0; b += 0.25) {
    const double now = predict_prob(irt_with({b}), Ability::scalar(0.4), 0);
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("neural predict_prob") {
  NeuralResponseParams p({5, 4, 8}, 3);
  const Ability theta{{0.2, -0.1, 0.5, 0.0}};
  const auto all = predict_all(p, theta);
  REQUIRE(all.size() == 5);
  for (QuestionId q = 0; q < 5; ++q) {
    CHECK(all[q] == predict_prob(p, theta, q));
    CHECK(all[q] > 0.0);
    CHECK(all[q] < 1.0);
  }
  // hand-computed forward pass
  double logit = p.b2[2];
  for (int j = 0; j < 8; ++j) {
    double a = p.b1[j];
    for (int k = 0; k < 4; ++k) a += p.w1[j * 4 + k] * theta.value[k];
    logit += p.w2[2 * 8 + j] * std::tanh(a);
  }
  CHECK(all[2] == doctest::Approx(1.0 / (1.0 + std::exp(-logit))).epsilon(1e-14));
  CHECK_THROWS_AS(predict_prob(p, theta, 5), ArgumentError);
  CHECK_THROWS_AS(predict_prob(p, Ability::scalar(0.0), 0), ArgumentError);
  CHECK(prior_ability(ResponseModelParams{p}).value.size() == 4);
}

TEST_CASE("bce_loss") {
  CHECK(bce_loss(1, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce_loss(1, 1.0 - 1e-7) == doctest::Approx(1e-7).epsilon(1e-6));
  CHECK(bce_loss(0, 0.9) == doctest::Approx(-std::log(0.1)).epsilon(1e-14));
  CHECK(bce_loss(0, 0.9) == doctest::Approx(2.3026).epsilon(1e-4));
  CHECK(std::isfinite(bce_loss(1, 0.0)));
  CHECK(bce_loss(1, 0.0) == doctest::Approx(-std::log(1e-7)));
}

TEST_CASE("bce derivative with respect to the logit is p - y") {
  Rng rng(12);
  for (int k = 0; k < 200; ++k) {
    const double z = 8.0 * rng.uniform() - 4.0;
    const std::vector<double> y{rng.uniform() < 0.5 ? 0.0 : 1.0};
    ad::Tape t;
    auto logit = t.variable(z);
    auto g = t.backward(t.bce(ad::sigmoid(logit), y)).wrt(logit)[0];
    CHECK(std::abs(g - (ad::stable_sigmoid(z) - y[0])) < 1e-10);
  }
}

TEST_CASE("bce is convex in the logit") {
  for (std::uint8_t y : {0, 1}) {
    auto f = [y](double z) { return bce_loss(y, ad::stable_sigmoid(z)); };
    for (double z = -6.0; z <= 6.0; z += 0.1) CHECK(f(z - 0.05) + f(z + 0.05) - 2.0 * f(z) >= -1e-12);
  }
}

TEST_CASE("prox_penalty") {
  CHECK(prox_penalty(Ability::scalar(0.7), Ability::scalar(0.7), 3.0) == 0.0);
  CHECK(prox_penalty(Ability::scalar(2.5), Ability::scalar(0.5), 1.0) == 2.0);
  CHECK(prox_penalty(Ability::scalar(9.0), Ability::scalar(-3.0), 0.0) == 0.0);
  CHECK(prox_penalty(Ability{{1.0, 2.0}}, Ability{{0.0, 0.0}}, 2.0) == 5.0);
  CHECK_THROWS_AS(prox_penalty(Ability{{1.0, 2.0}}, Ability::scalar(0.0), 1.0), ArgumentError);
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    const Ability a{{rng.normal(), rng.normal()}};
    const Ability b{{rng.normal(), rng.normal()}};
    CHECK(prox_penalty(a, b, 0.5) > 0.0);
  }
}

TEST_CASE("tape-side probabilities match the plain model") {
  const auto irt = irt_with({0.5, -0.25, 1.5}, 0.1);
  NeuralResponseParams net({3, 2, 4}, 8);
  const std::vector<QuestionId> qs{2, 0};
  for (const ResponseModelParams& params : {ResponseModelParams{irt}, ResponseModelParams{net}}) {
    ad::Tape t;
    const auto vars = model_on_tape(t, params);
    const Ability theta = std::holds_alternative<IrtParams>(params) ? Ability::scalar(0.8) : Ability{{0.3, -0.6}};
    auto probs = probs_on_tape(vars, t.constant(theta.value), qs);
    CHECK(probs[0] == doctest::Approx(predict_prob(params, theta, 2)).epsilon(1e-15));
    CHECK(probs[1] == doctest::Approx(predict_prob(params, theta, 0)).epsilon(1e-15));
    CHECK(prior_on_tape(vars).values()[0] == prior_ability(params).value[0]);
  }
}

TEST_CASE("weighted_loss_gradient equals the autodiff gradient of the weighted loss") {
  const std::vector<double> labels{1, 0, 1, 1};
  const std::vector<double> w{0.2, 0.0, 1.0, 0.5};
  NeuralResponseParams net({4, 3, 5}, 2);
  for (const ResponseModelParams& params : {ResponseModelParams{irt_with({0.1, -0.4, 0.9, 0.0})},
                                            ResponseModelParams{net}}) {
    const bool irt = std::holds_alternative<IrtParams>(params);
    const std::vector<double> theta = irt ? std::vector<double>{0.35} : std::vector<double>{0.2, -0.5, 0.1};
    ad::Tape t;
    const auto vars = model_on_tape(t, params);
    auto th = t.variable(theta);
    const std::vector<QuestionId> all{0, 1, 2, 3};
    auto probs = probs_on_tape(vars, th, all);
    // sum_k w_k bce_k through per-question bce nodes
    ad::Var loss = t.constant(0.0);
    for (std::size_t k = 0; k < 4; ++k) {
      const std::int32_t idx = static_cast<std::int32_t>(k);
      const std::vector<double> y{labels[k]};
      loss = loss + t.constant(w[k]) * t.bce(t.gather(probs, std::span(&idx, 1)), y);
    }
    const auto expected = t.backward(loss).wrt(th);
    ad::Tape u;
    const auto vars2 = model_on_tape(u, params);
    auto g = weighted_loss_gradient(vars2, u.constant(theta), u.constant(w), labels);
    REQUIRE(g.size() == theta.size());
    for (std::size_t k = 0; k < theta.size(); ++k) CHECK(std::abs(g[k] - expected[k]) < 1e-12);
  }
}
