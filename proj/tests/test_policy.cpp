#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cbobcat/errors.hpp"
#include "cbobcat/policy.hpp"
#include "cbobcat/rng.hpp"

using namespace cbobcat;

namespace {

std::vector<std::uint8_t> all_open(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

double total(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("forward_logits") {
  SUBCASE("zero network gives zero logits") {
    const PolicyParams zero(6, 16, 0, true);
    const std::vector<double> x{1, -1, 0, 0, 1, 0};
    CHECK(forward_logits(zero, x) == std::vector<double>(6, 0.0));
  }
  SUBCASE("seeded network is deterministic") {
    const PolicyParams a(6, 16, 42);
    const PolicyParams b(6, 16, 42);
    const std::vector<double> x(6, 0.0);
    CHECK(forward_logits(a, x) == forward_logits(b, x));
    CHECK(a.w1 != PolicyParams(6, 16, 43).w1);
  }
  SUBCASE("matches the tape version") {
    const PolicyParams phi(5, 7, 3);
    const std::vector<double> x{0, 1, -1, 0, 1};
    ad::Tape t;
    auto logits = logits_on_tape(policy_on_tape(t, phi), t.constant(x));
    const auto plain = forward_logits(phi, x);
    for (std::size_t k = 0; k < plain.size(); ++k) CHECK(logits[k] == doctest::Approx(plain[k]).epsilon(1e-14));
  }
  SUBCASE("logit gradients pass grad_check") {
    const PolicyParams phi(4, 6, 8);
    std::vector<double> flat;
    for (const auto& b : phi.blocks()) flat.insert(flat.end(), b.values.begin(), b.values.end());
    const std::vector<double> x{1, 0, -1, 1};
    for (std::int32_t k = 0; k < 4; ++k) {
      const ad::ScalarFunction fn = [&](ad::Tape& t, const ad::Var& p) {
        return t.gather(logits_on_tape(policy_from_flat(phi, p, 0), t.constant(x)), std::span(&k, 1));
      };
      CHECK(ad::grad_check(fn, flat, 1e-6) < 1e-5);
    }
  }
}

TEST_CASE("masked_softmax") {
  auto d = masked_softmax(std::vector<double>{0, 0}, std::vector<std::uint8_t>{1, 0});
  CHECK(d.probs == std::vector<double>{1.0, 0.0});
  d = masked_softmax(std::vector<double>{0, 0, 0}, all_open(3));
  for (double p : d.probs) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  d = masked_softmax(std::vector<double>{std::log(2.0), 0.0}, all_open(2));
  CHECK(d.probs[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(d.probs[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(masked_softmax(std::vector<double>{1, 2}, std::vector<std::uint8_t>{0, 0}), StateError);
  // large logits do not overflow
  d = masked_softmax(std::vector<double>{1000.0, 999.0}, all_open(2));
  CHECK(d.probs[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("entropy") {
  CHECK(entropy(masked_softmax(std::vector<double>(4, 0.0), all_open(4))) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-15));
  MaskedCategorical one_hot{{0, 0, 0}, {1, 1, 1}, {0, 1, 0}};
  CHECK(entropy(one_hot) == 0.0);
  MaskedCategorical two{{0, 0, 0, 0}, {1, 1, 0, 0}, {0.5, 0.5, 0, 0}};
  CHECK(entropy(two) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("masking, entropy bound and shift invariance over random inputs") {
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<double> logits(n);
    std::vector<std::uint8_t> mask(n);
    for (std::size_t k = 0; k < n; ++k) {
      logits[k] = 4.0 * rng.normal();
      mask[k] = rng.uniform() < 0.6 ? 1 : 0;
    }
    mask[rng.below(n)] = 1;
    const auto open = static_cast<double>(std::count(mask.begin(), mask.end(), 1));
    const auto d = masked_softmax(logits, mask);
    CHECK(std::abs(total(d.probs) - 1.0) < 1e-9);
    CHECK(entropy(d) <= std::log(open) + 1e-9);

    auto shifted = logits;
    const double c = 50.0 * rng.normal();
    for (auto& v : shifted) v += c;
    const auto ds = masked_softmax(shifted, mask);
    for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(ds.probs[k] - d.probs[k]) < 1e-12);

    const auto s = gumbel_softmax_sample(d, 0.5 + rng.uniform(), rng);
    CHECK(std::abs(total(s.soft) - 1.0) < 1e-9);
    CHECK(total(s.hard) == 1.0);
    CHECK(s.hard[static_cast<std::size_t>(s.index)] == 1.0);
    CHECK(s.index == masked_argmax(s.soft, mask));
    for (std::size_t k = 0; k < n; ++k) {
      if (mask[k]) continue;
      CHECK(d.probs[k] == 0.0);
      CHECK(s.soft[k] == 0.0);
      CHECK(s.hard[k] == 0.0);
    }
  }
}

TEST_CASE("uniform logits reach the entropy bound") {
  for (std::size_t n = 1; n < 30; ++n) {
    auto mask = all_open(n + 3);
    mask[0] = mask[2] = mask[n + 2] = 0;
    const auto d = masked_softmax(std::vector<double>(n + 3, 1.25), mask);
    CHECK(std::abs(entropy(d) - std::log(static_cast<double>(n))) < 1e-9);
  }
}

TEST_CASE("gumbel_softmax_from_noise with zero noise and equal probabilities is uniform") {
  const auto d = masked_softmax(std::vector<double>{0.3, 0.3, 5.0, 0.3}, std::vector<std::uint8_t>{1, 1, 0, 1});
  const auto s = gumbel_softmax_from_noise(d, std::vector<double>(4, 0.0), 1.0);
  CHECK(s.soft[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(s.soft[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(s.soft[2] == 0.0);
  CHECK(s.index == 0);
}

TEST_CASE("low-temperature hard samples follow the probabilities") {
  const auto d = masked_softmax(std::vector<double>{std::log(0.7), std::log(0.3)}, all_open(2));
  Rng rng(2024);
  int first = 0;
  constexpr int draws = 100000;
  for (int k = 0; k < draws; ++k) first += gumbel_softmax_sample(d, 0.1, rng).index == 0 ? 1 : 0;
  const double freq = static_cast<double>(first) / draws;
  CHECK(freq > 0.69);
  CHECK(freq < 0.71);
}

TEST_CASE("hard samples pass a chi-square goodness-of-fit test") {
  const std::vector<double> logits{0.5, -1.0, 2.0, 0.0, 1.0, -3.0};
  const std::vector<std::uint8_t> mask{1, 1, 1, 0, 1, 1};
  const auto d = masked_softmax(logits, mask);
  Rng rng(99);
  constexpr int draws = 100000;
  std::vector<int> counts(6, 0);
  for (int k = 0; k < draws; ++k) ++counts[static_cast<std::size_t>(gumbel_softmax_sample(d, 1.0, rng).index)];
  CHECK(counts[3] == 0);
  double chi = 0.0;
  for (std::size_t k = 0; k < 6; ++k) {
    if (!mask[k]) continue;
    const double expected = draws * d.probs[k];
    chi += (counts[k] - expected) * (counts[k] - expected) / expected;
  }
  // 0.999 quantile of chi-square with 4 degrees of freedom
  CHECK(chi < 18.467);
}

TEST_CASE("draw_gumbels leaves masked entries at zero") {
  Rng rng(5);
  const std::vector<std::uint8_t> mask{1, 0, 1};
  for (int k = 0; k < 100; ++k) {
    const auto g = draw_gumbels(mask, rng);
    CHECK(g[1] == 0.0);
    CHECK(std::isfinite(g[0]));
    CHECK(std::isfinite(g[2]));
  }
}

TEST_CASE("select_next") {
  const PolicyParams phi(3, 8, 1);
  EpisodeState st(0, 3);
  Rng rng(3);
  SUBCASE("forced choice") {
    const std::vector<std::uint8_t> only{0, 1, 0};
    CHECK(select_next(phi, st, only, 1.0, rng, SelectionMode::stochastic).question == 1);
    CHECK(select_next(phi, st, only, 1.0, rng, SelectionMode::greedy).question == 1);
  }
  SUBCASE("greedy picks the most probable question") {
    PolicyParams fixed(3, 8, 0, true);
    fixed.b2 = {std::log(0.2), std::log(0.5), std::log(0.3)};
    CHECK(select_next(fixed, st, all_open(3), 1.0, rng, SelectionMode::greedy).question == 1);
    fixed.b2 = {0.0, 0.0, 0.0};
    CHECK(select_next(fixed, st, all_open(3), 1.0, rng, SelectionMode::greedy).question == 0);
  }
  SUBCASE("stochastic selection is reproducible") {
    const PolicyParams big(20, 8, 4);
    auto sequence = [&](std::uint64_t seed) {
      Rng r(seed);
      EpisodeState s(0, 20);
      auto avail = all_open(20);
      std::vector<QuestionId> out;
      for (int t = 0; t < 10; ++t) {
        const auto sel = select_next(big, s, avail, 1.0, r, SelectionMode::stochastic);
        CHECK(avail[static_cast<std::size_t>(sel.question)] == 1);
        CHECK(sel.soft.size() == 20);
        avail[static_cast<std::size_t>(sel.question)] = 0;
        s.record(sel.question, 1);
        out.push_back(sel.question);
      }
      return out;
    };
    CHECK(sequence(8) == sequence(8));
    CHECK(sequence(8) != sequence(9));
  }
  SUBCASE("nothing available") {
    CHECK_THROWS_AS(select_next(phi, st, std::vector<std::uint8_t>(3, 0), 1.0, rng, SelectionMode::greedy),
                    StateError);
  }
}
