#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "cbobcat/baselines.hpp"
#include "cbobcat/errors.hpp"

using namespace cbobcat;

namespace {

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Root of a strictly increasing function by bisection.
double bisect(auto f, double lo, double hi) {
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

IrtParams irt_with(std::vector<double> b, double mu = 0.0) {
  IrtParams p;
  p.difficulties = std::move(b);
  p.prior_mean = mu;
  return p;
}

std::vector<StudentId> everyone(const ResponseDataset& ds) {
  std::vector<StudentId> s(static_cast<std::size_t>(ds.num_students()));
  std::iota(s.begin(), s.end(), 0);
  return s;
}

}  // namespace

TEST_CASE("fit_irt recovers generator difficulties") {
  const auto syn = generate_synthetic(2000, 30, 1.0, 21);
  const auto fit = fit_irt(syn.dataset, everyone(syn.dataset));
  CHECK(fit.converged);
  CHECK(fit.params.prior_mean == 0.0);
  CHECK(pearson(fit.params.difficulties, syn.truth.difficulties) > 0.9);
  CHECK(pearson(fit.abilities, syn.truth.abilities) > 0.8);
}

TEST_CASE("fit_irt edge cases") {
  // q0 answered correctly by everybody, q1 and q2 are identical columns
  std::vector<Record> recs;
  const std::vector<std::uint8_t> col{1, 0, 1, 1, 0, 0, 1, 0};
  for (StudentId s = 0; s < 8; ++s) {
    recs.push_back({s, 0, 1});
    recs.push_back({s, 1, col[s]});
    recs.push_back({s, 2, col[s]});
    recs.push_back({s, 3, static_cast<std::uint8_t>(s % 3 == 0)});
  }
  const ResponseDataset ds(8, 4, recs);
  const auto fit = fit_irt(ds, everyone(ds));
  CHECK(fit.params.difficulties[0] < -2.0);
  CHECK(std::isfinite(fit.params.difficulties[0]));
  CHECK(std::abs(fit.params.difficulties[1] - fit.params.difficulties[2]) < 1e-6);
  CHECK(fit_irt(ds, everyone(ds)).params.difficulties == fit.params.difficulties);
}

TEST_CASE("fit_irt warns when it runs out of iterations") {
  const auto syn = generate_synthetic(100, 10, 1.0, 2);
  FitConfig cfg;
  cfg.max_iterations = 1;
  std::ostringstream warnings;
  const auto fit = fit_irt(syn.dataset, everyone(syn.dataset), cfg, &warnings);
  CHECK_FALSE(fit.converged);
  CHECK(warnings.str().find("gradient norm") != std::string::npos);
}

TEST_CASE("map_estimate_theta") {
  const auto p = irt_with({0.0, 0.0, 1.3}, 0.0);
  CHECK(map_estimate_theta(irt_with({0.0}, 0.8), {}).value[0] == 0.0);
  MapConfig at_prior;
  at_prior.prior_mean = 1.3;
  CHECK(map_estimate_theta(p, {}, at_prior).value[0] == 1.3);

  const std::vector<Response> split{{2, 1}, {2, 0}};
  CHECK(std::abs(map_estimate_theta(p, split, at_prior).value[0] - 1.3) < 1e-12);

  const std::vector<Response> one_right{{0, 1}};
  const double oracle = bisect([](double t) { return 1.0 / (1.0 + std::exp(-t)) - 1.0 + t; }, -5.0, 5.0);
  CHECK(std::abs(map_estimate_theta(p, one_right).value[0] - oracle) < 1e-9);
  // the root of sigma(t) - 1 + t
  CHECK(map_estimate_theta(p, one_right).value[0] == doctest::Approx(0.40106).epsilon(1e-4));
}

TEST_CASE("map_estimate_theta solves the stationarity condition for random patterns") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> b(10);
    for (auto& v : b) v = 2.0 * rng.normal();
    MapConfig cfg;
    cfg.prior_mean = rng.normal();
    cfg.precision = 0.1 + rng.uniform() * 3.0;
    std::vector<Response> rs;
    for (QuestionId q = 0; q < 10; ++q) {
      if (rng.uniform() < 0.6) rs.push_back({q, static_cast<std::uint8_t>(rng.uniform() < 0.5)});
    }
    const auto p = irt_with(b);
    auto grad = [&](double t) {
      double g = cfg.precision * (t - cfg.prior_mean);
      for (const auto& r : rs) g += 1.0 / (1.0 + std::exp(-(t - b[r.question]))) - r.correct;
      return g;
    };
    const double oracle = bisect(grad, -50.0, 50.0);
    CHECK(std::abs(map_estimate_theta(p, rs, cfg).value[0] - oracle) < 1e-8);
  }
}

TEST_CASE("map_estimate_theta is monotone in added responses") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> b(8);
    for (auto& v : b) v = 1.5 * rng.normal();
    const auto p = irt_with(b);
    std::vector<Response> rs;
    for (QuestionId q = 0; q < 7; ++q) {
      if (rng.uniform() < 0.5) rs.push_back({q, static_cast<std::uint8_t>(rng.uniform() < 0.5)});
    }
    const double base = map_estimate_theta(p, rs).value[0];
    auto plus = rs;
    plus.push_back({7, 1});
    auto minus = rs;
    minus.push_back({7, 0});
    CHECK(map_estimate_theta(p, plus).value[0] >= base);
    CHECK(map_estimate_theta(p, minus).value[0] <= base);
  }
}

TEST_CASE("fisher information and active selection") {
  const auto p = irt_with({-2.0, 0.0, 3.0});
  const std::vector<std::uint8_t> all{1, 1, 1};
  CHECK(select_active(p, Ability::scalar(0.0), all) == 1);
  CHECK(fisher_information(p, 0.0, 1) == 0.25);
  for (double t = -5.0; t <= 5.0; t += 0.1) CHECK(fisher_information(p, t, 1) <= 0.25);

  const auto flat = irt_with({0.7, 0.7, 0.7, 0.7});
  CHECK(select_active(flat, Ability::scalar(-1.0), std::vector<std::uint8_t>{0, 1, 1, 1}) == 1);
  CHECK_THROWS_AS(select_active(flat, Ability::scalar(0.0), std::vector<std::uint8_t>(4, 0)), StateError);

  // equidistant above and below: the information is identical, the lower index wins
  const auto mirror = irt_with({1.0, -1.0});
  CHECK(select_active(mirror, Ability::scalar(0.0), std::vector<std::uint8_t>{1, 1}) == 0);
}

TEST_CASE("active selection minimizes the ability-difficulty gap and is translation invariant") {
  Rng rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.below(20);
    std::vector<double> b(n);
    std::vector<std::uint8_t> mask(n);
    for (std::size_t k = 0; k < n; ++k) {
      b[k] = 2.0 * rng.normal();
      mask[k] = rng.uniform() < 0.7;
    }
    mask[rng.below(n)] = 1;
    const double theta = 1.5 * rng.normal();
    const auto pick = select_active(irt_with(b), Ability::scalar(theta), mask);
    REQUIRE(mask[static_cast<std::size_t>(pick)] == 1);
    QuestionId closest = -1;
    for (std::size_t k = 0; k < n; ++k) {
      if (!mask[k]) continue;
      if (closest < 0 || std::abs(theta - b[k]) < std::abs(theta - b[static_cast<std::size_t>(closest)])) {
        closest = static_cast<QuestionId>(k);
      }
    }
    CHECK(pick == closest);
    const double c = 3.0 * rng.normal();
    auto shifted = b;
    for (auto& v : shifted) v += c;
    CHECK(select_active(irt_with(shifted), Ability::scalar(theta + c), mask) == pick);
  }
}

TEST_CASE("select_random") {
  Rng rng(4);
  CHECK(select_random(std::vector<std::uint8_t>{0, 0, 1}, rng) == 2);
  CHECK_THROWS_AS(select_random(std::vector<std::uint8_t>{0, 0}, rng), StateError);

  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1};
  std::vector<int> counts(6, 0);
  constexpr int draws = 100000;
  for (int k = 0; k < draws; ++k) ++counts[static_cast<std::size_t>(select_random(mask, rng))];
  for (std::size_t k = 0; k < 6; ++k) {
    if (!mask[k]) {
      CHECK(counts[k] == 0);
      continue;
    }
    CHECK(std::abs(counts[k] / static_cast<double>(draws) - 0.25) < 0.01);
  }

  Rng a(77), b(77);
  for (int k = 0; k < 50; ++k) CHECK(select_random(mask, a) == select_random(mask, b));
}
