#pragma once

// Brute-force references for the metrics, shared by the unit tests and the
// acceptance run.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "cbobcat/metrics.hpp"
#include "cbobcat/rng.hpp"

namespace cbobcat::testing {

/// Pairwise count over all (positive, negative) pairs.
inline double brute_force_auc(const std::vector<ScoredLabel>& s) {
  std::int64_t twice = 0, pos = 0, neg = 0;
  for (const auto& a : s) (a.label ? pos : neg) += 1;
  for (const auto& a : s) {
    if (!a.label) continue;
    for (const auto& b : s) {
      if (b.label) continue;
      twice += a.score > b.score ? 2 : (a.score == b.score ? 1 : 0);
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

/// Mean over unordered pairs of |S_a ∩ S_b| / T, in exact rational form.
inline double brute_force_overlap(const std::vector<std::vector<QuestionId>>& sets, std::int32_t t) {
  std::int64_t shared = 0, pairs = 0;
  for (std::size_t a = 0; a < sets.size(); ++a) {
    for (std::size_t b = a + 1; b < sets.size(); ++b) {
      for (auto q : sets[a]) shared += std::count(sets[b].begin(), sets[b].end(), q);
      ++pairs;
    }
  }
  return static_cast<double>(shared) / (static_cast<double>(t) * static_cast<double>(pairs));
}

/// Random scores with both labels present; coarse scores force ties.
inline std::vector<ScoredLabel> random_scores(Rng& rng, std::size_t max_n) {
  const std::size_t n = 2 + rng.below(max_n - 1);
  const bool coarse = rng.uniform() < 0.5;
  std::vector<ScoredLabel> s(n);
  for (auto& v : s) {
    v.score = coarse ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform();
    v.label = rng.uniform() < 0.4 ? 1 : 0;
  }
  s[0].label = 1;
  s[1].label = 0;
  return s;
}

/// Between 2 and max_n students, each with T distinct questions from [0, q).
inline std::vector<std::vector<QuestionId>> random_cohort(Rng& rng, std::size_t max_n, std::int32_t q,
                                                          std::int32_t t) {
  const std::size_t n = 2 + rng.below(max_n - 1);
  std::vector<std::vector<QuestionId>> sets(n);
  std::vector<QuestionId> pool(static_cast<std::size_t>(q));
  for (std::int32_t k = 0; k < q; ++k) pool[static_cast<std::size_t>(k)] = k;
  for (auto& s : sets) {
    rng.shuffle(pool);
    s.assign(pool.begin(), pool.begin() + t);
  }
  return sets;
}

}  // namespace cbobcat::testing
