#pragma once

// Accuracy and security metrics for a cohort of adaptive tests.

#include <cstdint>
#include <span>
#include <vector>

#include "cbobcat/data.hpp"

namespace cbobcat {

struct ScoredLabel {
  double score = 0.0;
  std::uint8_t label = 0;
};

/// Mann-Whitney AUC with half credit for ties, O(n log n).
/// Throws UndefinedMetricError unless both classes are present.
double auc(std::span<const ScoredLabel> scores);

/// Per-question administration counts over an evaluation cohort.
struct ExposureProfile {
  std::vector<std::int64_t> counts;
  std::int64_t n_students = 0;
  std::int32_t test_length = 0;
  std::int32_t pool_size = 0;
};

/// c_j = number of administered sets containing j. Sets must hold distinct
/// ids in [0, pool_size) and share one length.
ExposureProfile exposure_from_administrations(std::span<const std::vector<QuestionId>> sets, std::int32_t pool_size);

/// Scaled chi-square of exposure rates r_j = c_j / N against r = T / Q:
/// sum_j (r_j - r)^2 / r.
double expose_chi(const ExposureProfile& profile);

/// Mean over unordered student pairs of |S_a ∩ S_b| / T, via the per-question
/// count identity sum_j c_j (c_j - 1) / 2 / (T N (N - 1) / 2).
double overlap_mu(std::span<const std::vector<QuestionId>> sets, std::int32_t test_length);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct TradeoffPoint {
  double lambda = 0.0;
  double auc = 0.0;
  double expose_chi = 0.0;
  double overlap_mu = 0.0;
};

}  // namespace cbobcat
