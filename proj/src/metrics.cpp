#include "cbobcat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cbobcat/errors.hpp"

namespace cbobcat {

double auc(std::span<const ScoredLabel> scores) {
  std::int64_t n_pos = 0;
  for (const auto& s : scores) n_pos += s.label ? 1 : 0;
  const auto n_neg = static_cast<std::int64_t>(scores.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("AUC needs at least one positive and one negative label");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a].score < scores[b].score; });

  // Twice the concordant count: for each positive, 2 * (#negatives below) +
  // (#negatives tied). Integer arithmetic keeps the result exact.
  std::int64_t twice_u = 0;
  std::int64_t neg_below = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::int64_t pos_tied = 0;
    std::int64_t neg_tied = 0;
    while (j < order.size() && scores[order[j]].score == scores[order[i]].score) {
      if (scores[order[j]].label) {
        ++pos_tied;
      } else {
        ++neg_tied;
      }
      ++j;
    }
    twice_u += pos_tied * (2 * neg_below + neg_tied);
    neg_below += neg_tied;
    i = j;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ExposureProfile exposure_from_administrations(std::span<const std::vector<QuestionId>> sets, std::int32_t pool_size) {
  ExposureProfile p;
  p.pool_size = pool_size;
  p.n_students = static_cast<std::int64_t>(sets.size());
  p.counts.assign(static_cast<std::size_t>(pool_size), 0);
  p.test_length = sets.empty() ? 0 : static_cast<std::int32_t>(sets.front().size());
  for (const auto& s : sets) {
    if (static_cast<std::int32_t>(s.size()) != p.test_length) throw IntegrityError("administered sets differ in length");
    for (auto q : s) {
      if (q < 0 || q >= pool_size) throw ArgumentError("administered question out of range");
      ++p.counts[static_cast<std::size_t>(q)];
    }
  }
  return p;
}

double expose_chi(const ExposureProfile& profile) {
  if (profile.test_length > profile.pool_size) throw ArgumentError("test length exceeds pool size");
  if (profile.n_students <= 0) throw UndefinedMetricError("exposure of an empty cohort");
  if (profile.test_length <= 0) throw UndefinedMetricError("exposure of zero-length tests");
  const double n = static_cast<double>(profile.n_students);
  const double mean_rate = static_cast<double>(profile.test_length) / static_cast<double>(profile.pool_size);
  double chi = 0.0;
  for (auto c : profile.counts) {
    const double d = static_cast<double>(c) / n - mean_rate;
    chi += d * d;
  }
  return chi / mean_rate;
}

double overlap_mu(std::span<const std::vector<QuestionId>> sets, std::int32_t test_length) {
  if (sets.size() < 2) throw UndefinedMetricError("test overlap needs at least two students");
  if (test_length <= 0) throw UndefinedMetricError("test overlap of zero-length tests");
  std::int32_t max_id = 0;
  for (const auto& s : sets) {
    if (static_cast<std::int32_t>(s.size()) != test_length) {
      throw IntegrityError("administered set of size " + std::to_string(s.size()) + ", expected " +
                           std::to_string(test_length));
    }
    for (auto q : s) {
      if (q < 0) throw ArgumentError("negative question id");
      max_id = std::max(max_id, q);
    }
  }
  std::vector<std::int64_t> counts(static_cast<std::size_t>(max_id) + 1, 0);
  for (const auto& s : sets) {
    for (auto q : s) ++counts[static_cast<std::size_t>(q)];
  }
  std::int64_t shared = 0;
  for (auto c : counts) shared += c * (c - 1) / 2;
  const auto n = static_cast<std::int64_t>(sets.size());
  const auto pairs = n * (n - 1) / 2;
  return static_cast<double>(shared) / (static_cast<double>(test_length) * static_cast<double>(pairs));
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ArgumentError("spearman needs two equal-length series of size >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < rx.size(); ++k) {
    sxy += (rx[k] - mx) * (ry[k] - my);
    sxx += (rx[k] - mx) * (rx[k] - mx);
    syy += (ry[k] - my) * (ry[k] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetricError("spearman of a constant series");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace cbobcat
