#include "cbobcat/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "cbobcat/errors.hpp"

namespace cbobcat {

namespace {

double clamp_step(double step) { return std::clamp(step, -1.0, 1.0); }

}  // namespace

IrtFit fit_irt(const ResponseDataset& ds, std::span<const StudentId> students, const FitConfig& cfg,
               std::ostream* warnings) {
  if (students.empty()) throw ArgumentError("fit_irt: no students");
  const auto nq = static_cast<std::size_t>(ds.num_questions());
  IrtFit fit;
  fit.params = IrtParams(ds.num_questions());
  fit.abilities.assign(students.size(), 0.0);
  auto& b = fit.params.difficulties;

  std::vector<double> grad_b(nq);
  std::vector<double> hess_b(nq);
  for (fit.iterations = 0; fit.iterations < cfg.max_iterations; ++fit.iterations) {
    double max_grad = 0.0;

    // Ability step: one Newton update per student given the difficulties.
    for (std::size_t i = 0; i < students.size(); ++i) {
      double& theta = fit.abilities[i];
      double g = -cfg.ability_precision * theta;
      double h = -cfg.ability_precision;
      for (const auto& r : ds.responses_of(students[i])) {
        const double p = ad::stable_sigmoid(theta - b[static_cast<std::size_t>(r.question)]);
        g += r.correct - p;
        h -= p * (1.0 - p);
      }
      max_grad = std::max(max_grad, std::abs(g));
      theta -= clamp_step(g / h);
    }

    // Difficulty step given the abilities.
    for (std::size_t j = 0; j < nq; ++j) {
      grad_b[j] = -cfg.difficulty_l2 * b[j];
      hess_b[j] = -cfg.difficulty_l2;
    }
    for (std::size_t i = 0; i < students.size(); ++i) {
      for (const auto& r : ds.responses_of(students[i])) {
        const auto j = static_cast<std::size_t>(r.question);
        const double p = ad::stable_sigmoid(fit.abilities[i] - b[j]);
        grad_b[j] += p - r.correct;
        hess_b[j] -= p * (1.0 - p);
      }
    }
    for (std::size_t j = 0; j < nq; ++j) {
      max_grad = std::max(max_grad, std::abs(grad_b[j]));
      b[j] -= clamp_step(grad_b[j] / hess_b[j]);
    }

    fit.gradient_norm = max_grad;
    if (max_grad < cfg.tolerance) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) {
    auto& out = warnings ? *warnings : std::clog;
    out << "warning: fit_irt did not converge after " << fit.iterations << " iterations (final gradient norm "
        << fit.gradient_norm << ")\n";
  }
  fit.params.prior_mean = 0.0;
  return fit;
}

Ability map_estimate_theta(const IrtParams& params, std::span<const Response> responses, const MapConfig& cfg) {
  if (cfg.precision < 0.0) throw ArgumentError("MAP precision must be non-negative");
  if (!(cfg.tolerance > 0.0)) throw ArgumentError("MAP tolerance must be positive");
  for (const auto& r : responses) {
    if (r.question < 0 || r.question >= params.num_questions()) throw ArgumentError("response question out of range");
  }
  double theta = cfg.prior_mean;
  for (std::int32_t it = 0; it < cfg.max_iterations; ++it) {
    // Gradient and curvature of the negative log posterior.
    double g = cfg.precision * (theta - cfg.prior_mean);
    double h = cfg.precision;
    for (const auto& r : responses) {
      const double p = ad::stable_sigmoid(theta - params.difficulties[static_cast<std::size_t>(r.question)]);
      g += p - r.correct;
      h += p * (1.0 - p);
    }
    if (std::abs(g) < cfg.tolerance || h <= 0.0) break;
    theta -= clamp_step(g / h);
  }
  return Ability::scalar(theta);
}

double fisher_information(const IrtParams& params, double theta, QuestionId q) {
  if (q < 0 || q >= params.num_questions()) throw ArgumentError("question id out of range");
  // Evaluated at -|theta - b| so the value is exactly symmetric in the offset.
  const double s = ad::stable_sigmoid(-std::abs(theta - params.difficulties[static_cast<std::size_t>(q)]));
  return s * (1.0 - s);
}

QuestionId select_active(const IrtParams& params, const Ability& theta, std::span<const std::uint8_t> available) {
  if (theta.value.size() != 1) throw ArgumentError("IRT ability must be scalar");
  if (available.size() != static_cast<std::size_t>(params.num_questions())) {
    throw ArgumentError("availability mask length mismatch");
  }
  QuestionId best = -1;
  double best_info = -1.0;
  for (std::size_t q = 0; q < available.size(); ++q) {
    if (!available[q]) continue;
    const double info = fisher_information(params, theta.value[0], static_cast<QuestionId>(q));
    if (info > best_info) {
      best_info = info;
      best = static_cast<QuestionId>(q);
    }
  }
  if (best < 0) throw StateError("no available question");
  return best;
}

QuestionId select_random(std::span<const std::uint8_t> available, Rng& rng) {
  std::vector<QuestionId> candidates;
  for (std::size_t q = 0; q < available.size(); ++q) {
    if (available[q]) candidates.push_back(static_cast<QuestionId>(q));
  }
  if (candidates.empty()) throw StateError("no available question");
  return candidates[static_cast<std::size_t>(rng.below(candidates.size()))];
}

}  // namespace cbobcat
