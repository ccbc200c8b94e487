#pragma once

// Classical CAT baselines over a fixed 1PL model: maximum Fisher information
// selection with MAP ability updates (IRT-Active) and uniform random
// selection (IRT-Random).

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "cbobcat/data.hpp"
#include "cbobcat/response_model.hpp"
#include "cbobcat/rng.hpp"

namespace cbobcat {

struct MapConfig {
  double prior_mean = 0.0;
  double precision = 1.0;
  std::int32_t max_iterations = 100;
  double tolerance = 1e-10;
};

struct FitConfig {
  std::int32_t max_iterations = 500;
  double tolerance = 1e-6;
  double difficulty_l2 = 1e-3;
  double ability_precision = 1.0;
};

struct IrtFit {
  IrtParams params;
  std::vector<double> abilities;  // indexed like the student list passed in
  bool converged = false;
  double gradient_norm = 0.0;
  std::int32_t iterations = 0;
};

/// Penalized joint maximum likelihood by alternating per-coordinate Newton
/// ascent on abilities and difficulties. The returned prior mean is 0.
/// Writes a warning to `warnings` (default std::clog) if not converged.
IrtFit fit_irt(const ResponseDataset& ds, std::span<const StudentId> students, const FitConfig& cfg = {},
               std::ostream* warnings = nullptr);

/// argmin_theta sum bce(y, sigmoid(theta - b_q)) + (rho / 2)(theta - mu)^2 by
/// damped Newton iteration.
Ability map_estimate_theta(const IrtParams& params, std::span<const Response> responses, const MapConfig& cfg = {});

/// Fisher information p(1 - p) of question q at ability theta.
double fisher_information(const IrtParams& params, double theta, QuestionId q);

/// Available question of maximum information; ties go to the lowest index.
QuestionId select_active(const IrtParams& params, const Ability& theta, std::span<const std::uint8_t> available);

/// Uniform over available questions.
QuestionId select_random(std::span<const std::uint8_t> available, Rng& rng);

}  // namespace cbobcat
