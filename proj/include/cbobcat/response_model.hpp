#pragma once

// Global response model g(j; theta): probability that a student with ability
// theta answers question j correctly. Two variants share one interface: a 1PL
// (Rasch) model and a one-hidden-layer network over a latent ability vector.

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cbobcat/autodiff.hpp"
#include "cbobcat/data.hpp"

namespace cbobcat {

/// Named view over a contiguous parameter array, used by the optimizer and
/// the checkpoint writer.
struct ParamBlock {
  std::string name;
  std::span<double> values;
};

struct ConstParamBlock {
  std::string name;
  std::span<const double> values;
};

/// Ability estimate; length 1 for the IRT variant, length d for the neural one.
struct Ability {
  std::vector<double> value;

  static Ability scalar(double v) { return Ability{{v}}; }
};

/// 1PL parameters: one difficulty per question and the ability prior mean.
struct IrtParams {
  std::vector<double> difficulties;
  double prior_mean = 0.0;

  IrtParams() = default;
  explicit IrtParams(std::int32_t num_questions) : difficulties(static_cast<std::size_t>(num_questions), 0.0) {}

  std::int32_t num_questions() const { return static_cast<std::int32_t>(difficulties.size()); }
  std::vector<ParamBlock> blocks();
  std::vector<ConstParamBlock> blocks() const;
};

struct NeuralShape {
  std::int32_t num_questions = 0;
  std::int32_t ability_dim = 4;
  std::int32_t hidden = 64;
};

/// ability (d) -> tanh hidden (h) -> Q correctness logits.
struct NeuralResponseParams {
  NeuralShape shape;
  std::vector<double> w1;  // h x d, row-major
  std::vector<double> b1;  // h
  std::vector<double> w2;  // Q x h, row-major
  std::vector<double> b2;  // Q
  std::vector<double> prior_mean;  // d

  NeuralResponseParams() = default;
  /// Scaled-uniform initialization; prior mean starts at zero.
  NeuralResponseParams(NeuralShape shape, std::uint64_t seed);

  std::int32_t num_questions() const { return shape.num_questions; }
  std::vector<ParamBlock> blocks();
  std::vector<ConstParamBlock> blocks() const;
};

using ResponseModelParams = std::variant<IrtParams, NeuralResponseParams>;

std::int32_t num_questions(const ResponseModelParams& params);
Ability prior_ability(const ResponseModelParams& params);
std::vector<ParamBlock> blocks(ResponseModelParams& params);
std::vector<ConstParamBlock> blocks(const ResponseModelParams& params);

double predict_prob(const IrtParams& params, const Ability& theta, QuestionId q);
double predict_prob(const NeuralResponseParams& params, const Ability& theta, QuestionId q);
double predict_prob(const ResponseModelParams& params, const Ability& theta, QuestionId q);

/// Probabilities for every question in the pool.
std::vector<double> predict_all(const ResponseModelParams& params, const Ability& theta);

/// -[y log p + (1-y) log(1-p)] with p clamped to [1e-7, 1 - 1e-7].
double bce_loss(std::uint8_t y, double p);

/// (rho / 2) * ||theta - prior_mean||^2.
double prox_penalty(const Ability& theta, const Ability& prior_mean, double rho);

// ---------------------------------------------------------------------------
// Tape-side model. Parameters enter a tape as leaves (or slices of a leaf) so
// gradients with respect to them can be read back after backward().

struct IrtVars {
  ad::Var difficulties;
  ad::Var prior_mean;
};

struct NeuralVars {
  NeuralShape shape;
  ad::Var w1, b1, w2, b2, prior_mean;
};

using ModelVars = std::variant<IrtVars, NeuralVars>;

/// Adds the parameters as differentiable leaves, in blocks() order.
ModelVars model_on_tape(ad::Tape& tape, const ResponseModelParams& params);
/// Same but carves the blocks out of one flat leaf starting at `offset`.
ModelVars model_from_flat(const ResponseModelParams& shape_source, const ad::Var& flat, std::size_t offset);
/// Gathers each block's gradient (zeros if unreached), in blocks() order.
std::vector<double> flatten_gradient(const ModelVars& vars, const ad::Gradients& grads);

ad::Var prior_on_tape(const ModelVars& vars);

/// Correctness probabilities of the given questions at ability `theta`.
ad::Var probs_on_tape(const ModelVars& vars, const ad::Var& theta, std::span<const QuestionId> questions);

/// Gradient with respect to theta of sum_q weights[q] * bce(labels[q], g(q; theta))
/// written out as tape operations, so the inner update stays differentiable.
/// `weights` and `labels` have length Q.
ad::Var weighted_loss_gradient(const ModelVars& vars, const ad::Var& theta, const ad::Var& weights,
                               std::span<const double> labels);

}  // namespace cbobcat
