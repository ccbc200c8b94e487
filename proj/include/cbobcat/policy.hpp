#pragma once

// Stochastic question-selection policy: a one-hidden-layer network from the
// encoded response history to logits over the question pool, masked to the
// questions still available, sampled with Gumbel noise.

#include <cstdint>
#include <span>
#include <vector>

#include "cbobcat/autodiff.hpp"
#include "cbobcat/data.hpp"
#include "cbobcat/response_model.hpp"
#include "cbobcat/rng.hpp"

namespace cbobcat {

struct PolicyParams {
  std::int32_t num_questions = 0;
  std::int32_t hidden = 256;
  std::vector<double> w1;  // hidden x Q
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // Q x hidden
  std::vector<double> b2;  // Q

  PolicyParams() = default;
  /// Scaled-uniform weights, zero biases. Pass seed 0 with `zero = true`
  /// for an all-zero network.
  PolicyParams(std::int32_t num_questions, std::int32_t hidden, std::uint64_t seed, bool zero = false);

  std::vector<ParamBlock> blocks();
  std::vector<ConstParamBlock> blocks() const;
};

/// Logits for one history encoding. Throws NumericError on non-finite output.
std::vector<double> forward_logits(const PolicyParams& phi, std::span<const double> input_vec);

struct MaskedCategorical {
  std::vector<double> logits;
  std::vector<std::uint8_t> mask;  // 1 = selectable
  std::vector<double> probs;
};

/// Softmax over unmasked entries with max subtraction; masked probs are 0.
/// Throws StateError when every entry is masked.
MaskedCategorical masked_softmax(std::span<const double> logits, std::span<const std::uint8_t> mask);

/// -sum p log p over unmasked entries.
double entropy(const MaskedCategorical& dist);

struct GumbelSample {
  std::vector<double> soft;
  std::vector<double> hard;
  QuestionId index = -1;
};

/// Gumbel(0, 1) noise on unmasked entries, 0 on masked ones.
std::vector<double> draw_gumbels(std::span<const std::uint8_t> mask, Rng& rng);

/// soft = softmax((log p + g) / tau) over unmasked entries, hard = one-hot of
/// argmax(soft) with ties to the lowest index.
GumbelSample gumbel_softmax_from_noise(const MaskedCategorical& dist, std::span<const double> gumbels, double tau);
GumbelSample gumbel_softmax_sample(const MaskedCategorical& dist, double tau, Rng& rng);

/// Lowest index of the maximum over unmasked entries.
QuestionId masked_argmax(std::span<const double> values, std::span<const std::uint8_t> mask);

enum class SelectionMode : std::uint8_t { stochastic, greedy };

struct Selection {
  QuestionId question = -1;
  std::vector<double> soft;  // Gumbel soft weights; empty in greedy mode
};

/// Picks the next question for `state` among `available`.
Selection select_next(const PolicyParams& phi, const EpisodeState& state, std::span<const std::uint8_t> available,
                      double tau, Rng& rng, SelectionMode mode);

// ---------------------------------------------------------------------------

struct PolicyVars {
  std::int32_t num_questions = 0;
  std::int32_t hidden = 0;
  ad::Var w1, b1, w2, b2;
};

PolicyVars policy_on_tape(ad::Tape& tape, const PolicyParams& phi);
PolicyVars policy_from_flat(const PolicyParams& shape_source, const ad::Var& flat, std::size_t offset);
std::vector<double> flatten_gradient(const PolicyVars& vars, const ad::Gradients& grads);

ad::Var logits_on_tape(const PolicyVars& vars, const ad::Var& input_vec);

}  // namespace cbobcat
