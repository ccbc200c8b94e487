#pragma once

// Bilevel training of the selection policy (phi) and the response model
// (gamma). For each student the policy administers T questions from the
// student's inner pool, the ability is adapted by K unrolled gradient steps
// on the administered responses, and the outer loss is the held-out meta
// cross-entropy minus lambda times the summed selection entropies.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cbobcat/autodiff.hpp"
#include "cbobcat/data.hpp"
#include "cbobcat/metrics.hpp"
#include "cbobcat/policy.hpp"
#include "cbobcat/response_model.hpp"
#include "cbobcat/rng.hpp"

namespace cbobcat {

enum class ModelVariant : std::uint8_t { irt, neural };

std::string_view to_string(ModelVariant v);
ModelVariant variant_from_string(std::string_view text);

struct TrainConfig {
  double lambda = 0.0;       // entropy weight
  double tau = 1.0;          // Gumbel-Softmax temperature
  std::int32_t test_length = 10;
  std::int32_t inner_steps = 5;
  double inner_lr = 0.1;
  double rho = 1.0;          // proximal coefficient
  double outer_lr = 1e-3;
  std::int32_t batch_size = 128;
  std::int32_t epochs = 50;
  std::uint64_t seed = 0;
  ModelVariant variant = ModelVariant::irt;
  std::int32_t policy_hidden = 256;
  std::int32_t ability_dim = 4;
  std::int32_t model_hidden = 64;
  std::int32_t workers = 1;

  /// Throws ArgumentError on out-of-range values.
  void validate() const;
};

struct TrainState {
  PolicyParams phi;
  ResponseModelParams gamma;
  std::int32_t epoch = 0;
  std::vector<double> outer_loss_history;
  std::vector<double> val_auc_history;
};

/// Fresh parameters derived from cfg.seed.
TrainState initial_state(std::int32_t num_questions, const TrainConfig& cfg);

/// theta* after K gradient steps from the prior mean on
///   sum_t sum_k w_t[k] * bce(labels[k], g(k; theta)) + (rho / 2) ||theta - mu||^2.
/// Every step stays on the tape. Throws NumericError if theta diverges.
ad::Var inner_adapt(const ModelVars& model, std::span<const ad::Var> weights, std::span<const double> labels,
                    const TrainConfig& cfg);

struct RolloutOptions {
  SelectionMode mode = SelectionMode::stochastic;
  /// Forward pass uses the hard one-hot selection, gradients flow through
  /// the soft Gumbel weights. When false the soft weights are used directly.
  bool straight_through = true;
};

struct StudentRollout {
  ad::Var meta_loss;     // sum over the meta questions of bce
  ad::Var entropy_sum;   // H_i: sum over steps of the masked selection entropy
  ad::Var theta;
  ad::Var meta_probs;
  std::vector<double> step_entropies;
  std::vector<std::int32_t> step_candidates;  // number of selectable questions per step
  EpisodeState state;
};

/// One student's differentiable episode: T selections from `pool`, inner
/// adaptation, predictions on `meta`.
StudentRollout rollout_student(const PolicyVars& policy, const ModelVars& model, const ResponseDataset& ds,
                               StudentId student, std::span<const QuestionId> pool, std::span<const QuestionId> meta,
                               const TrainConfig& cfg, Rng& rng, RolloutOptions options = {});

/// Stream of rollout randomness for one student.
std::uint64_t student_stream(std::uint64_t rollout_seed, StudentId student);

struct OuterObjective {
  ad::Var loss;          // (1/N) sum_i [meta_i - lambda H_i]
  double mean_meta = 0.0;
  double mean_entropy = 0.0;  // mean of H_i
};

/// Whole-batch objective on a single tape. Students draw their rollout
/// noise from student_stream(rollout_seed, id).
OuterObjective outer_objective(const PolicyVars& policy, const ModelVars& model, const ResponseDataset& ds,
                               const InnerOuterPartition& partition, std::span<const StudentId> batch,
                               const TrainConfig& cfg, std::uint64_t rollout_seed, RolloutOptions options = {});

struct BatchGradient {
  double loss = 0.0;
  double mean_entropy = 0.0;  // mean of H_i / T
  std::vector<double> grad;   // policy blocks then model blocks
};

/// Per-student tapes reduced in a fixed order, so the result does not
/// depend on cfg.workers.
BatchGradient batch_gradient(const TrainState& state, const ResponseDataset& ds, const InnerOuterPartition& partition,
                             std::span<const StudentId> batch, const TrainConfig& cfg, std::uint64_t rollout_seed);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<const ParamBlock> params, std::span<const double> grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<double> m_, v_;
};

std::vector<ParamBlock> trainable_blocks(TrainState& state);

struct EpisodeOutcome {
  std::vector<QuestionId> administered;
  Ability theta;
  std::vector<ScoredLabel> meta_predictions;
  std::vector<double> step_entropies;
  std::vector<std::int32_t> step_candidates;
};

/// Non-differentiable evaluation episode of the learned policy: selections
/// are hard, the final adaptation weights each administered question by one.
EpisodeOutcome run_learned_episode(const PolicyParams& phi, const ResponseModelParams& gamma,
                                   const ResponseDataset& ds, StudentId student, std::span<const QuestionId> pool,
                                   std::span<const QuestionId> meta, const TrainConfig& cfg, Rng& rng,
                                   SelectionMode mode);

/// Pooled meta AUC of the learned method over `students` (pool = omega).
double learned_auc(const TrainState& state, const ResponseDataset& ds, const InnerOuterPartition& partition,
                   std::span<const StudentId> students, const TrainConfig& cfg, std::uint64_t eval_seed,
                   SelectionMode mode = SelectionMode::stochastic);

struct EpochLog {
  std::int32_t epoch = 0;
  double outer_loss = 0.0;
  double val_auc = 0.0;
  double mean_entropy = 0.0;
};

struct TrainResult {
  TrainState state;  // best-validation parameters
  std::vector<EpochLog> log;
  std::int32_t best_epoch = 0;
};

/// Mini-batch Adam over the training students. The dataset must carry a
/// split. Throws NumericError naming epoch and batch on divergence.
TrainResult train(const ResponseDataset& ds, const InnerOuterPartition& partition, const TrainConfig& cfg,
                  std::ostream* progress = nullptr);

/// `epoch,outer_loss,val_auc,mean_entropy`
std::string format_epoch_log(std::span<const EpochLog> log);

}  // namespace cbobcat
