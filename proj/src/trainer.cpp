#include "cbobcat/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

#include "cbobcat/errors.hpp"

namespace cbobcat {

namespace {

// Students per reduction group. Group sums are added in group order, which
// fixes the floating-point summation order independently of worker count.
constexpr std::size_t kReductionGroup = 8;

std::vector<double> pool_labels(const ResponseDataset& ds, StudentId student, std::span<const QuestionId> pool) {
  std::vector<double> labels(static_cast<std::size_t>(ds.num_questions()), 0.0);
  for (auto q : pool) {
    const auto y = ds.response(student, q);
    if (!y) {
      throw IntegrityError("student " + std::to_string(student) + " has no response to question " + std::to_string(q));
    }
    labels[static_cast<std::size_t>(q)] = *y;
  }
  return labels;
}

std::vector<double> one_hot(std::size_t n, QuestionId k) {
  std::vector<double> v(n, 0.0);
  v[static_cast<std::size_t>(k)] = 1.0;
  return v;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

template <class Fn>
void parallel_for(std::size_t n, std::int32_t workers, Fn&& fn) {
  const auto n_threads = static_cast<std::size_t>(std::max(1, workers));
  if (n_threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(n_threads, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        if (failed) return;
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::string_view to_string(ModelVariant v) { return v == ModelVariant::irt ? "irt" : "neural"; }

ModelVariant variant_from_string(std::string_view text) {
  if (text == "irt" || text == "c-biirt") return ModelVariant::irt;
  if (text == "neural" || text == "c-binn") return ModelVariant::neural;
  throw ArgumentError("unknown model variant '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ArgumentError("lambda must be a finite non-negative number");
  if (!(tau > 0.0)) throw ArgumentError("tau must be positive");
  if (test_length < 0) throw ArgumentError("test length must be non-negative");
  if (inner_steps < 0) throw ArgumentError("inner steps must be non-negative");
  if (!(inner_lr > 0.0)) throw ArgumentError("inner step size must be positive");
  if (!(rho >= 0.0)) throw ArgumentError("rho must be non-negative");
  if (!(outer_lr > 0.0)) throw ArgumentError("outer learning rate must be positive");
  if (batch_size <= 0) throw ArgumentError("batch size must be positive");
  if (epochs < 0) throw ArgumentError("epochs must be non-negative");
  if (policy_hidden <= 0 || ability_dim <= 0 || model_hidden <= 0) throw ArgumentError("layer sizes must be positive");
  if (workers <= 0) throw ArgumentError("workers must be positive");
}

TrainState initial_state(std::int32_t num_questions, const TrainConfig& cfg) {
  TrainState s;
  s.phi = PolicyParams(num_questions, cfg.policy_hidden, derive_seed(cfg.seed, {0xF1}));
  if (cfg.variant == ModelVariant::irt) {
    s.gamma = IrtParams(num_questions);
  } else {
    s.gamma = NeuralResponseParams(NeuralShape{num_questions, cfg.ability_dim, cfg.model_hidden},
                                   derive_seed(cfg.seed, {0x6A}));
  }
  return s;
}

ad::Var inner_adapt(const ModelVars& model, std::span<const ad::Var> weights, std::span<const double> labels,
                    const TrainConfig& cfg) {
  const auto mu = prior_on_tape(model);
  auto& tape = mu.tape();
  ad::Var theta = mu;
  try {
    ad::Var total_weight;
    for (std::size_t t = 0; t < weights.size(); ++t) total_weight = t == 0 ? weights[t] : total_weight + weights[t];
    for (std::int32_t k = 0; k < cfg.inner_steps; ++k) {
      auto step = tape.affine(theta - mu, cfg.rho, 0.0);
      if (!weights.empty()) step = weighted_loss_gradient(model, theta, total_weight, labels) + step;
      theta = theta - tape.affine(step, cfg.inner_lr, 0.0);
    }
  } catch (const NumericError& e) {
    throw NumericError(std::string("inner adaptation diverged (inner step size too large?): ") + e.what());
  }
  return theta;
}

std::uint64_t student_stream(std::uint64_t rollout_seed, StudentId student) {
  return derive_seed(rollout_seed, {0x57D, static_cast<std::uint64_t>(student)});
}

StudentRollout rollout_student(const PolicyVars& policy, const ModelVars& model, const ResponseDataset& ds,
                               StudentId student, std::span<const QuestionId> pool, std::span<const QuestionId> meta,
                               const TrainConfig& cfg, Rng& rng, RolloutOptions options) {
  auto& tape = policy.w1.tape();
  const auto nq = static_cast<std::size_t>(policy.num_questions);
  if (meta.empty()) throw StateError("student " + std::to_string(student) + " has an empty meta set");
  if (static_cast<std::size_t>(cfg.test_length) > pool.size()) {
    throw StateError("student " + std::to_string(student) + " has " + std::to_string(pool.size()) +
                     " available questions, test length is " + std::to_string(cfg.test_length));
  }
  std::vector<std::uint8_t> mask(nq, 0);
  for (auto q : pool) mask.at(static_cast<std::size_t>(q)) = 1;
  const auto labels = pool_labels(ds, student, pool);

  StudentRollout out;
  out.state = EpisodeState(student, policy.num_questions);
  std::vector<ad::Var> weights;
  weights.reserve(static_cast<std::size_t>(cfg.test_length));
  std::int32_t candidates = static_cast<std::int32_t>(pool.size());
  for (std::int32_t t = 0; t < cfg.test_length; ++t) {
    const auto logits = logits_on_tape(policy, tape.constant(out.state.input_vec));
    const auto probs = tape.softmax(logits, mask);
    const auto h = tape.entropy(probs);
    out.entropy_sum = t == 0 ? h : out.entropy_sum + h;
    out.step_entropies.push_back(h.value());
    out.step_candidates.push_back(candidates--);

    QuestionId chosen = -1;
    if (options.mode == SelectionMode::greedy) {
      chosen = masked_argmax(probs.values(), mask);
      weights.push_back(tape.constant(one_hot(nq, chosen)));
    } else {
      const auto noise = tape.constant(draw_gumbels(mask, rng));
      const auto soft = tape.softmax(tape.affine(logits + noise, 1.0 / cfg.tau, 0.0), mask);
      chosen = masked_argmax(soft.values(), mask);
      weights.push_back(options.straight_through ? tape.straight_through(soft, one_hot(nq, chosen)) : soft);
    }
    out.state.record(chosen, static_cast<std::uint8_t>(labels[static_cast<std::size_t>(chosen)]));
    mask[static_cast<std::size_t>(chosen)] = 0;
  }
  if (cfg.test_length == 0) out.entropy_sum = tape.constant(0.0);

  out.theta = inner_adapt(model, weights, labels, cfg);
  out.state.theta.assign(out.theta.values().begin(), out.theta.values().end());

  std::vector<double> meta_labels;
  meta_labels.reserve(meta.size());
  for (auto q : meta) {
    const auto y = ds.response(student, q);
    if (!y) throw IntegrityError("meta question without a recorded response");
    meta_labels.push_back(*y);
  }
  out.meta_probs = probs_on_tape(model, out.theta, meta);
  out.meta_loss = tape.bce(out.meta_probs, meta_labels);
  return out;
}

OuterObjective outer_objective(const PolicyVars& policy, const ModelVars& model, const ResponseDataset& ds,
                               const InnerOuterPartition& partition, std::span<const StudentId> batch,
                               const TrainConfig& cfg, std::uint64_t rollout_seed, RolloutOptions options) {
  if (batch.empty()) throw ArgumentError("empty batch");
  auto& tape = policy.w1.tape();
  ad::Var total;
  OuterObjective out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto s = static_cast<std::size_t>(batch[i]);
    Rng rng(student_stream(rollout_seed, batch[i]));
    const auto r = rollout_student(policy, model, ds, batch[i], partition.omega.at(s), partition.gamma.at(s), cfg, rng,
                                   options);
    const auto term = r.meta_loss + tape.affine(r.entropy_sum, -cfg.lambda, 0.0);
    total = i == 0 ? term : total + term;
    out.mean_meta += r.meta_loss.value();
    out.mean_entropy += r.entropy_sum.value();
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  out.loss = tape.affine(total, inv_n, 0.0);
  out.mean_meta *= inv_n;
  out.mean_entropy *= inv_n;
  if (!std::isfinite(out.loss.value())) throw NumericError("non-finite outer loss");
  return out;
}

BatchGradient batch_gradient(const TrainState& state, const ResponseDataset& ds, const InnerOuterPartition& partition,
                             std::span<const StudentId> batch, const TrainConfig& cfg, std::uint64_t rollout_seed) {
  if (batch.empty()) throw ArgumentError("empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const std::size_t n_groups = (batch.size() + kReductionGroup - 1) / kReductionGroup;

  struct GroupSum {
    double loss = 0.0;
    double entropy = 0.0;
    std::vector<double> grad;
  };
  std::vector<GroupSum> groups(n_groups);

  parallel_for(n_groups, cfg.workers, [&](std::size_t g) {
    ad::Tape tape;
    auto& acc = groups[g];
    const auto end = std::min(batch.size(), (g + 1) * kReductionGroup);
    for (std::size_t i = g * kReductionGroup; i < end; ++i) {
      tape.clear();
      const auto student = batch[i];
      const auto s = static_cast<std::size_t>(student);
      const auto pv = policy_on_tape(tape, state.phi);
      const auto mv = model_on_tape(tape, state.gamma);
      Rng rng(student_stream(rollout_seed, student));
      const auto r = rollout_student(pv, mv, ds, student, partition.omega.at(s), partition.gamma.at(s), cfg, rng);
      const auto loss = tape.affine(r.meta_loss + tape.affine(r.entropy_sum, -cfg.lambda, 0.0), inv_n, 0.0);
      const auto grads = tape.backward(loss);
      auto g_policy = flatten_gradient(pv, grads);
      const auto g_model = flatten_gradient(mv, grads);
      g_policy.insert(g_policy.end(), g_model.begin(), g_model.end());
      if (acc.grad.empty()) {
        acc.grad = std::move(g_policy);
      } else {
        for (std::size_t k = 0; k < acc.grad.size(); ++k) acc.grad[k] += g_policy[k];
      }
      acc.loss += loss.value();
      if (cfg.test_length > 0) acc.entropy += r.entropy_sum.value() / cfg.test_length * inv_n;
    }
  });

  BatchGradient out;
  out.grad = std::move(groups[0].grad);
  out.loss = groups[0].loss;
  out.mean_entropy = groups[0].entropy;
  for (std::size_t g = 1; g < n_groups; ++g) {
    for (std::size_t k = 0; k < out.grad.size(); ++k) out.grad[k] += groups[g].grad[k];
    out.loss += groups[g].loss;
    out.mean_entropy += groups[g].entropy;
  }
  return out;
}

void Adam::step(std::span<const ParamBlock> params, std::span<const double> grad) {
  std::size_t total = 0;
  for (const auto& b : params) total += b.values.size();
  if (grad.size() != total) throw ArgumentError("Adam: gradient length mismatch");
  if (m_.empty()) {
    m_.assign(total, 0.0);
    v_.assign(total, 0.0);
  }
  if (m_.size() != total) throw StateError("Adam: parameter layout changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t k = 0;
  for (const auto& b : params) {
    for (auto& x : b.values) {
      m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grad[k];
      v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grad[k] * grad[k];
      x -= lr_ * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
      ++k;
    }
  }
}

std::vector<ParamBlock> trainable_blocks(TrainState& state) {
  auto out = state.phi.blocks();
  for (auto& b : out) b.name = "policy." + b.name;
  for (auto& b : blocks(state.gamma)) out.push_back({"model." + b.name, b.values});
  return out;
}

EpisodeOutcome run_learned_episode(const PolicyParams& phi, const ResponseModelParams& gamma,
                                   const ResponseDataset& ds, StudentId student, std::span<const QuestionId> pool,
                                   std::span<const QuestionId> meta, const TrainConfig& cfg, Rng& rng,
                                   SelectionMode mode) {
  ad::Tape tape;
  const auto pv = policy_on_tape(tape, phi);
  const auto mv = model_on_tape(tape, gamma);
  const auto r = rollout_student(pv, mv, ds, student, pool, meta, cfg, rng, {mode, true});
  EpisodeOutcome out;
  out.administered = r.state.selected;
  out.theta = Ability{r.state.theta};
  out.step_entropies = r.step_entropies;
  out.step_candidates = r.step_candidates;
  const auto probs = r.meta_probs.values();
  for (std::size_t k = 0; k < meta.size(); ++k) {
    out.meta_predictions.push_back({probs[k], *ds.response(student, meta[k])});
  }
  return out;
}

double learned_auc(const TrainState& state, const ResponseDataset& ds, const InnerOuterPartition& partition,
                   std::span<const StudentId> students, const TrainConfig& cfg, std::uint64_t eval_seed,
                   SelectionMode mode) {
  std::vector<ScoredLabel> scores;
  for (auto s : students) {
    Rng rng(student_stream(eval_seed, s));
    const auto idx = static_cast<std::size_t>(s);
    const auto ep = run_learned_episode(state.phi, state.gamma, ds, s, partition.omega.at(idx),
                                        partition.gamma.at(idx), cfg, rng, mode);
    scores.insert(scores.end(), ep.meta_predictions.begin(), ep.meta_predictions.end());
  }
  return auc(scores);
}

TrainResult train(const ResponseDataset& ds, const InnerOuterPartition& partition, const TrainConfig& cfg,
                  std::ostream* progress) {
  cfg.validate();
  if (!ds.has_split()) throw StateError("train() needs a dataset with a student split");
  const auto train_students = ds.students_in(Split::train);
  const auto val_students = ds.students_in(Split::validation);
  if (train_students.empty()) throw ArgumentError("no training students");
  for (const auto* group : {&train_students, &val_students}) {
    for (auto s : *group) {
      const auto n = partition.omega.at(static_cast<std::size_t>(s)).size();
      if (static_cast<std::size_t>(cfg.test_length) > n) {
        throw ArgumentError("test length " + std::to_string(cfg.test_length) + " exceeds the " + std::to_string(n) +
                            " inner-pool questions of student " + ds.student_label(s));
      }
    }
  }

  TrainResult result;
  TrainState state = initial_state(ds.num_questions(), cfg);
  TrainState best = state;
  double best_auc = -std::numeric_limits<double>::infinity();
  Adam adam(cfg.outer_lr);
  const auto val_seed = derive_seed(cfg.seed, {0x7A1});
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (std::int32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = train_students;
    Rng shuffler(derive_seed(cfg.seed, {0xE90C, static_cast<std::uint64_t>(epoch)}));
    shuffler.shuffle(order);

    double loss_sum = 0.0;
    double entropy_sum = 0.0;
    std::size_t b = 0;
    for (std::size_t start = 0; start < order.size(); start += batch, ++b) {
      const std::span<const StudentId> members(order.data() + start, std::min(batch, order.size() - start));
      const auto where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
      BatchGradient g;
      try {
        g = batch_gradient(state, ds, partition, members, cfg,
                           derive_seed(cfg.seed, {0xBA7C, static_cast<std::uint64_t>(epoch), b}));
      } catch (const NumericError& e) {
        throw NumericError("training diverged at " + where + ": " + e.what());
      }
      if (!std::isfinite(g.loss) || !all_finite(g.grad)) {
        throw NumericError("training diverged at " + where + ": non-finite loss or gradient");
      }
      auto params = trainable_blocks(state);
      adam.step(params, g.grad);
      for (const auto& p : params) {
        if (!all_finite(p.values)) throw NumericError("training diverged at " + where + ": non-finite " + p.name);
      }
      loss_sum += g.loss * static_cast<double>(members.size());
      entropy_sum += g.mean_entropy * static_cast<double>(members.size());
    }

    EpochLog row;
    row.epoch = epoch;
    row.outer_loss = loss_sum / static_cast<double>(order.size());
    row.mean_entropy = entropy_sum / static_cast<double>(order.size());
    row.val_auc = val_students.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : learned_auc(state, ds, partition, val_students, cfg, val_seed);
    state.epoch = epoch;
    state.outer_loss_history.push_back(row.outer_loss);
    state.val_auc_history.push_back(row.val_auc);
    result.log.push_back(row);
    if (progress) {
      *progress << "epoch " << epoch << " loss " << row.outer_loss << " val_auc " << row.val_auc << " entropy "
                << row.mean_entropy << '\n';
    }
    if (val_students.empty() || row.val_auc > best_auc) {
      best_auc = row.val_auc;
      best = state;
      result.best_epoch = epoch;
    }
  }

  result.state = std::move(best);
  result.state.outer_loss_history = state.outer_loss_history;
  result.state.val_auc_history = state.val_auc_history;
  result.state.epoch = state.epoch;
  return result;
}

std::string format_epoch_log(std::span<const EpochLog> log) {
  std::ostringstream out;
  out.precision(10);
  out << "epoch,outer_loss,val_auc,mean_entropy\n";
  for (const auto& r : log) out << r.epoch << ',' << r.outer_loss << ',' << r.val_auc << ',' << r.mean_entropy << '\n';
  return out.str();
}

}  // namespace cbobcat
