#include "cbobcat/policy.hpp"

#include <algorithm>
#include <cmath>

#include "cbobcat/errors.hpp"

namespace cbobcat {

PolicyParams::PolicyParams(std::int32_t q, std::int32_t h, std::uint64_t seed, bool zero)
    : num_questions(q), hidden(h) {
  if (q <= 0 || h <= 0) throw ArgumentError("policy dimensions must be positive");
  const auto nq = static_cast<std::size_t>(q);
  const auto nh = static_cast<std::size_t>(h);
  w1.assign(nh * nq, 0.0);
  b1.assign(nh, 0.0);
  w2.assign(nq * nh, 0.0);
  b2.assign(nq, 0.0);
  if (zero) return;
  Rng rng(derive_seed(seed, {0x9011C7}));
  const double limit = std::sqrt(6.0 / static_cast<double>(nq + nh));
  for (auto& w : w1) w = (2.0 * rng.uniform() - 1.0) * limit;
  for (auto& w : w2) w = (2.0 * rng.uniform() - 1.0) * limit;
}

std::vector<ParamBlock> PolicyParams::blocks() { return {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}}; }

std::vector<ConstParamBlock> PolicyParams::blocks() const {
  return {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}};
}

std::vector<double> forward_logits(const PolicyParams& phi, std::span<const double> x) {
  const auto nq = static_cast<std::size_t>(phi.num_questions);
  const auto nh = static_cast<std::size_t>(phi.hidden);
  if (x.size() != nq) throw ArgumentError("policy input length mismatch");
  std::vector<double> hidden(phi.b1);
  for (std::size_t c = 0; c < nq; ++c) {
    if (x[c] == 0.0) continue;
    for (std::size_t r = 0; r < nh; ++r) hidden[r] += phi.w1[r * nq + c] * x[c];
  }
  for (auto& v : hidden) v = std::tanh(v);
  std::vector<double> logits(phi.b2);
  for (std::size_t q = 0; q < nq; ++q) {
    const double* row = phi.w2.data() + q * nh;
    double s = 0.0;
    for (std::size_t r = 0; r < nh; ++r) s += row[r] * hidden[r];
    logits[q] += s;
    if (!std::isfinite(logits[q])) throw NumericError("non-finite policy logit");
  }
  return logits;
}

MaskedCategorical masked_softmax(std::span<const double> logits, std::span<const std::uint8_t> mask) {
  if (logits.size() != mask.size()) throw ArgumentError("mask length mismatch");
  MaskedCategorical dist;
  dist.logits.assign(logits.begin(), logits.end());
  dist.mask.assign(mask.begin(), mask.end());
  dist.probs.assign(logits.size(), 0.0);
  double zmax = -HUGE_VAL;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (mask[k]) zmax = std::max(zmax, logits[k]);
  }
  if (zmax == -HUGE_VAL) throw StateError("every question is masked");
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (!mask[k]) continue;
    dist.probs[k] = std::exp(logits[k] - zmax);
    total += dist.probs[k];
  }
  for (auto& p : dist.probs) p /= total;
  return dist;
}

double entropy(const MaskedCategorical& dist) {
  double h = 0.0;
  for (std::size_t k = 0; k < dist.probs.size(); ++k) {
    const double p = dist.probs[k];
    if (dist.mask[k] && p > 0.0) h -= p * std::log(p);
  }
  return h;
}

std::vector<double> draw_gumbels(std::span<const std::uint8_t> mask, Rng& rng) {
  std::vector<double> g(mask.size(), 0.0);
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (mask[k]) g[k] = -std::log(-std::log(rng.uniform_open()));
  }
  return g;
}

QuestionId masked_argmax(std::span<const double> values, std::span<const std::uint8_t> mask) {
  QuestionId best = -1;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!mask[k]) continue;
    if (best < 0 || values[k] > values[static_cast<std::size_t>(best)]) best = static_cast<QuestionId>(k);
  }
  if (best < 0) throw StateError("no available question");
  return best;
}

GumbelSample gumbel_softmax_from_noise(const MaskedCategorical& dist, std::span<const double> gumbels, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("temperature must be positive");
  if (gumbels.size() != dist.logits.size()) throw ArgumentError("noise length mismatch");
  // log p differs from the logits by a constant that cancels in the softmax.
  std::vector<double> perturbed(dist.logits.size(), 0.0);
  for (std::size_t k = 0; k < perturbed.size(); ++k) {
    if (dist.mask[k]) perturbed[k] = (dist.logits[k] + gumbels[k]) / tau;
  }
  GumbelSample s;
  s.soft = masked_softmax(perturbed, dist.mask).probs;
  s.index = masked_argmax(s.soft, dist.mask);
  s.hard.assign(s.soft.size(), 0.0);
  s.hard[static_cast<std::size_t>(s.index)] = 1.0;
  return s;
}

GumbelSample gumbel_softmax_sample(const MaskedCategorical& dist, double tau, Rng& rng) {
  return gumbel_softmax_from_noise(dist, draw_gumbels(dist.mask, rng), tau);
}

Selection select_next(const PolicyParams& phi, const EpisodeState& state, std::span<const std::uint8_t> available,
                      double tau, Rng& rng, SelectionMode mode) {
  if (std::none_of(available.begin(), available.end(), [](std::uint8_t m) { return m != 0; })) {
    throw StateError("no available question for student " + std::to_string(state.student));
  }
  const auto dist = masked_softmax(forward_logits(phi, encode_policy_input(state, phi.num_questions)), available);
  if (mode == SelectionMode::greedy) return {masked_argmax(dist.probs, dist.mask), {}};
  auto sample = gumbel_softmax_sample(dist, tau, rng);
  return {sample.index, std::move(sample.soft)};
}

// ---------------------------------------------------------------------------

PolicyVars policy_on_tape(ad::Tape& tape, const PolicyParams& phi) {
  return {phi.num_questions, phi.hidden, tape.variable(phi.w1), tape.variable(phi.b1), tape.variable(phi.w2),
          tape.variable(phi.b2)};
}

PolicyVars policy_from_flat(const PolicyParams& shape_source, const ad::Var& flat, std::size_t offset) {
  auto& tape = flat.tape();
  PolicyVars v;
  v.num_questions = shape_source.num_questions;
  v.hidden = shape_source.hidden;
  v.w1 = tape.slice(flat, offset, shape_source.w1.size());
  offset += shape_source.w1.size();
  v.b1 = tape.slice(flat, offset, shape_source.b1.size());
  offset += shape_source.b1.size();
  v.w2 = tape.slice(flat, offset, shape_source.w2.size());
  offset += shape_source.w2.size();
  v.b2 = tape.slice(flat, offset, shape_source.b2.size());
  return v;
}

std::vector<double> flatten_gradient(const PolicyVars& vars, const ad::Gradients& grads) {
  std::vector<double> out;
  for (const auto* v : {&vars.w1, &vars.b1, &vars.w2, &vars.b2}) {
    const auto g = grads.view(*v);
    if (g.empty()) {
      out.insert(out.end(), v->size(), 0.0);
    } else {
      out.insert(out.end(), g.begin(), g.end());
    }
  }
  return out;
}

ad::Var logits_on_tape(const PolicyVars& vars, const ad::Var& input_vec) {
  auto& tape = input_vec.tape();
  const auto hidden = tape.tanh(tape.matvec(vars.w1, input_vec, vars.hidden) + vars.b1);
  return tape.matvec(vars.w2, hidden, vars.num_questions) + vars.b2;
}

}  // namespace cbobcat
