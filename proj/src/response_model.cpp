#include "cbobcat/response_model.hpp"

#include <algorithm>
#include <cmath>

#include "cbobcat/errors.hpp"
#include "cbobcat/rng.hpp"

namespace cbobcat {

namespace {

constexpr double kProbFloor = 1e-7;

void fill_uniform(std::vector<double>& v, double limit, Rng& rng) {
  for (auto& x : v) x = (2.0 * rng.uniform() - 1.0) * limit;
}

void check_question(QuestionId q, std::int32_t num_questions) {
  if (q < 0 || q >= num_questions) throw ArgumentError("question id " + std::to_string(q) + " out of range");
}

std::vector<double> neural_logits(const NeuralResponseParams& p, std::span<const double> theta) {
  const auto d = static_cast<std::size_t>(p.shape.ability_dim);
  const auto h = static_cast<std::size_t>(p.shape.hidden);
  const auto nq = static_cast<std::size_t>(p.shape.num_questions);
  if (theta.size() != d) throw ArgumentError("ability dimension mismatch");
  std::vector<double> hidden(h);
  for (std::size_t r = 0; r < h; ++r) {
    double s = p.b1[r];
    for (std::size_t c = 0; c < d; ++c) s += p.w1[r * d + c] * theta[c];
    hidden[r] = std::tanh(s);
  }
  std::vector<double> z(nq);
  for (std::size_t q = 0; q < nq; ++q) {
    double s = p.b2[q];
    for (std::size_t c = 0; c < h; ++c) s += p.w2[q * h + c] * hidden[c];
    z[q] = s;
  }
  return z;
}

}  // namespace

std::vector<ParamBlock> IrtParams::blocks() {
  return {{"difficulties", difficulties}, {"prior_mean", std::span<double>(&prior_mean, 1)}};
}

std::vector<ConstParamBlock> IrtParams::blocks() const {
  return {{"difficulties", difficulties}, {"prior_mean", std::span<const double>(&prior_mean, 1)}};
}

NeuralResponseParams::NeuralResponseParams(NeuralShape s, std::uint64_t seed) : shape(s) {
  if (s.num_questions <= 0 || s.ability_dim <= 0 || s.hidden <= 0) throw ArgumentError("invalid network shape");
  const auto d = static_cast<std::size_t>(s.ability_dim);
  const auto h = static_cast<std::size_t>(s.hidden);
  const auto nq = static_cast<std::size_t>(s.num_questions);
  w1.resize(h * d);
  b1.assign(h, 0.0);
  w2.resize(nq * h);
  b2.assign(nq, 0.0);
  prior_mean.assign(d, 0.0);
  Rng rng(derive_seed(seed, {0xAE7}));
  fill_uniform(w1, std::sqrt(6.0 / static_cast<double>(d + h)), rng);
  fill_uniform(w2, std::sqrt(6.0 / static_cast<double>(h + nq)), rng);
}

std::vector<ParamBlock> NeuralResponseParams::blocks() {
  return {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}, {"prior_mean", prior_mean}};
}

std::vector<ConstParamBlock> NeuralResponseParams::blocks() const {
  return {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}, {"prior_mean", prior_mean}};
}

std::int32_t num_questions(const ResponseModelParams& params) {
  return std::visit([](const auto& p) { return p.num_questions(); }, params);
}

Ability prior_ability(const ResponseModelParams& params) {
  if (const auto* irt = std::get_if<IrtParams>(&params)) return Ability::scalar(irt->prior_mean);
  return Ability{std::get<NeuralResponseParams>(params).prior_mean};
}

std::vector<ParamBlock> blocks(ResponseModelParams& params) {
  return std::visit([](auto& p) { return p.blocks(); }, params);
}

std::vector<ConstParamBlock> blocks(const ResponseModelParams& params) {
  return std::visit([](const auto& p) { return p.blocks(); }, params);
}

double predict_prob(const IrtParams& params, const Ability& theta, QuestionId q) {
  check_question(q, params.num_questions());
  if (theta.value.size() != 1) throw ArgumentError("IRT ability must be scalar");
  return ad::stable_sigmoid(theta.value[0] - params.difficulties[static_cast<std::size_t>(q)]);
}

double predict_prob(const NeuralResponseParams& params, const Ability& theta, QuestionId q) {
  check_question(q, params.num_questions());
  return ad::stable_sigmoid(neural_logits(params, theta.value)[static_cast<std::size_t>(q)]);
}

double predict_prob(const ResponseModelParams& params, const Ability& theta, QuestionId q) {
  return std::visit([&](const auto& p) { return predict_prob(p, theta, q); }, params);
}

std::vector<double> predict_all(const ResponseModelParams& params, const Ability& theta) {
  if (const auto* irt = std::get_if<IrtParams>(&params)) {
    if (theta.value.size() != 1) throw ArgumentError("IRT ability must be scalar");
    std::vector<double> out(irt->difficulties.size());
    for (std::size_t q = 0; q < out.size(); ++q) out[q] = ad::stable_sigmoid(theta.value[0] - irt->difficulties[q]);
    return out;
  }
  auto z = neural_logits(std::get<NeuralResponseParams>(params), theta.value);
  for (auto& v : z) v = ad::stable_sigmoid(v);
  return z;
}

double bce_loss(std::uint8_t y, double p) {
  const double pc = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
  return y ? -std::log(pc) : -std::log(1.0 - pc);
}

double prox_penalty(const Ability& theta, const Ability& prior_mean, double rho) {
  if (theta.value.size() != prior_mean.value.size()) throw ArgumentError("prox_penalty: shape mismatch");
  double sq = 0.0;
  for (std::size_t k = 0; k < theta.value.size(); ++k) {
    const double d = theta.value[k] - prior_mean.value[k];
    sq += d * d;
  }
  return 0.5 * rho * sq;
}

// ---------------------------------------------------------------------------

ModelVars model_on_tape(ad::Tape& tape, const ResponseModelParams& params) {
  if (const auto* irt = std::get_if<IrtParams>(&params)) {
    return IrtVars{tape.variable(irt->difficulties), tape.variable(irt->prior_mean)};
  }
  const auto& nn = std::get<NeuralResponseParams>(params);
  return NeuralVars{nn.shape,
                    tape.variable(nn.w1),
                    tape.variable(nn.b1),
                    tape.variable(nn.w2),
                    tape.variable(nn.b2),
                    tape.variable(nn.prior_mean)};
}

ModelVars model_from_flat(const ResponseModelParams& shape_source, const ad::Var& flat, std::size_t offset) {
  auto& tape = flat.tape();
  auto take = [&](std::size_t n) {
    auto v = tape.slice(flat, offset, n);
    offset += n;
    return v;
  };
  if (const auto* irt = std::get_if<IrtParams>(&shape_source)) {
    auto b = take(irt->difficulties.size());
    auto mu = take(1);
    return IrtVars{b, mu};
  }
  const auto& nn = std::get<NeuralResponseParams>(shape_source);
  NeuralVars v;
  v.shape = nn.shape;
  v.w1 = take(nn.w1.size());
  v.b1 = take(nn.b1.size());
  v.w2 = take(nn.w2.size());
  v.b2 = take(nn.b2.size());
  v.prior_mean = take(nn.prior_mean.size());
  return v;
}

std::vector<double> flatten_gradient(const ModelVars& vars, const ad::Gradients& grads) {
  std::vector<double> out;
  const auto append = [&](const ad::Var& v) {
    const auto g = grads.view(v);
    if (g.empty()) {
      out.insert(out.end(), v.size(), 0.0);
    } else {
      out.insert(out.end(), g.begin(), g.end());
    }
  };
  if (const auto* irt = std::get_if<IrtVars>(&vars)) {
    append(irt->difficulties);
    append(irt->prior_mean);
  } else {
    const auto& nn = std::get<NeuralVars>(vars);
    for (const auto* v : {&nn.w1, &nn.b1, &nn.w2, &nn.b2, &nn.prior_mean}) append(*v);
  }
  return out;
}

ad::Var prior_on_tape(const ModelVars& vars) {
  return std::visit([](const auto& v) { return v.prior_mean; }, vars);
}

namespace {

ad::Var neural_hidden(const NeuralVars& v, const ad::Var& theta) {
  auto& tape = theta.tape();
  return tape.tanh(tape.matvec(v.w1, theta, v.shape.hidden) + v.b1);
}

ad::Var neural_logits_on_tape(const NeuralVars& v, const ad::Var& hidden) {
  auto& tape = hidden.tape();
  return tape.matvec(v.w2, hidden, v.shape.num_questions) + v.b2;
}

}  // namespace

ad::Var probs_on_tape(const ModelVars& vars, const ad::Var& theta, std::span<const QuestionId> questions) {
  auto& tape = theta.tape();
  if (const auto* irt = std::get_if<IrtVars>(&vars)) {
    if (theta.size() != 1) throw ArgumentError("IRT ability must be scalar");
    return tape.sigmoid(theta - tape.gather(irt->difficulties, questions));
  }
  const auto& nn = std::get<NeuralVars>(vars);
  const auto logits = neural_logits_on_tape(nn, neural_hidden(nn, theta));
  return tape.sigmoid(tape.gather(logits, questions));
}

ad::Var weighted_loss_gradient(const ModelVars& vars, const ad::Var& theta, const ad::Var& weights,
                               std::span<const double> labels) {
  auto& tape = theta.tape();
  const auto y = tape.constant(labels);
  if (const auto* irt = std::get_if<IrtVars>(&vars)) {
    if (theta.size() != 1) throw ArgumentError("IRT ability must be scalar");
    // d/dtheta bce(y, sigmoid(theta - b)) = sigmoid(theta - b) - y
    const auto residual = tape.sigmoid(theta - irt->difficulties) - y;
    return tape.dot(weights, residual);
  }
  const auto& nn = std::get<NeuralVars>(vars);
  const auto hidden = neural_hidden(nn, theta);
  const auto logits = neural_logits_on_tape(nn, hidden);
  const auto d_logits = weights * (tape.sigmoid(logits) - y);
  const auto d_hidden = tape.matvec_t(nn.w2, d_logits, nn.shape.num_questions);
  const auto d_pre = d_hidden * tape.affine(hidden * hidden, -1.0, 1.0);
  return tape.matvec_t(nn.w1, d_pre, nn.shape.hidden);
}

}  // namespace cbobcat
