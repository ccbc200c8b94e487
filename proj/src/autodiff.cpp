#include "cbobcat/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cbobcat/errors.hpp"

namespace cbobcat::ad {

namespace {

constexpr double kProbFloor = 1e-7;

std::size_t broadcast_size(std::size_t na, std::size_t nb) {
  if (na == nb || nb == 1) return na;
  if (na == 1) return nb;
  throw ArgumentError("shape mismatch: " + std::to_string(na) + " vs " + std::to_string(nb));
}

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::neg: return "neg";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::relu: return "relu";
    case Op::max: return "max";
    case Op::sum: return "sum";
    case Op::dot: return "dot";
    case Op::affine: return "affine";
    case Op::matvec: return "matvec";
    case Op::matvec_t: return "matvec_t";
    case Op::gather: return "gather";
    case Op::softmax: return "softmax";
    case Op::entropy: return "entropy";
    case Op::bce: return "bce";
    case Op::straight_through: return "straight_through";
  }
  return "?";
}

}  // namespace

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Var / Gradients

std::size_t Var::size() const { return tape_->node(*this).value.size(); }

std::span<const double> Var::values() const { return tape_->node(*this).value; }

double Var::value() const {
  const auto& v = tape_->node(*this).value;
  if (v.size() != 1) throw ArgumentError("value() on a node of length " + std::to_string(v.size()));
  return v[0];
}

std::span<const double> Gradients::view(const Var& var) const {
  const auto k = static_cast<std::size_t>(var.index());
  if (&var.tape() != tape_ || k >= grads_->size()) return {};
  return (*grads_)[k];
}

std::vector<double> Gradients::wrt(const Var& var) const {
  const auto g = view(var);
  if (g.empty()) return std::vector<double>(var.size(), 0.0);
  return {g.begin(), g.end()};
}

// ---------------------------------------------------------------------------
// Tape plumbing

const Tape::Node& Tape::node(const Var& v) const {
  if (v.tape_ != this || v.index_ < 0 || static_cast<std::size_t>(v.index_) >= count_) {
    throw StateError("variable does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.index_)];
}

void Tape::check_same_tape(const Var& v) const { (void)node(v); }

Tape::Node& Tape::push(Op op, std::int32_t a, std::int32_t b, std::size_t n) {
  if (count_ == nodes_.size()) nodes_.emplace_back();
  Node& nd = nodes_[count_++];
  nd.op = op;
  nd.a = a;
  nd.b = b;
  nd.rows = 0;
  nd.scale = 0.0;
  nd.value.assign(n, 0.0);
  nd.partial.clear();
  nd.index.clear();
  nd.needs_grad = (a >= 0 && nodes_[static_cast<std::size_t>(a)].needs_grad) ||
                  (b >= 0 && nodes_[static_cast<std::size_t>(b)].needs_grad);
  return nd;
}

Var Tape::finish(Node& nd) {
  for (double v : nd.value) {
    if (!std::isfinite(v)) {
      const auto op = nd.op;
      --count_;
      throw NumericError(std::string("non-finite value produced by ") + op_name(op));
    }
  }
  return Var(this, static_cast<std::int32_t>(&nd - nodes_.data()));
}

Var Tape::variable(std::span<const double> values) {
  Node& nd = push(Op::leaf, -1, -1, values.size());
  std::copy(values.begin(), values.end(), nd.value.begin());
  nd.needs_grad = true;
  return finish(nd);
}

Var Tape::variable(double value) { return variable(std::span<const double>(&value, 1)); }

Var Tape::constant(std::span<const double> values) {
  Node& nd = push(Op::leaf, -1, -1, values.size());
  std::copy(values.begin(), values.end(), nd.value.begin());
  nd.needs_grad = false;
  return finish(nd);
}

Var Tape::constant(double value) { return constant(std::span<const double>(&value, 1)); }

// ---------------------------------------------------------------------------
// Element-wise primitives

Var Tape::binary(Op op, const Var& va, const Var& vb) {
  check_same_tape(va);
  check_same_tape(vb);
  const auto ia = va.index_;
  const auto ib = vb.index_;
  const auto na = nodes_[static_cast<std::size_t>(ia)].value.size();
  const auto nb = nodes_[static_cast<std::size_t>(ib)].value.size();
  const auto n = broadcast_size(na, nb);
  Node& nd = push(op, ia, ib, n);
  const auto& a = nodes_[static_cast<std::size_t>(ia)].value;
  const auto& b = nodes_[static_cast<std::size_t>(ib)].value;
  const std::size_t sa = na == 1 ? 0 : 1;
  const std::size_t sb = nb == 1 ? 0 : 1;
  auto& out = nd.value;
  switch (op) {
    case Op::add:
      for (std::size_t k = 0; k < n; ++k) out[k] = a[k * sa] + b[k * sb];
      break;
    case Op::sub:
      for (std::size_t k = 0; k < n; ++k) out[k] = a[k * sa] - b[k * sb];
      break;
    case Op::mul:
      for (std::size_t k = 0; k < n; ++k) out[k] = a[k * sa] * b[k * sb];
      break;
    case Op::div:
      for (std::size_t k = 0; k < n; ++k) {
        if (b[k * sb] == 0.0) {
          --count_;
          throw DomainError("division by zero");
        }
        out[k] = a[k * sa] / b[k * sb];
      }
      break;
    case Op::max:
      for (std::size_t k = 0; k < n; ++k) out[k] = std::max(a[k * sa], b[k * sb]);
      break;
    default:
      throw StateError("not a binary op");
  }
  return finish(nd);
}

Var Tape::unary(Op op, const Var& va) {
  check_same_tape(va);
  const auto ia = va.index_;
  const auto n = nodes_[static_cast<std::size_t>(ia)].value.size();
  Node& nd = push(op, ia, -1, n);
  const auto& a = nodes_[static_cast<std::size_t>(ia)].value;
  auto& out = nd.value;
  auto& d = nd.partial;
  d.assign(n, 0.0);
  switch (op) {
    case Op::neg:
      for (std::size_t k = 0; k < n; ++k) {
        out[k] = -a[k];
        d[k] = -1.0;
      }
      break;
    case Op::exp:
      for (std::size_t k = 0; k < n; ++k) {
        out[k] = std::exp(a[k]);
        d[k] = out[k];
      }
      break;
    case Op::log:
      for (std::size_t k = 0; k < n; ++k) {
        if (!(a[k] > 0.0)) {
          --count_;
          throw DomainError("log of non-positive value " + std::to_string(a[k]));
        }
        out[k] = std::log(a[k]);
        d[k] = 1.0 / a[k];
      }
      break;
    case Op::sigmoid:
      for (std::size_t k = 0; k < n; ++k) {
        out[k] = stable_sigmoid(a[k]);
        d[k] = out[k] * (1.0 - out[k]);
      }
      break;
    case Op::tanh:
      for (std::size_t k = 0; k < n; ++k) {
        out[k] = std::tanh(a[k]);
        d[k] = 1.0 - out[k] * out[k];
      }
      break;
    case Op::relu:
      for (std::size_t k = 0; k < n; ++k) {
        out[k] = a[k] > 0.0 ? a[k] : 0.0;
        d[k] = a[k] > 0.0 ? 1.0 : 0.0;
      }
      break;
    default:
      throw StateError("not a unary op");
  }
  return finish(nd);
}

Var Tape::add(const Var& a, const Var& b) { return binary(Op::add, a, b); }
Var Tape::sub(const Var& a, const Var& b) { return binary(Op::sub, a, b); }
Var Tape::mul(const Var& a, const Var& b) { return binary(Op::mul, a, b); }
Var Tape::div(const Var& a, const Var& b) { return binary(Op::div, a, b); }
Var Tape::max(const Var& a, const Var& b) { return binary(Op::max, a, b); }
Var Tape::neg(const Var& a) { return unary(Op::neg, a); }
Var Tape::exp(const Var& a) { return unary(Op::exp, a); }
Var Tape::log(const Var& a) { return unary(Op::log, a); }
Var Tape::sigmoid(const Var& a) { return unary(Op::sigmoid, a); }
Var Tape::tanh(const Var& a) { return unary(Op::tanh, a); }
Var Tape::relu(const Var& a) { return unary(Op::relu, a); }

Var Tape::affine(const Var& va, double scale, double shift) {
  check_same_tape(va);
  const auto ia = va.index_;
  const auto n = nodes_[static_cast<std::size_t>(ia)].value.size();
  Node& nd = push(Op::affine, ia, -1, n);
  const auto& a = nodes_[static_cast<std::size_t>(ia)].value;
  nd.scale = scale;
  for (std::size_t k = 0; k < n; ++k) nd.value[k] = scale * a[k] + shift;
  return finish(nd);
}

// ---------------------------------------------------------------------------
// Reductions and structured primitives

Var Tape::sum(const Var& va) {
  check_same_tape(va);
  Node& nd = push(Op::sum, va.index_, -1, 1);
  double s = 0.0;
  for (double v : nodes_[static_cast<std::size_t>(va.index_)].value) s += v;
  nd.value[0] = s;
  return finish(nd);
}

Var Tape::dot(const Var& va, const Var& vb) {
  check_same_tape(va);
  check_same_tape(vb);
  if (va.size() != vb.size()) throw ArgumentError("dot: length mismatch");
  Node& nd = push(Op::dot, va.index_, vb.index_, 1);
  const auto& a = nodes_[static_cast<std::size_t>(va.index_)].value;
  const auto& b = nodes_[static_cast<std::size_t>(vb.index_)].value;
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  nd.value[0] = s;
  return finish(nd);
}

Var Tape::matvec(const Var& vm, const Var& vx, std::int32_t rows) {
  check_same_tape(vm);
  check_same_tape(vx);
  const auto cols = vx.size();
  if (rows <= 0 || vm.size() != static_cast<std::size_t>(rows) * cols) throw ArgumentError("matvec: shape mismatch");
  Node& nd = push(Op::matvec, vm.index_, vx.index_, static_cast<std::size_t>(rows));
  nd.rows = rows;
  const auto& m = nodes_[static_cast<std::size_t>(vm.index_)].value;
  const auto& x = nodes_[static_cast<std::size_t>(vx.index_)].value;
  // Nonzero columns of x; the policy input is sparse.
  for (std::size_t c = 0; c < cols; ++c) {
    if (x[c] != 0.0) nd.index.push_back(static_cast<std::int32_t>(c));
  }
  if (nd.index.size() * 2 >= cols) {
    for (std::size_t r = 0; r < static_cast<std::size_t>(rows); ++r) {
      const double* row = m.data() + r * cols;
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
      nd.value[r] = s;
    }
  } else {
    for (std::size_t r = 0; r < static_cast<std::size_t>(rows); ++r) {
      const double* row = m.data() + r * cols;
      double s = 0.0;
      for (auto c : nd.index) s += row[c] * x[static_cast<std::size_t>(c)];
      nd.value[r] = s;
    }
  }
  return finish(nd);
}

Var Tape::matvec_t(const Var& vm, const Var& vy, std::int32_t rows) {
  check_same_tape(vm);
  check_same_tape(vy);
  if (rows <= 0 || vy.size() != static_cast<std::size_t>(rows) || vm.size() % static_cast<std::size_t>(rows) != 0) {
    throw ArgumentError("matvec_t: shape mismatch");
  }
  const auto cols = vm.size() / static_cast<std::size_t>(rows);
  Node& nd = push(Op::matvec_t, vm.index_, vy.index_, cols);
  nd.rows = rows;
  const auto& m = nodes_[static_cast<std::size_t>(vm.index_)].value;
  const auto& y = nodes_[static_cast<std::size_t>(vy.index_)].value;
  for (std::size_t r = 0; r < static_cast<std::size_t>(rows); ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    const double* row = m.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) nd.value[c] += row[c] * yr;
  }
  return finish(nd);
}

Var Tape::gather(const Var& va, std::span<const std::int32_t> indices) {
  check_same_tape(va);
  const auto n = va.size();
  Node& nd = push(Op::gather, va.index_, -1, indices.size());
  const auto& a = nodes_[static_cast<std::size_t>(va.index_)].value;
  nd.index.assign(indices.begin(), indices.end());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto i = indices[k];
    if (i < 0 || static_cast<std::size_t>(i) >= n) {
      --count_;
      throw ArgumentError("gather index out of range");
    }
    nd.value[k] = a[static_cast<std::size_t>(i)];
  }
  return finish(nd);
}

Var Tape::slice(const Var& a, std::size_t offset, std::size_t length) {
  if (offset + length > a.size()) throw ArgumentError("slice out of range");
  std::vector<std::int32_t> idx(length);
  for (std::size_t k = 0; k < length; ++k) idx[k] = static_cast<std::int32_t>(offset + k);
  return gather(a, idx);
}

Var Tape::softmax(const Var& vz, std::span<const std::uint8_t> mask) {
  check_same_tape(vz);
  const auto n = vz.size();
  if (mask.size() != n) throw ArgumentError("softmax: mask length mismatch");
  Node& nd = push(Op::softmax, vz.index_, -1, n);
  const auto& z = nodes_[static_cast<std::size_t>(vz.index_)].value;
  double zmax = -HUGE_VAL;
  for (std::size_t k = 0; k < n; ++k) {
    if (mask[k]) {
      nd.index.push_back(static_cast<std::int32_t>(k));
      zmax = std::max(zmax, z[k]);
    }
  }
  if (nd.index.empty()) {
    --count_;
    throw StateError("softmax: every entry is masked");
  }
  double total = 0.0;
  for (auto k : nd.index) {
    const double e = std::exp(z[static_cast<std::size_t>(k)] - zmax);
    nd.value[static_cast<std::size_t>(k)] = e;
    total += e;
  }
  for (auto k : nd.index) nd.value[static_cast<std::size_t>(k)] /= total;
  return finish(nd);
}

Var Tape::entropy(const Var& vp) {
  check_same_tape(vp);
  const auto n = vp.size();
  Node& nd = push(Op::entropy, vp.index_, -1, 1);
  const auto& p = nodes_[static_cast<std::size_t>(vp.index_)].value;
  nd.partial.assign(n, 0.0);
  double h = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (p[k] < 0.0) {
      --count_;
      throw DomainError("entropy of a negative probability");
    }
    if (p[k] > 0.0) {
      const double lp = std::log(p[k]);
      h -= p[k] * lp;
      nd.partial[k] = -(lp + 1.0);
    }
  }
  nd.value[0] = h;
  return finish(nd);
}

Var Tape::bce(const Var& vp, std::span<const double> labels) {
  check_same_tape(vp);
  const auto n = vp.size();
  if (labels.size() != n) throw ArgumentError("bce: label length mismatch");
  Node& nd = push(Op::bce, vp.index_, -1, 1);
  const auto& p = nodes_[static_cast<std::size_t>(vp.index_)].value;
  nd.partial.assign(n, 0.0);
  double loss = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double y = labels[k];
    const double pc = std::clamp(p[k], kProbFloor, 1.0 - kProbFloor);
    loss -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
    // Clamped region has zero slope.
    if (p[k] > kProbFloor && p[k] < 1.0 - kProbFloor) nd.partial[k] = -y / pc + (1.0 - y) / (1.0 - pc);
  }
  nd.value[0] = loss;
  return finish(nd);
}

Var Tape::straight_through(const Var& vs, std::span<const double> hard) {
  check_same_tape(vs);
  if (hard.size() != vs.size()) throw ArgumentError("straight_through: length mismatch");
  Node& nd = push(Op::straight_through, vs.index_, -1, hard.size());
  std::copy(hard.begin(), hard.end(), nd.value.begin());
  return finish(nd);
}

// ---------------------------------------------------------------------------
// Reverse sweep

Gradients Tape::backward(const Var& output) {
  check_same_tape(output);
  if (output.size() != 1) throw ArgumentError("backward() requires a scalar output");
  const auto out = static_cast<std::size_t>(output.index_);
  if (grads_.size() < count_) grads_.resize(count_);
  for (std::size_t k = 0; k < count_; ++k) grads_[k].clear();
  grads_[out].assign(1, 1.0);

  const auto acc = [&](std::int32_t parent) -> std::vector<double>* {
    if (parent < 0) return nullptr;
    const auto p = static_cast<std::size_t>(parent);
    if (!nodes_[p].needs_grad) return nullptr;
    auto& g = grads_[p];
    if (g.empty()) g.assign(nodes_[p].value.size(), 0.0);
    return &g;
  };

  for (std::size_t k = out + 1; k-- > 0;) {
    const auto& g = grads_[k];
    if (g.empty()) continue;
    const Node& nd = nodes_[k];
    if (nd.op == Op::leaf || !nd.needs_grad) continue;
    const std::size_t n = nd.value.size();

    switch (nd.op) {
      case Op::add:
      case Op::sub:
      case Op::mul:
      case Op::div:
      case Op::max: {
        const auto& a = nodes_[static_cast<std::size_t>(nd.a)].value;
        const auto& b = nodes_[static_cast<std::size_t>(nd.b)].value;
        const std::size_t sa = a.size() == 1 && n > 1 ? 0 : 1;
        const std::size_t sb = b.size() == 1 && n > 1 ? 0 : 1;
        auto* ga = acc(nd.a);
        auto* gb = nd.a == nd.b ? nullptr : acc(nd.b);
        const bool aliased = nd.a == nd.b && ga != nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          const double av = a[i * sa];
          const double bv = b[i * sb];
          double da = 0.0;
          double db = 0.0;
          switch (nd.op) {
            case Op::add: da = 1.0; db = 1.0; break;
            case Op::sub: da = 1.0; db = -1.0; break;
            case Op::mul: da = bv; db = av; break;
            case Op::div: da = 1.0 / bv; db = -av / (bv * bv); break;
            default: da = av >= bv ? 1.0 : 0.0; db = av >= bv ? 0.0 : 1.0; break;
          }
          if (ga) (*ga)[i * sa] += g[i] * (aliased ? da + db : da);
          if (gb) (*gb)[i * sb] += g[i] * db;
        }
        break;
      }
      case Op::neg:
      case Op::exp:
      case Op::log:
      case Op::sigmoid:
      case Op::tanh:
      case Op::relu:
      case Op::entropy:
      case Op::bce: {
        auto* ga = acc(nd.a);
        if (!ga) break;
        if (nd.op == Op::entropy || nd.op == Op::bce) {
          for (std::size_t i = 0; i < nd.partial.size(); ++i) (*ga)[i] += g[0] * nd.partial[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * nd.partial[i];
        }
        break;
      }
      case Op::affine: {
        auto* ga = acc(nd.a);
        if (ga) for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * nd.scale;
        break;
      }
      case Op::sum: {
        auto* ga = acc(nd.a);
        if (ga) for (auto& v : *ga) v += g[0];
        break;
      }
      case Op::dot: {
        const auto& a = nodes_[static_cast<std::size_t>(nd.a)].value;
        const auto& b = nodes_[static_cast<std::size_t>(nd.b)].value;
        auto* ga = acc(nd.a);
        auto* gb = acc(nd.b);
        if (ga) for (std::size_t i = 0; i < a.size(); ++i) (*ga)[i] += g[0] * b[i];
        if (gb) for (std::size_t i = 0; i < b.size(); ++i) (*gb)[i] += g[0] * a[i];
        break;
      }
      case Op::matvec: {
        const auto& m = nodes_[static_cast<std::size_t>(nd.a)].value;
        const auto& x = nodes_[static_cast<std::size_t>(nd.b)].value;
        const auto rows = static_cast<std::size_t>(nd.rows);
        const auto cols = x.size();
        if (auto* gm = acc(nd.a)) {
          for (std::size_t r = 0; r < rows; ++r) {
            if (g[r] == 0.0) continue;
            double* grow = gm->data() + r * cols;
            for (auto c : nd.index) grow[c] += g[r] * x[static_cast<std::size_t>(c)];
          }
        }
        if (auto* gx = acc(nd.b)) {
          for (std::size_t r = 0; r < rows; ++r) {
            const double* row = m.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) (*gx)[c] += row[c] * g[r];
          }
        }
        break;
      }
      case Op::matvec_t: {
        const auto& m = nodes_[static_cast<std::size_t>(nd.a)].value;
        const auto& y = nodes_[static_cast<std::size_t>(nd.b)].value;
        const auto rows = static_cast<std::size_t>(nd.rows);
        const auto cols = n;
        if (auto* gm = acc(nd.a)) {
          for (std::size_t r = 0; r < rows; ++r) {
            if (y[r] == 0.0) continue;
            double* grow = gm->data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) grow[c] += y[r] * g[c];
          }
        }
        if (auto* gy = acc(nd.b)) {
          for (std::size_t r = 0; r < rows; ++r) {
            const double* row = m.data() + r * cols;
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += row[c] * g[c];
            (*gy)[r] += s;
          }
        }
        break;
      }
      case Op::gather: {
        auto* ga = acc(nd.a);
        if (ga) for (std::size_t i = 0; i < n; ++i) (*ga)[static_cast<std::size_t>(nd.index[i])] += g[i];
        break;
      }
      case Op::softmax: {
        auto* ga = acc(nd.a);
        if (!ga) break;
        const auto& p = nd.value;
        double s = 0.0;
        for (auto i : nd.index) s += p[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(i)];
        for (auto i : nd.index) {
          const auto u = static_cast<std::size_t>(i);
          (*ga)[u] += p[u] * (g[u] - s);
        }
        break;
      }
      case Op::straight_through: {
        auto* ga = acc(nd.a);
        if (ga) for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
        break;
      }
      case Op::leaf:
        break;
    }
  }

  Gradients result;
  result.grads_ = &grads_;
  result.tape_ = this;
  return result;
}

// ---------------------------------------------------------------------------

double grad_check(const ScalarFunction& fn, std::span<const double> point, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ArgumentError("grad_check: eps must lie in (0, 1e-2]");
  Tape tape;
  const Var params = tape.variable(point);
  const Var out = fn(tape, params);
  const auto analytic = tape.backward(out).wrt(params);

  std::vector<double> probe(point.begin(), point.end());
  const auto evaluate = [&]() {
    Tape t;
    const double v = fn(t, t.variable(probe)).value();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
    return v;
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const double x0 = probe[k];
    probe[k] = x0 + eps;
    const double fp = evaluate();
    probe[k] = x0 - eps;
    const double fm = evaluate();
    probe[k] = x0;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[k] - numeric) / std::max({1.0, std::abs(analytic[k]), std::abs(numeric)});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace cbobcat::ad
