#pragma once

// Reverse-mode automatic differentiation over flat vectors.
//
// A Tape records every value produced by a primitive together with its
// parents; parents always precede children, so a single reverse sweep
// yields all gradients. Scalars are vectors of length one and broadcast
// against vectors in the binary element-wise primitives.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace cbobcat::ad {

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  neg,
  exp,
  log,
  sigmoid,
  tanh,
  relu,
  max,
  sum,
  dot,
  affine,
  matvec,
  matvec_t,
  gather,
  softmax,
  entropy,
  bce,
  straight_through,
};

class Tape;

/// Handle to one node of a tape. Cheap to copy; valid while the tape is
/// neither destroyed nor cleared.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::int32_t index() const { return index_; }
  std::size_t size() const;
  std::span<const double> values() const;
  /// Value of a length-one node.
  double value() const;
  double operator[](std::size_t k) const { return values()[k]; }

 private:
  friend class Tape;
  Var(Tape* tape, std::int32_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::int32_t index_ = -1;
};

class Gradients {
 public:
  /// d(output)/d(var); zeros when var is not an ancestor of the output.
  std::vector<double> wrt(const Var& var) const;
  /// Same as wrt() without the copy; empty span means all zeros.
  std::span<const double> view(const Var& var) const;

 private:
  friend class Tape;
  const std::vector<std::vector<double>>* grads_ = nullptr;
  const Tape* tape_ = nullptr;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable leaf.
  Var variable(std::span<const double> values);
  Var variable(double value);
  /// Leaf excluded from differentiation (inputs, noise, targets).
  Var constant(std::span<const double> values);
  Var constant(double value);

  std::size_t size() const { return count_; }
  /// Drops all nodes but keeps allocated buffers for reuse.
  void clear() { count_ = 0; }

  /// Reverse sweep from a length-one output. The returned object refers to
  /// storage owned by the tape and is invalidated by the next backward().
  Gradients backward(const Var& output);

  // Primitives. Each validates its arguments and throws DomainError or
  // NumericError on invalid input or non-finite results.
  Var add(const Var& a, const Var& b);
  Var sub(const Var& a, const Var& b);
  Var mul(const Var& a, const Var& b);
  Var div(const Var& a, const Var& b);
  Var neg(const Var& a);
  Var exp(const Var& a);
  Var log(const Var& a);
  Var sigmoid(const Var& a);
  Var tanh(const Var& a);
  Var relu(const Var& a);
  Var max(const Var& a, const Var& b);
  Var sum(const Var& a);
  Var dot(const Var& a, const Var& b);
  /// scale * a + shift, both constants.
  Var affine(const Var& a, double scale, double shift);
  /// Row-major (rows x cols) matrix times vector. Zero entries of x are skipped.
  Var matvec(const Var& matrix, const Var& x, std::int32_t rows);
  /// Transposed product matrix^T * y for a row-major (rows x cols) matrix.
  Var matvec_t(const Var& matrix, const Var& y, std::int32_t rows);
  Var gather(const Var& a, std::span<const std::int32_t> indices);
  Var slice(const Var& a, std::size_t offset, std::size_t length);
  /// Softmax restricted to `mask`-true entries; masked entries are exactly 0.
  Var softmax(const Var& logits, std::span<const std::uint8_t> mask);
  /// Shannon entropy of a probability vector with 0 log 0 = 0.
  Var entropy(const Var& probs);
  /// Summed binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
  Var bce(const Var& probs, std::span<const double> labels);
  /// Forward value `hard`, gradient routed unchanged to `soft`.
  Var straight_through(const Var& soft, std::span<const double> hard);

 private:
  friend class Var;
  friend class Gradients;

  struct Node {
    Op op = Op::leaf;
    bool needs_grad = false;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::int32_t rows = 0;
    double scale = 0.0;
    std::vector<double> value;
    std::vector<double> partial;
    std::vector<std::int32_t> index;
  };

  Node& push(Op op, std::int32_t a, std::int32_t b, std::size_t n);
  Var finish(Node& node);
  const Node& node(const Var& v) const;
  Var binary(Op op, const Var& a, const Var& b);
  Var unary(Op op, const Var& a);
  void check_same_tape(const Var& v) const;

  std::vector<Node> nodes_;
  std::size_t count_ = 0;
  std::vector<std::vector<double>> grads_;
};

inline Var operator+(const Var& a, const Var& b) { return a.tape().add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return a.tape().sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return a.tape().mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return a.tape().div(a, b); }
inline Var operator-(const Var& a) { return a.tape().neg(a); }
inline Var operator*(double s, const Var& a) { return a.tape().affine(a, s, 0.0); }
inline Var operator*(const Var& a, double s) { return a.tape().affine(a, s, 0.0); }
inline Var operator+(const Var& a, double c) { return a.tape().affine(a, 1.0, c); }
inline Var operator-(const Var& a, double c) { return a.tape().affine(a, 1.0, -c); }

inline Var exp(const Var& a) { return a.tape().exp(a); }
inline Var log(const Var& a) { return a.tape().log(a); }
inline Var sigmoid(const Var& a) { return a.tape().sigmoid(a); }
inline Var tanh(const Var& a) { return a.tape().tanh(a); }
inline Var relu(const Var& a) { return a.tape().relu(a); }
inline Var max(const Var& a, const Var& b) { return a.tape().max(a, b); }
inline Var sum(const Var& a) { return a.tape().sum(a); }
inline Var dot(const Var& a, const Var& b) { return a.tape().dot(a, b); }

/// Numerically stable logistic function.
double stable_sigmoid(double x);

/// A differentiable scalar function of one parameter vector, expressed on a tape.
using ScalarFunction = std::function<Var(Tape&, const Var& params)>;

/// Compares backward() with central finite differences at `point`. Returns
/// max_k |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). eps must lie in (0, 1e-2].
double grad_check(const ScalarFunction& fn, std::span<const double> point, double eps);

}  // namespace cbobcat::ad
