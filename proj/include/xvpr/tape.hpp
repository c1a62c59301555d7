#pragma once

#include "xvpr/tensor.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

namespace xvpr {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  bool valid() const { return tape != nullptr; }
  const Tensor& value() const;
};

/// Dynamic-graph reverse-mode tape. One forward/backward per tape instance;
/// a tape is single-threaded, distinct tapes are independent.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Record a constant/input leaf. Its gradient is tracked and can be read
  /// back with grad() after backward().
  Var leaf(Tensor value);

  /// Record a leaf bound to a parameter; backward() accumulates into
  /// p.gradient (+=, so repeated passes add up until reset_gradient()).
  Var watch(Parameter& p);

  /// Extension point for ops defined outside this header: records a node
  /// with an arbitrary backward function.
  Var emit(Tensor value, Backprop backprop);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }

  /// Gradient of the last backward() output w.r.t. v (zeros if none flowed).
  Tensor grad(Var v) const;

  /// Reverse pass from a scalar output, seeding with `seed`. Flushes watched
  /// parameter gradients. May be called once per tape.
  void backward(Var output, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulator for node `id`, allocated on first use. Intended
  /// for backprop implementations.
  Tensor& acc(std::size_t id);
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }
  const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& node_grad(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    Backprop backprop;
    Parameter* bound = nullptr;
  };

  // Deque keeps node references stable while later ops are recorded, so
  // value() results stay valid for the lifetime of the tape.
  std::deque<Node> nodes_;
  bool ran_backward_ = false;

  friend struct Var;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// ---- elementwise and scalar ops -------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_const(Var a, double c);
Var relu(Var x);
Var sigmoid(Var x);
Var log(Var x);
Var sqrt(Var x);
Var clamp_unit(Var x);   // clamp into [1e-12, 1 - 1e-12]
Var signed_sqrt(Var x);  // sign(x) * sqrt(|x|)

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

// ---- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b);   // [r,k] x [k,c] -> [r,c]
Var transpose(Var a);       // rank-2
Var linear(Var x, Var w, Var b);  // w [m,n], x [n], b [m] -> [m]
Var conv2d(Var x, Var kernel, int stride, int pad);  // x [C,H,W], kernel [O,C,kh,kw]
Var channel_bias(Var x, Var b);   // x [C,H,W], b [C]
Var add_rowwise(Var mat, Var v);  // mat [R,C], v [R]: v[r] added across row r
Var center_channels(Var x);       // x [C,H,W]: subtract each channel's spatial mean

// ---- reductions and normalization -----------------------------------------

Var sum(Var x);                  // -> scalar [1]
Var row_sum(Var x);              // [R,C] -> [R]
Var scale_rows(Var x, Var s);    // [R,C] scaled per row by s [R]
Var softmax(Var x, int axis);    // rank 1 (axis 0) or rank 2 (axis 0: down columns, 1: across rows)
Var normalize_rows(Var x);       // each row to unit norm (zero rows stay zero)
Var l2_normalize(Var x);         // whole tensor to unit norm (zero stays zero)
Var reshape(Var x, Shape shape);

/// Euclidean distance between two same-shape tensors, as a scalar node.
Var euclidean_distance(Var a, Var b);

// Forward-only helpers shared with oracle-free code paths.
Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, int stride, int pad);
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor softmax_forward(const Tensor& x, int axis);

}  // namespace xvpr
