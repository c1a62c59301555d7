#include "xvpr/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace xvpr {

namespace {

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw std::invalid_argument(std::string(op) + ": operands belong to different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a, b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

using StridedConst = Eigen::Map<const ArrayX, 0, Eigen::InnerStride<>>;
using StridedMut = Eigen::Map<ArrayX, 0, Eigen::InnerStride<>>;

constexpr double kClampLo = 1e-12;
constexpr double kClampHi = 1.0 - 1e-12;

}  // namespace

// ---- Tape ------------------------------------------------------------------

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), false, nullptr, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::watch(Parameter& p) {
  if (!same_shape(p.value, p.gradient))
    throw std::invalid_argument("watch: parameter '" + p.name + "' gradient shape mismatch");
  nodes_.push_back(Node{p.value, Tensor(), false, nullptr, &p});
  return Var{this, nodes_.size() - 1};
}

Var Tape::emit(Tensor value, Backprop backprop) {
  nodes_.push_back(Node{std::move(value), Tensor(), false, std::move(backprop), nullptr});
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::acc(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? n.grad : Tensor::zeros(n.value.shape());
}

void Tape::backward(Var output, double seed) {
  if (output.tape != this) throw std::invalid_argument("backward: output from another tape");
  if (ran_backward_) throw std::logic_error("backward: tape already consumed");
  ran_backward_ = true;
  const Tensor& out = nodes_[output.id].value;
  if (out.size() != 1) throw std::invalid_argument("backward: output is not scalar");

  acc(output.id)[0] += seed;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backprop) n.backprop(*this, i);
  }
  for (Node& n : nodes_) {
    if (n.bound && n.has_grad) n.bound->gradient.array() += n.grad.array();
  }
}

// ---- elementwise -----------------------------------------------------------

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.value().shape(), a.value().array() + b.value().array());
  const std::size_t pa = a.id, pb = b.id;
  return a.tape->emit(std::move(out), [pa, pb](Tape& t, std::size_t self) {
    const ArrayX& g = t.node_grad(self).array();
    t.acc(pa).array() += g;
    t.acc(pb).array() += g;
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out(a.value().shape(), a.value().array() - b.value().array());
  const std::size_t pa = a.id, pb = b.id;
  return a.tape->emit(std::move(out), [pa, pb](Tape& t, std::size_t self) {
    const ArrayX& g = t.node_grad(self).array();
    t.acc(pa).array() += g;
    t.acc(pb).array() -= g;
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.value().shape(), a.value().array() * b.value().array());
  const std::size_t pa = a.id, pb = b.id;
  return a.tape->emit(std::move(out), [pa, pb](Tape& t, std::size_t self) {
    const ArrayX& g = t.node_grad(self).array();
    t.acc(pa).array() += g * t.node_value(pb).array();
    t.acc(pb).array() += g * t.node_value(pa).array();
  });
}

Var scale(Var a, double c) {
  Tensor out(a.value().shape(), a.value().array() * c);
  const std::size_t pa = a.id;
  return a.tape->emit(std::move(out), [pa, c](Tape& t, std::size_t self) {
    t.acc(pa).array() += c * t.node_grad(self).array();
  });
}

Var add_const(Var a, double c) {
  Tensor out(a.value().shape(), a.value().array() + c);
  const std::size_t pa = a.id;
  return a.tape->emit(std::move(out), [pa](Tape& t, std::size_t self) {
    t.acc(pa).array() += t.node_grad(self).array();
  });
}

Var relu(Var x) {
  Tensor out(x.value().shape(), x.value().array().max(0.0));
  const std::size_t px = x.id;
  return x.tape->emit(std::move(out), [px](Tape& t, std::size_t self) {
    const ArrayX& g = t.node_grad(self).array();
    const ArrayX& v = t.node_value(px).array();
    t.acc(px).array() += g * (v > 0.0).cast<double>();
  });
}

Var sigmoid(Var x) {
  const ArrayX& v = x.value().array();
  ArrayX y(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    const double z = v[i];
    y[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  Tensor out(x.value().shape(), std::move(y));
  const std::size_t px = x.id;
  return x.tape->emit(std::move(out), [px](Tape& t, std::size_t self) {
    const ArrayX& g = t.node_grad(self).array();
    const ArrayX& s = t.node_value(self).array();
    t.acc(px).array() += g * s * (1.0 - s);
  });
}

Var log(Var x) {
  const ArrayX clamped = x.value().array().max(1e-300);
  Tensor out(x.value().shape(), clamped.log());
  const std::size_t px = x.id;
  return x.tape->emit(std::move(out), [px](Tape& t, std::size_t self) {
    const ArrayX& g = t.node_grad(self).array();
    t.acc(px).array() += g / t.node_value(px).array().max(1e-300);
  });
}

Var sqrt(Var x) {
  Tensor out(x.value().shape(), x.value().array().sqrt());
  const std::size_t px = x.id;
  return x.tape->emit(std::move(out), [px](Tape& t, std::size_t self) {
    const ArrayX& g = t.node_grad(self).array();
    const ArrayX& y = t.node_value(self).array();
    t.acc(px).array() += g * 0.5 / y.max(1e-12);
  });
}

Var clamp_unit(Var x) {
  Tensor out(x.value().shape(), x.value().array().max(kClampLo).min(kClampHi));
  const std::size_t px = x.id;
  return x.tape->emit(std::move(out), [px](Tape& t, std::size_t self) {
    const ArrayX& g = t.node_grad(self).array();
    const ArrayX& v = t.node_value(px).array();
    t.acc(px).array() += g * ((v > kClampLo) && (v < kClampHi)).cast<double>();
  });
}

Var signed_sqrt(Var x) {
  const ArrayX& v = x.value().array();
  Tensor out(x.value().shape(), v.sign() * v.abs().sqrt());
  const std::size_t px = x.id;
  return x.tape->emit(std::move(out), [px](Tape& t, std::size_t self) {
    const ArrayX& g = t.node_grad(self).array();
    const ArrayX& v = t.node_value(px).array();
    t.acc(px).array() += g * 0.5 / v.abs().sqrt().max(1e-12);
  });
}

// ---- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(av.shape()) + " x " +
                                shape_str(bv.shape()));
  const Index r = av.dim(0), k = av.dim(1), c = bv.dim(1);
  Tensor out({r, c});
  out.matrix(r, c).noalias() = av.matrix(r, k) * bv.matrix(k, c);
  const std::size_t pa = a.id, pb = b.id;
  return a.tape->emit(std::move(out), [pa, pb, r, k, c](Tape& t, std::size_t self) {
    const auto g = t.node_grad(self).matrix(r, c);
    const auto am = t.node_value(pa).matrix(r, k);
    const auto bm = t.node_value(pb).matrix(k, c);
    t.acc(pa).matrix(r, k).noalias() += g * bm.transpose();
    t.acc(pb).matrix(k, c).noalias() += am.transpose() * g;
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw std::invalid_argument("transpose: rank-2 tensor required");
  const Index r = av.dim(0), c = av.dim(1);
  Tensor out({c, r});
  out.matrix(c, r) = av.matrix(r, c).transpose();
  const std::size_t pa = a.id;
  return a.tape->emit(std::move(out), [pa, r, c](Tape& t, std::size_t self) {
    t.acc(pa).matrix(r, c) += t.node_grad(self).matrix(c, r).transpose();
  });
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 1 || w.rank() != 2 || b.rank() != 1 || w.dim(1) != x.dim(0) ||
      w.dim(0) != b.dim(0))
    throw std::invalid_argument("linear: incompatible shapes w=" + shape_str(w.shape()) +
                                " x=" + shape_str(x.shape()) + " b=" + shape_str(b.shape()));
  const Index m = w.dim(0), n = w.dim(1);
  Tensor out({m});
  Eigen::Map<Eigen::VectorXd>(out.data(), m).noalias() =
      w.matrix(m, n) * Eigen::Map<const Eigen::VectorXd>(x.data(), n) +
      Eigen::Map<const Eigen::VectorXd>(b.data(), m);
  return out;
}

Var linear(Var x, Var w, Var b) {
  require_same_tape(x, w, "linear");
  require_same_tape(x, b, "linear");
  Tensor out = linear_forward(x.value(), w.value(), b.value());
  const Index m = w.value().dim(0), n = w.value().dim(1);
  const std::size_t px = x.id, pw = w.id, pb = b.id;
  return x.tape->emit(std::move(out), [px, pw, pb, m, n](Tape& t, std::size_t self) {
    const Eigen::Map<const Eigen::VectorXd> g(t.node_grad(self).data(), m);
    const Eigen::Map<const Eigen::VectorXd> xv(t.node_value(px).data(), n);
    const auto wm = t.node_value(pw).matrix(m, n);
    t.acc(pw).matrix(m, n).noalias() += g * xv.transpose();
    Eigen::Map<Eigen::VectorXd>(t.acc(px).data(), n).noalias() += wm.transpose() * g;
    Eigen::Map<Eigen::VectorXd>(t.acc(pb).data(), m) += g;
  });
}

namespace {

struct ConvDims {
  Index C, H, W, O, kh, kw, Ho, Wo;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& k, int stride, int pad) {
  if (x.rank() != 3 || k.rank() != 4)
    throw std::invalid_argument("conv2d: expected input [C,H,W] and kernel [O,C,kh,kw], got " +
                                shape_str(x.shape()) + " and " + shape_str(k.shape()));
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), k.dim(0), k.dim(2), k.dim(3), 0, 0, stride, pad};
  if (k.dim(1) != d.C)
    throw std::invalid_argument("conv2d: kernel channels " + std::to_string(k.dim(1)) +
                                " do not match input channels " + std::to_string(d.C));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d: pad must be >= 0");
  if (d.kh > d.H + 2 * pad || d.kw > d.W + 2 * pad)
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
  return d;
}

// Valid output-column span [lo, hi] and first input column for a given kx.
bool col_span(const ConvDims& d, Index kx, Index& lo, Index& hi, Index& ix_lo) {
  const Index s = d.stride, p = d.pad;
  lo = (p - kx <= 0) ? 0 : (p - kx + s - 1) / s;
  const Index num = d.W - 1 + p - kx;
  if (num < 0) return false;
  hi = std::min(num / s, d.Wo - 1);
  if (lo > hi) return false;
  ix_lo = lo * s - p + kx;
  return true;
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& k, int stride, int pad) {
  const ConvDims d = conv_dims(x, k, stride, pad);
  Tensor out({d.O, d.Ho, d.Wo});
  const double* xd = x.data();
  const double* kd = k.data();
  double* od = out.data();
  for (Index o = 0; o < d.O; ++o)
    for (Index c = 0; c < d.C; ++c) {
      const double* kbase = kd + ((o * d.C + c) * d.kh) * d.kw;
      for (Index ky = 0; ky < d.kh; ++ky)
        for (Index oy = 0; oy < d.Ho; ++oy) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= d.H) continue;
          double* orow = od + (o * d.Ho + oy) * d.Wo;
          const double* xrow = xd + (c * d.H + iy) * d.W;
          for (Index kx = 0; kx < d.kw; ++kx) {
            Index lo, hi, ix_lo;
            if (!col_span(d, kx, lo, hi, ix_lo)) continue;
            const Index len = hi - lo + 1;
            const double wv = kbase[ky * d.kw + kx];
            Eigen::Map<ArrayX>(orow + lo, len) +=
                wv * StridedConst(xrow + ix_lo, len, Eigen::InnerStride<>(stride));
          }
        }
    }
  return out;
}

Var conv2d(Var x, Var kernel, int stride, int pad) {
  require_same_tape(x, kernel, "conv2d");
  Tensor out = conv2d_forward(x.value(), kernel.value(), stride, pad);
  const ConvDims d = conv_dims(x.value(), kernel.value(), stride, pad);
  const std::size_t px = x.id, pk = kernel.id;
  return x.tape->emit(std::move(out), [px, pk, d](Tape& t, std::size_t self) {
    const double* gd = t.node_grad(self).data();
    const double* xd = t.node_value(px).data();
    const double* kd = t.node_value(pk).data();
    double* dxd = t.acc(px).data();
    double* dkd = t.acc(pk).data();
    for (Index o = 0; o < d.O; ++o)
      for (Index c = 0; c < d.C; ++c) {
        const double* kbase = kd + ((o * d.C + c) * d.kh) * d.kw;
        double* dkbase = dkd + ((o * d.C + c) * d.kh) * d.kw;
        for (Index ky = 0; ky < d.kh; ++ky)
          for (Index oy = 0; oy < d.Ho; ++oy) {
            const Index iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.H) continue;
            const double* grow = gd + (o * d.Ho + oy) * d.Wo;
            const double* xrow = xd + (c * d.H + iy) * d.W;
            double* dxrow = dxd + (c * d.H + iy) * d.W;
            for (Index kx = 0; kx < d.kw; ++kx) {
              Index lo, hi, ix_lo;
              if (!col_span(d, kx, lo, hi, ix_lo)) continue;
              const Index len = hi - lo + 1;
              const Eigen::Map<const ArrayX> gseg(grow + lo, len);
              StridedMut(dxrow + ix_lo, len, Eigen::InnerStride<>(d.stride)) +=
                  kbase[ky * d.kw + kx] * gseg;
              dkbase[ky * d.kw + kx] +=
                  (gseg * StridedConst(xrow + ix_lo, len, Eigen::InnerStride<>(d.stride))).sum();
            }
          }
      }
  });
}

Var channel_bias(Var x, Var b) {
  require_same_tape(x, b, "channel_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 3 || bv.rank() != 1 || bv.dim(0) != xv.dim(0))
    throw std::invalid_argument("channel_bias: shape mismatch " + shape_str(xv.shape()) + " + " +
                                shape_str(bv.shape()));
  const Index C = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  Tensor out = xv;
  for (Index c = 0; c < C; ++c)
    Eigen::Map<ArrayX>(out.data() + c * plane, plane) += bv[c];
  const std::size_t px = x.id, pb = b.id;
  return x.tape->emit(std::move(out), [px, pb, C, plane](Tape& t, std::size_t self) {
    const double* gd = t.node_grad(self).data();
    t.acc(px).array() += t.node_grad(self).array();
    Tensor& db = t.acc(pb);
    for (Index c = 0; c < C; ++c)
      db[c] += Eigen::Map<const ArrayX>(gd + c * plane, plane).sum();
  });
}

Var center_channels(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw std::invalid_argument("center_channels: rank-3 tensor required");
  const Index C = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  Tensor out = xv;
  for (Index c = 0; c < C; ++c) {
    Eigen::Map<ArrayX> block(out.data() + c * plane, plane);
    block -= block.mean();
  }
  const std::size_t px = x.id;
  return x.tape->emit(std::move(out), [px, C, plane](Tape& t, std::size_t self) {
    const double* gd = t.node_grad(self).data();
    Tensor& dx = t.acc(px);
    for (Index c = 0; c < C; ++c) {
      const Eigen::Map<const ArrayX> g(gd + c * plane, plane);
      Eigen::Map<ArrayX>(dx.data() + c * plane, plane) += g - g.mean();
    }
  });
}

Var add_rowwise(Var mat, Var v) {
  require_same_tape(mat, v, "add_rowwise");
  const Tensor& mv = mat.value();
  const Tensor& vv = v.value();
  if (mv.rank() != 2 || vv.rank() != 1 || vv.dim(0) != mv.dim(0))
    throw std::invalid_argument("add_rowwise: shape mismatch " + shape_str(mv.shape()) + " + " +
                                shape_str(vv.shape()));
  const Index R = mv.dim(0), C = mv.dim(1);
  Tensor out = mv;
  for (Index r = 0; r < R; ++r)
    Eigen::Map<ArrayX>(out.data() + r * C, C) += vv[r];
  const std::size_t pm = mat.id, pv = v.id;
  return mat.tape->emit(std::move(out), [pm, pv, R, C](Tape& t, std::size_t self) {
    const double* gd = t.node_grad(self).data();
    t.acc(pm).array() += t.node_grad(self).array();
    Tensor& dv = t.acc(pv);
    for (Index r = 0; r < R; ++r)
      dv[r] += Eigen::Map<const ArrayX>(gd + r * C, C).sum();
  });
}

// ---- reductions and normalization -----------------------------------------

Var sum(Var x) {
  Tensor out({1});
  out[0] = x.value().array().sum();
  const std::size_t px = x.id;
  return x.tape->emit(std::move(out), [px](Tape& t, std::size_t self) {
    t.acc(px).array() += t.node_grad(self)[0];
  });
}

Var row_sum(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw std::invalid_argument("row_sum: rank-2 tensor required");
  const Index R = xv.dim(0), C = xv.dim(1);
  Tensor out({R});
  for (Index r = 0; r < R; ++r)
    out[r] = Eigen::Map<const ArrayX>(xv.data() + r * C, C).sum();
  const std::size_t px = x.id;
  return x.tape->emit(std::move(out), [px, R, C](Tape& t, std::size_t self) {
    const Tensor& g = t.node_grad(self);
    Tensor& dx = t.acc(px);
    for (Index r = 0; r < R; ++r)
      Eigen::Map<ArrayX>(dx.data() + r * C, C) += g[r];
  });
}

Var scale_rows(Var x, Var s) {
  require_same_tape(x, s, "scale_rows");
  const Tensor& xv = x.value();
  const Tensor& sv = s.value();
  if (xv.rank() != 2 || sv.rank() != 1 || sv.dim(0) != xv.dim(0))
    throw std::invalid_argument("scale_rows: shape mismatch " + shape_str(xv.shape()) + " * " +
                                shape_str(sv.shape()));
  const Index R = xv.dim(0), C = xv.dim(1);
  Tensor out(xv.shape());
  for (Index r = 0; r < R; ++r)
    Eigen::Map<ArrayX>(out.data() + r * C, C) =
        sv[r] * Eigen::Map<const ArrayX>(xv.data() + r * C, C);
  const std::size_t px = x.id, ps = s.id;
  return x.tape->emit(std::move(out), [px, ps, R, C](Tape& t, std::size_t self) {
    const double* gd = t.node_grad(self).data();
    const Tensor& xv = t.node_value(px);
    const Tensor& sv = t.node_value(ps);
    Tensor& dx = t.acc(px);
    Tensor& ds = t.acc(ps);
    for (Index r = 0; r < R; ++r) {
      const Eigen::Map<const ArrayX> grow(gd + r * C, C);
      Eigen::Map<ArrayX>(dx.data() + r * C, C) += sv[r] * grow;
      ds[r] += (grow * Eigen::Map<const ArrayX>(xv.data() + r * C, C)).sum();
    }
  });
}

Tensor softmax_forward(const Tensor& x, int axis) {
  if (x.rank() == 1) {
    if (axis != 0) throw std::invalid_argument("softmax: axis out of range for vector");
    ArrayX e = (x.array() - x.array().maxCoeff()).exp();
    return Tensor(x.shape(), e / e.sum());
  }
  if (x.rank() != 2 || (axis != 0 && axis != 1))
    throw std::invalid_argument("softmax: rank-1/2 tensor with axis 0 or 1 required");
  const Index R = x.dim(0), C = x.dim(1);
  Tensor out(x.shape());
  if (axis == 1) {
    for (Index r = 0; r < R; ++r) {
      const Eigen::Map<const ArrayX> row(x.data() + r * C, C);
      ArrayX e = (row - row.maxCoeff()).exp();
      Eigen::Map<ArrayX>(out.data() + r * C, C) = e / e.sum();
    }
  } else {
    for (Index c = 0; c < C; ++c) {
      const StridedConst col(x.data() + c, R, Eigen::InnerStride<>(C));
      ArrayX e = (col - col.maxCoeff()).exp();
      StridedMut(out.data() + c, R, Eigen::InnerStride<>(C)) = e / e.sum();
    }
  }
  return out;
}

Var softmax(Var x, int axis) {
  Tensor out = softmax_forward(x.value(), axis);
  const Index rank = x.value().rank();
  const Index R = x.value().dim(0);
  const Index C = rank == 2 ? x.value().dim(1) : 1;
  const std::size_t px = x.id;
  return x.tape->emit(std::move(out), [px, axis, rank, R, C](Tape& t, std::size_t self) {
    const Tensor& s = t.node_value(self);
    const Tensor& g = t.node_grad(self);
    Tensor& dx = t.acc(px);
    auto slice_back = [](auto sv, auto gv, auto dv) {
      const double dot = (sv * gv).sum();
      dv += sv * (gv - dot);
    };
    if (rank == 1) {
      slice_back(s.array(), g.array(), dx.array());
    } else if (axis == 1) {
      for (Index r = 0; r < R; ++r)
        slice_back(Eigen::Map<const ArrayX>(s.data() + r * C, C),
                   Eigen::Map<const ArrayX>(g.data() + r * C, C),
                   Eigen::Map<ArrayX>(dx.data() + r * C, C));
    } else {
      for (Index c = 0; c < C; ++c)
        slice_back(StridedConst(s.data() + c, R, Eigen::InnerStride<>(C)),
                   StridedConst(g.data() + c, R, Eigen::InnerStride<>(C)),
                   StridedMut(dx.data() + c, R, Eigen::InnerStride<>(C)));
    }
  });
}

namespace {

constexpr double kNormFloor = 1e-12;

// y = x / ||x||; dx = g/n - x (x.g) / n^3. Zero-norm slices stay zero.
template <typename In, typename GradIn, typename Out>
void l2_backward(In x, GradIn g, Out dx) {
  const double n = std::sqrt((x * x).sum());
  if (n < kNormFloor) return;
  const double xg = (x * g).sum();
  dx += g / n - x * (xg / (n * n * n));
}

}  // namespace

Var normalize_rows(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw std::invalid_argument("normalize_rows: rank-2 tensor required");
  const Index R = xv.dim(0), C = xv.dim(1);
  Tensor out(xv.shape());
  for (Index r = 0; r < R; ++r) {
    const Eigen::Map<const ArrayX> row(xv.data() + r * C, C);
    const double n = std::sqrt((row * row).sum());
    Eigen::Map<ArrayX>(out.data() + r * C, C) = n < kNormFloor ? ArrayX::Zero(C) : (row / n).eval();
  }
  const std::size_t px = x.id;
  return x.tape->emit(std::move(out), [px, R, C](Tape& t, std::size_t self) {
    const Tensor& xv = t.node_value(px);
    const Tensor& g = t.node_grad(self);
    Tensor& dx = t.acc(px);
    for (Index r = 0; r < R; ++r)
      l2_backward(Eigen::Map<const ArrayX>(xv.data() + r * C, C),
                  Eigen::Map<const ArrayX>(g.data() + r * C, C),
                  Eigen::Map<ArrayX>(dx.data() + r * C, C));
  });
}

Var l2_normalize(Var x) {
  const Tensor& xv = x.value();
  const double n = std::sqrt((xv.array() * xv.array()).sum());
  Tensor out(xv.shape(), n < kNormFloor ? ArrayX::Zero(xv.size()).eval() : (xv.array() / n).eval());
  const std::size_t px = x.id;
  return x.tape->emit(std::move(out), [px](Tape& t, std::size_t self) {
    Eigen::Map<const ArrayX> xm(t.node_value(px).data(), t.node_value(px).size());
    Eigen::Map<const ArrayX> gm(t.node_grad(self).data(), t.node_grad(self).size());
    Eigen::Map<ArrayX> dm(t.acc(px).data(), t.acc(px).size());
    l2_backward(xm, gm, dm);
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(shape);
  const Shape orig = x.value().shape();
  const std::size_t px = x.id;
  return x.tape->emit(std::move(out), [px, orig](Tape& t, std::size_t self) {
    t.acc(px).array() += t.node_grad(self).array();
  });
}

Var euclidean_distance(Var a, Var b) {
  Var d = sub(a, b);
  return sqrt(sum(mul(d, d)));
}

}  // namespace xvpr
