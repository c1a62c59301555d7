#include "xvpr/cbp.hpp"

#include "xvpr/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace xvpr {

CountSketchParams CountSketchParams::make(Index input_dim, Index output_dim, std::uint64_t seed) {
  if (input_dim <= 0 || output_dim <= 0)
    throw std::invalid_argument("count_sketch: dimensions must be positive");
  CountSketchParams p;
  p.input_dim = input_dim;
  p.output_dim = output_dim;
  p.seed = seed;
  p.index_map.resize(static_cast<std::size_t>(input_dim));
  p.sign_map.resize(static_cast<std::size_t>(input_dim));
  Rng rng(seed);
  for (Index i = 0; i < input_dim; ++i) {
    p.index_map[static_cast<std::size_t>(i)] = rng.uniform_int(output_dim);
    p.sign_map[static_cast<std::size_t>(i)] = rng.coin() ? 1.0 : -1.0;
  }
  return p;
}

Tensor count_sketch_forward(const Tensor& v, const CountSketchParams& params) {
  if (v.rank() != 1 || v.dim(0) != params.input_dim)
    throw std::invalid_argument("count_sketch: input length " + shape_str(v.shape()) +
                                " does not match projection dim " +
                                std::to_string(params.input_dim));
  Tensor out({params.output_dim});
  for (Index i = 0; i < params.input_dim; ++i)
    out[params.index_map[static_cast<std::size_t>(i)]] +=
        params.sign_map[static_cast<std::size_t>(i)] * v[i];
  return out;
}

Var count_sketch(Var v, const CountSketchParams& params) {
  Tensor out = count_sketch_forward(v.value(), params);
  const std::size_t pv = v.id;
  const CountSketchParams* p = &params;  // caller owns; params outlive the tape
  return v.tape->emit(std::move(out), [pv, p](Tape& t, std::size_t self) {
    const Tensor& g = t.node_grad(self);
    Tensor& dv = t.acc(pv);
    for (Index i = 0; i < p->input_dim; ++i)
      dv[i] += p->sign_map[static_cast<std::size_t>(i)] *
               g[p->index_map[static_cast<std::size_t>(i)]];
  });
}

namespace {

std::vector<Complex> to_complex(const Tensor& t) {
  std::vector<Complex> out(static_cast<std::size_t>(t.size()));
  for (Index i = 0; i < t.size(); ++i) out[static_cast<std::size_t>(i)] = Complex(t[i], 0.0);
  return out;
}

Tensor real_part(const std::vector<Complex>& v, double residue_tol) {
  Tensor out({static_cast<Index>(v.size())});
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::abs(v[i].imag()) > residue_tol)
      throw std::runtime_error("circular_convolve: imaginary residue " +
                               std::to_string(std::abs(v[i].imag())) + " above tolerance");
    out[static_cast<Index>(i)] = v[i].real();
  }
  return out;
}

// Round-off in the transforms scales with the operand magnitudes; the
// residue bound does too.
double residue_tol(const Tensor& a, const Tensor& b) {
  const double scale = std::sqrt(a.array().square().sum() * b.array().square().sum());
  return 1e-9 * (1.0 + scale);
}

}  // namespace

Tensor circular_convolve_forward(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.dim(0) != b.dim(0))
    throw std::invalid_argument("circular_convolve: vectors of equal length required, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const double tol = residue_tol(a, b);
  auto fa = fft(to_complex(a));
  auto fb = fft(to_complex(b));
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  return real_part(ifft(std::move(fa)), tol);
}

Var circular_convolve(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("circular_convolve: operands on different tapes");
  Tensor out = circular_convolve_forward(a.value(), b.value());
  const std::size_t pa = a.id, pb = b.id;
  return a.tape->emit(std::move(out), [pa, pb](Tape& t, std::size_t self) {
    // z = a (*) b  =>  dL/da = corr(g, b) = ifft(conj(fft(b)) . fft(g)), same for b.
    const Tensor& grad = t.node_grad(self);
    const double tol_a = residue_tol(grad, t.node_value(pb));
    const double tol_b = residue_tol(grad, t.node_value(pa));
    const auto fg = fft(to_complex(grad));
    auto fa = fft(to_complex(t.node_value(pa)));
    auto fb = fft(to_complex(t.node_value(pb)));
    for (std::size_t i = 0; i < fg.size(); ++i) {
      const Complex g = fg[i];
      const Complex a_conj = std::conj(fa[i]);
      fb[i] = std::conj(fb[i]) * g;  // -> da spectrum
      fa[i] = a_conj * g;            // -> db spectrum
    }
    const Tensor da = real_part(ifft(std::move(fb)), tol_a);
    const Tensor db = real_part(ifft(std::move(fa)), tol_b);
    t.acc(pa).array() += da.array();
    t.acc(pb).array() += db.array();
  });
}

Var cbp_fuse(Var u, Var v, const CountSketchParams& pu, const CountSketchParams& pv,
             bool ssr_normalize) {
  if (pu.output_dim != pv.output_dim)
    throw std::invalid_argument("cbp_fuse: projections disagree on output dim");
  Var su = count_sketch(u, pu);
  Var sv = count_sketch(v, pv);
  Var fused = circular_convolve(su, sv);
  if (!ssr_normalize) return fused;
  return l2_normalize(signed_sqrt(fused));
}

ClassifierParams ClassifierParams::init(Index input_dim, Index hidden1, Index hidden2, Rng& rng) {
  auto uniform_weights = [&rng](std::string name, Index out_dim, Index in_dim) {
    const double s = std::sqrt(6.0 / static_cast<double>(in_dim));  // He-uniform, see encoder init
    Tensor w({out_dim, in_dim});
    for (Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-s, s);
    return Parameter(std::move(name), std::move(w));
  };
  ClassifierParams p{
      uniform_weights("cls_mlp.w1", hidden1, input_dim), Parameter("cls_mlp.b1", Tensor({hidden1})),
      uniform_weights("cls_mlp.w2", hidden2, hidden1),   Parameter("cls_mlp.b2", Tensor({hidden2})),
      uniform_weights("cls_mlp.w3", 1, hidden2),         Parameter("cls_mlp.b3", Tensor({1}))};
  return p;
}

std::vector<Parameter*> ClassifierParams::parameters() {
  return {&w1, &b1, &w2, &b2, &w3, &b3};
}

Var mlp_similarity(Var fused, Tape& tape, ClassifierParams& params) {
  Var h1 = relu(linear(fused, tape.watch(params.w1), tape.watch(params.b1)));
  Var h2 = relu(linear(h1, tape.watch(params.w2), tape.watch(params.b2)));
  Var logit = linear(h2, tape.watch(params.w3), tape.watch(params.b3));
  return sigmoid(logit);
}

}  // namespace xvpr
