#include "semiseg/nn.hpp"

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Dense>

namespace semiseg::nn {

namespace {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatCM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename S>
using MapRM = Eigen::Map<MatRM<S>>;
template <typename S>
using CMapRM = Eigen::Map<const MatRM<S>>;

template <typename S>
std::vector<S>& scratch(int which) {
  static thread_local std::vector<S> bufs[4];
  return bufs[which];
}

// --- generic im2col path (used for strided convolutions) -------------------
// cols is (in_c*k*k) x npix, row-major: each kernel-offset row is written as
// a contiguous run over output pixels.
template <typename S>
void im2col(const ConvSpec& sp, const Tensor<S>& in, S* cols, int oh, int ow) {
  const int k = sp.k, stride = sp.stride, pad = sp.pad;
  const size_t npix = static_cast<size_t>(oh) * ow;
  for (int ci = 0; ci < sp.in_c; ++ci) {
    const S* src = in.plane(ci);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        S* dst = cols + (((static_cast<size_t>(ci) * k + ky) * k + kx)) * npix;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          const bool y_ok = (iy >= 0 && iy < in.h);
          const S* src_row = y_ok ? src + static_cast<size_t>(iy) * in.w : nullptr;
          S* drow = dst + static_cast<size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            drow[ox] = (y_ok && ix >= 0 && ix < in.w) ? src_row[ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const ConvSpec& sp, const S* cols, Tensor<S>& grad_in, int oh, int ow) {
  const int k = sp.k, stride = sp.stride, pad = sp.pad;
  const size_t npix = static_cast<size_t>(oh) * ow;
  for (int ci = 0; ci < sp.in_c; ++ci) {
    S* dst = grad_in.plane(ci);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const S* src = cols + (((static_cast<size_t>(ci) * k + ky) * k + kx)) * npix;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= grad_in.h) continue;
          S* dst_row = dst + static_cast<size_t>(iy) * grad_in.w;
          const S* srow = src + static_cast<size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < grad_in.w) dst_row[ix] += srow[ox];
          }
        }
      }
    }
  }
}

// --- fast 3x3 stride-1 path -------------------------------------------------
// The conv is nine rank-(in_c) GEMM accumulations on shifted contiguous
// column ranges of the raw (in_c x H*W) plane matrix. Horizontal shifts wrap
// across row boundaries, so the left/right image columns are recomputed
// exactly afterwards.

// weights gathered per offset: wk[off] is (out_c x in_c) column-major
template <typename S>
void gather_offset_weights(const S* w, int out_c, int in_c, std::vector<S>& wk) {
  wk.resize(static_cast<size_t>(9) * out_c * in_c);
  for (int off = 0; off < 9; ++off) {
    S* dst = wk.data() + static_cast<size_t>(off) * out_c * in_c;
    for (int ic = 0; ic < in_c; ++ic)
      for (int oc = 0; oc < out_c; ++oc)
        dst[static_cast<size_t>(ic) * out_c + oc] =
            w[(static_cast<size_t>(oc) * in_c + ic) * 9 + off];
  }
}

// exact recomputation of the x-edge columns via gathered patches + one GEMM
template <typename S>
void conv3x3_recompute_edges(const S* wk, const Tensor<S>& in, Tensor<S>& out) {
  const int h = in.h, w = in.w, in_c = in.c, out_c = out.c;
  const int nx = (w > 1) ? 2 : 1;
  const int n_edge = h * nx;
  const long rows = static_cast<long>(in_c) * 9;

  auto& patches = scratch<S>(2);
  patches.assign(static_cast<size_t>(rows) * n_edge, S(0));
  for (int j = 0; j < n_edge; ++j) {
    const int y = j / nx;
    const int x = (j % nx == 0) ? 0 : w - 1;
    S* col = patches.data() + static_cast<size_t>(j) * rows;
    for (int dy = -1; dy <= 1; ++dy) {
      const int iy = y + dy;
      if (iy < 0 || iy >= h) continue;
      for (int dx = -1; dx <= 1; ++dx) {
        const int ix = x + dx;
        if (ix < 0 || ix >= w) continue;
        const int off = (dy + 1) * 3 + (dx + 1);
        const S* src = in.data() + static_cast<size_t>(iy) * w + ix;
        for (int ic = 0; ic < in_c; ++ic)
          col[static_cast<size_t>(ic) * 9 + off] = src[static_cast<size_t>(ic) * h * w];
      }
    }
  }

  // weights per (ic, offset) recovered from the per-offset gather: the
  // patch rows are ordered (ic major, offset minor), matching the original
  // row-major weight layout, so we re-gather into (out_c x rows) col-major.
  auto& wfull = scratch<S>(3);
  wfull.resize(static_cast<size_t>(out_c) * rows);
  for (int off = 0; off < 9; ++off) {
    const S* src = wk + static_cast<size_t>(off) * out_c * in_c;
    for (int ic = 0; ic < in_c; ++ic)
      for (int oc = 0; oc < out_c; ++oc)
        wfull[(static_cast<size_t>(ic) * 9 + off) * out_c + oc] =
            src[static_cast<size_t>(ic) * out_c + oc];
  }

  Eigen::Map<const MatCM<S>> W(wfull.data(), out_c, rows);
  Eigen::Map<const MatCM<S>> P(patches.data(), rows, n_edge);
  MatCM<S> E(out_c, n_edge);
  E.noalias() = W * P;
  for (int j = 0; j < n_edge; ++j) {
    const int y = j / nx;
    const int x = (j % nx == 0) ? 0 : w - 1;
    for (int oc = 0; oc < out_c; ++oc) out.at(oc, y, x) = E(oc, j);
  }
}

// out = conv3x3(in, wk) with zero padding; bias added when non-null
template <typename S>
void conv3x3_s1(const S* wk, const S* bias, const Tensor<S>& in, Tensor<S>& out, int out_c) {
  const int h = in.h, w = in.w, in_c = in.c;
  const long p = static_cast<long>(h) * w;
  out = Tensor<S>(out_c, h, w);
  CMapRM<S> I(in.data(), in_c, p);
  MapRM<S> O(out.data(), out_c, p);
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const int off = (dy + 1) * 3 + (dx + 1);
      const long s = static_cast<long>(dy) * w + dx;
      long a = std::max(0L, static_cast<long>(-dy) * w);
      long b = p - std::max(0L, static_cast<long>(dy) * w);
      a = std::max(a, -s);
      b = std::min(b, p - s);
      if (b <= a) continue;
      Eigen::Map<const MatCM<S>> Wk(wk + static_cast<size_t>(off) * out_c * in_c, out_c, in_c);
      O.middleCols(a, b - a).noalias() += Wk * I.middleCols(a + s, b - a);
    }
  if (w > 1) conv3x3_recompute_edges(wk, in, out);
  if (bias)
    for (int oc = 0; oc < out_c; ++oc) O.row(oc).array() += bias[oc];
}

// dW accumulation for the 3x3 stride-1 case: full-range GEMM per offset, then
// subtraction of the wrapped edge-column outer products.
template <typename S>
void conv3x3_s1_weight_grad(const Tensor<S>& in, const Tensor<S>& grad_out, S* grad_params,
                            const ConvSpec& sp) {
  const int h = in.h, w = in.w, in_c = in.c, out_c = grad_out.c;
  const long p = static_cast<long>(h) * w;
  CMapRM<S> I(in.data(), in_c, p);
  CMapRM<S> G(grad_out.data(), out_c, p);
  MatCM<S> dwk(out_c, in_c);
  auto& ebuf_in = scratch<S>(2);
  auto& ebuf_go = scratch<S>(3);
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const int off = (dy + 1) * 3 + (dx + 1);
      const long s = static_cast<long>(dy) * w + dx;
      long a = std::max(0L, static_cast<long>(-dy) * w);
      long b = p - std::max(0L, static_cast<long>(dy) * w);
      a = std::max(a, -s);
      b = std::min(b, p - s);
      if (b <= a) continue;
      dwk.noalias() = G.middleCols(a, b - a) * I.middleCols(a + s, b - a).transpose();
      if (dx != 0 && w > 1) {
        // collect the output pixels whose shifted input column crossed a row
        const int x_edge = (dx == -1) ? 0 : w - 1;
        int n_edge = 0;
        ebuf_go.resize(static_cast<size_t>(out_c) * h);
        ebuf_in.resize(static_cast<size_t>(in_c) * h);
        for (int y = 0; y < h; ++y) {
          const long pix = static_cast<long>(y) * w + x_edge;
          if (pix < a || pix >= b) continue;
          for (int oc = 0; oc < out_c; ++oc)
            ebuf_go[static_cast<size_t>(oc) * h + n_edge] = grad_out.v[oc * p + pix];
          for (int ic = 0; ic < in_c; ++ic)
            ebuf_in[static_cast<size_t>(ic) * h + n_edge] = in.v[ic * p + pix + s];
          ++n_edge;
        }
        if (n_edge > 0) {
          Eigen::Map<const MatRM<S>, 0, Eigen::OuterStride<>> Ge(ebuf_go.data(), out_c, n_edge,
                                                                 Eigen::OuterStride<>(h));
          Eigen::Map<const MatRM<S>, 0, Eigen::OuterStride<>> Ie(ebuf_in.data(), in_c, n_edge,
                                                                 Eigen::OuterStride<>(h));
          dwk.noalias() -= Ge * Ie.transpose();
        }
      }
      for (int oc = 0; oc < out_c; ++oc)
        for (int ic = 0; ic < in_c; ++ic)
          grad_params[sp.w_off + (static_cast<size_t>(oc) * in_c + ic) * 9 + off] +=
              dwk(oc, ic);
    }
}

}  // namespace

template <typename S>
void conv_forward(const ConvSpec& sp, const S* params, const Tensor<S>& in, Tensor<S>& out) {
  const int oh = sp.out_dim(in.h), ow = sp.out_dim(in.w);
  const long npix = static_cast<long>(oh) * ow;

  if (sp.k == 3 && sp.stride == 1) {
    auto& wk = scratch<S>(0);
    gather_offset_weights(params + sp.w_off, sp.out_c, sp.in_c, wk);
    conv3x3_s1(wk.data(), params + sp.b_off, in, out, sp.out_c);
    return;
  }

  out = Tensor<S>(sp.out_c, oh, ow);
  Eigen::Map<const MatRM<S>> W(params + sp.w_off, sp.out_c,
                               static_cast<long>(sp.in_c) * sp.k * sp.k);
  MapRM<S> O(out.data(), sp.out_c, npix);
  if (sp.k == 1 && sp.stride == 1) {
    CMapRM<S> I(in.data(), sp.in_c, npix);
    O.noalias() = W * I;
  } else {
    const long rows = static_cast<long>(sp.in_c) * sp.k * sp.k;
    auto& buf = scratch<S>(0);
    buf.resize(rows * npix);
    im2col(sp, in, buf.data(), oh, ow);
    CMapRM<S> cols(buf.data(), rows, npix);
    O.noalias() = W * cols;
  }
  for (int oc = 0; oc < sp.out_c; ++oc) O.row(oc).array() += params[sp.b_off + oc];
}

template <typename S>
void conv_backward(const ConvSpec& sp, const S* params, const Tensor<S>& in,
                   const Tensor<S>& grad_out, Tensor<S>* grad_in, S* grad_params) {
  const int oh = grad_out.h, ow = grad_out.w;
  const long npix = static_cast<long>(oh) * ow;
  const long rows = static_cast<long>(sp.in_c) * sp.k * sp.k;
  CMapRM<S> G(grad_out.data(), sp.out_c, npix);

  if (grad_params) {
    if (sp.k == 3 && sp.stride == 1) {
      conv3x3_s1_weight_grad(in, grad_out, grad_params, sp);
    } else if (sp.k == 1 && sp.stride == 1) {
      CMapRM<S> I(in.data(), sp.in_c, npix);
      MapRM<S> gW(grad_params + sp.w_off, sp.out_c, rows);
      gW.noalias() += G * I.transpose();
    } else {
      auto& buf = scratch<S>(0);
      buf.resize(rows * npix);
      im2col(sp, in, buf.data(), oh, ow);
      CMapRM<S> cols(buf.data(), rows, npix);
      MapRM<S> gW(grad_params + sp.w_off, sp.out_c, rows);
      gW.noalias() += G * cols.transpose();
    }
    for (int oc = 0; oc < sp.out_c; ++oc) grad_params[sp.b_off + oc] += G.row(oc).sum();
  }

  if (grad_in) {
    if (sp.k == 3 && sp.stride == 1) {
      // the input gradient is a 3x3 convolution of grad_out with the
      // spatially flipped, channel-transposed kernel
      auto& wk = scratch<S>(1);
      wk.resize(static_cast<size_t>(9) * sp.in_c * sp.out_c);
      const S* w = params + sp.w_off;
      for (int off = 0; off < 9; ++off) {
        S* dst = wk.data() + static_cast<size_t>(off) * sp.in_c * sp.out_c;
        const int flip = 8 - off;
        for (int oc = 0; oc < sp.out_c; ++oc)
          for (int ic = 0; ic < sp.in_c; ++ic)
            dst[static_cast<size_t>(oc) * sp.in_c + ic] =
                w[(static_cast<size_t>(oc) * sp.in_c + ic) * 9 + flip];
      }
      Tensor<S> tmp;
      conv3x3_s1(wk.data(), static_cast<const S*>(nullptr), grad_out, tmp, sp.in_c);
      for (size_t i = 0; i < grad_in->v.size(); ++i) grad_in->v[i] += tmp.v[i];
    } else if (sp.k == 1 && sp.stride == 1) {
      Eigen::Map<const MatRM<S>> W(params + sp.w_off, sp.out_c, rows);
      MapRM<S> GI(grad_in->data(), sp.in_c, npix);
      GI.noalias() += W.transpose() * G;
    } else {
      Eigen::Map<const MatRM<S>> W(params + sp.w_off, sp.out_c, rows);
      auto& buf = scratch<S>(1);
      buf.resize(rows * npix);
      MapRM<S> dcols(buf.data(), rows, npix);
      dcols.noalias() = W.transpose() * G;
      col2im_add(sp, buf.data(), *grad_in, oh, ow);
    }
  }
}

template <typename S>
void norm_forward(const NormSpec& sp, const S* params, const Tensor<S>& in, Tensor<S>& out,
                  NormTrace<S>* trace) {
  const int cpg = sp.channels / sp.groups;
  const size_t plane = static_cast<size_t>(in.h) * in.w;
  const size_t m = plane * cpg;
  out = Tensor<S>(in.c, in.h, in.w);
  if (trace) {
    trace->xhat = Tensor<S>(in.c, in.h, in.w);
    trace->inv_std.assign(sp.groups, S(0));
  }
  for (int g = 0; g < sp.groups; ++g) {
    const S* x = in.plane(g * cpg);
    double sum = 0, sum2 = 0;
    for (size_t i = 0; i < m; ++i) {
      sum += x[i];
      sum2 += static_cast<double>(x[i]) * x[i];
    }
    const double mean = sum / m;
    const double var = std::max(0.0, sum2 / m - mean * mean);
    const S inv_std = static_cast<S>(1.0 / std::sqrt(var + sp.eps));
    if (trace) trace->inv_std[g] = inv_std;
    for (int cc = 0; cc < cpg; ++cc) {
      const int ci = g * cpg + cc;
      const S gamma = params[sp.g_off + ci], beta = params[sp.b_off + ci];
      const S mu = static_cast<S>(mean);
      const S* xi = in.plane(ci);
      S* oi = out.plane(ci);
      S* hi = trace ? trace->xhat.plane(ci) : nullptr;
      for (size_t i = 0; i < plane; ++i) {
        const S xn = (xi[i] - mu) * inv_std;
        if (hi) hi[i] = xn;
        oi[i] = gamma * xn + beta;
      }
    }
  }
}

template <typename S>
void norm_backward(const NormSpec& sp, const S* params, const NormTrace<S>& trace,
                   const Tensor<S>& grad_out, Tensor<S>& grad_in, S* grad_params) {
  const int cpg = sp.channels / sp.groups;
  const size_t plane = static_cast<size_t>(grad_out.h) * grad_out.w;
  const size_t m = plane * cpg;
  grad_in = Tensor<S>(grad_out.c, grad_out.h, grad_out.w);
  for (int g = 0; g < sp.groups; ++g) {
    double s1 = 0, s2 = 0;
    for (int cc = 0; cc < cpg; ++cc) {
      const int ci = g * cpg + cc;
      const S gamma = params[sp.g_off + ci];
      const S* go = grad_out.plane(ci);
      const S* xh = trace.xhat.plane(ci);
      double dg = 0, db = 0;
      for (size_t i = 0; i < plane; ++i) {
        const double dxh = static_cast<double>(go[i]) * gamma;
        s1 += dxh;
        s2 += dxh * xh[i];
        dg += static_cast<double>(go[i]) * xh[i];
        db += go[i];
      }
      if (grad_params) {
        grad_params[sp.g_off + ci] += static_cast<S>(dg);
        grad_params[sp.b_off + ci] += static_cast<S>(db);
      }
    }
    const double inv_std = trace.inv_std[g];
    const double c1 = s1 / m, c2 = s2 / m;
    for (int cc = 0; cc < cpg; ++cc) {
      const int ci = g * cpg + cc;
      const S gamma = params[sp.g_off + ci];
      const S* go = grad_out.plane(ci);
      const S* xh = trace.xhat.plane(ci);
      S* gi = grad_in.plane(ci);
      for (size_t i = 0; i < plane; ++i) {
        const double dxh = static_cast<double>(go[i]) * gamma;
        gi[i] = static_cast<S>(inv_std * (dxh - c1 - static_cast<double>(xh[i]) * c2));
      }
    }
  }
}

template <typename S>
void relu_inplace(Tensor<S>& t) {
  for (S& x : t.v)
    if (x < S(0)) x = S(0);
}

template <typename S>
void relu_backward_inplace(const Tensor<S>& activated_out, Tensor<S>& grad) {
  for (size_t i = 0; i < grad.v.size(); ++i)
    if (activated_out.v[i] <= S(0)) grad.v[i] = S(0);
}

template <typename S>
Tensor<S> upsample2x_nearest(const Tensor<S>& in) {
  Tensor<S> out(in.c, in.h * 2, in.w * 2);
  for (int ci = 0; ci < in.c; ++ci) {
    const S* src = in.plane(ci);
    S* dst = out.plane(ci);
    for (int y = 0; y < out.h; ++y) {
      const S* sr = src + static_cast<size_t>(y / 2) * in.w;
      S* dr = dst + static_cast<size_t>(y) * out.w;
      for (int x = 0; x < out.w; ++x) dr[x] = sr[x / 2];
    }
  }
  return out;
}

template <typename S>
Tensor<S> upsample2x_backward(const Tensor<S>& grad_out) {
  Tensor<S> grad_in(grad_out.c, grad_out.h / 2, grad_out.w / 2);
  for (int ci = 0; ci < grad_out.c; ++ci) {
    const S* src = grad_out.plane(ci);
    S* dst = grad_in.plane(ci);
    for (int y = 0; y < grad_out.h; ++y) {
      const S* sr = src + static_cast<size_t>(y) * grad_out.w;
      S* dr = dst + static_cast<size_t>(y / 2) * grad_in.w;
      for (int x = 0; x < grad_out.w; ++x) dr[x / 2] += sr[x];
    }
  }
  return grad_in;
}

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
  return out;
}

template <typename S>
void split_channels(const Tensor<S>& joined, Tensor<S>& a, Tensor<S>& b) {
  std::copy(joined.v.begin(), joined.v.begin() + a.v.size(), a.v.begin());
  std::copy(joined.v.begin() + a.v.size(), joined.v.end(), b.v.begin());
}

template <typename S>
void sgd_momentum_step(std::vector<S>& w, const std::vector<S>& g, std::vector<S>& v,
                       double lr, double momentum) {
  const S mu = static_cast<S>(momentum), eta = static_cast<S>(lr);
  for (size_t i = 0; i < w.size(); ++i) {
    v[i] = mu * v[i] + g[i];
    w[i] -= eta * v[i];
  }
}

#define SEMISEG_INSTANTIATE(S)                                                              \
  template void conv_forward<S>(const ConvSpec&, const S*, const Tensor<S>&, Tensor<S>&);   \
  template void conv_backward<S>(const ConvSpec&, const S*, const Tensor<S>&,               \
                                 const Tensor<S>&, Tensor<S>*, S*);                         \
  template void norm_forward<S>(const NormSpec&, const S*, const Tensor<S>&, Tensor<S>&,    \
                                NormTrace<S>*);                                             \
  template void norm_backward<S>(const NormSpec&, const S*, const NormTrace<S>&,            \
                                 const Tensor<S>&, Tensor<S>&, S*);                         \
  template void relu_inplace<S>(Tensor<S>&);                                                \
  template void relu_backward_inplace<S>(const Tensor<S>&, Tensor<S>&);                     \
  template Tensor<S> upsample2x_nearest<S>(const Tensor<S>&);                               \
  template Tensor<S> upsample2x_backward<S>(const Tensor<S>&);                              \
  template Tensor<S> concat_channels<S>(const Tensor<S>&, const Tensor<S>&);                \
  template void split_channels<S>(const Tensor<S>&, Tensor<S>&, Tensor<S>&);                \
  template void sgd_momentum_step<S>(std::vector<S>&, const std::vector<S>&,                \
                                     std::vector<S>&, double, double);

SEMISEG_INSTANTIATE(float)
SEMISEG_INSTANTIATE(double)
#undef SEMISEG_INSTANTIATE

}  // namespace semiseg::nn
