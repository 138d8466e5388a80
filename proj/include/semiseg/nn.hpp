#pragma once

#include <cstddef>
#include <vector>

#include "semiseg/core.hpp"

// Minimal CPU layer primitives with explicit backward passes. Every backward
// can produce gradients with respect to the layer input (needed by the
// gradient-sign attack) and, optionally, with respect to the parameters.
namespace semiseg::nn {

struct ConvSpec {
  int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
  size_t w_off = 0, b_off = 0;  // offsets into the flat parameter vector

  size_t weight_count() const { return static_cast<size_t>(out_c) * in_c * k * k; }
  size_t param_count() const { return weight_count() + out_c; }
  int out_dim(int d) const { return (d + 2 * pad - k) / stride + 1; }
};

struct NormSpec {
  int channels = 0, groups = 1;
  size_t g_off = 0, b_off = 0;
  double eps = 1e-5;

  size_t param_count() const { return 2 * static_cast<size_t>(channels); }
};

template <typename S>
struct NormTrace {
  Tensor<S> xhat;              // normalized pre-affine activations
  std::vector<S> inv_std;      // one per group
};

template <typename S>
void conv_forward(const ConvSpec& spec, const S* params, const Tensor<S>& in, Tensor<S>& out);

// Adds into grad_in / grad_params when non-null; grad_in must be pre-sized and
// zeroed (or hold gradients to accumulate onto).
template <typename S>
void conv_backward(const ConvSpec& spec, const S* params, const Tensor<S>& in,
                   const Tensor<S>& grad_out, Tensor<S>* grad_in, S* grad_params);

template <typename S>
void norm_forward(const NormSpec& spec, const S* params, const Tensor<S>& in, Tensor<S>& out,
                  NormTrace<S>* trace);

template <typename S>
void norm_backward(const NormSpec& spec, const S* params, const NormTrace<S>& trace,
                   const Tensor<S>& grad_out, Tensor<S>& grad_in, S* grad_params);

template <typename S>
void relu_inplace(Tensor<S>& t);

// grad *= (activated_out > 0), elementwise.
template <typename S>
void relu_backward_inplace(const Tensor<S>& activated_out, Tensor<S>& grad);

template <typename S>
Tensor<S> upsample2x_nearest(const Tensor<S>& in);

template <typename S>
Tensor<S> upsample2x_backward(const Tensor<S>& grad_out);

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
void split_channels(const Tensor<S>& joined, Tensor<S>& a, Tensor<S>& b);

// v <- momentum * v + g;  w <- w - lr * v
template <typename S>
void sgd_momentum_step(std::vector<S>& w, const std::vector<S>& g, std::vector<S>& v,
                       double lr, double momentum);

}  // namespace semiseg::nn
