#pragma once

#include <cstdint>
#include <vector>

#include "semiseg/core.hpp"
#include "semiseg/nn.hpp"

namespace semiseg {

struct ModelConfig {
  int depth = 3;           // number of down/up sampling blocks
  int base_channels = 16;
  int num_classes = 2;
  int norm_groups = 8;     // clamped to the channel count per stage
  int max_channels = 256;  // channel doubling saturates here

  void validate() const;
  int channels_at(int level) const;  // level 0 = full resolution
  bool operator==(const ModelConfig&) const = default;
};

namespace detail {

struct EncSpecs {
  nn::ConvSpec c1, c2, skip;
  nn::NormSpec n1, n2, nsk;
};
struct DecSpecs {
  nn::ConvSpec c1, c2;
  nn::NormSpec n1, n2;
};

template <typename S>
struct EncTrace {
  nn::NormTrace<S> n1, n2, nsk;
  Tensor<S> r1;   // post-ReLU output of the first conv stage
  Tensor<S> out;  // block output (post residual-add ReLU)
};
template <typename S>
struct DecTrace {
  Tensor<S> concat_in;
  nn::NormTrace<S> n1, n2;
  Tensor<S> r1;
  Tensor<S> out;
};

}  // namespace detail

template <typename S>
struct UNetTrace {
  Tensor<S> x;
  nn::NormTrace<S> stem_norm;
  Tensor<S> stem_out;
  std::vector<detail::EncTrace<S>> enc;
  std::vector<detail::DecTrace<S>> dec;  // indexed by resolution level
};

// Shared segmentation backbone: residual stride-2 blocks in the encoder,
// nearest-upsample + two 3x3 conv-norm-ReLU blocks with skip connections in
// the decoder, 1x1 head. Group normalization keeps forward passes
// batch-independent and identical between training and evaluation, which the
// iterative attack relies on.
template <typename S>
class UNet {
 public:
  UNet(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  size_t param_count() const { return params_.size(); }
  std::vector<S>& params() { return params_; }
  const std::vector<S>& params() const { return params_; }

  // x is (3, H, W) with H and W divisible by 2^depth.
  Tensor<S> forward(const Tensor<S>& x, UNetTrace<S>& trace) const;
  Tensor<S> forward(const Tensor<S>& x) const;

  // grad_params (flat, same length as params) and grad_input are accumulated
  // into when non-null. Pass grad_params = nullptr for input-only gradients.
  void backward(const UNetTrace<S>& trace, const Tensor<S>& grad_logits, S* grad_params,
                Tensor<S>* grad_input) const;

 private:
  void check_input(const Tensor<S>& x) const;

  ModelConfig cfg_;
  nn::ConvSpec stem_conv_, head_;
  nn::NormSpec stem_norm_;
  std::vector<detail::EncSpecs> enc_;
  std::vector<detail::DecSpecs> dec_;
  std::vector<S> params_;
};

using UNetF = UNet<float>;
using UNetD = UNet<double>;

}  // namespace semiseg
