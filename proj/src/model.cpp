#include "semiseg/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace semiseg {

void ModelConfig::validate() const {
  if (depth < 2) throw std::invalid_argument("ModelConfig: depth must be >= 2");
  if (base_channels < 1) throw std::invalid_argument("ModelConfig: base_channels must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes must be >= 2");
  if (norm_groups < 1) throw std::invalid_argument("ModelConfig: norm_groups must be >= 1");
}

int ModelConfig::channels_at(int level) const {
  long long ch = base_channels;
  for (int i = 0; i < level; ++i) ch = std::min<long long>(ch * 2, max_channels);
  return static_cast<int>(ch);
}

namespace {

int groups_for(int channels, int requested) {
  int g = std::min(requested, channels);
  while (channels % g != 0) --g;  // always terminates at g = 1
  return g;
}

}  // namespace

template <typename S>
UNet<S>::UNet(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  size_t off = 0;
  auto add_conv = [&off](int in_c, int out_c, int k, int stride) {
    nn::ConvSpec sp;
    sp.in_c = in_c;
    sp.out_c = out_c;
    sp.k = k;
    sp.stride = stride;
    sp.pad = (k == 3) ? 1 : 0;
    sp.w_off = off;
    sp.b_off = off + sp.weight_count();
    off += sp.param_count();
    return sp;
  };
  auto add_norm = [&off, &cfg](int channels) {
    nn::NormSpec sp;
    sp.channels = channels;
    sp.groups = groups_for(channels, cfg.norm_groups);
    sp.g_off = off;
    sp.b_off = off + channels;
    off += sp.param_count();
    return sp;
  };

  const int c0 = cfg_.channels_at(0);
  stem_conv_ = add_conv(3, c0, 3, 1);
  stem_norm_ = add_norm(c0);
  for (int i = 0; i < cfg_.depth; ++i) {
    const int ci = cfg_.channels_at(i), cn = cfg_.channels_at(i + 1);
    detail::EncSpecs e;
    e.c1 = add_conv(ci, cn, 3, 2);
    e.n1 = add_norm(cn);
    e.c2 = add_conv(cn, cn, 3, 1);
    e.n2 = add_norm(cn);
    e.skip = add_conv(ci, cn, 1, 2);
    e.nsk = add_norm(cn);
    enc_.push_back(e);
  }
  dec_.resize(cfg_.depth);
  for (int lvl = cfg_.depth - 1; lvl >= 0; --lvl) {
    const int c_deep = cfg_.channels_at(lvl + 1), c_here = cfg_.channels_at(lvl);
    detail::DecSpecs d;
    d.c1 = add_conv(c_deep + c_here, c_here, 3, 1);
    d.n1 = add_norm(c_here);
    d.c2 = add_conv(c_here, c_here, 3, 1);
    d.n2 = add_norm(c_here);
    dec_[lvl] = d;
  }
  head_ = add_conv(c0, cfg_.num_classes, 1, 1);

  // He-normal conv weights, zero biases, identity norm affine. The draw
  // sequence is fixed, so a seed fully determines the parameters.
  params_.assign(off, S(0));
  Rng rng(seed);
  auto init_conv = [&](const nn::ConvSpec& sp) {
    const double std = std::sqrt(2.0 / (static_cast<double>(sp.in_c) * sp.k * sp.k));
    for (size_t i = 0; i < sp.weight_count(); ++i)
      params_[sp.w_off + i] = static_cast<S>(normal(rng) * std);
  };
  auto init_norm = [&](const nn::NormSpec& sp) {
    for (int ci = 0; ci < sp.channels; ++ci) params_[sp.g_off + ci] = S(1);
  };
  init_conv(stem_conv_);
  init_norm(stem_norm_);
  for (const auto& e : enc_) {
    init_conv(e.c1);
    init_norm(e.n1);
    init_conv(e.c2);
    init_norm(e.n2);
    init_conv(e.skip);
    init_norm(e.nsk);
  }
  for (int lvl = cfg_.depth - 1; lvl >= 0; --lvl) {
    init_conv(dec_[lvl].c1);
    init_norm(dec_[lvl].n1);
    init_conv(dec_[lvl].c2);
    init_norm(dec_[lvl].n2);
  }
  init_conv(head_);
}

template <typename S>
void UNet<S>::check_input(const Tensor<S>& x) const {
  if (x.c != 3) throw std::invalid_argument("UNet::forward: expected 3 input channels");
  const int div = 1 << cfg_.depth;
  if (x.h % div != 0 || x.w % div != 0)
    throw std::invalid_argument("UNet::forward: spatial dims must be divisible by 2^depth");
}

template <typename S>
Tensor<S> UNet<S>::forward(const Tensor<S>& x, UNetTrace<S>& trace) const {
  check_input(x);
  const S* p = params_.data();
  trace.x = x;
  trace.enc.assign(cfg_.depth, {});
  trace.dec.assign(cfg_.depth, {});

  Tensor<S> t, t2;
  nn::conv_forward(stem_conv_, p, x, t);
  nn::norm_forward(stem_norm_, p, t, t2, &trace.stem_norm);
  nn::relu_inplace(t2);
  trace.stem_out = t2;

  // encoder: e[i] holds the activation entering block i (e[0] = stem output)
  const Tensor<S>* cur = &trace.stem_out;
  for (int i = 0; i < cfg_.depth; ++i) {
    auto& et = trace.enc[i];
    const auto& es = enc_[i];
    Tensor<S> main, skip;
    nn::conv_forward(es.c1, p, *cur, t);
    nn::norm_forward(es.n1, p, t, et.r1, &et.n1);
    nn::relu_inplace(et.r1);
    nn::conv_forward(es.c2, p, et.r1, t);
    nn::norm_forward(es.n2, p, t, main, &et.n2);
    nn::conv_forward(es.skip, p, *cur, t);
    nn::norm_forward(es.nsk, p, t, skip, &et.nsk);
    for (size_t j = 0; j < main.v.size(); ++j) main.v[j] += skip.v[j];
    nn::relu_inplace(main);
    et.out = std::move(main);
    cur = &et.out;
  }

  for (int lvl = cfg_.depth - 1; lvl >= 0; --lvl) {
    auto& dt = trace.dec[lvl];
    const auto& ds = dec_[lvl];
    Tensor<S> up = nn::upsample2x_nearest(*cur);
    const Tensor<S>& skip = (lvl > 0) ? trace.enc[lvl - 1].out : trace.stem_out;
    dt.concat_in = nn::concat_channels(up, skip);
    nn::conv_forward(ds.c1, p, dt.concat_in, t);
    nn::norm_forward(ds.n1, p, t, dt.r1, &dt.n1);
    nn::relu_inplace(dt.r1);
    nn::conv_forward(ds.c2, p, dt.r1, t);
    nn::norm_forward(ds.n2, p, t, dt.out, &dt.n2);
    nn::relu_inplace(dt.out);
    cur = &dt.out;
  }

  Tensor<S> logits;
  nn::conv_forward(head_, p, *cur, logits);
  return logits;
}

template <typename S>
Tensor<S> UNet<S>::forward(const Tensor<S>& x) const {
  UNetTrace<S> trace;
  return forward(x, trace);
}

template <typename S>
void UNet<S>::backward(const UNetTrace<S>& trace, const Tensor<S>& grad_logits, S* grad_params,
                       Tensor<S>* grad_input) const {
  const S* p = params_.data();
  Tensor<S> d_cur(trace.dec[0].out.c, trace.dec[0].out.h, trace.dec[0].out.w);
  nn::conv_backward(head_, p, trace.dec[0].out, grad_logits, &d_cur, grad_params);

  // Gradients pending for each encoder activation e[i] (e[0] = stem output):
  // decoder skip paths contribute first, encoder chain contributions are
  // added as the backward sweep reaches them.
  std::vector<Tensor<S>> grad_e(cfg_.depth + 1);
  for (int i = 0; i <= cfg_.depth; ++i) {
    const Tensor<S>& ref = (i == 0) ? trace.stem_out : trace.enc[i - 1].out;
    grad_e[i] = Tensor<S>(ref.c, ref.h, ref.w);
  }

  Tensor<S> t;
  for (int lvl = 0; lvl < cfg_.depth; ++lvl) {
    const auto& dt = trace.dec[lvl];
    const auto& ds = dec_[lvl];
    Tensor<S> d_out = std::move(d_cur);
    nn::relu_backward_inplace(dt.out, d_out);
    nn::norm_backward(ds.n2, p, dt.n2, d_out, t, grad_params);
    Tensor<S> d_r1(dt.r1.c, dt.r1.h, dt.r1.w);
    nn::conv_backward(ds.c2, p, dt.r1, t, &d_r1, grad_params);
    nn::relu_backward_inplace(dt.r1, d_r1);
    nn::norm_backward(ds.n1, p, dt.n1, d_r1, t, grad_params);
    Tensor<S> d_concat(dt.concat_in.c, dt.concat_in.h, dt.concat_in.w);
    nn::conv_backward(ds.c1, p, dt.concat_in, t, &d_concat, grad_params);

    const int deep_c = cfg_.channels_at(lvl + 1);
    Tensor<S> d_up(deep_c, d_concat.h, d_concat.w);
    Tensor<S> d_skip(d_concat.c - deep_c, d_concat.h, d_concat.w);
    nn::split_channels(d_concat, d_up, d_skip);
    for (size_t j = 0; j < d_skip.v.size(); ++j) grad_e[lvl].v[j] += d_skip.v[j];
    d_cur = nn::upsample2x_backward(d_up);
  }
  for (size_t j = 0; j < d_cur.v.size(); ++j) grad_e[cfg_.depth].v[j] += d_cur.v[j];

  for (int i = cfg_.depth - 1; i >= 0; --i) {
    const auto& et = trace.enc[i];
    const auto& es = enc_[i];
    const Tensor<S>& block_in = (i == 0) ? trace.stem_out : trace.enc[i - 1].out;
    Tensor<S> d_out = std::move(grad_e[i + 1]);
    nn::relu_backward_inplace(et.out, d_out);
    // main branch
    nn::norm_backward(es.n2, p, et.n2, d_out, t, grad_params);
    Tensor<S> d_r1(et.r1.c, et.r1.h, et.r1.w);
    nn::conv_backward(es.c2, p, et.r1, t, &d_r1, grad_params);
    nn::relu_backward_inplace(et.r1, d_r1);
    nn::norm_backward(es.n1, p, et.n1, d_r1, t, grad_params);
    nn::conv_backward(es.c1, p, block_in, t, &grad_e[i], grad_params);
    // residual branch
    nn::norm_backward(es.nsk, p, et.nsk, d_out, t, grad_params);
    nn::conv_backward(es.skip, p, block_in, t, &grad_e[i], grad_params);
  }

  Tensor<S> d_stem = std::move(grad_e[0]);
  nn::relu_backward_inplace(trace.stem_out, d_stem);
  nn::norm_backward(stem_norm_, p, trace.stem_norm, d_stem, t, grad_params);
  nn::conv_backward(stem_conv_, p, trace.x, t, grad_input, grad_params);
}

template class UNet<float>;
template class UNet<double>;

}  // namespace semiseg
