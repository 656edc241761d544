#include "clfa/nn.hpp"

#include <cmath>

namespace clfa::nn {

Tensor ParameterStore::add(const std::string& name, Tensor value, bool decay) {
  if (find(name)) throw std::logic_error("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  params_.push_back({name, value, decay});
  return value;
}

Tensor ParameterStore::glorot(const std::string& name, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> values(fan_in * fan_out);
  for (auto& v : values) v = dist(rng_);
  return add(name, Tensor::from({fan_in, fan_out}, std::move(values)), true);
}

Tensor ParameterStore::normal(const std::string& name, Shape shape, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng_);
  return add(name, Tensor::from(std::move(shape), std::move(values)), true);
}

Tensor ParameterStore::constant(const std::string& name, Shape shape, double value, bool decay) {
  return add(name, Tensor::filled(std::move(shape), value), decay);
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, bool bias)
    : in_(in), out_(out) {
  weight_ = store.glorot(name + ".weight", in, out);
  if (bias) bias_ = store.constant(name + ".bias", {out}, 0.0, false);
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.rank() == 1) {
    auto y = (*this)(ops::reshape(x, {1, x.numel()}));
    return ops::reshape(y, {out_});
  }
  auto y = ops::matmul(x, weight_);
  return bias_.defined() ? ops::add_row(y, bias_) : y;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t width) {
  gain_ = store.constant(name + ".gain", {width}, 1.0, false);
  bias_ = store.constant(name + ".bias", {width}, 0.0, false);
}

Tensor LayerNorm::operator()(const Tensor& x) const { return ops::layer_norm(x, gain_, bias_); }

Tensor Dropout::operator()(const Tensor& x, const ForwardContext& ctx) const {
  return ops::dropout(x, rate_, ctx.train, {ctx.seed, layer_id_, ctx.step, ctx.stream});
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    std::span<const std::uint8_t> key_mask, const Tensor* logit_factor,
                                    Tensor* weights_out) {
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: query width " + std::to_string(q.cols()) + " vs key width " +
                         std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) throw DimensionError("attention: key and value counts differ");
  auto logits = ops::matmul(q, ops::transpose(k));
  if (logit_factor) logits = ops::mul(logits, *logit_factor);
  logits = ops::scale(logits, 1.0 / std::sqrt(static_cast<double>(q.cols())));
  auto weights = ops::masked_softmax_rows(logits, key_mask);
  if (weights_out) *weights_out = weights;
  return ops::matmul(weights, v);
}

TransformerBlock::TransformerBlock(ParameterStore& store, const std::string& name, const BlockConfig& config)
    : config_(config) {
  const auto d = config.width;
  wq_ = Linear(store, name + ".wq", d, d);
  wk_ = Linear(store, name + ".wk", d, d);
  wv_ = Linear(store, name + ".wv", d, d);
  wo_ = Linear(store, name + ".wo", d, d);
  ln1_ = LayerNorm(store, name + ".ln1", d);
  ff1_ = Linear(store, name + ".ff1", d, config.ffn_hidden);
  ff2_ = Linear(store, name + ".ff2", config.ffn_hidden, d);
  ln2_ = LayerNorm(store, name + ".ln2", d);
  drop_attn_ = Dropout(store, config.dropout);
  drop_ffn_ = Dropout(store, config.dropout);
}

Tensor TransformerBlock::attend(const Tensor& q_src, const Tensor& kv_src, std::span<const std::uint8_t> key_mask,
                                const Tensor* logit_factor, Tensor* weights_out) const {
  if (q_src.cols() != config_.width || kv_src.cols() != config_.width) {
    throw DimensionError("transformer block of width " + std::to_string(config_.width) + " got " +
                         shape_str(q_src.shape()) + " and " + shape_str(kv_src.shape()));
  }
  return scaled_dot_product_attention(wq_(q_src), wk_(kv_src), wv_(kv_src), key_mask, logit_factor,
                                      weights_out);
}

Tensor TransformerBlock::operator()(const Tensor& q_src, const Tensor& kv_src,
                                    std::span<const std::uint8_t> key_mask, const ForwardContext& ctx,
                                    const Tensor* logit_factor) const {
  auto attn = wo_(attend(q_src, kv_src, key_mask, logit_factor));
  auto a = ln1_(ops::add(q_src, drop_attn_(attn, ctx)));
  auto ffn = ff2_(ops::gelu(ff1_(a)));
  return ln2_(ops::add(a, drop_ffn_(ffn, ctx)));
}

}  // namespace clfa::nn
