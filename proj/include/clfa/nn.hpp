#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "clfa/ops.hpp"
#include "clfa/tensor.hpp"

namespace clfa::nn {

struct Parameter {
  std::string name;
  Tensor value;
  bool decay = true;  // false for biases and layer-norm gains/offsets
};

/// Owns the trainable leaves of a model and hands out dropout layer ids.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t init_seed = 0) : rng_(init_seed) {}

  Tensor glorot(const std::string& name, std::size_t fan_in, std::size_t fan_out);
  Tensor normal(const std::string& name, Shape shape, double stddev);
  Tensor constant(const std::string& name, Shape shape, double value, bool decay);

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const Parameter* find(const std::string& name) const;
  std::size_t scalar_count() const;
  std::uint64_t next_layer_id() { return next_layer_id_++; }
  void zero_grad();

 private:
  Tensor add(const std::string& name, Tensor value, bool decay);

  std::mt19937_64 rng_;
  std::vector<Parameter> params_;
  std::uint64_t next_layer_id_ = 1;
};

/// Per-forward state: train flag and the (seed, step, stream) part of dropout keys.
struct ForwardContext {
  bool train = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t stream = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, bool bias = true);

  /// x: k×in -> k×out (vectors are treated as one row and stay vectors).
  Tensor operator()(const Tensor& x) const;
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  Tensor weight_;  // in×out
  Tensor bias_;
  std::size_t in_ = 0, out_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t width);
  Tensor operator()(const Tensor& x) const;

 private:
  Tensor gain_, bias_;
};

class Dropout {
 public:
  Dropout() = default;
  Dropout(ParameterStore& store, double rate) : rate_(rate), layer_id_(store.next_layer_id()) {}
  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;

 private:
  double rate_ = 0.0;
  std::uint64_t layer_id_ = 0;
};

/// softmax(Q Kᵀ [⊙ factor] / sqrt(d_k)) V with optional key mask.
/// `logit_factor` (n×m, constant) multiplies the raw logits before scaling.
/// `weights_out`, when given, receives the attention weight matrix.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    std::span<const std::uint8_t> key_mask = {},
                                    const Tensor* logit_factor = nullptr, Tensor* weights_out = nullptr);

struct BlockConfig {
  std::size_t width = 64;
  std::size_t ffn_hidden = 128;
  double dropout = 0.1;
};

/// Post-norm transformer block whose queries and keys/values may come from
/// different sequences:
///   a = LN(q_src + Drop(Attn(q_src Wq, kv Wk, kv Wv) Wo))
///   out = LN(a + Drop(FFN(a)))
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterStore& store, const std::string& name, const BlockConfig& config);

  Tensor operator()(const Tensor& q_src, const Tensor& kv_src, std::span<const std::uint8_t> key_mask,
                    const ForwardContext& ctx, const Tensor* logit_factor = nullptr) const;

  /// Attention sublayer alone: projected Q/K/V, scaled dot product, no output
  /// projection, residual, normalization or feed-forward.
  Tensor attend(const Tensor& q_src, const Tensor& kv_src, std::span<const std::uint8_t> key_mask = {},
                const Tensor* logit_factor = nullptr, Tensor* weights_out = nullptr) const;

  std::size_t width() const { return config_.width; }
  const Linear& query() const { return wq_; }
  const Linear& key() const { return wk_; }
  const Linear& value() const { return wv_; }

 private:
  BlockConfig config_;
  Linear wq_, wk_, wv_, wo_, ff1_, ff2_;
  LayerNorm ln1_, ln2_;
  Dropout drop_attn_, drop_ffn_;
};

}  // namespace clfa::nn
