#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "clfa/nn.hpp"

namespace clfa::fusion {

enum class FusionVariant { concat, co_attention, cross_attention, knowledge_cross_attention };

std::string to_string(FusionVariant v);
FusionVariant parse_fusion_variant(std::string_view name);

struct FusionConfig {
  FusionVariant variant = FusionVariant::cross_attention;
  std::size_t layers = 3;
  std::size_t width = 32;           // d_C
  std::size_t ffn_hidden = 64;
  std::size_t co_attention_width = 0;  // k; 0 means d_C
  double dropout = 0.1;

  std::size_t joint_width() const { return co_attention_width ? co_attention_width : width; }
  void validate() const;
};

class LexiconError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// token -> sentiment value in [-1, 1]; unknown tokens read as 0.
class SentimentLexicon {
 public:
  SentimentLexicon() = default;

  void set(std::string token, double value);
  double value(std::string_view token) const;
  /// Token ids are looked up by their decimal spelling.
  double value(std::uint32_t token_id) const;
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  /// One `token<TAB>value` per line; blank lines ignored.
  static SentimentLexicon load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  static SentimentLexicon parse(const std::string& text);
  /// Sorted by token, so equal lexicons serialize identically.
  std::string to_text() const;

 private:
  std::unordered_map<std::string, double> values_;
};

/// SC(x, y) = |S_x - S_y| e^{-S_x S_y}.
double sentiment_contrast(double s_x, double s_y);

/// Constant n×m matrix of 1 + SC(q_i, kv_j).
Tensor sentiment_factor(std::span<const std::uint32_t> q_tokens, std::span<const std::uint32_t> kv_tokens,
                        const SentimentLexicon& lexicon);

/// One cross-attention transformer block: queries from q_src, keys and
/// values from kv_src.
Tensor cross_attention(const nn::TransformerBlock& block, const Tensor& q_src, const Tensor& kv_src,
                       const nn::ForwardContext& ctx, std::span<const std::uint8_t> kv_mask = {});

/// The same block with logits scaled elementwise by (1 + SC) before the
/// √d_k division. Token lists must align with the row axes.
Tensor sentiment_attention(const nn::TransformerBlock& block, const Tensor& q_src, const Tensor& kv_src,
                           std::span<const std::uint32_t> q_tokens, std::span<const std::uint32_t> kv_tokens,
                           const SentimentLexicon& lexicon, const nn::ForwardContext& ctx,
                           std::span<const std::uint8_t> kv_mask = {});

/// Per-sample inputs to a fusion head, all already projected to d_C.
struct FusionInputs {
  Tensor text;                              // n×d_C
  std::span<const std::uint8_t> text_mask;  // n
  Tensor image;                             // m×d_C
  // Knowledge variant only.
  std::optional<Tensor> aux;                // a×d_C
  std::span<const std::uint8_t> aux_mask;
  std::span<const std::uint32_t> text_tokens;
  std::span<const std::uint32_t> aux_tokens;
};

Tensor fuse_concat(const Tensor& text, std::span<const std::uint8_t> text_mask, const Tensor& image);

struct CoAttentionWeights {
  nn::Linear affinity;  // W_c: d_C -> d_C
  nn::Linear text;      // W_t: d_C -> k
  nn::Linear image;     // W_i: d_C -> k
};

/// Bilinear co-attention with features as rows (position-major):
///   C   = tanh(T W_c Iᵀ)                      n×m
///   h_t = tanh(T W_t + C (I W_i))             n×k  (text positions)
///   h_i = tanh(I W_i + Cᵀ (T W_t))            m×k  (image positions)
/// Output: [mean h_t ; mean h_i] of length 2k. Masked text rows are zeroed in C.
/// `affinity_out`, when given, receives C.
Tensor fuse_co_attention(const CoAttentionWeights& w, const Tensor& text, std::span<const std::uint8_t> text_mask,
                         const Tensor& image, Tensor* affinity_out = nullptr);

/// Layer 1 queries with the text, each later layer with the previous hidden
/// state; keys and values always come from the image. Pools over text positions.
Tensor fuse_cross_attention_stack(std::span<const nn::TransformerBlock> blocks, const Tensor& text,
                                  std::span<const std::uint8_t> text_mask, const Tensor& image,
                                  const nn::ForwardContext& ctx);

/// Three layers: sentiment self-attention over the text, plain cross-attention
/// to the image, sentiment cross-attention to the auxiliary text; then pool.
/// A null lexicon runs the same stack with plain attention in every layer.
Tensor fuse_knowledge_stack(std::span<const nn::TransformerBlock> blocks, const FusionInputs& in,
                            const SentimentLexicon* lexicon, const nn::ForwardContext& ctx);

/// Owns the parameters of the configured variant.
class Fusion {
 public:
  Fusion() = default;
  Fusion(nn::ParameterStore& store, const std::string& name, const FusionConfig& config);

  Tensor operator()(const FusionInputs& in, const nn::ForwardContext& ctx) const;
  /// Fixed output width of the variant, independent of n and m.
  std::size_t output_width() const;

  const FusionConfig& config() const { return config_; }
  std::span<const nn::TransformerBlock> blocks() const { return blocks_; }
  const CoAttentionWeights& co_attention_weights() const { return co_; }
  void set_lexicon(std::optional<SentimentLexicon> lexicon) { lexicon_ = std::move(lexicon); }
  const SentimentLexicon* lexicon() const { return lexicon_ ? &*lexicon_ : nullptr; }

 private:
  FusionConfig config_;
  std::vector<nn::TransformerBlock> blocks_;
  CoAttentionWeights co_;
  std::optional<SentimentLexicon> lexicon_;
};

}  // namespace clfa::fusion
