#include "clfa/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace clfa::fusion {

std::string to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::concat: return "concat";
    case FusionVariant::co_attention: return "co_attention";
    case FusionVariant::cross_attention: return "cross_attention";
    case FusionVariant::knowledge_cross_attention: return "knowledge_cross_attention";
  }
  return "?";
}

FusionVariant parse_fusion_variant(std::string_view name) {
  for (auto v : {FusionVariant::concat, FusionVariant::co_attention, FusionVariant::cross_attention,
                 FusionVariant::knowledge_cross_attention}) {
    if (name == to_string(v)) return v;
  }
  throw ConfigError("unknown fusion variant '" + std::string(name) +
                    "' (expected concat, co_attention, cross_attention or knowledge_cross_attention)");
}

void FusionConfig::validate() const {
  if (width == 0) throw ConfigError("fusion width must be positive");
  if (layers < 1) throw ConfigError("fusion needs at least one layer");
  if (variant == FusionVariant::knowledge_cross_attention && layers != 3) {
    throw ConfigError("knowledge_cross_attention is defined for exactly 3 layers");
  }
}

// ------------------------------------------------------------------- lexicon

void SentimentLexicon::set(std::string token, double value) {
  if (!(value >= -1.0 && value <= 1.0)) {
    throw LexiconError("sentiment value for '" + token + "' outside [-1, 1]");
  }
  values_.insert_or_assign(std::move(token), value);
}

double SentimentLexicon::value(std::string_view token) const {
  auto it = values_.find(std::string(token));
  return it == values_.end() ? 0.0 : it->second;
}

double SentimentLexicon::value(std::uint32_t token_id) const { return value(std::to_string(token_id)); }

SentimentLexicon SentimentLexicon::parse(const std::string& text) {
  std::istringstream in(text);
  SentimentLexicon lex;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw LexiconError("lexicon line " + std::to_string(line_no) + ": expected token<TAB>value");
    }
    const std::string value_text = line.substr(tab + 1);
    double v = 0.0;
    std::size_t used = 0;
    try {
      v = std::stod(value_text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != value_text.size()) {
      throw LexiconError("lexicon line " + std::to_string(line_no) + ": '" + value_text + "' is not a decimal");
    }
    lex.set(line.substr(0, tab), v);
  }
  return lex;
}

SentimentLexicon SentimentLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LexiconError("cannot open lexicon " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

std::string SentimentLexicon::to_text() const {
  std::vector<std::pair<std::string, double>> sorted(values_.begin(), values_.end());
  std::sort(sorted.begin(), sorted.end());
  std::ostringstream out;
  out.precision(17);
  for (const auto& [token, v] : sorted) out << token << '\t' << v << '\n';
  return out.str();
}

void SentimentLexicon::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw LexiconError("cannot write lexicon " + path.string());
  out << to_text();
}

double sentiment_contrast(double s_x, double s_y) { return std::abs(s_x - s_y) * std::exp(-s_x * s_y); }

Tensor sentiment_factor(std::span<const std::uint32_t> q_tokens, std::span<const std::uint32_t> kv_tokens,
                        const SentimentLexicon& lexicon) {
  std::vector<double> out(q_tokens.size() * kv_tokens.size());
  for (std::size_t i = 0; i < q_tokens.size(); ++i) {
    const double sx = lexicon.value(q_tokens[i]);
    for (std::size_t j = 0; j < kv_tokens.size(); ++j) {
      out[i * kv_tokens.size() + j] = 1.0 + sentiment_contrast(sx, lexicon.value(kv_tokens[j]));
    }
  }
  return Tensor::from({q_tokens.size(), kv_tokens.size()}, std::move(out));
}

// ----------------------------------------------------------------- attention

Tensor cross_attention(const nn::TransformerBlock& block, const Tensor& q_src, const Tensor& kv_src,
                       const nn::ForwardContext& ctx, std::span<const std::uint8_t> kv_mask) {
  return block(q_src, kv_src, kv_mask, ctx);
}

Tensor sentiment_attention(const nn::TransformerBlock& block, const Tensor& q_src, const Tensor& kv_src,
                           std::span<const std::uint32_t> q_tokens, std::span<const std::uint32_t> kv_tokens,
                           const SentimentLexicon& lexicon, const nn::ForwardContext& ctx,
                           std::span<const std::uint8_t> kv_mask) {
  if (q_tokens.size() != q_src.rows() || kv_tokens.size() != kv_src.rows()) {
    throw DimensionError("sentiment_attention: " + std::to_string(q_tokens.size()) + "/" +
                         std::to_string(kv_tokens.size()) + " tokens for " + shape_str(q_src.shape()) + " and " +
                         shape_str(kv_src.shape()));
  }
  const auto factor = sentiment_factor(q_tokens, kv_tokens, lexicon);
  return block(q_src, kv_src, kv_mask, ctx, &factor);
}

// ------------------------------------------------------------------- fusion

namespace {

void require_width(const Tensor& t, std::size_t width, const char* what) {
  if (t.rank() != 2 || t.cols() != width) {
    throw DimensionError(std::string(what) + ": expected rows of width " + std::to_string(width) + ", got " +
                         shape_str(t.shape()));
  }
}

std::vector<std::uint8_t> all_valid(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

}  // namespace

Tensor fuse_concat(const Tensor& text, std::span<const std::uint8_t> text_mask, const Tensor& image) {
  auto pooled_text = text_mask.empty() ? ops::mean_rows(text) : ops::masked_mean_rows(text, text_mask);
  return ops::concat(pooled_text, ops::mean_rows(image));
}

Tensor fuse_co_attention(const CoAttentionWeights& w, const Tensor& text, std::span<const std::uint8_t> text_mask,
                         const Tensor& image, Tensor* affinity_out) {
  if (text.rank() != 2 || image.rank() != 2 || text.cols() != image.cols() ||
      text.cols() != w.affinity.in_features()) {
    throw DimensionError("co_attention: text " + shape_str(text.shape()) + " and image " +
                         shape_str(image.shape()) + " must share width " + std::to_string(w.affinity.in_features()));
  }
  auto affinity = ops::tanh(ops::matmul(w.affinity(text), ops::transpose(image)));  // n×m
  if (!text_mask.empty()) {
    std::vector<double> keep(affinity.numel());
    for (std::size_t i = 0; i < affinity.rows(); ++i)
      for (std::size_t j = 0; j < affinity.cols(); ++j) keep[i * affinity.cols() + j] = text_mask[i] ? 1.0 : 0.0;
    affinity = ops::mul(affinity, Tensor::from(affinity.shape(), std::move(keep)));
  }
  if (affinity_out) *affinity_out = affinity;
  auto text_k = w.text(text);     // n×k
  auto image_k = w.image(image);  // m×k
  auto h_t = ops::tanh(ops::add(text_k, ops::matmul(affinity, image_k)));
  auto h_i = ops::tanh(ops::add(image_k, ops::matmul(ops::transpose(affinity), text_k)));
  auto pooled_t = text_mask.empty() ? ops::mean_rows(h_t) : ops::masked_mean_rows(h_t, text_mask);
  return ops::concat(pooled_t, ops::mean_rows(h_i));
}

Tensor fuse_cross_attention_stack(std::span<const nn::TransformerBlock> blocks, const Tensor& text,
                                  std::span<const std::uint8_t> text_mask, const Tensor& image,
                                  const nn::ForwardContext& ctx) {
  if (blocks.empty()) throw ConfigError("cross-attention stack needs at least one layer");
  auto h = text;
  for (const auto& block : blocks) h = cross_attention(block, h, image, ctx);
  return text_mask.empty() ? ops::mean_rows(h) : ops::masked_mean_rows(h, text_mask);
}

Tensor fuse_knowledge_stack(std::span<const nn::TransformerBlock> blocks, const FusionInputs& in,
                            const SentimentLexicon* lexicon, const nn::ForwardContext& ctx) {
  if (blocks.size() != 3) throw ConfigError("knowledge stack needs exactly 3 layers");
  if (!in.aux) throw ConfigError("knowledge_cross_attention requires auxiliary text features");
  const auto text_mask = in.text_mask.empty() ? all_valid(in.text.rows()) : std::vector<std::uint8_t>(
                                                                                in.text_mask.begin(), in.text_mask.end());
  const auto aux_mask =
      in.aux_mask.empty() ? all_valid(in.aux->rows()) : std::vector<std::uint8_t>(in.aux_mask.begin(), in.aux_mask.end());

  Tensor h1, h3;
  if (lexicon) {
    h1 = sentiment_attention(blocks[0], in.text, in.text, in.text_tokens, in.text_tokens, *lexicon, ctx, text_mask);
  } else {
    h1 = blocks[0](in.text, in.text, text_mask, ctx);
  }
  // No sentiment values exist for image patches.
  auto h2 = cross_attention(blocks[1], h1, in.image, ctx);
  if (lexicon) {
    h3 = sentiment_attention(blocks[2], h2, *in.aux, in.text_tokens, in.aux_tokens, *lexicon, ctx, aux_mask);
  } else {
    h3 = blocks[2](h2, *in.aux, aux_mask, ctx);
  }
  return ops::masked_mean_rows(h3, text_mask);
}

Fusion::Fusion(nn::ParameterStore& store, const std::string& name, const FusionConfig& config) : config_(config) {
  config.validate();
  switch (config.variant) {
    case FusionVariant::concat:
      break;
    case FusionVariant::co_attention:
      co_.affinity = nn::Linear(store, name + ".co.affinity", config.width, config.width, false);
      co_.text = nn::Linear(store, name + ".co.text", config.width, config.joint_width(), false);
      co_.image = nn::Linear(store, name + ".co.image", config.width, config.joint_width(), false);
      break;
    case FusionVariant::cross_attention:
    case FusionVariant::knowledge_cross_attention:
      for (std::size_t l = 0; l < config.layers; ++l) {
        blocks_.emplace_back(store, name + ".layer" + std::to_string(l),
                             nn::BlockConfig{config.width, config.ffn_hidden, config.dropout});
      }
      break;
  }
}

std::size_t Fusion::output_width() const {
  switch (config_.variant) {
    case FusionVariant::concat: return 2 * config_.width;
    case FusionVariant::co_attention: return 2 * config_.joint_width();
    case FusionVariant::cross_attention:
    case FusionVariant::knowledge_cross_attention: return config_.width;
  }
  return 0;
}

Tensor Fusion::operator()(const FusionInputs& in, const nn::ForwardContext& ctx) const {
  require_width(in.text, config_.width, "fusion text");
  require_width(in.image, config_.width, "fusion image");
  switch (config_.variant) {
    case FusionVariant::concat:
      return fuse_concat(in.text, in.text_mask, in.image);
    case FusionVariant::co_attention:
      return fuse_co_attention(co_, in.text, in.text_mask, in.image);
    case FusionVariant::cross_attention:
      return fuse_cross_attention_stack(blocks_, in.text, in.text_mask, in.image, ctx);
    case FusionVariant::knowledge_cross_attention:
      if (!lexicon_) throw ConfigError("knowledge_cross_attention requires a sentiment lexicon");
      return fuse_knowledge_stack(blocks_, in, &*lexicon_, ctx);
  }
  throw ConfigError("unhandled fusion variant");
}

}  // namespace clfa::fusion
