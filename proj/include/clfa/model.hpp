#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "clfa/alignment.hpp"
#include "clfa/data.hpp"
#include "clfa/encoders.hpp"
#include "clfa/fusion.hpp"
#include "clfa/nn.hpp"

namespace clfa::model {

struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t width = 64;  // d, shared by both student encoders
  std::size_t encoder_layers = 2;
  std::size_t encoder_ffn_hidden = 128;
  std::size_t max_text_length = 77;
  std::size_t image_size = 16;
  std::size_t channels = 1;
  std::size_t patch = 8;
  std::size_t teacher_width = 32;  // d_C
  std::size_t projection_hidden = 128;
  fusion::FusionVariant fusion = fusion::FusionVariant::cross_attention;
  std::size_t fusion_layers = 3;
  std::size_t fusion_ffn_hidden = 64;
  std::size_t num_classes = 2;
  double dropout = 0.1;
  bool positional = true;
  std::uint64_t init_seed = 0;

  /// Assigns one `key = value` setting; false when the key is not a model key.
  bool set(const std::string& key, const std::string& value);
  static std::vector<std::string> keys();
  void validate() const;

  /// `key = value` lines, the form stored in checkpoints.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

/// FFN over the fused vector: Linear -> GELU -> Dropout -> Linear to class logits.
class Classifier {
 public:
  Classifier() = default;
  Classifier(nn::ParameterStore& store, const std::string& name, std::size_t input, std::size_t num_classes,
             double dropout);
  Tensor operator()(const Tensor& fused, const nn::ForwardContext& ctx) const;
  std::size_t num_classes() const { return num_classes_; }

 private:
  nn::Linear hidden_, out_;
  nn::Dropout drop_;
  std::size_t num_classes_ = 0;
};

struct SampleOutput {
  Tensor logits;        // num_classes
  Tensor text_pooled;   // d_C, defined when pooled projections were requested
  Tensor image_pooled;  // d_C
};

/// Student encoders, projection heads, fusion head and classifier.
class ClfaModel {
 public:
  explicit ClfaModel(const ModelConfig& config);
  ClfaModel(const ClfaModel&) = delete;
  ClfaModel& operator=(const ClfaModel&) = delete;

  /// Full per-sample forward. Dropout streams are derived from `slot` (the
  /// sample's position in its batch), so ctx.stream is ignored.
  SampleOutput forward(const data::Sample& sample, const nn::ForwardContext& ctx, std::uint64_t slot,
                       bool with_pooled) const;
  /// Pooled text and image projections only (alignment heatmaps).
  std::pair<Tensor, Tensor> pooled_projections(const data::Sample& sample, const nn::ForwardContext& ctx,
                                               std::uint64_t slot = 0) const;

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  const encoders::TextEncoder& text_encoder() const { return text_; }
  const encoders::ImageEncoder& image_encoder() const { return image_; }
  const alignment::ProjectionHead& text_projection() const { return text_proj_; }
  const alignment::ProjectionHead& image_projection() const { return image_proj_; }
  const fusion::Fusion& fusion() const { return fusion_; }
  void set_lexicon(std::optional<fusion::SentimentLexicon> lexicon) { fusion_.set_lexicon(std::move(lexicon)); }

 private:
  ModelConfig config_;
  nn::ParameterStore store_;
  encoders::TextEncoder text_;
  encoders::ImageEncoder image_;
  alignment::ProjectionHead text_proj_, image_proj_;
  fusion::Fusion fusion_;
  Classifier classifier_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "CLFC" | u8 version | text config | text lexicon | u32 count |
/// count × (text name | u32 rank | rank × u32 dim | f64 values), little-endian;
/// text = u32 byte length + bytes.
void save_checkpoint(const std::filesystem::path& path, const ClfaModel& model);
std::unique_ptr<ClfaModel> load_checkpoint(const std::filesystem::path& path);

}  // namespace clfa::model
