#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "clfa/data.hpp"
#include "clfa/fixture.hpp"
#include "clfa/nn.hpp"

namespace clfa::encoders {

class VocabularyError : public RangeError {
 public:
  using RangeError::RangeError;
};

class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Non-overlapping p×p patches in row-major patch order, each flattened
/// row-major (row, column, channel): m×(p·p·c) with m = (H/p)·(W/p).
Tensor patchify(const data::Image& image, std::size_t patch);

struct TextEncoderConfig {
  std::size_t vocab_size = 64;
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t max_length = 77;
  std::size_t ffn_hidden = 128;
  double dropout = 0.1;
  bool positional = true;
};

/// Token embedding + learned positions + self-attention blocks.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(nn::ParameterStore& store, const std::string& name, const TextEncoderConfig& config);

  /// n×d contextual token features. Masked positions never act as keys, so
  /// they cannot influence unmasked outputs.
  Tensor operator()(std::span<const std::uint32_t> tokens, std::span<const std::uint8_t> mask,
                    const nn::ForwardContext& ctx) const;

  const TextEncoderConfig& config() const { return config_; }

 private:
  TextEncoderConfig config_;
  Tensor embedding_;
  Tensor positions_;
  nn::Dropout drop_;
  std::vector<nn::TransformerBlock> blocks_;
};

struct ImageEncoderConfig {
  std::size_t image_height = 16;
  std::size_t image_width = 16;
  std::size_t channels = 1;
  std::size_t patch = 8;
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t ffn_hidden = 128;
  double dropout = 0.1;
  bool positional = true;

  std::size_t patch_count() const { return (image_height / patch) * (image_width / patch); }
};

/// Patch projection + learned positions + self-attention blocks.
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(nn::ParameterStore& store, const std::string& name, const ImageEncoderConfig& config);

  /// m×d per-patch features.
  Tensor operator()(const data::Image& image, const nn::ForwardContext& ctx) const;

  const ImageEncoderConfig& config() const { return config_; }
  const nn::Linear& patch_projection() const { return projection_; }

 private:
  ImageEncoderConfig config_;
  nn::Linear projection_;
  Tensor positions_;
  nn::Dropout drop_;
  std::vector<nn::TransformerBlock> blocks_;
};

enum class TeacherVariant { synthetic, fixture };

struct TeacherEmbedding {
  Tensor text;   // d_C, never requires grad
  Tensor image;  // d_C, never requires grad
};

/// Frozen dual-modality teacher producing the alignment targets.
class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual TeacherVariant variant() const = 0;
  virtual std::size_t width() const = 0;
  virtual TeacherEmbedding embed(const data::Sample& sample) const = 0;
  /// Every tensor the teacher owns; none may be handed to an optimizer.
  virtual std::vector<Tensor> frozen_tensors() const = 0;
};

struct SyntheticTeacherConfig {
  std::size_t width = 32;
  std::size_t latent_dims = 9;  // (sentiment, content...) as produced by data::generate_synthetic
  double noise = 0.1;
  double sentiment_scale = 1.0;  // weight of the sentiment column relative to content
  std::uint64_t seed = 0;
};

/// C_t = A_t z_text + ε, C_i = A_i z_image + ε, entries of A drawn N(0, 1/d_C).
/// A_t and A_i share the columns acting on the content coordinates and differ
/// on the sentiment column, so matched pairs agree through the shared latent.
/// ε is a fixed draw keyed by (seed, sample id), so repeated calls return
/// identical embeddings.
class SyntheticTeacher final : public Teacher {
 public:
  explicit SyntheticTeacher(const SyntheticTeacherConfig& config);

  TeacherVariant variant() const override { return TeacherVariant::synthetic; }
  std::size_t width() const override { return config_.width; }
  TeacherEmbedding embed(const data::Sample& sample) const override;
  std::vector<Tensor> frozen_tensors() const override { return {text_map_, image_map_}; }

  const Tensor& text_map() const { return text_map_; }
  const Tensor& image_map() const { return image_map_; }

 private:
  std::vector<double> apply(const Tensor& map, std::span<const double> z, std::uint64_t id,
                            std::uint64_t stream) const;

  SyntheticTeacherConfig config_;
  Tensor text_map_;   // d_C × latent
  Tensor image_map_;  // d_C × latent
};

/// Precomputed embeddings looked up by sample id.
class FixtureTeacher final : public Teacher {
 public:
  explicit FixtureTeacher(const io::FixtureFile& fixture);

  TeacherVariant variant() const override { return TeacherVariant::fixture; }
  std::size_t width() const override { return width_; }
  TeacherEmbedding embed(const data::Sample& sample) const override;
  std::vector<Tensor> frozen_tensors() const override;

 private:
  std::size_t width_ = 0;
  std::unordered_map<std::uint64_t, TeacherEmbedding> table_;
};

/// Embeds every sample, e.g. to write a fixture.
std::vector<io::EmbeddingPair> embed_all(const Teacher& teacher, const std::vector<data::Sample>& samples);

}  // namespace clfa::encoders
