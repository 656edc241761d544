#include "clfa/encoders.hpp"

#include <cmath>

#include "clfa/random.hpp"

namespace clfa::encoders {

Tensor patchify(const data::Image& image, std::size_t patch) {
  if (patch == 0 || image.height == 0 || image.width == 0 || image.channels == 0) {
    throw DimensionError("patchify: empty image or zero patch size");
  }
  if (image.height % patch != 0 || image.width % patch != 0) {
    throw DimensionError("patchify: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " is not divisible by patch size " + std::to_string(patch));
  }
  if (image.pixels.size() != image.height * image.width * image.channels) {
    throw DimensionError("patchify: pixel buffer does not match H*W*C");
  }
  const std::size_t rows = image.height / patch, cols = image.width / patch;
  const std::size_t len = patch * patch * image.channels;
  std::vector<double> out(rows * cols * len);
  std::size_t k = 0;
  for (std::size_t pr = 0; pr < rows; ++pr)
    for (std::size_t pc = 0; pc < cols; ++pc)
      for (std::size_t r = 0; r < patch; ++r)
        for (std::size_t c = 0; c < patch; ++c)
          for (std::size_t ch = 0; ch < image.channels; ++ch)
            out[k++] = image.at(pr * patch + r, pc * patch + c, ch);
  return Tensor::from({rows * cols, len}, std::move(out));
}

TextEncoder::TextEncoder(nn::ParameterStore& store, const std::string& name, const TextEncoderConfig& config)
    : config_(config) {
  embedding_ = store.normal(name + ".embedding", {config.vocab_size, config.width}, 0.5);
  if (config.positional) positions_ = store.normal(name + ".positions", {config.max_length, config.width}, 0.1);
  drop_ = nn::Dropout(store, config.dropout);
  for (std::size_t l = 0; l < config.layers; ++l) {
    blocks_.emplace_back(store, name + ".block" + std::to_string(l),
                         nn::BlockConfig{config.width, config.ffn_hidden, config.dropout});
  }
}

Tensor TextEncoder::operator()(std::span<const std::uint32_t> tokens, std::span<const std::uint8_t> mask,
                               const nn::ForwardContext& ctx) const {
  if (tokens.empty()) throw DimensionError("encode_text: empty token sequence");
  if (tokens.size() > config_.max_length) {
    throw DimensionError("encode_text: length " + std::to_string(tokens.size()) + " exceeds maximum " +
                         std::to_string(config_.max_length));
  }
  if (mask.size() != tokens.size()) throw DimensionError("encode_text: mask length differs from token count");
  std::vector<std::size_t> ids(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= config_.vocab_size) {
      throw VocabularyError("encode_text: token id " + std::to_string(tokens[i]) + " outside vocabulary of " +
                            std::to_string(config_.vocab_size));
    }
    ids[i] = tokens[i];
  }
  auto x = ops::gather_rows(embedding_, ids);
  if (config_.positional) {
    std::vector<std::size_t> pos(tokens.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    x = ops::add(x, ops::gather_rows(positions_, pos));
  }
  x = drop_(x, ctx);
  for (const auto& block : blocks_) x = block(x, x, mask, ctx);
  return x;
}

ImageEncoder::ImageEncoder(nn::ParameterStore& store, const std::string& name, const ImageEncoderConfig& config)
    : config_(config) {
  projection_ = nn::Linear(store, name + ".patch_projection", config.patch * config.patch * config.channels,
                           config.width);
  if (config.positional) positions_ = store.normal(name + ".positions", {config.patch_count(), config.width}, 0.1);
  drop_ = nn::Dropout(store, config.dropout);
  for (std::size_t l = 0; l < config.layers; ++l) {
    blocks_.emplace_back(store, name + ".block" + std::to_string(l),
                         nn::BlockConfig{config.width, config.ffn_hidden, config.dropout});
  }
}

Tensor ImageEncoder::operator()(const data::Image& image, const nn::ForwardContext& ctx) const {
  if (image.channels != config_.channels) throw DimensionError("encode_image: channel count mismatch");
  auto patches = patchify(image, config_.patch);
  auto x = projection_(patches);
  if (config_.positional) {
    if (patches.rows() != config_.patch_count()) {
      throw DimensionError("encode_image: expected " + std::to_string(config_.patch_count()) + " patches, got " +
                           std::to_string(patches.rows()));
    }
    x = ops::add(x, positions_);
  }
  x = drop_(x, ctx);
  const std::vector<std::uint8_t> all(x.rows(), 1);
  for (const auto& block : blocks_) x = block(x, x, all, ctx);
  return x;
}

namespace {
constexpr std::uint64_t kTeacherMapStream = 0x7eac4e7;
constexpr std::uint64_t kTeacherNoiseStream = 0x7eac4e8;
}  // namespace

SyntheticTeacher::SyntheticTeacher(const SyntheticTeacherConfig& config) : config_(config) {
  if (config.latent_dims < 2) throw std::invalid_argument("SyntheticTeacher: need sentiment plus content dims");
  const double sd = 1.0 / std::sqrt(static_cast<double>(config.width));
  const std::size_t dims = config.latent_dims;
  std::vector<double> text(config.width * dims), image(config.width * dims);
  for (std::size_t r = 0; r < config.width; ++r) {
    text[r * dims] = config.sentiment_scale * sd * counter_normal(config.seed, kTeacherMapStream + 1, r);
    image[r * dims] = config.sentiment_scale * sd * counter_normal(config.seed, kTeacherMapStream + 2, r);
    for (std::size_t c = 1; c < dims; ++c) {
      const double shared = sd * counter_normal(config.seed, kTeacherMapStream, r, c);
      text[r * dims + c] = shared;
      image[r * dims + c] = shared;
    }
  }
  text_map_ = Tensor::from({config.width, dims}, std::move(text));
  image_map_ = Tensor::from({config.width, dims}, std::move(image));
}

std::vector<double> SyntheticTeacher::apply(const Tensor& map, std::span<const double> z, std::uint64_t id,
                                            std::uint64_t stream) const {
  std::vector<double> out(config_.width);
  for (std::size_t r = 0; r < config_.width; ++r) {
    double v = 0.0;
    for (std::size_t c = 0; c < config_.latent_dims; ++c) v += map.at(r, c) * z[c];
    out[r] = v + config_.noise * counter_normal(config_.seed, kTeacherNoiseStream + stream, id, r);
  }
  return out;
}

TeacherEmbedding SyntheticTeacher::embed(const data::Sample& sample) const {
  if (sample.z_text.size() != config_.latent_dims || sample.z_image.size() != config_.latent_dims) {
    throw LookupError("synthetic teacher: sample " + std::to_string(sample.id) + " carries no matching latents");
  }
  return {Tensor::from({config_.width}, apply(text_map_, sample.z_text, sample.id, 0)),
          Tensor::from({config_.width}, apply(image_map_, sample.z_image, sample.id, 1))};
}

FixtureTeacher::FixtureTeacher(const io::FixtureFile& fixture) : width_(fixture.width) {
  for (const auto& r : fixture.records) {
    table_.insert_or_assign(r.id, TeacherEmbedding{Tensor::from({width_}, r.text), Tensor::from({width_}, r.image)});
  }
}

TeacherEmbedding FixtureTeacher::embed(const data::Sample& sample) const {
  auto it = table_.find(sample.id);
  if (it == table_.end()) throw LookupError("fixture teacher: no record for sample id " + std::to_string(sample.id));
  return it->second;
}

std::vector<Tensor> FixtureTeacher::frozen_tensors() const {
  std::vector<Tensor> out;
  for (const auto& [id, e] : table_) {
    out.push_back(e.text);
    out.push_back(e.image);
  }
  return out;
}

std::vector<io::EmbeddingPair> embed_all(const Teacher& teacher, const std::vector<data::Sample>& samples) {
  std::vector<io::EmbeddingPair> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    auto e = teacher.embed(s);
    out.emplace_back(std::vector<double>(e.text.data().begin(), e.text.data().end()),
                     std::vector<double>(e.image.data().begin(), e.image.data().end()));
  }
  return out;
}

}  // namespace clfa::encoders
