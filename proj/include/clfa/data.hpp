#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace clfa::data {

/// Token id reserved for padding; positions holding it are masked out.
inline constexpr std::uint32_t kPadToken = 0;

/// Raw image, H×W×C row-major (channel fastest).
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  double at(std::size_t r, std::size_t c, std::size_t ch = 0) const {
    return pixels[(r * width + c) * channels + ch];
  }
};

struct Sample {
  std::uint64_t id = 0;
  std::vector<std::uint32_t> tokens;
  std::vector<std::uint8_t> mask;  // 1 = real token
  Image image;
  std::vector<std::uint32_t> aux_tokens;  // auxiliary (OCR-like) text; may be empty
  std::size_t label = 0;
  std::string split = "train";
  // Generator latents; empty for samples loaded from disk.
  std::vector<double> z_text;   // (a_t, u)
  std::vector<double> z_image;  // (a_i, u)
};

std::vector<std::uint8_t> mask_from_tokens(const std::vector<std::uint32_t>& tokens);

struct Dataset {
  std::size_t num_classes = 2;
  std::size_t vocab_size = 64;
  std::vector<Sample> samples;

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
  /// Copy holding only the samples of one split.
  Dataset subset(const std::string& split) const;
};

/// Layout of the synthetic incongruity task.
struct SyntheticOptions {
  std::size_t content_dims = 8;      // shared latent u, identical for text and image
  std::size_t sentiment_bins = 8;    // quantization levels for a_t / a_i readings
  double sentiment_range = 2.0;      // readings are clamped into [-range, range]
  std::size_t content_bins = 6;
  double content_range = 2.4;
  std::size_t sequence_length = 12;
  std::size_t aux_length = 6;
  std::size_t image_size = 16;       // square, one channel
  std::size_t patch = 8;
  double token_noise = 0.15;
  double pixel_noise = 0.1;
  double train_fraction = 0.8;
  double dev_fraction = 0.1;         // remainder goes to test
  std::size_t vocab_size = 64;
};

/// Deterministic synthetic dataset. Each sample draws a text sentiment a_t,
/// an image sentiment a_i and a shared content vector u; z_text = (a_t, u),
/// z_image = (a_i, u). With two classes the label is 1 iff sign(a_t) != sign(a_i);
/// with K > 2 classes it is the equal-probability bin of (a_t + a_i)/sqrt(2).
/// Tokens quantize noisy readings of z_text, the auxiliary tokens quantize
/// readings of z_image, and the image renders z_image through fixed per-patch
/// patterns plus pixel noise.
Dataset generate_synthetic(std::size_t n_samples, std::uint64_t seed, std::size_t num_classes,
                           const SyntheticOptions& options = {});

/// Latent dimension of z_text / z_image under `options`.
std::size_t latent_dims(const SyntheticOptions& options);

/// Lexicon values for the synthetic vocabulary: tokens that quantize the
/// sentiment coordinate carry the bin center rescaled into [-1, 1].
std::vector<std::pair<std::uint32_t, double>> synthetic_sentiment_values(const SyntheticOptions& options = {});

// ---------------------------------------------------------------- statistics

struct SplitCounts {
  std::string name;
  std::vector<std::size_t> per_class;
  std::size_t total() const;
};

struct DatasetStats {
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<SplitCounts> splits;
  SplitCounts totals() const;
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

DatasetStats dataset_stats(const Dataset& dataset);
void write_manifest(const std::filesystem::path& path, const DatasetStats& stats);
DatasetStats read_manifest(const std::filesystem::path& path);
/// Samples / per-class columns plus a Total row.
std::string format_stats(const DatasetStats& stats);

// ------------------------------------------------------------------- batching

/// Index batches for one epoch. The order is a seeded shuffle keyed by
/// (seed, epoch). With drop_duplicates, no batch holds two samples sharing an id.
std::vector<std::vector<std::size_t>> batch_iter(const Dataset& dataset, std::size_t batch_size,
                                                 std::uint64_t seed, std::uint64_t epoch = 0,
                                                 bool drop_duplicates = true);

}  // namespace clfa::data
