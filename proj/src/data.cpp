#include "clfa/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_set>

#include "clfa/random.hpp"

namespace clfa::data {

namespace {

// Purposes keep counter draws for different quantities independent.
enum Stream : std::uint64_t {
  kSentimentText = 1,
  kSentimentImage,
  kContent,
  kTokenNoise,
  kAuxNoise,
  kPixelNoise,
};

// Renderer patterns are part of the task definition, not of a dataset draw:
// every seed renders through the same basis so models transfer across splits.
constexpr std::uint64_t kRendererSeed = 0x5eed'c1fa'0000'0001ULL;

std::size_t quantize(double x, std::size_t bins, double range) {
  const double width = 2.0 * range / static_cast<double>(bins);
  const double b = std::floor((x + range) / width);
  return static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(bins - 1)));
}

// Token id for a reading of latent coordinate c. Id 0 is padding, then the
// sentiment bins, then content_bins ids per content coordinate.
std::uint32_t token_for(std::size_t c, double reading, const SyntheticOptions& o) {
  if (c == 0) return static_cast<std::uint32_t>(1 + quantize(reading, o.sentiment_bins, o.sentiment_range));
  return static_cast<std::uint32_t>(1 + o.sentiment_bins + (c - 1) * o.content_bins +
                                    quantize(reading, o.content_bins, o.content_range));
}

// Coordinate read at position j: the sentiment coordinate opens the sequence
// and reappears after a full sweep of the content coordinates.
std::size_t coordinate_at(std::size_t j, std::size_t dims) { return j % dims; }

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

std::vector<std::string> default_class_names(std::size_t k) {
  if (k == 2) return {"negative", "positive"};
  if (k == 3) return {"negative", "neutral", "positive"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("class" + std::to_string(i));
  return names;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

std::vector<std::uint8_t> mask_from_tokens(const std::vector<std::uint32_t>& tokens) {
  std::vector<std::uint8_t> mask(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) mask[i] = tokens[i] != kPadToken ? 1 : 0;
  return mask;
}

Dataset Dataset::subset(const std::string& split) const {
  Dataset out{num_classes, vocab_size, {}};
  for (const auto& s : samples) {
    if (s.split == split) out.samples.push_back(s);
  }
  return out;
}

std::size_t latent_dims(const SyntheticOptions& options) { return 1 + options.content_dims; }

Dataset generate_synthetic(std::size_t n_samples, std::uint64_t seed, std::size_t num_classes,
                           const SyntheticOptions& o) {
  if (num_classes < 2) throw std::invalid_argument("generate_synthetic: need at least 2 classes");
  if (n_samples == 0) throw std::invalid_argument("generate_synthetic: need at least one sample");
  const std::size_t dims = latent_dims(o);
  const std::size_t used_vocab = 1 + o.sentiment_bins + o.content_dims * o.content_bins;
  if (used_vocab > o.vocab_size) throw std::invalid_argument("generate_synthetic: vocabulary too small");
  if (o.patch == 0 || o.image_size % o.patch != 0) {
    throw std::invalid_argument("generate_synthetic: patch must divide image");
  }

  const std::size_t grid = o.image_size / o.patch;
  const std::size_t patch_pixels = o.patch * o.patch;
  const double pattern_scale = 1.0 / std::sqrt(static_cast<double>(dims));

  Dataset ds;
  ds.num_classes = num_classes;
  ds.vocab_size = o.vocab_size;
  ds.samples.reserve(n_samples);
  const auto n_train = static_cast<std::size_t>(std::llround(o.train_fraction * static_cast<double>(n_samples)));
  const auto n_dev = static_cast<std::size_t>(std::llround(o.dev_fraction * static_cast<double>(n_samples)));

  for (std::size_t idx = 0; idx < n_samples; ++idx) {
    Sample s;
    s.id = idx;
    s.split = idx < n_train ? "train" : (idx < n_train + n_dev ? "dev" : "test");
    const double a_t = counter_normal(seed, kSentimentText, idx);
    const double a_i = counter_normal(seed, kSentimentImage, idx);
    s.z_text.assign(dims, 0.0);
    s.z_image.assign(dims, 0.0);
    s.z_text[0] = a_t;
    s.z_image[0] = a_i;
    for (std::size_t c = 1; c < dims; ++c) {
      const double u = counter_normal(seed, kContent, idx, c);
      s.z_text[c] = u;
      s.z_image[c] = u;
    }

    if (num_classes == 2) {
      s.label = (a_t >= 0.0) != (a_i >= 0.0) ? 1 : 0;
    } else {
      const double p = standard_normal_cdf((a_t + a_i) / std::sqrt(2.0));
      s.label = std::min(num_classes - 1, static_cast<std::size_t>(p * static_cast<double>(num_classes)));
    }

    s.tokens.resize(o.sequence_length);
    for (std::size_t j = 0; j < o.sequence_length; ++j) {
      const std::size_t c = coordinate_at(j, dims);
      const double reading = s.z_text[c] + o.token_noise * counter_normal(seed, kTokenNoise, idx, j);
      s.tokens[j] = token_for(c, reading, o);
    }
    s.mask = mask_from_tokens(s.tokens);

    s.aux_tokens.resize(o.aux_length);
    for (std::size_t j = 0; j < o.aux_length; ++j) {
      const std::size_t c = coordinate_at(j, dims);
      const double reading = s.z_image[c] + o.token_noise * counter_normal(seed, kAuxNoise, idx, j);
      s.aux_tokens[j] = token_for(c, reading, o);
    }

    s.image.height = o.image_size;
    s.image.width = o.image_size;
    s.image.channels = 1;
    s.image.pixels.assign(o.image_size * o.image_size, 0.0);
    for (std::size_t pr = 0; pr < grid; ++pr) {
      for (std::size_t pc = 0; pc < grid; ++pc) {
        const std::size_t patch_index = pr * grid + pc;
        for (std::size_t k = 0; k < patch_pixels; ++k) {
          double v = 0.0;
          for (std::size_t c = 0; c < dims; ++c) {
            v += s.z_image[c] * pattern_scale * counter_normal(kRendererSeed, patch_index, c, k);
          }
          v += o.pixel_noise * counter_normal(seed, kPixelNoise, idx, patch_index * patch_pixels + k);
          const std::size_t r = pr * o.patch + k / o.patch;
          const std::size_t col = pc * o.patch + k % o.patch;
          s.image.pixels[r * o.image_size + col] = v;
        }
      }
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<std::pair<std::uint32_t, double>> synthetic_sentiment_values(const SyntheticOptions& o) {
  std::vector<std::pair<std::uint32_t, double>> values;
  const double width = 2.0 * o.sentiment_range / static_cast<double>(o.sentiment_bins);
  const double max_center = o.sentiment_range - 0.5 * width;
  for (std::size_t b = 0; b < o.sentiment_bins; ++b) {
    const double center = -o.sentiment_range + (static_cast<double>(b) + 0.5) * width;
    values.emplace_back(static_cast<std::uint32_t>(1 + b), center / max_center);
  }
  return values;
}

// ---------------------------------------------------------------- statistics

std::size_t SplitCounts::total() const {
  std::size_t n = 0;
  for (auto c : per_class) n += c;
  return n;
}

SplitCounts DatasetStats::totals() const {
  SplitCounts t{"Total", std::vector<std::size_t>(num_classes, 0)};
  for (const auto& s : splits)
    for (std::size_t k = 0; k < num_classes; ++k) t.per_class[k] += s.per_class[k];
  return t;
}

DatasetStats dataset_stats(const Dataset& dataset) {
  DatasetStats stats;
  stats.num_classes = dataset.num_classes;
  stats.class_names = default_class_names(dataset.num_classes);
  for (const char* name : {"train", "dev", "test"}) {
    stats.splits.push_back({name, std::vector<std::size_t>(dataset.num_classes, 0)});
  }
  for (const auto& s : dataset.samples) {
    auto it = std::find_if(stats.splits.begin(), stats.splits.end(),
                           [&](const SplitCounts& c) { return c.name == s.split; });
    if (it == stats.splits.end()) {
      stats.splits.push_back({s.split, std::vector<std::size_t>(dataset.num_classes, 0)});
      it = std::prev(stats.splits.end());
    }
    if (s.label >= dataset.num_classes) throw std::out_of_range("dataset_stats: label out of range");
    ++it->per_class[s.label];
  }
  return stats;
}

void write_manifest(const std::filesystem::path& path, const DatasetStats& stats) {
  std::ofstream out(path);
  if (!out) throw ManifestError("cannot write manifest " + path.string());
  out << "# clfa dataset manifest\n";
  out << "num_classes = " << stats.num_classes << "\n";
  out << "class_names = ";
  for (std::size_t k = 0; k < stats.class_names.size(); ++k) out << (k ? "," : "") << stats.class_names[k];
  out << "\nsplits = ";
  for (std::size_t i = 0; i < stats.splits.size(); ++i) out << (i ? "," : "") << stats.splits[i].name;
  out << "\n";
  for (const auto& s : stats.splits) {
    out << s.name << ".samples = " << s.total() << "\n";
    for (std::size_t k = 0; k < stats.num_classes; ++k) {
      out << s.name << "." << stats.class_names[k] << " = " << s.per_class[k] << "\n";
    }
  }
  if (!out) throw ManifestError("failed writing manifest " + path.string());
}

DatasetStats read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ManifestError("manifest line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ManifestError("manifest missing key '" + key + "'");
    return it->second;
  };
  auto get_count = [&](const std::string& key) -> std::size_t {
    const auto& v = get(key);
    std::size_t pos = 0;
    unsigned long long n = 0;
    try {
      n = std::stoull(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != v.size() || v.empty() || v[0] == '-') {
      throw ManifestError("manifest key '" + key + "' is not a count: " + v);
    }
    return static_cast<std::size_t>(n);
  };

  DatasetStats stats;
  stats.num_classes = get_count("num_classes");
  stats.class_names = kv.count("class_names") ? split_csv(get("class_names")) : default_class_names(stats.num_classes);
  if (stats.class_names.size() != stats.num_classes) {
    throw ManifestError("manifest class_names does not list num_classes names");
  }
  for (const auto& name : split_csv(get("splits"))) {
    SplitCounts split{name, {}};
    for (const auto& cls : stats.class_names) split.per_class.push_back(get_count(name + "." + cls));
    const std::size_t declared = get_count(name + ".samples");
    if (declared != split.total()) {
      throw ManifestError("manifest split '" + name + "' declares " + std::to_string(declared) +
                          " samples but its classes sum to " + std::to_string(split.total()));
    }
    stats.splits.push_back(std::move(split));
  }
  return stats;
}

std::string format_stats(const DatasetStats& stats) {
  std::ostringstream out;
  out << std::left << std::setw(8) << "" << std::right << std::setw(10) << "Samples";
  for (const auto& name : stats.class_names) out << std::setw(10) << name;
  out << "\n";
  auto emit = [&](const SplitCounts& s) {
    out << std::left << std::setw(8) << s.name << std::right << std::setw(10) << s.total();
    for (auto c : s.per_class) out << std::setw(10) << c;
    out << "\n";
  };
  for (const auto& s : stats.splits) emit(s);
  emit(stats.totals());
  return out.str();
}

// ------------------------------------------------------------------- batching

std::vector<std::vector<std::size_t>> batch_iter(const Dataset& dataset, std::size_t batch_size,
                                                 std::uint64_t seed, std::uint64_t epoch, bool drop_duplicates) {
  if (batch_size == 0) throw std::invalid_argument("batch_iter: batch size must be positive");
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(counter_uniform(seed, 0xba7c4, epoch, i) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }

  std::vector<std::vector<std::size_t>> batches;
  if (!drop_duplicates) {
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    }
    return batches;
  }
  // Greedy fill in shuffled order; a sample whose id is already in the open
  // batch waits for a later one.
  std::vector<std::size_t> pending = std::move(order);
  while (!pending.empty()) {
    std::vector<std::size_t> batch, rest;
    std::unordered_set<std::uint64_t> ids;
    for (auto i : pending) {
      if (batch.size() < batch_size && ids.insert(dataset.samples[i].id).second) {
        batch.push_back(i);
      } else {
        rest.push_back(i);
      }
    }
    batches.push_back(std::move(batch));
    pending = std::move(rest);
  }
  return batches;
}

}  // namespace clfa::data
