#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "clfa/data.hpp"
#include "clfa/fixture.hpp"
#include "clfa/model.hpp"
#include "clfa/train.hpp"

namespace clfa::cli {

/// Everything `train` needs, read from a `key = value` file.
struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  bool num_classes_set = false;  // otherwise taken from the data

  // Data source: a gen-data directory, or in-process synthetic generation.
  std::filesystem::path data;
  std::size_t synthetic_samples = 2000;
  std::uint64_t data_seed = 7;

  encoders::TeacherVariant teacher = encoders::TeacherVariant::synthetic;
  std::string lexicon;  // path, "synthetic" for the built-in values, or empty
  std::filesystem::path output_dir = "run";
  std::string eval_split = "dev";

  /// Model, training and run keys, in file order.
  static std::vector<std::string> keys();
  /// Throws ConfigError for unknown keys (listing the valid ones) and for
  /// inconsistent settings.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  void validate() const;
};

/// Files written by gen-data.
struct DataPaths {
  std::filesystem::path fixture, manifest, samples, lexicon;
  explicit DataPaths(const std::filesystem::path& dir);
};

/// Writes fixture (raw inputs + synthetic teacher embeddings), manifest,
/// per-sample sidecar (split, label, auxiliary tokens) and the synthetic lexicon.
void write_data_dir(const std::filesystem::path& dir, const data::Dataset& dataset,
                    const std::vector<io::EmbeddingPair>& embeddings);

struct LoadedData {
  data::Dataset dataset;
  io::FixtureFile fixture;
};

/// Reads a gen-data directory back; checks the manifest against the payload.
LoadedData read_data_dir(const std::filesystem::path& dir);

/// Lexicon selected by a RunConfig value; empty optional for "".
std::optional<fusion::SentimentLexicon> resolve_lexicon(const std::string& spec);

/// Parses "0,0.5,1" keeping each item's original spelling.
std::vector<std::pair<std::string, double>> parse_values(const std::string& list);
/// "3" means seeds 0,1,2; "4,9" lists seeds explicitly.
std::vector<std::uint64_t> parse_seeds(const std::string& list);

// Commands. Each returns the process exit code; messages go to `out`/`err`.
struct GenDataArgs {
  std::filesystem::path out;
  std::size_t n = 2000;
  std::uint64_t seed = 7;
  std::size_t classes = 2;
};
int cmd_gen_data(const GenDataArgs& args, std::ostream& out, std::ostream& err);

struct TrainArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::uint64_t> seed;
};
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::string split = "test";
  std::optional<std::filesystem::path> csv;
};
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);

struct HeatmapArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path out;
  std::string split = "test";
  std::size_t batch = 8;
  std::size_t offset = 0;
};
int cmd_heatmap(const HeatmapArgs& args, std::ostream& out, std::ostream& err);

struct SweepArgs {
  std::string values;
  std::string seeds;
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> out;
};
int cmd_sweep_alpha(const SweepArgs& args, std::ostream& out, std::ostream& err);

}  // namespace clfa::cli
