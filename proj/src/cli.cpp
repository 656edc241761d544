#include "clfa/cli.hpp"

#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "clfa/keyvalue.hpp"

namespace clfa::cli {

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

std::vector<std::string> run_keys() {
  return {"data", "synthetic_samples", "data_seed", "teacher", "lexicon", "output_dir", "eval_split"};
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::FileError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io::FileError("cannot write " + path.string());
  out << text;
  if (!out) throw io::FileError("failed writing " + path.string());
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

// Runs `body`, turning exceptions into a message and exit code 1.
template <typename F>
int guarded(std::ostream& err, const char* command, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    err << "clfa " << command << ": " << e.what() << '\n';
    return 1;
  }
}

struct Run {
  data::Dataset dataset;
  std::unique_ptr<encoders::Teacher> teacher;
};

Run prepare_run(const RunConfig& cfg) {
  Run run;
  if (cfg.data.empty()) {
    run.dataset = data::generate_synthetic(cfg.synthetic_samples, cfg.data_seed, cfg.model.num_classes);
    encoders::SyntheticTeacherConfig tc;
    tc.width = cfg.model.teacher_width;
    tc.seed = cfg.data_seed;
    run.teacher = std::make_unique<encoders::SyntheticTeacher>(tc);
  } else {
    auto loaded = read_data_dir(cfg.data);
    run.dataset = std::move(loaded.dataset);
    run.teacher = std::make_unique<encoders::FixtureTeacher>(loaded.fixture);
  }
  return run;
}

RunConfig adopt_classes(RunConfig cfg, const data::Dataset& dataset) {
  if (!cfg.num_classes_set) cfg.model.num_classes = dataset.num_classes;
  if (cfg.model.num_classes != dataset.num_classes) {
    throw ConfigError("num_classes = " + std::to_string(cfg.model.num_classes) + " but the data has " +
                      std::to_string(dataset.num_classes) + " classes");
  }
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------- RunConfig

std::vector<std::string> RunConfig::keys() {
  auto keys = model::ModelConfig::keys();
  for (auto& k : train::TrainConfig::keys()) keys.push_back(k);
  for (auto& k : run_keys()) keys.push_back(k);
  return keys;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  for (const auto& e : kv::parse(text)) {
    if (c.model.set(e.key, e.value)) {
      if (e.key == "num_classes") c.num_classes_set = true;
      continue;
    }
    if (c.train.set(e.key, e.value)) continue;
    if (e.key == "data") c.data = e.value;
    else if (e.key == "synthetic_samples") c.synthetic_samples = kv::to_size(e.key, e.value);
    else if (e.key == "data_seed") c.data_seed = kv::to_u64(e.key, e.value);
    else if (e.key == "teacher") {
      if (e.value == "synthetic") c.teacher = encoders::TeacherVariant::synthetic;
      else if (e.value == "fixture") c.teacher = encoders::TeacherVariant::fixture;
      else throw ConfigError("config key 'teacher': expected synthetic or fixture, got '" + e.value + "'");
    } else if (e.key == "lexicon") c.lexicon = e.value;
    else if (e.key == "output_dir") c.output_dir = e.value;
    else if (e.key == "eval_split") c.eval_split = e.value;
    else {
      throw ConfigError("config line " + std::to_string(e.line) + ": unknown key '" + e.key +
                        "'; valid keys: " + join(keys()));
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return parse(read_text(path)); }

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (data.empty() && teacher != encoders::TeacherVariant::synthetic) {
    throw ConfigError("teacher = fixture needs a data directory");
  }
  if (!data.empty() && teacher != encoders::TeacherVariant::fixture) {
    throw ConfigError("samples loaded from a data directory carry no latents; use teacher = fixture");
  }
  if (data.empty() && synthetic_samples == 0) throw ConfigError("synthetic_samples must be positive");
  if (model.fusion == fusion::FusionVariant::knowledge_cross_attention && lexicon.empty()) {
    throw ConfigError("knowledge_cross_attention requires a lexicon (path or 'synthetic')");
  }
}

// -------------------------------------------------------------- data files

DataPaths::DataPaths(const std::filesystem::path& dir)
    : fixture(dir / "data.clfa"), manifest(dir / "manifest.txt"), samples(dir / "samples.csv"),
      lexicon(dir / "lexicon.tsv") {}

void write_data_dir(const std::filesystem::path& dir, const data::Dataset& dataset,
                    const std::vector<io::EmbeddingPair>& embeddings) {
  std::filesystem::create_directories(dir);
  const DataPaths paths(dir);
  io::write_fixture(paths.fixture, io::make_fixture(dataset.samples, embeddings, true));
  data::write_manifest(paths.manifest, data::dataset_stats(dataset));

  std::ostringstream csv;
  csv << "index,id,split,label,aux_tokens\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset.samples[i];
    csv << i << ',' << s.id << ',' << s.split << ',' << s.label << ',';
    for (std::size_t j = 0; j < s.aux_tokens.size(); ++j) csv << (j ? " " : "") << s.aux_tokens[j];
    csv << '\n';
  }
  write_text(paths.samples, csv.str());

  fusion::SentimentLexicon lexicon;
  for (const auto& [id, v] : data::synthetic_sentiment_values()) lexicon.set(std::to_string(id), v);
  lexicon.save(paths.lexicon);
}

LoadedData read_data_dir(const std::filesystem::path& dir) {
  const DataPaths paths(dir);
  LoadedData out;
  out.fixture = io::read_fixture(paths.fixture);
  if (!out.fixture.has_raw) throw io::FixtureError(paths.fixture.string() + ": no raw inputs to train or score on");
  const auto stats = data::read_manifest(paths.manifest);

  const auto lines = split(read_text(paths.samples), '\n');
  if (lines.empty() || lines[0] != "index,id,split,label,aux_tokens") {
    throw io::FileError(paths.samples.string() + ": missing header");
  }
  out.dataset.num_classes = stats.num_classes;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split(lines[i], ',');
    if (fields.size() != 5) throw io::FileError(paths.samples.string() + ": line " + std::to_string(i + 1));
    const auto index = kv::to_size("index", fields[0]);
    if (index >= out.fixture.records.size()) {
      throw io::FileError(paths.samples.string() + ": index " + fields[0] + " beyond fixture");
    }
    const auto& rec = out.fixture.records[index];
    data::Sample s;
    s.id = kv::to_u64("id", fields[1]);
    if (s.id != rec.id) throw io::FileError(paths.samples.string() + ": id mismatch at index " + fields[0]);
    s.split = fields[2];
    s.label = kv::to_size("label", fields[3]);
    if (s.label >= stats.num_classes) throw io::FileError(paths.samples.string() + ": label out of range");
    for (const auto& t : split(fields[4], ' ')) {
      if (!t.empty()) s.aux_tokens.push_back(static_cast<std::uint32_t>(kv::to_u64("aux_tokens", t)));
    }
    s.tokens = rec.raw->tokens;
    s.mask = data::mask_from_tokens(s.tokens);
    s.image = rec.raw->image;
    out.dataset.samples.push_back(std::move(s));
  }
  if (out.dataset.size() != out.fixture.records.size()) {
    throw io::FileError(paths.samples.string() + ": " + std::to_string(out.dataset.size()) + " rows for " +
                        std::to_string(out.fixture.records.size()) + " fixture records");
  }
  const auto actual = data::dataset_stats(out.dataset);
  for (const auto& split_counts : stats.splits) {
    bool matched = false;
    for (const auto& a : actual.splits) {
      if (a.name == split_counts.name) matched = a.per_class == split_counts.per_class;
    }
    if (!matched) throw data::ManifestError("manifest counts for split '" + split_counts.name + "' do not match the data");
  }
  return out;
}

std::optional<fusion::SentimentLexicon> resolve_lexicon(const std::string& spec) {
  if (spec.empty()) return std::nullopt;
  if (spec == "synthetic") {
    fusion::SentimentLexicon lex;
    for (const auto& [id, v] : data::synthetic_sentiment_values()) lex.set(std::to_string(id), v);
    return lex;
  }
  return fusion::SentimentLexicon::load(spec);
}

std::vector<std::pair<std::string, double>> parse_values(const std::string& list) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& raw : split(list, ',')) {
    std::string item = raw;
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    out.emplace_back(item, kv::to_double("values", item));
  }
  if (out.empty()) throw ConfigError("--values: empty list");
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  const auto items = split(list, ',');
  std::vector<std::uint64_t> out;
  if (items.size() == 1) {
    const auto n = kv::to_u64("seeds", items[0]);
    for (std::uint64_t s = 0; s < n; ++s) out.push_back(s);
  } else {
    for (const auto& item : items) out.push_back(kv::to_u64("seeds", item));
  }
  if (out.empty()) throw ConfigError("--seeds: no seeds");
  return out;
}

// ----------------------------------------------------------------- commands

int cmd_gen_data(const GenDataArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, "gen-data", [&] {
    if (args.classes < 2) throw ConfigError("--classes must be at least 2");
    if (args.n == 0) throw ConfigError("--n must be positive");
    if (args.out.empty()) throw ConfigError("--out is required");
    const auto dataset = data::generate_synthetic(args.n, args.seed, args.classes);
    encoders::SyntheticTeacherConfig tc;
    tc.seed = args.seed;
    const encoders::SyntheticTeacher teacher(tc);
    write_data_dir(args.out, dataset, encoders::embed_all(teacher, dataset.samples));
    out << data::format_stats(data::dataset_stats(dataset));
    out << "wrote " << args.out.string() << '\n';
    return 0;
  });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, "train", [&] {
    auto cfg = RunConfig::load(args.config);
    if (args.out_dir) cfg.output_dir = *args.out_dir;
    if (args.seed) {
      cfg.train.seed = *args.seed;
      cfg.model.init_seed = *args.seed;
    }
    auto run = prepare_run(cfg);
    cfg = adopt_classes(cfg, run.dataset);

    const auto train_set = run.dataset.subset("train");
    const auto eval_set = run.dataset.subset(cfg.eval_split);
    if (train_set.empty()) throw ConfigError("no samples in the train split");
    model::ClfaModel model(cfg.model);
    model.set_lexicon(resolve_lexicon(cfg.lexicon));
    train::TrainOptions options;
    if (!eval_set.empty()) options.eval_data = &eval_set;
    const auto history = train::train(model, *run.teacher, train_set, cfg.train, options);

    std::filesystem::create_directories(cfg.output_dir);
    model::save_checkpoint(cfg.output_dir / "model.ckpt", model);
    std::ofstream csv(cfg.output_dir / "history.csv", std::ios::binary);
    if (!csv) throw io::FileError("cannot write " + (cfg.output_dir / "history.csv").string());
    train::write_history_csv(csv, history);
    const auto& last = history.back();
    out << "epochs " << history.size() << "  L_con " << kv::format_double(last.l_con) << "  L_ce "
        << kv::format_double(last.l_ce) << "  " << cfg.eval_split << " macro-F1 "
        << kv::format_double(last.metrics.macro_f1) << '\n';
    out << "wrote " << (cfg.output_dir / "model.ckpt").string() << " and history.csv\n";
    return 0;
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, "eval", [&] {
    const auto model = model::load_checkpoint(args.checkpoint);
    const auto loaded = read_data_dir(args.data);
    const auto subset = args.split == "all" ? loaded.dataset : loaded.dataset.subset(args.split);
    if (subset.empty()) throw ConfigError("split '" + args.split + "' is empty");
    const auto metrics = train::evaluate(*model, subset);
    out << train::format_metrics(metrics);
    if (args.csv) {
      std::ofstream csv(*args.csv, std::ios::binary);
      if (!csv) throw io::FileError("cannot write " + args.csv->string());
      train::write_metrics_csv(csv, metrics);
    }
    return 0;
  });
}

int cmd_heatmap(const HeatmapArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, "heatmap", [&] {
    if (args.batch == 0) throw ConfigError("--batch must be positive");
    const auto model = model::load_checkpoint(args.checkpoint);
    const auto loaded = read_data_dir(args.data);
    const auto subset = args.split == "all" ? loaded.dataset : loaded.dataset.subset(args.split);
    if (args.offset >= subset.size()) throw ConfigError("--offset beyond split '" + args.split + "'");
    data::Dataset batch;
    batch.num_classes = subset.num_classes;
    const auto end = std::min(subset.size(), args.offset + args.batch);
    batch.samples.assign(subset.samples.begin() + static_cast<std::ptrdiff_t>(args.offset),
                         subset.samples.begin() + static_cast<std::ptrdiff_t>(end));
    const auto matrix = train::model_heatmap(*model, batch);
    std::ofstream csv(args.out, std::ios::binary);
    if (!csv) throw io::FileError("cannot write " + args.out.string());
    train::write_matrix_csv(csv, matrix);
    out << "heatmap " << matrix.size() << "x" << matrix.size() << " -> " << args.out.string() << '\n';
    out << "diagonal-max rate, this batch: " << kv::format_double(train::diagonal_max_rate(matrix)) << '\n';
    out << "diagonal-max rate, all batches of " << args.batch << " in '" << args.split
        << "': " << kv::format_double(train::batched_diagonal_max_rate(*model, subset, args.batch)) << '\n';
    return 0;
  });
}

int cmd_sweep_alpha(const SweepArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, "sweep-alpha", [&] {
    const auto values = parse_values(args.values);
    const auto seeds = parse_seeds(args.seeds);
    auto base = args.config ? RunConfig::load(*args.config) : RunConfig::parse("");
    auto run = prepare_run(base);
    base = adopt_classes(base, run.dataset);
    const auto train_set = run.dataset.subset("train");
    const auto dev_set = run.dataset.subset(base.eval_split);
    if (train_set.empty() || dev_set.empty()) throw ConfigError("sweep needs non-empty train and eval splits");

    std::ostringstream csv;
    csv << "alpha,seed,acc,macro_P,macro_R,macro_F1\n";
    for (const auto& [spelling, alpha] : values) {
      if (alpha < 0.0) throw ParameterError("alpha must be non-negative, got " + spelling);
      for (auto seed : seeds) {
        auto cfg = base;
        cfg.train.alpha = alpha;
        cfg.train.seed = seed;
        cfg.model.init_seed = seed;
        model::ClfaModel model(cfg.model);
        model.set_lexicon(resolve_lexicon(cfg.lexicon));
        train::train(model, *run.teacher, train_set, cfg.train);
        const auto m = train::evaluate(model, dev_set);
        csv << spelling << ',' << seed << ',' << kv::format_double(m.accuracy) << ','
            << kv::format_double(m.macro_precision) << ',' << kv::format_double(m.macro_recall) << ','
            << kv::format_double(m.macro_f1) << '\n';
      }
    }
    if (args.out) {
      write_text(*args.out, csv.str());
    } else {
      out << csv.str();
    }
    return 0;
  });
}

}  // namespace clfa::cli
