#include "clfa/model.hpp"

#include <algorithm>
#include <sstream>

#include "clfa/fixture.hpp"
#include "clfa/keyvalue.hpp"

namespace clfa::model {

bool ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "vocab_size") vocab_size = kv::to_size(key, value);
  else if (key == "width") width = kv::to_size(key, value);
  else if (key == "encoder_layers") encoder_layers = kv::to_size(key, value);
  else if (key == "encoder_ffn_hidden") encoder_ffn_hidden = kv::to_size(key, value);
  else if (key == "max_text_length") max_text_length = kv::to_size(key, value);
  else if (key == "image_size") image_size = kv::to_size(key, value);
  else if (key == "channels") channels = kv::to_size(key, value);
  else if (key == "patch") patch = kv::to_size(key, value);
  else if (key == "teacher_width") teacher_width = kv::to_size(key, value);
  else if (key == "projection_hidden") projection_hidden = kv::to_size(key, value);
  else if (key == "fusion") fusion = fusion::parse_fusion_variant(value);
  else if (key == "fusion_layers") fusion_layers = kv::to_size(key, value);
  else if (key == "fusion_ffn_hidden") fusion_ffn_hidden = kv::to_size(key, value);
  else if (key == "num_classes") num_classes = kv::to_size(key, value);
  else if (key == "dropout") dropout = kv::to_double(key, value);
  else if (key == "positional") positional = kv::to_bool(key, value);
  else if (key == "init_seed") init_seed = kv::to_u64(key, value);
  else return false;
  return true;
}

std::vector<std::string> ModelConfig::keys() {
  return {"vocab_size", "width", "encoder_layers", "encoder_ffn_hidden", "max_text_length", "image_size",
          "channels", "patch", "teacher_width", "projection_hidden", "fusion", "fusion_layers",
          "fusion_ffn_hidden", "num_classes", "dropout", "positional", "init_seed"};
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  if (width == 0 || teacher_width == 0 || projection_hidden == 0) throw ConfigError("widths must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (patch == 0 || image_size % patch != 0) throw ConfigError("image_size must be a multiple of patch");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  fusion::FusionConfig{fusion, fusion_layers, teacher_width, fusion_ffn_hidden, 0, dropout}.validate();
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out << "vocab_size = " << vocab_size << '\n'
      << "width = " << width << '\n'
      << "encoder_layers = " << encoder_layers << '\n'
      << "encoder_ffn_hidden = " << encoder_ffn_hidden << '\n'
      << "max_text_length = " << max_text_length << '\n'
      << "image_size = " << image_size << '\n'
      << "channels = " << channels << '\n'
      << "patch = " << patch << '\n'
      << "teacher_width = " << teacher_width << '\n'
      << "projection_hidden = " << projection_hidden << '\n'
      << "fusion = " << fusion::to_string(fusion) << '\n'
      << "fusion_layers = " << fusion_layers << '\n'
      << "fusion_ffn_hidden = " << fusion_ffn_hidden << '\n'
      << "num_classes = " << num_classes << '\n'
      << "dropout = " << kv::format_double(dropout) << '\n'
      << "positional = " << (positional ? "true" : "false") << '\n'
      << "init_seed = " << init_seed << '\n';
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  for (const auto& e : kv::parse(text)) {
    if (!c.set(e.key, e.value)) throw ConfigError("unknown model key '" + e.key + "'");
  }
  return c;
}

// ---------------------------------------------------------------- classifier

Classifier::Classifier(nn::ParameterStore& store, const std::string& name, std::size_t input,
                       std::size_t num_classes, double dropout)
    : hidden_(store, name + ".hidden", input, input),
      out_(store, name + ".out", input, num_classes),
      drop_(store, dropout),
      num_classes_(num_classes) {}

Tensor Classifier::operator()(const Tensor& fused, const nn::ForwardContext& ctx) const {
  return out_(drop_(ops::gelu(hidden_(fused)), ctx));
}

// --------------------------------------------------------------------- model

namespace {

// Dropout streams per sample slot; the text encoder runs twice for the
// knowledge variant and must not reuse its masks on the auxiliary text.
enum Stream : std::uint64_t { kTextStream = 0, kImageStream, kAuxStream, kHeadStream, kStreamsPerSlot };

nn::ForwardContext with_stream(nn::ForwardContext ctx, std::uint64_t slot, Stream s) {
  ctx.stream = slot * kStreamsPerSlot + s;
  return ctx;
}

}  // namespace

ClfaModel::ClfaModel(const ModelConfig& config) : config_(config), store_(config.init_seed) {
  config.validate();
  text_ = encoders::TextEncoder(store_, "text_encoder",
                                {config.vocab_size, config.width, config.encoder_layers, config.max_text_length,
                                 config.encoder_ffn_hidden, config.dropout, config.positional});
  image_ = encoders::ImageEncoder(store_, "image_encoder",
                                  {config.image_size, config.image_size, config.channels, config.patch, config.width,
                                   config.encoder_layers, config.encoder_ffn_hidden, config.dropout,
                                   config.positional});
  const alignment::ProjectionConfig proj{config.width, config.projection_hidden, config.teacher_width};
  text_proj_ = alignment::ProjectionHead(store_, "text_projection", proj);
  image_proj_ = alignment::ProjectionHead(store_, "image_projection", proj);
  fusion_ = fusion::Fusion(store_, "fusion",
                           {config.fusion, config.fusion_layers, config.teacher_width, config.fusion_ffn_hidden, 0,
                            config.dropout});
  classifier_ = Classifier(store_, "classifier", fusion_.output_width(), config.num_classes, config.dropout);
}

SampleOutput ClfaModel::forward(const data::Sample& sample, const nn::ForwardContext& ctx, std::uint64_t slot,
                                bool with_pooled) const {
  const auto text_f = text_(sample.tokens, sample.mask, with_stream(ctx, slot, kTextStream));
  const auto image_f = image_(sample.image, with_stream(ctx, slot, kImageStream));

  fusion::FusionInputs in;
  in.text = text_proj_.project_rows(text_f);
  in.text_mask = sample.mask;
  in.image = image_proj_.project_rows(image_f);
  std::vector<std::uint8_t> aux_mask;
  if (config_.fusion == fusion::FusionVariant::knowledge_cross_attention) {
    if (sample.aux_tokens.empty()) {
      throw ConfigError("knowledge_cross_attention: sample " + std::to_string(sample.id) + " has no auxiliary text");
    }
    aux_mask = data::mask_from_tokens(sample.aux_tokens);
    in.aux = text_proj_.project_rows(text_(sample.aux_tokens, aux_mask, with_stream(ctx, slot, kAuxStream)));
    in.aux_mask = aux_mask;
    in.text_tokens = sample.tokens;
    in.aux_tokens = sample.aux_tokens;
  }
  const auto head_ctx = with_stream(ctx, slot, kHeadStream);

  SampleOutput out;
  out.logits = classifier_(fusion_(in, head_ctx), head_ctx);
  if (with_pooled) {
    out.text_pooled = text_proj_.project(text_f, sample.mask);
    out.image_pooled = image_proj_.project(image_f, std::vector<std::uint8_t>(image_f.rows(), 1));
  }
  return out;
}

std::pair<Tensor, Tensor> ClfaModel::pooled_projections(const data::Sample& sample, const nn::ForwardContext& ctx,
                                                        std::uint64_t slot) const {
  const auto text_f = text_(sample.tokens, sample.mask, with_stream(ctx, slot, kTextStream));
  const auto image_f = image_(sample.image, with_stream(ctx, slot, kImageStream));
  return {text_proj_.project(text_f, sample.mask),
          image_proj_.project(image_f, std::vector<std::uint8_t>(image_f.rows(), 1))};
}

// ---------------------------------------------------------------- checkpoint

namespace {
constexpr char kCheckpointMagic[4] = {'C', 'L', 'F', 'C'};
constexpr std::uint8_t kCheckpointVersion = 0x01;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ClfaModel& model) {
  io::ByteWriter w;
  for (char c : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u8(kCheckpointVersion);
  w.text(model.config().to_text());
  w.text(model.fusion().lexicon() ? model.fusion().lexicon()->to_text() : std::string{});
  const auto& params = model.parameters().parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.text(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.value.data()) w.f64(v);
  }
  io::write_file(path, w.bytes());
}

std::unique_ptr<ClfaModel> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  try {
    const auto magic = r.take(4);
    if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic)) {
      throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
    }
    if (const auto v = r.u8(); v != kCheckpointVersion) {
      throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
    }
    auto model = std::make_unique<ClfaModel>(ModelConfig::from_text(r.text()));
    if (const auto lexicon = r.text(); !lexicon.empty()) model->set_lexicon(fusion::SentimentLexicon::parse(lexicon));
    auto& params = model->parameters().parameters();
    const auto count = r.u32();
    if (count != params.size()) {
      throw CheckpointError(path.string() + ": " + std::to_string(count) + " parameter blocks, model has " +
                            std::to_string(params.size()));
    }
    for (auto& p : params) {
      const auto name = r.text();
      if (name != p.name) throw CheckpointError(path.string() + ": expected block '" + p.name + "', found '" + name + "'");
      const auto rank = r.u32();
      if (rank > 4) throw CheckpointError(path.string() + ": block '" + name + "' has implausible rank");
      Shape shape(rank);
      for (auto& d : shape) d = r.u32();
      if (shape != p.value.shape()) {
        throw CheckpointError(path.string() + ": block '" + name + "' has shape " + shape_str(shape) + ", expected " +
                              shape_str(p.value.shape()));
      }
      auto dst = p.value.mutable_data();
      for (auto& v : dst) v = r.f64();
    }
    if (r.remaining() != 0) throw CheckpointError(path.string() + ": trailing bytes after parameter blocks");
    return model;
  } catch (const io::TruncatedError&) {
    throw CheckpointError(path.string() + ": truncated checkpoint");
  }
}

}  // namespace clfa::model
