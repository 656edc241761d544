#include "clfa/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "clfa/keyvalue.hpp"

namespace clfa::train {

bool TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "alpha") alpha = kv::to_double(key, value);
  else if (key == "tau") tau = kv::to_double(key, value);
  else if (key == "batch_size") batch_size = kv::to_size(key, value);
  else if (key == "learning_rate") learning_rate = kv::to_double(key, value);
  else if (key == "epochs") epochs = kv::to_size(key, value);
  else if (key == "warmup_proportion") warmup_proportion = kv::to_double(key, value);
  else if (key == "weight_decay") weight_decay = kv::to_double(key, value);
  else if (key == "beta1") beta1 = kv::to_double(key, value);
  else if (key == "beta2") beta2 = kv::to_double(key, value);
  else if (key == "adam_eps") adam_eps = kv::to_double(key, value);
  else if (key == "seed") seed = kv::to_u64(key, value);
  else if (key == "drop_duplicates") drop_duplicates = kv::to_bool(key, value);
  else if (key == "alignment_enabled") alignment_enabled = kv::to_bool(key, value);
  else return false;
  return true;
}

std::vector<std::string> TrainConfig::keys() {
  return {"alpha", "tau", "batch_size", "learning_rate", "epochs", "warmup_proportion", "weight_decay",
          "beta1", "beta2", "adam_eps", "seed", "drop_duplicates", "alignment_enabled"};
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0)) throw ParameterError("alpha must be non-negative");
  if (!(tau > 0.0)) throw ParameterError("tau must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(warmup_proportion >= 0.0 && warmup_proportion < 1.0)) throw ConfigError("warmup_proportion must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  out << "alpha = " << kv::format_double(alpha) << '\n'
      << "tau = " << kv::format_double(tau) << '\n'
      << "batch_size = " << batch_size << '\n'
      << "learning_rate = " << kv::format_double(learning_rate) << '\n'
      << "epochs = " << epochs << '\n'
      << "warmup_proportion = " << kv::format_double(warmup_proportion) << '\n'
      << "weight_decay = " << kv::format_double(weight_decay) << '\n'
      << "beta1 = " << kv::format_double(beta1) << '\n'
      << "beta2 = " << kv::format_double(beta2) << '\n'
      << "adam_eps = " << kv::format_double(adam_eps) << '\n'
      << "seed = " << seed << '\n'
      << "drop_duplicates = " << (drop_duplicates ? "true" : "false") << '\n'
      << "alignment_enabled = " << (alignment_enabled ? "true" : "false") << '\n';
  return out.str();
}

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.learning_rate = 1e-5;
  return c;
}

LossReport total_loss(const alignment::AlignmentLoss& align, double l_ce, double alpha) {
  if (!(alpha >= 0.0)) throw ParameterError("total_loss: alpha must be non-negative");
  LossReport r;
  r.align = align;
  r.l_ce = l_ce;
  r.alpha = alpha;
  r.total = alpha * align.l_con + l_ce;
  return r;
}

double lr_schedule(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_prop) {
  if (total_steps == 0) return 0.0;
  const double s = static_cast<double>(std::min(step, total_steps));
  const double total = static_cast<double>(total_steps);
  const double warm = warmup_prop * total;
  if (s < warm) return peak_lr * s / warm;
  return peak_lr * (total - s) / (total - warm);
}

AdamW::AdamW(std::vector<nn::Parameter>& params, double beta1, double beta2, double eps, double weight_decay)
    : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.numel(), 0.0);
    v_.emplace_back(p.value.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_->size(); ++k) {
    auto& p = (*params_)[k];
    auto values = p.value.mutable_data();
    const auto& grad = p.value.impl()->grad;
    auto& m = m_[k];
    auto& v = v_[k];
    const double decay = p.decay ? lr * weight_decay_ : 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      values[i] -= decay * values[i];
      values[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

// ------------------------------------------------------------------- metrics

MetricsReport metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
  const std::size_t k = confusion.size();
  for (const auto& row : confusion) {
    if (row.size() != k) throw DimensionError("metrics: confusion matrix must be square");
  }
  MetricsReport r;
  r.confusion = confusion;
  r.per_class.resize(k);
  std::size_t correct = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t predicted = 0, actual = 0;
    for (std::size_t j = 0; j < k; ++j) {
      predicted += confusion[j][c];
      actual += confusion[c][j];
      r.count += confusion[c][j];
    }
    const double tp = static_cast<double>(confusion[c][c]);
    correct += confusion[c][c];
    auto& m = r.per_class[c];
    m.support = actual;
    m.precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    m.recall = actual ? tp / static_cast<double>(actual) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  }
  r.accuracy = r.count ? static_cast<double>(correct) / static_cast<double>(r.count) : 0.0;
  if (k > 0) {
    for (const auto& m : r.per_class) {
      r.macro_precision += m.precision;
      r.macro_recall += m.recall;
      r.macro_f1 += m.f1;
    }
    r.macro_precision /= static_cast<double>(k);
    r.macro_recall /= static_cast<double>(k);
    r.macro_f1 /= static_cast<double>(k);
  }
  return r;
}

std::size_t argmax(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

// ------------------------------------------------------------------ training

BatchLoss batch_loss(const model::ClfaModel& model, const encoders::Teacher& teacher, const data::Dataset& dataset,
                     std::span<const std::size_t> indices, const TrainConfig& config,
                     const nn::ForwardContext& ctx) {
  if (indices.empty()) throw ConfigError("batch_loss: empty batch");
  std::vector<Tensor> logits, text, image, teacher_text, teacher_image;
  std::vector<std::size_t> labels;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& sample = dataset.samples.at(indices[k]);
    auto out = model.forward(sample, ctx, k, config.alignment_enabled);
    logits.push_back(out.logits);
    labels.push_back(sample.label);
    if (config.alignment_enabled) {
      text.push_back(out.text_pooled);
      image.push_back(out.image_pooled);
      auto t = teacher.embed(sample);
      teacher_text.push_back(t.text);
      teacher_image.push_back(t.image);
    }
  }
  BatchLoss out;
  out.logits = ops::stack_rows(logits);
  auto ce = ops::cross_entropy_rows(out.logits, labels);
  alignment::AlignmentLoss align;
  align.tau = config.tau;
  out.total = ce;
  if (config.alignment_enabled) {
    align = alignment::alignment_loss(ops::stack_rows(image), ops::stack_rows(teacher_image), ops::stack_rows(text),
                                      ops::stack_rows(teacher_text), config.tau);
    // At α = 0 the alignment term is reported but kept out of the graph.
    if (config.alpha > 0.0) out.total = ops::add(ops::scale(align.value, config.alpha), ce);
  }
  out.report = total_loss(align, ce.item(), config.alpha);
  return out;
}

namespace {

void check_teacher_frozen(const model::ClfaModel& model, const encoders::Teacher& teacher) {
  std::unordered_set<const TensorImpl*> owned;
  for (const auto& p : model.parameters().parameters()) owned.insert(p.value.impl());
  for (const auto& t : teacher.frozen_tensors()) {
    if (owned.count(t.impl())) throw ConfigError("train: a teacher tensor is registered as a student parameter");
  }
}

}  // namespace

std::vector<EpochRecord> train(model::ClfaModel& model, const encoders::Teacher& teacher,
                               const data::Dataset& dataset, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  if (config.alignment_enabled && teacher.width() != model.config().teacher_width) {
    throw ConfigError("train: teacher width " + std::to_string(teacher.width()) + " differs from model d_C " +
                      std::to_string(model.config().teacher_width));
  }
  check_teacher_frozen(model, teacher);

  std::vector<std::vector<std::vector<std::size_t>>> schedule;
  std::size_t total_steps = 0;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    schedule.push_back(data::batch_iter(dataset, config.batch_size, config.seed, e, config.drop_duplicates));
    total_steps += schedule.back().size();
  }

  auto& params = model.parameters().parameters();
  AdamW optimizer(params, config.beta1, config.beta2, config.adam_eps, config.weight_decay);
  const std::size_t k = model.config().num_classes;
  std::vector<EpochRecord> history;
  std::size_t step = 0;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e + 1;
    std::vector<std::vector<std::size_t>> confusion(k, std::vector<std::size_t>(k, 0));
    for (const auto& batch : schedule[e]) {
      const nn::ForwardContext ctx{true, config.seed, step, 0};
      auto loss = batch_loss(model, teacher, dataset, batch, config, ctx);
      model.parameters().zero_grad();
      loss.total.backward();
      const double lr = lr_schedule(step, total_steps, config.learning_rate, config.warmup_proportion);
      optimizer.step(lr);

      const auto& a = loss.report.align;
      rec.l_ic += a.l_ic;
      rec.l_ci += a.l_ci;
      rec.l_i += a.l_i;
      rec.l_t += a.l_t;
      rec.l_con += a.l_con;
      rec.l_ce += loss.report.l_ce;
      if (!options.eval_data) {
        for (std::size_t r = 0; r < batch.size(); ++r) {
          const auto row = loss.logits.data().subspan(r * k, k);
          ++confusion[dataset.samples[batch[r]].label][argmax(row)];
        }
      }
      if (options.on_step) options.on_step({step, lr, loss.report});
      ++step;
    }
    const double n = static_cast<double>(schedule[e].size());
    for (double* v : {&rec.l_ic, &rec.l_ci, &rec.l_i, &rec.l_t, &rec.l_con, &rec.l_ce}) *v /= n;
    rec.total = config.alpha * rec.l_con + rec.l_ce;
    rec.metrics = options.eval_data ? evaluate(model, *options.eval_data) : metrics_from_confusion(confusion);
    history.push_back(std::move(rec));
  }
  model.parameters().zero_grad();
  return history;
}

MetricsReport evaluate(const model::ClfaModel& model, const data::Dataset& dataset) {
  NoGradGuard guard;
  const std::size_t k = model.config().num_classes;
  std::vector<std::vector<std::size_t>> confusion(k, std::vector<std::size_t>(k, 0));
  const nn::ForwardContext ctx{};
  for (const auto& sample : dataset.samples) {
    if (sample.label >= k) throw RangeError("evaluate: label " + std::to_string(sample.label) + " out of range");
    const auto out = model.forward(sample, ctx, 0, false);
    ++confusion[sample.label][argmax(out.logits.data())];
  }
  return metrics_from_confusion(confusion);
}

// ------------------------------------------------------------------ heatmaps

Matrix heatmap(const Tensor& text, const Tensor& image) {
  if (text.rank() != 2 || text.shape() != image.shape()) {
    throw DimensionError("heatmap: text " + shape_str(text.shape()) + " and image " + shape_str(image.shape()) +
                         " must both be B×d");
  }
  const std::size_t b = text.rows(), d = text.cols();
  auto dot = [d](const double* x, const double* y) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += x[i] * y[i];
    return s;
  };
  std::vector<double> tn(b), in(b);
  for (std::size_t i = 0; i < b; ++i) {
    tn[i] = dot(&text.data()[i * d], &text.data()[i * d]);
    in[i] = dot(&image.data()[i * d], &image.data()[i * d]);
    if (tn[i] == 0.0 || in[i] == 0.0) throw DomainError("heatmap: zero-norm projection in row " + std::to_string(i));
  }
  Matrix m(b, std::vector<double>(b));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      // sqrt(x·x) is exact for x = fl(s²), so identical rows give exactly 1.
      const double c = dot(&text.data()[i * d], &image.data()[j * d]) / std::sqrt(tn[i] * in[j]);
      m[i][j] = std::clamp(c, -1.0, 1.0);
    }
  return m;
}

Matrix model_heatmap(const model::ClfaModel& model, const data::Dataset& dataset) {
  if (dataset.empty()) throw ConfigError("heatmap: empty dataset");
  NoGradGuard guard;
  std::vector<Tensor> text, image;
  const nn::ForwardContext ctx{};
  for (const auto& sample : dataset.samples) {
    auto [t, i] = model.pooled_projections(sample, ctx);
    text.push_back(t);
    image.push_back(i);
  }
  return heatmap(ops::stack_rows(text), ops::stack_rows(image));
}

double diagonal_max_rate(const Matrix& m) {
  if (m.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() != m.size()) throw DimensionError("diagonal_max_rate: matrix must be square");
    hits += *std::max_element(m[i].begin(), m[i].end()) <= m[i][i];
  }
  return static_cast<double>(hits) / static_cast<double>(m.size());
}

double batched_diagonal_max_rate(const model::ClfaModel& model, const data::Dataset& dataset,
                                 std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("heatmap: batch size must be positive");
  std::size_t hits = 0;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    data::Dataset chunk;
    chunk.num_classes = dataset.num_classes;
    const auto end = std::min(dataset.size(), start + batch_size);
    chunk.samples.assign(dataset.samples.begin() + static_cast<std::ptrdiff_t>(start),
                         dataset.samples.begin() + static_cast<std::ptrdiff_t>(end));
    hits += static_cast<std::size_t>(std::llround(diagonal_max_rate(model_heatmap(model, chunk)) *
                                                  static_cast<double>(chunk.size())));
  }
  return dataset.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(dataset.size());
}

// ---------------------------------------------------------------------- CSV

namespace {
std::string num(double v) { return kv::format_double(v); }
}  // namespace

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,L_ic,L_ci,L_i,L_t,L_con,L_ce,total,acc,macro_P,macro_R,macro_F1\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << num(r.l_ic) << ',' << num(r.l_ci) << ',' << num(r.l_i) << ',' << num(r.l_t) << ','
        << num(r.l_con) << ',' << num(r.l_ce) << ',' << num(r.total) << ',' << num(r.metrics.accuracy) << ','
        << num(r.metrics.macro_precision) << ',' << num(r.metrics.macro_recall) << ',' << num(r.metrics.macro_f1)
        << '\n';
  }
}

void write_metrics_csv(std::ostream& out, const MetricsReport& m) {
  out << "acc,macro_P,macro_R,macro_F1\n"
      << num(m.accuracy) << ',' << num(m.macro_precision) << ',' << num(m.macro_recall) << ',' << num(m.macro_f1)
      << '\n';
}

void write_matrix_csv(std::ostream& out, const Matrix& m) {
  for (const auto& row : m) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << num(row[j]);
    out << '\n';
  }
}

std::string format_metrics(const MetricsReport& m) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "samples   " << m.count << '\n'
      << "accuracy  " << m.accuracy << '\n'
      << "macro P   " << m.macro_precision << '\n'
      << "macro R   " << m.macro_recall << '\n'
      << "macro F1  " << m.macro_f1 << '\n';
  out << "class  precision  recall  f1      support\n";
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const auto& pc = m.per_class[c];
    out << std::left << std::setw(7) << c << std::setw(11) << pc.precision << std::setw(8) << pc.recall
        << std::setw(8) << pc.f1 << pc.support << '\n';
  }
  out << "confusion (rows true, columns predicted)\n";
  for (const auto& row : m.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? " " : "") << row[j];
    out << '\n';
  }
  return out.str();
}

}  // namespace clfa::train
