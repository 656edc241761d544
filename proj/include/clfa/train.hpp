#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "clfa/alignment.hpp"
#include "clfa/data.hpp"
#include "clfa/encoders.hpp"
#include "clfa/model.hpp"

namespace clfa::train {

struct TrainConfig {
  double alpha = 1.0;
  double tau = 0.1;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  std::size_t epochs = 15;
  double warmup_proportion = 0.1;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool drop_duplicates = true;
  /// false removes the alignment branch from the graph entirely (no pooled
  /// projections, no teacher lookups); L_con is then reported as 0.
  bool alignment_enabled = true;

  bool set(const std::string& key, const std::string& value);
  static std::vector<std::string> keys();
  void validate() const;
  std::string to_text() const;

  /// Learning rate tuned for pretrained encoders; everything else as default.
  static TrainConfig full_scale();
};

struct LossReport {
  alignment::AlignmentLoss align;
  double l_ce = 0.0;
  double alpha = 0.0;
  double total = 0.0;
};

/// total = α·L_con + L_ce. Throws ParameterError for α < 0.
LossReport total_loss(const alignment::AlignmentLoss& align, double l_ce, double alpha);

/// Linear ramp from 0 to peak over the first warmup_prop·total_steps steps,
/// then linear decay to 0 at total_steps.
double lr_schedule(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_prop);

/// Adam with decoupled weight decay, applied only to parameters flagged `decay`.
class AdamW {
 public:
  AdamW(std::vector<nn::Parameter>& params, double beta1, double beta2, double eps, double weight_decay);
  void step(double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<nn::Parameter>* params_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// ------------------------------------------------------------------- metrics

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct MetricsReport {
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t count = 0;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;  // mean of per-class F1
};

/// Zero denominators give 0 for that rate.
MetricsReport metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion);
/// Index of the largest logit; ties go to the lowest index.
std::size_t argmax(std::span<const double> logits);

// ------------------------------------------------------------------ training

struct BatchLoss {
  Tensor total;  // graph node
  LossReport report;
  Tensor logits;  // B×num_classes
};

/// Loss of one batch under `ctx`; `indices` select rows of `dataset`.
BatchLoss batch_loss(const model::ClfaModel& model, const encoders::Teacher& teacher, const data::Dataset& dataset,
                     std::span<const std::size_t> indices, const TrainConfig& config, const nn::ForwardContext& ctx);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double l_ic = 0, l_ci = 0, l_i = 0, l_t = 0, l_con = 0, l_ce = 0, total = 0;
  MetricsReport metrics;
};

struct StepInfo {
  std::size_t step = 0;
  double lr = 0.0;
  LossReport loss;
};

struct TrainOptions {
  /// Scored after every epoch; when null the epoch's training predictions are scored.
  const data::Dataset* eval_data = nullptr;
  std::function<void(const StepInfo&)> on_step;
};

/// Trains `model` in place. Loss columns are batch means averaged over the epoch.
std::vector<EpochRecord> train(model::ClfaModel& model, const encoders::Teacher& teacher,
                               const data::Dataset& dataset, const TrainConfig& config,
                               const TrainOptions& options = {});

MetricsReport evaluate(const model::ClfaModel& model, const data::Dataset& dataset);

// ------------------------------------------------------------------ heatmaps

using Matrix = std::vector<std::vector<double>>;

/// Entry (i, j) = cosine similarity of text row i and image row j.
Matrix heatmap(const Tensor& text, const Tensor& image);
/// Heatmap of the model's pooled projections for every sample (eval mode).
Matrix model_heatmap(const model::ClfaModel& model, const data::Dataset& dataset);
/// Fraction of rows whose diagonal entry is at least every other entry.
double diagonal_max_rate(const Matrix& m);
/// Splits `dataset` into consecutive mini-batches of `batch_size` (the last may
/// be short), builds one heatmap per batch and returns the diagonal-maximum
/// rate over all rows of all batches.
double batched_diagonal_max_rate(const model::ClfaModel& model, const data::Dataset& dataset,
                                 std::size_t batch_size);

// ---------------------------------------------------------------------- CSV

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);
/// Same metric columns as the history: acc, macro_P, macro_R, macro_F1.
void write_metrics_csv(std::ostream& out, const MetricsReport& metrics);
void write_matrix_csv(std::ostream& out, const Matrix& m);
std::string format_metrics(const MetricsReport& metrics);

}  // namespace clfa::train
