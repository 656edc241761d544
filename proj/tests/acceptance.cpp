// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--known-unattained name,...] [name...]
//
// With names, only those criteria run. A criterion listed as known-unattained
// still prints FAIL when it fails but does not change the exit code.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "clfa/cli.hpp"
#include "clfa/grad_check.hpp"
#include "clfa/model.hpp"
#include "clfa/train.hpp"
#include "test_util.hpp"

using namespace clfa;
using testutil::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

encoders::SyntheticTeacher make_teacher(std::uint64_t seed) {
  return encoders::SyntheticTeacher({.width = 32, .latent_dims = 9, .noise = 0.1, .seed = seed});
}

fusion::SentimentLexicon synthetic_lexicon() {
  fusion::SentimentLexicon lex;
  for (const auto& [id, v] : data::synthetic_sentiment_values()) lex.set(std::to_string(id), v);
  return lex;
}

data::Dataset held_out(const data::Dataset& ds) {
  data::Dataset held = ds.subset("dev");
  for (const auto& s : ds.subset("test").samples) held.samples.push_back(s);
  return held;
}

std::vector<double> flat_parameters(const model::ClfaModel& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters().parameters()) out.insert(out.end(), p.value.data().begin(), p.value.data().end());
  return out;
}

Tensor weighted_sum(const Tensor& y, std::uint64_t seed = 99) {
  return ops::sum(ops::mul(y, random_tensor(y.shape(), seed, 1.0, false)));
}

// ------------------------------------------------------------ gradient suite

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  auto run = [&](const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                 GradCheckOptions options = {}) {
    const double e = grad_check(f, std::move(inputs), options).max_rel_error;
    ++checks;
    if (e > worst || worst_name.empty()) {
      worst = std::max(worst, e);
      worst_name = name;
    }
  };

  auto a = random_tensor({3, 4}, 11);
  auto b = random_tensor({3, 4}, 12);
  auto pos = Tensor::from({3, 4}, {0.5, 1.2, 2.0, 0.8, 1.5, 0.3, 0.9, 1.1, 2.5, 0.7, 1.4, 0.6});
  auto m4x2 = random_tensor({4, 2}, 10);
  const std::vector<std::uint8_t> mask{1, 0, 1};
  const std::vector<std::uint8_t> key_mask{1, 1, 0, 1};
  run("matmul", [&] { return weighted_sum(ops::matmul(a, m4x2)); }, {a, m4x2});
  run("transpose", [&] { return weighted_sum(ops::transpose(a)); }, {a});
  run("reshape", [&] { return weighted_sum(ops::reshape(a, {2, 6})); }, {a});
  run("add", [&] { return weighted_sum(ops::add(a, b)); }, {a, b});
  run("sub", [&] { return weighted_sum(ops::sub(a, b)); }, {a, b});
  run("mul", [&] { return weighted_sum(ops::mul(a, b)); }, {a, b});
  run("scale", [&] { return weighted_sum(ops::scale(a, -1.7)); }, {a});
  run("add_scalar", [&] { return weighted_sum(ops::add_scalar(a, 0.3)); }, {a});
  auto bias = random_tensor({4}, 13);
  run("add_row", [&] { return weighted_sum(ops::add_row(a, bias)); }, {a, bias});
  run("tanh", [&] { return weighted_sum(ops::tanh(a)); }, {a});
  run("exp", [&] { return weighted_sum(ops::exp(a)); }, {a});
  run("log", [&] { return weighted_sum(ops::log(pos)); }, {pos});
  run("relu", [&] { return weighted_sum(ops::relu(a)); }, {a});
  run("gelu", [&] { return weighted_sum(ops::gelu(a)); }, {a});
  run("sum", [&] { return ops::sum(ops::mul(a, a)); }, {a});
  run("mean", [&] { return ops::mean(ops::tanh(a)); }, {a});
  run("masked_mean_rows", [&] { return weighted_sum(ops::masked_mean_rows(a, mask)); }, {a});
  run("mean_rows", [&] { return weighted_sum(ops::mean_rows(a)); }, {a});
  run("concat", [&] { return weighted_sum(ops::concat(a, b)); }, {a, b});
  auto r0 = random_tensor({4}, 14);
  auto r1 = random_tensor({4}, 15);
  run("stack_rows", [&] { return weighted_sum(ops::stack_rows({r0, r1, r0})); }, {r0, r1});
  const std::vector<std::size_t> idx{2, 0, 2};
  run("gather_rows", [&] { return weighted_sum(ops::gather_rows(a, idx)); }, {a});
  run("row", [&] { return weighted_sum(ops::row(a, 1)); }, {a});
  run("softmax_rows", [&] { return weighted_sum(ops::softmax_rows(a)); }, {a});
  run("masked_softmax_rows", [&] { return weighted_sum(ops::masked_softmax_rows(a, key_mask)); }, {a});
  run("log_softmax_rows", [&] { return weighted_sum(ops::log_softmax_rows(a)); }, {a});
  auto gain = random_tensor({4}, 16);
  auto shift = random_tensor({4}, 17);
  run("layer_norm", [&] { return weighted_sum(ops::layer_norm(a, gain, shift)); }, {a, gain, shift});
  run("layer_norm (no affine)", [&] { return weighted_sum(ops::layer_norm(a)); }, {a});
  run("normalize_rows", [&] { return weighted_sum(ops::normalize_rows(a)); }, {a});
  auto u = random_tensor({5}, 18);
  auto v = random_tensor({5}, 19);
  run("cosine_similarity", [&] { return ops::cosine_similarity(u, v); }, {u, v});
  run("dropout", [&] { return weighted_sum(ops::dropout(a, 0.3, true, {5, 6, 7, 8})); }, {a});
  run("cross_entropy", [&] { return ops::cross_entropy(ops::row(a, 0), 2); }, {a});
  const std::vector<std::size_t> labels{0, 3, 1};
  run("cross_entropy_rows", [&] { return ops::cross_entropy_rows(a, labels); }, {a});

  auto q = random_tensor({3, 6}, 21);
  auto k = random_tensor({4, 6}, 22);
  auto vv = random_tensor({4, 6}, 23);
  auto factor = random_tensor({3, 4}, 24, 0.5, false);
  run("scaled_dot_product_attention",
      [&] { return weighted_sum(nn::scaled_dot_product_attention(q, k, vv, key_mask, &factor)); }, {q, k, vv});

  auto anchors = random_tensor({5, 6}, 25);
  auto targets = random_tensor({5, 6}, 26);
  run("infonce_directional", [&] { return alignment::infonce_directional(anchors, targets, 0.1); },
      {anchors, targets});
  auto si = random_tensor({4, 6}, 27);
  auto st = random_tensor({4, 6}, 28);
  auto ti = random_tensor({4, 6}, 29, 1.0, false);
  auto tt = random_tensor({4, 6}, 30, 1.0, false);
  run("alignment_loss", [&] { return alignment::alignment_loss(si, ti, st, tt, 0.1).value; }, {si, st});

  // Composite layers with their parameters.
  {
    nn::ParameterStore store(5);
    nn::TransformerBlock block(store, "block", {6, 12, 0.1});
    alignment::ProjectionHead head(store, "proj", {6, 8, 4});
    fusion::CoAttentionWeights co{nn::Linear(store, "c", 6, 6, false), nn::Linear(store, "t", 6, 5),
                                  nn::Linear(store, "i", 6, 5)};
    const nn::ForwardContext ctx{true, 3, 1, 0};
    std::vector<Tensor> inputs{q, k};
    for (auto& p : store.parameters()) inputs.push_back(p.value);
    run("transformer block", [&] { return weighted_sum(block(q, k, key_mask, ctx)); }, inputs);
    run("projection head", [&] { return weighted_sum(head.project(k, key_mask)); }, inputs);
    run("co-attention", [&] { return weighted_sum(fusion::fuse_co_attention(co, q, mask, k)); }, inputs);
    const auto lex = synthetic_lexicon();
    const std::vector<std::uint32_t> qt{3, 40, 9}, kt{41, 2, 3, 60};
    run("sentiment attention",
        [&] { return weighted_sum(fusion::sentiment_attention(block, q, k, qt, kt, lex, ctx, key_mask)); }, inputs);
  }

  // Full loss, every fusion variant, on a two-sample batch.
  const auto ds = data::generate_synthetic(4, 3, 2);
  const auto teacher = make_teacher(3);
  const std::vector<std::size_t> batch{0, 1};
  for (auto variant : {fusion::FusionVariant::concat, fusion::FusionVariant::co_attention,
                       fusion::FusionVariant::cross_attention, fusion::FusionVariant::knowledge_cross_attention}) {
    model::ModelConfig mc;
    mc.fusion = variant;
    mc.init_seed = 4;
    model::ClfaModel m(mc);
    if (variant == fusion::FusionVariant::knowledge_cross_attention) m.set_lexicon(synthetic_lexicon());
    const train::TrainConfig tc;
    const nn::ForwardContext ctx{true, 7, 3, 0};
    std::vector<Tensor> inputs;
    for (const auto& p : m.parameters().parameters()) inputs.push_back(p.value);
    run("end-to-end " + fusion::to_string(variant),
        [&] { return train::batch_loss(m, teacher, ds, batch, tc, ctx).total; }, inputs,
        {.max_probes_per_input = 8});
  }

  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          fmt("%zu checks, max rel err %.2e (%s) < 1e-4; %.1f s < 60 s", checks, worst, worst_name.c_str(), secs)};
}

// --------------------------------------------------------- contrastive oracle

using Rows = std::vector<std::vector<double>>;

Rows rows_of(const Tensor& t) {
  Rows r(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) r[i][j] = t.at(i, j);
  return r;
}

double brute_infonce(const Rows& a, const Rows& t, double tau) {
  const std::size_t b = a.size();
  long double total = 0.0L;
  auto sim = [](const std::vector<double>& x, const std::vector<double>& y) {
    long double xy = 0, xx = 0, yy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      xy += static_cast<long double>(x[k]) * y[k];
      xx += static_cast<long double>(x[k]) * x[k];
      yy += static_cast<long double>(y[k]) * y[k];
    }
    return xy / std::sqrt(xx * yy);
  };
  for (std::size_t k = 0; k < b; ++k) {
    long double denom = 0.0L;
    for (std::size_t j = 0; j < b; ++j) denom += std::exp(sim(a[k], t[j]) / tau);
    total += -std::log(std::exp(sim(a[k], t[k]) / tau) / denom);
  }
  return static_cast<double>(total / static_cast<long double>(b));
}

Outcome contrastive_oracle() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  std::set<std::size_t> sizes;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + trial % 8;
    sizes.insert(b);
    const double tau = trial % 2 ? 0.1 : 0.05 + 0.01 * static_cast<double>(trial % 7);
    auto fi = random_tensor({b, 6}, rng(), 1.0, false);
    auto ci = random_tensor({b, 6}, rng(), 1.0, false);
    auto ft = random_tensor({b, 6}, rng(), 1.0, false);
    auto ct = random_tensor({b, 6}, rng(), 1.0, false);
    worst = std::max(worst, std::abs(alignment::infonce_directional(fi, ci, tau).item() -
                                     brute_infonce(rows_of(fi), rows_of(ci), tau)));
    const auto loss = alignment::alignment_loss(fi, ci, ft, ct, tau);
    const double l_ic = brute_infonce(rows_of(fi), rows_of(ci), tau);
    const double l_ci = brute_infonce(rows_of(ci), rows_of(fi), tau);
    const double l_tc = brute_infonce(rows_of(ft), rows_of(ct), tau);
    const double l_ct = brute_infonce(rows_of(ct), rows_of(ft), tau);
    const double l_con = ((l_ic + l_ci) / 2 + (l_tc + l_ct) / 2) / 2;
    for (double d : {loss.l_ic - l_ic, loss.l_ci - l_ci, loss.l_tc - l_tc, loss.l_ct - l_ct, loss.l_con - l_con})
      worst = std::max(worst, std::abs(d));
  }

  const bool b1 = alignment::infonce_directional(random_tensor({1, 5}, 1, 1.0, false),
                                                 random_tensor({1, 5}, 2, 1.0, false), 0.1)
                      .item() == 0.0;
  const auto same = Tensor::matrix({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}, {1, 2, 3}});
  const bool uniform = alignment::infonce_directional(same, same, 0.1).item() == std::log(4.0);
  const auto eye = Tensor::matrix({{1, 0}, {0, 1}});
  const double expected = std::log1p(std::exp(-10.0));
  // Log-sum-exp reaches log(1 + e^-10) through a sum near 1; round-off stays at a few ulps of 1.
  const double gap_rel = std::abs(alignment::infonce_directional(eye, eye, 0.1).item() - expected) / expected;
  const bool gap = gap_rel < 1e-12;

  return {worst < 1e-10 && sizes.size() == 8 && b1 && uniform && gap,
          fmt("50 batches, B in 1..8, max |diff| %.2e < 1e-10; B=1 -> 0 %s; uniform -> ln 4 %s; "
              "gap 10/tau -> ln(1+e^-10) rel %.1e",
              worst, b1 ? "exact" : "WRONG", uniform ? "exact" : "WRONG", gap_rel)};
}

// --------------------------------------------------------------- loss algebra

Outcome loss_algebra() {
  double worst = 0.0;
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + trial % 8;
    const auto l = alignment::alignment_loss(random_tensor({b, 6}, rng(), 1.0, false),
                                             random_tensor({b, 6}, rng(), 1.0, false),
                                             random_tensor({b, 6}, rng(), 1.0, false),
                                             random_tensor({b, 6}, rng(), 1.0, false), 0.1);
    for (double d : {l.l_i - (l.l_ic + l.l_ci) / 2, l.l_t - (l.l_tc + l.l_ct) / 2, l.l_con - (l.l_i + l.l_t) / 2,
                     l.value.item() - l.l_con})
      worst = std::max(worst, std::abs(d));
  }
  const auto ds = data::generate_synthetic(16, 2, 2);
  const auto teacher = make_teacher(2);
  model::ClfaModel m({});
  const std::vector<std::size_t> batch{0, 1, 2, 3, 4, 5, 6, 7};
  double total_err = 0.0;
  for (double alpha : {0.0, 0.5, 1.0, 2.0}) {
    train::TrainConfig tc;
    tc.alpha = alpha;
    const auto bl = train::batch_loss(m, teacher, ds, batch, tc, {true, 1, 0, 0});
    const auto& r = bl.report;
    for (double d : {r.align.l_i - (r.align.l_ic + r.align.l_ci) / 2, r.align.l_t - (r.align.l_tc + r.align.l_ct) / 2,
                     r.align.l_con - (r.align.l_i + r.align.l_t) / 2})
      worst = std::max(worst, std::abs(d));
    total_err = std::max({total_err, std::abs(r.total - (alpha * r.align.l_con + r.l_ce)),
                          std::abs(bl.total.item() - (alpha * r.align.l_con + r.l_ce))});
  }

  const auto train_set = data::generate_synthetic(120, 9, 2).subset("train");
  const auto t9 = make_teacher(9);
  train::TrainConfig tc;
  tc.epochs = 2;
  tc.alpha = 0.0;
  model::ClfaModel zero({});
  const auto hz = train::train(zero, t9, train_set, tc);
  tc.alignment_enabled = false;
  model::ClfaModel off({});
  const auto ho = train::train(off, t9, train_set, tc);
  bool same = flat_parameters(zero) == flat_parameters(off);
  for (std::size_t e = 0; e < hz.size(); ++e) same = same && hz[e].l_ce == ho[e].l_ce && hz[e].total == ho[e].total;

  return {worst < 1e-12 && total_err < 1e-12 && same,
          fmt("halving max err %.1e < 1e-12; total identity max err %.1e < 1e-12; alpha=0 vs no alignment: %s", worst,
              total_err, same ? "identical parameters and losses" : "DIVERGED")};
}

// -------------------------------------------------------------- teacher freeze

Outcome teacher_freeze() {
  const auto ds = data::generate_synthetic(8, 6, 2);
  std::size_t checked = 0, nonzero = 0;
  for (auto variant : {fusion::FusionVariant::concat, fusion::FusionVariant::co_attention,
                       fusion::FusionVariant::cross_attention, fusion::FusionVariant::knowledge_cross_attention}) {
    const auto teacher = make_teacher(6);
    for (auto t : teacher.frozen_tensors()) t.set_requires_grad(true);
    model::ModelConfig mc;
    mc.fusion = variant;
    model::ClfaModel m(mc);
    if (variant == fusion::FusionVariant::knowledge_cross_attention) m.set_lexicon(synthetic_lexicon());
    const std::vector<std::size_t> batch{0, 1, 2, 3};
    train::batch_loss(m, teacher, ds, batch, {}, {true, 0, 0, 0}).total.backward();
    for (const auto& t : teacher.frozen_tensors())
      for (double g : t.grad()) {
        ++checked;
        nonzero += g != 0.0 ? 1 : 0;
      }
  }
  return {checked > 0 && nonzero == 0,
          fmt("%zu teacher gradient entries over 4 fusion variants, %zu nonzero", checked, nonzero)};
}

// ------------------------------------------------------------ alignment effect

Outcome alignment_effect() {
  const auto ds = data::generate_synthetic(2000, 7, 2);
  const auto train_set = ds.subset("train");
  const auto held = held_out(ds);
  const auto teacher = make_teacher(7);
  model::ClfaModel m({});
  const double before = train::batched_diagonal_max_rate(m, held, 8);
  train::TrainConfig tc;  // alpha 1, 15 epochs, B 8
  const auto t0 = Clock::now();
  train::train(m, teacher, train_set, tc);
  const double secs = seconds_since(t0);
  const double after = train::batched_diagonal_max_rate(m, held, 8);
  const bool near_chance = std::abs(before - 1.0 / 8.0) < 0.05;
  return {after >= 0.9 && near_chance && secs < 300.0,
          fmt("held-out %zu rows, B=8: diagonal row-max rate %.3f before (1/B = 0.125), %.3f after >= 0.9; "
              "train %zu samples x %zu epochs in %.0f s < 300 s",
              held.size(), before, after, train_set.size(), tc.epochs, secs)};
}

// ---------------------------------------------- directional gain + L_con curve

struct DirectionalRuns {
  std::vector<double> cross_a1, cross_a0, concat_a1;
  std::vector<double> lcon_first, lcon_last;
  double seconds = 0.0;
};

const DirectionalRuns& directional_runs() {
  static const DirectionalRuns runs = [] {
    DirectionalRuns r;
    const auto ds = data::generate_synthetic(2000, 7, 2);
    auto train_set = ds.subset("train");
    train_set.samples.resize(400);
    const auto held = held_out(ds);
    const auto teacher = make_teacher(7);
    const auto t0 = Clock::now();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto fit = [&](fusion::FusionVariant variant, double alpha) {
        model::ModelConfig mc;
        mc.fusion = variant;
        mc.init_seed = seed;
        model::ClfaModel m(mc);
        train::TrainConfig tc;
        tc.alpha = alpha;
        tc.seed = seed;
        const auto history = train::train(m, teacher, train_set, tc);
        if (variant == fusion::FusionVariant::cross_attention && alpha == 1.0) {
          r.lcon_first.push_back(history.front().l_con);
          r.lcon_last.push_back(history.back().l_con);
        }
        return train::evaluate(m, held).macro_f1;
      };
      r.cross_a1.push_back(fit(fusion::FusionVariant::cross_attention, 1.0));
      r.cross_a0.push_back(fit(fusion::FusionVariant::cross_attention, 0.0));
      r.concat_a1.push_back(fit(fusion::FusionVariant::concat, 1.0));
      std::printf("  seed %llu: cross a=1 %.3f, cross a=0 %.3f, concat a=1 %.3f\n",
                  static_cast<unsigned long long>(seed), r.cross_a1.back(), r.cross_a0.back(), r.concat_a1.back());
      std::fflush(stdout);
    }
    r.seconds = seconds_since(t0);
    return r;
  }();
  return runs;
}

Outcome directional_gain() {
  const auto& r = directional_runs();
  const double m1 = median(r.cross_a1), m0 = median(r.cross_a0);
  std::size_t wins = 0;
  for (std::size_t s = 0; s < r.cross_a1.size(); ++s) wins += r.cross_a1[s] >= r.concat_a1[s] ? 1 : 0;
  return {m1 >= m0 && wins >= 3,
          fmt("held-out macro-F1 median over 5 seeds: alpha=1 %.4f vs alpha=0 %.4f (need >=); "
              "cross >= concat in %zu/5 seeds (need >= 3); %.0f s",
              m1, m0, wins, r.seconds)};
}

Outcome lcon_decrease() {
  const auto& r = directional_runs();
  const double first = median(r.lcon_first), last = median(r.lcon_last);
  return {last < first, fmt("median L_con over 5 seeds: epoch 1 %.4f, epoch 15 %.4f", first, last)};
}

// ------------------------------------------------------------- metrics oracle

Outcome metrics_oracle() {
  std::mt19937_64 rng(5);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng() % 4;
    std::vector<std::vector<std::size_t>> c(k, std::vector<std::size_t>(k));
    for (auto& row : c)
      for (auto& v : row) v = rng() % 4 == 0 ? 0 : rng() % 30;
    // Expand into (true, predicted) pairs and count per class.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t q = 0; q < k; ++q)
        for (std::size_t n = 0; n < c[t][q]; ++n) pairs.emplace_back(t, q);
    std::size_t hits = 0;
    for (auto [t, q] : pairs) hits += t == q ? 1 : 0;
    const double acc = pairs.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pairs.size());
    double mp = 0, mr = 0, mf = 0;
    const auto rep = train::metrics_from_confusion(c);
    for (std::size_t cls = 0; cls < k; ++cls) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (auto [t, q] : pairs) {
        tp += t == cls && q == cls;
        fp += t != cls && q == cls;
        fn += t == cls && q != cls;
      }
      const double p = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
      const double r = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
      const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
      mismatches += rep.per_class[cls].precision != p || rep.per_class[cls].recall != r || rep.per_class[cls].f1 != f;
      mp += p;
      mr += r;
      mf += f;
    }
    const double kk = static_cast<double>(k);
    mismatches += rep.accuracy != acc || rep.macro_precision != mp / kk || rep.macro_recall != mr / kk ||
                  rep.macro_f1 != mf / kk;
  }
  const auto h = train::metrics_from_confusion({{50, 10}, {5, 35}});
  const bool hand = h.accuracy == 0.85 && h.per_class[0].precision == 50.0 / 55.0 &&
                    h.per_class[0].recall == 50.0 / 60.0 && h.per_class[1].precision == 35.0 / 45.0 &&
                    h.per_class[1].recall == 35.0 / 40.0 && std::abs(h.per_class[0].f1 - 100.0 / 115.0) < 1e-15 &&
                    std::abs(h.per_class[1].f1 - 70.0 / 85.0) < 1e-15;
  return {mismatches == 0 && hand,
          fmt("100 random confusions, %zu exact mismatches; [[50,10],[5,35]]: acc %.2f, P0 %.4f R0 %.4f P1 %.4f R1 %.4f%s",
              mismatches, h.accuracy, h.per_class[0].precision, h.per_class[0].recall, h.per_class[1].precision,
              h.per_class[1].recall, hand ? "" : " WRONG")};
}

// ----------------------------------------------------------------- SC formula

Outcome sc_formula() {
  double self = 0.0, asym = 0.0;
  for (double x = -1.0; x <= 1.0 + 1e-12; x += 0.05) {
    self = std::max(self, std::abs(fusion::sentiment_contrast(x, x)));
    for (double y = -1.0; y <= 1.0 + 1e-12; y += 0.05)
      asym = std::max(asym, std::abs(fusion::sentiment_contrast(x, y) - fusion::sentiment_contrast(y, x)));
  }
  const double two_e = std::abs(fusion::sentiment_contrast(1.0, -1.0) - 2.0 * std::numbers::e);

  nn::ParameterStore store(7);
  fusion::Fusion head(store, "k", {.variant = fusion::FusionVariant::knowledge_cross_attention, .layers = 3,
                                   .width = 8, .ffn_hidden = 16, .dropout = 0.1});
  auto text = random_tensor({4, 8}, 1);
  auto image = random_tensor({4, 8}, 2);
  auto aux = random_tensor({3, 8}, 3);
  const std::vector<std::uint8_t> text_mask{1, 1, 1, 0}, aux_mask{1, 1, 0};
  const std::vector<std::uint32_t> text_tokens{1, 5, 9, 0}, aux_tokens{2, 5, 0};
  const fusion::FusionInputs in{.text = text, .text_mask = text_mask, .image = image, .aux = aux,
                                .aux_mask = aux_mask, .text_tokens = text_tokens, .aux_tokens = aux_tokens};
  const nn::ForwardContext ctx{true, 9, 2, 0};
  fusion::SentimentLexicon zeros;
  for (std::uint32_t t = 0; t < 16; ++t) zeros.set(std::to_string(t), 0.0);
  const fusion::SentimentLexicon empty;
  const auto plain = testutil::to_vector(fusion::fuse_knowledge_stack(head.blocks(), in, nullptr, ctx));
  const bool bits = testutil::to_vector(fusion::fuse_knowledge_stack(head.blocks(), in, &zeros, ctx)) == plain &&
                    testutil::to_vector(fusion::fuse_knowledge_stack(head.blocks(), in, &empty, ctx)) == plain;

  return {self < 1e-12 && asym < 1e-12 && two_e < 1e-12 && bits,
          fmt("max |SC(x,x)| %.1e, max asymmetry %.1e, |SC(1,-1) - 2e| %.1e (all < 1e-12); SC=0 stack %s", self, asym,
              two_e, bits ? "bit-identical to plain" : "DIFFERS")};
}

// --------------------------------------------------------------------- format

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome format_checks() {
  const auto ds = data::generate_synthetic(6, 9, 2);
  const auto teacher = make_teacher(9);
  // The format stores float32, so round-trip values that are already representable.
  auto emb = encoders::embed_all(teacher, ds.samples);
  for (auto& [t, im] : emb) {
    for (auto& x : t) x = static_cast<float>(x);
    for (auto& x : im) x = static_cast<float>(x);
  }
  bool round_trip = true;
  for (bool raw : {false, true}) {
    const auto bytes = io::encode_fixture(io::make_fixture(ds.samples, emb, raw));
    const auto back = io::decode_fixture(bytes);
    round_trip = round_trip && io::encode_fixture(back) == bytes;
    for (std::size_t i = 0; i < ds.size(); ++i)
      round_trip = round_trip && back.records[i].text == emb[i].first && back.records[i].image == emb[i].second;
  }

  const auto good = io::encode_fixture(io::make_fixture(ds.samples, emb, true));
  std::size_t typed = 0;
  auto expect = [&](std::vector<std::uint8_t> bytes, auto tag) {
    try {
      io::decode_fixture(bytes);
    } catch (const decltype(tag)&) {
      ++typed;
    } catch (...) {
    }
  };
  auto bad_magic = good;
  bad_magic[0] = 'X';
  expect(bad_magic, io::BadMagicError(""));
  auto bad_version = good;
  bad_version[4] = 0x7f;
  expect(bad_version, io::VersionError(""));
  expect(std::vector<std::uint8_t>(good.begin(), good.begin() + 7), io::TruncatedError(""));
  expect(std::vector<std::uint8_t>(good.begin(), good.end() - 3), io::TruncatedError(""));

  const auto dir = fs::temp_directory_path() / "clfa_acceptance_format";
  fs::remove_all(dir);
  std::ostringstream sink;
  bool idempotent = cli::cmd_gen_data({dir / "a", 80, 3, 2}, sink, sink) == 0 &&
                    cli::cmd_gen_data({dir / "b", 80, 3, 2}, sink, sink) == 0;
  const cli::DataPaths a(dir / "a"), b(dir / "b");
  for (auto member : {&cli::DataPaths::fixture, &cli::DataPaths::manifest, &cli::DataPaths::samples,
                      &cli::DataPaths::lexicon})
    idempotent = idempotent && slurp(a.*member) == slurp(b.*member);
  std::ofstream(dir / "run.cfg") << "data = " << (dir / "a").string() << "\nteacher = fixture\nepochs = 2\n";
  idempotent = idempotent && cli::cmd_train({dir / "run.cfg", dir / "r1", 3}, sink, sink) == 0 &&
               cli::cmd_train({dir / "run.cfg", dir / "r2", 3}, sink, sink) == 0 &&
               slurp(dir / "r1" / "model.ckpt") == slurp(dir / "r2" / "model.ckpt") &&
               slurp(dir / "r1" / "history.csv") == slurp(dir / "r2" / "history.csv");
  fs::remove_all(dir);

  return {round_trip && typed == 4 && idempotent,
          fmt("fixture byte round trip %s; %zu/4 corruptions rejected with typed errors; gen-data and train twice: %s",
              round_trip ? "ok" : "FAILED", typed, idempotent ? "identical bytes" : "DIFFER")};
}

struct Criterion {
  std::string name;
  Outcome (*run)();
};

std::set<std::string> split_names(const std::string& list) {
  std::set<std::string> out;
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.insert(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"gradient_suite", gradient_suite},   {"contrastive_oracle", contrastive_oracle},
      {"loss_algebra", loss_algebra},       {"teacher_freeze", teacher_freeze},
      {"alignment_effect", alignment_effect}, {"directional_gain", directional_gain},
      {"lcon_decrease", lcon_decrease},     {"metrics_oracle", metrics_oracle},
      {"sc_formula", sc_formula},           {"format", format_checks},
  };

  std::set<std::string> known, selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--known-unattained" && i + 1 < argc) {
      known = split_names(argv[++i]);
    } else {
      selected.insert(arg);
    }
  }
  for (const auto& n : known) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const Criterion& c) { return c.name == n; })) {
      std::fprintf(stderr, "unknown criterion '%s'\n", n.c_str());
      return 2;
    }
  }

  std::size_t passed = 0, failed = 0, failed_known = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.name)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s  %-18s  %s  [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
    if (o.pass) {
      ++passed;
    } else if (known.count(c.name)) {
      ++failed_known;
    } else {
      ++failed;
    }
  }
  std::printf("%zu passed, %zu failed", passed, failed + failed_known);
  if (failed_known) std::printf(" (%zu declared unattained)", failed_known);
  std::printf("\n");
  return failed == 0 ? 0 : 1;
}
