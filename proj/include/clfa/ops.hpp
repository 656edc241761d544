#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "clfa/tensor.hpp"

// Differentiable operations. Matrix operations take rank-2 tensors; the only
// broadcasting supported is scalar-tensor and row-vector bias addition.
namespace clfa::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
// a: p×q, bias: q or 1×q.
Tensor add_row(const Tensor& a, const Tensor& bias);

Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
// tanh approximation of GELU.
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Mean over the rows of a p×q matrix whose mask entry is nonzero -> vector q.
/// Throws DomainError if every row is masked.
Tensor masked_mean_rows(const Tensor& a, std::span<const std::uint8_t> mask);
Tensor mean_rows(const Tensor& a);

/// Concatenates along the last axis (vectors, or matrices with equal row counts).
Tensor concat(const Tensor& a, const Tensor& b);
/// Stacks equally sized vectors into a matrix, one per row.
Tensor stack_rows(const std::vector<Tensor>& rows);
/// Rows by index (embedding lookup, gather).
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
Tensor row(const Tensor& a, std::size_t r);

Tensor softmax_rows(const Tensor& a);
/// Softmax over the columns whose key_mask entry is nonzero; masked columns get weight 0.
Tensor masked_softmax_rows(const Tensor& a, std::span<const std::uint8_t> key_mask);
Tensor log_softmax_rows(const Tensor& a);

/// Row-wise normalization to zero mean and unit variance, then gain/bias (both length q).
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-10);
/// Row-wise normalization only (no affine), used to check the pre-affine contract.
Tensor layer_norm(const Tensor& a, double eps = 1e-10);

/// Rescales each row to unit L2 norm. Throws DomainError on a zero-norm row.
Tensor normalize_rows(const Tensor& a);
/// u·v / (|u| |v|). Throws DomainError on a zero-norm input.
Tensor cosine_similarity(const Tensor& u, const Tensor& v);

/// Counter-based dropout. The keep/drop decision for element i is a pure
/// function of (seed, layer_id, step, stream, i). Identity when !train.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t layer_id = 0;
  std::uint64_t step = 0;
  std::uint64_t stream = 0;
};
Tensor dropout(const Tensor& a, double rate, bool train, const DropoutKey& key);

/// -log softmax(logits)[label] for a single logit vector (length C or 1×C).
Tensor cross_entropy(const Tensor& logits, std::size_t label);
/// Mean over rows of -log softmax(logits_r)[labels_r].
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace clfa::ops
