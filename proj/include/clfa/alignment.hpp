#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "clfa/nn.hpp"

namespace clfa::alignment {

struct ProjectionConfig {
  std::size_t input = 64;
  std::size_t hidden = 128;
  std::size_t output = 32;  // must equal the teacher width d_C
};

/// Two affine layers with a GELU between them, mapping student width d to d_C.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(nn::ParameterStore& store, const std::string& name, const ProjectionConfig& config);

  /// Mask-aware mean pool over the k positions, then the MLP: one d_C vector.
  /// Throws DomainError when every position is masked.
  Tensor project(const Tensor& features, std::span<const std::uint8_t> mask) const;
  /// The same MLP applied to every position: k×d_C (input to fusion).
  Tensor project_rows(const Tensor& features) const;

  std::size_t output_width() const { return config_.output; }

 private:
  ProjectionConfig config_;
  nn::Linear first_, second_;
};

/// -(1/B) Σ_k log softmax_j(cos(a_k, t_j)/τ)[k]: positives on the diagonal,
/// the anchor row normalizes over every target row.
Tensor infonce_directional(const Tensor& anchors, const Tensor& targets, double tau);

struct AlignmentLoss {
  double tau = 0.1;
  double l_ic = 0.0, l_ci = 0.0, l_i = 0.0;
  double l_tc = 0.0, l_ct = 0.0, l_t = 0.0;
  double l_con = 0.0;
  Tensor value;  // graph node for L_con
};

/// Student↔teacher contrast per modality:
///   L_ic: student image anchors vs teacher image targets, L_ci the reverse,
///   L_tc / L_ct likewise for text; L_i, L_t, L_con are the halving averages.
/// Teacher inputs are detached, so no gradient reaches them.
AlignmentLoss alignment_loss(const Tensor& student_image, const Tensor& teacher_image, const Tensor& student_text,
                             const Tensor& teacher_text, double tau);

}  // namespace clfa::alignment
