#include "clfa/alignment.hpp"

#include <numeric>
#include <vector>

namespace clfa::alignment {

ProjectionHead::ProjectionHead(nn::ParameterStore& store, const std::string& name, const ProjectionConfig& config)
    : config_(config),
      first_(store, name + ".fc1", config.input, config.hidden),
      second_(store, name + ".fc2", config.hidden, config.output) {}

Tensor ProjectionHead::project(const Tensor& features, std::span<const std::uint8_t> mask) const {
  if (features.rank() != 2 || features.rows() == 0) throw DimensionError("project: expected k×d features, k ≥ 1");
  return second_(ops::gelu(first_(ops::masked_mean_rows(features, mask))));
}

Tensor ProjectionHead::project_rows(const Tensor& features) const {
  return second_(ops::gelu(first_(features)));
}

Tensor infonce_directional(const Tensor& anchors, const Tensor& targets, double tau) {
  if (!(tau > 0.0)) throw ParameterError("infonce: temperature must be positive");
  if (anchors.rank() != 2 || targets.rank() != 2 || anchors.shape() != targets.shape()) {
    throw DimensionError("infonce: anchors " + shape_str(anchors.shape()) + " and targets " +
                         shape_str(targets.shape()) + " must both be B×d_C");
  }
  const std::size_t batch = anchors.rows();
  auto sims = ops::matmul(ops::normalize_rows(anchors), ops::transpose(ops::normalize_rows(targets)));
  std::vector<std::size_t> diagonal(batch);
  std::iota(diagonal.begin(), diagonal.end(), std::size_t{0});
  return ops::cross_entropy_rows(ops::scale(sims, 1.0 / tau), diagonal);
}

AlignmentLoss alignment_loss(const Tensor& student_image, const Tensor& teacher_image, const Tensor& student_text,
                             const Tensor& teacher_text, double tau) {
  const auto& ref = student_image.shape();
  if (ref.size() != 2 || teacher_image.shape() != ref || student_text.shape() != ref ||
      teacher_text.shape() != ref) {
    throw DimensionError("alignment_loss: inputs must share one B×d_C shape, got " + shape_str(student_image.shape()) +
                         ", " + shape_str(teacher_image.shape()) + ", " + shape_str(student_text.shape()) + ", " +
                         shape_str(teacher_text.shape()));
  }
  const auto ci = teacher_image.detach();
  const auto ct = teacher_text.detach();
  auto l_ic = infonce_directional(student_image, ci, tau);
  auto l_ci = infonce_directional(ci, student_image, tau);
  auto l_tc = infonce_directional(student_text, ct, tau);
  auto l_ct = infonce_directional(ct, student_text, tau);
  auto l_i = ops::scale(ops::add(l_ci, l_ic), 0.5);
  auto l_t = ops::scale(ops::add(l_tc, l_ct), 0.5);
  auto l_con = ops::scale(ops::add(l_i, l_t), 0.5);

  AlignmentLoss out;
  out.tau = tau;
  out.l_ic = l_ic.item();
  out.l_ci = l_ci.item();
  out.l_i = l_i.item();
  out.l_tc = l_tc.item();
  out.l_ct = l_ct.item();
  out.l_t = l_t.item();
  out.l_con = l_con.item();
  out.value = l_con;
  return out;
}

}  // namespace clfa::alignment
