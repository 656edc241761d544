#include "clfa/ops.hpp"

#include "clfa/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace clfa::ops {

namespace {

using Backward = std::function<void(TensorImpl&)>;

Tensor make_node(Shape shape, std::vector<double> data, std::vector<Tensor> inputs, Backward fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    impl->requires_grad = true;
    for (auto& t : inputs) impl->parents.push_back(t.impl_ptr());
    impl->backward_fn = std::move(fn);
  }
  return Tensor(std::move(impl));
}

TensorImpl& parent(TensorImpl& self, std::size_t i) { return *self.parents[i]; }

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Treats vectors as a single row.
std::pair<std::size_t, std::size_t> as_rows(const Tensor& a) {
  if (a.rank() == 1) return {1, a.dim(0)};
  if (a.rank() == 2) return {a.dim(0), a.dim(1)};
  throw DimensionError("expected vector or matrix, got " + shape_str(a.shape()));
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.numel());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_node(a.shape(), std::move(out), {a}, [deriv](TensorImpl& self) {
    auto& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      p.grad[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  if (b.dim(0) != q) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(p * r, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < p; ++i) {
    double* o = out.data() + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = A[i * q + k];
      const double* brow = B + k * r;
      for (std::size_t j = 0; j < r; ++j) o[j] += aik * brow[j];
    }
  }
  return make_node({p, r}, std::move(out), {a, b}, [p, q, r](TensorImpl& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    const double* G = self.grad.data();
    if (pa.requires_grad) {
      pa.ensure_grad();
      const double* B = pb.data.data();
      // dA = G B^T
      for (std::size_t i = 0; i < p; ++i) {
        const double* g = G + i * r;
        for (std::size_t k = 0; k < q; ++k) {
          const double* brow = B + k * r;
          double acc = 0.0;
          for (std::size_t j = 0; j < r; ++j) acc += g[j] * brow[j];
          pa.grad[i * q + k] += acc;
        }
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      const double* A = pa.data.data();
      // dB = A^T G
      for (std::size_t i = 0; i < p; ++i) {
        const double* g = G + i * r;
        for (std::size_t k = 0; k < q; ++k) {
          const double aik = A[i * q + k];
          double* d = pb.grad.data() + k * r;
          for (std::size_t j = 0; j < r; ++j) d[j] += aik * g[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t p = a.dim(0), q = a.dim(1);
  std::vector<double> out(p * q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[j * p + i] = a.data()[i * q + j];
  return make_node({q, p}, std::move(out), {a}, [p, q](TensorImpl& self) {
    auto& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j) pa.grad[i * q + j] += self.grad[j * p + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_node(std::move(shape), std::move(out), {a}, [](TensorImpl& self) {
    auto& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_node(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = parent(self, k);
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_node(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_node(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_node(a.shape(), std::move(out), {a}, [factor](TensorImpl& self) {
    auto& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * factor;
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + value;
  return make_node(a.shape(), std::move(out), {a}, [](TensorImpl& self) {
    auto& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  const auto [p, q] = as_rows(a);
  if (bias.numel() != q || (bias.rank() == 2 && bias.dim(0) != 1) || bias.rank() > 2) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(a.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[i * q + j] = a[i * q + j] + bias[j];
  return make_node(a.shape(), std::move(out), {a, bias}, [p, q](TensorImpl& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) pb.grad[j] += self.grad[i * q + j];
    }
  });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input");
  }
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        const double u = c * (x + k * x * x * x);
        const double t = std::tanh(u);
        const double du = c * (1.0 + 3.0 * k * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_node({1}, {s}, {a}, [](TensorImpl& self) {
    auto& pa = parent(self, 0);
    pa.ensure_grad();
    for (auto& g : pa.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor masked_mean_rows(const Tensor& a, std::span<const std::uint8_t> mask) {
  const auto [p, q] = as_rows(a);
  if (mask.size() != p) {
    throw DimensionError("masked_mean_rows: mask length " + std::to_string(mask.size()) +
                         " for " + shape_str(a.shape()));
  }
  std::vector<double> weights(p, 0.0);
  std::size_t active = 0;
  for (std::size_t i = 0; i < p; ++i) active += mask[i] ? 1 : 0;
  if (active == 0) throw DomainError("masked_mean_rows: every position is masked");
  for (std::size_t i = 0; i < p; ++i) weights[i] = mask[i] ? 1.0 / static_cast<double>(active) : 0.0;
  std::vector<double> out(q, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < q; ++j) out[j] += a[i * q + j];
  }
  for (auto& v : out) v /= static_cast<double>(active);
  return make_node({q}, std::move(out), {a}, [p, q, weights](TensorImpl& self) {
    auto& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < p; ++i) {
      if (weights[i] == 0.0) continue;
      for (std::size_t j = 0; j < q; ++j) pa.grad[i * q + j] += self.grad[j] * weights[i];
    }
  });
}

Tensor mean_rows(const Tensor& a) {
  const auto [p, q] = as_rows(a);
  (void)q;
  std::vector<std::uint8_t> mask(p, 1);
  return masked_mean_rows(a, mask);
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() > 2) {
    throw DimensionError("concat: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto [pa_rows, qa] = as_rows(a);
  const auto [pb_rows, qb] = as_rows(b);
  if (pa_rows != pb_rows) {
    throw DimensionError("concat: row counts differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t p = pa_rows, q = qa + qb;
  std::vector<double> out(p * q);
  for (std::size_t i = 0; i < p; ++i) {
    std::copy_n(a.data().begin() + i * qa, qa, out.begin() + i * q);
    std::copy_n(b.data().begin() + i * qb, qb, out.begin() + i * q + qa);
  }
  Shape shape = a.rank() == 1 ? Shape{q} : Shape{p, q};
  return make_node(std::move(shape), std::move(out), {a, b}, [p, q, qa = qa, qb = qb](TensorImpl& self) {
    auto& x = parent(self, 0);
    auto& y = parent(self, 1);
    if (x.requires_grad) {
      x.ensure_grad();
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < qa; ++j) x.grad[i * qa + j] += self.grad[i * q + j];
    }
    if (y.requires_grad) {
      y.ensure_grad();
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < qb; ++j) y.grad[i * qb + j] += self.grad[i * q + qa + j];
    }
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t q = rows.front().numel();
  std::vector<double> out;
  out.reserve(rows.size() * q);
  for (const auto& r : rows) {
    if (r.numel() != q) throw DimensionError("stack_rows: rows of unequal length");
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  return make_node({rows.size(), q}, std::move(out), rows, [q](TensorImpl& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = parent(self, k);
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t j = 0; j < q; ++j) p.grad[j] += self.grad[k * q + j];
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_matrix(table, "gather_rows");
  const std::size_t n = table.dim(0), q = table.dim(1);
  if (indices.empty()) throw DimensionError("gather_rows: no indices");
  std::vector<double> out(indices.size() * q);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= n) {
      throw RangeError("gather_rows: index " + std::to_string(indices[r]) + " outside " +
                       std::to_string(n) + " rows");
    }
    std::copy_n(table.data().begin() + indices[r] * q, q, out.begin() + r * q);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_node({indices.size(), q}, std::move(out), {table}, [idx, q](TensorImpl& self) {
    auto& p = parent(self, 0);
    p.ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < q; ++j) p.grad[idx[r] * q + j] += self.grad[r * q + j];
  });
}

Tensor row(const Tensor& a, std::size_t r) {
  const std::size_t index[] = {r};
  return reshape(gather_rows(a, index), {a.dim(1)});
}

Tensor softmax_rows(const Tensor& a) { return masked_softmax_rows(a, {}); }

Tensor masked_softmax_rows(const Tensor& a, std::span<const std::uint8_t> key_mask) {
  const auto [p, q] = as_rows(a);
  if (!key_mask.empty() && key_mask.size() != q) {
    throw DimensionError("masked_softmax_rows: mask length " + std::to_string(key_mask.size()) +
                         " for " + shape_str(a.shape()));
  }
  auto keep = [&](std::size_t j) { return key_mask.empty() || key_mask[j] != 0; };
  bool any = false;
  for (std::size_t j = 0; j < q; ++j) any = any || keep(j);
  if (!any) throw DomainError("masked_softmax_rows: every key is masked");
  std::vector<double> out(a.numel(), 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    const double* x = a.data().data() + i * q;
    double* y = out.data() + i * q;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < q; ++j)
      if (keep(j)) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < q; ++j)
      if (keep(j)) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < q; ++j) y[j] /= z;
  }
  return make_node(a.shape(), std::move(out), {a}, [p, q](TensorImpl& self) {
    auto& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < p; ++i) {
      const double* y = self.data.data() + i * q;
      const double* g = self.grad.data() + i * q;
      double dot = 0.0;
      for (std::size_t j = 0; j < q; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < q; ++j) pa.grad[i * q + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  const auto [p, q] = as_rows(a);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < p; ++i) {
    const double* x = a.data().data() + i * q;
    const double mx = *std::max_element(x, x + q);
    double z = 0.0;
    for (std::size_t j = 0; j < q; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < q; ++j) out[i * q + j] = x[j] - lse;
  }
  return make_node(a.shape(), std::move(out), {a}, [p, q](TensorImpl& self) {
    auto& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < p; ++i) {
      const double* y = self.data.data() + i * q;
      const double* g = self.grad.data() + i * q;
      double gsum = 0.0;
      for (std::size_t j = 0; j < q; ++j) gsum += g[j];
      for (std::size_t j = 0; j < q; ++j) pa.grad[i * q + j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

namespace {

// Normalized rows plus per-row inverse standard deviations.
std::pair<std::vector<double>, std::vector<double>> normalize_stats(const Tensor& a, double eps) {
  const auto [p, q] = as_rows(a);
  std::vector<double> xhat(a.numel());
  std::vector<double> inv_std(p);
  for (std::size_t i = 0; i < p; ++i) {
    const double* x = a.data().data() + i * q;
    double mu = 0.0;
    for (std::size_t j = 0; j < q; ++j) mu += x[j];
    mu /= static_cast<double>(q);
    double var = 0.0;
    for (std::size_t j = 0; j < q; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(q);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < q; ++j) xhat[i * q + j] = (x[j] - mu) * inv_std[i];
  }
  return {std::move(xhat), std::move(inv_std)};
}

// d xhat -> d x for one row.
void layer_norm_row_backward(const double* gx, const double* xhat, double inv_std, std::size_t q,
                             double* dx) {
  double mean_g = 0.0, mean_gx = 0.0;
  for (std::size_t j = 0; j < q; ++j) {
    mean_g += gx[j];
    mean_gx += gx[j] * xhat[j];
  }
  mean_g /= static_cast<double>(q);
  mean_gx /= static_cast<double>(q);
  for (std::size_t j = 0; j < q; ++j) dx[j] += inv_std * (gx[j] - mean_g - xhat[j] * mean_gx);
}

}  // namespace

Tensor layer_norm(const Tensor& a, double eps) {
  const auto [p, q] = as_rows(a);
  auto [xhat, inv_std] = normalize_stats(a, eps);
  std::vector<double> out = xhat;
  return make_node(a.shape(), std::move(out), {a},
                   [p, q, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
                     auto& pa = parent(self, 0);
                     pa.ensure_grad();
                     for (std::size_t i = 0; i < p; ++i) {
                       layer_norm_row_backward(self.grad.data() + i * q, xhat.data() + i * q, inv_std[i], q,
                                               pa.grad.data() + i * q);
                     }
                   });
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  const auto [p, q] = as_rows(a);
  if (gain.numel() != q || bias.numel() != q) {
    throw DimensionError("layer_norm: affine parameters do not match width " + std::to_string(q));
  }
  auto [xhat, inv_std] = normalize_stats(a, eps);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[i * q + j] = xhat[i * q + j] * gain[j] + bias[j];
  return make_node(
      a.shape(), std::move(out), {a, gain, bias},
      [p, q, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
        auto& pa = parent(self, 0);
        auto& pg = parent(self, 1);
        auto& pb = parent(self, 2);
        if (pg.requires_grad) {
          pg.ensure_grad();
          for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) pg.grad[j] += self.grad[i * q + j] * xhat[i * q + j];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) pb.grad[j] += self.grad[i * q + j];
        }
        if (pa.requires_grad) {
          pa.ensure_grad();
          std::vector<double> gx(q);
          for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = 0; j < q; ++j) gx[j] = self.grad[i * q + j] * pg.data[j];
            layer_norm_row_backward(gx.data(), xhat.data() + i * q, inv_std[i], q, pa.grad.data() + i * q);
          }
        }
      });
}

Tensor normalize_rows(const Tensor& a) {
  const auto [p, q] = as_rows(a);
  std::vector<double> out(a.numel());
  std::vector<double> norms(p);
  for (std::size_t i = 0; i < p; ++i) {
    const double* x = a.data().data() + i * q;
    double s = 0.0;
    for (std::size_t j = 0; j < q; ++j) s += x[j] * x[j];
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) throw DomainError("normalize_rows: row " + std::to_string(i) + " has zero norm");
    for (std::size_t j = 0; j < q; ++j) out[i * q + j] = x[j] / norms[i];
  }
  return make_node(a.shape(), std::move(out), {a}, [p, q, norms = std::move(norms)](TensorImpl& self) {
    auto& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < p; ++i) {
      const double* y = self.data.data() + i * q;
      const double* g = self.grad.data() + i * q;
      double dot = 0.0;
      for (std::size_t j = 0; j < q; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < q; ++j) pa.grad[i * q + j] += (g[j] - y[j] * dot) / norms[i];
    }
  });
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.numel() != v.numel()) {
    throw DimensionError("cosine_similarity: " + shape_str(u.shape()) + " vs " + shape_str(v.shape()));
  }
  const std::size_t d = u.numel();
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (!(nu > 0.0) || !(nv > 0.0)) throw DomainError("cosine_similarity: zero-norm input");
  const double c = uv / (nu * nv);
  return make_node({1}, {c}, {u, v}, [d, nu, nv, c](TensorImpl& self) {
    auto& pu = parent(self, 0);
    auto& pv = parent(self, 1);
    const double g = self.grad[0];
    // dc/du = v/(|u||v|) - c u/|u|^2
    if (pu.requires_grad) {
      pu.ensure_grad();
      for (std::size_t i = 0; i < d; ++i)
        pu.grad[i] += g * (pv.data[i] / (nu * nv) - c * pu.data[i] / (nu * nu));
    }
    if (pv.requires_grad) {
      pv.ensure_grad();
      for (std::size_t i = 0; i < d; ++i)
        pv.grad[i] += g * (pu.data[i] / (nu * nv) - c * pv.data[i] / (nv * nv));
    }
  });
}

Tensor dropout(const Tensor& a, double rate, bool train, const DropoutKey& key) {
  if (rate < 0.0 || rate >= 1.0) throw ParameterError("dropout: rate must lie in [0, 1)");
  if (!train || rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(a.numel());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = counter_uniform(key.seed, key.layer_id, key.step, key.stream, i);
    mask[i] = u < rate ? 0.0 : keep_scale;
    out[i] = a[i] * mask[i];
  }
  return make_node(a.shape(), std::move(out), {a}, [mask = std::move(mask)](TensorImpl& self) {
    auto& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < mask.size(); ++i) pa.grad[i] += self.grad[i] * mask[i];
  });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> labels) {
  const auto [p, q] = as_rows(logits);
  if (labels.size() != p) throw DimensionError("cross_entropy_rows: label count does not match rows");
  for (auto l : labels) {
    if (l >= q) {
      throw RangeError("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(q) + ")");
    }
  }
  // Fused log-softmax + NLL for accuracy and a smaller graph.
  std::vector<double> probs(logits.numel());
  double loss = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    const double* x = logits.data().data() + i * q;
    const double mx = *std::max_element(x, x + q);
    double z = 0.0;
    for (std::size_t j = 0; j < q; ++j) z += (probs[i * q + j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < q; ++j) probs[i * q + j] /= z;
    loss -= x[labels[i]] - mx - std::log(z);
  }
  loss /= static_cast<double>(p);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return make_node({1}, {loss}, {logits}, [p, q, lab, probs = std::move(probs)](TensorImpl& self) {
    auto& pa = parent(self, 0);
    pa.ensure_grad();
    const double g = self.grad[0] / static_cast<double>(p);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j)
        pa.grad[i * q + j] += g * (probs[i * q + j] - (j == lab[i] ? 1.0 : 0.0));
  });
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  const std::size_t labels[] = {label};
  if (logits.rank() == 1) return cross_entropy_rows(reshape(logits, {1, logits.numel()}), labels);
  return cross_entropy_rows(logits, labels);
}

}  // namespace clfa::ops
