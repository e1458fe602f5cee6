#include "ftforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace ftforge {

namespace {

// Four-accumulator dot product. The summation order is fixed by this code, so
// results are reproducible; the independent accumulators let the compiler use
// SIMD lanes without reassociating.
double dot(const double* a, const double* b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
  }
}

}  // namespace

Tensor::Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows <= 0 || cols <= 0) {
    throw DimensionError("tensor dimensions must be positive, got (" +
                         std::to_string(rows) + "x" + std::to_string(cols) + ")");
  }
  data_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
}

Tensor Tensor::full(int rows, int cols, double v) {
  Tensor t(rows, cols);
  t.fill(v);
  return t;
}

Tensor Tensor::identity(int n) {
  Tensor t(n, n);
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::from(std::initializer_list<std::initializer_list<double>> rows) {
  int r = static_cast<int>(rows.size());
  int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
  Tensor t(r, c);
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c) {
      throw DimensionError("ragged initializer rows");
    }
    int j = 0;
    for (double v : row) t.at(i, j++) = v;
    ++i;
  }
  return t;
}

std::string Tensor::shape_str() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_scaled(const Tensor& src, double s) {
  require_same_shape(*this, src, "add_scaled");
  const double* p = src.data();
  double* q = data();
  for (std::size_t i = 0; i < data_.size(); ++i) q[i] += s * p[i];
}

double Tensor::squared_norm() const {
  return dot(data(), data(), static_cast<int>(data_.size()));
}

double Tensor::max_abs_diff(const Tensor& o) const {
  require_same_shape(*this, o, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    m = std::max(m, std::fabs(data_[i] - o.data_[i]));
  }
  return m;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::check_finite(const char* where) const {
  if (!all_finite()) {
    throw NumericError(std::string("non-finite value in ") + where + " " + shape_str());
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + a.shape_str() +
                         " * " + b.shape_str());
  }
  Tensor c(a.rows(), b.cols());
  if (b.cols() == 1) {
    // Matrix-vector: one dot per row, the hot path in the model.
    for (int i = 0; i < a.rows(); ++i) {
      c.at(i, 0) = dot(a.data() + static_cast<std::size_t>(i) * a.cols(), b.data(), a.cols());
    }
  } else {
    for (int i = 0; i < a.rows(); ++i) {
      const double* arow = a.data() + static_cast<std::size_t>(i) * a.cols();
      double* crow = c.data() + static_cast<std::size_t>(i) * c.cols();
      for (int k = 0; k < a.cols(); ++k) {
        const double aik = arow[k];
        const double* brow = b.data() + static_cast<std::size_t>(k) * b.cols();
        for (int j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
      }
    }
  }
  if (strict_finite_checks()) c.check_finite("matmul");
  return c;
}

void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& d_out,
                     Tensor* da, Tensor* db) {
  if (d_out.rows() != a.rows() || d_out.cols() != b.cols()) {
    throw DimensionError("matmul_backward: gradient shape " + d_out.shape_str() +
                         " does not match " + a.shape_str() + " * " + b.shape_str());
  }
  if (da != nullptr) {
    // dA += dC * B^T
    for (int i = 0; i < a.rows(); ++i) {
      const double* drow = d_out.data() + static_cast<std::size_t>(i) * d_out.cols();
      double* darow = da->data() + static_cast<std::size_t>(i) * da->cols();
      if (b.cols() == 1) {
        const double d0 = drow[0];
        for (int k = 0; k < a.cols(); ++k) darow[k] += d0 * b.data()[k];
      } else {
        for (int k = 0; k < a.cols(); ++k) {
          darow[k] += dot(drow, b.data() + static_cast<std::size_t>(k) * b.cols(), b.cols());
        }
      }
    }
  }
  if (db != nullptr) {
    // dB += A^T * dC, iterated so rows of A are read contiguously. Each dB
    // entry still accumulates in ascending-i order.
    if (b.cols() == 1) {
      double* dbcol = db->data();
      for (int i = 0; i < a.rows(); ++i) {
        const double* arow = a.data() + static_cast<std::size_t>(i) * a.cols();
        const double d0 = d_out.data()[i];
        for (int k = 0; k < a.cols(); ++k) dbcol[k] += d0 * arow[k];
      }
    } else {
      for (int k = 0; k < b.rows(); ++k) {
        double* dbrow = db->data() + static_cast<std::size_t>(k) * db->cols();
        for (int i = 0; i < a.rows(); ++i) {
          const double aik = a.at(i, k);
          const double* drow = d_out.data() + static_cast<std::size_t>(i) * d_out.cols();
          for (int j = 0; j < b.cols(); ++j) dbrow[j] += aik * drow[j];
        }
      }
    }
  }
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.flat()[i];
    // Split by sign to avoid overflow in exp.
    y.flat()[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                           : std::exp(v) / (1.0 + std::exp(v));
  }
  if (strict_finite_checks()) y.check_finite("sigmoid");
  return y;
}

Tensor tanh_op(const Tensor& x) {
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y.flat()[i] = std::tanh(x.flat()[i]);
  if (strict_finite_checks()) y.check_finite("tanh");
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.flat()[i] = a.flat()[i] + b.flat()[i];
  if (strict_finite_checks()) c.check_finite("add");
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.flat()[i] = a.flat()[i] - b.flat()[i];
  if (strict_finite_checks()) c.check_finite("sub");
  return c;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.flat()[i] = a.flat()[i] * b.flat()[i];
  if (strict_finite_checks()) c.check_finite("hadamard");
  return c;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "sigmoid_backward");
  Tensor dx(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double s = y.flat()[i];
    dx.flat()[i] = dy.flat()[i] * s * (1.0 - s);
  }
  return dx;
}

Tensor tanh_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "tanh_backward");
  Tensor dx(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double t = y.flat()[i];
    dx.flat()[i] = dy.flat()[i] * (1.0 - t * t);
  }
  return dx;
}

void hadamard_backward(const Tensor& a, const Tensor& b, const Tensor& d_out,
                       Tensor* da, Tensor* db) {
  require_same_shape(a, b, "hadamard_backward");
  require_same_shape(a, d_out, "hadamard_backward");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = d_out.flat()[i];
    if (da != nullptr) da->flat()[i] += d * b.flat()[i];
    if (db != nullptr) db->flat()[i] += d * a.flat()[i];
  }
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, int target) {
  if (logits.rows() != 1 && logits.cols() != 1) {
    throw DimensionError("softmax_cross_entropy expects a vector, got " + logits.shape_str());
  }
  const int n = static_cast<int>(logits.size());
  if (target < 0 || target >= n) {
    throw VocabError("cross-entropy target " + std::to_string(target) +
                     " out of range [0, " + std::to_string(n) + ")");
  }
  logits.check_finite("softmax_cross_entropy input");

  double max_logit = logits.flat()[0];
  for (double v : logits.flat()) max_logit = std::max(max_logit, v);

  CrossEntropyResult res;
  res.dlogits = Tensor(logits.rows(), logits.cols());
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = std::exp(logits.flat()[i] - max_logit);
    res.dlogits.flat()[i] = e;
    sum += e;
  }
  // Mathematically >= 0; clamp guards rounding at the boundary.
  res.loss = std::max(0.0, std::log(sum) - (logits.flat()[target] - max_logit));
  const double inv = 1.0 / sum;
  for (int i = 0; i < n; ++i) res.dlogits.flat()[i] *= inv;
  res.dlogits.flat()[target] -= 1.0;
  return res;
}

int argmax(const Tensor& v) {
  if (v.rows() != 1 && v.cols() != 1) {
    throw DimensionError("argmax expects a vector, got " + v.shape_str());
  }
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v.flat()[i] > v.flat()[best]) best = i;
  }
  return best;
}

FdReport finite_difference_check(const std::function<double()>& loss_fn,
                                 std::span<ParamRef> params, double eps) {
  if (eps <= 0.0) throw ConfigError("finite_difference_check: eps must be positive");
  const double l0 = loss_fn();
  const double l1 = loss_fn();
  if (l0 != l1) {
    throw DeterminismError("loss function is not deterministic: " + dtoa17(l0) +
                           " vs " + dtoa17(l1));
  }

  FdReport report;
  for (ParamRef& p : params) {
    if (p.value == nullptr || p.grad == nullptr) {
      throw ConfigError("finite_difference_check: null tensor for " + p.name);
    }
    if (!p.value->same_shape(*p.grad)) {
      throw DimensionError("finite_difference_check: gradient shape mismatch for " + p.name);
    }
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      double& theta = p.value->flat()[i];
      const double saved = theta;
      theta = saved + eps;
      const double lp = loss_fn();
      theta = saved - eps;
      const double lm = loss_fn();
      theta = saved;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double analytic = p.grad->flat()[i];
      const double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1e-8});
      const double rel = std::fabs(numeric - analytic) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p.name;
        report.worst_index = static_cast<int>(i);
      }
    }
  }
  return report;
}

}  // namespace ftforge
