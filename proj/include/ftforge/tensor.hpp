#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "ftforge/common.hpp"

namespace ftforge {

// Dense row-major matrix of doubles. Vectors are n x 1 columns by convention.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols);

  static Tensor zeros(int rows, int cols) { return Tensor(rows, cols); }
  static Tensor full(int rows, int cols, double v);
  static Tensor identity(int n);
  static Tensor from(std::initializer_list<std::initializer_list<double>> rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const;

  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  void fill(double v);
  void add_scaled(const Tensor& src, double s);  // *this += s * src
  double squared_norm() const;
  double max_abs_diff(const Tensor& o) const;
  bool all_finite() const;
  // Throws NumericError naming `where` if any entry is NaN/Inf.
  void check_finite(const char* where) const;

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

Tensor matmul(const Tensor& a, const Tensor& b);
// dA += dC * B^T, dB += A^T * dC. Null outputs are skipped.
void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& d_out,
                     Tensor* da, Tensor* db);

Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);

// Backward rules, written in terms of the forward *output* where the
// derivative allows it.
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);  // dy * y * (1 - y)
Tensor tanh_backward(const Tensor& y, const Tensor& dy);     // dy * (1 - y^2)
void hadamard_backward(const Tensor& a, const Tensor& b, const Tensor& d_out,
                       Tensor* da, Tensor* db);               // da += d*b, db += d*a

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor dlogits;  // softmax(logits) - onehot(target), same shape as logits
};

// logits must be a vector (1 x V or V x 1); stabilized by max subtraction.
CrossEntropyResult softmax_cross_entropy(const Tensor& logits, int target);

// Argmax over a vector tensor; ties resolved to the lowest index.
int argmax(const Tensor& v);

// One named parameter as seen by the gradient checker.
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;        // perturbed in place and restored
  const Tensor* grad = nullptr;   // analytic gradient at the unperturbed point
};

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
};

// Central finite differences against analytic gradients. `loss_fn` must be a
// deterministic function of the referenced tensors (fixed masks, fixed data);
// two identical calls are compared up front and a mismatch raises
// DeterminismError. Relative error uses denominator max(|a|, |b|, 1e-8).
FdReport finite_difference_check(const std::function<double()>& loss_fn,
                                 std::span<ParamRef> params, double eps);

}  // namespace ftforge
