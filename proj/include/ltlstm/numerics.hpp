#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ltlstm {

using Vector = std::vector<double>;

// Thrown whenever two operands disagree on shape. The message always names
// both shapes involved.
class DimensionError : public std::invalid_argument {
public:
  explicit DimensionError(const std::string &msg) : std::invalid_argument(msg) {}
};

// Dense row-major matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {
    if (r <= 0 || c <= 0)
      throw DimensionError("Matrix dimensions must be positive, got " + std::to_string(r) +
                           "x" + std::to_string(c));
  }

  double &operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i)
      m(i, i) = 1.0;
    return m;
  }

  bool operator==(const Matrix &other) const = default;
};

// Per-thread tally of dense-kernel work. `multiplies` counts one per weight
// element touched in a product (the cost-model convention); `kernel_calls`
// counts invocations of the dense kernels, batched or not.
struct OpCounts {
  std::uint64_t multiplies = 0;
  std::uint64_t kernel_calls = 0;

  OpCounts &operator+=(const OpCounts &o) {
    multiplies += o.multiplies;
    kernel_calls += o.kernel_calls;
    return *this;
  }
  OpCounts operator-(const OpCounts &o) const {
    return {multiplies - o.multiplies, kernel_calls - o.kernel_calls};
  }
};

OpCounts &op_counts();       // this thread's running tally
void reset_op_counts();      // zero this thread's tally

// result[r] = sum_c M[r,c] * v[c]
Vector matvec(const Matrix &m, const Vector &v);

// One kernel call evaluating M against several right-hand sides. Column j of
// the result is bitwise identical to matvec(m, vs[j]).
std::vector<Vector> matvec_batch(const Matrix &m, std::span<const Vector> vs);

// result[c] = sum_r M[r,c] * v[r]  (used by reverse-mode passes)
Vector matvec_transpose(const Matrix &m, const Vector &v);

// acc += u * v^T
void add_outer(Matrix &acc, const Vector &u, const Vector &v);

Vector sigmoid(const Vector &v);
Vector tanh(const Vector &v);
Vector hadamard(const Vector &a, const Vector &b);
Vector add(const Vector &a, const Vector &b);

void axpy(double alpha, const Vector &x, Vector &y); // y += alpha * x

bool all_finite(const Vector &v);
bool all_finite(const Matrix &m);

} // namespace ltlstm
