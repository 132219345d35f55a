#include "ltlstm/numerics.hpp"

#include <cmath>

namespace ltlstm {

namespace {
thread_local OpCounts g_op_counts;

[[noreturn]] void throw_matvec_mismatch(const Matrix &m, std::size_t vlen) {
  throw DimensionError("matvec: matrix is " + std::to_string(m.rows) + "x" +
                       std::to_string(m.cols) + " but vector has length " +
                       std::to_string(vlen));
}
} // namespace

OpCounts &op_counts() { return g_op_counts; }
void reset_op_counts() { g_op_counts = OpCounts{}; }

Vector matvec(const Matrix &m, const Vector &v) {
  if (static_cast<std::size_t>(m.cols) != v.size())
    throw_matvec_mismatch(m, v.size());
  Vector out(static_cast<std::size_t>(m.rows));
  const double *row = m.data.data();
  for (int r = 0; r < m.rows; ++r, row += m.cols) {
    double acc = 0.0;
    for (int c = 0; c < m.cols; ++c)
      acc += row[c] * v[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = acc;
  }
  g_op_counts.multiplies += static_cast<std::uint64_t>(m.rows) * m.cols;
  g_op_counts.kernel_calls += 1;
  return out;
}

std::vector<Vector> matvec_batch(const Matrix &m, std::span<const Vector> vs) {
  std::vector<Vector> out;
  out.reserve(vs.size());
  for (const Vector &v : vs) {
    if (static_cast<std::size_t>(m.cols) != v.size())
      throw_matvec_mismatch(m, v.size());
    Vector col(static_cast<std::size_t>(m.rows));
    const double *row = m.data.data();
    // Same accumulation order as matvec so columns match it bitwise.
    for (int r = 0; r < m.rows; ++r, row += m.cols) {
      double acc = 0.0;
      for (int c = 0; c < m.cols; ++c)
        acc += row[c] * v[static_cast<std::size_t>(c)];
      col[static_cast<std::size_t>(r)] = acc;
    }
    out.push_back(std::move(col));
  }
  g_op_counts.multiplies += static_cast<std::uint64_t>(m.rows) * m.cols * vs.size();
  g_op_counts.kernel_calls += 1;
  return out;
}

Vector matvec_transpose(const Matrix &m, const Vector &v) {
  if (static_cast<std::size_t>(m.rows) != v.size())
    throw DimensionError("matvec_transpose: matrix is " + std::to_string(m.rows) + "x" +
                         std::to_string(m.cols) + " but vector has length " +
                         std::to_string(v.size()));
  Vector out(static_cast<std::size_t>(m.cols), 0.0);
  const double *row = m.data.data();
  for (int r = 0; r < m.rows; ++r, row += m.cols) {
    const double vr = v[static_cast<std::size_t>(r)];
    for (int c = 0; c < m.cols; ++c)
      out[static_cast<std::size_t>(c)] += row[c] * vr;
  }
  g_op_counts.multiplies += static_cast<std::uint64_t>(m.rows) * m.cols;
  g_op_counts.kernel_calls += 1;
  return out;
}

void add_outer(Matrix &acc, const Vector &u, const Vector &v) {
  if (static_cast<std::size_t>(acc.rows) != u.size() ||
      static_cast<std::size_t>(acc.cols) != v.size())
    throw DimensionError("add_outer: accumulator is " + std::to_string(acc.rows) + "x" +
                         std::to_string(acc.cols) + " but vectors have lengths " +
                         std::to_string(u.size()) + " and " + std::to_string(v.size()));
  double *row = acc.data.data();
  for (int r = 0; r < acc.rows; ++r, row += acc.cols) {
    const double ur = u[static_cast<std::size_t>(r)];
    for (int c = 0; c < acc.cols; ++c)
      row[c] += ur * v[static_cast<std::size_t>(c)];
  }
}

Vector sigmoid(const Vector &v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-v[i]));
  return out;
}

Vector tanh(const Vector &v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = std::tanh(v[i]);
  return out;
}

Vector hadamard(const Vector &a, const Vector &b) {
  if (a.size() != b.size())
    throw DimensionError("hadamard: lengths differ, " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = a[i] * b[i];
  return out;
}

Vector add(const Vector &a, const Vector &b) {
  if (a.size() != b.size())
    throw DimensionError("add: lengths differ, " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = a[i] + b[i];
  return out;
}

void axpy(double alpha, const Vector &x, Vector &y) {
  if (x.size() != y.size())
    throw DimensionError("axpy: lengths differ, " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] += alpha * x[i];
}

bool all_finite(const Vector &v) {
  for (double x : v)
    if (!std::isfinite(x))
      return false;
  return true;
}

bool all_finite(const Matrix &m) {
  for (double x : m.data)
    if (!std::isfinite(x))
      return false;
  return true;
}

} // namespace ltlstm
