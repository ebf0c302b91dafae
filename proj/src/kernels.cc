#include "kwmlp/kernels.h"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace kwmlp::kernels {
namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelThreshold = 1 << 15;

bool go_parallel(std::size_t work) {
#ifdef _OPENMP
  return work >= kParallelThreshold && !omp_in_parallel();
#else
  (void)work;
  return false;
#endif
}

void prepare_output(Matrix& c, std::size_t m, std::size_t n, bool accumulate,
                    const char* what) {
  if (accumulate) {
    require_shape(c, m, n, what);
  } else if (c.rows() != m || c.cols() != n) {
    c = Matrix(m, n);
  } else {
    c.fill(0.0);
  }
}

}  // namespace

void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  prepare_output(c, m, n, accumulate, "matmul output");
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (go_parallel(m * k * n))
  for (long i = 0; i < rows; ++i) {
    double* crow = pc + i * n;
    const double* arow = pa + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  prepare_output(c, m, n, accumulate, "matmul_tn output");
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (go_parallel(m * k * n))
  for (long i = 0; i < rows; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[p * m + i];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  prepare_output(c, m, n, accumulate, "matmul_nt output");
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (go_parallel(m * k * n))
  for (long i = 0; i < rows; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      pc[i * n + j] += s;
    }
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c;
  matmul(a, b, c);
  return c;
}

void add_row_bias(Matrix& x, std::span<const double> bias) {
  if (bias.size() != x.cols()) throw ShapeError("add_row_bias: bias length mismatch");
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
}

void accumulate_col_sums(const Matrix& x, std::span<double> out) {
  if (out.size() != x.cols()) throw ShapeError("accumulate_col_sums: length mismatch");
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c];
  }
}

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n <= 0) n = omp_get_num_procs();
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void configure_threads_from_env() {
  const char* env = std::getenv("KWMLP_THREADS");
  if (env == nullptr || *env == '\0') return;
  try {
    set_num_threads(std::stoi(env));
  } catch (const std::exception&) {
    // Unparseable values leave the OpenMP default in place.
  }
}

namespace reference {

void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.cols() != b.rows()) throw ShapeError("reference::matmul");
  prepare_output(c, a.rows(), b.cols(), accumulate, "reference::matmul output");
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) += s;
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.rows() != b.rows()) throw ShapeError("reference::matmul_tn");
  prepare_output(c, a.cols(), b.cols(), accumulate, "reference::matmul_tn output");
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.rows(); ++p) s += a(p, i) * b(p, j);
      c(i, j) += s;
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.cols() != b.cols()) throw ShapeError("reference::matmul_nt");
  prepare_output(c, a.rows(), b.rows(), accumulate, "reference::matmul_nt output");
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(j, p);
      c(i, j) += s;
    }
  }
}

}  // namespace reference
}  // namespace kwmlp::kernels
