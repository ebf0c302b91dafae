#pragma once

#include <span>

#include "kwmlp/matrix.h"

// Dense linear-algebra kernels used by the encoder and trainer.
//
// The default entry points are OpenMP-parallel over output rows; each output
// row is produced by the same sequential loop regardless of thread count, so
// results are bitwise independent of the number of workers. When called from
// inside an active parallel region they run serially.
namespace kwmlp::kernels {

// c = a * b, or c += a * b when accumulate is set.  a: m x k, b: k x n.
void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
// c = a^T * b (or +=).  a: k x m, b: k x n.
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
// c = a * b^T (or +=).  a: m x k, b: n x k.
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);

Matrix matmul(const Matrix& a, const Matrix& b);

// x[r, :] += bias for every row.
void add_row_bias(Matrix& x, std::span<const double> bias);
// out[c] += sum_r x[r, c].
void accumulate_col_sums(const Matrix& x, std::span<double> out);

// Worker count used by parallel kernels and batch loops. 0 restores the
// OpenMP default.
void set_num_threads(int n);
int num_threads();
// Reads KWMLP_THREADS (0 or unset = auto) and applies it.
void configure_threads_from_env();

// Straight triple-loop versions kept as the correctness reference for the
// parallel kernels. Never used on the hot path.
namespace reference {
void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
}  // namespace reference

}  // namespace kwmlp::kernels
