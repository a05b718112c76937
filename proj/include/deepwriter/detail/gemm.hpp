#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace deepwriter::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixView = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixView = Eigen::Map<const RowMatrix<T>>;

// Row-major GEMM wrappers: C (+)= op(A) * op(B) with A, B, C given as flat
// buffers. Shapes are those of the operands after transposition.

/// C[m,n] = A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false) {
  ConstMatrixView<T> A(a, m, k);
  ConstMatrixView<T> B(b, k, n);
  MatrixView<T> C(c, m, n);
  if (accumulate) {
    C.noalias() += A * B;
  } else {
    C.noalias() = A * B;
  }
}

/// C[m,n] = A[m,k] * B^T where B is stored [n,k]
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false) {
  ConstMatrixView<T> A(a, m, k);
  ConstMatrixView<T> B(b, n, k);
  MatrixView<T> C(c, m, n);
  if (accumulate) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() = A * B.transpose();
  }
}

/// C[m,n] = A^T * B where A is stored [k,m]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false) {
  ConstMatrixView<T> A(a, k, m);
  ConstMatrixView<T> B(b, k, n);
  MatrixView<T> C(c, m, n);
  if (accumulate) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() = A.transpose() * B;
  }
}

}  // namespace deepwriter::detail
