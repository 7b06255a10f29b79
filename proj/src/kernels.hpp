#pragma once

// Accumulating GEMM variants shared by forward kernels and backward rules.

#include "limcal/matrix.hpp"

namespace limcal::kernels {

// out += a * b
inline void gemm_nn(Matrix& out, const Matrix& a, const Matrix& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    auto o = out.row(i);
    auto ar = a.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      auto br = b.row(p);
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

// out += a * b^T
inline void gemm_nt(Matrix& out, const Matrix& a, const Matrix& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      auto br = b.row(j);
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out(i, j) += s;
    }
  }
}

// out += a^T * b
inline void gemm_tn(Matrix& out, const Matrix& a, const Matrix& b) {
  const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    auto ar = a.row(p);
    auto br = b.row(p);
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      auto o = out.row(i);
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

}  // namespace limcal::kernels
