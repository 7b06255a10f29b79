#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "limcal/matrix.hpp"
#include "limcal/tape.hpp"

namespace limcal {

inline constexpr double kLayerNormEps = 1e-5;

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& m);
Matrix layer_norm(const Matrix& x, std::span<const double> gamma, std::span<const double> beta,
                  double eps = kLayerNormEps);
double gelu(double x);

// Multi-head scaled dot-product attention without projections. Each head
// sees a contiguous D/heads column block and uses scale 1/sqrt(D/heads).
Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads);

// Same computation recorded on a tape.
Var attention(Tape& tape, Var q, Var k, Var v, std::size_t heads);

// Sinusoidal positional table: even columns sin(pos / 10000^(2i/dim)),
// odd columns the matching cos.
class SinusoidalTable {
 public:
  SinusoidalTable(std::size_t max_len, std::size_t dim);

  std::size_t max_len() const { return table_.rows(); }
  std::size_t dim() const { return table_.cols(); }
  const Matrix& table() const { return table_; }
  // First `len` rows; throws ShapeError when len > max_len.
  Matrix prefix(std::size_t len) const;

 private:
  Matrix table_;
};

// Matmul FLOPs under the 2*m*k*n convention.
constexpr std::size_t matmul_flops(std::size_t m, std::size_t k, std::size_t n) {
  return 2 * m * k * n;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
};

// Builds a scalar loss on the tape from parameter vars.
using LossBuilder = std::function<Var(Tape&, std::span<const Var>)>;

// Compares tape gradients against central finite differences for every
// entry of every parameter. The relative error of one entry is
// |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckResult grad_check(const LossBuilder& loss, std::vector<Matrix> params, double h = 1e-4);

}  // namespace limcal
