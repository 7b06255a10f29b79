#include "limcal/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "kernels.hpp"
#include "limcal/errors.hpp"

namespace limcal {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a) + " and " +
                     shape_string(b));
  }
  Matrix out(a.rows(), b.cols());
  kernels::gemm_nn(out, a, b);
  return out;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto o = out.row(r);
    const double max = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - max);
      sum += o[c];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

Matrix layer_norm(const Matrix& x, std::span<const double> gamma, std::span<const double> beta,
                  double eps) {
  if (gamma.size() != x.cols() || beta.size() != x.cols()) {
    throw ShapeError("layer_norm: gamma/beta lengths " + std::to_string(gamma.size()) + "/" +
                     std::to_string(beta.size()) + " do not match " + shape_string(x));
  }
  Tape tape;
  const Var out = tape.layer_norm(tape.constant(x), tape.constant(Matrix::row_vector(gamma)),
                                  tape.constant(Matrix::row_vector(beta)), eps);
  return tape.value(out);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5)); }

namespace {

void check_attention_shapes(const Matrix& q, const Matrix& k, const Matrix& v,
                            std::size_t heads) {
  if (q.cols() != k.cols() || k.cols() != v.cols()) {
    throw ShapeError("attention: Q/K/V widths differ (" + shape_string(q) + ", " +
                     shape_string(k) + ", " + shape_string(v) + ")");
  }
  if (k.rows() != v.rows()) {
    throw ShapeError("attention: K and V row counts differ (" + shape_string(k) + ", " +
                     shape_string(v) + ")");
  }
  if (k.rows() == 0) throw ShapeError("attention: no keys");
  if (heads == 0 || q.cols() % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(q.cols()) +
                      " is not divisible by head count " + std::to_string(heads));
  }
}

}  // namespace

Var attention(Tape& tape, Var q, Var k, Var v, std::size_t heads) {
  check_attention_shapes(tape.value(q), tape.value(k), tape.value(v), heads);
  const std::size_t width = tape.value(q).cols();
  const std::size_t head_dim = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  if (heads == 1) {
    const Var probs = tape.softmax_rows(tape.scale(tape.matmul_nt(q, k), scale));
    return tape.matmul(probs, v);
  }
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = tape.slice_cols(q, h * head_dim, head_dim);
    const Var kh = tape.slice_cols(k, h * head_dim, head_dim);
    const Var vh = tape.slice_cols(v, h * head_dim, head_dim);
    const Var probs = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), scale));
    outs.push_back(tape.matmul(probs, vh));
  }
  return tape.concat_cols(outs);
}

Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                            std::size_t heads) {
  check_attention_shapes(q, k, v, heads);
  Tape tape;
  const Var out = attention(tape, tape.constant(q), tape.constant(k), tape.constant(v), heads);
  return tape.value(out);
}

SinusoidalTable::SinusoidalTable(std::size_t max_len, std::size_t dim) : table_(max_len, dim) {
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; 2 * i < dim; ++i) {
      const double freq =
          std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) / freq;
      table_(pos, 2 * i) = std::sin(angle);
      if (2 * i + 1 < dim) table_(pos, 2 * i + 1) = std::cos(angle);
    }
  }
}

Matrix SinusoidalTable::prefix(std::size_t len) const {
  if (len > table_.rows()) {
    throw ShapeError("positional table holds " + std::to_string(table_.rows()) +
                     " positions, requested " + std::to_string(len));
  }
  const auto first = table_.values().begin();
  return Matrix(len, table_.cols(),
                std::vector<double>(first, first + static_cast<std::ptrdiff_t>(len * dim())));
}

namespace {

double eval_loss(const LossBuilder& loss, const std::vector<Matrix>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.constant(p));
  const Var out = loss(tape, vars);
  return tape.value(out)(0, 0);
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, std::vector<Matrix> params, double h) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    const Var out = loss(tape, vars);
    if (!std::isfinite(tape.value(out)(0, 0))) throw NumericError("grad_check: non-finite loss");
    tape.backward(out);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto vals = params[p].values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      double up = 0.0, down = 0.0;
      try {
        vals[i] = saved + h;
        up = eval_loss(loss, params);
        vals[i] = saved - h;
        down = eval_loss(loss, params);
      } catch (const NumericError&) {
        up = std::numeric_limits<double>::quiet_NaN();
      }
      vals[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: non-finite loss perturbing parameter " +
                           std::to_string(p) + " entry " + std::to_string(i));
      }
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p].values()[i];
      const double rel =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p;
        result.worst_entry = i;
      }
    }
  }
  return result;
}

}  // namespace limcal
