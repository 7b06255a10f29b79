#include "limcal/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "kernels.hpp"
#include "limcal/errors.hpp"
#include "limcal/numerics.hpp"

namespace limcal {

namespace {

[[noreturn]] void shape_fail(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

}  // namespace

Var Tape::push(Matrix value, bool needs_grad, BackwardFn fn) {
  require_finite(value, "tape node");
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  if (needs_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::push_view(const Matrix& value, bool needs_grad) {
  require_finite(value, "tape leaf");
  Node node;
  node.external = &value;
  node.needs_grad = needs_grad;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::constant_view(const Matrix& value) { return push_view(value, false); }

Var Tape::parameter_view(const Matrix& value) { return push_view(value, true); }

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::parameter(Matrix value) { return push(std::move(value), true, nullptr); }

Matrix& Tape::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    const Matrix& v = n.external ? *n.external : n.value;
    n.grad = Matrix(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

const Matrix& Tape::grad(Var v) { return grad_ref(v.id); }

void Tape::backward(Var loss, double seed, std::vector<std::size_t>* visited) {
  if (backward_done_) throw Error("tape backward may only run once");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward requires a 1x1 loss, got " + shape_string(lv));
  }
  backward_done_ = true;
  if (!nodes_[loss.id].needs_grad) return;
  grad_ref(loss.id)(0, 0) += seed;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.has_grad || !n.backward) continue;
    if (visited) visited->push_back(i);
    n.backward(*this, i);
  }
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != bv.rows()) shape_fail("matmul", av, bv);
  const bool ng = needs_grad(a) || needs_grad(b);
  return push(limcal::matmul(av, bv), ng, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    if (t.needs_grad(a)) kernels::gemm_nt(t.grad_ref(a.id), g, t.value(b));
    if (t.needs_grad(b)) kernels::gemm_tn(t.grad_ref(b.id), t.value(a), g);
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != bv.cols()) shape_fail("matmul_nt", av, bv);
  Matrix out(av.rows(), bv.rows());
  kernels::gemm_nt(out, av, bv);
  const bool ng = needs_grad(a) || needs_grad(b);
  return push(std::move(out), ng, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    if (t.needs_grad(a)) kernels::gemm_nn(t.grad_ref(a.id), g, t.value(b));
    if (t.needs_grad(b)) kernels::gemm_tn(t.grad_ref(b.id), g, t.value(a));
  });
}

Var Tape::add(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_fail("add", av, bv);
  const bool ng = needs_grad(a) || needs_grad(b);
  return push(av + bv, ng, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    for (Var p : {a, b}) {
      if (!t.needs_grad(p)) continue;
      auto dst = t.grad_ref(p.id).values();
      auto src = g.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  });
}

Var Tape::add_row(Var a, Var row) {
  const Matrix& av = value(a);
  const Matrix& rv = value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_fail("add_row", av, rv);
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] += rv(0, c);
  }
  const bool ng = needs_grad(a) || needs_grad(row);
  return push(std::move(out), ng, [a, row](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    if (t.needs_grad(a)) {
      auto dst = t.grad_ref(a.id).values();
      auto src = g.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    if (t.needs_grad(row)) {
      Matrix& gr = t.grad_ref(row.id);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c);
    }
  });
}

Var Tape::scale(Var a, double s) {
  return push(value(a) * s, needs_grad(a), [a, s](Tape& t, std::size_t self) {
    auto dst = t.grad_ref(a.id).values();
    auto src = t.out_grad(self).values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
  });
}

Var Tape::gelu(Var a) {
  Matrix out = value(a);
  for (double& v : out.values()) v = limcal::gelu(v);
  return push(std::move(out), needs_grad(a), [a](Tape& t, std::size_t self) {
    auto dst = t.grad_ref(a.id).values();
    auto src = t.out_grad(self).values();
    auto x = t.value(a).values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 * 0.5));
      const double pdf = std::exp(-0.5 * x[i] * x[i]) * 0.5 * std::numbers::inv_sqrtpi *
                         std::numbers::sqrt2;
      dst[i] += src[i] * (cdf + x[i] * pdf);
    }
  });
}

Var Tape::softmax_rows(Var a) {
  return push(limcal::softmax_rows(value(a)), needs_grad(a), [a](Tape& t, std::size_t self) {
    const Matrix& y = t.value(Var{self});
    const Matrix& g = t.out_grad(self);
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
      auto out = ga.row(r);
      for (std::size_t c = 0; c < yr.size(); ++c) out[c] += yr[c] * (gr[c] - dot);
    }
  });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = value(x);
  const Matrix& gv = value(gamma);
  const Matrix& bv = value(beta);
  if (gv.rows() != 1 || gv.cols() != xv.cols()) shape_fail("layer_norm gamma", xv, gv);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) shape_fail("layer_norm beta", xv, bv);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Matrix xhat(rows, cols);
  std::vector<double> inv_sigma(rows);
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = xv.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(cols);
    inv_sigma[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      xhat(r, c) = (xr[c] - mean) * inv_sigma[r];
      out(r, c) = xhat(r, c) * gv(0, c) + bv(0, c);
    }
  }
  const bool ng = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
  return push(std::move(out), ng,
              [x, gamma, beta, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](
                  Tape& t, std::size_t self) {
                const Matrix& g = t.out_grad(self);
                const Matrix& gv = t.value(gamma);
                const std::size_t rows = g.rows(), cols = g.cols();
                if (t.needs_grad(gamma)) {
                  Matrix& gg = t.grad_ref(gamma.id);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) gg(0, c) += g(r, c) * xhat(r, c);
                }
                if (t.needs_grad(beta)) {
                  Matrix& gb = t.grad_ref(beta.id);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) gb(0, c) += g(r, c);
                }
                if (t.needs_grad(x)) {
                  Matrix& gx = t.grad_ref(x.id);
                  const double n = static_cast<double>(cols);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) {
                      const double d = g(r, c) * gv(0, c);
                      mean_d += d;
                      mean_dx += d * xhat(r, c);
                    }
                    mean_d /= n;
                    mean_dx /= n;
                    for (std::size_t c = 0; c < cols; ++c) {
                      const double d = g(r, c) * gv(0, c);
                      gx(r, c) += inv_sigma[r] * (d - mean_d - xhat(r, c) * mean_dx);
                    }
                  }
                }
              });
}

Var Tape::slice_cols(Var a, std::size_t start, std::size_t count) {
  const Matrix& av = value(a);
  if (start + count > av.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + shape_string(av));
  }
  Matrix out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = av(r, start + c);
  return push(std::move(out), needs_grad(a), [a, start](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, start + c) += g(r, c);
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  bool ng = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) shape_fail("concat_cols", value(parts[0]), value(p));
    cols += value(p).cols();
    ng = ng || needs_grad(p);
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Matrix& pv = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, offset + c) = pv(r, c);
    offset += pv.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return push(std::move(out), ng, [ps = std::move(ps)](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    std::size_t offset = 0;
    for (Var p : ps) {
      const std::size_t w = t.value(p).cols();
      if (t.needs_grad(p)) {
        Matrix& gp = t.grad_ref(p.id);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, offset + c);
      }
      offset += w;
    }
  });
}

Var Tape::concat_rows(Var top, Var bottom) {
  const Matrix& tv = value(top);
  const Matrix& bv = value(bottom);
  if (tv.cols() != bv.cols()) shape_fail("concat_rows", tv, bv);
  std::vector<double> data(tv.values().begin(), tv.values().end());
  data.insert(data.end(), bv.values().begin(), bv.values().end());
  const std::size_t split = tv.size();
  const bool ng = needs_grad(top) || needs_grad(bottom);
  return push(Matrix(tv.rows() + bv.rows(), tv.cols(), std::move(data)), ng,
              [top, bottom, split](Tape& t, std::size_t self) {
                auto g = t.out_grad(self).values();
                if (t.needs_grad(top)) {
                  auto d = t.grad_ref(top.id).values();
                  for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                }
                if (t.needs_grad(bottom)) {
                  auto d = t.grad_ref(bottom.id).values();
                  for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[split + i];
                }
              });
}

Var Tape::slice_rows(Var a, std::size_t start, std::size_t count) {
  const Matrix& av = value(a);
  if (start + count > av.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + shape_string(av));
  }
  const auto first = av.values().begin() + static_cast<std::ptrdiff_t>(start * av.cols());
  std::vector<double> data(first, first + static_cast<std::ptrdiff_t>(count * av.cols()));
  const std::size_t offset = start * av.cols();
  return push(Matrix(count, av.cols(), std::move(data)), needs_grad(a),
              [a, offset](Tape& t, std::size_t self) {
                auto g = t.out_grad(self).values();
                auto d = t.grad_ref(a.id).values();
                for (std::size_t i = 0; i < g.size(); ++i) d[offset + i] += g[i];
              });
}

Var Tape::gather_rows(Var table, std::span<const std::uint32_t> ids) {
  const Matrix& tv = value(table);
  Matrix out(ids.size(), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.rows()) {
      throw ShapeError("gather_rows: id " + std::to_string(ids[r]) + " out of range for " +
                       shape_string(tv));
    }
    auto src = tv.row(ids[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  std::vector<std::uint32_t> idv(ids.begin(), ids.end());
  return push(std::move(out), needs_grad(table),
              [table, idv = std::move(idv)](Tape& t, std::size_t self) {
                const Matrix& g = t.out_grad(self);
                Matrix& gt = t.grad_ref(table.id);
                for (std::size_t r = 0; r < idv.size(); ++r) {
                  auto dst = gt.row(idv[r]);
                  auto src = g.row(r);
                  for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
                }
              });
}

Var Tape::mean_rows(Var a) {
  const Matrix& av = value(a);
  if (av.rows() == 0) throw ShapeError("mean_rows: empty input");
  Matrix out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(0, c) += av(r, c);
  const double inv = 1.0 / static_cast<double>(av.rows());
  for (double& v : out.values()) v *= inv;
  return push(std::move(out), needs_grad(a), [a, inv](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(0, c) * inv;
  });
}

Var Tape::cross_entropy(Var logits, std::size_t label) {
  const Matrix& lv = value(logits);
  if (lv.rows() != 1 || label >= lv.cols()) {
    throw ShapeError("cross_entropy: label " + std::to_string(label) + " invalid for logits " +
                     shape_string(lv));
  }
  Matrix probs = limcal::softmax_rows(lv);
  const double max = *std::max_element(lv.values().begin(), lv.values().end());
  double sum = 0.0;
  for (double v : lv.values()) sum += std::exp(v - max);
  const double loss = -(lv(0, label) - max - std::log(sum));
  return push(Matrix(1, 1, loss), needs_grad(logits),
              [logits, label, probs = std::move(probs)](Tape& t, std::size_t self) {
                const double g = t.out_grad(self)(0, 0);
                Matrix& gl = t.grad_ref(logits.id);
                for (std::size_t c = 0; c < probs.cols(); ++c) {
                  gl(0, c) += g * (probs(0, c) - (c == label ? 1.0 : 0.0));
                }
              });
}

Var Tape::mse(Var a, const Matrix& target) {
  const Matrix& av = value(a);
  if (av.rows() != target.rows() || av.cols() != target.cols()) shape_fail("mse", av, target);
  Matrix diff = av - target;
  double sum = 0.0;
  for (double d : diff.values()) sum += d * d;
  const double n = static_cast<double>(diff.size());
  return push(Matrix(1, 1, sum / n), needs_grad(a),
              [a, diff = std::move(diff), n](Tape& t, std::size_t self) {
                const double g = t.out_grad(self)(0, 0);
                auto dst = t.grad_ref(a.id).values();
                auto d = diff.values();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g * 2.0 * d[i] / n;
              });
}

}  // namespace limcal
