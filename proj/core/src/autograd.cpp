// Copyright (c) 2026 The emoalign Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "emoalign/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "emoalign/error.hpp"

namespace emoalign {

// ---------------------------------------------------------------------------
// ParameterSet

void ParameterSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

void ParameterSet::set(std::string_view name, Tensor value) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    add(std::string(name), std::move(value));
  } else {
    values_[it->second] = std::move(value);
  }
}

bool ParameterSet::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::size_t ParameterSet::slot(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

void ParameterSet::erase_prefix(std::string_view prefix) {
  std::vector<std::string> names;
  std::vector<Tensor> values;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].starts_with(prefix)) continue;
    names.push_back(std::move(names_[i]));
    values.push_back(std::move(values_[i]));
  }
  names_ = std::move(names);
  values_ = std::move(values);
  reindex();
}

void ParameterSet::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < names_.size(); ++i) index_.emplace(names_[i], i);
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    out.add(names_[i], Tensor(values_[i].shape(), 0.0));
  }
  return out;
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

bool ParameterSet::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](const Tensor& t) { return t.all_finite(); });
}

// ---------------------------------------------------------------------------
// kernels

namespace kernels {

namespace {

// c[0..n) += av * b[0..n)
inline void axpy(double* __restrict c, const double* __restrict b, double av, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
}

}  // namespace

void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (!accumulate) c.fill(0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      axpy(crow, pb + p * n, av, n);
    }
  }
}

// Goes through a transposed copy of b so the inner loop is an axpy; each
// output still sums over p in increasing order.
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  const double* pb = b.data().data();
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = pb[j * k + p];
  thread_local std::vector<double> acc;
  acc.resize(n);
  const double* pa = a.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) axpy(acc.data(), bt.data() + p * n, pa[i * k + p], n);
    double* crow = pc + i * n;
    if (accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] += acc[j];
    } else {
      std::copy(acc.begin(), acc.end(), crow);
    }
  }
}

void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  if (!accumulate) c.fill(0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = pa[p * m + i];
      if (av == 0.0) continue;
      axpy(pc + i * n, brow, av, n);
    }
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Graph

namespace {

std::string shapes(const Tensor& a, const Tensor& b) {
  return a.shape_str() + " and " + b.shape_str();
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 operand, got " + t.shape_str());
  }
}

}  // namespace

Var Graph::push(const char* op, Tensor value, bool requires_grad, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.op = op;
  if (requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Graph::grad_ref(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Var Graph::constant(Tensor value) {
  require_rank2(value, "constant");
  return push("constant", std::move(value), false, nullptr);
}

Var Graph::variable(Tensor value) {
  require_rank2(value, "variable");
  return push("variable", std::move(value), true, [](Graph&, std::uint32_t) {});
}

Var Graph::param(std::string_view name) {
  if (params_ == nullptr) throw ConfigError("graph has no parameter set");
  const std::size_t slot = params_->slot(name);
  if (auto it = param_vars_.find(slot); it != param_vars_.end()) return it->second;
  Var v = push("param", params_->at(slot), true, [](Graph&, std::uint32_t) {});
  require_rank2(nodes_[v.id].value, "param");
  nodes_[v.id].param_slot = static_cast<std::int64_t>(slot);
  param_vars_.emplace(slot, v);
  return v;
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols() != B.rows()) throw DimensionError("matmul: shape mismatch " + shapes(A, B));
  Tensor out = Tensor::zeros(A.rows(), B.cols());
  kernels::gemm_nn(A, B, out, false);
  return push("matmul", std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::uint32_t self) {
    const Tensor& dy = g.out_grad(self);
    if (g.needs(a)) kernels::gemm_nt(dy, g.value(b), g.grad_ref(a.id), true);
    if (g.needs(b)) kernels::gemm_tn(g.value(a), dy, g.grad_ref(b.id), true);
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols() != B.cols()) throw DimensionError("matmul_nt: shape mismatch " + shapes(A, B));
  Tensor out = Tensor::zeros(A.rows(), B.rows());
  kernels::gemm_nt(A, B, out, false);
  return push("matmul_nt", std::move(out), needs(a) || needs(b),
              [a, b](Graph& g, std::uint32_t self) {
                const Tensor& dy = g.out_grad(self);
                if (g.needs(a)) kernels::gemm_nn(dy, g.value(b), g.grad_ref(a.id), true);
                if (g.needs(b)) kernels::gemm_tn(dy, g.value(a), g.grad_ref(b.id), true);
              });
}

Var Graph::transpose(Var a) {
  const Tensor& A = value(a);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = A(i, j);
  return push("transpose", std::move(out), needs(a), [a, m, n](Graph& g, std::uint32_t self) {
    const Tensor& dy = g.out_grad(self);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) da(i, j) += dy(j, i);
  });
}

Var Graph::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) throw DimensionError("add: shape mismatch " + shapes(A, B));
  Tensor out = A;
  auto o = out.data();
  auto bd = B.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return push("add", std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::uint32_t self) {
    const auto dy = g.out_grad(self).data();
    for (Var v : {a, b}) {
      if (!g.needs(v)) continue;
      auto d = g.grad_ref(v.id).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

Var Graph::add_row(Var a, Var row) {
  const Tensor& A = value(a);
  const Tensor& R = value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) {
    throw DimensionError("add_row: shape mismatch " + shapes(A, R));
  }
  Tensor out = A;
  for (std::size_t i = 0; i < A.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += R(0, j);
  }
  return push("add_row", std::move(out), needs(a) || needs(row),
              [a, row](Graph& g, std::uint32_t self) {
                const Tensor& dy = g.out_grad(self);
                if (g.needs(a)) {
                  auto d = g.grad_ref(a.id).data();
                  auto s = dy.data();
                  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
                }
                if (g.needs(row)) {
                  Tensor& dr = g.grad_ref(row.id);
                  for (std::size_t i = 0; i < dy.rows(); ++i)
                    for (std::size_t j = 0; j < dy.cols(); ++j) dr(0, j) += dy(i, j);
                }
              });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) throw DimensionError("mul: shape mismatch " + shapes(A, B));
  Tensor out = A;
  auto o = out.data();
  auto bd = B.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return push("mul", std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::uint32_t self) {
    const auto dy = g.out_grad(self).data();
    if (g.needs(a)) {
      auto d = g.grad_ref(a.id).data();
      auto other = g.value(b).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * other[i];
    }
    if (g.needs(b)) {
      auto d = g.grad_ref(b.id).data();
      auto other = g.value(a).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * other[i];
    }
  });
}

Var Graph::scale(Var a, double s) {
  Tensor out = value(a);
  for (double& v : out.data()) v *= s;
  return push("scale", std::move(out), needs(a), [a, s](Graph& g, std::uint32_t self) {
    const auto dy = g.out_grad(self).data();
    auto d = g.grad_ref(a.id).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * dy[i];
  });
}

Var Graph::tanh(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = std::tanh(v);
  return push("tanh", std::move(out), needs(a), [a](Graph& g, std::uint32_t self) {
    const auto dy = g.out_grad(self).data();
    const auto y = g.value(Var{self}).data();
    auto d = g.grad_ref(a.id).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * (1.0 - y[i] * y[i]);
  });
}

Var Graph::gelu(Var a) {
  const Tensor& x = value(a);
  Tensor out = x;
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return push("gelu", std::move(out), needs(a), [a](Graph& g, std::uint32_t self) {
    const auto dy = g.out_grad(self).data();
    const auto xv = g.value(a).data();
    auto d = g.grad_ref(a.id).data();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      d[i] += dy[i] * (cdf + v * pdf);
    }
  });
}

Var Graph::softmax_rows(Var a, const std::vector<bool>& valid_cols) {
  const Tensor& x = value(a);
  const std::size_t m = x.rows(), n = x.cols();
  if (!valid_cols.empty() && valid_cols.size() != n) {
    throw DimensionError("softmax_rows: validity mask of length " +
                         std::to_string(valid_cols.size()) + " for " + x.shape_str());
  }
  auto ok = [&](std::size_t j) { return valid_cols.empty() || valid_cols[j]; };
  Tensor out = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (ok(j)) mx = std::max(mx, x(i, j));
    if (!std::isfinite(mx)) throw NumericError("softmax_rows: row has no valid column");
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!ok(j)) continue;
      out(i, j) = std::exp(x(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= z;
  }
  return push("softmax_rows", std::move(out), needs(a), [a](Graph& g, std::uint32_t self) {
    const Tensor& dy = g.out_grad(self);
    const Tensor& y = g.value(Var{self});
    Tensor& dx = g.grad_ref(a.id);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += y(i, j) * dy(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) += y(i, j) * (dy(i, j) - dot);
    }
  });
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = value(x);
  const Tensor& G = value(gamma);
  const Tensor& B = value(beta);
  const std::size_t m = X.rows(), n = X.cols();
  if (G.rows() != 1 || G.cols() != n || !G.same_shape(B)) {
    throw DimensionError("layer_norm: gamma/beta " + shapes(G, B) + " for input " + X.shape_str());
  }
  Tensor xhat = Tensor::zeros(m, n);
  std::vector<double> inv_std(m);
  Tensor out = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += X(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (X(i, j) - mu) * (X(i, j) - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (X(i, j) - mu) * inv_std[i];
      out(i, j) = G(0, j) * xhat(i, j) + B(0, j);
    }
  }
  const bool rg = needs(x) || needs(gamma) || needs(beta);
  return push("layer_norm", std::move(out), rg,
              [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                  Graph& g, std::uint32_t self) {
                const Tensor& dy = g.out_grad(self);
                const Tensor& G = g.value(gamma);
                const std::size_t m = dy.rows(), n = dy.cols();
                if (g.needs(gamma) || g.needs(beta)) {
                  for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                      if (g.needs(gamma)) g.grad_ref(gamma.id)(0, j) += dy(i, j) * xhat(i, j);
                      if (g.needs(beta)) g.grad_ref(beta.id)(0, j) += dy(i, j);
                    }
                  }
                }
                if (!g.needs(x)) return;
                Tensor& dx = g.grad_ref(x.id);
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t i = 0; i < m; ++i) {
                  double mean_d = 0.0, mean_dx = 0.0;
                  for (std::size_t j = 0; j < n; ++j) {
                    const double d = dy(i, j) * G(0, j);
                    mean_d += d;
                    mean_dx += d * xhat(i, j);
                  }
                  mean_d *= inv_n;
                  mean_dx *= inv_n;
                  for (std::size_t j = 0; j < n; ++j) {
                    const double d = dy(i, j) * G(0, j);
                    dx(i, j) += inv_std[i] * (d - mean_d - xhat(i, j) * mean_dx);
                  }
                }
              });
}

Var Graph::conv1d(Var x, Var weight, Var bias, std::size_t kernel, std::size_t stride) {
  const Tensor& X = value(x);
  const Tensor& W = value(weight);
  const Tensor& B = value(bias);
  const std::size_t cin = X.rows(), len = X.cols(), cout = W.rows();
  if (kernel == 0 || stride == 0) throw ConfigError("conv1d: kernel and stride must be positive");
  if (W.cols() != cin * kernel || B.rows() != cout || B.cols() != 1) {
    throw DimensionError("conv1d: weight " + W.shape_str() + " / bias " + B.shape_str() +
                         " incompatible with input " + X.shape_str() + " and kernel " +
                         std::to_string(kernel));
  }
  if (len < kernel) {
    throw LengthError("conv1d: input length " + std::to_string(len) +
                      " shorter than kernel " + std::to_string(kernel));
  }
  const std::size_t lout = (len - kernel) / stride + 1;
  Tensor out = Tensor::zeros(cout, lout);
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t j = 0; j < lout; ++j) {
      double s = B(o, 0);
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t t = 0; t < kernel; ++t) s += W(o, c * kernel + t) * X(c, j * stride + t);
      out(o, j) = s;
    }
  }
  const bool rg = needs(x) || needs(weight) || needs(bias);
  return push("conv1d", std::move(out), rg,
              [x, weight, bias, kernel, stride](Graph& g, std::uint32_t self) {
                const Tensor& dy = g.out_grad(self);
                const Tensor& X = g.value(x);
                const Tensor& W = g.value(weight);
                const std::size_t cin = X.rows(), cout = dy.rows(), lout = dy.cols();
                for (std::size_t o = 0; o < cout; ++o) {
                  for (std::size_t j = 0; j < lout; ++j) {
                    const double d = dy(o, j);
                    if (g.needs(bias)) g.grad_ref(bias.id)(o, 0) += d;
                    for (std::size_t c = 0; c < cin; ++c) {
                      for (std::size_t t = 0; t < kernel; ++t) {
                        if (g.needs(weight))
                          g.grad_ref(weight.id)(o, c * kernel + t) += d * X(c, j * stride + t);
                        if (g.needs(x)) g.grad_ref(x.id)(c, j * stride + t) += d * W(o, c * kernel + t);
                      }
                    }
                  }
                }
              });
}

Var Graph::embedding(Var table, std::vector<std::size_t> indices) {
  const Tensor& E = value(table);
  Tensor out = Tensor::zeros(indices.size(), E.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= E.rows()) {
      throw DimensionError("embedding: index " + std::to_string(indices[i]) +
                           " out of range for table " + E.shape_str());
    }
    std::copy_n(E.row(indices[i]).begin(), E.cols(), out.row(i).begin());
  }
  return push("embedding", std::move(out), needs(table),
              [table, indices = std::move(indices)](Graph& g, std::uint32_t self) {
                const Tensor& dy = g.out_grad(self);
                Tensor& dt = g.grad_ref(table.id);
                for (std::size_t i = 0; i < indices.size(); ++i)
                  for (std::size_t j = 0; j < dy.cols(); ++j) dt(indices[i], j) += dy(i, j);
              });
}

Var Graph::select_rows(Var a, std::vector<std::size_t> rows) {
  const Tensor& A = value(a);
  Tensor out = Tensor::zeros(rows.size(), A.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= A.rows()) {
      throw DimensionError("select_rows: row " + std::to_string(rows[i]) + " out of range for " +
                           A.shape_str());
    }
    std::copy_n(A.row(rows[i]).begin(), A.cols(), out.row(i).begin());
  }
  return push("select_rows", std::move(out), needs(a),
              [a, rows = std::move(rows)](Graph& g, std::uint32_t self) {
                const Tensor& dy = g.out_grad(self);
                Tensor& da = g.grad_ref(a.id);
                for (std::size_t i = 0; i < rows.size(); ++i)
                  for (std::size_t j = 0; j < dy.cols(); ++j) da(rows[i], j) += dy(i, j);
              });
}

Var Graph::replace_rows(Var a, std::vector<std::size_t> rows, Var row) {
  const Tensor& A = value(a);
  const Tensor& R = value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) {
    throw DimensionError("replace_rows: replacement " + R.shape_str() + " for " + A.shape_str());
  }
  Tensor out = A;
  std::vector<bool> replaced(A.rows(), false);
  for (std::size_t r : rows) {
    if (r >= A.rows()) {
      throw DimensionError("replace_rows: row " + std::to_string(r) + " out of range for " +
                           A.shape_str());
    }
    replaced[r] = true;
    std::copy_n(R.row(0).begin(), R.cols(), out.row(r).begin());
  }
  return push("replace_rows", std::move(out), needs(a) || needs(row),
              [a, row, replaced = std::move(replaced)](Graph& g, std::uint32_t self) {
                const Tensor& dy = g.out_grad(self);
                for (std::size_t i = 0; i < dy.rows(); ++i) {
                  if (replaced[i]) {
                    if (!g.needs(row)) continue;
                    Tensor& dr = g.grad_ref(row.id);
                    for (std::size_t j = 0; j < dy.cols(); ++j) dr(0, j) += dy(i, j);
                  } else if (g.needs(a)) {
                    Tensor& da = g.grad_ref(a.id);
                    for (std::size_t j = 0; j < dy.cols(); ++j) da(i, j) += dy(i, j);
                  }
                }
              });
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = value(a);
  if (begin > end || end > A.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + A.shape_str());
  }
  Tensor out = Tensor::zeros(A.rows(), end - begin);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = A(i, j);
  return push("slice_cols", std::move(out), needs(a), [a, begin](Graph& g, std::uint32_t self) {
    const Tensor& dy = g.out_grad(self);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t i = 0; i < dy.rows(); ++i)
      for (std::size_t j = 0; j < dy.cols(); ++j) da(i, begin + j) += dy(i, j);
  });
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t m = value(parts[0]).rows();
  std::size_t n = 0;
  bool rg = false;
  for (Var p : parts) {
    if (value(p).rows() != m) {
      throw DimensionError("concat_cols: shape mismatch " + shapes(value(parts[0]), value(p)));
    }
    n += value(p).cols();
    rg = rg || needs(p);
  }
  Tensor out = Tensor::zeros(m, n);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& P = value(p);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) out(i, off + j) = P(i, j);
    off += P.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push("concat_cols", std::move(out), rg,
              [inputs = std::move(inputs)](Graph& g, std::uint32_t self) {
                const Tensor& dy = g.out_grad(self);
                std::size_t off = 0;
                for (Var p : inputs) {
                  const std::size_t w = g.value(p).cols();
                  if (g.needs(p)) {
                    Tensor& dp = g.grad_ref(p.id);
                    for (std::size_t i = 0; i < dy.rows(); ++i)
                      for (std::size_t j = 0; j < w; ++j) dp(i, j) += dy(i, off + j);
                  }
                  off += w;
                }
              });
}

Var Graph::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  return push("sum", Tensor::scalar(s), needs(a), [a](Graph& g, std::uint32_t self) {
    const double d = g.out_grad(self).item();
    for (double& v : g.grad_ref(a.id).data()) v += d;
  });
}

Var Graph::mean(Var a) {
  const std::size_t n = value(a).size();
  if (n == 0) throw DimensionError("mean: empty operand");
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  const double inv = 1.0 / static_cast<double>(n);
  return push("mean", Tensor::scalar(s * inv), needs(a), [a, inv](Graph& g, std::uint32_t self) {
    const double d = g.out_grad(self).item() * inv;
    for (double& v : g.grad_ref(a.id).data()) v += d;
  });
}

Var Graph::cross_entropy(Var logits, std::vector<std::size_t> labels) {
  const Tensor& Z = value(logits);
  if (labels.size() != Z.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         Z.shape_str());
  }
  const std::size_t n = Z.rows(), k = Z.cols();
  Tensor probs = Tensor::zeros(n, k);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) {
      throw LabelError("cross_entropy: label " + std::to_string(labels[i]) + " >= " +
                       std::to_string(k) + " classes");
    }
    double mx = Z(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, Z(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      probs(i, j) = std::exp(Z(i, j) - mx);
      s += probs(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) probs(i, j) /= s;
    loss += mx + std::log(s) - Z(i, labels[i]);
  }
  return push("cross_entropy", Tensor::scalar(loss), needs(logits),
              [logits, labels = std::move(labels), probs = std::move(probs)](Graph& g,
                                                                            std::uint32_t self) {
                const double d = g.out_grad(self).item();
                Tensor& dz = g.grad_ref(logits.id);
                for (std::size_t i = 0; i < probs.rows(); ++i) {
                  for (std::size_t j = 0; j < probs.cols(); ++j) {
                    dz(i, j) += d * (probs(i, j) - (j == labels[i] ? 1.0 : 0.0));
                  }
                }
              });
}

void Graph::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw DimensionError("backward: loss must be 1x1, got " + value(loss).shape_str());
  }
  for (auto& n : nodes_) {
    if (!n.grad.empty()) n.grad.fill(0.0);
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_ref(loss.id).data()[0] = 1.0;
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

void Graph::accumulate_param_grads(ParameterSet& grads) const {
  for (const auto& [slot, v] : param_vars_) {
    const Tensor& g = nodes_[v.id].grad;
    if (g.empty()) continue;
    auto dst = grads.at(slot).data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

}  // namespace emoalign
