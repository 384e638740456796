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


#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "emoalign/tensor.hpp"

namespace emoalign {

// Ordered collection of named tensors. Names are hierarchical, dot
// separated (encoder.layers.0.attention.query). Insertion order is the
// iteration order and the checkpoint order.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);
  void set(std::string_view name, Tensor value);  // add or overwrite
  bool contains(std::string_view name) const;
  std::size_t slot(std::string_view name) const;

  Tensor& at(std::string_view name) { return values_[slot(name)]; }
  const Tensor& at(std::string_view name) const { return values_[slot(name)]; }
  Tensor& at(std::size_t slot) { return values_[slot]; }
  const Tensor& at(std::size_t slot) const { return values_[slot]; }
  const std::string& name(std::size_t slot) const { return names_[slot]; }

  std::size_t size() const noexcept { return values_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  // Removes every tensor whose name starts with prefix. Slots shift.
  void erase_prefix(std::string_view prefix);

  ParameterSet zeros_like() const;
  std::size_t num_scalars() const;
  bool all_finite() const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  void reindex();

  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Handle to a node in a Graph.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const noexcept { return id != UINT32_MAX; }
};

// Tape-based reverse-mode differentiation over rank-2 tensors.
//
// A Graph is built for one forward evaluation, then backward() walks the
// tape in reverse. Parameters are pulled in by name from a ParameterSet
// and their gradients are collected with accumulate_param_grads(). Each
// op validates shapes (DimensionError) and checks its output for
// non-finite values (NumericError naming the op).
class Graph {
 public:
  explicit Graph(const ParameterSet* params = nullptr) : params_(params) {}

  Var constant(Tensor value);
  Var variable(Tensor value);  // differentiable leaf not tied to a parameter
  Var param(std::string_view name);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  // Gradient of the last backward() target w.r.t. v; zeros if v is unreachable.
  Tensor grad(Var v) const;
  std::size_t num_nodes() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);     // (m x k)(k x n)
  Var matmul_nt(Var a, Var b);  // (m x k)(n x k)^T
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
  Var mul(Var a, Var b);        // elementwise
  Var scale(Var a, double s);
  Var tanh(Var a);
  Var gelu(Var a);
  // Row-wise softmax. When valid_cols is non-empty, columns flagged false
  // get probability exactly zero and take no part in the normalization.
  Var softmax_rows(Var a, const std::vector<bool>& valid_cols = {});
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  // x: C_in x L, weight: C_out x (C_in * kernel), bias: C_out x 1.
  // x is channels x time; weight is out x (in * kernel), bias out x 1.
  Var conv1d(Var x, Var weight, Var bias, std::size_t kernel, std::size_t stride);
  Var embedding(Var table, std::vector<std::size_t> indices);
  Var select_rows(Var a, std::vector<std::size_t> rows);
  Var replace_rows(Var a, std::vector<std::size_t> rows, Var row);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var concat_cols(std::span<const Var> parts);
  Var sum(Var a);
  Var mean(Var a);
  // Summed (not averaged) softmax cross-entropy over rows; 1 x 1.
  Var cross_entropy(Var logits, std::vector<std::size_t> labels);

  void backward(Var loss);
  void accumulate_param_grads(ParameterSet& grads) const;

 private:
  using BackwardFn = std::function<void(Graph&, std::uint32_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::int64_t param_slot = -1;
    const char* op = "";
    BackwardFn backward;
  };

  Var push(const char* op, Tensor value, bool requires_grad, BackwardFn fn);
  Tensor& grad_ref(std::uint32_t id);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  const Tensor& out_grad(std::uint32_t self) const { return nodes_[self].grad; }

  const ParameterSet* params_;
  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, Var> param_vars_;
};

namespace kernels {
// C (+)= A B, with A m x k, B k x n.
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate);
// C (+)= A B^T, with A m x k, B n x k.
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate);
// C (+)= A^T B, with A k x m, B k x n.
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate);
}  // namespace kernels

}  // namespace emoalign
