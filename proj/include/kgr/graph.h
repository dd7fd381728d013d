// Copyright 2026 The KGR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Tape-based reverse-mode automatic differentiation.
//
// A Graph is rebuilt for every forward pass. Parameters live outside the
// graph in a ParameterStore; the graph references their values without
// copying and reports gradients through a Gradients map, so several graphs
// over the same read-only parameters can run on different threads and have
// their gradient maps summed afterwards.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgr/tensor.h"

namespace kgr {

class Parameter {
 public:
  Parameter(std::string name, Tensor value, bool trainable)
      : value(std::move(value)), trainable(trainable), name_(std::move(name)) {}

  const std::string& name() const { return name_; }

  Tensor value;
  bool trainable;

 private:
  std::string name_;
};

// Named parameters in insertion order. Addresses are stable.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(const std::string& name, Tensor value, bool trainable = true);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> trainable();
  std::size_t scalar_count() const;

  // Checksum over names and values of every parameter whose name starts with
  // |prefix| (all parameters for an empty prefix).
  std::uint64_t checksum(const std::string& prefix = "") const;
  std::uint64_t checksum_if(
      const std::function<bool(const std::string&)>& keep) const;
  void set_trainable(const std::string& prefix, bool trainable);
  // Copies values for every name present in both stores; returns the count.
  std::size_t copy_values_from(const ParameterStore& other,
                               const std::string& prefix = "");

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> index_;
};

// Gradient map keyed by parameter identity.
class Gradients {
 public:
  void accumulate(const Parameter* p, std::span<const double> g);
  void merge(const Gradients& other);
  void scale(double factor);
  const Tensor* find(const Parameter* p) const;
  // Gradient for |p|, zero-filled when |p| was unreachable.
  Tensor get(const Parameter& p) const;
  bool empty() const { return map_.empty(); }
  std::size_t size() const { return map_.size(); }
  // L2 norm over the listed parameters, summed in list order.
  double norm(std::span<Parameter* const> params) const;
  bool all_finite() const;
  std::vector<std::string> non_finite_names() const;

 private:
  std::unordered_map<const Parameter*, Tensor> map_;
};

// Records values that must be treated as constants (stop-gradient outputs,
// hard argmax selections) so that later forward passes can replay them. This
// turns "sg[.] is a constant" into something finite differences can check.
class ConstantTape {
 public:
  enum class Mode { kRecord, kReplay };

  explicit ConstantTape(Mode mode = Mode::kRecord) : mode_(mode) {}
  Mode mode() const { return mode_; }
  void set_mode(Mode mode) {
    mode_ = mode;
    cursor_ = 0;
  }
  std::size_t size() const { return values_.size(); }
  const Tensor& next(const Tensor& computed);

 private:
  Mode mode_;
  std::vector<Tensor> values_;
  std::size_t cursor_ = 0;
};

enum class OpKind {
  kConstant,
  kInput,
  kParam,
  kMatMul,
  kMatMulNT,
  kAdd,
  kAddRow,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kSoftmax,
  kLogSoftmax,
  kLayerNorm,
  kEmbedding,
  kMeanRows,
  kConcatRows,
  kConcatCols,
  kSliceRows,
  kSliceCols,
  kReshape,
  kNll,
  kGather,
  kMaxConst,
  kStopGradient,
  kStraightThrough,
  kGelu,
  kSum,
  kNegSqDist,
  kMask,
  kLog,
};

const char* op_name(OpKind kind);

class Graph;

// Lightweight handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Shape& shape() const;
  std::size_t rows() const { return shape().rows; }
  std::size_t cols() const { return shape().cols; }
  std::span<const double> values() const;
  Tensor value() const;
  double item() const;
  bool requires_grad() const;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad);
  // The same Parameter always maps to the same leaf within one graph.
  Var param(const Parameter& p);

  // When disabled, parameters enter as non-differentiable leaves.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  void set_constant_tape(ConstantTape* tape) { tape_ = tape; }
  bool replaying() const {
    return tape_ != nullptr && tape_->mode() == ConstantTape::Mode::kReplay;
  }
  // Identity in normal and record mode; returns the recorded value in replay.
  Tensor frozen(const Tensor& computed);

  // Seeds d(loss)/d(loss) = 1 and propagates. Intermediate gradients are
  // rebuilt on every call; leaf gradients accumulate across calls.
  Gradients backward(Var loss);
  // Accumulated gradient of a leaf created with input(..., true).
  Tensor grad(Var leaf) const;

  std::size_t node_count() const { return nodes_.size(); }
  OpKind kind(Var v) const { return nodes_[v.id].kind; }

  // Engine internals used by op implementations.
  Var push(OpKind kind, Shape shape, std::vector<double> values,
           std::initializer_list<Var> inputs, BackwardFn backward);
  Var push_many(OpKind kind, Shape shape, std::vector<double> values,
                std::span<const Var> inputs, BackwardFn backward);
  const Shape& shape_of(int id) const { return nodes_[id].shape; }
  std::span<const double> values_of(int id) const;
  bool requires_grad_of(int id) const { return nodes_[id].requires_grad; }
  std::span<const double> grad_of(int id) const { return nodes_[id].grad; }
  // Zero-initialized gradient buffer, or nullptr when |id| needs no gradient.
  double* grad_buffer(int id);

 private:
  struct Node {
    OpKind kind = OpKind::kConstant;
    Shape shape;
    std::vector<double> own;
    const Tensor* external = nullptr;
    std::vector<double> grad;
    bool requires_grad = false;
    const Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var add_node(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_leaves_;
  ConstantTape* tape_ = nullptr;
  bool grad_enabled_ = true;
};

}  // namespace kgr
