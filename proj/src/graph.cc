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

#include "kgr/graph.h"

#include <cmath>
#include <sstream>

#include "kgr/errors.h"

namespace kgr {

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::add(const std::string& name, Tensor value,
                               bool trainable) {
  if (index_.count(name) != 0) {
    throw ContractError("ParameterStore: duplicate parameter '" + name + "'");
  }
  if (!value.all_finite()) {
    throw NumericError("ParameterStore: non-finite init for '" + name + "'");
  }
  params_.push_back(
      std::make_unique<Parameter>(name, std::move(value), trainable));
  Parameter* p = params_.back().get();
  index_[name] = p;
  return *p;
}

Parameter& ParameterStore::at(const std::string& name) {
  Parameter* p = find(name);
  if (p == nullptr) throw LookupError("unknown parameter '" + name + "'");
  return *p;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  const Parameter* p = find(name);
  if (p == nullptr) throw LookupError("unknown parameter '" + name + "'");
  return *p;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParameterStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->trainable) out.push_back(p.get());
  }
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

std::uint64_t ParameterStore::checksum(const std::string& prefix) const {
  return checksum_if(
      [&](const std::string& name) { return name.rfind(prefix, 0) == 0; });
}

std::uint64_t ParameterStore::checksum_if(
    const std::function<bool(const std::string&)>& keep) const {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& p : params_) {
    if (!keep(p->name())) continue;
    h = fnv1a_bytes(p->name().data(), p->name().size(), h);
    h = fnv1a(p->value.span(), h);
  }
  return h;
}

void ParameterStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& p : params_) {
    if (p->name().rfind(prefix, 0) == 0) p->trainable = trainable;
  }
}

std::size_t ParameterStore::copy_values_from(const ParameterStore& other,
                                             const std::string& prefix) {
  std::size_t copied = 0;
  for (auto& p : params_) {
    if (p->name().rfind(prefix, 0) != 0) continue;
    const Parameter* src = other.find(p->name());
    if (src == nullptr) continue;
    if (!(src->value.shape() == p->value.shape())) {
      throw ContractError("copy_values_from: shape mismatch for '" +
                          p->name() + "' " + src->value.shape().str() +
                          " vs " + p->value.shape().str());
    }
    p->value = src->value;
    ++copied;
  }
  return copied;
}

// ---------------------------------------------------------------------------
// Gradients

void Gradients::accumulate(const Parameter* p, std::span<const double> g) {
  auto it = map_.find(p);
  if (it == map_.end()) {
    map_.emplace(p, Tensor(p->value.shape(),
                           std::vector<double>(g.begin(), g.end())));
    return;
  }
  double* dst = it->second.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Gradients::merge(const Gradients& other) {
  for (const auto& [p, t] : other.map_) accumulate(p, t.span());
}

void Gradients::scale(double factor) {
  for (auto& [p, t] : map_) {
    for (double& v : t.values()) v *= factor;
  }
}

const Tensor* Gradients::find(const Parameter* p) const {
  auto it = map_.find(p);
  return it == map_.end() ? nullptr : &it->second;
}

Tensor Gradients::get(const Parameter& p) const {
  const Tensor* t = find(&p);
  return t != nullptr ? *t : Tensor(p.value.shape());
}

double Gradients::norm(std::span<Parameter* const> params) const {
  double s = 0.0;
  for (const Parameter* p : params) {
    const Tensor* t = find(p);
    if (t == nullptr) continue;
    for (double v : t->values()) s += v * v;
  }
  return std::sqrt(s);
}

bool Gradients::all_finite() const {
  for (const auto& [p, t] : map_) {
    if (!t.all_finite()) return false;
  }
  return true;
}

std::vector<std::string> Gradients::non_finite_names() const {
  std::vector<std::string> out;
  for (const auto& [p, t] : map_) {
    if (!t.all_finite()) out.push_back(p->name());
  }
  return out;
}

// ---------------------------------------------------------------------------
// ConstantTape

const Tensor& ConstantTape::next(const Tensor& computed) {
  if (mode_ == Mode::kRecord) {
    values_.push_back(computed);
    return values_.back();
  }
  if (cursor_ >= values_.size()) {
    throw ContractError("ConstantTape: replay ran past the recorded values");
  }
  const Tensor& t = values_[cursor_++];
  if (!(t.shape() == computed.shape())) {
    throw ContractError("ConstantTape: replay shape " + t.shape().str() +
                        " differs from " + computed.shape().str());
  }
  return t;
}

// ---------------------------------------------------------------------------
// Var

const Shape& Var::shape() const { return graph->shape_of(id); }
std::span<const double> Var::values() const { return graph->values_of(id); }
Tensor Var::value() const {
  auto v = values();
  return Tensor(shape(), std::vector<double>(v.begin(), v.end()));
}
double Var::item() const {
  if (shape().size() != 1) {
    throw ContractError("Var::item on non-scalar " + shape().str());
  }
  return values()[0];
}
bool Var::requires_grad() const { return graph->requires_grad_of(id); }

// ---------------------------------------------------------------------------
// Graph

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kInput: return "input";
    case OpKind::kParam: return "param";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kMatMulNT: return "matmul_nt";
    case OpKind::kAdd: return "add";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kReshape: return "reshape";
    case OpKind::kNll: return "nll";
    case OpKind::kGather: return "gather";
    case OpKind::kMaxConst: return "max_const";
    case OpKind::kStopGradient: return "stop_gradient";
    case OpKind::kStraightThrough: return "straight_through";
    case OpKind::kGelu: return "gelu";
    case OpKind::kSum: return "sum";
    case OpKind::kNegSqDist: return "neg_sq_dist";
    case OpKind::kMask: return "mask";
    case OpKind::kLog: return "log";
  }
  return "unknown";
}

namespace {

void check_finite(OpKind kind, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by op '") +
                         op_name(kind) + "'");
    }
  }
}

}  // namespace

Var Graph::add_node(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::constant(Tensor value) {
  check_finite(OpKind::kConstant, value.span());
  Node n;
  n.kind = OpKind::kConstant;
  n.shape = value.shape();
  n.own = std::move(value.values());
  return add_node(std::move(n));
}

Var Graph::input(Tensor value, bool requires_grad) {
  check_finite(OpKind::kInput, value.span());
  Node n;
  n.kind = OpKind::kInput;
  n.shape = value.shape();
  n.own = std::move(value.values());
  n.requires_grad = requires_grad;
  return add_node(std::move(n));
}

Var Graph::param(const Parameter& p) {
  auto it = param_leaves_.find(&p);
  if (it != param_leaves_.end()) return Var{this, it->second};
  check_finite(OpKind::kParam, p.value.span());
  Node n;
  n.kind = OpKind::kParam;
  n.shape = p.value.shape();
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = grad_enabled_ && p.trainable;
  Var v = add_node(std::move(n));
  param_leaves_[&p] = v.id;
  return v;
}

Tensor Graph::frozen(const Tensor& computed) {
  if (tape_ == nullptr) return computed;
  return tape_->next(computed);
}

std::span<const double> Graph::values_of(int id) const {
  const Node& n = nodes_[id];
  if (n.external != nullptr) return n.external->span();
  return n.own;
}

double* Graph::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.shape.size(), 0.0);
  return n.grad.data();
}

Var Graph::push(OpKind kind, Shape shape, std::vector<double> values,
                std::initializer_list<Var> inputs, BackwardFn backward) {
  return push_many(kind, shape, std::move(values),
                   std::span<const Var>(inputs.begin(), inputs.size()),
                   std::move(backward));
}

Var Graph::push_many(OpKind kind, Shape shape, std::vector<double> values,
                     std::span<const Var> inputs, BackwardFn backward) {
  if (values.size() != shape.size()) {
    throw ContractError(std::string("op '") + op_name(kind) +
                        "' produced a value/shape mismatch");
  }
  check_finite(kind, values);
  Node n;
  n.kind = kind;
  n.shape = shape;
  n.own = std::move(values);
  for (const Var& in : inputs) {
    if (in.graph != this) {
      throw ContractError(std::string("op '") + op_name(kind) +
                          "' mixes vars from different graphs");
    }
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return add_node(std::move(n));
}

Gradients Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward: foreign loss var");
  if (nodes_[loss.id].shape.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " +
                        nodes_[loss.id].shape.str());
  }
  for (Node& n : nodes_) {
    if (n.kind != OpKind::kParam && n.kind != OpKind::kInput) n.grad.clear();
  }
  if (double* g = grad_buffer(loss.id)) g[0] += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
  Gradients out;
  for (const auto& [p, id] : param_leaves_) {
    const Node& n = nodes_[id];
    if (!n.requires_grad) continue;
    if (n.grad.empty()) {
      out.accumulate(p, std::vector<double>(n.shape.size(), 0.0));
    } else {
      out.accumulate(p, n.grad);
    }
  }
  return out;
}

Tensor Graph::grad(Var leaf) const {
  const Node& n = nodes_[leaf.id];
  if (n.grad.empty()) return Tensor(n.shape);
  return Tensor(n.shape, n.grad);
}

}  // namespace kgr
