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

#include "kgr/tensor.h"

#include <cmath>
#include <cstring>
#include <sstream>

#include "kgr/errors.h"

namespace kgr {

std::string Shape::str() const {
  std::ostringstream os;
  os << "[" << rows << "x" << cols << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(shape), values_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
  if (values_.size() != shape_.size()) {
    throw ContractError("Tensor: " + std::to_string(values_.size()) +
                        " values for shape " + shape_.str());
  }
}

Tensor Tensor::row(std::vector<double> values) {
  Shape s{1, values.size()};
  return Tensor(s, std::move(values));
}

Tensor Tensor::normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(shape);
  for (double& v : t.values_) v = dist(rng);
  return t;
}

Tensor Tensor::row_copy(std::size_t r) const {
  if (r >= rows()) throw ContractError("Tensor::row_copy out of range");
  std::vector<double> out(values_.begin() + r * cols(),
                          values_.begin() + (r + 1) * cols());
  return Tensor::row(std::move(out));
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

std::uint64_t fnv1a_bytes(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a(std::span<const double> values, std::uint64_t seed) {
  return fnv1a_bytes(values.data(), values.size() * sizeof(double), seed);
}

Tensor random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  Tensor q = Tensor::normal({n, n}, 1.0, rng);
  // Modified Gram-Schmidt over rows.
  for (std::size_t i = 0; i < n; ++i) {
    double* qi = q.data() + i * n;
    for (std::size_t j = 0; j < i; ++j) {
      const double* qj = q.data() + j * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += qi[c] * qj[c];
      for (std::size_t c = 0; c < n; ++c) qi[c] -= dot * qj[c];
    }
    double norm = 0.0;
    for (std::size_t c = 0; c < n; ++c) norm += qi[c] * qi[c];
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("random_orthogonal: degenerate draw");
    for (std::size_t c = 0; c < n; ++c) qi[c] /= norm;
  }
  return q;
}

}  // namespace kgr
