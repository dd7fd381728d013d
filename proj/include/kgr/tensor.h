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

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace kgr {

// Every tensor in the engine is a row-major matrix; vectors are 1 x n.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor row(std::vector<double> values);
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  // Entries drawn from N(0, stddev^2).
  static Tensor normal(Shape shape, double stddev, std::mt19937_64& rng);

  const Shape& shape() const { return shape_; }
  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }
  std::size_t size() const { return values_.size(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> span() { return values_; }
  std::span<const double> span() const { return values_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double& at(std::size_t r, std::size_t c) { return values_[r * shape_.cols + c]; }
  double at(std::size_t r, std::size_t c) const {
    return values_[r * shape_.cols + c];
  }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  Tensor row_copy(std::size_t r) const;
  bool all_finite() const;
  double norm() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// 64-bit FNV-1a over the raw bytes of a range of doubles.
std::uint64_t fnv1a(std::span<const double> values,
                    std::uint64_t seed = 14695981039346656037ULL);
std::uint64_t fnv1a_bytes(const void* data, std::size_t n,
                          std::uint64_t seed = 14695981039346656037ULL);

// Square orthogonal matrix from Gram-Schmidt on a seeded Gaussian draw.
Tensor random_orthogonal(std::size_t n, std::mt19937_64& rng);

}  // namespace kgr
