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

// Item-side semantic IDs: product-quantized codebooks, catalog encoding with
// collision suffixes, and a prefix trie over the valid token sequences.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kgr/tensor.h"

namespace kgr {

// One catalog entry as stored in the catalog JSON Lines file.
struct Item {
  std::string id;
  std::vector<double> content;
  std::vector<int> text_tokens;
};

std::vector<Item> read_catalog(const std::string& path);
void write_catalog(const std::string& path, const std::vector<Item>& items);
// Stacks item content vectors into an N x D matrix.
Tensor content_matrix(const std::vector<Item>& items);

struct ItemCodebooks {
  std::vector<Tensor> books;  // book l is m x slice width
  std::vector<std::size_t> slice_begin;
  std::size_t dim = 0;

  std::size_t levels() const { return books.size(); }
  std::size_t slice_width(std::size_t level) const {
    return books[level].cols();
  }
};

struct KMeansOptions {
  int max_iters = 50;
  // Optional sink for the total within-cluster squared distance after every
  // assignment step.
  std::vector<double>* inertia_trace = nullptr;
};

// Seeded k-means with farthest-point initialisation. The first centre is a
// random row, each further centre is the row farthest from all chosen centres
// (lowest index on ties). A cluster that loses all members is re-seeded at the
// row farthest from its assigned centre.
Tensor kmeans(const Tensor& x, std::size_t m, std::uint64_t seed,
              const KMeansOptions& opts = {});

// Independent k-means in each of |levels| contiguous content slices.
ItemCodebooks fit_codebooks(const Tensor& x, std::size_t levels, std::size_t m,
                            std::uint64_t seed, const KMeansOptions& opts = {});

// Nearest row of |book| to |v| by squared distance; lowest index on ties.
std::size_t nearest_row(const Tensor& book, const double* v,
                        double* distance = nullptr);

struct SemanticId {
  std::vector<int> tokens;
  int disamb = 0;

  bool operator==(const SemanticId&) const = default;
};

// Encoded catalog. When any two items share all level tokens the disamb
// suffix becomes an extra decoding level whose vocabulary is the largest
// collision group.
struct SidTable {
  std::vector<SemanticId> sids;      // by item index
  std::vector<std::size_t> level_sizes;  // includes the suffix level if used
  bool has_suffix = false;

  std::size_t length() const { return level_sizes.size(); }
  // Token sequence the decoder generates for item |i|.
  std::vector<int> sequence(std::size_t i) const;
};

SidTable encode_catalog(const Tensor& x, const ItemCodebooks& books);

void write_sid_csv(const std::string& path, const std::vector<Item>& items,
                   const SidTable& table);

// Codebooks as JSON (dim, slice offsets, row-major books). Values are written
// with full precision so re-encoding reproduces the table exactly.
void write_codebooks(const std::string& path, const ItemCodebooks& books);
ItemCodebooks read_codebooks(const std::string& path);

// Trie over catalog token sequences. Node 0 is the root.
class PrefixTrie {
 public:
  explicit PrefixTrie(const SidTable& table);

  std::size_t depth() const { return depth_; }
  std::size_t node_count() const { return nodes_.size(); }
  // Child node reached by |token| from |node|, or -1.
  int child(int node, int token) const;
  // (token, child) pairs in ascending token order.
  const std::map<int, int>& children(int node) const {
    return nodes_[node].children;
  }
  // Item index stored at a leaf, -1 for interior nodes.
  int item_at(int node) const { return nodes_[node].item; }
  // Item index for a full sequence, -1 if it is not in the catalog.
  int find(const std::vector<int>& sequence) const;
  bool contains(const std::vector<int>& sequence) const {
    return find(sequence) >= 0;
  }

 private:
  struct Node {
    std::map<int, int> children;
    int item = -1;
  };
  std::vector<Node> nodes_;
  std::size_t depth_ = 0;
};

}  // namespace kgr
