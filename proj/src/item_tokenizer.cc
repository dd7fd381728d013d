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

#include "kgr/item_tokenizer.h"

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>

#include "json.hpp"
#include "kgr/errors.h"

namespace kgr {
namespace {

double sq_dist(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<Item> read_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("catalog not found: " + path);
  std::vector<Item> items;
  std::string line;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    Item it;
    it.id = j.at("item_id").get<std::string>();
    it.content = j.at("content").get<std::vector<double>>();
    it.text_tokens = j.at("text_tokens").get<std::vector<int>>();
    if (items.empty()) dim = it.content.size();
    if (it.content.size() != dim) {
      throw ContractError("catalog item " + it.id + " has content dimension " +
                          std::to_string(it.content.size()) + ", expected " +
                          std::to_string(dim));
    }
    items.push_back(std::move(it));
  }
  return items;
}

void write_catalog(const std::string& path, const std::vector<Item>& items) {
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write " + path);
  for (const Item& it : items) {
    nlohmann::json j;
    j["item_id"] = it.id;
    j["content"] = it.content;
    j["text_tokens"] = it.text_tokens;
    out << j.dump() << '\n';
  }
}

Tensor content_matrix(const std::vector<Item>& items) {
  if (items.empty()) return Tensor();
  const std::size_t d = items[0].content.size();
  Tensor x({items.size(), d});
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].content.size() != d) {
      throw ContractError("content_matrix: ragged content at " + items[i].id);
    }
    std::copy(items[i].content.begin(), items[i].content.end(),
              x.data() + i * d);
  }
  return x;
}

std::size_t nearest_row(const Tensor& book, const double* v, double* distance) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < book.rows(); ++j) {
    const double d = sq_dist(book.data() + j * book.cols(), v, book.cols());
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  if (distance != nullptr) *distance = best_d;
  return best;
}

Tensor kmeans(const Tensor& x, std::size_t m, std::uint64_t seed,
              const KMeansOptions& opts) {
  const std::size_t n = x.rows(), d = x.cols();
  if (m == 0 || n < m) {
    throw ConfigError("kmeans: need at least m=" + std::to_string(m) +
                      " rows, got " + std::to_string(n));
  }
  std::mt19937_64 rng(seed);
  Tensor c({m, d});
  auto set_centre = [&](std::size_t k, std::size_t row) {
    std::copy(x.data() + row * d, x.data() + (row + 1) * d, c.data() + k * d);
  };

  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t k = 0; k < m; ++k) {
    set_centre(k, pick);
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      min_d[i] = std::min(min_d[i], sq_dist(x.data() + i * d, c.data() + k * d, d));
      if (min_d[i] > far_d) {
        far_d = min_d[i];
        far = i;
      }
    }
    pick = far;
  }

  std::vector<std::size_t> assign(n, m);
  std::vector<double> dist(n);
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = nearest_row(c, x.data() + i * d, &dist[i]);
      changed |= a != assign[i];
      assign[i] = a;
      inertia += dist[i];
    }
    if (opts.inertia_trace != nullptr) opts.inertia_trace->push_back(inertia);
    if (!changed) break;

    Tensor sum({m, d});
    std::vector<std::size_t> count(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[assign[i]];
      for (std::size_t j = 0; j < d; ++j) sum.at(assign[i], j) += x.at(i, j);
    }
    for (std::size_t k = 0; k < m; ++k) {
      if (count[k] > 0) {
        for (std::size_t j = 0; j < d; ++j) c.at(k, j) = sum.at(k, j) / count[k];
        continue;
      }
      // Empty cluster: move it onto the worst-served row.
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i) {
        if (dist[i] > dist[far]) far = i;
      }
      set_centre(k, far);
      dist[far] = 0.0;
    }
  }
  return c;
}

ItemCodebooks fit_codebooks(const Tensor& x, std::size_t levels, std::size_t m,
                            std::uint64_t seed, const KMeansOptions& opts) {
  if (levels == 0 || x.cols() % levels != 0) {
    throw ConfigError("fit_codebooks: content dimension " +
                      std::to_string(x.cols()) + " not divisible by L=" +
                      std::to_string(levels));
  }
  const std::size_t w = x.cols() / levels;
  ItemCodebooks out;
  out.dim = x.cols();
  for (std::size_t l = 0; l < levels; ++l) {
    Tensor slice({x.rows(), w});
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < w; ++j) slice.at(i, j) = x.at(i, l * w + j);
    }
    out.slice_begin.push_back(l * w);
    out.books.push_back(kmeans(slice, m, seed + 1000003ULL * l, opts));
  }
  return out;
}

std::vector<int> SidTable::sequence(std::size_t i) const {
  std::vector<int> s = sids.at(i).tokens;
  if (has_suffix) s.push_back(sids[i].disamb);
  return s;
}

SidTable encode_catalog(const Tensor& x, const ItemCodebooks& books) {
  if (x.cols() != books.dim) {
    throw ContractError("encode_catalog: content dimension " +
                        std::to_string(x.cols()) + " vs codebooks " +
                        std::to_string(books.dim));
  }
  SidTable t;
  std::map<std::vector<int>, int> seen;
  int largest = 1;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    SemanticId sid;
    for (std::size_t l = 0; l < books.levels(); ++l) {
      const double* v = x.data() + i * x.cols() + books.slice_begin[l];
      sid.tokens.push_back(static_cast<int>(nearest_row(books.books[l], v)));
    }
    sid.disamb = seen[sid.tokens]++;
    largest = std::max(largest, sid.disamb + 1);
    t.sids.push_back(std::move(sid));
  }
  for (const Tensor& b : books.books) t.level_sizes.push_back(b.rows());
  t.has_suffix = largest > 1;
  if (t.has_suffix) t.level_sizes.push_back(static_cast<std::size_t>(largest));
  return t;
}

void write_sid_csv(const std::string& path, const std::vector<Item>& items,
                   const SidTable& table) {
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write " + path);
  const std::size_t levels = table.has_suffix ? table.length() - 1 : table.length();
  out << "item_id";
  for (std::size_t l = 0; l < levels; ++l) out << ",token_" << l;
  out << ",disamb\n";
  for (std::size_t i = 0; i < items.size(); ++i) {
    out << items[i].id;
    for (int tok : table.sids[i].tokens) out << ',' << tok;
    out << ',' << table.sids[i].disamb << '\n';
  }
}

void write_codebooks(const std::string& path, const ItemCodebooks& books) {
  nlohmann::json j;
  j["dim"] = books.dim;
  j["slice_begin"] = books.slice_begin;
  j["books"] = nlohmann::json::array();
  for (const Tensor& b : books.books) {
    j["books"].push_back({{"rows", b.rows()}, {"cols", b.cols()}, {"values", b.values()}});
  }
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write " + path);
  out << j.dump() << '\n';
}

ItemCodebooks read_codebooks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing codebooks " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("codebooks " + path + ": " + e.what());
  }
  ItemCodebooks books;
  books.dim = j.at("dim");
  books.slice_begin = j.at("slice_begin").get<std::vector<std::size_t>>();
  for (const auto& b : j.at("books")) {
    books.books.emplace_back(Shape{b.at("rows"), b.at("cols")},
                             b.at("values").get<std::vector<double>>());
  }
  if (books.books.size() != books.slice_begin.size()) {
    throw ContractError("codebooks " + path + ": level count mismatch");
  }
  return books;
}

PrefixTrie::PrefixTrie(const SidTable& table) : nodes_(1) {
  depth_ = table.length();
  for (std::size_t i = 0; i < table.sids.size(); ++i) {
    int node = 0;
    for (int tok : table.sequence(i)) {
      auto it = nodes_[node].children.find(tok);
      if (it == nodes_[node].children.end()) {
        nodes_.push_back({});
        const int id = static_cast<int>(nodes_.size()) - 1;
        nodes_[node].children.emplace(tok, id);
        node = id;
      } else {
        node = it->second;
      }
    }
    if (nodes_[node].item >= 0) {
      throw ContractError("PrefixTrie: duplicate SID for item " +
                          std::to_string(i));
    }
    nodes_[node].item = static_cast<int>(i);
  }
}

int PrefixTrie::child(int node, int token) const {
  const auto& ch = nodes_[node].children;
  auto it = ch.find(token);
  return it == ch.end() ? -1 : it->second;
}

int PrefixTrie::find(const std::vector<int>& sequence) const {
  if (sequence.size() != depth_) return -1;
  int node = 0;
  for (int tok : sequence) {
    node = child(node, tok);
    if (node < 0) return -1;
  }
  return nodes_[node].item;
}

}  // namespace kgr
