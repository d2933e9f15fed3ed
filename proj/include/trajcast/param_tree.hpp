#pragma once

#include <bit>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "trajcast/graph.hpp"
#include "trajcast/tensor.hpp"

namespace trajcast {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian raw values");

// Named parameter collection. Iteration order is lexicographic, which fixes
// checkpoint layout and optimizer traversal order.
template <typename T>
class ParamTree {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  void insert(const std::string& name, Tensor<T> t) {
    if (entries_.count(name))
      throw ConsistencyError("duplicate parameter name: " + name);
    t.requires_grad = true;
    entries_.emplace(name, std::move(t));
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConsistencyError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConsistencyError("unknown parameter: " + name);
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }

  std::int64_t total_values() const {
    std::int64_t n = 0;
    for (const auto& [k, v] : entries_) n += v.numel();
    return n;
  }

  typename Map::iterator begin() { return entries_.begin(); }
  typename Map::iterator end() { return entries_.end(); }
  typename Map::const_iterator begin() const { return entries_.begin(); }
  typename Map::const_iterator end() const { return entries_.end(); }

  // Zero-filled tree with the same names/shapes.
  ParamTree zeros_like() const {
    ParamTree out;
    for (const auto& [k, v] : entries_) out.insert(k, Tensor<T>::zeros(v.shape));
    return out;
  }

 private:
  Map entries_;
};

// Lifted ParamTree on a graph: name -> Var.
template <typename T>
struct GraphParams {
  std::map<std::string, Var<T>> vars;

  const Var<T>& operator()(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw ConsistencyError("unknown parameter: " + name);
    return it->second;
  }
};

template <typename T>
GraphParams<T> lift(Graph<T>& g, const ParamTree<T>& tree) {
  GraphParams<T> out;
  for (const auto& [name, t] : tree) out.vars.emplace(name, g.leaf(t));
  return out;
}

// Reads gradients of lifted params back out, in tree order.
template <typename T>
ParamTree<T> collect_grads(Graph<T>& g, const GraphParams<T>& gp) {
  ParamTree<T> grads;
  for (const auto& [name, var] : gp.vars) {
    grads.insert(name, g.has_grad(var.id) ? g.grad(var.id)
                                          : Tensor<T>::zeros(var.val().shape));
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Checkpoint: `<stem>.manifest` (text, `name shape dtype offset` per line)
// plus `<stem>.bin` (raw little-endian row-major values).

namespace detail {
template <typename T>
constexpr const char* dtype_name() {
  if constexpr (sizeof(T) == 4) return "f32";
  else return "f64";
}

inline std::string dims_token(const std::vector<int>& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  return os.str();
}

inline std::vector<int> parse_dims(const std::string& tok) {
  std::vector<int> dims;
  std::size_t pos = 0;
  while (pos < tok.size()) {
    std::size_t next = tok.find('x', pos);
    if (next == std::string::npos) next = tok.size();
    dims.push_back(std::stoi(tok.substr(pos, next - pos)));
    pos = next + 1;
  }
  return dims;
}
}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& stem, const ParamTree<T>& tree) {
  std::ofstream mf(stem + ".manifest");
  if (!mf) throw IoError("cannot write " + stem + ".manifest");
  std::ofstream bf(stem + ".bin", std::ios::binary);
  if (!bf) throw IoError("cannot write " + stem + ".bin");
  std::int64_t offset = 0;
  for (const auto& [name, t] : tree) {
    mf << name << " " << detail::dims_token(t.shape) << " "
       << detail::dtype_name<T>() << " " << offset << "\n";
    bf.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    offset += static_cast<std::int64_t>(t.data.size() * sizeof(T));
  }
  if (!mf || !bf) throw IoError("short write saving checkpoint " + stem);
}

template <typename T>
ParamTree<T> load_checkpoint(const std::string& stem) {
  std::ifstream mf(stem + ".manifest");
  if (!mf) throw IoError("cannot open " + stem + ".manifest");
  std::ifstream bf(stem + ".bin", std::ios::binary | std::ios::ate);
  if (!bf) throw IoError("cannot open " + stem + ".bin");
  const std::int64_t blob_size = static_cast<std::int64_t>(bf.tellg());
  bf.seekg(0);

  ParamTree<T> tree;
  std::string line;
  std::int64_t expected = 0;
  int lineno = 0;
  while (std::getline(mf, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string name, dims, dtype;
    std::int64_t offset = 0;
    if (!(is >> name >> dims >> dtype >> offset))
      throw ParseError(stem + ".manifest:" + std::to_string(lineno) + ": malformed line");
    if (dtype != detail::dtype_name<T>())
      throw ConsistencyError("checkpoint dtype " + dtype + " does not match requested " +
                             std::string(detail::dtype_name<T>()) + " for " + name);
    Tensor<T> t(detail::parse_dims(dims));
    bf.seekg(offset);
    bf.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (!bf)
      throw IoError("checkpoint blob too short reading " + name + " at offset " +
                    std::to_string(offset));
    expected += static_cast<std::int64_t>(t.data.size() * sizeof(T));
    tree.insert(name, std::move(t));
  }
  if (expected != blob_size)
    throw ConsistencyError("checkpoint blob size " + std::to_string(blob_size) +
                           " != manifest total " + std::to_string(expected));
  return tree;
}

}  // namespace trajcast
