#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "trajcast/graph.hpp"
#include "trajcast/rng.hpp"

namespace trajcast {
namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

template <typename T>
inline void same_graph(const Var<T>& a, const Var<T>& b) {
  if (a.g != b.g) throw ConsistencyError("vars belong to different graphs");
}

// Shapes padded on the left to rank 4; strides are 0 along broadcast dims.
// Broadcasting is restricted to dims that are equal or 1 after alignment.
struct Bcast4 {
  std::array<int, 4> od{1, 1, 1, 1};
  std::array<std::int64_t, 4> sa{0, 0, 0, 0}, sb{0, 0, 0, 0};
  std::vector<int> out_shape;
};

inline Bcast4 broadcast4(const std::vector<int>& a, const std::vector<int>& b,
                         const char* op) {
  require(a.size() <= 4 && b.size() <= 4,
          std::string(op) + ": rank > 4 unsupported");
  Bcast4 r;
  std::array<int, 4> da{1, 1, 1, 1}, db{1, 1, 1, 1};
  for (std::size_t i = 0; i < a.size(); ++i) da[4 - a.size() + i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) db[4 - b.size() + i] = b[i];
  for (int i = 0; i < 4; ++i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1)
      throw DimensionError(std::string(op) + ": incompatible shapes " +
                           shape_str(a) + " vs " + shape_str(b));
    r.od[i] = std::max(da[i], db[i]);
  }
  std::int64_t acc = 1;
  for (int i = 3; i >= 0; --i) {
    r.sa[i] = (da[i] == 1) ? 0 : acc;
    acc *= da[i];
  }
  acc = 1;
  for (int i = 3; i >= 0; --i) {
    r.sb[i] = (db[i] == 1) ? 0 : acc;
    acc *= db[i];
  }
  std::size_t out_rank = std::max(a.size(), b.size());
  r.out_shape.assign(r.od.begin() + (4 - out_rank), r.od.end());
  if (r.out_shape.empty()) r.out_shape = {1};
  return r;
}

// y = f(a_broadcast, b_broadcast) elementwise
template <typename T, typename F>
Tensor<T> bcast_apply(const Tensor<T>& a, const Tensor<T>& b, const Bcast4& bc, F f) {
  Tensor<T> out(bc.out_shape);
  std::int64_t idx = 0;
  for (int i0 = 0; i0 < bc.od[0]; ++i0)
    for (int i1 = 0; i1 < bc.od[1]; ++i1)
      for (int i2 = 0; i2 < bc.od[2]; ++i2) {
        std::int64_t oa = i0 * bc.sa[0] + i1 * bc.sa[1] + i2 * bc.sa[2];
        std::int64_t ob = i0 * bc.sb[0] + i1 * bc.sb[1] + i2 * bc.sb[2];
        for (int i3 = 0; i3 < bc.od[3]; ++i3)
          out.data[static_cast<std::size_t>(idx++)] =
              f(a.data[static_cast<std::size_t>(oa + i3 * bc.sa[3])],
                b.data[static_cast<std::size_t>(ob + i3 * bc.sb[3])]);
      }
  return out;
}

// ga[...] += g(out_grad, a, b) with reduction over broadcast dims
template <typename T, typename F>
void bcast_accum(Tensor<T>& target, bool into_a, const Tensor<T>& a,
                 const Tensor<T>& b, const Tensor<T>& og, const Bcast4& bc, F f) {
  std::int64_t idx = 0;
  const auto& s = into_a ? bc.sa : bc.sb;
  for (int i0 = 0; i0 < bc.od[0]; ++i0)
    for (int i1 = 0; i1 < bc.od[1]; ++i1)
      for (int i2 = 0; i2 < bc.od[2]; ++i2) {
        std::int64_t oa = i0 * bc.sa[0] + i1 * bc.sa[1] + i2 * bc.sa[2];
        std::int64_t ob = i0 * bc.sb[0] + i1 * bc.sb[1] + i2 * bc.sb[2];
        std::int64_t ot = i0 * s[0] + i1 * s[1] + i2 * s[2];
        for (int i3 = 0; i3 < bc.od[3]; ++i3) {
          target.data[static_cast<std::size_t>(ot + i3 * s[3])] +=
              f(og.data[static_cast<std::size_t>(idx)],
                a.data[static_cast<std::size_t>(oa + i3 * bc.sa[3])],
                b.data[static_cast<std::size_t>(ob + i3 * bc.sb[3])]);
          ++idx;
        }
      }
}

// c += a[m,k] * b[k,n]
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::int64_t>(i) * k;
    T* crow = c + static_cast<std::int64_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const T av = arow[l];
      const T* brow = b + static_cast<std::int64_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c += a[m,k] * b[n,k]^T
template <typename T>
void mm_nt(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::int64_t>(i) * k;
    T* crow = c + static_cast<std::int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::int64_t>(j) * k;
      T acc = T(0);
      for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

// c += a[k,m]^T * b[k,n]
template <typename T>
void mm_tn(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int l = 0; l < k; ++l) {
    const T* arow = a + static_cast<std::int64_t>(l) * m;
    const T* brow = b + static_cast<std::int64_t>(l) * n;
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + static_cast<std::int64_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
inline T softplus_scalar(T x) {
  if (x > T(30)) return x;
  if (x < T(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_graph(a, b);
  Graph<T>& g = *a.g;
  auto bc = detail::broadcast4(a.shape(), b.shape(), "add");
  Tensor<T> out = detail::bcast_apply(g.val(a.id), g.val(b.id), bc,
                                      [](T x, T y) { return x + y; });
  int aid = a.id, bid = b.id;
  Var<T> o = g.emit("add", {aid, bid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [aid, bid, bc, oid = o.id](Graph<T>& gr) {
      const Tensor<T>& og = gr.grad(oid);
      if (gr.needs_grad(aid))
        detail::bcast_accum(gr.grad(aid), true, gr.val(aid), gr.val(bid), og, bc,
                            [](T go, T, T) { return go; });
      if (gr.needs_grad(bid))
        detail::bcast_accum(gr.grad(bid), false, gr.val(aid), gr.val(bid), og, bc,
                            [](T go, T, T) { return go; });
    });
  }
  return o;
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::same_graph(a, b);
  Graph<T>& g = *a.g;
  auto bc = detail::broadcast4(a.shape(), b.shape(), "sub");
  Tensor<T> out = detail::bcast_apply(g.val(a.id), g.val(b.id), bc,
                                      [](T x, T y) { return x - y; });
  int aid = a.id, bid = b.id;
  Var<T> o = g.emit("sub", {aid, bid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [aid, bid, bc, oid = o.id](Graph<T>& gr) {
      const Tensor<T>& og = gr.grad(oid);
      if (gr.needs_grad(aid))
        detail::bcast_accum(gr.grad(aid), true, gr.val(aid), gr.val(bid), og, bc,
                            [](T go, T, T) { return go; });
      if (gr.needs_grad(bid))
        detail::bcast_accum(gr.grad(bid), false, gr.val(aid), gr.val(bid), og, bc,
                            [](T go, T, T) { return -go; });
    });
  }
  return o;
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_graph(a, b);
  Graph<T>& g = *a.g;
  auto bc = detail::broadcast4(a.shape(), b.shape(), "mul");
  Tensor<T> out = detail::bcast_apply(g.val(a.id), g.val(b.id), bc,
                                      [](T x, T y) { return x * y; });
  int aid = a.id, bid = b.id;
  Var<T> o = g.emit("mul", {aid, bid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [aid, bid, bc, oid = o.id](Graph<T>& gr) {
      const Tensor<T>& og = gr.grad(oid);
      if (gr.needs_grad(aid))
        detail::bcast_accum(gr.grad(aid), true, gr.val(aid), gr.val(bid), og, bc,
                            [](T go, T, T y) { return go * y; });
      if (gr.needs_grad(bid))
        detail::bcast_accum(gr.grad(bid), false, gr.val(aid), gr.val(bid), og, bc,
                            [](T go, T x, T) { return go * x; });
    });
  }
  return o;
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  detail::same_graph(a, b);
  Graph<T>& g = *a.g;
  auto bc = detail::broadcast4(a.shape(), b.shape(), "div");
  Tensor<T> out = detail::bcast_apply(g.val(a.id), g.val(b.id), bc,
                                      [](T x, T y) { return x / y; });
  int aid = a.id, bid = b.id;
  Var<T> o = g.emit("div", {aid, bid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [aid, bid, bc, oid = o.id](Graph<T>& gr) {
      const Tensor<T>& og = gr.grad(oid);
      if (gr.needs_grad(aid))
        detail::bcast_accum(gr.grad(aid), true, gr.val(aid), gr.val(bid), og, bc,
                            [](T go, T, T y) { return go / y; });
      if (gr.needs_grad(bid))
        detail::bcast_accum(gr.grad(bid), false, gr.val(aid), gr.val(bid), og, bc,
                            [](T go, T x, T y) { return -go * x / (y * y); });
    });
  }
  return o;
}

// ---------------------------------------------------------------------------
// unary ops

template <typename T, typename FwdF, typename BwdF>
Var<T> unary_op(const char* name, Var<T> x, FwdF f, BwdF dfdx_times_g) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  Tensor<T> out;
  out.shape = xv.shape;
  out.data.resize(xv.data.size());
  for (std::size_t i = 0; i < xv.data.size(); ++i) out.data[i] = f(xv.data[i]);
  int xid = x.id;
  Var<T> o = g.emit(name, {xid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [xid, oid = o.id, dfdx_times_g](Graph<T>& gr) {
      if (!gr.needs_grad(xid)) return;
      const Tensor<T>& og = gr.grad(oid);
      const Tensor<T>& xv2 = gr.val(xid);
      const Tensor<T>& yv = gr.val(oid);
      Tensor<T>& gx = gr.grad(xid);
      for (std::size_t i = 0; i < og.data.size(); ++i)
        gx.data[i] += dfdx_times_g(og.data[i], xv2.data[i], yv.data[i]);
    });
  }
  return o;
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary_op<T>("sigmoid", x, [](T v) { return detail::sigmoid_scalar(v); },
                     [](T go, T, T y) { return go * y * (T(1) - y); });
}

template <typename T>
Var<T> tanh_op(Var<T> x) {
  return unary_op<T>("tanh", x, [](T v) { return std::tanh(v); },
                     [](T go, T, T y) { return go * (T(1) - y * y); });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary_op<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                     [](T go, T v, T) { return v > T(0) ? go : T(0); });
}

template <typename T>
Var<T> exp_op(Var<T> x) {
  return unary_op<T>("exp", x, [](T v) { return std::exp(v); },
                     [](T go, T, T y) { return go * y; });
}

template <typename T>
Var<T> log_op(Var<T> x) {
  return unary_op<T>("log", x, [](T v) { return std::log(v); },
                     [](T go, T v, T) { return go / v; });
}

template <typename T>
Var<T> softplus(Var<T> x) {
  return unary_op<T>("softplus", x, [](T v) { return detail::softplus_scalar(v); },
                     [](T go, T v, T) { return go * detail::sigmoid_scalar(v); });
}

template <typename T>
Var<T> abs_op(Var<T> x) {
  return unary_op<T>("abs", x, [](T v) { return std::abs(v); },
                     [](T go, T v, T) {
                       return v > T(0) ? go : (v < T(0) ? -go : T(0));
                     });
}

template <typename T>
Var<T> clamp_min(Var<T> x, T floor) {
  return unary_op<T>("clamp_min", x,
                     [floor](T v) { return v < floor ? floor : v; },
                     [floor](T go, T v, T) { return v < floor ? T(0) : go; });
}

template <typename T>
Var<T> scale(Var<T> x, T c) {
  return unary_op<T>("scale", x, [c](T v) { return c * v; },
                     [c](T go, T, T) { return c * go; });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T c) {
  return unary_op<T>("add_scalar", x, [c](T v) { return v + c; },
                     [](T go, T, T) { return go; });
}

template <typename T>
Var<T> neg(Var<T> x) {
  return scale(x, T(-1));
}

// ---------------------------------------------------------------------------
// matmul: [m,k]x[k,n], batched [B,m,k]x[B,k,n], and [B,m,k]x[k,n]

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::same_graph(a, b);
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a.id);
  const Tensor<T>& bv = g.val(b.id);
  const int ra = av.rank(), rb = bv.rank();
  detail::require((ra == 2 && rb == 2) || (ra == 3 && (rb == 2 || rb == 3)),
                  "matmul: unsupported ranks " + shape_str(av.shape) + " x " +
                      shape_str(bv.shape));
  const int B = (ra == 3) ? av.dim(0) : 1;
  const int m = av.dim(ra - 2), k = av.dim(ra - 1);
  const int kb = bv.dim(rb - 2), n = bv.dim(rb - 1);
  if (k != kb || (ra == 3 && rb == 3 && bv.dim(0) != B))
    throw DimensionError("matmul: inner dims disagree, " + shape_str(av.shape) +
                         " x " + shape_str(bv.shape));
  std::vector<int> out_shape =
      (ra == 2) ? std::vector<int>{m, n} : std::vector<int>{B, m, n};
  Tensor<T> out(out_shape);
  const bool b_batched = (rb == 3);
  for (int bi = 0; bi < B; ++bi)
    detail::mm_nn(av.data.data() + static_cast<std::int64_t>(bi) * m * k,
                  bv.data.data() + (b_batched ? static_cast<std::int64_t>(bi) * k * n : 0),
                  out.data.data() + static_cast<std::int64_t>(bi) * m * n, m, k, n);
  int aid = a.id, bid = b.id;
  Var<T> o = g.emit("matmul", {aid, bid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [aid, bid, oid = o.id, B, m, k, n, b_batched](Graph<T>& gr) {
      const Tensor<T>& og = gr.grad(oid);
      const Tensor<T>& av2 = gr.val(aid);
      const Tensor<T>& bv2 = gr.val(bid);
      if (gr.needs_grad(aid)) {
        Tensor<T>& ga = gr.grad(aid);
        for (int bi = 0; bi < B; ++bi)
          detail::mm_nt(og.data.data() + static_cast<std::int64_t>(bi) * m * n,
                        bv2.data.data() + (b_batched ? static_cast<std::int64_t>(bi) * k * n : 0),
                        ga.data.data() + static_cast<std::int64_t>(bi) * m * k, m, n, k);
      }
      if (gr.needs_grad(bid)) {
        Tensor<T>& gb = gr.grad(bid);
        for (int bi = 0; bi < B; ++bi)
          detail::mm_tn(av2.data.data() + static_cast<std::int64_t>(bi) * m * k,
                        og.data.data() + static_cast<std::int64_t>(bi) * m * n,
                        gb.data.data() + (b_batched ? static_cast<std::int64_t>(bi) * k * n : 0),
                        k, m, n);
      }
    });
  }
  return o;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Var<T> reshape(Var<T> x, std::vector<int> new_shape) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  if (Tensor<T>::numel_of(new_shape) != xv.numel())
    throw DimensionError("reshape: element count mismatch " + shape_str(xv.shape) +
                         " -> " + shape_str(new_shape));
  Tensor<T> out;
  out.shape = new_shape;
  out.data = xv.data;
  int xid = x.id;
  Var<T> o = g.emit("reshape", {xid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [xid, oid = o.id](Graph<T>& gr) {
      if (!gr.needs_grad(xid)) return;
      const Tensor<T>& og = gr.grad(oid);
      Tensor<T>& gx = gr.grad(xid);
      for (std::size_t i = 0; i < og.data.size(); ++i) gx.data[i] += og.data[i];
    });
  }
  return o;
}

namespace detail {
template <typename T>
Tensor<T> permute_data(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  std::vector<int> out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = x.dim(perm[static_cast<std::size_t>(i)]);
  Tensor<T> out(out_shape);
  auto xs = x.strides();
  std::array<std::int64_t, 4> st{0, 0, 0, 0};
  std::array<int, 4> od{1, 1, 1, 1};
  for (int i = 0; i < r; ++i) {
    st[static_cast<std::size_t>(4 - r + i)] = xs[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    od[static_cast<std::size_t>(4 - r + i)] = out_shape[static_cast<std::size_t>(i)];
  }
  std::int64_t idx = 0;
  for (int i0 = 0; i0 < od[0]; ++i0)
    for (int i1 = 0; i1 < od[1]; ++i1)
      for (int i2 = 0; i2 < od[2]; ++i2) {
        std::int64_t base = i0 * st[0] + i1 * st[1] + i2 * st[2];
        for (int i3 = 0; i3 < od[3]; ++i3)
          out.data[static_cast<std::size_t>(idx++)] =
              x.data[static_cast<std::size_t>(base + i3 * st[3])];
      }
  return out;
}
}  // namespace detail

template <typename T>
Var<T> permute(Var<T> x, std::vector<int> perm) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  const int r = xv.rank();
  detail::require(static_cast<int>(perm.size()) == r && r <= 4,
                  "permute: bad permutation for shape " + shape_str(xv.shape));
  Tensor<T> out = detail::permute_data(xv, perm);
  std::vector<int> inv(perm.size());
  for (int i = 0; i < r; ++i) inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
  int xid = x.id;
  Var<T> o = g.emit("permute", {xid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [xid, oid = o.id, inv](Graph<T>& gr) {
      if (!gr.needs_grad(xid)) return;
      Tensor<T> gback = detail::permute_data(gr.grad(oid), inv);
      Tensor<T>& gx = gr.grad(xid);
      for (std::size_t i = 0; i < gback.data.size(); ++i) gx.data[i] += gback.data[i];
    });
  }
  return o;
}

template <typename T>
Var<T> transpose(Var<T> x) {
  const int r = x.val().rank();
  detail::require(r >= 2, "transpose: rank must be >= 2");
  std::vector<int> perm(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::swap(perm[static_cast<std::size_t>(r - 2)], perm[static_cast<std::size_t>(r - 1)]);
  return permute(x, perm);
}

// Materializes broadcast of size-1 dims up to target_shape.
template <typename T>
Var<T> expand(Var<T> x, std::vector<int> target_shape) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  detail::require(xv.rank() == static_cast<int>(target_shape.size()),
                  "expand: rank mismatch " + shape_str(xv.shape) + " -> " +
                      shape_str(target_shape));
  for (int i = 0; i < xv.rank(); ++i)
    detail::require(xv.dim(i) == target_shape[static_cast<std::size_t>(i)] || xv.dim(i) == 1,
                    "expand: cannot expand " + shape_str(xv.shape) + " to " +
                        shape_str(target_shape));
  auto bc = detail::broadcast4(xv.shape, target_shape, "expand");
  Tensor<T> out(target_shape);
  {
    std::int64_t idx = 0;
    for (int i0 = 0; i0 < bc.od[0]; ++i0)
      for (int i1 = 0; i1 < bc.od[1]; ++i1)
        for (int i2 = 0; i2 < bc.od[2]; ++i2) {
          std::int64_t oa = i0 * bc.sa[0] + i1 * bc.sa[1] + i2 * bc.sa[2];
          for (int i3 = 0; i3 < bc.od[3]; ++i3)
            out.data[static_cast<std::size_t>(idx++)] =
                xv.data[static_cast<std::size_t>(oa + i3 * bc.sa[3])];
        }
  }
  int xid = x.id;
  Var<T> o = g.emit("expand", {xid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [xid, oid = o.id, bc](Graph<T>& gr) {
      if (!gr.needs_grad(xid)) return;
      const Tensor<T>& og = gr.grad(oid);
      Tensor<T>& gx = gr.grad(xid);
      std::int64_t idx = 0;
      for (int i0 = 0; i0 < bc.od[0]; ++i0)
        for (int i1 = 0; i1 < bc.od[1]; ++i1)
          for (int i2 = 0; i2 < bc.od[2]; ++i2) {
            std::int64_t oa = i0 * bc.sa[0] + i1 * bc.sa[1] + i2 * bc.sa[2];
            for (int i3 = 0; i3 < bc.od[3]; ++i3)
              gx.data[static_cast<std::size_t>(oa + i3 * bc.sa[3])] +=
                  og.data[static_cast<std::size_t>(idx++)];
          }
    });
  }
  return o;
}

// ---------------------------------------------------------------------------
// concat / slice

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  detail::require(!xs.empty(), "concat: empty input list");
  Graph<T>& g = *xs[0].g;
  const int r = g.val(xs[0].id).rank();
  detail::require(axis >= 0 && axis < r, "concat: axis out of range");
  std::vector<int> out_shape = g.val(xs[0].id).shape;
  int total = 0;
  for (const auto& x : xs) {
    detail::same_graph(xs[0], x);
    const auto& s = g.val(x.id).shape;
    detail::require(static_cast<int>(s.size()) == r, "concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis)
        detail::require(s[static_cast<std::size_t>(i)] == out_shape[static_cast<std::size_t>(i)],
                        "concat: shape mismatch " + shape_str(out_shape) + " vs " + shape_str(s));
    total += s[static_cast<std::size_t>(axis)];
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  Tensor<T> out(out_shape);

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[static_cast<std::size_t>(i)];

  std::vector<int> ids;
  std::vector<int> widths;
  std::int64_t pos = 0;
  for (const auto& x : xs) {
    const Tensor<T>& xv = g.val(x.id);
    const int w = xv.dim(axis);
    for (std::int64_t ou = 0; ou < outer; ++ou)
      std::memcpy(out.data.data() + (ou * total + pos) * inner,
                  xv.data.data() + ou * w * inner,
                  static_cast<std::size_t>(w * inner) * sizeof(T));
    pos += w;
    ids.push_back(x.id);
    widths.push_back(w);
  }
  Var<T> o = g.emit("concat", ids, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [ids, widths, outer, inner, total, oid = o.id](Graph<T>& gr) {
      const Tensor<T>& og = gr.grad(oid);
      std::int64_t pos2 = 0;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const int w = widths[i];
        if (gr.needs_grad(ids[i])) {
          Tensor<T>& gx = gr.grad(ids[i]);
          for (std::int64_t ou = 0; ou < outer; ++ou) {
            const T* src = og.data.data() + (ou * total + pos2) * inner;
            T* dst = gx.data.data() + ou * w * inner;
            for (std::int64_t j = 0; j < w * inner; ++j) dst[j] += src[j];
          }
        }
        pos2 += w;
      }
    });
  }
  return o;
}

template <typename T>
Var<T> slice(Var<T> x, int axis, int start, int len) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  const int r = xv.rank();
  detail::require(axis >= 0 && axis < r, "slice: axis out of range");
  detail::require(start >= 0 && len > 0 && start + len <= xv.dim(axis),
                  "slice: range [" + std::to_string(start) + "," +
                      std::to_string(start + len) + ") out of bounds for dim " +
                      std::to_string(xv.dim(axis)));
  std::vector<int> out_shape = xv.shape;
  out_shape[static_cast<std::size_t>(axis)] = len;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= xv.dim(i);
  const int full = xv.dim(axis);
  Tensor<T> out(out_shape);
  for (std::int64_t ou = 0; ou < outer; ++ou)
    std::memcpy(out.data.data() + ou * len * inner,
                xv.data.data() + (ou * full + start) * inner,
                static_cast<std::size_t>(len * inner) * sizeof(T));
  int xid = x.id;
  Var<T> o = g.emit("slice", {xid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [xid, oid = o.id, outer, inner, full, start, len](Graph<T>& gr) {
      if (!gr.needs_grad(xid)) return;
      const Tensor<T>& og = gr.grad(oid);
      Tensor<T>& gx = gr.grad(xid);
      for (std::int64_t ou = 0; ou < outer; ++ou) {
        const T* src = og.data.data() + ou * len * inner;
        T* dst = gx.data.data() + (ou * full + start) * inner;
        for (std::int64_t j = 0; j < len * inner; ++j) dst[j] += src[j];
      }
    });
  }
  return o;
}

// ---------------------------------------------------------------------------
// softmax along an axis, with max subtraction

template <typename T>
Var<T> softmax(Var<T> x, int axis) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  const int r = xv.rank();
  detail::require(axis >= 0 && axis < r, "softmax: axis out of range");
  std::int64_t outer = 1, inner = 1;
  const int n = xv.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= xv.dim(i);
  Tensor<T> out;
  out.shape = xv.shape;
  out.data.resize(xv.data.size());
  for (std::int64_t ou = 0; ou < outer; ++ou)
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = ou * n * inner + in;
      T mx = xv.data[static_cast<std::size_t>(base)];
      for (int j = 1; j < n; ++j)
        mx = std::max(mx, xv.data[static_cast<std::size_t>(base + j * inner)]);
      T sum = T(0);
      for (int j = 0; j < n; ++j) {
        T e = std::exp(xv.data[static_cast<std::size_t>(base + j * inner)] - mx);
        out.data[static_cast<std::size_t>(base + j * inner)] = e;
        sum += e;
      }
      const T invs = T(1) / sum;
      for (int j = 0; j < n; ++j)
        out.data[static_cast<std::size_t>(base + j * inner)] *= invs;
    }
  int xid = x.id;
  Var<T> o = g.emit("softmax", {xid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [xid, oid = o.id, outer, inner, n](Graph<T>& gr) {
      if (!gr.needs_grad(xid)) return;
      const Tensor<T>& og = gr.grad(oid);
      const Tensor<T>& yv = gr.val(oid);
      Tensor<T>& gx = gr.grad(xid);
      for (std::int64_t ou = 0; ou < outer; ++ou)
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = ou * n * inner + in;
          T dot = T(0);
          for (int j = 0; j < n; ++j) {
            const auto k = static_cast<std::size_t>(base + j * inner);
            dot += og.data[k] * yv.data[k];
          }
          for (int j = 0; j < n; ++j) {
            const auto k = static_cast<std::size_t>(base + j * inner);
            gx.data[k] += (og.data[k] - dot) * yv.data[k];
          }
        }
    });
  }
  return o;
}

// ---------------------------------------------------------------------------
// masked_fill: mask is a plain 0/1 tensor, broadcastable to x; gradient is
// blocked where the mask is set.

template <typename T>
Var<T> masked_fill(Var<T> x, const Tensor<T>& mask, T value) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  auto bc = detail::broadcast4(xv.shape, mask.shape, "masked_fill");
  detail::require(bc.out_shape == xv.shape,
                  "masked_fill: mask " + shape_str(mask.shape) +
                      " must broadcast to " + shape_str(xv.shape));
  Tensor<T> out = detail::bcast_apply(xv, mask, bc, [value](T xval, T m) {
    return m != T(0) ? value : xval;
  });
  int xid = x.id;
  Var<T> o = g.emit("masked_fill", {xid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [xid, oid = o.id, mask, bc](Graph<T>& gr) {
      if (!gr.needs_grad(xid)) return;
      const Tensor<T>& og = gr.grad(oid);
      detail::bcast_accum(gr.grad(xid), true, gr.val(xid), mask, og, bc,
                          [](T go, T, T m) { return m != T(0) ? T(0) : go; });
    });
  }
  return o;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Var<T> sum(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  T acc = T(0);
  for (T v : xv.data) acc += v;
  int xid = x.id;
  Var<T> o = g.emit("sum", {xid}, Tensor<T>::scalar(acc), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [xid, oid = o.id](Graph<T>& gr) {
      if (!gr.needs_grad(xid)) return;
      const T go = gr.grad(oid).data[0];
      Tensor<T>& gx = gr.grad(xid);
      for (auto& v : gx.data) v += go;
    });
  }
  return o;
}

template <typename T>
Var<T> mean(Var<T> x) {
  const T n = static_cast<T>(x.val().numel());
  return scale(sum(x), T(1) / n);
}

// ---------------------------------------------------------------------------
// layer norm over the last dimension

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = static_cast<T>(1e-5)) {
  detail::same_graph(x, gain);
  detail::same_graph(x, bias);
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  const int r = xv.rank();
  const int d = xv.dim(r - 1);
  detail::require(g.val(gain.id).shape == std::vector<int>{d} &&
                      g.val(bias.id).shape == std::vector<int>{d},
                  "layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  const std::int64_t rows = xv.numel() / d;
  Tensor<T> out;
  out.shape = xv.shape;
  out.data.resize(xv.data.size());
  Tensor<T> xhat;  // saved for backward
  xhat.shape = xv.shape;
  xhat.data.resize(xv.data.size());
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  const Tensor<T>& gv = g.val(gain.id);
  const Tensor<T>& bv = g.val(bias.id);
  for (std::int64_t rix = 0; rix < rows; ++rix) {
    const T* xr = xv.data.data() + rix * d;
    T mu = T(0);
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(rix)] = is;
    T* xh = xhat.data.data() + rix * d;
    T* yr = out.data.data() + rix * d;
    for (int j = 0; j < d; ++j) {
      xh[j] = (xr[j] - mu) * is;
      yr[j] = xh[j] * gv.data[static_cast<std::size_t>(j)] + bv.data[static_cast<std::size_t>(j)];
    }
  }
  int xid = x.id, gid = gain.id, bid = bias.id;
  Var<T> o = g.emit("layer_norm", {xid, gid, bid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [xid, gid, bid, oid = o.id, xhat = std::move(xhat),
                          inv_std = std::move(inv_std), rows, d](Graph<T>& gr) {
      const Tensor<T>& og = gr.grad(oid);
      const Tensor<T>& gv2 = gr.val(gid);
      if (gr.needs_grad(gid)) {
        Tensor<T>& gg = gr.grad(gid);
        for (std::int64_t rix = 0; rix < rows; ++rix) {
          const T* gr_ = og.data.data() + rix * d;
          const T* xh = xhat.data.data() + rix * d;
          for (int j = 0; j < d; ++j) gg.data[static_cast<std::size_t>(j)] += gr_[j] * xh[j];
        }
      }
      if (gr.needs_grad(bid)) {
        Tensor<T>& gb = gr.grad(bid);
        for (std::int64_t rix = 0; rix < rows; ++rix) {
          const T* gr_ = og.data.data() + rix * d;
          for (int j = 0; j < d; ++j) gb.data[static_cast<std::size_t>(j)] += gr_[j];
        }
      }
      if (gr.needs_grad(xid)) {
        Tensor<T>& gx = gr.grad(xid);
        for (std::int64_t rix = 0; rix < rows; ++rix) {
          const T* gr_ = og.data.data() + rix * d;
          const T* xh = xhat.data.data() + rix * d;
          const T is = inv_std[static_cast<std::size_t>(rix)];
          T mean_g = T(0), mean_gx = T(0);
          for (int j = 0; j < d; ++j) {
            const T ggain = gr_[j] * gv2.data[static_cast<std::size_t>(j)];
            mean_g += ggain;
            mean_gx += ggain * xh[j];
          }
          mean_g /= static_cast<T>(d);
          mean_gx /= static_cast<T>(d);
          T* gxr = gx.data.data() + rix * d;
          for (int j = 0; j < d; ++j) {
            const T ggain = gr_[j] * gv2.data[static_cast<std::size_t>(j)];
            gxr[j] += (ggain - mean_g - xh[j] * mean_gx) * is;
          }
        }
      }
    });
  }
  return o;
}

// ---------------------------------------------------------------------------
// dropout with inverted scaling; identity when p == 0

template <typename T>
Var<T> dropout(Var<T> x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  detail::require(p < 1.0, "dropout: rate must be < 1");
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(xv.data.size());
  Tensor<T> out;
  out.shape = xv.shape;
  out.data.resize(xv.data.size());
  for (std::size_t i = 0; i < xv.data.size(); ++i) {
    mask[i] = rng.uniform() < p ? T(0) : keep_scale;
    out.data[i] = xv.data[i] * mask[i];
  }
  int xid = x.id;
  Var<T> o = g.emit("dropout", {xid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [xid, oid = o.id, mask = std::move(mask)](Graph<T>& gr) {
      if (!gr.needs_grad(xid)) return;
      const Tensor<T>& og = gr.grad(oid);
      Tensor<T>& gx = gr.grad(xid);
      for (std::size_t i = 0; i < og.data.size(); ++i) gx.data[i] += og.data[i] * mask[i];
    });
  }
  return o;
}

// ---------------------------------------------------------------------------
// gather_timestep: out[i,:] = x[i, idx[i], :]

template <typename T>
Var<T> gather_timestep(Var<T> x, const std::vector<int>& idx) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  detail::require(xv.rank() == 3, "gather_timestep: expected [N,T,D], got " + shape_str(xv.shape));
  const int N = xv.dim(0), Tn = xv.dim(1), D = xv.dim(2);
  detail::require(static_cast<int>(idx.size()) == N, "gather_timestep: index count != N");
  Tensor<T> out({N, D});
  for (int i = 0; i < N; ++i) {
    const int t = idx[static_cast<std::size_t>(i)];
    detail::require(t >= 0 && t < Tn, "gather_timestep: index out of range");
    std::memcpy(out.data.data() + static_cast<std::int64_t>(i) * D,
                xv.data.data() + (static_cast<std::int64_t>(i) * Tn + t) * D,
                static_cast<std::size_t>(D) * sizeof(T));
  }
  int xid = x.id;
  Var<T> o = g.emit("gather_timestep", {xid}, std::move(out), nullptr);
  if (g.needs_grad(o.id)) {
    g.set_backward(o.id, [xid, oid = o.id, idx, Tn, D, N](Graph<T>& gr) {
      if (!gr.needs_grad(xid)) return;
      const Tensor<T>& og = gr.grad(oid);
      Tensor<T>& gx = gr.grad(xid);
      for (int i = 0; i < N; ++i) {
        const int t = idx[static_cast<std::size_t>(i)];
        const T* src = og.data.data() + static_cast<std::int64_t>(i) * D;
        T* dst = gx.data.data() + (static_cast<std::int64_t>(i) * Tn + t) * D;
        for (int j = 0; j < D; ++j) dst[j] += src[j];
      }
    });
  }
  return o;
}

// operator sugar
template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

}  // namespace trajcast
