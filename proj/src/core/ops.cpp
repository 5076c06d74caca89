#include "tripcast/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "blas.hpp"
#include "fastmath.hpp"
#include "tripcast/core/error.hpp"

namespace tripcast {

using detail::gemm;
using detail::make_op;
using detail::Node;

namespace {

thread_local std::size_t g_empty_attention_rows = 0;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b,
                             const std::string& why = "shape mismatch") {
  throw ShapeError(std::string(op) + ": " + why + " " + to_string(a) + " vs " + to_string(b));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct Broadcast {
  bool a_small = false;
  bool b_small = false;
  std::size_t outer = 1;
  std::size_t inner = 1;
  Shape out;
};

Broadcast broadcast(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return {false, false, 1, numel(a), a};
  if (is_suffix(b, a)) return {false, true, numel(a) / std::max<std::size_t>(numel(b), 1), numel(b), a};
  if (is_suffix(a, b)) return {true, false, numel(b) / std::max<std::size_t>(numel(a), 1), numel(a), b};
  shape_fail(op, a, b);
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  const Broadcast bc = broadcast(op, a.shape(), b.shape());
  const std::size_t outer = bc.outer, inner = bc.inner;
  const bool as = bc.a_small, bs = bc.b_small;
  std::vector<T> out(outer * inner);
  const T* pa = a.data();
  const T* pb = b.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const T* ra = as ? pa : pa + o * inner;
    const T* rb = bs ? pb : pb + o * inner;
    T* ro = out.data() + o * inner;
    for (std::size_t i = 0; i < inner; ++i) ro[i] = f(ra[i], rb[i]);
  }
  return make_op<T>(op, bc.out, std::move(out), {a, b},
                    [outer, inner, as, bs, da, db](Node<T>& self) {
                      Node<T>& na = *self.inputs[0];
                      Node<T>& nb = *self.inputs[1];
                      const T* g = self.grad.data();
                      const T* pa = na.value.data();
                      const T* pb = nb.value.data();
                      T* ga = na.requires_grad ? na.grad_buffer().data() : nullptr;
                      T* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
                      for (std::size_t o = 0; o < outer; ++o) {
                        const std::size_t oa = as ? 0 : o * inner;
                        const std::size_t ob = bs ? 0 : o * inner;
                        const T* go = g + o * inner;
                        for (std::size_t i = 0; i < inner; ++i) {
                          if (ga) ga[oa + i] += da(go[i], pa[oa + i], pb[ob + i]);
                          if (gb) gb[ob + i] += db(go[i], pa[oa + i], pb[ob + i]);
                        }
                      }
                    });
}

template <typename T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, D d) {
  std::vector<T> out(a.size());
  const T* pa = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(pa[i]);
  return make_op<T>(op, a.shape(), std::move(out), {a}, [d](Node<T>& self) {
    Node<T>& na = *self.inputs[0];
    auto ga = na.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * d(na.value[i], self.value[i]);
  });
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.rank() != 2 || a.rank() < 1 || a.shape().back() != b.dim(0)) {
    shape_fail("matmul", a.shape(), b.shape());
  }
  const std::size_t k = b.dim(0), n = b.dim(1), m = a.size() / std::max<std::size_t>(k, 1);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<T> out(m * n);
  gemm(false, false, m, n, k, T(1), a.data(), k, b.data(), n, T(0), out.data(), n);
  return make_op<T>("matmul", std::move(out_shape), std::move(out), {a, b},
                    [m, n, k](Node<T>& self) {
                      Node<T>& na = *self.inputs[0];
                      Node<T>& nb = *self.inputs[1];
                      if (na.requires_grad) {
                        gemm(false, true, m, k, n, T(1), self.grad.data(), n, nb.value.data(), n,
                             T(1), na.grad_buffer().data(), k);
                      }
                      if (nb.requires_grad) {
                        gemm(true, false, k, n, m, T(1), na.value.data(), k, self.grad.data(), n,
                             T(1), nb.grad_buffer().data(), n);
                      }
                    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>(
      "scale", a, [factor](T x) { return factor * x; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T kInvSqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T kInvSqrt2Pi = std::numbers::inv_sqrtpi_v<T> * kInvSqrt2;
  return unary<T>(
      "gelu", a, [](T x) { return T(0.5) * x * (T(1) + fastmath::erf(x * kInvSqrt2)); },
      [](T x, T) {
        return T(0.5) * (T(1) + fastmath::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(T(-0.5) * x * x);
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  if (a.rank() < 1 || a.shape().back() == 0) throw ShapeError("softmax: needs a non-empty last axis, got " + to_string(a.shape()));
  const std::size_t n = a.shape().back(), rows = a.size() / n;
  std::vector<T> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.data() + r * n;
    T* y = out.data() + r * n;
    const T mx = *std::max_element(x, x + n);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) total += (y[i] = std::exp(x[i] - mx));
    for (std::size_t i = 0; i < n; ++i) y[i] /= total;
  }
  return make_op<T>("softmax", a.shape(), std::move(out), {a}, [rows, n](Node<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * n;
      const T* g = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += y[i] * (g[i] - dot);
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() < 1 || gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != x.shape().back() ||
      beta.dim(0) != x.shape().back()) {
    shape_fail("layer_norm", x.shape(), gamma.shape());
  }
  const std::size_t n = x.shape().back(), rows = x.size() / std::max<std::size_t>(n, 1);
  std::vector<T> out(x.size()), xhat(x.size()), rstd(rows);
  const T* g = gamma.data();
  const T* b = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * n;
    T mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += xr[i];
    mu /= T(n);
    T var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= T(n);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t i = 0; i < n; ++i) {
      const T h = (xr[i] - mu) * rs;
      xhat[r * n + i] = h;
      out[r * n + i] = h * g[i] + b[i];
    }
  }
  return make_op<T>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [rows, n, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& ng = *self.inputs[1];
        Node<T>& nb = *self.inputs[2];
        const T* g = self.grad.data();
        if (ng.requires_grad || nb.requires_grad) {
          T* gg = ng.requires_grad ? ng.grad_buffer().data() : nullptr;
          T* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < n; ++i) {
              if (gg) gg[i] += g[r * n + i] * xhat[r * n + i];
              if (gb) gb[i] += g[r * n + i];
            }
          }
        }
        if (nx.requires_grad) {
          T* gx = nx.grad_buffer().data();
          const T* gamma = ng.value.data();
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t i = 0; i < n; ++i) {
              const T d = g[r * n + i] * gamma[i];
              mean_d += d;
              mean_dx += d * xhat[r * n + i];
            }
            mean_d /= T(n);
            mean_dx /= T(n);
            for (std::size_t i = 0; i < n; ++i) {
              const T d = g[r * n + i] * gamma[i];
              gx[r * n + i] += rstd[r] * (d - mean_d - xhat[r * n + i] * mean_dx);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t pad) {
  if (x.rank() != 3 || weight.rank() != 3 || weight.dim(1) != x.dim(2)) {
    shape_fail("conv1d", x.shape(), weight.shape());
  }
  const std::size_t batch = x.dim(0), len = x.dim(1), cin = x.dim(2);
  const std::size_t ksize = weight.dim(0), cout = weight.dim(2);
  if (bias.rank() != 1 || bias.dim(0) != cout) shape_fail("conv1d", weight.shape(), bias.shape(), "bias mismatch");
  if (len + 2 * pad < ksize) shape_fail("conv1d", x.shape(), weight.shape(), "kernel longer than padded input");
  const std::size_t lout = len + 2 * pad - ksize + 1;

  // Output rows lo read input row lo + k - pad; this is the valid lo range.
  auto rows_for = [len, pad, lout](std::size_t k, std::size_t& lo_begin, std::size_t& lo_end) {
    const long shift = static_cast<long>(k) - static_cast<long>(pad);
    lo_begin = static_cast<std::size_t>(std::max<long>(0, -shift));
    lo_end = static_cast<std::size_t>(
        std::clamp<long>(static_cast<long>(len) - shift, 0, static_cast<long>(lout)));
  };

  std::vector<T> out(batch * lout * cout);
  for (std::size_t r = 0; r < batch * lout; ++r)
    std::copy(bias.data(), bias.data() + cout, out.data() + r * cout);
  if (ksize == 1 && pad == 0) {
    gemm(false, false, batch * len, cout, cin, T(1), x.data(), cin, weight.data(), cout, T(1),
         out.data(), cout);
  } else {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t k = 0; k < ksize; ++k) {
        std::size_t lo0, lo1;
        rows_for(k, lo0, lo1);
        if (lo1 <= lo0) continue;
        const std::size_t li0 = lo0 + k - pad;
        gemm(false, false, lo1 - lo0, cout, cin, T(1), x.data() + (b * len + li0) * cin, cin,
             weight.data() + k * cin * cout, cout, T(1), out.data() + (b * lout + lo0) * cout,
             cout);
      }
    }
  }
  return make_op<T>(
      "conv1d", Shape{batch, lout, cout}, std::move(out), {x, weight, bias},
      [batch, len, cin, ksize, cout, pad, lout, rows_for](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& nw = *self.inputs[1];
        Node<T>& nb = *self.inputs[2];
        const T* g = self.grad.data();
        if (nb.requires_grad) {
          auto gb = nb.grad_buffer();
          for (std::size_t r = 0; r < batch * lout; ++r)
            for (std::size_t c = 0; c < cout; ++c) gb[c] += g[r * cout + c];
        }
        T* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
        T* gw = nw.requires_grad ? nw.grad_buffer().data() : nullptr;
        if (ksize == 1 && pad == 0) {
          if (gx) gemm(false, true, batch * len, cin, cout, T(1), g, cout, nw.value.data(), cout, T(1), gx, cin);
          if (gw) gemm(true, false, cin, cout, batch * len, T(1), nx.value.data(), cin, g, cout, T(1), gw, cout);
          return;
        }
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t k = 0; k < ksize; ++k) {
            std::size_t lo0, lo1;
            rows_for(k, lo0, lo1);
            if (lo1 <= lo0) continue;
            const std::size_t li0 = lo0 + k - pad;
            const T* gy = g + (b * lout + lo0) * cout;
            if (gx) {
              gemm(false, true, lo1 - lo0, cin, cout, T(1), gy, cout,
                   nw.value.data() + k * cin * cout, cout, T(1), gx + (b * len + li0) * cin, cin);
            }
            if (gw) {
              gemm(true, false, cin, cout, lo1 - lo0, T(1), nx.value.data() + (b * len + li0) * cin,
                   cin, gy, cout, T(1), gw + k * cin * cout, cout);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids,
                    const Shape& index_shape) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + to_string(table.shape()));
  if (numel(index_shape) != ids.size()) {
    throw ShapeError("embedding: index shape " + to_string(index_shape) + " does not hold " +
                     std::to_string(ids.size()) + " ids");
  }
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  std::vector<T> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= rows) {
      throw ShapeError("embedding: id " + std::to_string(idx[i]) + " out of range for table " +
                       to_string(table.shape()));
    }
    std::copy_n(table.data() + static_cast<std::size_t>(idx[i]) * d, d, out.data() + i * d);
  }
  Shape out_shape = index_shape;
  out_shape.push_back(d);
  return make_op<T>("embedding", std::move(out_shape), std::move(out), {table},
                    [d, idx = std::move(idx)](Node<T>& self) {
                      auto gt = self.inputs[0]->grad_buffer();
                      for (std::size_t i = 0; i < idx.size(); ++i) {
                        const T* g = self.grad.data() + i * d;
                        T* row = gt.data() + static_cast<std::size_t>(idx[i]) * d;
                        for (std::size_t c = 0; c < d; ++c) row[c] += g[c];
                      }
                    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> chunk;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) shape_fail("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != first[i]) shape_fail("concat", first, s);
    out_shape[axis] += s[axis];
    chunk.push_back(split_axis(s, axis).extent * split_axis(s, axis).inner);
  }
  const std::size_t outer = split_axis(first, axis).outer;
  std::size_t row = 0;
  for (auto c : chunk) row += c;
  std::vector<T> out(outer * row);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      std::copy_n(parts[p].data() + o * chunk[p], chunk[p], out.data() + o * row + off);
      off += chunk[p];
    }
  }
  return make_op<T>("concat", std::move(out_shape), std::move(out), parts,
                    [outer, row, chunk](Node<T>& self) {
                      std::size_t off = 0;
                      for (std::size_t p = 0; p < chunk.size(); ++p) {
                        Node<T>& np = *self.inputs[p];
                        if (np.requires_grad) {
                          auto gp = np.grad_buffer();
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t i = 0; i < chunk[p]; ++i)
                              gp[o * chunk[p] + i] += self.grad[o * row + off + i];
                        }
                        off += chunk[p];
                      }
                    });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a.rank() || begin > end || end > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for " + to_string(a.shape()));
  }
  const AxisSplit sp = split_axis(a.shape(), axis);
  const std::size_t width = (end - begin) * sp.inner, src_row = sp.extent * sp.inner;
  const std::size_t offset = begin * sp.inner, outer = sp.outer;
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  std::vector<T> out(outer * width);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.data() + o * src_row + offset, width, out.data() + o * width);
  return make_op<T>("slice", std::move(out_shape), std::move(out), {a},
                    [outer, width, src_row, offset](Node<T>& self) {
                      auto ga = self.inputs[0]->grad_buffer();
                      for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < width; ++i)
                          ga[o * src_row + offset + i] += self.grad[o * width + i];
                    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) shape_fail("reshape", a.shape(), shape);
  std::vector<T> out(a.values().begin(), a.values().end());
  return make_op<T>("reshape", std::move(shape), std::move(out), {a}, [](Node<T>& self) {
    auto ga = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> expand(const Tensor<T>& a, std::size_t axis, std::size_t n) {
  if (axis > a.rank()) throw ShapeError("expand: axis " + std::to_string(axis) + " out of range for " + to_string(a.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis; i < a.rank(); ++i) inner *= a.dim(i);
  Shape out_shape = a.shape();
  out_shape.insert(out_shape.begin() + static_cast<long>(axis), n);
  std::vector<T> out(outer * n * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < n; ++j)
      std::copy_n(a.data() + o * inner, inner, out.data() + (o * n + j) * inner);
  return make_op<T>("expand", std::move(out_shape), std::move(out), {a},
                    [outer, n, inner](Node<T>& self) {
                      auto ga = self.inputs[0]->grad_buffer();
                      for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t j = 0; j < n; ++j)
                          for (std::size_t i = 0; i < inner; ++i)
                            ga[o * inner + i] += self.grad[(o * n + j) * inner + i];
                    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.values()) total += v;
  return make_op<T>("sum", Shape{}, std::vector<T>{total}, {a}, [](Node<T>& self) {
    auto ga = self.inputs[0]->grad_buffer();
    for (auto& g : ga) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor " + to_string(a.shape()));
  return scale(sum(a), T(1) / T(a.size()));
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::span<const std::uint8_t> key_mask, std::size_t heads) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) shape_fail("attention", q.shape(), k.shape(), "rank-3 inputs required");
  if (k.shape() != v.shape()) shape_fail("attention", k.shape(), v.shape(), "key/value mismatch");
  const std::size_t batch = q.dim(0), lq = q.dim(1), dm = q.dim(2);
  const std::size_t kbatch = k.dim(0), lk = k.dim(1);
  if (k.dim(2) != dm || (kbatch != batch && kbatch != 1)) shape_fail("attention", q.shape(), k.shape());
  if (heads == 0 || dm % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(dm) + " not divisible into " + std::to_string(heads) + " heads");
  }
  if (key_mask.size() != kbatch * lk) {
    throw ShapeError("attention: key mask has " + std::to_string(key_mask.size()) + " entries, keys " + to_string(k.shape()));
  }
  const std::size_t dk = dm / heads;
  const T inv_scale = T(1) / std::sqrt(T(dk));
  std::vector<std::uint8_t> mask(key_mask.begin(), key_mask.end());
  std::vector<T> probs(batch * heads * lq * lk, T(0));
  std::vector<T> out(batch * lq * dm, T(0));
  std::size_t empty_rows = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t kb = kbatch == 1 ? 0 : b;
    const std::uint8_t* mk = mask.data() + kb * lk;
    for (std::size_t h = 0; h < heads; ++h) {
      const T* qh = q.data() + b * lq * dm + h * dk;
      const T* kh = k.data() + kb * lk * dm + h * dk;
      const T* vh = v.data() + kb * lk * dm + h * dk;
      T* p = probs.data() + (b * heads + h) * lq * lk;
      // Scores for every key; masked ones are discarded below.
      gemm(false, true, lq, lk, dk, inv_scale, qh, dm, kh, dm, T(0), p, lk);
      for (std::size_t i = 0; i < lq; ++i) {
        T* pi = p + i * lk;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < lk; ++j)
          if (mk[j]) mx = std::max(mx, pi[j]);
        if (mx == -std::numeric_limits<T>::infinity()) {
          std::fill(pi, pi + lk, T(0));
          ++empty_rows;
          continue;
        }
        for (std::size_t j = 0; j < lk; ++j) pi[j] = fastmath::exp(pi[j] - mx);
        T total = 0;
        for (std::size_t j = 0; j < lk; ++j) {
          pi[j] = mk[j] ? pi[j] : T(0);
          total += pi[j];
        }
        const T inv_total = T(1) / total;
        for (std::size_t j = 0; j < lk; ++j) pi[j] *= inv_total;
      }
      gemm(false, false, lq, dk, lk, T(1), p, lk, vh, dm, T(0), out.data() + b * lq * dm + h * dk, dm);
    }
  }
  g_empty_attention_rows += empty_rows;
  return make_op<T>(
      "attention", Shape{batch, lq, dm}, std::move(out), {q, k, v},
      [batch, lq, lk, dm, dk, heads, kbatch, inv_scale, probs = std::move(probs)](Node<T>& self) {
        Node<T>& nq = *self.inputs[0];
        Node<T>& nk = *self.inputs[1];
        Node<T>& nv = *self.inputs[2];
        T* gq = nq.requires_grad ? nq.grad_buffer().data() : nullptr;
        T* gk = nk.requires_grad ? nk.grad_buffer().data() : nullptr;
        T* gv = nv.requires_grad ? nv.grad_buffer().data() : nullptr;
        std::vector<T> ds(lq * lk);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t kb = kbatch == 1 ? 0 : b;
          for (std::size_t h = 0; h < heads; ++h) {
            const T* p = probs.data() + (b * heads + h) * lq * lk;
            const T* go = self.grad.data() + b * lq * dm + h * dk;
            const std::size_t qoff = b * lq * dm + h * dk, koff = kb * lk * dm + h * dk;
            if (gv) gemm(true, false, lk, dk, lq, T(1), p, lk, go, dm, T(1), gv + koff, dm);
            if (!gq && !gk) continue;
            // dP = dO V^T, then the softmax Jacobian row by row.
            gemm(false, true, lq, lk, dk, T(1), go, dm, nv.value.data() + koff, dm, T(0), ds.data(), lk);
            for (std::size_t i = 0; i < lq; ++i) {
              const T* pi = p + i * lk;
              T* di = ds.data() + i * lk;
              T dot = 0;
              for (std::size_t j = 0; j < lk; ++j) dot += pi[j] * di[j];
              for (std::size_t j = 0; j < lk; ++j) di[j] = pi[j] * (di[j] - dot) * inv_scale;
            }
            if (gq) gemm(false, false, lq, dk, lk, T(1), ds.data(), lk, nk.value.data() + koff, dm, T(1), gq + qoff, dm);
            if (gk) gemm(true, false, lk, dk, lq, T(1), ds.data(), lk, nq.value.data() + qoff, dm, T(1), gk + koff, dm);
          }
        }
      });
}

std::size_t empty_attention_rows() noexcept { return g_empty_attention_rows; }
void reset_empty_attention_rows() noexcept { g_empty_attention_rows = 0; }

#define TRIPCAST_INSTANTIATE_OPS(T)                                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                      \
  template Tensor<T> log(const Tensor<T>&);                                                       \
  template Tensor<T> gelu(const Tensor<T>&);                                                      \
  template Tensor<T> softmax(const Tensor<T>&);                                                   \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);         \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);   \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>, const Shape&);    \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                          \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);              \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> expand(const Tensor<T>&, std::size_t, std::size_t);                          \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                      \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                          std::span<const std::uint8_t>, std::size_t);

TRIPCAST_INSTANTIATE_OPS(float)
TRIPCAST_INSTANTIATE_OPS(double)

#undef TRIPCAST_INSTANTIATE_OPS

}  // namespace tripcast
