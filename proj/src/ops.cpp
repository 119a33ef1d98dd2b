#include "cvlp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cvlp/errors.hpp"

namespace cvlp::ad {

namespace {

// Grad buffer of parent i, or nullptr when that parent is constant.
double* parent_grad(Node& n, std::size_t i) {
  auto& p = n.parents[i];
  return p->requires_grad ? p->grad.data() : nullptr;
}

const std::vector<double>& parent_value(const Node& n, std::size_t i) {
  return n.parents[i]->value;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw DimensionError(std::string(op) + ": cannot broadcast " + a.str() + " with " + b.str());
  };
  return {dim(a.rows, b.rows), dim(a.cols, b.cols)};
}

inline std::size_t bidx(const Shape& s, std::size_t r, std::size_t c) {
  return (s.rows == 1 ? 0 : r) * s.cols + (s.cols == 1 ? 0 : c);
}

void check_axis(int axis) {
  if (axis != 0 && axis != 1) throw ContractError("axis must be 0 or 1");
}

// Shared driver for element-wise binary ops. `fwd(x, y)` gives the value,
// `dx(x, y, out)` and `dy(x, y, out)` the local partial derivatives.
template <class F, class DX, class DY>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F fwd, DX dx, DY dy) {
  const Shape sa = a.shape(), sb = b.shape();
  const Shape out = broadcast_shape(sa, sb, name);
  std::vector<double> v(out.size());
  const auto av = a.data(), bv = b.data();
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c)
      v[r * out.cols + c] = fwd(av[bidx(sa, r, c)], bv[bidx(sb, r, c)]);
  return make_result(out, std::move(v), {a, b}, [sa, sb, out, dx, dy](Node& n) {
    const auto& x = parent_value(n, 0);
    const auto& y = parent_value(n, 1);
    double* gx = parent_grad(n, 0);
    double* gy = parent_grad(n, 1);
    for (std::size_t r = 0; r < out.rows; ++r)
      for (std::size_t c = 0; c < out.cols; ++c) {
        const std::size_t o = r * out.cols + c;
        const std::size_t ix = bidx(sa, r, c), iy = bidx(sb, r, c);
        const double g = n.grad[o];
        if (gx) gx[ix] += g * dx(x[ix], y[iy], n.value[o]);
        if (gy) gy[iy] += g * dy(x[ix], y[iy], n.value[o]);
      }
  });
}

template <class F, class D>
Tensor unary(const Tensor& a, F fwd, D deriv) {
  const auto av = a.data();
  std::vector<double> v(av.size());
  std::transform(av.begin(), av.end(), v.begin(), fwd);
  return make_result(a.shape(), std::move(v), {a}, [deriv](Node& n) {
    double* g = parent_grad(n, 0);
    const auto& x = parent_value(n, 0);
    for (std::size_t i = 0; i < n.value.size(); ++i) g[i] += n.grad[i] * deriv(x[i], n.value[i]);
  });
}

// C += A * B for row-major A (m,k), B (k,n).
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C += A * B^T for A (m,k), B (n,k).
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C += A^T * B for A (k,m), B (k,n).
void gemm_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
             std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows) {
    throw DimensionError("matmul: inner dimensions differ, " + sa.str() + " x " + sb.str());
  }
  const std::size_t m = sa.rows, k = sa.cols, n = sb.cols;
  std::vector<double> v(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), v.data(), m, k, n);
  return make_result({m, n}, std::move(v), {a, b}, [m, k, n](Node& n_) {
    const auto& x = parent_value(n_, 0);
    const auto& y = parent_value(n_, 1);
    if (double* gx = parent_grad(n_, 0)) gemm_nt(n_.grad.data(), y.data(), gx, m, n, k);
    if (double* gy = parent_grad(n_, 1)) gemm_tn(x.data(), n_.grad.data(), gy, m, k, n);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.cols) {
    throw DimensionError("matmul_nt: column counts differ, " + sa.str() + " x " + sb.str() +
                         "^T");
  }
  const std::size_t m = sa.rows, k = sa.cols, n = sb.rows;
  std::vector<double> v(m * n, 0.0);
  gemm_nt(a.data().data(), b.data().data(), v.data(), m, k, n);
  return make_result({m, n}, std::move(v), {a, b}, [m, k, n](Node& n_) {
    const auto& x = parent_value(n_, 0);
    const auto& y = parent_value(n_, 1);
    // dA = G B, dB = G^T A
    if (double* gx = parent_grad(n_, 0)) gemm_nn(n_.grad.data(), y.data(), gx, m, n, k);
    if (double* gy = parent_grad(n_, 1)) gemm_tn(n_.grad.data(), x.data(), gy, m, n, k);
  });
}

Tensor transpose(const Tensor& a) {
  const Shape s = a.shape();
  const auto av = a.data();
  std::vector<double> v(s.size());
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) v[c * s.rows + r] = av[r * s.cols + c];
  return make_result({s.cols, s.rows}, std::move(v), {a}, [s](Node& n) {
    double* g = parent_grad(n, 0);
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) g[r * s.cols + c] += n.grad[c * s.rows + r];
  });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double out) { return out; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double out) { return 0.5 / out; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Tensor sum(const Tensor& a) {
  const auto av = a.data();
  double s = 0.0;
  for (double x : av) s += x;
  return make_result({1, 1}, {s}, {a}, [](Node& n) {
    double* g = parent_grad(n, 0);
    const std::size_t len = n.parents[0]->value.size();
    for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_axis(const Tensor& a, int axis) {
  check_axis(axis);
  const Shape s = a.shape();
  const auto av = a.data();
  const Shape out = axis == 0 ? Shape{1, s.cols} : Shape{s.rows, 1};
  std::vector<double> v(out.size(), 0.0);
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) v[axis == 0 ? c : r] += av[r * s.cols + c];
  return make_result(out, std::move(v), {a}, [s, axis](Node& n) {
    double* g = parent_grad(n, 0);
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) g[r * s.cols + c] += n.grad[axis == 0 ? c : r];
  });
}

Tensor mean_axis(const Tensor& a, int axis) {
  check_axis(axis);
  const double count = static_cast<double>(axis == 0 ? a.rows() : a.cols());
  return scale(sum_axis(a, axis), 1.0 / count);
}

Tensor l2_norm_axis(const Tensor& a, int axis) {
  return sqrt(sum_axis(mul(a, a), axis));
}

Tensor log_softmax_axis(const Tensor& a, int axis) {
  check_axis(axis);
  const Shape s = a.shape();
  const auto av = a.data();
  const std::size_t outer = axis == 1 ? s.rows : s.cols;
  const std::size_t inner = axis == 1 ? s.cols : s.rows;
  auto at = [&](std::size_t o, std::size_t i) { return axis == 1 ? o * s.cols + i : i * s.cols + o; };
  std::vector<double> v(s.size());
  for (std::size_t o = 0; o < outer; ++o) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < inner; ++i) mx = std::max(mx, av[at(o, i)]);
    double z = 0.0;
    for (std::size_t i = 0; i < inner; ++i) z += std::exp(av[at(o, i)] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < inner; ++i) v[at(o, i)] = av[at(o, i)] - lse;
  }
  return make_result(s, std::move(v), {a}, [s, axis, outer, inner](Node& n) {
    double* g = parent_grad(n, 0);
    auto at = [&](std::size_t o, std::size_t i) {
      return axis == 1 ? o * s.cols + i : i * s.cols + o;
    };
    for (std::size_t o = 0; o < outer; ++o) {
      double gs = 0.0;
      for (std::size_t i = 0; i < inner; ++i) gs += n.grad[at(o, i)];
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = at(o, i);
        g[k] += n.grad[k] - std::exp(n.value[k]) * gs;
      }
    }
  });
}

Tensor softmax_axis(const Tensor& a, int axis) {
  check_axis(axis);
  const Shape s = a.shape();
  const auto av = a.data();
  const std::size_t outer = axis == 1 ? s.rows : s.cols;
  const std::size_t inner = axis == 1 ? s.cols : s.rows;
  auto at = [&](std::size_t o, std::size_t i) { return axis == 1 ? o * s.cols + i : i * s.cols + o; };
  std::vector<double> v(s.size());
  for (std::size_t o = 0; o < outer; ++o) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < inner; ++i) mx = std::max(mx, av[at(o, i)]);
    double z = 0.0;
    for (std::size_t i = 0; i < inner; ++i) {
      const double e = std::exp(av[at(o, i)] - mx);
      v[at(o, i)] = e;
      z += e;
    }
    for (std::size_t i = 0; i < inner; ++i) v[at(o, i)] /= z;
  }
  return make_result(s, std::move(v), {a}, [s, axis, outer, inner](Node& n) {
    double* g = parent_grad(n, 0);
    auto at = [&](std::size_t o, std::size_t i) {
      return axis == 1 ? o * s.cols + i : i * s.cols + o;
    };
    for (std::size_t o = 0; o < outer; ++o) {
      double dot = 0.0;
      for (std::size_t i = 0; i < inner; ++i) dot += n.grad[at(o, i)] * n.value[at(o, i)];
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = at(o, i);
        g[k] += n.value[k] * (n.grad[k] - dot);
      }
    }
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  check_axis(axis);
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape first = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if ((axis == 0 && s.cols != first.cols) || (axis == 1 && s.rows != first.rows)) {
      throw DimensionError("concat along axis " + std::to_string(axis) + ": " + first.str() +
                           " vs " + s.str());
    }
    total += axis == 0 ? s.rows : s.cols;
  }
  const Shape out = axis == 0 ? Shape{total, first.cols} : Shape{first.rows, total};
  std::vector<double> v(out.size());
  std::vector<Shape> shapes;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    shapes.push_back(s);
    const auto pv = p.data();
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) {
        const std::size_t o = axis == 0 ? (off + r) * out.cols + c : r * out.cols + off + c;
        v[o] = pv[r * s.cols + c];
      }
    off += axis == 0 ? s.rows : s.cols;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(out, std::move(v), std::move(inputs), [shapes, out, axis](Node& n) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < shapes.size(); ++k) {
      const Shape s = shapes[k];
      if (double* g = parent_grad(n, k)) {
        for (std::size_t r = 0; r < s.rows; ++r)
          for (std::size_t c = 0; c < s.cols; ++c) {
            const std::size_t o = axis == 0 ? (off + r) * out.cols + c : r * out.cols + off + c;
            g[r * s.cols + c] += n.grad[o];
          }
      }
      off += axis == 0 ? s.rows : s.cols;
    }
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  const Shape s = a.shape();
  if (begin >= end || end > s.cols) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + s.str());
  }
  const std::size_t w = end - begin;
  const auto av = a.data();
  std::vector<double> v(s.rows * w);
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < w; ++c) v[r * w + c] = av[r * s.cols + begin + c];
  return make_result({s.rows, w}, std::move(v), {a}, [s, begin, w](Node& n) {
    double* g = parent_grad(n, 0);
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < w; ++c) g[r * s.cols + begin + c] += n.grad[r * w + c];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  const Shape s = a.shape();
  if (begin >= end || end > s.rows) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + s.str());
  }
  const auto av = a.data();
  std::vector<double> v(av.begin() + begin * s.cols, av.begin() + end * s.cols);
  return make_result({end - begin, s.cols}, std::move(v), {a}, [s, begin](Node& n) {
    double* g = parent_grad(n, 0) + begin * s.cols;
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor diagonal(const Tensor& a) {
  const Shape s = a.shape();
  const std::size_t d = std::min(s.rows, s.cols);
  const auto av = a.data();
  std::vector<double> v(d);
  for (std::size_t i = 0; i < d; ++i) v[i] = av[i * s.cols + i];
  return make_result({d, 1}, std::move(v), {a}, [s, d](Node& n) {
    double* g = parent_grad(n, 0);
    for (std::size_t i = 0; i < d; ++i) g[i * s.cols + i] += n.grad[i];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids) {
  const Shape s = table.shape();
  if (ids.empty()) throw ContractError("gather_rows with no ids");
  const auto tv = table.data();
  std::vector<double> v(ids.size() * s.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= s.rows) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) +
                           " out of range for table " + s.str());
    }
    std::copy_n(tv.begin() + static_cast<std::size_t>(ids[i]) * s.cols, s.cols,
                v.begin() + i * s.cols);
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return make_result({ids.size(), s.cols}, std::move(v), {table}, [s, idv](Node& n) {
    double* g = parent_grad(n, 0);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      double* row = g + static_cast<std::size_t>(idv[i]) * s.cols;
      for (std::size_t c = 0; c < s.cols; ++c) row[c] += n.grad[i * s.cols + c];
    }
  });
}

Tensor segment_mean(const Tensor& a, std::span<const std::size_t> offsets) {
  const Shape s = a.shape();
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != s.rows) {
    throw DimensionError("segment_mean: offsets must start at 0 and end at " +
                         std::to_string(s.rows));
  }
  const std::size_t segs = offsets.size() - 1;
  const auto av = a.data();
  std::vector<double> v(segs * s.cols, 0.0);
  for (std::size_t k = 0; k < segs; ++k) {
    if (offsets[k + 1] <= offsets[k]) throw DimensionError("segment_mean: empty segment");
    const double inv = 1.0 / static_cast<double>(offsets[k + 1] - offsets[k]);
    for (std::size_t r = offsets[k]; r < offsets[k + 1]; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) v[k * s.cols + c] += av[r * s.cols + c];
    for (std::size_t c = 0; c < s.cols; ++c) v[k * s.cols + c] *= inv;
  }
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return make_result({segs, s.cols}, std::move(v), {a}, [s, off](Node& n) {
    double* g = parent_grad(n, 0);
    for (std::size_t k = 0; k + 1 < off.size(); ++k) {
      const double inv = 1.0 / static_cast<double>(off[k + 1] - off[k]);
      for (std::size_t r = off[k]; r < off[k + 1]; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) g[r * s.cols + c] += n.grad[k * s.cols + c] * inv;
    }
  });
}

Tensor normalize_rows(const Tensor& a) { return div(a, l2_norm_axis(a, 1)); }

}  // namespace cvlp::ad
