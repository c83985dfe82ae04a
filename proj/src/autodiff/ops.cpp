#include "dmad/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dmad::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat view(const std::vector<double>& v, const Shape& s) {
  return ConstMapMat(v.data(), static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
}

MapMat view(std::vector<double>& v, const Shape& s) {
  return MapMat(v.data(), static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
}

void same_tape(const Tensor& a, const Tensor& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
}

enum class Broadcast { kSame, kRow, kCol, kScalar };

Broadcast broadcast_mode(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::kSame;
  if (b.rows == 1 && b.cols == 1) return Broadcast::kScalar;
  if (b.rows == 1 && b.cols == a.cols) return Broadcast::kRow;
  if (b.cols == 1 && b.rows == a.rows) return Broadcast::kCol;
  throw ShapeError(std::string(op) + ": cannot broadcast " + b.str() + " onto " + a.str());
}

std::size_t bindex(Broadcast mode, std::size_t i, std::size_t cols) {
  switch (mode) {
    case Broadcast::kSame: return i;
    case Broadcast::kRow: return i % cols;
    case Broadcast::kCol: return i / cols;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

// f(x, y) forward; dfx(x, y) and dfy(x, y) are the local partials.
template <class F, class Dx, class Dy>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, Dx dfx, Dy dfy) {
  same_tape(a, b);
  const Shape sa = a.shape();
  const Broadcast mode = broadcast_mode(sa, b.shape(), name);
  const auto av = a.value();
  const auto bv = b.value();
  std::vector<double> out(sa.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[bindex(mode, i, sa.cols)]);
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().emplace(sa, std::move(out), {ia, ib}, [=](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    const auto& x = t.node(ia).value;
    const auto& y = t.node(ib).value;
    if (t.node(ia).requires_grad) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfx(x[i], y[bindex(mode, i, sa.cols)]);
    }
    if (t.node(ib).requires_grad) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t j = bindex(mode, i, sa.cols);
        gb[j] += g[i] * dfy(x[i], y[j]);
      }
    }
  });
}

// f(x) forward, df(x, fx) local derivative.
template <class F, class D>
Tensor unary(const Tensor& a, F f, D df) {
  const auto av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  const NodeId ia = a.id();
  return a.tape().emplace(a.shape(), std::move(out), {ia}, [=](Tape& t, NodeId self) {
    const auto& n = t.node(self);
    const auto& x = t.node(ia).value;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * df(x[i], n.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  same_tape(a, b);
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows) throw ShapeError("matmul: " + sa.str() + " x " + sb.str());
  const Shape so{sa.rows, sb.cols};
  std::vector<double> out(so.size());
  const auto& av = a.tape().node(a.id()).value;
  const auto& bv = b.tape().node(b.id()).value;
  // Fixed summation order: every output element accumulates its products in
  // ascending k, independent of the operand sizes. Masked attention then
  // matches physically separate attention bit for bit.
  for (std::size_t i = 0; i < sa.rows; ++i) {
    double* o = out.data() + i * so.cols;
    for (std::size_t k = 0; k < sa.cols; ++k) {
      const double aik = av[i * sa.cols + k];
      const double* br = bv.data() + k * sb.cols;
      for (std::size_t j = 0; j < so.cols; ++j) o[j] += aik * br[j];
    }
  }
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().emplace(so, std::move(out), {ia, ib}, [=](Tape& t, NodeId self) {
    const auto g = view(t.node(self).grad, so);
    if (t.node(ia).requires_grad) {
      view(t.grad_buffer(ia), sa).noalias() += g * view(t.node(ib).value, sb).transpose();
    }
    if (t.node(ib).requires_grad) {
      view(t.grad_buffer(ib), sb).noalias() += view(t.node(ia).value, sa).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  const Shape sa = a.shape();
  const Shape so{sa.cols, sa.rows};
  std::vector<double> out(so.size());
  const auto av = a.value();
  for (std::size_t r = 0; r < sa.rows; ++r)
    for (std::size_t c = 0; c < sa.cols; ++c) out[c * sa.rows + r] = av[r * sa.cols + c];
  const NodeId ia = a.id();
  return a.tape().emplace(so, std::move(out), {ia}, [=](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < sa.rows; ++r)
      for (std::size_t c = 0; c < sa.cols; ++c) ga[r * sa.cols + c] += g[c * sa.rows + r];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape.size() != a.size()) {
    throw ShapeError("reshape: " + a.shape().str() + " -> " + shape.str());
  }
  std::vector<double> out(a.value().begin(), a.value().end());
  const NodeId ia = a.id();
  return a.tape().emplace(shape, std::move(out), {ia}, [=](Tape& t, NodeId self) {
    t.accumulate(ia, t.node(self).grad);
  });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor softmax(const Tensor& a, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
  const Shape s = a.shape();
  // Iterate over "lanes": rows for axis 1, columns for axis 0.
  const std::size_t lanes = axis == 1 ? s.rows : s.cols;
  const std::size_t len = axis == 1 ? s.cols : s.rows;
  const std::size_t stride = axis == 1 ? 1 : s.cols;
  auto base = [=](std::size_t lane) { return axis == 1 ? lane * s.cols : lane; };
  const auto av = a.value();
  std::vector<double> out(s.size());
  for (std::size_t l = 0; l < lanes; ++l) {
    const std::size_t b = base(l);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, av[b + k * stride]);
    if (!std::isfinite(mx)) throw std::invalid_argument("softmax: lane has no finite entry");
    double total = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      const double e = std::exp(av[b + k * stride] - mx);
      out[b + k * stride] = e;
      total += e;
    }
    for (std::size_t k = 0; k < len; ++k) out[b + k * stride] /= total;
  }
  const NodeId ia = a.id();
  return a.tape().emplace(s, std::move(out), {ia}, [=](Tape& t, NodeId self) {
    const auto& n = t.node(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t l = 0; l < lanes; ++l) {
      const std::size_t b = base(l);
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k) dot += n.grad[b + k * stride] * n.value[b + k * stride];
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t i = b + k * stride;
        ga[i] += n.value[i] * (n.grad[i] - dot);
      }
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  const Shape s = a.shape();
  const auto av = a.value();
  std::vector<double> out(s.size());
  for (std::size_t r = 0; r < s.rows; ++r) {
    const double* row = av.data() + r * s.cols;
    const double mx = *std::max_element(row, row + s.cols);
    double total = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) total += std::exp(row[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < s.cols; ++c) out[r * s.cols + c] = row[c] - lse;
  }
  const NodeId ia = a.id();
  return a.tape().emplace(s, std::move(out), {ia}, [=](Tape& t, NodeId self) {
    const auto& n = t.node(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < s.rows; ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < s.cols; ++c) gsum += n.grad[r * s.cols + c];
      for (std::size_t c = 0; c < s.cols; ++c) {
        const std::size_t i = r * s.cols + c;
        ga[i] += n.grad[i] - std::exp(n.value[i]) * gsum;
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  same_tape(x, gamma);
  same_tape(x, beta);
  const Shape s = x.shape();
  const Shape ps{1, s.cols};
  if (gamma.shape() != ps || beta.shape() != ps) {
    throw ShapeError("layer_norm: scale/shift must be " + ps.str());
  }
  const auto xv = x.value();
  const auto gv = gamma.value();
  const auto bv = beta.value();
  std::vector<double> xhat(s.size()), out(s.size()), inv_std(s.rows);
  const double n = static_cast<double>(s.cols);
  for (std::size_t r = 0; r < s.rows; ++r) {
    const double* row = xv.data() + r * s.cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) mu += row[c];
    mu /= n;
    double var = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= n;
    inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < s.cols; ++c) {
      const std::size_t i = r * s.cols + c;
      xhat[i] = (row[c] - mu) * inv_std[r];
      out[i] = gv[c] * xhat[i] + bv[c];
    }
  }
  const NodeId ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().emplace(
      s, std::move(out), {ix, ig, ib},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, NodeId self) {
        const auto& g = t.node(self).grad;
        const auto& gam = t.node(ig).value;
        if (t.node(ig).requires_grad) {
          auto& gg = t.grad_buffer(ig);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % s.cols] += g[i] * xhat[i];
        }
        if (t.node(ib).requires_grad) {
          auto& gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % s.cols] += g[i];
        }
        if (t.node(ix).requires_grad) {
          auto& gx = t.grad_buffer(ix);
          for (std::size_t r = 0; r < s.rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t c = 0; c < s.cols; ++c) {
              const std::size_t i = r * s.cols + c;
              const double gh = g[i] * gam[c];
              m1 += gh;
              m2 += gh * xhat[i];
            }
            m1 /= n;
            m2 /= n;
            for (std::size_t c = 0; c < s.cols; ++c) {
              const std::size_t i = r * s.cols + c;
              gx[i] += inv_std[r] * (g[i] * gam[c] - m1 - xhat[i] * m2);
            }
          }
        }
      });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  Tape& tape = parts.front().tape();
  Shape so = parts.front().shape();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    same_tape(parts.front(), parts[k]);
    const Shape& sk = parts[k].shape();
    if (axis == 0) {
      if (sk.cols != so.cols) throw ShapeError("concat rows: " + sk.str() + " vs " + so.str());
      so.rows += sk.rows;
    } else {
      if (sk.rows != so.rows) throw ShapeError("concat cols: " + sk.str() + " vs " + so.str());
      so.cols += sk.cols;
    }
  }
  std::vector<double> out(so.size());
  std::vector<NodeId> ids;
  std::vector<Shape> shapes;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto pv = p.value();
    const Shape sp = p.shape();
    if (axis == 0) {
      std::copy(pv.begin(), pv.end(), out.begin() + static_cast<std::ptrdiff_t>(offset * so.cols));
      offset += sp.rows;
    } else {
      for (std::size_t r = 0; r < sp.rows; ++r)
        std::copy_n(pv.data() + r * sp.cols, sp.cols, out.data() + r * so.cols + offset);
      offset += sp.cols;
    }
    ids.push_back(p.id());
    shapes.push_back(sp);
  }
  return tape.emplace(so, std::move(out), ids, [=](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const Shape& sp = shapes[k];
      if (t.node(ids[k]).requires_grad) {
        auto& gk = t.grad_buffer(ids[k]);
        if (axis == 0) {
          for (std::size_t i = 0; i < sp.size(); ++i) gk[i] += g[off * so.cols + i];
        } else {
          for (std::size_t r = 0; r < sp.rows; ++r)
            for (std::size_t c = 0; c < sp.cols; ++c) gk[r * sp.cols + c] += g[r * so.cols + off + c];
        }
      }
      off += axis == 0 ? sp.rows : sp.cols;
    }
  });
}

std::vector<Tensor> split(const Tensor& a, int axis, const std::vector<std::size_t>& sizes) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("split: axis must be 0 or 1");
  const Shape s = a.shape();
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total != (axis == 0 ? s.rows : s.cols)) {
    throw ShapeError("split: sizes do not cover " + s.str());
  }
  std::vector<Tensor> out;
  const auto av = a.value();
  const NodeId ia = a.id();
  std::size_t offset = 0;
  for (std::size_t len : sizes) {
    const Shape sp = axis == 0 ? Shape{len, s.cols} : Shape{s.rows, len};
    std::vector<double> v(sp.size());
    if (axis == 0) {
      std::copy_n(av.data() + offset * s.cols, sp.size(), v.begin());
    } else {
      for (std::size_t r = 0; r < s.rows; ++r)
        std::copy_n(av.data() + r * s.cols + offset, len, v.data() + r * len);
    }
    out.push_back(a.tape().emplace(sp, std::move(v), {ia}, [=](Tape& t, NodeId self) {
      const auto& g = t.node(self).grad;
      auto& ga = t.grad_buffer(ia);
      if (axis == 0) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[offset * s.cols + i] += g[i];
      } else {
        for (std::size_t r = 0; r < s.rows; ++r)
          for (std::size_t c = 0; c < len; ++c) ga[r * s.cols + offset + c] += g[r * len + c];
      }
    }));
    offset += len;
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& indices) {
  const Shape s = a.shape();
  for (std::size_t idx : indices) {
    if (idx >= s.rows) throw ShapeError("gather_rows: index out of range for " + s.str());
  }
  const Shape so{indices.size(), s.cols};
  std::vector<double> out(so.size());
  const auto av = a.value();
  for (std::size_t k = 0; k < indices.size(); ++k)
    std::copy_n(av.data() + indices[k] * s.cols, s.cols, out.data() + k * s.cols);
  const NodeId ia = a.id();
  return a.tape().emplace(so, std::move(out), {ia}, [=](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t k = 0; k < indices.size(); ++k)
      for (std::size_t c = 0; c < s.cols; ++c) ga[indices[k] * s.cols + c] += g[k * s.cols + c];
  });
}

Tensor sum(const Tensor& a, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("sum: axis must be 0 or 1");
  const Shape s = a.shape();
  const Shape so = axis == 0 ? Shape{1, s.cols} : Shape{s.rows, 1};
  std::vector<double> out(so.size(), 0.0);
  const auto av = a.value();
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) out[axis == 0 ? c : r] += av[r * s.cols + c];
  const NodeId ia = a.id();
  return a.tape().emplace(so, std::move(out), {ia}, [=](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) ga[r * s.cols + c] += g[axis == 0 ? c : r];
  });
}

Tensor mean(const Tensor& a, int axis) {
  const double n = static_cast<double>(axis == 0 ? a.rows() : a.cols());
  return scale(sum(a, axis), 1.0 / n);
}

Tensor sum_all(const Tensor& a) {
  double total = 0.0;
  for (double v : a.value()) total += v;
  const NodeId ia = a.id();
  return a.tape().emplace(Shape{1, 1}, {total}, {ia}, [](Tape& t, NodeId self) {
    const double g = t.node(self).grad[0];
    const NodeId in = t.node(self).inputs[0];
    for (double& x : t.grad_buffer(in)) x += g;
  });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor stop_gradient(const Tensor& a) {
  return a.tape().constant(a.shape(), std::vector<double>(a.value().begin(), a.value().end()));
}

}  // namespace dmad::ad
