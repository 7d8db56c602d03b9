#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mbttbf/nn/parameters.hpp"
#include "mbttbf/nn/tensor.hpp"

namespace mbttbf::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode recording of one forward pass. Every op appends a node with
/// its value and a closure that pushes the node's gradient to its inputs
/// and to any parameters it read.
template <typename T>
class Tape {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;

  Tape() = default;
  // Backward closures capture `this`.
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(Tensor<T> value, int stride = 1) { return push(std::move(value), stride, false, {}); }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  int stride(Var v) const { return nodes_.at(v.id).stride; }
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }
  std::size_t size() const { return nodes_.size(); }
  /// Hash of every rectifier sign and max-pool choice made so far. Two passes
  /// with equal signatures took the same piecewise-linear branch.
  std::uint64_t branch_signature() const { return signature_; }

  // ------------------------------------------------------------------ ops

  /// Stride-1 convolution with symmetric zero padding (odd kernels keep the
  /// spatial size). Weight shape {out, in, k, k}; bias shape {out}.
  Var conv2d(Var xv, Parameter<T>& weight, Parameter<T>& bias) {
    const Tensor<T>& x = value(xv);
    const int cout = weight.shape[0], cin = weight.shape[1], k = weight.shape[2];
    if (cin != x.channels)
      throw AlignmentError(weight.name + ": expects " + std::to_string(cin) + " channels, got " +
                           std::to_string(x.channels));
    const int h = x.height, w = x.width, hw = h * w, kk = cin * k * k;
    Tensor<T> out(cout, h, w);
    Buffer<T> cols;
    if (k == 1) {
      MapM(out.data.data(), cout, hw).noalias() =
          CMapM(weight.value.data(), cout, kk) * CMapM(x.data.data(), kk, hw);
    } else {
      cols = im2col(x, k);
      MapM(out.data.data(), cout, hw).noalias() = CMapM(weight.value.data(), cout, kk) * CMapM(cols.data(), kk, hw);
    }
    for (int o = 0; o < cout; ++o) {
      T* row = out.channel(o);
      const T b = bias.value[o];
      for (int i = 0; i < hw; ++i) row[i] += b;
    }
    Parameter<T>* wp = &weight;
    Parameter<T>* bp = &bias;
    const int xid = xv.id;
    return push(std::move(out), stride(xv), true,
                [this, xid, wp, bp, cout, kk, k, hw, cols = std::move(cols)](int self) {
                  Node& n = nodes_[self];
                  CMapM dy(n.grad.data.data(), cout, hw);
                  const T* src = k == 1 ? nodes_[xid].value.data.data() : cols.data();
                  CMapM c(src, kk, hw);
                  if (!wp->frozen) MapM(wp->grad.data(), cout, kk).noalias() += dy * c.transpose();
                  if (!bp->frozen)
                    for (int o = 0; o < cout; ++o) bp->grad[o] += dy.row(o).sum();
                  Node& xn = nodes_[xid];
                  if (!xn.requires_grad) return;
                  if (k == 1) {
                    MapM(xn.grad.data.data(), kk, hw).noalias() += CMapM(wp->value.data(), cout, kk).transpose() * dy;
                  } else {
                    Buffer<T> dcols(static_cast<std::size_t>(kk) * hw);
                    MapM(dcols.data(), kk, hw).noalias() = CMapM(wp->value.data(), cout, kk).transpose() * dy;
                    col2im_add(dcols, k, xn.grad);
                  }
                });
  }

  Var relu(Var xv) {
    Tensor<T> out = value(xv);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      T& v = out.data[i];
      if (v > T(0)) {
        signature_ = (signature_ ^ (i + 1)) * 1099511628211ULL;
      } else {
        v = T(0);
      }
    }
    signature_ = (signature_ ^ out.data.size()) * 1099511628211ULL;
    const int xid = xv.id;
    return push(std::move(out), stride(xv), requires_grad(xv), [this, xid](int self) {
      Node& n = nodes_[self];
      Node& xn = nodes_[xid];
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (n.value.data[i] > T(0)) xn.grad.data[i] += n.grad.data[i];
    });
  }

  Var sigmoid(Var xv) {
    Tensor<T> out = value(xv);
    for (T& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    const int xid = xv.id;
    return push(std::move(out), stride(xv), requires_grad(xv), [this, xid](int self) {
      Node& n = nodes_[self];
      Node& xn = nodes_[xid];
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        const T s = n.value.data[i];
        xn.grad.data[i] += n.grad.data[i] * s * (T(1) - s);
      }
    });
  }

  /// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
  Var maxpool2(Var xv) {
    const Tensor<T>& x = value(xv);
    Tensor<T> out(x.channels, x.height / 2, x.width / 2);
    std::vector<int> arg(out.size());
    std::size_t o = 0;
    for (int c = 0; c < x.channels; ++c)
      for (int y = 0; y < out.height; ++y)
        for (int xx = 0; xx < out.width; ++xx, ++o) {
          int best = -1;
          T bv = -std::numeric_limits<T>::infinity();
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int idx = (c * x.height + 2 * y + dy) * x.width + 2 * xx + dx;
              if (x.data[idx] > bv) {
                bv = x.data[idx];
                best = idx;
              }
            }
          out.data[o] = bv;
          arg[o] = best;
          signature_ = (signature_ ^ static_cast<std::uint64_t>(best)) * 1099511628211ULL;
        }
    const int xid = xv.id;
    return push(std::move(out), stride(xv) * 2, requires_grad(xv), [this, xid, arg = std::move(arg)](int self) {
      Node& n = nodes_[self];
      Node& xn = nodes_[xid];
      for (std::size_t i = 0; i < arg.size(); ++i) xn.grad.data[arg[i]] += n.grad.data[i];
    });
  }

  /// Bilinear upsampling by an integer factor, half-pixel aligned, edges clamped.
  Var upsample(Var xv, int factor) {
    if (factor == 1) return xv;
    const Tensor<T>& x = value(xv);
    const auto ys = interp_table(x.height, factor);
    const auto xs = interp_table(x.width, factor);
    Tensor<T> out(x.channels, x.height * factor, x.width * factor);
    for (int c = 0; c < x.channels; ++c) {
      const T* in = x.channel(c);
      T* dst = out.channel(c);
      for (int oy = 0; oy < out.height; ++oy) {
        const auto& wy = ys[oy];
        for (int ox = 0; ox < out.width; ++ox) {
          const auto& wx = xs[ox];
          dst[oy * out.width + ox] = wy.w0 * (wx.w0 * in[wy.i0 * x.width + wx.i0] + wx.w1 * in[wy.i0 * x.width + wx.i1]) +
                                     wy.w1 * (wx.w0 * in[wy.i1 * x.width + wx.i0] + wx.w1 * in[wy.i1 * x.width + wx.i1]);
        }
      }
    }
    const int xid = xv.id;
    return push(std::move(out), stride(xv) / factor, requires_grad(xv), [this, xid, ys, xs](int self) {
      Node& n = nodes_[self];
      Node& xn = nodes_[xid];
      const int iw = xn.value.width, ow = n.value.width;
      for (int c = 0; c < n.value.channels; ++c) {
        const T* g = n.grad.channel(c);
        T* dst = xn.grad.channel(c);
        for (int oy = 0; oy < n.value.height; ++oy) {
          const auto& wy = ys[oy];
          for (int ox = 0; ox < ow; ++ox) {
            const auto& wx = xs[ox];
            const T v = g[oy * ow + ox];
            dst[wy.i0 * iw + wx.i0] += wy.w0 * wx.w0 * v;
            dst[wy.i0 * iw + wx.i1] += wy.w0 * wx.w1 * v;
            dst[wy.i1 * iw + wx.i0] += wy.w1 * wx.w0 * v;
            dst[wy.i1 * iw + wx.i1] += wy.w1 * wx.w1 * v;
          }
        }
      }
    });
  }

  /// Mean over non-overlapping factor x factor blocks.
  Var avgpool(Var xv, int factor) {
    if (factor == 1) return xv;
    const Tensor<T>& x = value(xv);
    if (x.height % factor || x.width % factor) throw AlignmentError("avgpool factor does not divide grid");
    Tensor<T> out(x.channels, x.height / factor, x.width / factor);
    const T inv = T(1) / T(factor * factor);
    for (int c = 0; c < x.channels; ++c)
      for (int y = 0; y < x.height; ++y)
        for (int xx = 0; xx < x.width; ++xx) out.at(c, y / factor, xx / factor) += x.at(c, y, xx) * inv;
    const int xid = xv.id;
    return push(std::move(out), stride(xv) * factor, requires_grad(xv), [this, xid, factor, inv](int self) {
      Node& n = nodes_[self];
      Node& xn = nodes_[xid];
      for (int c = 0; c < xn.value.channels; ++c)
        for (int y = 0; y < xn.value.height; ++y)
          for (int xx = 0; xx < xn.value.width; ++xx) xn.grad.at(c, y, xx) += n.grad.at(c, y / factor, xx / factor) * inv;
    });
  }

  /// Bring a feature grid to another stride: bilinear up, block-average down.
  Var resample(Var xv, int target_stride) {
    const int s = stride(xv);
    if (s == target_stride) return xv;
    if (s > target_stride) {
      if (s % target_stride) throw AlignmentError("incompatible strides");
      return upsample(xv, s / target_stride);
    }
    if (target_stride % s) throw AlignmentError("incompatible strides");
    return avgpool(xv, target_stride / s);
  }

  Var add(Var av, Var bv) {
    const Tensor<T>& a = value(av);
    const Tensor<T>& b = value(bv);
    if (!a.same_shape(b) || stride(av) != stride(bv))
      throw AlignmentError("add: " + a.shape_string() + " vs " + b.shape_string());
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
    const int aid = av.id, bid = bv.id;
    return push(std::move(out), stride(av), requires_grad(av) || requires_grad(bv), [this, aid, bid](int self) {
      for (int id : {aid, bid}) {
        Node& in = nodes_[id];
        if (!in.requires_grad) continue;
        const Node& n = nodes_[self];
        for (std::size_t i = 0; i < n.grad.size(); ++i) in.grad.data[i] += n.grad.data[i];
      }
    });
  }

  Var concat(const std::vector<Var>& parts) {
    const Tensor<T>& first = value(parts.at(0));
    int channels = 0;
    bool rg = false;
    for (Var p : parts) {
      const Tensor<T>& t = value(p);
      if (t.height != first.height || t.width != first.width || stride(p) != stride(parts[0]))
        throw AlignmentError("concat: spatial mismatch");
      channels += t.channels;
      rg = rg || requires_grad(p);
    }
    Tensor<T> out(channels, first.height, first.width);
    std::size_t off = 0;
    for (Var p : parts) {
      const auto& d = value(p).data;
      std::copy(d.begin(), d.end(), out.data.begin() + static_cast<long>(off));
      off += d.size();
    }
    std::vector<int> ids;
    for (Var p : parts) ids.push_back(p.id);
    return push(std::move(out), stride(parts[0]), rg, [this, ids](int self) {
      std::size_t off = 0;
      for (int id : ids) {
        Node& in = nodes_[id];
        const std::size_t n = in.value.size();
        if (in.requires_grad) {
          const Node& me = nodes_[self];
          for (std::size_t i = 0; i < n; ++i) in.grad.data[i] += me.grad.data[off + i];
        }
        off += n;
      }
    });
  }

  /// sum_k gate[k] (.) inputs[k], each single-channel gate shared by all
  /// channels of its input.
  Var gated_sum(Var gate_v, const std::vector<Var>& inputs) {
    const Tensor<T>& gate = value(gate_v);
    if (gate.channels != static_cast<int>(inputs.size())) throw AlignmentError("gated_sum: gate/input count mismatch");
    const Tensor<T>& m0 = value(inputs.at(0));
    Tensor<T> out(m0.channels, m0.height, m0.width);
    bool rg = requires_grad(gate_v);
    const std::size_t plane = m0.plane();
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const Tensor<T>& m = value(inputs[k]);
      if (!m.same_shape(m0) || gate.height != m.height || gate.width != m.width)
        throw AlignmentError("gated_sum: shape mismatch");
      rg = rg || requires_grad(inputs[k]);
      const T* g = gate.channel(static_cast<int>(k));
      for (int c = 0; c < m.channels; ++c) {
        const T* src = m.channel(c);
        T* dst = out.channel(c);
        for (std::size_t i = 0; i < plane; ++i) dst[i] += g[i] * src[i];
      }
    }
    std::vector<int> ids;
    for (Var v : inputs) ids.push_back(v.id);
    const int gid = gate_v.id;
    return push(std::move(out), stride(inputs[0]), rg, [this, gid, ids, plane](int self) {
      const Node& me = nodes_[self];
      Node& gn = nodes_[gid];
      for (std::size_t k = 0; k < ids.size(); ++k) {
        Node& mn = nodes_[ids[k]];
        const T* g = gn.value.channel(static_cast<int>(k));
        for (int c = 0; c < me.value.channels; ++c) {
          const T* dy = me.grad.channel(c);
          const T* m = mn.value.channel(c);
          if (mn.requires_grad) {
            T* dm = mn.grad.channel(c);
            for (std::size_t i = 0; i < plane; ++i) dm[i] += g[i] * dy[i];
          }
          if (gn.requires_grad) {
            T* dg = gn.grad.channel(static_cast<int>(k));
            for (std::size_t i = 0; i < plane; ++i) dg[i] += m[i] * dy[i];
          }
        }
      }
    });
  }

  /// Scalar mean((x - target)^2).
  Var mse(Var xv, const Tensor<T>& target) {
    const Tensor<T>& x = value(xv);
    if (!x.same_shape(target))
      throw AlignmentError("mse: prediction " + x.shape_string() + " vs target " + target.shape_string());
    T acc{};
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T d = x.data[i] - target.data[i];
      acc += d * d;
    }
    const T n = static_cast<T>(std::max<std::size_t>(1, x.size()));
    Tensor<T> out(1, 1, 1, acc / n);
    const int xid = xv.id;
    return push(std::move(out), 0, requires_grad(xv), [this, xid, target, n](int self) {
      Node& xn = nodes_[xid];
      const T g = nodes_[self].grad.data[0] * T(2) / n;
      for (std::size_t i = 0; i < xn.value.size(); ++i) xn.grad.data[i] += g * (xn.value.data[i] - target.data[i]);
    });
  }

  /// a + weight * b for same-shaped values (used to assemble scalar losses).
  Var axpy(Var av, Var bv, T weight) {
    const Tensor<T>& a = value(av);
    const Tensor<T>& b = value(bv);
    if (!a.same_shape(b)) throw AlignmentError("axpy: shape mismatch");
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += weight * b.data[i];
    const int aid = av.id, bid = bv.id;
    return push(std::move(out), stride(av), requires_grad(av) || requires_grad(bv), [this, aid, bid, weight](int self) {
      const Node& me = nodes_[self];
      Node& an = nodes_[aid];
      Node& bn = nodes_[bid];
      for (std::size_t i = 0; i < me.grad.size(); ++i) {
        if (an.requires_grad) an.grad.data[i] += me.grad.data[i];
        if (bn.requires_grad) bn.grad.data[i] += weight * me.grad.data[i];
      }
    });
  }

  Var zero_scalar() { return push(Tensor<T>(1, 1, 1), 0, false, {}); }

  /// Accumulates d(out)/d(parameters) for a scalar `out` into Parameter::grad.
  void backward(Var out) {
    if (value(out).size() != 1) throw AlignmentError("backward needs a scalar");
    for (auto& n : nodes_)
      if (n.requires_grad) n.grad = Tensor<T>(n.value.channels, n.value.height, n.value.width);
    if (!nodes_[out.id].requires_grad) return;
    nodes_[out.id].grad.data[0] = T(1);
    for (int i = out.id; i >= 0; --i)
      if (nodes_[i].requires_grad && nodes_[i].back) nodes_[i].back(i);
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    int stride = 1;
    bool requires_grad = false;
    std::function<void(int)> back;
  };

  struct Interp {
    int i0, i1;
    T w0, w1;
  };

  static std::vector<Interp> interp_table(int n, int factor) {
    std::vector<Interp> t(static_cast<std::size_t>(n) * factor);
    for (int o = 0; o < n * factor; ++o) {
      double src = (o + 0.5) / factor - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(n - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, n - 1);
      const T frac = static_cast<T>(src - i0);
      t[o] = {i0, i1, T(1) - frac, frac};
    }
    return t;
  }

  static Buffer<T> im2col(const Tensor<T>& x, int k) {
    const int h = x.height, w = x.width, pad = k / 2;
    Buffer<T> cols(static_cast<std::size_t>(x.channels) * k * k * h * w, T{});
    std::size_t row = 0;
    for (int c = 0; c < x.channels; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++row) {
          T* dst = cols.data() + row * h * w;
          const int dy = ky - pad, dx = kx - pad;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            const T* src = x.channel(c) + sy * w;
            for (int xx = x0; xx < x1; ++xx) dst[y * w + xx] = src[xx + dx];
          }
        }
    return cols;
  }

  static void col2im_add(const Buffer<T>& cols, int k, Tensor<T>& dx) {
    const int h = dx.height, w = dx.width, pad = k / 2;
    std::size_t row = 0;
    for (int c = 0; c < dx.channels; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++row) {
          const T* src = cols.data() + row * h * w;
          const int dy = ky - pad, dxo = kx - pad;
          const int x0 = std::max(0, -dxo), x1 = std::min(w, w - dxo);
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            T* dst = dx.channel(c) + sy * w;
            for (int xx = x0; xx < x1; ++xx) dst[xx + dxo] += src[y * w + xx];
          }
        }
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  Var push(Tensor<T> value, int stride, bool requires_grad, std::function<void(int)> back) {
    nodes_.push_back({std::move(value), {}, stride, requires_grad, std::move(back)});
    return {static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::uint64_t signature_ = 14695981039346656037ULL;
};

}  // namespace mbttbf::nn
