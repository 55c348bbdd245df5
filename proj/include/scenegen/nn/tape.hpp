#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "scenegen/distributions.hpp"
#include "scenegen/nn/gemm.hpp"
#include "scenegen/nn/tensor.hpp"

namespace scenegen::nn {

// Reverse-mode autodiff over dense tensors. Ops append nodes; backward()
// walks the tape in reverse. Leaves may point at external storage: parameter
// leaves accumulate their gradient into an external sink so batch gradients
// build up across multiple tapes.
//
// Shape errors are construction-time exceptions, never runtime surprises.
template <typename S>
class Tape {
 public:
  using Var = int;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- leaves -------------------------------------------------------------

  Var leaf(const Tensor<S>* value, Tensor<S>* grad_sink) {
    if (grad_sink && !grad_sink->same_shape(*value))
      throw std::invalid_argument("Tape::leaf: grad sink shape mismatch");
    nodes_.push_back(Node{});
    Node& n = nodes_.back();
    n.value = value;
    n.grad_sink = grad_sink;
    n.needs_grad = grad_sink != nullptr;
    return static_cast<Var>(nodes_.size()) - 1;
  }

  Var constant(Tensor<S> value) {
    nodes_.push_back(Node{});
    Node& n = nodes_.back();
    n.owned = std::move(value);
    n.value = &n.owned;
    n.needs_grad = false;
    return static_cast<Var>(nodes_.size()) - 1;
  }

  Var constant_ref(const Tensor<S>* value) { return leaf(value, nullptr); }

  // --- access -------------------------------------------------------------

  const Tensor<S>& val(Var v) const { return *nodes_.at(v).value; }
  bool needs_grad(Var v) const { return nodes_.at(v).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node (zeros until backward reaches it).
  Tensor<S>& grad(Var v) {
    Node& n = nodes_.at(v);
    if (n.grad_sink) return *n.grad_sink;
    if (n.grad.numel() == 0) n.grad = Tensor<S>::zeros(n.value->shape);
    return n.grad;
  }

  // --- elementwise and structural ops --------------------------------------

  Var add(Var a, Var b) {
    check_same_shape("add", a, b);
    Tensor<S> out = val(a);
    const Tensor<S>& vb = val(b);
    for (int i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
    return unary_binary_node(std::move(out), {a, b}, [a, b](Tape& t, Var self) {
      const Tensor<S>& g = t.grad(self);
      if (t.needs_grad(a)) t.accumulate(a, g.data.data());
      if (t.needs_grad(b)) t.accumulate(b, g.data.data());
    });
  }

  Var mul(Var a, Var b) {
    check_same_shape("mul", a, b);
    Tensor<S> out = val(a);
    const Tensor<S>& vb = val(b);
    for (int i = 0; i < out.numel(); ++i) out.data[i] *= vb.data[i];
    return unary_binary_node(std::move(out), {a, b}, [a, b](Tape& t, Var self) {
      const Tensor<S>& g = t.grad(self);
      if (t.needs_grad(a)) {
        const Tensor<S>& vb = t.val(b);
        Tensor<S>& ga = t.grad(a);
        for (int i = 0; i < ga.numel(); ++i) ga.data[i] += g.data[i] * vb.data[i];
      }
      if (t.needs_grad(b)) {
        const Tensor<S>& va = t.val(a);
        Tensor<S>& gb = t.grad(b);
        for (int i = 0; i < gb.numel(); ++i) gb.data[i] += g.data[i] * va.data[i];
      }
    });
  }

  Var scale(Var a, S c) {
    Tensor<S> out = val(a);
    for (S& v : out.data) v *= c;
    return unary_binary_node(std::move(out), {a}, [a, c](Tape& t, Var self) {
      const Tensor<S>& g = t.grad(self);
      if (!t.needs_grad(a)) return;
      Tensor<S>& ga = t.grad(a);
      for (int i = 0; i < ga.numel(); ++i) ga.data[i] += c * g.data[i];
    });
  }

  Var relu(Var a) {
    Tensor<S> out = val(a);
    for (S& v : out.data) v = v > S(0) ? v : S(0);
    return unary_binary_node(std::move(out), {a}, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<S>& g = t.grad(self);
      const Tensor<S>& x = t.val(a);
      Tensor<S>& ga = t.grad(a);
      for (int i = 0; i < ga.numel(); ++i)
        if (x.data[i] > S(0)) ga.data[i] += g.data[i];
    });
  }

  Var sigmoid(Var a) {
    Tensor<S> out = val(a);
    for (S& v : out.data) v = S(1) / (S(1) + std::exp(-v));
    return unary_binary_node(std::move(out), {a}, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<S>& g = t.grad(self);
      const Tensor<S>& y = t.val(self);
      Tensor<S>& ga = t.grad(a);
      for (int i = 0; i < ga.numel(); ++i)
        ga.data[i] += g.data[i] * y.data[i] * (S(1) - y.data[i]);
    });
  }

  Var tanh_(Var a) {
    Tensor<S> out = val(a);
    for (S& v : out.data) v = std::tanh(v);
    return unary_binary_node(std::move(out), {a}, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<S>& g = t.grad(self);
      const Tensor<S>& y = t.val(self);
      Tensor<S>& ga = t.grad(a);
      for (int i = 0; i < ga.numel(); ++i)
        ga.data[i] += g.data[i] * (S(1) - y.data[i] * y.data[i]);
    });
  }

  // Channel slice of a [C,H,W] tensor.
  Var slice_ch(Var a, int c0, int c1) {
    const Tensor<S>& x = val(a);
    if (x.rank() != 3 || c0 < 0 || c1 <= c0 || c1 > x.dim(0))
      throw std::invalid_argument("slice_ch: bad channel range for " + x.shape_str());
    const int hw = x.dim(1) * x.dim(2);
    Tensor<S> out({c1 - c0, x.dim(1), x.dim(2)});
    std::copy(x.data.begin() + std::size_t(c0) * hw, x.data.begin() + std::size_t(c1) * hw,
              out.data.begin());
    return unary_binary_node(std::move(out), {a}, [a, c0, hw](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<S>& g = t.grad(self);
      Tensor<S>& ga = t.grad(a);
      S* dst = ga.data.data() + std::size_t(c0) * hw;
      for (int i = 0; i < g.numel(); ++i) dst[i] += g.data[i];
    });
  }

  // Concatenation of 1-D vectors.
  Var concat_vec(const std::vector<Var>& parts) {
    int total = 0;
    for (Var p : parts) {
      if (val(p).rank() != 1) throw std::invalid_argument("concat_vec: parts must be vectors");
      total += val(p).numel();
    }
    Tensor<S> out({total});
    int off = 0;
    for (Var p : parts) {
      const Tensor<S>& v = val(p);
      std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
      off += v.numel();
    }
    return unary_binary_node(std::move(out), parts, [parts](Tape& t, Var self) {
      const Tensor<S>& g = t.grad(self);
      int off = 0;
      for (Var p : parts) {
        const int n = t.val(p).numel();
        if (t.needs_grad(p)) {
          Tensor<S>& gp = t.grad(p);
          for (int i = 0; i < n; ++i) gp.data[i] += g.data[off + i];
        }
        off += n;
      }
    });
  }

  // --- reductions and indexing ---------------------------------------------

  Var avg_pool(Var a) {
    const Tensor<S>& x = val(a);
    if (x.rank() != 3) throw std::invalid_argument("avg_pool: expected [C,H,W]");
    const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor<S> out({c});
    for (int ci = 0; ci < c; ++ci) {
      S acc = S(0);
      const S* p = x.data.data() + std::size_t(ci) * hw;
      for (int i = 0; i < hw; ++i) acc += p[i];
      out.data[ci] = acc / static_cast<S>(hw);
    }
    return unary_binary_node(std::move(out), {a}, [a, c, hw](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<S>& g = t.grad(self);
      Tensor<S>& ga = t.grad(a);
      for (int ci = 0; ci < c; ++ci) {
        const S gv = g.data[ci] / static_cast<S>(hw);
        S* p = ga.data.data() + std::size_t(ci) * hw;
        for (int i = 0; i < hw; ++i) p[i] += gv;
      }
    });
  }

  // Feature column at one spatial bin of a [C,H,W] tensor.
  Var index_hw(Var a, int row, int col) {
    const Tensor<S>& x = val(a);
    if (x.rank() != 3) throw std::invalid_argument("index_hw: expected [C,H,W]");
    if (row < 0 || row >= x.dim(1) || col < 0 || col >= x.dim(2))
      throw std::invalid_argument("index_hw: bin out of range");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<S> out({c});
    for (int ci = 0; ci < c; ++ci) out.data[ci] = x.data[(std::size_t(ci) * h + row) * w + col];
    return unary_binary_node(std::move(out), {a}, [a, c, h, w, row, col](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<S>& g = t.grad(self);
      Tensor<S>& ga = t.grad(a);
      for (int ci = 0; ci < c; ++ci) ga.data[(std::size_t(ci) * h + row) * w + col] += g.data[ci];
    });
  }

  Var sum_all(Var a) {
    const Tensor<S>& x = val(a);
    S acc = S(0);
    for (S v : x.data) acc += v;
    return unary_binary_node(Tensor<S>::scalar(acc), {a}, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const S g = t.grad(self).data[0];
      Tensor<S>& ga = t.grad(a);
      for (int i = 0; i < ga.numel(); ++i) ga.data[i] += g;
    });
  }

  // Weighted sum of scalar vars: sum_i coeff_i * x_i.
  Var weighted_sum(const std::vector<Var>& xs, const std::vector<S>& coeffs) {
    if (xs.size() != coeffs.size()) throw std::invalid_argument("weighted_sum: size mismatch");
    S acc = S(0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (val(xs[i]).numel() != 1) throw std::invalid_argument("weighted_sum: non-scalar term");
      acc += coeffs[i] * val(xs[i]).data[0];
    }
    return unary_binary_node(Tensor<S>::scalar(acc), xs, [xs, coeffs](Tape& t, Var self) {
      const S g = t.grad(self).data[0];
      for (std::size_t i = 0; i < xs.size(); ++i)
        if (t.needs_grad(xs[i])) t.grad(xs[i]).data[0] += g * coeffs[i];
    });
  }

  Var sum_scalars(const std::vector<Var>& xs) {
    return weighted_sum(xs, std::vector<S>(xs.size(), S(1)));
  }

  // --- dense layers ----------------------------------------------------------

  // y = W x + b for vectors; W is [out, in], b optional.
  Var linear(Var x, Var w, Var b) {
    const Tensor<S>& xv = val(x);
    const Tensor<S>& wv = val(w);
    if (xv.rank() != 1 || wv.rank() != 2 || wv.dim(1) != xv.dim(0))
      throw std::invalid_argument("linear: shape mismatch " + wv.shape_str() + " * " + xv.shape_str());
    const int out_n = wv.dim(0), in_n = wv.dim(1);
    if (b >= 0 && (val(b).rank() != 1 || val(b).dim(0) != out_n))
      throw std::invalid_argument("linear: bias shape mismatch");
    Tensor<S> out({out_n});
    for (int o = 0; o < out_n; ++o) {
      S acc = b >= 0 ? val(b).data[o] : S(0);
      const S* wrow = wv.data.data() + std::size_t(o) * in_n;
      for (int i = 0; i < in_n; ++i) acc += wrow[i] * xv.data[i];
      out.data[o] = acc;
    }
    std::vector<Var> ins = {x, w};
    if (b >= 0) ins.push_back(b);
    return unary_binary_node(std::move(out), ins, [x, w, b, out_n, in_n](Tape& t, Var self) {
      const Tensor<S>& g = t.grad(self);
      if (t.needs_grad(w)) {
        const Tensor<S>& xv = t.val(x);
        Tensor<S>& gw = t.grad(w);
        for (int o = 0; o < out_n; ++o) {
          S* grow = gw.data.data() + std::size_t(o) * in_n;
          const S gv = g.data[o];
          for (int i = 0; i < in_n; ++i) grow[i] += gv * xv.data[i];
        }
      }
      if (b >= 0 && t.needs_grad(b)) {
        Tensor<S>& gb = t.grad(b);
        for (int o = 0; o < out_n; ++o) gb.data[o] += g.data[o];
      }
      if (t.needs_grad(x)) {
        const Tensor<S>& wv = t.val(w);
        Tensor<S>& gx = t.grad(x);
        for (int o = 0; o < out_n; ++o) {
          const S gv = g.data[o];
          const S* wrow = wv.data.data() + std::size_t(o) * in_n;
          for (int i = 0; i < in_n; ++i) gx.data[i] += gv * wrow[i];
        }
      }
    });
  }

  // Same-size 2-D convolution with zero padding (pad = kernel/2).
  //
  // x is [Cin,H,W]; the weight tensor is [Cout, w_in_total, k, k] and the
  // input channels bind to weight channels [w_in_offset, w_in_offset + Cin).
  // This lets one weight tensor serve inputs that are presented in slices
  // (e.g. a cached map part and a per-step dynamic part).
  Var conv2d(Var x, Var w, Var b, int kernel, int w_in_offset = 0) {
    const Tensor<S>& xv = val(x);
    const Tensor<S>& wv = val(w);
    if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(2) != kernel || wv.dim(3) != kernel)
      throw std::invalid_argument("conv2d: bad shapes " + xv.shape_str() + " " + wv.shape_str());
    if (kernel % 2 != 1) throw std::invalid_argument("conv2d: kernel must be odd");
    const int cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), cout = wv.dim(0);
    if (w_in_offset < 0 || w_in_offset + cin > wv.dim(1))
      throw std::invalid_argument("conv2d: weight channel slice out of range");
    if (b >= 0 && (val(b).rank() != 1 || val(b).dim(0) != cout))
      throw std::invalid_argument("conv2d: bias shape mismatch");

    Tensor<S> out({cout, h, wd});
    conv_forward(xv, wv, b >= 0 ? &val(b) : nullptr, kernel, w_in_offset, out);
    std::vector<Var> ins = {x, w};
    if (b >= 0) ins.push_back(b);
    return unary_binary_node(std::move(out), ins,
                             [x, w, b, kernel, w_in_offset](Tape& t, Var self) {
                               t.conv_backward(x, w, b, kernel, w_in_offset, self);
                             });
  }

  // Group normalization over a [C,H,W] tensor: per-group zero mean / unit
  // variance, then per-channel affine.
  Var group_norm(Var x, Var gamma, Var beta, int groups, S eps = S(1e-5)) {
    const Tensor<S>& xv = val(x);
    if (xv.rank() != 3) throw std::invalid_argument("group_norm: expected [C,H,W]");
    const int c = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
    if (groups <= 0 || c % groups != 0)
      throw std::invalid_argument("group_norm: groups must divide channels");
    if (val(gamma).numel() != c || val(beta).numel() != c)
      throw std::invalid_argument("group_norm: affine shape mismatch");
    const int gsz = c / groups;

    Tensor<S> out(xv.shape);
    std::vector<S> mean(groups), inv_std(groups);
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = std::size_t(g) * gsz * hw;
      const std::size_t n = std::size_t(gsz) * hw;
      S mu = S(0);
      for (std::size_t i = 0; i < n; ++i) mu += xv.data[base + i];
      mu /= static_cast<S>(n);
      S var = S(0);
      for (std::size_t i = 0; i < n; ++i) {
        const S d = xv.data[base + i] - mu;
        var += d * d;
      }
      var /= static_cast<S>(n);
      mean[g] = mu;
      inv_std[g] = S(1) / std::sqrt(var + eps);
    }
    const Tensor<S>& gv = val(gamma);
    const Tensor<S>& bv = val(beta);
    for (int ci = 0; ci < c; ++ci) {
      const int g = ci / gsz;
      const S* src = xv.data.data() + std::size_t(ci) * hw;
      S* dst = out.data.data() + std::size_t(ci) * hw;
      for (int i = 0; i < hw; ++i)
        dst[i] = gv.data[ci] * (src[i] - mean[g]) * inv_std[g] + bv.data[ci];
    }
    return unary_binary_node(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, groups, gsz, c, hw, mean, inv_std](Tape& t, Var self) {
          const Tensor<S>& g = t.grad(self);
          const Tensor<S>& xv = t.val(x);
          const Tensor<S>& gv = t.val(gamma);
          const bool need_x = t.needs_grad(x);
          if (t.needs_grad(gamma) || t.needs_grad(beta)) {
            Tensor<S>& ggamma = t.grad(gamma);
            Tensor<S>& gbeta = t.grad(beta);
            for (int ci = 0; ci < c; ++ci) {
              const int grp = ci / gsz;
              const S* gp = g.data.data() + std::size_t(ci) * hw;
              const S* xp = xv.data.data() + std::size_t(ci) * hw;
              S sg = S(0), sgx = S(0);
              for (int i = 0; i < hw; ++i) {
                sg += gp[i];
                sgx += gp[i] * (xp[i] - mean[grp]) * inv_std[grp];
              }
              gbeta.data[ci] += sg;
              ggamma.data[ci] += sgx;
            }
          }
          if (!need_x) return;
          Tensor<S>& gx = t.grad(x);
          const std::size_t n = std::size_t(gsz) * hw;
          for (int grp = 0; grp < groups; ++grp) {
            // dxhat = g * gamma (per channel); reduce over the group.
            S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
            for (int ci = grp * gsz; ci < (grp + 1) * gsz; ++ci) {
              const S* gp = g.data.data() + std::size_t(ci) * hw;
              const S* xp = xv.data.data() + std::size_t(ci) * hw;
              for (int i = 0; i < hw; ++i) {
                const S dxh = gp[i] * gv.data[ci];
                const S xh = (xp[i] - mean[grp]) * inv_std[grp];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xh;
              }
            }
            const S inv_n = S(1) / static_cast<S>(n);
            for (int ci = grp * gsz; ci < (grp + 1) * gsz; ++ci) {
              const S* gp = g.data.data() + std::size_t(ci) * hw;
              const S* xp = xv.data.data() + std::size_t(ci) * hw;
              S* dst = gx.data.data() + std::size_t(ci) * hw;
              for (int i = 0; i < hw; ++i) {
                const S dxh = gp[i] * gv.data[ci];
                const S xh = (xp[i] - mean[grp]) * inv_std[grp];
                dst[i] += inv_std[grp] * (dxh - inv_n * sum_dxhat - xh * inv_n * sum_dxhat_xhat);
              }
            }
          }
        });
  }

  // --- loss heads -------------------------------------------------------------

  // Negative log softmax probability of index `idx`.
  Var nll_categorical(Var logits, int idx) {
    const Tensor<S>& lv = val(logits);
    if (idx < 0 || idx >= lv.numel()) throw std::invalid_argument("nll_categorical: index range");
    const double lse = logits_lse(lv);
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(lse - static_cast<double>(lv.data[idx])));
    return unary_binary_node(std::move(out), {logits}, [logits, idx, lse](Tape& t, Var self) {
      if (!t.needs_grad(logits)) return;
      const S g = t.grad(self).data[0];
      const Tensor<S>& lv = t.val(logits);
      Tensor<S>& gl = t.grad(logits);
      for (int i = 0; i < lv.numel(); ++i) {
        const S p = static_cast<S>(std::exp(static_cast<double>(lv.data[i]) - lse));
        gl.data[i] += g * (p - (i == idx ? S(1) : S(0)));
      }
    });
  }

  // Hard-mined cross-entropy: softmax restricted to the k highest logits plus
  // the target bin. k >= numel reproduces the plain cross-entropy.
  Var nll_categorical_topk(Var logits, int idx, int k) {
    const Tensor<S>& lv = val(logits);
    const int n = lv.numel();
    if (idx < 0 || idx >= n) throw std::invalid_argument("nll_categorical_topk: index range");
    if (k < 1) throw std::invalid_argument("nll_categorical_topk: k must be positive");
    std::vector<int> subset = topk_indices(lv, std::min(k, n));
    if (std::find(subset.begin(), subset.end(), idx) == subset.end()) subset.push_back(idx);
    double best = -1e300;
    for (int i : subset) best = std::max(best, static_cast<double>(lv.data[i]));
    double acc = 0.0;
    for (int i : subset) acc += std::exp(static_cast<double>(lv.data[i]) - best);
    const double lse = best + std::log(acc);
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(lse - static_cast<double>(lv.data[idx])));
    return unary_binary_node(
        std::move(out), {logits}, [logits, idx, subset, lse](Tape& t, Var self) {
          if (!t.needs_grad(logits)) return;
          const S g = t.grad(self).data[0];
          const Tensor<S>& lv = t.val(logits);
          Tensor<S>& gl = t.grad(logits);
          for (int i : subset) {
            const S p = static_cast<S>(std::exp(static_cast<double>(lv.data[i]) - lse));
            gl.data[i] += g * (p - (i == idx ? S(1) : S(0)));
          }
        });
  }

  // Mixture negative log likelihoods over raw head outputs; gradients come
  // from the distributions module's analytic formulas.
  Var nll_box_size(Var raw, int components, double width, double length) {
    return dist_nll(
        raw, lognormal2_raw_size(components),
        [components, width, length](std::span<const double> r) {
          return lognormal2_from_raw(r, components).log_prob(width, length);
        },
        [components, width, length](std::span<const double> r, std::span<double> g, double s) {
          lognormal2_grad_raw(r, components, width, length, g, s);
        });
  }

  Var nll_heading(Var raw, int components, double theta) {
    return dist_nll(
        raw, vm_mixture_raw_size(components),
        [components, theta](std::span<const double> r) {
          return vm_mixture_from_raw(r, components).log_prob(theta);
        },
        [components, theta](std::span<const double> r, std::span<double> g, double s) {
          vm_mixture_grad_raw(r, components, theta, g, s);
        });
  }

  Var nll_velocity(Var raw, int components, double speed, double omega) {
    return dist_nll(
        raw, velocity_raw_size(components),
        [components, speed, omega](std::span<const double> r) {
          return velocity_from_raw(r, components).log_prob(speed, omega);
        },
        [components, speed, omega](std::span<const double> r, std::span<double> g, double s) {
          velocity_grad_raw(r, components, speed, omega, g, s);
        });
  }

  // --- backward ---------------------------------------------------------------

  void backward(Var loss, S seed = S(1)) {
    if (val(loss).numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    grad(loss).data[0] += seed;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && n.needs_grad && (n.grad.numel() > 0 || n.grad_sink)) n.back(*this, i);
    }
  }

 private:
  struct Node {
    Tensor<S> owned;
    const Tensor<S>* value = nullptr;
    Tensor<S>* grad_sink = nullptr;
    Tensor<S> grad;
    bool needs_grad = false;
    std::function<void(Tape&, Var)> back;
  };

  std::deque<Node> nodes_;  // deque: node addresses stay stable as the tape grows

  void check_same_shape(const char* op, Var a, Var b) const {
    if (!val(a).same_shape(val(b)))
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + val(a).shape_str() +
                                  " vs " + val(b).shape_str());
  }

  Var unary_binary_node(Tensor<S> out, const std::vector<Var>& ins,
                        std::function<void(Tape&, Var)> back) {
    bool needs = false;
    for (Var v : ins) needs = needs || nodes_.at(v).needs_grad;
    nodes_.push_back(Node{});
    Node& n = nodes_.back();
    n.owned = std::move(out);
    n.value = &n.owned;
    n.needs_grad = needs;
    if (needs) n.back = std::move(back);
    return static_cast<Var>(nodes_.size()) - 1;
  }

  void accumulate(Var v, const S* src) {
    Tensor<S>& g = grad(v);
    for (int i = 0; i < g.numel(); ++i) g.data[i] += src[i];
  }

  static double logits_lse(const Tensor<S>& lv) {
    double best = -1e300;
    for (S v : lv.data) best = std::max(best, static_cast<double>(v));
    double acc = 0.0;
    for (S v : lv.data) acc += std::exp(static_cast<double>(v) - best);
    return best + std::log(acc);
  }

  // Indices of the k largest logits; ties resolve to the lower index so the
  // selection is deterministic.
  static std::vector<int> topk_indices(const Tensor<S>& lv, int k) {
    std::vector<int> idx(lv.numel());
    for (int i = 0; i < lv.numel(); ++i) idx[i] = i;
    auto cmp = [&](int a, int b) {
      if (lv.data[a] != lv.data[b]) return lv.data[a] > lv.data[b];
      return a < b;
    };
    if (k < lv.numel()) {
      std::nth_element(idx.begin(), idx.begin() + k, idx.end(), cmp);
      idx.resize(k);
    }
    return idx;
  }

  template <typename LogProb, typename GradFn>
  Var dist_nll(Var raw, int expected_size, LogProb log_prob, GradFn grad_fn) {
    const Tensor<S>& rv = val(raw);
    if (rv.rank() != 1 || rv.numel() != expected_size)
      throw std::invalid_argument("dist_nll: raw head size mismatch, got " + rv.shape_str());
    std::vector<double> r(rv.data.begin(), rv.data.end());
    const double logp = log_prob(std::span<const double>(r));
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(-logp));
    return unary_binary_node(std::move(out), {raw}, [raw, grad_fn](Tape& t, Var self) {
      if (!t.needs_grad(raw)) return;
      const double g = static_cast<double>(t.grad(self).data[0]);
      const Tensor<S>& rv = t.val(raw);
      std::vector<double> r(rv.data.begin(), rv.data.end());
      std::vector<double> gr(r.size(), 0.0);
      grad_fn(std::span<const double>(r), std::span<double>(gr), -g);
      Tensor<S>& graw = t.grad(raw);
      for (std::size_t i = 0; i < gr.size(); ++i) graw.data[i] += static_cast<S>(gr[i]);
    });
  }

  // --- convolution internals ----------------------------------------------

  // cols[(c*k + di)*k + dj][row*W + col] = x[c][row + di - pad][col + dj - pad]
  static void im2col(const Tensor<S>& x, int kernel, std::vector<S>& cols) {
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int pad = kernel / 2;
    const std::size_t hw = std::size_t(h) * w;
    cols.assign(std::size_t(cin) * kernel * kernel * hw, S(0));
    for (int c = 0; c < cin; ++c) {
      const S* plane = x.data.data() + std::size_t(c) * hw;
      for (int di = 0; di < kernel; ++di) {
        for (int dj = 0; dj < kernel; ++dj) {
          S* dst_row = cols.data() + (std::size_t(c) * kernel * kernel +
                                      std::size_t(di) * kernel + dj) * hw;
          const int dy = di - pad, dx = dj - pad;
          const int r0 = std::max(0, -dy), r1 = std::min(h, h - dy);
          const int c0 = std::max(0, -dx), c1 = std::min(w, w - dx);
          for (int r = r0; r < r1; ++r) {
            const S* src = plane + std::size_t(r + dy) * w + (c0 + dx);
            S* dst = dst_row + std::size_t(r) * w + c0;
            std::copy(src, src + (c1 - c0), dst);
          }
        }
      }
    }
  }

  static void col2im_add(const std::vector<S>& cols, int kernel, Tensor<S>& gx) {
    const int cin = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
    const int pad = kernel / 2;
    const std::size_t hw = std::size_t(h) * w;
    for (int c = 0; c < cin; ++c) {
      S* plane = gx.data.data() + std::size_t(c) * hw;
      for (int di = 0; di < kernel; ++di) {
        for (int dj = 0; dj < kernel; ++dj) {
          const S* src_row = cols.data() + (std::size_t(c) * kernel * kernel +
                                            std::size_t(di) * kernel + dj) * hw;
          const int dy = di - pad, dx = dj - pad;
          const int r0 = std::max(0, -dy), r1 = std::min(h, h - dy);
          const int c0 = std::max(0, -dx), c1 = std::min(w, w - dx);
          for (int r = r0; r < r1; ++r) {
            S* dst = plane + std::size_t(r + dy) * w + (c0 + dx);
            const S* src = src_row + std::size_t(r) * w + c0;
            for (int i = 0; i < c1 - c0; ++i) dst[i] += src[i];
          }
        }
      }
    }
  }

  // Packs the weight slice [Cout, cin, k, k] starting at input channel
  // `w_in_offset` out of the full [Cout, w_in_total, k, k] tensor.
  static void pack_w(const Tensor<S>& w, int cin, int w_in_offset, std::vector<S>& packed) {
    const int cout = w.dim(0), total = w.dim(1), kk = w.dim(2) * w.dim(3);
    packed.resize(std::size_t(cout) * cin * kk);
    for (int co = 0; co < cout; ++co) {
      const S* src = w.data.data() + (std::size_t(co) * total + w_in_offset) * kk;
      std::copy(src, src + std::size_t(cin) * kk, packed.begin() + std::size_t(co) * cin * kk);
    }
  }

  void conv_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b, int kernel,
                    int w_in_offset, Tensor<S>& out) {
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0);
    const int n = h * wd, kdim = cin * kernel * kernel;
    thread_local std::vector<S> cols, packed;
    im2col(x, kernel, cols);
    const S* wptr = w.data.data();
    if (w_in_offset != 0 || w.dim(1) != cin) {
      pack_w(w, cin, w_in_offset, packed);
      wptr = packed.data();
    }
    gemm(false, false, cout, n, kdim, S(1), wptr, kdim, cols.data(), n, S(0), out.data.data(), n);
    if (b != nullptr) {
      for (int co = 0; co < cout; ++co) {
        const S bv = b->data[co];
        S* row = out.data.data() + std::size_t(co) * n;
        for (int i = 0; i < n; ++i) row[i] += bv;
      }
    }
  }

  void conv_backward(Var x, Var w, Var b, int kernel, int w_in_offset, Var self) {
    const Tensor<S>& g = grad_const(self);
    const Tensor<S>& xv = val(x);
    const Tensor<S>& wv = val(w);
    const int cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), cout = wv.dim(0);
    const int n = h * wd, kdim = cin * kernel * kernel, kk = kernel * kernel;

    if (b >= 0 && needs_grad(b)) {
      Tensor<S>& gb = grad(b);
      for (int co = 0; co < cout; ++co) {
        const S* row = g.data.data() + std::size_t(co) * n;
        S acc = S(0);
        for (int i = 0; i < n; ++i) acc += row[i];
        gb.data[co] += acc;
      }
    }
    if (needs_grad(w)) {
      thread_local std::vector<S> cols, dw;
      im2col(xv, kernel, cols);
      dw.assign(std::size_t(cout) * kdim, S(0));
      gemm(false, true, cout, kdim, n, S(1), g.data.data(), n, cols.data(), n, S(0), dw.data(), kdim);
      Tensor<S>& gw = grad(w);
      for (int co = 0; co < cout; ++co) {
        S* dst = gw.data.data() + (std::size_t(co) * wv.dim(1) + w_in_offset) * kk;
        const S* src = dw.data() + std::size_t(co) * kdim;
        for (int i = 0; i < kdim; ++i) dst[i] += src[i];
      }
    }
    if (needs_grad(x)) {
      thread_local std::vector<S> packed, dcols;
      const S* wptr = wv.data.data();
      if (w_in_offset != 0 || wv.dim(1) != cin) {
        pack_w(wv, cin, w_in_offset, packed);
        wptr = packed.data();
      }
      dcols.assign(std::size_t(kdim) * n, S(0));
      gemm(true, false, kdim, n, cout, S(1), wptr, kdim, g.data.data(), n, S(0), dcols.data(), n);
      col2im_add(dcols, kernel, grad(x));
    }
  }

  const Tensor<S>& grad_const(Var v) { return grad(v); }
};

}  // namespace scenegen::nn
