#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "epg/common.hpp"

// Dense tensors with reverse-mode differentiation. Sequence activations are
// channel-major ([B, C, L]): channel rows are contiguous, so convolution,
// pooling and normalization reduce to straight-line kernels over the length
// axis. The same templates serve float (training) and double (gradient
// verification).

namespace epg::ad {

template <typename T>
struct TensorT {
  std::vector<int64_t> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int64_t> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel(shape)), fill);
  }
  static TensorT from(std::vector<int64_t> s, std::vector<T> d) {
    if (numel(s) != static_cast<int64_t>(d.size()))
      throw std::invalid_argument("tensor: shape does not match data length");
    TensorT t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
  }
  static int64_t numel(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d <= 0) throw std::invalid_argument("tensor: dimensions must be positive");
      n *= d;
    }
    return n;
  }
  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

template <typename T>
struct NodeT {
  TensorT<T> value;
  TensorT<T> grad;  // allocated on demand, same shape as value
  bool needs_grad = false;
  std::vector<std::shared_ptr<NodeT>> parents;
  std::function<void()> backprop;  // reads this->grad, accumulates into parents

  void ensure_grad() {
    if (grad.data.empty()) grad = TensorT<T>(value.shape);
  }
  void zero_grad() {
    ensure_grad();
    std::fill(grad.data.begin(), grad.data.end(), T(0));
  }
};

template <typename T>
using NodePtr = std::shared_ptr<NodeT<T>>;

// While an InferenceScope is alive, ops skip graph bookkeeping entirely so
// intermediate activations are freed as soon as they go out of scope.
inline bool& inference_mode_flag() {
  thread_local bool flag = false;
  return flag;
}
struct InferenceScope {
  InferenceScope() : prev_(inference_mode_flag()) { inference_mode_flag() = true; }
  ~InferenceScope() { inference_mode_flag() = prev_; }

 private:
  bool prev_;
};

template <typename T>
NodePtr<T> make_leaf(TensorT<T> value, bool needs_grad = false) {
  auto node = std::make_shared<NodeT<T>>();
  node->value = std::move(value);
  node->needs_grad = needs_grad && !inference_mode_flag();
  return node;
}

namespace detail {

template <typename T>
NodePtr<T> make_op(TensorT<T> value, std::vector<NodePtr<T>> parents) {
  auto node = std::make_shared<NodeT<T>>();
  node->value = std::move(value);
  if (!inference_mode_flag()) {
    for (const auto& p : parents) node->needs_grad = node->needs_grad || p->needs_grad;
    if (node->needs_grad) node->parents = std::move(parents);
  }
  return node;
}

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapC = Eigen::Map<const MatRM<T>>;

template <typename T>
using VecMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CVecMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using VecMap2 = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>, 0, Eigen::InnerStride<2>>;
template <typename T>
using CVecMap2 = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>, 0, Eigen::InnerStride<2>>;

// Valid output range [lo, hi) of o for one kernel tap: 0 <= o*stride + shift < L.
inline void tap_range(int64_t shift, int64_t stride, int64_t L, int64_t Lout, int64_t& lo,
                      int64_t& hi) {
  lo = shift < 0 ? (-shift + stride - 1) / stride : 0;
  hi = std::min(Lout, shift >= L ? int64_t(0) : (L - shift + stride - 1) / stride);
  if (hi < lo) hi = lo;
}

}  // namespace detail

// 1-D cross-correlation with "same" padding: output length ceil(L/stride).
// input [B, Cin, L], kernel [W, Cin, Cout], bias [Cout] -> [B, Cout, Lout].
template <typename T>
NodePtr<T> conv1d(const NodePtr<T>& input, const NodePtr<T>& kernel, const NodePtr<T>& bias,
                  int64_t stride) {
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv1d: stride must be 1 or 2");
  if (input->value.shape.size() != 3)
    throw std::invalid_argument("conv1d: input must be [B, C, L]");
  if (kernel->value.shape.size() != 3)
    throw std::invalid_argument("conv1d: kernel must be [W, Cin, Cout]");
  const int64_t B = input->value.dim(0), Ci = input->value.dim(1), L = input->value.dim(2);
  const int64_t W = kernel->value.dim(0), Co = kernel->value.dim(2);
  if (kernel->value.dim(1) != Ci)
    throw std::invalid_argument("conv1d: channel mismatch between input and kernel");
  if (bias->value.shape != std::vector<int64_t>{Co})
    throw std::invalid_argument("conv1d: bias must be [Cout]");

  const int64_t Lout = (L + stride - 1) / stride;
  const int64_t pad_total = std::max<int64_t>((Lout - 1) * stride + W - L, 0);
  const int64_t pad_left = pad_total / 2;

  TensorT<T> out({B, Co, Lout});
  {
    const T* kptr = kernel->value.data.data();
    const T* bptr = bias->value.data.data();
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < B; ++b) {
      const T* xb = input->value.data.data() + b * Ci * L;
      T* ob = out.data.data() + b * Co * Lout;
      for (int64_t co = 0; co < Co; ++co) {
        T* orow = ob + co * Lout;
        std::fill(orow, orow + Lout, bptr[co]);
        for (int64_t ci = 0; ci < Ci; ++ci) {
          const T* xrow = xb + ci * L;
          for (int64_t w = 0; w < W; ++w) {
            const T kv = kptr[(w * Ci + ci) * Co + co];
            const int64_t shift = w - pad_left;
            int64_t lo, hi;
            detail::tap_range(shift, stride, L, Lout, lo, hi);
            const int64_t len = hi - lo;
            if (len <= 0) continue;
            if (stride == 1) {
              detail::VecMap<T>(orow + lo, len) += kv * detail::CVecMap<T>(xrow + lo + shift, len);
            } else {
              detail::VecMap<T>(orow + lo, len) +=
                  kv * detail::CVecMap2<T>(xrow + lo * 2 + shift, len);
            }
          }
        }
      }
    }
  }

  auto node = detail::make_op<T>(std::move(out), {input, kernel, bias});
  if (node->needs_grad) {
    auto self = node.get();
    NodePtr<T> in = input, k = kernel, bs = bias;
    node->backprop = [self, in, k, bs, B, L, Ci, W, Co, Lout, stride, pad_left]() {
      const T* dout = self->grad.data.data();
      if (bs->needs_grad) {
        bs->ensure_grad();
        T* db = bs->grad.data.data();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t co = 0; co < Co; ++co) {
            const T* row = dout + (b * Co + co) * Lout;
            double acc = 0.0;
            for (int64_t o = 0; o < Lout; ++o) acc += row[o];
            db[co] += static_cast<T>(acc);
          }
      }
      const bool need_dk = k->needs_grad;
      const bool need_dx = in->needs_grad;
      if (!need_dk && !need_dx) return;
      if (need_dk) k->ensure_grad();
      if (need_dx) in->ensure_grad();

      // Per-batch kernel-gradient partials keep the reduction order fixed
      // regardless of thread count. Every slice is fully overwritten.
      const int64_t ks = W * Ci * Co;
      std::unique_ptr<T[]> partials;
      if (need_dk) partials.reset(new T[static_cast<size_t>(B * ks)]);
      const T* kptr = k->value.data.data();

#pragma omp parallel for schedule(static)
      for (int64_t b = 0; b < B; ++b) {
        const T* xb = in->value.data.data() + b * Ci * L;
        const T* dob = dout + b * Co * Lout;
        if (need_dk) {
          T* pk = partials.get() + b * ks;
          for (int64_t co = 0; co < Co; ++co) {
            const T* drow = dob + co * Lout;
            for (int64_t ci = 0; ci < Ci; ++ci) {
              const T* xrow = xb + ci * L;
              for (int64_t w = 0; w < W; ++w) {
                const int64_t shift = w - pad_left;
                int64_t lo, hi;
                detail::tap_range(shift, stride, L, Lout, lo, hi);
                const int64_t len = hi - lo;
                T acc = T(0);
                if (len > 0) {
                  if (stride == 1) {
                    acc = (detail::CVecMap<T>(drow + lo, len) *
                           detail::CVecMap<T>(xrow + lo + shift, len))
                              .sum();
                  } else {
                    acc = (detail::CVecMap<T>(drow + lo, len) *
                           detail::CVecMap2<T>(xrow + lo * 2 + shift, len))
                              .sum();
                  }
                }
                pk[(w * Ci + ci) * Co + co] = acc;
              }
            }
          }
        }
        if (need_dx) {
          T* dxb = in->grad.data.data() + b * Ci * L;
          for (int64_t ci = 0; ci < Ci; ++ci) {
            T* dxrow = dxb + ci * L;
            for (int64_t co = 0; co < Co; ++co) {
              const T* drow = dob + co * Lout;
              for (int64_t w = 0; w < W; ++w) {
                const T kv = kptr[(w * Ci + ci) * Co + co];
                const int64_t shift = w - pad_left;
                int64_t lo, hi;
                detail::tap_range(shift, stride, L, Lout, lo, hi);
                const int64_t len = hi - lo;
                if (len <= 0) continue;
                if (stride == 1) {
                  detail::VecMap<T>(dxrow + lo + shift, len) +=
                      kv * detail::CVecMap<T>(drow + lo, len);
                } else {
                  detail::VecMap2<T>(dxrow + lo * 2 + shift, len) +=
                      kv * detail::CVecMap<T>(drow + lo, len);
                }
              }
            }
          }
        }
      }
      if (need_dk) {
        T* dk = k->grad.data.data();
        for (int64_t b = 0; b < B; ++b) {
          const T* part = partials.get() + b * ks;
          for (int64_t i = 0; i < ks; ++i) dk[i] += part[i];
        }
      }
    };
  }
  return node;
}

// Per-window maximum with "same" padding (-inf); gradient routes to the
// first maximal index of each window.
template <typename T>
NodePtr<T> maxpool1d(const NodePtr<T>& input, int64_t width, int64_t stride) {
  if (width < 1) throw std::invalid_argument("maxpool1d: width must be >= 1");
  if (stride < 1) throw std::invalid_argument("maxpool1d: stride must be >= 1");
  if (input->value.shape.size() != 3)
    throw std::invalid_argument("maxpool1d: input must be [B, C, L]");
  const int64_t B = input->value.dim(0), C = input->value.dim(1), L = input->value.dim(2);
  const int64_t Lout = (L + stride - 1) / stride;
  const int64_t pad_total = std::max<int64_t>((Lout - 1) * stride + width - L, 0);
  const int64_t pad_left = pad_total / 2;

  TensorT<T> out({B, C, Lout});
  auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(B * C * Lout));
  {
    const T* x = input->value.data.data();
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const T* xrow = x + bc * L;
      T* orow = out.data.data() + bc * Lout;
      int32_t* arow = argmax->data() + bc * Lout;
      for (int64_t o = 0; o < Lout; ++o) {
        const int64_t base = o * stride - pad_left;
        T best = -std::numeric_limits<T>::infinity();
        int32_t best_l = -1;
        for (int64_t w = 0; w < width; ++w) {
          int64_t l = base + w;
          if (l < 0 || l >= L) continue;
          if (xrow[l] > best) {
            best = xrow[l];
            best_l = static_cast<int32_t>(l);
          }
        }
        orow[o] = best;
        arow[o] = best_l;
      }
    }
  }

  auto node = detail::make_op<T>(std::move(out), {input});
  if (node->needs_grad) {
    auto self = node.get();
    NodePtr<T> in = input;
    node->backprop = [self, in, argmax, B, C, L, Lout]() {
      if (!in->needs_grad) return;
      in->ensure_grad();
      const T* dout = self->grad.data.data();
      T* dx = in->grad.data.data();
#pragma omp parallel for schedule(static)
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* drow = dout + bc * Lout;
        const int32_t* arow = argmax->data() + bc * Lout;
        T* dxrow = dx + bc * L;
        for (int64_t o = 0; o < Lout; ++o)
          if (arow[o] >= 0) dxrow[arow[o]] += drow[o];
      }
    };
  }
  return node;
}

template <typename T>
NodePtr<T> relu(const NodePtr<T>& input) {
  TensorT<T> out = input->value;
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  auto node = detail::make_op<T>(std::move(out), {input});
  if (node->needs_grad) {
    auto self = node.get();
    NodePtr<T> in = input;
    node->backprop = [self, in]() {
      if (!in->needs_grad) return;
      in->ensure_grad();
      const auto& x = in->value.data;
      for (size_t i = 0; i < x.size(); ++i)
        if (x[i] > T(0)) in->grad.data[i] += self->grad.data[i];
    };
  }
  return node;
}

// Inverted dropout with a counter-based mask: the mask depends only on
// (key, element index), never on values or thread count.
template <typename T>
NodePtr<T> dropout(const NodePtr<T>& input, double rate, bool training, uint64_t key) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) {
    TensorT<T> out = input->value;
    auto node = detail::make_op<T>(std::move(out), {input});
    if (node->needs_grad) {
      auto self = node.get();
      NodePtr<T> in = input;
      node->backprop = [self, in]() {
        if (!in->needs_grad) return;
        in->ensure_grad();
        for (size_t i = 0; i < self->grad.data.size(); ++i) in->grad.data[i] += self->grad.data[i];
      };
    }
    return node;
  }

  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  const size_t n = input->value.data.size();
  auto mask = std::make_shared<std::vector<uint8_t>>(n);
  TensorT<T> out = input->value;
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(n); ++i) {
    uint8_t keep = counter_uniform(key, static_cast<uint64_t>(i)) >= rate;
    (*mask)[i] = keep;
    out.data[i] = keep ? out.data[i] * scale : T(0);
  }

  auto node = detail::make_op<T>(std::move(out), {input});
  if (node->needs_grad) {
    auto self = node.get();
    NodePtr<T> in = input;
    node->backprop = [self, in, mask, scale]() {
      if (!in->needs_grad) return;
      in->ensure_grad();
      for (size_t i = 0; i < self->grad.data.size(); ++i)
        if ((*mask)[i]) in->grad.data[i] += self->grad.data[i] * scale;
    };
  }
  return node;
}

// Batch normalization over batch x length per channel ([B, C, L] layout).
// In training mode the batch statistics are used and running statistics are
// updated in place.
template <typename T>
NodePtr<T> batchnorm1d(const NodePtr<T>& input, const NodePtr<T>& gamma, const NodePtr<T>& beta,
                       TensorT<T>* running_mean, TensorT<T>* running_var, double momentum,
                       double eps, bool training) {
  if (input->value.shape.size() != 3)
    throw std::invalid_argument("batchnorm1d: input must be [B, C, L]");
  const int64_t B = input->value.dim(0), C = input->value.dim(1), L = input->value.dim(2);
  if (gamma->value.shape != std::vector<int64_t>{C} || beta->value.shape != std::vector<int64_t>{C})
    throw std::invalid_argument("batchnorm1d: gamma/beta must be [C]");
  const int64_t n = B * L;

  auto mean = std::make_shared<std::vector<T>>(C);
  auto inv_std = std::make_shared<std::vector<T>>(C);
  const T* x = input->value.data.data();

  if (training) {
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c) {
      double sum = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const T* row = x + (b * C + c) * L;
        for (int64_t l = 0; l < L; ++l) sum += row[l];
      }
      const double m = sum / static_cast<double>(n);
      double sq = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const T* row = x + (b * C + c) * L;
        for (int64_t l = 0; l < L; ++l) {
          double d = row[l] - m;
          sq += d * d;
        }
      }
      const double v = sq / static_cast<double>(n);
      (*mean)[c] = static_cast<T>(m);
      (*inv_std)[c] = static_cast<T>(1.0 / std::sqrt(v + eps));
      if (running_mean && running_var) {
        running_mean->data[c] =
            static_cast<T>((1.0 - momentum) * running_mean->data[c] + momentum * m);
        running_var->data[c] =
            static_cast<T>((1.0 - momentum) * running_var->data[c] + momentum * v);
      }
    }
  } else {
    if (!running_mean || !running_var)
      throw std::invalid_argument("batchnorm1d: eval mode requires running statistics");
    for (int64_t c = 0; c < C; ++c) {
      (*mean)[c] = running_mean->data[c];
      (*inv_std)[c] =
          static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var->data[c]) + eps));
    }
  }

  TensorT<T> out({B, C, L});
  {
    const T* g = gamma->value.data.data();
    const T* bt = beta->value.data.data();
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const int64_t c = bc % C;
      const T* src = x + bc * L;
      T* dst = out.data.data() + bc * L;
      const T scale = g[c] * (*inv_std)[c];
      const T shift = bt[c] - (*mean)[c] * scale;
      for (int64_t l = 0; l < L; ++l) dst[l] = src[l] * scale + shift;
    }
  }

  auto node = detail::make_op<T>(std::move(out), {input, gamma, beta});
  if (node->needs_grad) {
    auto self = node.get();
    NodePtr<T> in = input, g = gamma, bt = beta;
    node->backprop = [self, in, g, bt, mean, inv_std, B, C, L, n, training]() {
      const T* dy = self->grad.data.data();
      const T* x = in->value.data.data();
      if (g->needs_grad) g->ensure_grad();
      if (bt->needs_grad) bt->ensure_grad();
      if (in->needs_grad) in->ensure_grad();
      T* dx = in->needs_grad ? in->grad.data.data() : nullptr;
      const double inv_n = 1.0 / static_cast<double>(n);

#pragma omp parallel for schedule(static)
      for (int64_t c = 0; c < C; ++c) {
        const T mu = (*mean)[c], is = (*inv_std)[c];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int64_t b = 0; b < B; ++b) {
          const T* dyr = dy + (b * C + c) * L;
          const T* xr = x + (b * C + c) * L;
          for (int64_t l = 0; l < L; ++l) {
            sum_dy += dyr[l];
            sum_dy_xhat += dyr[l] * (xr[l] - mu) * is;
          }
        }
        if (g->needs_grad) g->grad.data[c] += static_cast<T>(sum_dy_xhat);
        if (bt->needs_grad) bt->grad.data[c] += static_cast<T>(sum_dy);
        if (!dx) continue;
        const double gc_is = static_cast<double>(g->value.data[c]) * is;
        if (training) {
          for (int64_t b = 0; b < B; ++b) {
            const T* dyr = dy + (b * C + c) * L;
            const T* xr = x + (b * C + c) * L;
            T* dxr = dx + (b * C + c) * L;
            for (int64_t l = 0; l < L; ++l) {
              double xhat = (xr[l] - mu) * is;
              dxr[l] += static_cast<T>(
                  gc_is * (dyr[l] - inv_n * sum_dy - xhat * inv_n * sum_dy_xhat));
            }
          }
        } else {
          for (int64_t b = 0; b < B; ++b) {
            const T* dyr = dy + (b * C + c) * L;
            T* dxr = dx + (b * C + c) * L;
            for (int64_t l = 0; l < L; ++l) dxr[l] += static_cast<T>(gc_is * dyr[l]);
          }
        }
      }
    };
  }
  return node;
}

// Affine map: input [B, F], weights [F, K], bias [K] -> [B, K].
template <typename T>
NodePtr<T> dense(const NodePtr<T>& input, const NodePtr<T>& weights, const NodePtr<T>& bias) {
  if (input->value.shape.size() != 2) throw std::invalid_argument("dense: input must be [B, F]");
  const int64_t B = input->value.dim(0), F = input->value.dim(1);
  if (weights->value.shape.size() != 2 || weights->value.dim(0) != F)
    throw std::invalid_argument("dense: weights must be [F, K]");
  const int64_t K = weights->value.dim(1);
  if (bias->value.shape != std::vector<int64_t>{K})
    throw std::invalid_argument("dense: bias must be [K]");

  TensorT<T> out({B, K});
  detail::MapC<T> xm(input->value.data.data(), B, F);
  detail::MapC<T> wm(weights->value.data.data(), F, K);
  detail::MapM<T> outm(out.data.data(), B, K);
  outm.noalias() = xm * wm;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < K; ++k) out.data[b * K + k] += bias->value.data[k];

  auto node = detail::make_op<T>(std::move(out), {input, weights, bias});
  if (node->needs_grad) {
    auto self = node.get();
    NodePtr<T> in = input, w = weights, bs = bias;
    node->backprop = [self, in, w, bs, B, F, K]() {
      detail::MapC<T> dym(self->grad.data.data(), B, K);
      if (w->needs_grad) {
        w->ensure_grad();
        detail::MapC<T> xm(in->value.data.data(), B, F);
        detail::MapM<T> dwm(w->grad.data.data(), F, K);
        dwm.noalias() += xm.transpose() * dym;
      }
      if (bs->needs_grad) {
        bs->ensure_grad();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t k = 0; k < K; ++k) bs->grad.data[k] += self->grad.data[b * K + k];
      }
      if (in->needs_grad) {
        in->ensure_grad();
        detail::MapC<T> wm(w->value.data.data(), F, K);
        detail::MapM<T> dxm(in->grad.data.data(), B, F);
        dxm.noalias() += dym * wm.transpose();
      }
    };
  }
  return node;
}

template <typename T>
NodePtr<T> reshape(const NodePtr<T>& input, std::vector<int64_t> new_shape) {
  if (TensorT<T>::numel(new_shape) != input->value.size())
    throw std::invalid_argument("reshape: element count mismatch");
  TensorT<T> out;
  out.shape = std::move(new_shape);
  out.data = input->value.data;
  auto node = detail::make_op<T>(std::move(out), {input});
  if (node->needs_grad) {
    auto self = node.get();
    NodePtr<T> in = input;
    node->backprop = [self, in]() {
      if (!in->needs_grad) return;
      in->ensure_grad();
      for (size_t i = 0; i < self->grad.data.size(); ++i) in->grad.data[i] += self->grad.data[i];
    };
  }
  return node;
}

template <typename T>
NodePtr<T> add(const NodePtr<T>& a, const NodePtr<T>& b) {
  if (a->value.shape != b->value.shape) throw std::invalid_argument("add: shape mismatch");
  TensorT<T> out = a->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
  auto node = detail::make_op<T>(std::move(out), {a, b});
  if (node->needs_grad) {
    auto self = node.get();
    NodePtr<T> pa = a, pb = b;
    node->backprop = [self, pa, pb]() {
      for (auto& p : {pa, pb}) {
        if (!p->needs_grad) continue;
        p->ensure_grad();
        for (size_t i = 0; i < self->grad.data.size(); ++i) p->grad.data[i] += self->grad.data[i];
      }
    };
  }
  return node;
}

// Zero-pads trailing channels: [B, C, L] -> [B, new_channels, L].
template <typename T>
NodePtr<T> pad_channels(const NodePtr<T>& input, int64_t new_channels) {
  if (input->value.shape.size() != 3)
    throw std::invalid_argument("pad_channels: input must be [B, C, L]");
  const int64_t B = input->value.dim(0), C = input->value.dim(1), L = input->value.dim(2);
  if (new_channels < C) throw std::invalid_argument("pad_channels: cannot shrink channels");
  if (new_channels == C) return input;

  TensorT<T> out({B, new_channels, L});
  for (int64_t b = 0; b < B; ++b)
    std::copy(input->value.data.begin() + b * C * L, input->value.data.begin() + (b + 1) * C * L,
              out.data.begin() + b * new_channels * L);

  auto node = detail::make_op<T>(std::move(out), {input});
  if (node->needs_grad) {
    auto self = node.get();
    NodePtr<T> in = input;
    node->backprop = [self, in, B, C, L, new_channels]() {
      if (!in->needs_grad) return;
      in->ensure_grad();
      for (int64_t b = 0; b < B; ++b) {
        const T* src = self->grad.data.data() + b * new_channels * L;
        T* dst = in->grad.data.data() + b * C * L;
        for (int64_t i = 0; i < C * L; ++i) dst[i] += src[i];
      }
    };
  }
  return node;
}

// Numerically stabilized softmax of each row.
template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
  if (logits.shape.size() != 2) throw std::invalid_argument("softmax: logits must be [B, K]");
  const int64_t B = logits.dim(0), K = logits.dim(1);
  TensorT<T> probs({B, K});
  for (int64_t b = 0; b < B; ++b) {
    const T* row = logits.data.data() + b * K;
    T m = *std::max_element(row, row + K);
    double sum = 0.0;
    for (int64_t k = 0; k < K; ++k) sum += std::exp(static_cast<double>(row[k] - m));
    for (int64_t k = 0; k < K; ++k)
      probs.data[b * K + k] = static_cast<T>(std::exp(static_cast<double>(row[k] - m)) / sum);
  }
  return probs;
}

// Mean negative log-likelihood of the labeled class under a stabilized
// softmax. Returns the scalar loss node plus the probability matrix.
template <typename T>
std::pair<NodePtr<T>, TensorT<T>> softmax_cross_entropy(const NodePtr<T>& logits,
                                                        const std::vector<int>& labels) {
  const int64_t B = logits->value.dim(0), K = logits->value.dim(1);
  if (static_cast<int64_t>(labels.size()) != B)
    throw std::invalid_argument("softmax_cross_entropy: labels length must equal batch size");
  for (int y : labels)
    if (y < 0 || y >= K) throw std::invalid_argument("softmax_cross_entropy: label out of range");

  TensorT<T> probs = softmax(logits->value);
  double loss = 0.0;
  for (int64_t b = 0; b < B; ++b)
    loss -= std::log(std::max(static_cast<double>(probs.data[b * K + labels[b]]), 1e-300));
  loss /= static_cast<double>(B);

  TensorT<T> loss_t({1});
  loss_t.data[0] = static_cast<T>(loss);
  auto probs_shared = std::make_shared<TensorT<T>>(probs);
  auto labels_shared = std::make_shared<std::vector<int>>(labels);

  auto node = detail::make_op<T>(std::move(loss_t), {logits});
  if (node->needs_grad) {
    auto self = node.get();
    NodePtr<T> lg = logits;
    node->backprop = [self, lg, probs_shared, labels_shared, B, K]() {
      if (!lg->needs_grad) return;
      lg->ensure_grad();
      const T dl = self->grad.data[0] / static_cast<T>(B);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t k = 0; k < K; ++k) {
          T p = probs_shared->data[b * K + k];
          T target = (k == (*labels_shared)[b]) ? T(1) : T(0);
          lg->grad.data[b * K + k] += dl * (p - target);
        }
    };
  }
  return {node, probs};
}

// Sum of all elements; mostly for tests.
template <typename T>
NodePtr<T> sum(const NodePtr<T>& input) {
  TensorT<T> out({1});
  double s = 0.0;
  for (T v : input->value.data) s += v;
  out.data[0] = static_cast<T>(s);
  auto node = detail::make_op<T>(std::move(out), {input});
  if (node->needs_grad) {
    auto self = node.get();
    NodePtr<T> in = input;
    node->backprop = [self, in]() {
      if (!in->needs_grad) return;
      in->ensure_grad();
      for (auto& g : in->grad.data) g += self->grad.data[0];
    };
  }
  return node;
}

// Reverse-mode sweep from a scalar root. Gradients of every reachable node
// are zeroed at call start (fresh nodes lazily, via ensure_grad), then
// accumulated exactly once in reverse topological order. Interior buffers are
// released as soon as the sweep has consumed them, which keeps the peak
// working set near the persistent-parameter footprint; a graph is therefore
// single-use.
template <typename T>
void backward(const NodePtr<T>& loss) {
  if (loss->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");

  std::vector<NodeT<T>*> topo;
  std::unordered_set<NodeT<T>*> visited;
  std::vector<std::pair<NodeT<T>*, size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      NodeT<T>* parent = node->parents[idx].get();
      ++idx;
      if (parent->needs_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  // Only persistent leaves can carry stale gradients from a previous call.
  for (auto* n : topo)
    if (!n->grad.data.empty()) n->zero_grad();
  loss->ensure_grad();
  loss->grad.data[0] = T(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    NodeT<T>* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop();
    }
    if (!n->parents.empty()) {
      // Interior node: children already read value/grad; parents accumulate
      // into their own buffers from the closure's captures.
      n->grad = TensorT<T>();
      if (n != loss.get()) n->value = TensorT<T>();
    }
  }
}

// A trainable tensor with its optimizer state.
template <typename T>
struct ParamT {
  std::string name;
  NodePtr<T> node;
  bool trainable = true;
  TensorT<T> m, v;  // Adam moment accumulators
  int64_t steps = 0;

  static ParamT make(std::string name, TensorT<T> value) {
    ParamT p;
    p.name = std::move(name);
    p.node = make_leaf<T>(std::move(value), true);
    p.m = TensorT<T>(p.node->value.shape);
    p.v = TensorT<T>(p.node->value.shape);
    return p;
  }
};

using Param = ParamT<float>;

template <typename T>
void adam_step(const std::vector<ParamT<T>*>& params, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8) {
  for (auto* p : params) {
    if (!p->trainable) continue;
    p->node->ensure_grad();
    ++p->steps;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(p->steps));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(p->steps));
    auto& value = p->node->value.data;
    const auto& grad = p->node->grad.data;
    for (size_t i = 0; i < value.size(); ++i) {
      double g = grad[i];
      double m = beta1 * p->m.data[i] + (1.0 - beta1) * g;
      double v = beta2 * p->v.data[i] + (1.0 - beta2) * g * g;
      p->m.data[i] = static_cast<T>(m);
      p->v.data[i] = static_cast<T>(v);
      value[i] -= static_cast<T>(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
  }
}

// Keeps big graph buffers on the program heap instead of per-allocation mmap,
// so the alloc/free cycle of training steps does not round-trip the kernel.
// Idempotent; no-op on non-glibc platforms.
void tune_allocator_for_graphs();

// Checkpoint file: magic "CKPT", u16 version (=1), u32 tensor count, then per
// tensor u16 name length, name bytes, u32 rank, u64 dims, binary32 data.
struct NamedTensor {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> data;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace epg::ad
