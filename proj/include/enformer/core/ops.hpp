#pragma once

#include <cmath>
#include <cstring>
#include <limits>

#include "enformer/core/graph.hpp"
#include "enformer/core/tensor.hpp"

// Differentiable primitives. Conventions:
//  - images are NCHW, token sequences are (N, L, C)
//  - backward loops run in a fixed sequential order (no atomics), so
//    repeated backward passes over the same graph are bit-identical
//  - bilinear resampling uses half-pixel source centers with edge clamp;
//    this single convention is shared by models, data pipeline and metrics

namespace enformer {
namespace ops {

template <typename T>
Var<T> constant(Tensor<T> v) {
  return Var<T>(std::move(v), false);
}

// ---- elementwise ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  T* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] += bv[i];
  auto an = a.node(), bn = b.node();
  return make_op_node<T>(std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    const T* g = self.grad.data();
    if (an->requires_grad) {
      T* ga = an->grad.data();
      for (int64_t i = 0; i < self.grad.numel(); ++i) ga[i] += g[i];
    }
    if (bn->requires_grad) {
      T* gb = bn->grad.data();
      for (int64_t i = 0; i < self.grad.numel(); ++i) gb[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  T* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] -= bv[i];
  auto an = a.node(), bn = b.node();
  return make_op_node<T>(std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    const T* g = self.grad.data();
    if (an->requires_grad) {
      T* ga = an->grad.data();
      for (int64_t i = 0; i < self.grad.numel(); ++i) ga[i] += g[i];
    }
    if (bn->requires_grad) {
      T* gb = bn->grad.data();
      for (int64_t i = 0; i < self.grad.numel(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  T* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] *= bv[i];
  auto an = a.node(), bn = b.node();
  return make_op_node<T>(std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    const T* g = self.grad.data();
    if (an->requires_grad) {
      T* ga = an->grad.data();
      const T* bv2 = bn->value.data();
      for (int64_t i = 0; i < self.grad.numel(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (bn->requires_grad) {
      T* gb = bn->grad.data();
      const T* av2 = an->value.data();
      for (int64_t i = 0; i < self.grad.numel(); ++i) gb[i] += g[i] * av2[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "div");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  T* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] /= bv[i];
  auto an = a.node(), bn = b.node();
  return make_op_node<T>(std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    const T* g = self.grad.data();
    const T* av2 = an->value.data();
    const T* bv2 = bn->value.data();
    if (an->requires_grad) {
      T* ga = an->grad.data();
      for (int64_t i = 0; i < self.grad.numel(); ++i) ga[i] += g[i] / bv2[i];
    }
    if (bn->requires_grad) {
      T* gb = bn->grad.data();
      for (int64_t i = 0; i < self.grad.numel(); ++i) gb[i] -= g[i] * av2[i] / (bv2[i] * bv2[i]);
    }
  });
}

// y = a*x + b
template <typename T>
Var<T> affine(const Var<T>& x, T a, T b) {
  Tensor<T> out = x.value();
  T* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = a * o[i] + b;
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn, a](Node<T>& self) {
    T* gx = xn->grad.data();
    const T* g = self.grad.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) gx[i] += a * g[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  return affine(x, s, T(0));
}
template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return affine(x, T(1), c);
}
template <typename T>
Var<T> neg(const Var<T>& x) {
  return affine(x, T(-1), T(0));
}
template <typename T>
Var<T> one_minus(const Var<T>& x) {
  return affine(x, T(-1), T(1));
}

// ---- activations ----

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  T* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i)
    if (o[i] < T(0)) o[i] = T(0);
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn](Node<T>& self) {
    T* gx = xn->grad.data();
    const T* g = self.grad.data();
    const T* xv = xn->value.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      if (xv[i] > T(0)) gx[i] += g[i];
  });
}

template <typename T>
inline T sigmoid_scalar(T v) {
  if (v >= T(0)) {
    T e = std::exp(-v);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  T* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = sigmoid_scalar(o[i]);
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn](Node<T>& self) {
    T* gx = xn->grad.data();
    const T* g = self.grad.data();
    const T* s = self.value.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) gx[i] += g[i] * s[i] * (T(1) - s[i]);
  });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  Tensor<T> out = x.value();
  T* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] *= sigmoid_scalar(o[i]);
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn](Node<T>& self) {
    T* gx = xn->grad.data();
    const T* g = self.grad.data();
    const T* xv = xn->value.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) {
      T s = sigmoid_scalar(xv[i]);
      gx[i] += g[i] * s * (T(1) + xv[i] * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out = x.value();
  T* o = out.data();
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  for (int64_t i = 0; i < out.numel(); ++i)
    o[i] = T(0.5) * o[i] * (T(1) + T(std::erf(static_cast<double>(o[i]) * kInvSqrt2)));
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn](Node<T>& self) {
    T* gx = xn->grad.data();
    const T* g = self.grad.data();
    const T* xv = xn->value.data();
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    for (int64_t i = 0; i < self.grad.numel(); ++i) {
      double v = static_cast<double>(xv[i]);
      double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * T(cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> log_op(const Var<T>& x) {
  Tensor<T> out = x.value();
  T* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = std::log(o[i]);
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn](Node<T>& self) {
    T* gx = xn->grad.data();
    const T* g = self.grad.data();
    const T* xv = xn->value.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) gx[i] += g[i] / xv[i];
  });
}

// grad passes inside the closed interval, zero outside
template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  Tensor<T> out = x.value();
  T* o = out.data();
  // comparison form so NaN passes through instead of snapping to a bound
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = o[i] < lo ? lo : (o[i] > hi ? hi : o[i]);
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn, lo, hi](Node<T>& self) {
    T* gx = xn->grad.data();
    const T* g = self.grad.data();
    const T* xv = xn->value.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      if (xv[i] >= lo && xv[i] <= hi) gx[i] += g[i];
  });
}

// ---- reductions ----

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  T acc = T(0);
  const T* xv = x.value().data();
  for (int64_t i = 0; i < x.value().numel(); ++i) acc += xv[i];
  auto xn = x.node();
  return make_op_node<T>(Tensor<T>({1}, acc), {xn}, [xn](Node<T>& self) {
    T g = self.grad[0];
    T* gx = xn->grad.data();
    for (int64_t i = 0; i < xn->value.numel(); ++i) gx[i] += g;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  int64_t n = x.value().numel();
  if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
  return scale(sum_all(x), T(1) / T(n));
}

// ---- shape ops ----

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn](Node<T>& self) {
    T* gx = xn->grad.data();
    const T* g = self.grad.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) gx[i] += g[i];
  });
}

// (N,C,H,W) -> (N, H*W, C)
template <typename T>
Var<T> tokens_from_grid(const Var<T>& x) {
  const auto& v = x.value();
  if (v.rank() != 4) throw std::invalid_argument("tokens_from_grid: expected NCHW, got " + shape_str(v.shape()));
  int64_t N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3), L = H * W;
  Tensor<T> out({N, L, C});
  const T* in = v.data();
  T* o = out.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* src = in + (n * C + c) * L;
      T* dst = o + n * L * C + c;
      for (int64_t l = 0; l < L; ++l) dst[l * C] = src[l];
    }
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn, N, C, L](Node<T>& self) {
    T* gx = xn->grad.data();
    const T* g = self.grad.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        T* dst = gx + (n * C + c) * L;
        const T* src = g + n * L * C + c;
        for (int64_t l = 0; l < L; ++l) dst[l] += src[l * C];
      }
  });
}

// (N, H*W, C) -> (N,C,H,W)
template <typename T>
Var<T> grid_from_tokens(const Var<T>& x, int64_t H, int64_t W) {
  const auto& v = x.value();
  if (v.rank() != 3 || v.dim(1) != H * W)
    throw std::invalid_argument("grid_from_tokens: expected (N," + std::to_string(H * W) + ",C), got " + shape_str(v.shape()));
  int64_t N = v.dim(0), L = v.dim(1), C = v.dim(2);
  Tensor<T> out({N, C, H, W});
  const T* in = v.data();
  T* o = out.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      T* dst = o + (n * C + c) * L;
      const T* src = in + n * L * C + c;
      for (int64_t l = 0; l < L; ++l) dst[l] = src[l * C];
    }
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn, N, C, L](Node<T>& self) {
    T* gx = xn->grad.data();
    const T* g = self.grad.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const T* src = g + (n * C + c) * L;
        T* dst = gx + n * L * C + c;
        for (int64_t l = 0; l < L; ++l) dst[l * C] += src[l];
      }
  });
}

// (N,L,C) -> (N*heads, L, C/heads)
template <typename T>
Var<T> split_heads(const Var<T>& x, int64_t heads) {
  const auto& v = x.value();
  if (v.rank() != 3) throw std::invalid_argument("split_heads: expected (N,L,C)");
  int64_t N = v.dim(0), L = v.dim(1), C = v.dim(2);
  if (C % heads != 0) throw std::invalid_argument("split_heads: C=" + std::to_string(C) + " not divisible by heads=" + std::to_string(heads));
  int64_t D = C / heads;
  Tensor<T> out({N * heads, L, D});
  const T* in = v.data();
  T* o = out.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t l = 0; l < L; ++l) {
        const T* src = in + (n * L + l) * C + h * D;
        T* dst = o + ((n * heads + h) * L + l) * D;
        std::memcpy(dst, src, sizeof(T) * static_cast<size_t>(D));
      }
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn, N, heads, L, C, D](Node<T>& self) {
    T* gx = xn->grad.data();
    const T* g = self.grad.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t l = 0; l < L; ++l) {
          T* dst = gx + (n * L + l) * C + h * D;
          const T* src = g + ((n * heads + h) * L + l) * D;
          for (int64_t d = 0; d < D; ++d) dst[d] += src[d];
        }
  });
}

// (N*heads, L, D) -> (N, L, heads*D)
template <typename T>
Var<T> merge_heads(const Var<T>& x, int64_t heads) {
  const auto& v = x.value();
  if (v.rank() != 3 || v.dim(0) % heads != 0) throw std::invalid_argument("merge_heads: bad input " + shape_str(v.shape()));
  int64_t N = v.dim(0) / heads, L = v.dim(1), D = v.dim(2), C = heads * D;
  Tensor<T> out({N, L, C});
  const T* in = v.data();
  T* o = out.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t l = 0; l < L; ++l) {
        const T* src = in + ((n * heads + h) * L + l) * D;
        T* dst = o + (n * L + l) * C + h * D;
        std::memcpy(dst, src, sizeof(T) * static_cast<size_t>(D));
      }
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn, N, heads, L, C, D](Node<T>& self) {
    T* gx = xn->grad.data();
    const T* g = self.grad.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t l = 0; l < L; ++l) {
          T* dst = gx + ((n * heads + h) * L + l) * D;
          const T* src = g + (n * L + l) * C + h * D;
          for (int64_t d = 0; d < D; ++d) dst[d] += src[d];
        }
  });
}

// concat along channel dim of NCHW tensors
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const auto& first = xs[0].value();
  if (first.rank() != 4) throw std::invalid_argument("concat_channels: expected NCHW");
  int64_t N = first.dim(0), H = first.dim(2), W = first.dim(3), C = 0;
  for (const auto& x : xs) {
    const auto& v = x.value();
    if (v.rank() != 4 || v.dim(0) != N || v.dim(2) != H || v.dim(3) != W)
      throw std::invalid_argument("concat_channels: mismatched input " + shape_str(v.shape()) + " vs " + shape_str(first.shape()));
    C += v.dim(1);
  }
  Tensor<T> out({N, C, H, W});
  int64_t hw = H * W;
  T* o = out.data();
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<int64_t> chans;
  int64_t coff = 0;
  for (const auto& x : xs) {
    const auto& v = x.value();
    int64_t c = v.dim(1);
    for (int64_t n = 0; n < N; ++n)
      std::memcpy(o + (n * C + coff) * hw, v.data() + n * c * hw, sizeof(T) * static_cast<size_t>(c * hw));
    parents.push_back(x.node());
    chans.push_back(c);
    coff += c;
  }
  auto ps = parents;
  return make_op_node<T>(std::move(out), std::move(parents), [ps, chans, N, C, hw](Node<T>& self) {
    const T* g = self.grad.data();
    int64_t coff2 = 0;
    for (size_t k = 0; k < ps.size(); ++k) {
      int64_t c = chans[k];
      if (ps[k]->requires_grad) {
        T* gx = ps[k]->grad.data();
        for (int64_t n = 0; n < N; ++n) {
          const T* src = g + (n * C + coff2) * hw;
          T* dst = gx + n * c * hw;
          for (int64_t i = 0; i < c * hw; ++i) dst[i] += src[i];
        }
      }
      coff2 += c;
    }
  });
}

// ---- matmul family ----

namespace detail {

// C[M,N] += A[M,K] @ B[K,N]
template <typename T>
void mm_acc(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    T* c = C + i * N;
    for (int64_t k = 0; k < K; ++k) {
      T av = a[k];
      const T* b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] += A[M,K] @ B[N,K]^T
template <typename T>
void mm_nt_acc(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    T* c = C + i * N;
    for (int64_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      T acc = T(0);
      for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] += acc;
    }
  }
}

// C[K,N] += A[M,K]^T @ B[M,N]
template <typename T>
void mm_tn_acc(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    const T* b = B + i * N;
    for (int64_t k = 0; k < K; ++k) {
      T av = a[k];
      T* c = C + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace detail

// batched (B,M,K) @ (B,K,N) -> (B,M,N)
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1))
    throw std::invalid_argument("matmul: bad shapes " + shape_str(av.shape()) + " @ " + shape_str(bv.shape()));
  int64_t B = av.dim(0), M = av.dim(1), K = av.dim(2), N = bv.dim(2);
  Tensor<T> out({B, M, N});
  for (int64_t i = 0; i < B; ++i)
    detail::mm_acc(av.data() + i * M * K, bv.data() + i * K * N, out.data() + i * M * N, M, K, N);
  auto an = a.node(), bn = b.node();
  return make_op_node<T>(std::move(out), {an, bn}, [an, bn, B, M, K, N](Node<T>& self) {
    const T* g = self.grad.data();
    if (an->requires_grad) {
      // dA = dC @ B^T
      for (int64_t i = 0; i < B; ++i)
        detail::mm_nt_acc(g + i * M * N, bn->value.data() + i * K * N, an->grad.data() + i * M * K, M, N, K);
    }
    if (bn->requires_grad) {
      // dB = A^T @ dC
      for (int64_t i = 0; i < B; ++i)
        detail::mm_tn_acc(an->value.data() + i * M * K, g + i * M * N, bn->grad.data() + i * K * N, M, K, N);
    }
  });
}

// batched (B,M,K) @ (B,N,K)^T -> (B,M,N)
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2))
    throw std::invalid_argument("matmul_nt: bad shapes " + shape_str(av.shape()) + " @ " + shape_str(bv.shape()) + "^T");
  int64_t B = av.dim(0), M = av.dim(1), K = av.dim(2), N = bv.dim(1);
  Tensor<T> out({B, M, N});
  for (int64_t i = 0; i < B; ++i)
    detail::mm_nt_acc(av.data() + i * M * K, bv.data() + i * N * K, out.data() + i * M * N, M, K, N);
  auto an = a.node(), bn = b.node();
  return make_op_node<T>(std::move(out), {an, bn}, [an, bn, B, M, K, N](Node<T>& self) {
    const T* g = self.grad.data();
    if (an->requires_grad) {
      // dA = dC @ B
      for (int64_t i = 0; i < B; ++i)
        detail::mm_acc(g + i * M * N, bn->value.data() + i * N * K, an->grad.data() + i * M * K, M, N, K);
    }
    if (bn->requires_grad) {
      // dB = dC^T @ A
      for (int64_t i = 0; i < B; ++i)
        detail::mm_tn_acc(g + i * M * N, an->value.data() + i * M * K, bn->grad.data() + i * N * K, M, N, K);
    }
  });
}

// x (..., C) @ w (C, Co) + b (Co)
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>()) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (wv.rank() != 2 || xv.rank() < 1 || xv.dim(-1) != wv.dim(0))
    throw std::invalid_argument("linear: bad shapes " + shape_str(xv.shape()) + " @ " + shape_str(wv.shape()));
  int64_t C = wv.dim(0), Co = wv.dim(1);
  int64_t rows = xv.numel() / C;
  Shape out_shape = xv.shape();
  out_shape.back() = Co;
  Tensor<T> out(out_shape);
  if (b.defined()) {
    if (b.value().numel() != Co) throw std::invalid_argument("linear: bias size mismatch");
    const T* bias = b.value().data();
    T* o = out.data();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < Co; ++j) o[r * Co + j] = bias[j];
  }
  detail::mm_acc(xv.data(), wv.data(), out.data(), rows, C, Co);
  auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
  return make_op_node<T>(std::move(out), {xn, wn, bn}, [xn, wn, bn, rows, C, Co](Node<T>& self) {
    const T* g = self.grad.data();
    if (xn->requires_grad) detail::mm_nt_acc(g, wn->value.data(), xn->grad.data(), rows, Co, C);
    if (wn->requires_grad) detail::mm_tn_acc(xn->value.data(), g, wn->grad.data(), rows, C, Co);
    if (bn && bn->requires_grad) {
      T* gb = bn->grad.data();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < Co; ++j) gb[j] += g[r * Co + j];
    }
  });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() < 1) throw std::invalid_argument("softmax: scalar input");
  int64_t C = xv.dim(-1);
  int64_t rows = xv.numel() / C;
  Tensor<T> out = xv;
  T* o = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    T* row = o + r * C;
    T mx = row[0];
    for (int64_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int64_t j = 0; j < C; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    T inv = T(1) / sum;
    for (int64_t j = 0; j < C; ++j) row[j] *= inv;
  }
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn, rows, C](Node<T>& self) {
    const T* g = self.grad.data();
    const T* p = self.value.data();
    T* gx = xn->grad.data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* gr = g + r * C;
      const T* pr = p + r * C;
      T dot = T(0);
      for (int64_t j = 0; j < C; ++j) dot += gr[j] * pr[j];
      T* gxr = gx + r * C;
      for (int64_t j = 0; j < C; ++j) gxr[j] += pr[j] * (gr[j] - dot);
    }
  });
}

// ---- convolution ----

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>(), int64_t stride = 1,
              int64_t pad = 0, int64_t groups = 1) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 4)
    throw std::invalid_argument("conv2d: expected NCHW input and OIHW weight");
  int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int64_t OC = wv.dim(0), ICg = wv.dim(1), KH = wv.dim(2), KW = wv.dim(3);
  if (groups < 1 || C % groups != 0 || OC % groups != 0 || ICg != C / groups)
    throw std::invalid_argument("conv2d: channel/group mismatch x=" + shape_str(xv.shape()) + " w=" + shape_str(wv.shape()) +
                                " groups=" + std::to_string(groups));
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  int64_t OH = (H + 2 * pad - KH) / stride + 1;
  int64_t OW = (W + 2 * pad - KW) / stride + 1;
  if (OH < 1 || OW < 1) throw std::invalid_argument("conv2d: kernel larger than padded input");
  if (b.defined() && b.value().numel() != OC) throw std::invalid_argument("conv2d: bias size mismatch");

  Tensor<T> out({N, OC, OH, OW});
  T* o = out.data();
  if (b.defined()) {
    const T* bias = b.value().data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t oc = 0; oc < OC; ++oc) {
        T* dst = o + (n * OC + oc) * OH * OW;
        T bv = bias[oc];
        for (int64_t i = 0; i < OH * OW; ++i) dst[i] = bv;
      }
  }
  const T* xd = xv.data();
  const T* wd = wv.data();
  int64_t ocg = OC / groups;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t g = 0; g < groups; ++g)
      for (int64_t oc = g * ocg; oc < (g + 1) * ocg; ++oc) {
        T* outp = o + (n * OC + oc) * OH * OW;
        for (int64_t icl = 0; icl < ICg; ++icl) {
          int64_t ic = g * ICg + icl;
          const T* inp = xd + (n * C + ic) * H * W;
          const T* wk = wd + ((oc * ICg + icl) * KH) * KW;
          for (int64_t ky = 0; ky < KH; ++ky)
            for (int64_t kx = 0; kx < KW; ++kx) {
              T wval = wk[ky * KW + kx];
              int64_t dy = ky - pad, dx = kx - pad;
              // oh range with 0 <= oh*stride+dy < H
              int64_t oh_lo = dy < 0 ? (-dy + stride - 1) / stride : 0;
              int64_t oh_hi = std::min(OH - 1, (H - 1 - dy) / stride);
              int64_t ow_lo = dx < 0 ? (-dx + stride - 1) / stride : 0;
              int64_t ow_hi = std::min(OW - 1, (W - 1 - dx) / stride);
              for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                const T* irow = inp + (oh * stride + dy) * W + dx;
                T* orow = outp + oh * OW;
                if (stride == 1) {
                  for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) orow[ow] += wval * irow[ow];
                } else {
                  for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) orow[ow] += wval * irow[ow * stride];
                }
              }
            }
        }
      }

  auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
  return make_op_node<T>(std::move(out), {xn, wn, bn},
                         [xn, wn, bn, N, C, H, W, OC, ICg, KH, KW, OH, OW, stride, pad, groups, ocg](Node<T>& self) {
    const T* g = self.grad.data();
    const T* xd2 = xn->value.data();
    const T* wd2 = wn->value.data();
    if (bn && bn->requires_grad) {
      T* gb = bn->grad.data();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t oc = 0; oc < OC; ++oc) {
          const T* src = g + (n * OC + oc) * OH * OW;
          T acc = T(0);
          for (int64_t i = 0; i < OH * OW; ++i) acc += src[i];
          gb[oc] += acc;
        }
    }
    for (int64_t n = 0; n < N; ++n)
      for (int64_t gg = 0; gg < groups; ++gg)
        for (int64_t oc = gg * ocg; oc < (gg + 1) * ocg; ++oc) {
          const T* gout = g + (n * OC + oc) * OH * OW;
          for (int64_t icl = 0; icl < ICg; ++icl) {
            int64_t ic = gg * ICg + icl;
            const T* inp = xd2 + (n * C + ic) * H * W;
            T* gin = xn->requires_grad ? xn->grad.data() + (n * C + ic) * H * W : nullptr;
            const T* wk = wd2 + (oc * ICg + icl) * KH * KW;
            T* gwk = wn->requires_grad ? wn->grad.data() + (oc * ICg + icl) * KH * KW : nullptr;
            for (int64_t ky = 0; ky < KH; ++ky)
              for (int64_t kx = 0; kx < KW; ++kx) {
                int64_t dy = ky - pad, dx = kx - pad;
                int64_t oh_lo = dy < 0 ? (-dy + stride - 1) / stride : 0;
                int64_t oh_hi = std::min(OH - 1, (H - 1 - dy) / stride);
                int64_t ow_lo = dx < 0 ? (-dx + stride - 1) / stride : 0;
                int64_t ow_hi = std::min(OW - 1, (W - 1 - dx) / stride);
                T wval = wk[ky * KW + kx];
                T wacc = T(0);
                for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                  const T* grow = gout + oh * OW;
                  const T* irow = inp + (oh * stride + dy) * W + dx;
                  T* girow = gin ? gin + (oh * stride + dy) * W + dx : nullptr;
                  if (stride == 1) {
                    if (gwk)
                      for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) wacc += grow[ow] * irow[ow];
                    if (girow)
                      for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) girow[ow] += wval * grow[ow];
                  } else {
                    if (gwk)
                      for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) wacc += grow[ow] * irow[ow * stride];
                    if (girow)
                      for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) girow[ow * stride] += wval * grow[ow];
                  }
                }
                if (gwk) gwk[ky * KW + kx] += wacc;
              }
          }
        }
  });
}

// ---- normalization ----

template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int64_t groups, T eps) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw std::invalid_argument("group_norm: expected NCHW");
  int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (groups < 1 || C % groups != 0)
    throw std::invalid_argument("group_norm: C=" + std::to_string(C) + " not divisible by groups=" + std::to_string(groups));
  if (gamma.value().numel() != C || beta.value().numel() != C)
    throw std::invalid_argument("group_norm: affine size mismatch");
  int64_t Cg = C / groups, hw = H * W, m = Cg * hw;

  Tensor<T> out(xv.shape());
  Tensor<T> mean({N, groups});
  Tensor<T> invstd({N, groups});
  const T* xd = xv.data();
  const T* gm = gamma.value().data();
  const T* bt = beta.value().data();
  T* o = out.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t g = 0; g < groups; ++g) {
      const T* base = xd + (n * C + g * Cg) * hw;
      T mu = T(0);
      for (int64_t i = 0; i < m; ++i) mu += base[i];
      mu /= T(m);
      T var = T(0);
      for (int64_t i = 0; i < m; ++i) {
        T d = base[i] - mu;
        var += d * d;
      }
      var /= T(m);
      T is = T(1) / std::sqrt(var + eps);
      mean.at(n, g) = mu;
      invstd.at(n, g) = is;
      for (int64_t cl = 0; cl < Cg; ++cl) {
        int64_t c = g * Cg + cl;
        const T* src = xd + (n * C + c) * hw;
        T* dst = o + (n * C + c) * hw;
        T a = gm[c] * is;
        T bb = bt[c] - mu * a;
        for (int64_t i = 0; i < hw; ++i) dst[i] = a * src[i] + bb;
      }
    }

  auto xn = x.node(), gn = gamma.node(), btn = beta.node();
  return make_op_node<T>(std::move(out), {xn, gn, btn},
                         [xn, gn, btn, mean, invstd, N, C, groups, Cg, hw, m](Node<T>& self) {
    const T* g = self.grad.data();
    const T* xd2 = xn->value.data();
    const T* gm2 = gn->value.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t gr = 0; gr < groups; ++gr) {
        T mu = mean.at(n, gr);
        T is = invstd.at(n, gr);
        // reductions of dxhat and dxhat*xhat over the group
        T s1 = T(0), s2 = T(0);
        for (int64_t cl = 0; cl < Cg; ++cl) {
          int64_t c = gr * Cg + cl;
          const T* gy = g + (n * C + c) * hw;
          const T* xr = xd2 + (n * C + c) * hw;
          T gmc = gm2[c];
          for (int64_t i = 0; i < hw; ++i) {
            T dxhat = gy[i] * gmc;
            s1 += dxhat;
            s2 += dxhat * (xr[i] - mu) * is;
          }
        }
        s1 /= T(m);
        s2 /= T(m);
        if (xn->requires_grad) {
          T* gx = xn->grad.data();
          for (int64_t cl = 0; cl < Cg; ++cl) {
            int64_t c = gr * Cg + cl;
            const T* gy = g + (n * C + c) * hw;
            const T* xr = xd2 + (n * C + c) * hw;
            T* gxr = gx + (n * C + c) * hw;
            T gmc = gm2[c];
            for (int64_t i = 0; i < hw; ++i) {
              T xhat = (xr[i] - mu) * is;
              gxr[i] += is * (gy[i] * gmc - s1 - xhat * s2);
            }
          }
        }
        if (gn->requires_grad || btn->requires_grad) {
          T* gg = gn->requires_grad ? gn->grad.data() : nullptr;
          T* gb = btn->requires_grad ? btn->grad.data() : nullptr;
          for (int64_t cl = 0; cl < Cg; ++cl) {
            int64_t c = gr * Cg + cl;
            const T* gy = g + (n * C + c) * hw;
            const T* xr = xd2 + (n * C + c) * hw;
            T accg = T(0), accb = T(0);
            for (int64_t i = 0; i < hw; ++i) {
              accg += gy[i] * (xr[i] - mu) * is;
              accb += gy[i];
            }
            if (gg) gg[c] += accg;
            if (gb) gb[c] += accb;
          }
        }
      }
  });
}

// Training mode normalizes with batch stats (biased variance) and updates the
// running buffers in place (unbiased variance, matching the usual framework
// convention). Eval mode uses the running buffers as constants.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum, T eps) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw std::invalid_argument("batch_norm: expected NCHW");
  int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (gamma.value().numel() != C || beta.value().numel() != C || running_mean.numel() != C || running_var.numel() != C)
    throw std::invalid_argument("batch_norm: affine/running size mismatch");
  int64_t hw = H * W, m = N * hw;

  Tensor<T> mean({C});
  Tensor<T> invstd({C});
  const T* xd = xv.data();
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      T mu = T(0);
      for (int64_t n = 0; n < N; ++n) {
        const T* src = xd + (n * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) mu += src[i];
      }
      mu /= T(m);
      T var = T(0);
      for (int64_t n = 0; n < N; ++n) {
        const T* src = xd + (n * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          T d = src[i] - mu;
          var += d * d;
        }
      }
      var /= T(m);
      mean[c] = mu;
      invstd[c] = T(1) / std::sqrt(var + eps);
      T unbiased = m > 1 ? var * T(m) / T(m - 1) : var;
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mu;
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      invstd[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor<T> out(xv.shape());
  const T* gm = gamma.value().data();
  const T* bt = beta.value().data();
  T* o = out.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* src = xd + (n * C + c) * hw;
      T* dst = o + (n * C + c) * hw;
      T a = gm[c] * invstd[c];
      T bb = bt[c] - mean[c] * a;
      for (int64_t i = 0; i < hw; ++i) dst[i] = a * src[i] + bb;
    }

  auto xn = x.node(), gn = gamma.node(), btn = beta.node();
  return make_op_node<T>(std::move(out), {xn, gn, btn},
                         [xn, gn, btn, mean, invstd, training, N, C, hw, m](Node<T>& self) {
    const T* g = self.grad.data();
    const T* xd2 = xn->value.data();
    const T* gm2 = gn->value.data();
    for (int64_t c = 0; c < C; ++c) {
      T mu = mean[c];
      T is = invstd[c];
      T gmc = gm2[c];
      T s1 = T(0), s2 = T(0), accb = T(0), accg = T(0);
      for (int64_t n = 0; n < N; ++n) {
        const T* gy = g + (n * C + c) * hw;
        const T* xr = xd2 + (n * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          T xhat = (xr[i] - mu) * is;
          s1 += gy[i];
          s2 += gy[i] * xhat;
          accb += gy[i];
          accg += gy[i] * xhat;
        }
      }
      if (gn->requires_grad) gn->grad[c] += accg;
      if (btn->requires_grad) btn->grad[c] += accb;
      if (xn->requires_grad) {
        T* gx = xn->grad.data();
        if (training) {
          T k1 = s1 / T(m), k2 = s2 / T(m);
          for (int64_t n = 0; n < N; ++n) {
            const T* gy = g + (n * C + c) * hw;
            const T* xr = xd2 + (n * C + c) * hw;
            T* gxr = gx + (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              T xhat = (xr[i] - mu) * is;
              gxr[i] += gmc * is * (gy[i] - k1 - xhat * k2);
            }
          }
        } else {
          T a = gmc * is;
          for (int64_t n = 0; n < N; ++n) {
            const T* gy = g + (n * C + c) * hw;
            T* gxr = gx + (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) gxr[i] += a * gy[i];
          }
        }
      }
    }
  });
}

// normalize over the last dimension of (..., C)
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const auto& xv = x.value();
  if (xv.rank() < 1) throw std::invalid_argument("layer_norm: scalar input");
  int64_t C = xv.dim(-1);
  if (gamma.value().numel() != C || beta.value().numel() != C)
    throw std::invalid_argument("layer_norm: affine size mismatch");
  int64_t rows = xv.numel() / C;
  Tensor<T> out(xv.shape());
  Tensor<T> mean({rows});
  Tensor<T> invstd({rows});
  const T* xd = xv.data();
  const T* gm = gamma.value().data();
  const T* bt = beta.value().data();
  T* o = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = xd + r * C;
    T mu = T(0);
    for (int64_t j = 0; j < C; ++j) mu += src[j];
    mu /= T(C);
    T var = T(0);
    for (int64_t j = 0; j < C; ++j) {
      T d = src[j] - mu;
      var += d * d;
    }
    var /= T(C);
    T is = T(1) / std::sqrt(var + eps);
    mean[r] = mu;
    invstd[r] = is;
    T* dst = o + r * C;
    for (int64_t j = 0; j < C; ++j) dst[j] = gm[j] * (src[j] - mu) * is + bt[j];
  }
  auto xn = x.node(), gn = gamma.node(), btn = beta.node();
  return make_op_node<T>(std::move(out), {xn, gn, btn}, [xn, gn, btn, mean, invstd, rows, C](Node<T>& self) {
    const T* g = self.grad.data();
    const T* xd2 = xn->value.data();
    const T* gm2 = gn->value.data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* gy = g + r * C;
      const T* xr = xd2 + r * C;
      T mu = mean[r], is = invstd[r];
      T s1 = T(0), s2 = T(0);
      for (int64_t j = 0; j < C; ++j) {
        T dxhat = gy[j] * gm2[j];
        s1 += dxhat;
        s2 += dxhat * (xr[j] - mu) * is;
      }
      s1 /= T(C);
      s2 /= T(C);
      if (xn->requires_grad) {
        T* gxr = xn->grad.data() + r * C;
        for (int64_t j = 0; j < C; ++j) {
          T xhat = (xr[j] - mu) * is;
          gxr[j] += is * (gy[j] * gm2[j] - s1 - xhat * s2);
        }
      }
      if (gn->requires_grad) {
        T* gg = gn->grad.data();
        for (int64_t j = 0; j < C; ++j) gg[j] += gy[j] * (xr[j] - mu) * is;
      }
      if (btn->requires_grad) {
        T* gb = btn->grad.data();
        for (int64_t j = 0; j < C; ++j) gb[j] += gy[j];
      }
    }
  });
}

// ---- resampling / pooling ----

struct BilinearTap {
  int64_t lo, hi;
  double w_hi;
};

inline std::vector<BilinearTap> bilinear_taps(int64_t in, int64_t out) {
  std::vector<BilinearTap> taps(static_cast<size_t>(out));
  double scl = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scl - 0.5;
    if (src < 0) src = 0;
    double mx = static_cast<double>(in - 1);
    if (src > mx) src = mx;
    int64_t lo = static_cast<int64_t>(std::floor(src));
    int64_t hi = std::min(lo + 1, in - 1);
    taps[static_cast<size_t>(i)] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

template <typename T>
Var<T> bilinear_resize(const Var<T>& x, int64_t out_h, int64_t out_w) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw std::invalid_argument("bilinear_resize: expected NCHW");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_resize: bad target size");
  int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (H == out_h && W == out_w) {
    // still a node so upsampling stages stay uniform
    Tensor<T> out = xv;
    auto xn = x.node();
    return make_op_node<T>(std::move(out), {xn}, [xn](Node<T>& self) {
      T* gx = xn->grad.data();
      const T* g = self.grad.data();
      for (int64_t i = 0; i < self.grad.numel(); ++i) gx[i] += g[i];
    });
  }
  auto ty = bilinear_taps(H, out_h);
  auto tx = bilinear_taps(W, out_w);
  Tensor<T> out({N, C, out_h, out_w});
  const T* xd = xv.data();
  T* o = out.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xd + nc * H * W;
    T* op = o + nc * out_h * out_w;
    for (int64_t y = 0; y < out_h; ++y) {
      const auto& t = ty[static_cast<size_t>(y)];
      const T* r0 = plane + t.lo * W;
      const T* r1 = plane + t.hi * W;
      T wy = T(t.w_hi);
      T* orow = op + y * out_w;
      for (int64_t xq = 0; xq < out_w; ++xq) {
        const auto& s = tx[static_cast<size_t>(xq)];
        T wx = T(s.w_hi);
        T top = r0[s.lo] + wx * (r0[s.hi] - r0[s.lo]);
        T bot = r1[s.lo] + wx * (r1[s.hi] - r1[s.lo]);
        orow[xq] = top + wy * (bot - top);
      }
    }
  }
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn, ty, tx, N, C, H, W, out_h, out_w](Node<T>& self) {
    const T* g = self.grad.data();
    T* gx = xn->grad.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      T* gplane = gx + nc * H * W;
      const T* gp = g + nc * out_h * out_w;
      for (int64_t y = 0; y < out_h; ++y) {
        const auto& t = ty[static_cast<size_t>(y)];
        T wy = T(t.w_hi);
        const T* grow = gp + y * out_w;
        for (int64_t xq = 0; xq < out_w; ++xq) {
          const auto& s = tx[static_cast<size_t>(xq)];
          T wx = T(s.w_hi);
          T gv = grow[xq];
          gplane[t.lo * W + s.lo] += (T(1) - wy) * (T(1) - wx) * gv;
          gplane[t.lo * W + s.hi] += (T(1) - wy) * wx * gv;
          gplane[t.hi * W + s.lo] += wy * (T(1) - wx) * gv;
          gplane[t.hi * W + s.hi] += wy * wx * gv;
        }
      }
    }
  });
}

template <typename T>
Var<T> maxpool2d(const Var<T>& x, int64_t k, int64_t stride, int64_t pad) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw std::invalid_argument("maxpool2d: expected NCHW");
  int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int64_t OH = (H + 2 * pad - k) / stride + 1;
  int64_t OW = (W + 2 * pad - k) / stride + 1;
  if (OH < 1 || OW < 1) throw std::invalid_argument("maxpool2d: kernel larger than padded input");
  Tensor<T> out({N, C, OH, OW});
  std::vector<int64_t> argmax(static_cast<size_t>(out.numel()));
  const T* xd = xv.data();
  T* o = out.data();
  int64_t oi = 0;
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xd + nc * H * W;
    for (int64_t oh = 0; oh < OH; ++oh)
      for (int64_t ow = 0; ow < OW; ++ow, ++oi) {
        int64_t y0 = oh * stride - pad, x0 = ow * stride - pad;
        T best = -std::numeric_limits<T>::infinity();
        int64_t bi = -1;
        for (int64_t ky = 0; ky < k; ++ky) {
          int64_t yy = y0 + ky;
          if (yy < 0 || yy >= H) continue;
          for (int64_t kx = 0; kx < k; ++kx) {
            int64_t xx = x0 + kx;
            if (xx < 0 || xx >= W) continue;
            T v = plane[yy * W + xx];
            if (v > best) {
              best = v;
              bi = nc * H * W + yy * W + xx;
            }
          }
        }
        o[oi] = best;
        argmax[static_cast<size_t>(oi)] = bi;
      }
  }
  auto xn = x.node();
  return make_op_node<T>(std::move(out), {xn}, [xn, argmax](Node<T>& self) {
    T* gx = xn->grad.data();
    const T* g = self.grad.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      if (argmax[static_cast<size_t>(i)] >= 0) gx[argmax[static_cast<size_t>(i)]] += g[i];
  });
}

}  // namespace ops
}  // namespace enformer
