#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "starsr/common.hpp"
#include "starsr/image.hpp"
#include "starsr/rng.hpp"

namespace starsr::nn {

template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(count(shape), T(0));
  }

  static size_t count(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return s.empty() ? 0 : n;
  }

  size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // 3D (C,H,W) accessors for image-like tensors.
  int c() const { return shape.at(0); }
  int h() const { return shape.at(1); }
  int w() const { return shape.at(2); }
  T& at(int ci, int yi, int xi) {
    return v[(static_cast<size_t>(ci) * h() + yi) * w() + xi];
  }
  T at(int ci, int yi, int xi) const {
    return v[(static_cast<size_t>(ci) * h() + yi) * w() + xi];
  }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }
};

template <class T>
Tensor<T> from_image(const ImageTensor& img) {
  Tensor<T> t({img.channels, img.height, img.width});
  for (size_t i = 0; i < img.data.size(); ++i) t.v[i] = static_cast<T>(img.data[i]);
  return t;
}

template <class T>
ImageTensor to_image(const Tensor<T>& t) {
  ImageTensor img(t.c(), t.h(), t.w());
  for (size_t i = 0; i < t.v.size(); ++i) img.data[i] = static_cast<float>(t.v[i]);
  return img;
}

// (B, C, H, W) from a list of equally shaped 3D tensors.
template <class T>
Tensor<T> stack_batch(const std::vector<const Tensor<T>*>& items) {
  if (items.empty()) throw ShapeError("stack_batch: empty batch");
  const auto& s0 = items.front()->shape;
  Tensor<T> out({static_cast<int>(items.size()), s0.at(0), s0.at(1), s0.at(2)});
  const size_t plane = items.front()->size();
  for (size_t i = 0; i < items.size(); ++i) {
    if (items[i]->shape != s0) throw ShapeError("stack_batch: shape mismatch");
    std::copy(items[i]->v.begin(), items[i]->v.end(),
              out.v.begin() + i * plane);
  }
  return out;
}

template <class T>
Tensor<T> slice_batch(const Tensor<T>& batched, int index) {
  if (batched.shape.size() != 4) throw ShapeError("slice_batch: expected 4D");
  Tensor<T> out({batched.shape[1], batched.shape[2], batched.shape[3]});
  const size_t plane = out.size();
  std::copy(batched.v.begin() + index * plane,
            batched.v.begin() + (index + 1) * plane, out.v.begin());
  return out;
}

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;     // reduced across the batch by the trainer
  Tensor<T> m, vmom;  // Adam moments, checkpointed with the value
  bool trainable = true;

  void resize(std::vector<int> shape) {
    value = Tensor<T>(shape);
    grad = Tensor<T>(shape);
    m = Tensor<T>(shape);
    vmom = Tensor<T>(shape);
  }

  void fill(T x) { std::fill(value.v.begin(), value.v.end(), x); }

  void init_gaussian(Rng& rng, double stddev) {
    for (T& x : value.v) x = static_cast<T>(stddev * rng.gaussian());
  }
};

// Define-by-run graph. Forward runs eagerly as ops are built; backward()
// replays recorded closures in reverse. One tape per thread; parameter
// gradients accumulate into tape-local buffers and are merged on the main
// thread in a fixed order so batched training stays bit-deterministic.
template <class T>
class Tape {
 public:
  using Id = int32_t;

  Id leaf(Tensor<T> val, bool needs_grad = false) {
    nodes_.push_back(Node{std::move(val), Tensor<T>{}, needs_grad});
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id new_node(std::vector<int> shape, bool needs_grad) {
    nodes_.push_back(Node{Tensor<T>(std::move(shape)), Tensor<T>{}, needs_grad});
    return static_cast<Id>(nodes_.size() - 1);
  }

  const Tensor<T>& val(Id id) const { return nodes_[id].val; }
  Tensor<T>& mutable_val(Id id) { return nodes_[id].val; }
  bool needs_grad(Id id) const { return nodes_[id].needs_grad; }

  bool has_grad(Id id) const { return !nodes_[id].grad.v.empty(); }
  Tensor<T>& grad(Id id) {
    Node& n = nodes_[id];
    if (n.grad.v.empty()) n.grad = Tensor<T>(n.val.shape);
    return n.grad;
  }

  void record(std::function<void()> back) { back_.push_back(std::move(back)); }

  void backward(Id root) {
    if (val(root).size() != 1)
      throw ShapeError("backward: root must be a scalar node");
    grad(root).v[0] = T(1);
    run_backward();
  }

  // Replays recorded closures; callers may seed several node grads first to
  // splice in gradients computed on another tape.
  void run_backward() {
    for (auto it = back_.rbegin(); it != back_.rend(); ++it) (*it)();
  }

  void seed_grad(Id id, const Tensor<T>& g) {
    Tensor<T>& dst = grad(id);
    if (!dst.same_shape(g)) throw ShapeError("seed_grad: shape mismatch");
    for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += g.v[i];
  }

  // Tape-local parameter gradient buffer.
  Tensor<T>& pgrad(Parameter<T>* p) {
    auto it = pgrads_.find(p);
    if (it == pgrads_.end())
      it = pgrads_.emplace(p, Tensor<T>(p->value.shape)).first;
    return it->second;
  }

  bool has_pgrad(Parameter<T>* p) const { return pgrads_.count(p) > 0; }

  // p.grad += scale * local buffer. Call from one thread at a time.
  void merge_param_grads(T scale) {
    for (auto& [p, g] : pgrads_)
      for (size_t i = 0; i < g.v.size(); ++i) p->grad.v[i] += scale * g.v[i];
  }

  std::vector<T>& scratch(size_t n) {
    if (scratch_.size() < n) scratch_.resize(n);
    return scratch_;
  }


 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool needs_grad = false;
  };
  // deque: references to existing nodes stay valid while ops append new ones.
  std::deque<Node> nodes_;
  std::vector<std::function<void()>> back_;
  std::unordered_map<Parameter<T>*, Tensor<T>> pgrads_;
  std::vector<T> scratch_;
};

namespace detail {

template <class T>
using MatRM =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// Columns of the patch matrix for output positions [n0, n1), decomposed by
// output row so the interior copies run without per-element index math.
template <class T>
void im2col_chunk(const T* xp, int ic, int ih, int iw, int kh, int kw,
                  int stride, int pad, int ow, int n0, int n1, T* cols,
                  size_t ld) {
  for (int c = 0; c < ic; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const int r = (c * kh + ky) * kw + kx;
        T* col_row = cols + static_cast<size_t>(r) * ld - n0;
        for (int oy = n0 / ow; oy * ow < n1; ++oy) {
          const int j_lo = std::max(n0, oy * ow);
          const int j_hi = std::min(n1, (oy + 1) * ow);
          const int iy = oy * stride - pad + ky;
          T* dst = col_row + j_lo;
          const int count = j_hi - j_lo;
          if (iy < 0 || iy >= ih) {
            std::fill(dst, dst + count, T(0));
            continue;
          }
          const T* src_row = xp + (static_cast<size_t>(c) * ih + iy) * iw;
          const int ox0 = j_lo - oy * ow;
          if (stride == 1) {
            // Valid ox where ix = ox + kx - pad lands inside [0, iw).
            const int lo = std::max(ox0, pad - kx);
            const int hi = std::min(ox0 + count, iw + pad - kx);
            T* d = dst - ox0;
            if (lo > ox0) std::fill(dst, d + lo, T(0));
            if (hi > lo) std::memcpy(d + lo, src_row + lo + kx - pad,
                                     static_cast<size_t>(hi - lo) * sizeof(T));
            if (ox0 + count > hi)
              std::fill(d + std::max(lo, hi), d + ox0 + count, T(0));
          } else {
            for (int i = 0; i < count; ++i) {
              const int ix = (ox0 + i) * stride - pad + kx;
              dst[i] = (ix >= 0 && ix < iw) ? src_row[ix] : T(0);
            }
          }
        }
      }
}

template <class T>
void col2im_chunk_add(T* gp, int ic, int ih, int iw, int kh, int kw,
                      int stride, int pad, int ow, int n0, int n1,
                      const T* cols, size_t ld) {
  for (int c = 0; c < ic; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const int r = (c * kh + ky) * kw + kx;
        const T* col_row = cols + static_cast<size_t>(r) * ld - n0;
        for (int oy = n0 / ow; oy * ow < n1; ++oy) {
          const int j_lo = std::max(n0, oy * ow);
          const int j_hi = std::min(n1, (oy + 1) * ow);
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= ih) continue;
          T* dst_row = gp + (static_cast<size_t>(c) * ih + iy) * iw;
          const int ox0 = j_lo - oy * ow;
          const int count = j_hi - j_lo;
          const T* src = col_row + j_lo;
          if (stride == 1) {
            const int lo = std::max(ox0, pad - kx);
            const int hi = std::min(ox0 + count, iw + pad - kx);
            for (int ox = lo; ox < hi; ++ox)
              dst_row[ox + kx - pad] += src[ox - ox0];
          } else {
            for (int i = 0; i < count; ++i) {
              const int ix = (ox0 + i) * stride - pad + kx;
              if (ix >= 0 && ix < iw) dst_row[ix] += src[i];
            }
          }
        }
      }
}

inline constexpr int kConvChunk = 1 << 16;

}  // namespace detail

// 2D convolution, zero padding. Weight shape (oc, ic, kh, kw), bias (oc).
template <class T>
typename Tape<T>::Id conv2d(Tape<T>& tape, typename Tape<T>::Id x,
                            Parameter<T>& w, Parameter<T>& b, int stride,
                            int pad) {
  using detail::MatRM;
  const Tensor<T>& xv = tape.val(x);
  const bool batched = xv.shape.size() == 4;
  if (!batched && xv.shape.size() != 3)
    throw ShapeError("conv2d: input must be 3D or 4D");
  const int B = batched ? xv.shape[0] : 1;
  const int ic = xv.shape[batched ? 1 : 0];
  const int ih = xv.shape[batched ? 2 : 1];
  const int iw = xv.shape[batched ? 3 : 2];
  const int oc = w.value.shape.at(0), kh = w.value.shape.at(2),
            kw = w.value.shape.at(3);
  if (w.value.shape.at(1) != ic)
    throw ShapeError("conv2d: weight expects " +
                     std::to_string(w.value.shape.at(1)) +
                     " input channels, got " + std::to_string(ic));
  const int oh = (ih + 2 * pad - kh) / stride + 1;
  const int ow = (iw + 2 * pad - kw) / stride + 1;
  if (oh < 1 || ow < 1)
    throw ShapeError("conv2d: input " + std::to_string(ih) + "x" +
                     std::to_string(iw) + " too small for kernel " +
                     std::to_string(kh) + "x" + std::to_string(kw));
  const int K = ic * kh * kw;
  const int N = oh * ow;
  const size_t in_plane = static_cast<size_t>(ic) * ih * iw;
  const size_t out_plane = static_cast<size_t>(oc) * N;

  const bool out_needs = tape.needs_grad(x) || w.trainable || b.trainable;
  auto out = tape.new_node(batched ? std::vector<int>{B, oc, oh, ow}
                                   : std::vector<int>{oc, oh, ow},
                           out_needs);
  Tensor<T>& yv = tape.mutable_val(out);
  Eigen::Map<const MatRM<T>> W(w.value.v.data(), oc, K);

  if (!batched) {
    // Chunked along output positions so huge single images stay bounded.
    for (int n0 = 0; n0 < N; n0 += detail::kConvChunk) {
      const int n1 = std::min(N, n0 + detail::kConvChunk);
      const int n = n1 - n0;
      T* cols = tape.scratch(static_cast<size_t>(K) * n).data();
      detail::im2col_chunk(xv.v.data(), ic, ih, iw, kh, kw, stride, pad, ow,
                           n0, n1, cols, n);
      Eigen::Map<const MatRM<T>> C(cols, K, n);
      Eigen::Map<MatRM<T>, 0, Eigen::OuterStride<>> Y(
          yv.v.data() + n0, oc, n, Eigen::OuterStride<>(N));
      Y.noalias() = W * C;
    }
    for (int o = 0; o < oc; ++o) {
      const T bias = b.value.v[o];
      T* row = yv.v.data() + static_cast<size_t>(o) * N;
      for (int j = 0; j < N; ++j) row[j] += bias;
    }
  } else {
    // One patch matrix for the whole batch: a single GEMM (and later a
    // single weight-gradient pass) instead of one per sample.
    const size_t BN = static_cast<size_t>(B) * N;
    T* cols = tape.scratch(static_cast<size_t>(K) * BN).data();
    for (int bi = 0; bi < B; ++bi)
      detail::im2col_chunk(xv.v.data() + bi * in_plane, ic, ih, iw, kh, kw,
                           stride, pad, ow, 0, N, cols + bi * N, BN);
    std::vector<T> ybuf(static_cast<size_t>(oc) * BN);
    Eigen::Map<const MatRM<T>> C(cols, K, static_cast<int>(BN));
    Eigen::Map<MatRM<T>> Yg(ybuf.data(), oc, static_cast<int>(BN));
    Yg.noalias() = W * C;
    for (int bi = 0; bi < B; ++bi)
      for (int o = 0; o < oc; ++o) {
        const T bias = b.value.v[o];
        const T* srcp = ybuf.data() + static_cast<size_t>(o) * BN + bi * N;
        T* dstp = yv.v.data() + bi * out_plane + static_cast<size_t>(o) * N;
        for (int j = 0; j < N; ++j) dstp[j] = srcp[j] + bias;
      }
  }

  if (out_needs) {
    tape.record([&tape, x, out, &w, &b, stride, pad, ow, kh, kw, K, N, oc, B,
                 ic, ih, iw, in_plane, out_plane, batched]() {
      if (!tape.has_grad(out)) return;
      const Tensor<T>& dy = tape.grad(out);
      const Tensor<T>& xv2 = tape.val(x);
      const bool want_dx = tape.needs_grad(x);
      Tensor<T>* gx = want_dx ? &tape.grad(x) : nullptr;
      Eigen::Map<const MatRM<T>> W(w.value.v.data(), oc, K);

      if (!batched) {
        Eigen::Map<const MatRM<T>> DY(dy.v.data(), oc, N);
        if (b.trainable) {
          Tensor<T>& gb = tape.pgrad(&b);
          for (int o = 0; o < oc; ++o) gb.v[o] += DY.row(o).sum();
        }
        for (int n0 = 0; n0 < N; n0 += detail::kConvChunk) {
          const int n1 = std::min(N, n0 + detail::kConvChunk);
          const int n = n1 - n0;
          Eigen::Map<const MatRM<T>, 0, Eigen::OuterStride<>> DYc(
              dy.v.data() + n0, oc, n, Eigen::OuterStride<>(N));
          if (w.trainable) {
            T* cols = tape.scratch(static_cast<size_t>(K) * n).data();
            detail::im2col_chunk(xv2.v.data(), ic, ih, iw, kh, kw, stride, pad,
                                 ow, n0, n1, cols, n);
            Eigen::Map<const MatRM<T>> C(cols, K, n);
            Eigen::Map<MatRM<T>> GW(tape.pgrad(&w).v.data(), oc, K);
            GW.noalias() += DYc * C.transpose();
          }
          if (want_dx) {
            // dcols = W^T * dY, then scatter-add onto the input grid.
            T* dcols = tape.scratch(static_cast<size_t>(K) * n).data();
            Eigen::Map<MatRM<T>> DC(dcols, K, n);
            DC.noalias() = W.transpose() * DYc;
            detail::col2im_chunk_add(gx->v.data(), ic, ih, iw, kh, kw, stride,
                                     pad, ow, n0, n1, dcols, n);
          }
        }
      } else {
        const size_t BN = static_cast<size_t>(B) * N;
        std::vector<T> dybuf(static_cast<size_t>(oc) * BN);
        for (int bi = 0; bi < B; ++bi)
          for (int o = 0; o < oc; ++o)
            std::memcpy(dybuf.data() + static_cast<size_t>(o) * BN + bi * N,
                        dy.v.data() + bi * out_plane + static_cast<size_t>(o) * N,
                        sizeof(T) * N);
        Eigen::Map<const MatRM<T>> DYg(dybuf.data(), oc, static_cast<int>(BN));
        if (b.trainable) {
          Tensor<T>& gb = tape.pgrad(&b);
          for (int o = 0; o < oc; ++o) gb.v[o] += DYg.row(o).sum();
        }
        if (w.trainable) {
          T* cols = tape.scratch(static_cast<size_t>(K) * BN).data();
          for (int bi = 0; bi < B; ++bi)
            detail::im2col_chunk(xv2.v.data() + bi * in_plane, ic, ih, iw, kh,
                                 kw, stride, pad, ow, 0, N, cols + bi * N, BN);
          Eigen::Map<const MatRM<T>> C(cols, K, static_cast<int>(BN));
          Eigen::Map<MatRM<T>> GW(tape.pgrad(&w).v.data(), oc, K);
          GW.noalias() += DYg * C.transpose();
        }
        if (want_dx) {
          T* dcols = tape.scratch(static_cast<size_t>(K) * BN).data();
          Eigen::Map<MatRM<T>> DC(dcols, K, static_cast<int>(BN));
          DC.noalias() = W.transpose() * DYg;
          for (int bi = 0; bi < B; ++bi)
            detail::col2im_chunk_add(gx->v.data() + bi * in_plane, ic, ih, iw,
                                     kh, kw, stride, pad, ow, 0, N,
                                     dcols + bi * N, BN);
        }
      }
    });
  }
  return out;
}

template <class T>
typename Tape<T>::Id sine(Tape<T>& tape, typename Tape<T>::Id x) {
  const Tensor<T>& xv = tape.val(x);
  auto out = tape.new_node(xv.shape, tape.needs_grad(x));
  Tensor<T>& yv = tape.mutable_val(out);
  for (size_t i = 0; i < xv.size(); ++i) yv.v[i] = std::sin(xv.v[i]);
  if (tape.needs_grad(x)) {
    tape.record([&tape, x, out]() {
      if (!tape.has_grad(out)) return;
      const Tensor<T>& dy = tape.grad(out);
      const Tensor<T>& xv2 = tape.val(x);
      Tensor<T>& gx = tape.grad(x);
      for (size_t i = 0; i < gx.v.size(); ++i)
        gx.v[i] += dy.v[i] * std::cos(xv2.v[i]);
    });
  }
  return out;
}

template <class T>
typename Tape<T>::Id leaky_relu(Tape<T>& tape, typename Tape<T>::Id x,
                                double slope) {
  const Tensor<T>& xv = tape.val(x);
  auto out = tape.new_node(xv.shape, tape.needs_grad(x));
  Tensor<T>& yv = tape.mutable_val(out);
  const T s = static_cast<T>(slope);
  for (size_t i = 0; i < xv.size(); ++i)
    yv.v[i] = xv.v[i] > T(0) ? xv.v[i] : s * xv.v[i];
  if (tape.needs_grad(x)) {
    tape.record([&tape, x, out, s]() {
      if (!tape.has_grad(out)) return;
      const Tensor<T>& dy = tape.grad(out);
      const Tensor<T>& xv2 = tape.val(x);
      Tensor<T>& gx = tape.grad(x);
      for (size_t i = 0; i < gx.v.size(); ++i)
        gx.v[i] += dy.v[i] * (xv2.v[i] > T(0) ? T(1) : s);
    });
  }
  return out;
}

template <class T>
typename Tape<T>::Id add(Tape<T>& tape, typename Tape<T>::Id a,
                         typename Tape<T>::Id b) {
  const Tensor<T>& av = tape.val(a);
  const Tensor<T>& bv = tape.val(b);
  if (!av.same_shape(bv)) throw ShapeError("add: shape mismatch");
  auto out =
      tape.new_node(av.shape, tape.needs_grad(a) || tape.needs_grad(b));
  Tensor<T>& yv = tape.mutable_val(out);
  for (size_t i = 0; i < av.size(); ++i) yv.v[i] = av.v[i] + bv.v[i];
  tape.record([&tape, a, b, out]() {
    if (!tape.has_grad(out)) return;
    const Tensor<T>& dy = tape.grad(out);
    if (tape.needs_grad(a)) {
      Tensor<T>& ga = tape.grad(a);
      for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += dy.v[i];
    }
    if (tape.needs_grad(b)) {
      Tensor<T>& gb = tape.grad(b);
      for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += dy.v[i];
    }
  });
  return out;
}

template <class T>
typename Tape<T>::Id concat_ch(Tape<T>& tape, typename Tape<T>::Id a,
                               typename Tape<T>::Id b) {
  const Tensor<T>& av = tape.val(a);
  const Tensor<T>& bv = tape.val(b);
  if (av.h() != bv.h() || av.w() != bv.w())
    throw ShapeError("concat_ch: spatial shape mismatch");
  auto out = tape.new_node({av.c() + bv.c(), av.h(), av.w()},
                           tape.needs_grad(a) || tape.needs_grad(b));
  Tensor<T>& yv = tape.mutable_val(out);
  std::copy(av.v.begin(), av.v.end(), yv.v.begin());
  std::copy(bv.v.begin(), bv.v.end(), yv.v.begin() + av.size());
  tape.record([&tape, a, b, out]() {
    if (!tape.has_grad(out)) return;
    const Tensor<T>& dy = tape.grad(out);
    const size_t na = tape.val(a).size();
    if (tape.needs_grad(a)) {
      Tensor<T>& ga = tape.grad(a);
      for (size_t i = 0; i < na; ++i) ga.v[i] += dy.v[i];
    }
    if (tape.needs_grad(b)) {
      Tensor<T>& gb = tape.grad(b);
      for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += dy.v[na + i];
    }
  });
  return out;
}

// Orthogonal projection of the flattened tensor onto the l2 ball of radius
// rho = theta * max(sigma, 0) * sqrt(N - 1). Inside the ball the input passes
// through unchanged; outside it is rescaled to the surface. Differentiable
// almost everywhere, including through theta and sigma.
template <class T>
typename Tape<T>::Id project_l2_ball(Tape<T>& tape, typename Tape<T>::Id x,
                                     Parameter<T>& theta,
                                     Parameter<T>& sigma) {
  const Tensor<T>& xv = tape.val(x);
  const size_t n = xv.size();
  double norm_sq = 0.0;
  for (const T& t : xv.v) norm_sq += static_cast<double>(t) * t;
  const double norm = std::sqrt(norm_sq);
  const double th = static_cast<double>(theta.value.v[0]);
  const double sg = std::max(0.0, static_cast<double>(sigma.value.v[0]));
  const double radius = th * sg * std::sqrt(static_cast<double>(n) - 1.0);

  const bool scaled = norm > radius;
  const bool out_needs =
      tape.needs_grad(x) || theta.trainable || sigma.trainable;
  auto out = tape.new_node(xv.shape, out_needs);
  Tensor<T>& yv = tape.mutable_val(out);
  const T factor = scaled && norm > 0.0 ? static_cast<T>(radius / norm) : T(1);
  for (size_t i = 0; i < n; ++i) yv.v[i] = factor * xv.v[i];

  if (out_needs) {
    tape.record([&tape, x, out, &theta, &sigma, norm, radius, th, sg,
                 scaled]() {
      if (!tape.has_grad(out)) return;
      const Tensor<T>& dy = tape.grad(out);
      const Tensor<T>& xv2 = tape.val(x);
      const size_t n = xv2.size();
      if (!scaled || norm == 0.0) {
        if (tape.needs_grad(x)) {
          Tensor<T>& gx = tape.grad(x);
          for (size_t i = 0; i < n; ++i) gx.v[i] += dy.v[i];
        }
        return;  // inside the ball: identity, no radius sensitivity
      }
      double x_dot_dy = 0.0;
      for (size_t i = 0; i < n; ++i)
        x_dot_dy += static_cast<double>(xv2.v[i]) * dy.v[i];
      if (tape.needs_grad(x)) {
        Tensor<T>& gx = tape.grad(x);
        const double k = radius / norm;
        const double q = radius * x_dot_dy / (norm * norm * norm);
        for (size_t i = 0; i < n; ++i)
          gx.v[i] += static_cast<T>(k * dy.v[i] - q * xv2.v[i]);
      }
      const double sqn = std::sqrt(static_cast<double>(n) - 1.0);
      if (theta.trainable)
        tape.pgrad(&theta).v[0] +=
            static_cast<T>(sg * sqn * x_dot_dy / norm);
      if (sigma.trainable && static_cast<double>(sigma.value.v[0]) > 0.0)
        tape.pgrad(&sigma).v[0] +=
            static_cast<T>(th * sqn * x_dot_dy / norm);
    });
  }
  return out;
}

// out = base + gain * res + bias, with scalar trainable gain and bias.
template <class T>
typename Tape<T>::Id calibrated_residual(Tape<T>& tape,
                                         typename Tape<T>::Id base,
                                         typename Tape<T>::Id res,
                                         Parameter<T>& gain,
                                         Parameter<T>& bias) {
  const Tensor<T>& bvv = tape.val(base);
  const Tensor<T>& rv = tape.val(res);
  if (!bvv.same_shape(rv)) throw ShapeError("calibrated_residual: shape mismatch");
  const bool out_needs = tape.needs_grad(base) || tape.needs_grad(res) ||
                         gain.trainable || bias.trainable;
  auto out = tape.new_node(bvv.shape, out_needs);
  Tensor<T>& yv = tape.mutable_val(out);
  const T g = gain.value.v[0], off = bias.value.v[0];
  for (size_t i = 0; i < yv.size(); ++i)
    yv.v[i] = bvv.v[i] + g * rv.v[i] + off;
  if (out_needs) {
    tape.record([&tape, base, res, out, &gain, &bias, g]() {
      if (!tape.has_grad(out)) return;
      const Tensor<T>& dy = tape.grad(out);
      if (tape.needs_grad(base)) {
        Tensor<T>& gb = tape.grad(base);
        for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += dy.v[i];
      }
      if (tape.needs_grad(res)) {
        Tensor<T>& gr = tape.grad(res);
        for (size_t i = 0; i < gr.v.size(); ++i) gr.v[i] += g * dy.v[i];
      }
      if (gain.trainable) {
        const Tensor<T>& rv2 = tape.val(res);
        double acc = 0.0;
        for (size_t i = 0; i < rv2.size(); ++i)
          acc += static_cast<double>(rv2.v[i]) * dy.v[i];
        tape.pgrad(&gain).v[0] += static_cast<T>(acc);
      }
      if (bias.trainable) {
        double acc = 0.0;
        for (const T& d : dy.v) acc += d;
        tape.pgrad(&bias).v[0] += static_cast<T>(acc);
      }
    });
  }
  return out;
}

template <class T>
typename Tape<T>::Id detach(Tape<T>& tape, typename Tape<T>::Id x) {
  return tape.leaf(tape.val(x), false);
}

// Adam with standard bias correction; moments live on the parameters so
// checkpoints capture the full optimizer state.
template <class T>
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter<T>*>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Parameter<T>* p : params) {
      if (!p->trainable) continue;
      const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
      for (size_t i = 0; i < p->value.size(); ++i) {
        const T g = p->grad.v[i];
        p->m.v[i] = b1 * p->m.v[i] + (T(1) - b1) * g;
        p->vmom.v[i] = b2 * p->vmom.v[i] + (T(1) - b2) * g * g;
        const T mhat = static_cast<T>(p->m.v[i] / bc1);
        const T vhat = static_cast<T>(p->vmom.v[i] / bc2);
        p->value.v[i] -= static_cast<T>(lr) * mhat /
                         (std::sqrt(vhat) + static_cast<T>(eps_));
      }
    }
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

template <class T>
void zero_grads(const std::vector<Parameter<T>*>& params) {
  for (Parameter<T>* p : params)
    std::fill(p->grad.v.begin(), p->grad.v.end(), T(0));
}

}  // namespace starsr::nn
