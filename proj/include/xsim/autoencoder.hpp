#pragma once

#include <algorithm>
#include <cassert>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xsim/binary_io.hpp"
#include "xsim/core.hpp"
#include "xsim/features.hpp"

namespace xsim {

/// conv5(c1) relu pool2 conv5(c2) relu pool2 fc(B) softmax |
/// fc(D) relu up2 conv5(c1) relu up2 conv5(1), D = (patch/4)^2 * c2.
struct AEArchitecture {
  int patch = 32;
  int kernel = 5;
  int c1 = 16;
  int c2 = 32;
  int bottleneck = 64;

  int half() const { return patch / 2; }
  int quarter() const { return patch / 4; }
  int code_dim() const { return quarter() * quarter() * c2; }

  void validate() const {
    if (patch < 4 || patch % 4 != 0) throw config_error("patch", "must be a positive multiple of 4");
    if (kernel < 1 || kernel % 2 == 0) throw config_error("kernel", "must be odd");
    if (c1 < 1) throw config_error("c1", "must be >= 1");
    if (c2 < 1) throw config_error("c2", "must be >= 1");
    if (bottleneck < 2) throw config_error("bottleneck", "must be >= 2");
  }
  friend bool operator==(const AEArchitecture&, const AEArchitecture&) = default;
};

/// Parameter tensors in declaration order. Conv weights are
/// (out channel, kernel tap, in channel) with taps row-major.
enum AETensor : int { W1, B1, W2, B2, WF, BF, WD, BD, W3, B3, W4, B4, kAETensorCount };

struct AETensorInfo {
  const char* name;
  std::vector<std::uint32_t> shape;
  std::size_t offset;
  std::size_t size;
};

inline std::vector<AETensorInfo> ae_layout(const AEArchitecture& a) {
  const auto k2 = static_cast<std::uint32_t>(a.kernel * a.kernel);
  const auto c1 = static_cast<std::uint32_t>(a.c1), c2 = static_cast<std::uint32_t>(a.c2);
  const auto B = static_cast<std::uint32_t>(a.bottleneck), D = static_cast<std::uint32_t>(a.code_dim());
  std::vector<AETensorInfo> t = {
      {"enc.conv1.weight", {c1, k2, 1}, 0, 0},  {"enc.conv1.bias", {c1}, 0, 0},
      {"enc.conv2.weight", {c2, k2, c1}, 0, 0}, {"enc.conv2.bias", {c2}, 0, 0},
      {"enc.fc.weight", {B, D}, 0, 0},          {"enc.fc.bias", {B}, 0, 0},
      {"dec.fc.weight", {D, B}, 0, 0},          {"dec.fc.bias", {D}, 0, 0},
      {"dec.conv1.weight", {c1, k2, c2}, 0, 0}, {"dec.conv1.bias", {c1}, 0, 0},
      {"dec.conv2.weight", {1, k2, c1}, 0, 0},  {"dec.conv2.bias", {1}, 0, 0},
  };
  std::size_t off = 0;
  for (auto& x : t) {
    x.offset = off;
    x.size = std::accumulate(x.shape.begin(), x.shape.end(), std::size_t{1},
                             [](std::size_t p, std::uint32_t v) { return p * v; });
    off += x.size;
  }
  return t;
}

inline std::size_t ae_param_count(const AEArchitecture& a) {
  const auto t = ae_layout(a);
  return t.back().offset + t.back().size;
}

/// Parameter storage. Eigen reductions over unaligned maps peel a
/// leading segment whose length depends on the address, which would make
/// results depend on where the allocator put the buffer.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct AEModel {
  AEArchitecture arch;
  AlignedVector<T> params;
  std::vector<double> loss_log;  // mean loss per training epoch

  friend bool operator==(const AEModel&, const AEModel&) = default;
};

/// Weights ~ N(0, 2 / fan_in) (1 / fan_in into the softmax), biases zero.
template <typename T>
AEModel<T> init_autoencoder(const AEArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  AEModel<T> m;
  m.arch = arch;
  m.params.assign(ae_param_count(arch), T(0));
  Stream rng(seed, "ae.init");
  const auto layout = ae_layout(arch);
  for (int t : {W1, W2, WF, WD, W3, W4}) {
    const auto& info = layout[static_cast<std::size_t>(t)];
    const double fan_in = static_cast<double>(info.size / info.shape[0]);
    const double sd = std::sqrt((t == WF ? 1.0 : 2.0) / fan_in);
    for (std::size_t i = 0; i < info.size; ++i) m.params[info.offset + i] = static_cast<T>(sd * rng.normal());
  }
  return m;
}

/// 64-bit model for finite-difference checks. Biases are drawn from
/// N(0, 0.1^2): with zero biases pre-activations can sit exactly on the
/// rectifier kink, where central differences are meaningless.
inline AEModel<double> gradient_check_model(const AEArchitecture& arch, std::uint64_t seed) {
  auto m = init_autoencoder<double>(arch, seed);
  Stream rng(seed, "ae.check.bias");
  const auto layout = ae_layout(arch);
  for (int t : {B1, B2, BF, BD, B3, B4}) {
    const auto& info = layout[static_cast<std::size_t>(t)];
    for (std::size_t i = 0; i < info.size; ++i) m.params[info.offset + i] = 0.1 * rng.normal();
  }
  return m;
}

//---------------------------------------------------------------------------//
// Layer primitives. Activations are C x (N*H*W) column-major matrices whose
// column index is n*H*W + y*W + x.
//---------------------------------------------------------------------------//

namespace ae {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using RMapMut = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using VMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// Same-padded k x k patches: (k*k*C) x (N*H*W), row (ky*k + kx)*C + c.
/// With channels innermost every tap is one contiguous copy.
template <typename T>
void im2col(const Mat<T>& in, int C, int N, int H, int W, int k, Mat<T>& cols) {
  const int r = k / 2;
  const Eigen::Index HW = static_cast<Eigen::Index>(H) * W;
  cols.resize(static_cast<Eigen::Index>(C) * k * k, HW * N);
  const T* src = in.data();
  for (Eigen::Index n = 0; n < N; ++n)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        T* col = cols.data() + (n * HW + y * W + x) * cols.rows();
        for (int ky = 0; ky < k; ++ky) {
          const int sy = y + ky - r;
          for (int kx = 0; kx < k; ++kx, col += C) {
            const int sx = x + kx - r;
            if (sy < 0 || sy >= H || sx < 0 || sx >= W)
              std::fill(col, col + C, T(0));
            else
              std::copy_n(src + (n * HW + sy * W + sx) * C, C, col);
          }
        }
      }
}

/// Adjoint of im2col.
template <typename T>
void col2im(const Mat<T>& cols, int C, int N, int H, int W, int k, Mat<T>& out) {
  const int r = k / 2;
  const Eigen::Index HW = static_cast<Eigen::Index>(H) * W;
  out.setZero(C, HW * N);
  T* dst = out.data();
  for (Eigen::Index n = 0; n < N; ++n)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const T* col = cols.data() + (n * HW + y * W + x) * cols.rows();
        for (int ky = 0; ky < k; ++ky) {
          const int sy = y + ky - r;
          for (int kx = 0; kx < k; ++kx, col += C) {
            const int sx = x + kx - r;
            if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
            T* o = dst + (n * HW + sy * W + sx) * C;
            for (int c = 0; c < C; ++c) o[c] += col[c];
          }
        }
      }
}

/// Same-padded convolution (cross-correlation) with bias.
template <typename T>
void conv_forward(const Mat<T>& in, int Cin, int Cout, int N, int H, int W, int k, const T* w,
                  const T* b, Mat<T>& cols, Mat<T>& out) {
  im2col(in, Cin, N, H, W, k, cols);
  out.noalias() = RMap<T>(w, Cout, static_cast<Eigen::Index>(Cin) * k * k) * cols;
  out.colwise() += VMap<T>(b, Cout);
}

namespace direct {

// Layers with one channel on either side skip im2col. The weights are viewed
// as taps x C, where C is the channel count of the wide side; for Cin == 1
// that needs a transpose of the (out, tap, in) layout, for Cout == 1 it is
// the layout itself. CC > 0 fixes C at compile time.

template <int CC, typename T>
using CVec = Eigen::Matrix<T, (CC > 0 ? CC : Eigen::Dynamic), 1>;

// y += a * x over C entries.
template <int CC, typename T>
inline void axpy(T* y, const T* x, T a, int C) {
  Eigen::Map<CVec<CC, T>>(y, C) += a * Eigen::Map<const CVec<CC, T>>(x, C);
}

template <int CC, typename T>
inline T dot(const T* x, const T* y, int C) {
  return Eigen::Map<const CVec<CC, T>>(x, C).dot(Eigen::Map<const CVec<CC, T>>(y, C));
}

template <int CC, typename T>
void spread_forward(const T* x, const T* wt, const T* b, int C_, int N, int H, int W, int k, T* out) {
  const int C = CC > 0 ? CC : C_, r = k / 2;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  for (std::size_t p = 0; p < HW * N; ++p)
    for (int c = 0; c < C; ++c) out[p * C + c] = b[c];
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < H; ++y)
      for (int ky = 0; ky < k; ++ky) {
        const int sy = y + ky - r;
        if (sy < 0 || sy >= H) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int x0 = std::max(0, r - kx), x1 = std::min(W, W + r - kx);
          const T* wk = wt + static_cast<std::size_t>(ky * k + kx) * C;
          const T* src = x + n * HW + static_cast<std::size_t>(sy) * W + (kx - r);
          T* dst = out + (n * HW + static_cast<std::size_t>(y) * W) * C;
          for (int xx = x0; xx < x1; ++xx) {
            const T v = src[xx];
            T* o = dst + static_cast<std::size_t>(xx) * C;
            axpy<CC>(o, wk, v, C);
          }
        }
      }
}

template <int CC, typename T>
void gather_forward(const T* in, const T* wt, T b, int C_, int N, int H, int W, int k, T* out) {
  const int C = CC > 0 ? CC : C_, r = k / 2;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  for (std::size_t p = 0; p < HW * N; ++p) out[p] = b;
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < H; ++y)
      for (int ky = 0; ky < k; ++ky) {
        const int sy = y + ky - r;
        if (sy < 0 || sy >= H) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int x0 = std::max(0, r - kx), x1 = std::min(W, W + r - kx);
          const T* wk = wt + static_cast<std::size_t>(ky * k + kx) * C;
          const T* src = in + (n * HW + static_cast<std::size_t>(sy) * W) * C;
          T* dst = out + n * HW + static_cast<std::size_t>(y) * W;
          for (int xx = x0; xx < x1; ++xx) {
            const T* v = src + static_cast<std::size_t>(xx + kx - r) * C;
            dst[xx] += dot<CC>(wk, v, C);
          }
        }
      }
}

// g is C x pixels, x is the single-channel input. Accumulates dwt, db, and
// dx when given.
template <int CC, typename T>
void spread_backward(const T* x, const T* g, const T* wt, int C_, int N, int H, int W, int k, T* dwt, T* db,
                     T* dx) {
  const int C = CC > 0 ? CC : C_, r = k / 2;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  for (std::size_t p = 0; p < HW * N; ++p)
    for (int c = 0; c < C; ++c) db[c] += g[p * C + c];
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < H; ++y)
      for (int ky = 0; ky < k; ++ky) {
        const int sy = y + ky - r;
        if (sy < 0 || sy >= H) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int x0 = std::max(0, r - kx), x1 = std::min(W, W + r - kx);
          const T* wk = wt + static_cast<std::size_t>(ky * k + kx) * C;
          T* dwk = dwt + static_cast<std::size_t>(ky * k + kx) * C;
          const std::size_t srow = n * HW + static_cast<std::size_t>(sy) * W + (kx - r);
          const T* gr = g + (n * HW + static_cast<std::size_t>(y) * W) * C;
          for (int xx = x0; xx < x1; ++xx) {
            const T v = x[srow + xx];
            const T* gp = gr + static_cast<std::size_t>(xx) * C;
            axpy<CC>(dwk, gp, v, C);
          }
          if (dx)
            for (int xx = x0; xx < x1; ++xx) {
              const T* gp = gr + static_cast<std::size_t>(xx) * C;
              dx[srow + xx] += dot<CC>(wk, gp, C);
            }
        }
      }
}

// g is one channel, in is C x pixels.
template <int CC, typename T>
void gather_backward(const T* in, const T* g, const T* wt, int C_, int N, int H, int W, int k, T* dwt, T* db,
                     T* din) {
  const int C = CC > 0 ? CC : C_, r = k / 2;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  for (std::size_t p = 0; p < HW * N; ++p) db[0] += g[p];
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < H; ++y)
      for (int ky = 0; ky < k; ++ky) {
        const int sy = y + ky - r;
        if (sy < 0 || sy >= H) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int x0 = std::max(0, r - kx), x1 = std::min(W, W + r - kx);
          const T* wk = wt + static_cast<std::size_t>(ky * k + kx) * C;
          T* dwk = dwt + static_cast<std::size_t>(ky * k + kx) * C;
          const std::size_t srow = (n * HW + static_cast<std::size_t>(sy) * W) * C;
          const T* gr = g + n * HW + static_cast<std::size_t>(y) * W;
          for (int xx = x0; xx < x1; ++xx) {
            const T gv = gr[xx];
            const std::size_t at = srow + static_cast<std::size_t>(xx + kx - r) * C;
            const T* v = in + at;
            axpy<CC>(dwk, v, gv, C);
            if (din) {
              axpy<CC>(din + at, wk, gv, C);
            }
          }
        }
      }
}

template <typename F>
void dispatch(int C, F&& f) {
  switch (C) {
    case 4: f(std::integral_constant<int, 4>{}); break;
    case 8: f(std::integral_constant<int, 8>{}); break;
    case 16: f(std::integral_constant<int, 16>{}); break;
    case 32: f(std::integral_constant<int, 32>{}); break;
    default: f(std::integral_constant<int, 0>{});
  }
}

template <typename T>
AlignedVector<T> taps_by_channel(const T* w, int Cin, int Cout, int taps) {
  if (Cout == 1) return {w, w + static_cast<std::size_t>(taps) * Cin};
  AlignedVector<T> wt(static_cast<std::size_t>(taps) * Cout);
  for (int co = 0; co < Cout; ++co)
    for (int t = 0; t < taps; ++t) wt[static_cast<std::size_t>(t) * Cout + co] = w[static_cast<std::size_t>(co) * taps + t];
  return wt;
}

}  // namespace direct

/// Convolution for a layer with Cin == 1 or Cout == 1. Same layout and
/// weights as conv_forward.
template <typename T>
void direct_conv_forward(const Mat<T>& in, int Cin, int Cout, int N, int H, int W, int k, const T* w,
                         const T* b, Mat<T>& out) {
  assert(Cin == 1 || Cout == 1);
  out.resize(Cout, static_cast<Eigen::Index>(H) * W * N);
  const auto wt = direct::taps_by_channel(w, Cin, Cout, k * k);
  if (Cin == 1)
    direct::dispatch(Cout, [&](auto cc) {
      direct::spread_forward<decltype(cc)::value>(in.data(), wt.data(), b, Cout, N, H, W, k, out.data());
    });
  else
    direct::dispatch(Cin, [&](auto cc) {
      direct::gather_forward<decltype(cc)::value>(in.data(), wt.data(), b[0], Cin, N, H, W, k, out.data());
    });
}

/// Weight, bias and (optionally) input gradients of direct_conv_forward.
template <typename T>
void direct_conv_backward(const Mat<T>& in, const Mat<T>& dout, int Cin, int Cout, int N, int H, int W, int k,
                          const T* w, T* dw, T* db, Mat<T>* din) {
  assert(Cin == 1 || Cout == 1);
  const int taps = k * k;
  const auto wt = direct::taps_by_channel(w, Cin, Cout, taps);
  AlignedVector<T> dwt(wt.size(), T(0));
  std::fill(db, db + Cout, T(0));
  if (din) din->setZero(Cin, static_cast<Eigen::Index>(H) * W * N);
  T* dptr = din ? din->data() : nullptr;
  if (Cin == 1)
    direct::dispatch(Cout, [&](auto cc) {
      direct::spread_backward<decltype(cc)::value>(in.data(), dout.data(), wt.data(), Cout, N, H, W, k,
                                                   dwt.data(), db, dptr);
    });
  else
    direct::dispatch(Cin, [&](auto cc) {
      direct::gather_backward<decltype(cc)::value>(in.data(), dout.data(), wt.data(), Cin, N, H, W, k,
                                                   dwt.data(), db, dptr);
    });
  if (Cout == 1) {
    std::copy(dwt.begin(), dwt.end(), dw);
  } else {
    for (int co = 0; co < Cout; ++co)
      for (int t = 0; t < taps; ++t)
        dw[static_cast<std::size_t>(co) * taps + t] = dwt[static_cast<std::size_t>(t) * Cout + co];
  }
}

template <typename T>
void avg_pool2(const Mat<T>& in, int C, int N, int H, int W, Mat<T>& out) {
  const int h = H / 2, w = W / 2;
  out.resize(C, static_cast<Eigen::Index>(N) * h * w);
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const Eigen::Index o = (static_cast<Eigen::Index>(n) * h + y) * w + x;
        const Eigen::Index i = (static_cast<Eigen::Index>(n) * H + 2 * y) * W + 2 * x;
        out.col(o) = T(0.25) * (in.col(i) + in.col(i + 1) + in.col(i + W) + in.col(i + W + 1));
      }
}

template <typename T>
void avg_pool2_backward(const Mat<T>& dout, int C, int N, int H, int W, Mat<T>& din) {
  const int h = H / 2, w = W / 2;
  din.resize(C, static_cast<Eigen::Index>(N) * H * W);
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const Eigen::Index o = (static_cast<Eigen::Index>(n) * h + y) * w + x;
        const Eigen::Index i = (static_cast<Eigen::Index>(n) * H + 2 * y) * W + 2 * x;
        const auto g = (T(0.25) * dout.col(o)).eval();
        din.col(i) = g;
        din.col(i + 1) = g;
        din.col(i + W) = g;
        din.col(i + W + 1) = g;
      }
}

/// Nearest-neighbour 2x upsampling of an (H, W) map.
template <typename T>
void upsample2(const Mat<T>& in, int C, int N, int H, int W, Mat<T>& out) {
  out.resize(C, static_cast<Eigen::Index>(N) * 4 * H * W);
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < 2 * H; ++y)
      for (int x = 0; x < 2 * W; ++x)
        out.col((static_cast<Eigen::Index>(n) * 2 * H + y) * 2 * W + x) =
            in.col((static_cast<Eigen::Index>(n) * H + y / 2) * W + x / 2);
}

template <typename T>
void upsample2_backward(const Mat<T>& dout, int C, int N, int H, int W, Mat<T>& din) {
  din.setZero(C, static_cast<Eigen::Index>(N) * H * W);
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < 2 * H; ++y)
      for (int x = 0; x < 2 * W; ++x)
        din.col((static_cast<Eigen::Index>(n) * H + y / 2) * W + x / 2) +=
            dout.col((static_cast<Eigen::Index>(n) * 2 * H + y) * 2 * W + x);
}

template <typename T>
void softmax_columns(Mat<T>& z) {
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    auto c = z.col(j);
    c.array() = (c.array() - c.maxCoeff()).exp();
    c /= c.sum();
  }
}

template <typename T>
struct Cache {
  int N = 0;
  Mat<T> x, a1, h1, p1, cols2, a2, h2, p2, z, s, g, hg, u1, cols3, a3, h3, u2, out;
};

template <typename T>
const T* tensor(const AEModel<T>& m, const std::vector<AETensorInfo>& L, int t) {
  return m.params.data() + L[static_cast<std::size_t>(t)].offset;
}

/// Decoder from bottleneck columns s (B x N).
template <typename T>
void decode(const AEModel<T>& m, const std::vector<AETensorInfo>& L, Cache<T>& c) {
  const auto& a = m.arch;
  const int N = c.N, P = a.patch, H = a.half(), Q = a.quarter(), D = a.code_dim();
  c.g.noalias() = RMap<T>(tensor(m, L, WD), D, a.bottleneck) * c.s;
  c.g.colwise() += VMap<T>(tensor(m, L, BD), D);
  // The code vector of sample n is laid out as Q*Q positions of c2
  // channels, so its memory is the c2 x (N*Q*Q) map directly.
  c.hg = c.g.cwiseMax(T(0));
  c.hg.resize(a.c2, static_cast<Eigen::Index>(N) * Q * Q);
  upsample2(c.hg, a.c2, N, Q, Q, c.u1);
  conv_forward(c.u1, a.c2, a.c1, N, H, H, a.kernel, tensor(m, L, W3), tensor(m, L, B3), c.cols3, c.a3);
  c.h3 = c.a3.cwiseMax(T(0));
  upsample2(c.h3, a.c1, N, H, H, c.u2);
  direct_conv_forward(c.u2, a.c1, 1, N, P, P, a.kernel, tensor(m, L, W4), tensor(m, L, B4), c.out);
}

/// Forward pass over rows of X (each a patch*patch standardized patch).
template <typename T>
void forward(const AEModel<T>& m, const std::vector<AETensorInfo>& L, const PatchMatrix& X,
             Cache<T>& c) {
  const auto& a = m.arch;
  const int P = a.patch, H = a.half(), Q = a.quarter(), D = a.code_dim();
  if (X.cols() != static_cast<Eigen::Index>(P) * P)
    throw Error(ErrorKind::Data, "dimension",
                "patch length " + std::to_string(X.cols()) + " does not match the model");
  const int N = static_cast<int>(X.rows());
  c.N = N;
  c.x = Eigen::Map<const Eigen::Matrix<float, 1, Eigen::Dynamic>>(X.data(), X.size()).template cast<T>();
  direct_conv_forward(c.x, 1, a.c1, N, P, P, a.kernel, tensor(m, L, W1), tensor(m, L, B1), c.a1);
  c.h1 = c.a1.cwiseMax(T(0));
  avg_pool2(c.h1, a.c1, N, P, P, c.p1);
  conv_forward(c.p1, a.c1, a.c2, N, H, H, a.kernel, tensor(m, L, W2), tensor(m, L, B2), c.cols2, c.a2);
  c.h2 = c.a2.cwiseMax(T(0));
  avg_pool2(c.h2, a.c2, N, H, H, c.p2);
  const Eigen::Map<const Mat<T>> f(c.p2.data(), D, N);
  c.z.noalias() = RMap<T>(tensor(m, L, WF), a.bottleneck, D) * f;
  c.z.colwise() += VMap<T>(tensor(m, L, BF), a.bottleneck);
  c.s = c.z;
  softmax_columns(c.s);
  decode(m, L, c);
}

}  // namespace ae

//---------------------------------------------------------------------------//
// Public operations
//---------------------------------------------------------------------------//

struct AEOutput {
  Eigen::VectorXd bottleneck;
  Grid<double> reconstruction;
};

template <typename T>
AEOutput ae_forward(const AEModel<T>& m, const float* patch, std::size_t length) {
  const auto L = ae_layout(m.arch);
  PatchMatrix X = Eigen::Map<const PatchMatrix>(patch, 1, static_cast<Eigen::Index>(length));
  ae::Cache<T> c;
  ae::forward(m, L, X, c);
  AEOutput o;
  o.bottleneck = c.s.col(0).template cast<double>();
  const auto P = static_cast<std::size_t>(m.arch.patch);
  o.reconstruction = Grid<double>(P, P, 0.0);
  for (std::size_t i = 0; i < P * P; ++i) o.reconstruction.data[i] = static_cast<double>(c.out(0, static_cast<Eigen::Index>(i)));
  return o;
}

/// Softmax bottleneck rows (N x B) for a batch of patches.
template <typename T>
RowMatrix ae_encode(const AEModel<T>& m, const PatchMatrix& X) {
  const auto L = ae_layout(m.arch);
  RowMatrix out(X.rows(), m.arch.bottleneck);
  constexpr Eigen::Index kBatch = 256;
  ae::Cache<T> c;
  for (Eigen::Index b = 0; b < X.rows(); b += kBatch) {
    const Eigen::Index n = std::min(kBatch, X.rows() - b);
    const PatchMatrix part = X.middleRows(b, n);
    ae::forward(m, L, part, c);
    out.middleRows(b, n) = c.s.transpose().template cast<double>();
  }
  return out;
}

/// Patch encoder producing the softmax bottleneck (soft assignment).
template <typename T>
struct SoftEncoder {
  const AEModel<T>& model;

  std::size_t dim() const { return static_cast<std::size_t>(model.arch.bottleneck); }
  RowMatrix encode(const PatchMatrix& X) const { return ae_encode(model, X); }
};

/// One-hot rows at the bottleneck argmax, ties to the lowest index.
template <typename T>
struct ArgmaxEncoder {
  const AEModel<T>& model;

  std::size_t dim() const { return static_cast<std::size_t>(model.arch.bottleneck); }
  RowMatrix encode(const PatchMatrix& X) const {
    RowMatrix s = ae_encode(model, X);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      Eigen::Index j = 0;
      s.row(i).maxCoeff(&j);
      s.row(i).setZero();
      s(i, j) = 1.0;
    }
    return s;
  }
};

/// Per-patch mean squared reconstruction errors.
template <typename T>
std::vector<double> reconstruction_errors(const AEModel<T>& m, const PatchMatrix& X) {
  const auto L = ae_layout(m.arch);
  const Eigen::Index d = X.cols();
  std::vector<double> err(static_cast<std::size_t>(X.rows()));
  constexpr Eigen::Index kBatch = 256;
  ae::Cache<T> c;
  for (Eigen::Index b = 0; b < X.rows(); b += kBatch) {
    const Eigen::Index n = std::min(kBatch, X.rows() - b);
    const PatchMatrix part = X.middleRows(b, n);
    ae::forward(m, L, part, c);
    for (Eigen::Index i = 0; i < n; ++i) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) {
        const double e = static_cast<double>(c.out(0, i * d + j)) - static_cast<double>(c.x(0, i * d + j));
        s += e * e;
      }
      err[static_cast<std::size_t>(b + i)] = s / static_cast<double>(d);
    }
  }
  return err;
}

struct ReconstructionStats {
  double min = 0.0, max = 0.0, mean = 0.0;
};

template <typename T>
ReconstructionStats reconstruction_stats(const AEModel<T>& m, const PatchMatrix& X) {
  const auto e = reconstruction_errors(m, X);
  if (e.empty()) throw Error(ErrorKind::Data, "empty", "no patches");
  ReconstructionStats s;
  s.min = *std::min_element(e.begin(), e.end());
  s.max = *std::max_element(e.begin(), e.end());
  s.mean = std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
  return s;
}

inline std::string format_reconstruction_stats(const ReconstructionStats& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "minimum reconstruction error %.4f, maximum %.4f, average %.4f",
                s.min, s.max, s.mean);
  return buf;
}

template <typename T>
struct LossGradient {
  double loss = 0.0;
  AlignedVector<T> gradient;
};

/// Buffers reused across loss_and_gradient calls.
template <typename T>
struct AEWorkspace {
  ae::Cache<T> c;
  ae::Mat<T> dout, dcols, du2, da3, du1, tmp, dg, ds, dz, df, da2, dp1, da1;
  AlignedVector<T> gradient;
};

/// Mean over the batch of the per-patch mean squared reconstruction error;
/// the gradient (backpropagation) is left in ws.gradient.
template <typename T>
double loss_and_gradient(const AEModel<T>& m, const PatchMatrix& X, AEWorkspace<T>& ws) {
  using namespace ae;
  if (X.rows() < 1) throw Error(ErrorKind::Data, "empty", "empty batch");
  const auto& a = m.arch;
  const auto L = ae_layout(a);
  const int P = a.patch, H = a.half(), Q = a.quarter(), D = a.code_dim(), B = a.bottleneck, k = a.kernel;
  auto& c = ws.c;
  forward(m, L, X, c);
  const int N = c.N;
  const T M1 = static_cast<T>(static_cast<double>(N) * P * P);

  ws.gradient.assign(m.params.size(), T(0));
  auto G = [&](int t) { return ws.gradient.data() + L[static_cast<std::size_t>(t)].offset; };
  auto conv_grads = [&](const Mat<T>& da, const Mat<T>& cols, int t_w, int t_b, int cout, int cin) {
    RMapMut<T>(G(t_w), cout, static_cast<Eigen::Index>(cin) * k * k).noalias() = da * cols.transpose();
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(G(t_b), cout) = da.rowwise().sum();
  };
  auto conv_input_grad = [&](const Mat<T>& da, int t_w, int cout, int cin) {
    ws.dcols.noalias() = RMap<T>(tensor(m, L, t_w), cout, static_cast<Eigen::Index>(cin) * k * k).transpose() * da;
  };

  ws.dout = c.out - c.x;
  const double loss = static_cast<double>(ws.dout.squaredNorm()) / static_cast<double>(M1);
  ws.dout *= T(2) / M1;

  direct_conv_backward(c.u2, ws.dout, a.c1, 1, N, P, P, k, tensor(m, L, W4), G(W4), G(B4), &ws.du2);
  upsample2_backward(ws.du2, a.c1, N, H, H, ws.da3);
  ws.da3.array() *= (c.a3.array() > T(0)).template cast<T>();
  conv_grads(ws.da3, c.cols3, W3, B3, a.c1, a.c2);
  conv_input_grad(ws.da3, W3, a.c1, a.c2);
  col2im(ws.dcols, a.c2, N, H, H, k, ws.du1);
  upsample2_backward(ws.du1, a.c2, N, Q, Q, ws.tmp);
  ws.dg = Eigen::Map<const Mat<T>>(ws.tmp.data(), D, N);
  ws.dg.array() *= (c.g.array() > T(0)).template cast<T>();
  RMapMut<T>(G(WD), D, B).noalias() = ws.dg * c.s.transpose();
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(G(BD), D) = ws.dg.rowwise().sum();
  ws.ds.noalias() = RMap<T>(tensor(m, L, WD), D, B).transpose() * ws.dg;
  ws.dz.resize(B, N);
  for (int j = 0; j < N; ++j) {
    const T dot = c.s.col(j).dot(ws.ds.col(j));
    ws.dz.col(j) = c.s.col(j).cwiseProduct((ws.ds.col(j).array() - dot).matrix());
  }
  const Eigen::Map<const Mat<T>> f(c.p2.data(), D, N);
  RMapMut<T>(G(WF), B, D).noalias() = ws.dz * f.transpose();
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(G(BF), B) = ws.dz.rowwise().sum();
  ws.df.noalias() = RMap<T>(tensor(m, L, WF), B, D).transpose() * ws.dz;
  ws.df.resize(a.c2, static_cast<Eigen::Index>(N) * Q * Q);
  avg_pool2_backward(ws.df, a.c2, N, H, H, ws.da2);
  ws.da2.array() *= (c.a2.array() > T(0)).template cast<T>();
  conv_grads(ws.da2, c.cols2, W2, B2, a.c2, a.c1);
  conv_input_grad(ws.da2, W2, a.c2, a.c1);
  col2im(ws.dcols, a.c1, N, H, H, k, ws.dp1);
  avg_pool2_backward(ws.dp1, a.c1, N, P, P, ws.da1);
  ws.da1.array() *= (c.a1.array() > T(0)).template cast<T>();
  direct_conv_backward<T>(c.x, ws.da1, 1, a.c1, N, P, P, k, tensor(m, L, W1), G(W1), G(B1), nullptr);
  return loss;
}

template <typename T>
LossGradient<T> loss_and_gradient(const AEModel<T>& m, const PatchMatrix& X) {
  AEWorkspace<T> ws;
  LossGradient<T> r;
  r.loss = loss_and_gradient(m, X, ws);
  r.gradient = std::move(ws.gradient);
  return r;
}

/// Loss only (used by finite differences).
template <typename T>
double ae_loss(const AEModel<T>& m, const PatchMatrix& X) {
  const auto L = ae_layout(m.arch);
  ae::Cache<T> c;
  ae::forward(m, L, X, c);
  return static_cast<double>((c.out - c.x).squaredNorm()) / static_cast<double>(c.out.size());
}

struct GradCheckResult {
  double max_rel_error = 0.0;  // over coordinates with |gradient| >= grad_floor
  double max_abs_error = 0.0;  // over the remaining coordinates
  std::size_t checked = 0;
  std::size_t small = 0;       // coordinates below grad_floor
  std::size_t failures = 0;
  std::size_t kinked = 0;      // +h and -h straddle a rectifier kink; not compared
  std::vector<double> tensor_max_rel;  // per tensor, same rule
};

namespace ae {

/// Loss plus the sign pattern of every rectifier input.
inline double loss_and_pattern(const AEModel<double>& m, const std::vector<AETensorInfo>& L, const PatchMatrix& X,
                               std::vector<bool>& on) {
  Cache<double> c;
  forward(m, L, X, c);
  on.clear();
  for (const Mat<double>* a : {&c.a1, &c.a2, &c.g, &c.a3})
    for (Eigen::Index i = 0; i < a->size(); ++i) on.push_back(a->data()[i] > 0.0);
  return (c.out - c.x).squaredNorm() / static_cast<double>(c.out.size());
}

}  // namespace ae

/// Central differences on every parameter. Coordinates whose gradient is at
/// least grad_floor in magnitude must match to rel_tol; the rest, where a
/// relative error means little, must match to abs_tol. A coordinate whose
/// two evaluations see different rectifier patterns crossed a kink, where
/// central differences do not estimate the derivative; it is counted in
/// `kinked` and skipped.
inline GradCheckResult gradient_check(AEModel<double> m, const PatchMatrix& X, double h = 1e-5,
                                      double rel_tol = 1e-5, double abs_tol = 1e-8,
                                      double grad_floor = 1e-6) {
  const auto analytic = loss_and_gradient(m, X).gradient;
  const auto L = ae_layout(m.arch);
  GradCheckResult r;
  r.tensor_max_rel.assign(L.size(), 0.0);
  std::vector<bool> on_up, on_dn;
  for (std::size_t t = 0; t < L.size(); ++t)
    for (std::size_t i = L[t].offset; i < L[t].offset + L[t].size; ++i) {
      const double keep = m.params[i];
      m.params[i] = keep + h;
      const double up = ae::loss_and_pattern(m, L, X, on_up);
      m.params[i] = keep - h;
      const double dn = ae::loss_and_pattern(m, L, X, on_dn);
      m.params[i] = keep;
      if (on_up != on_dn) {
        ++r.kinked;
        continue;
      }
      const double fd = (up - dn) / (2.0 * h);
      const double scale = std::max(std::abs(fd), std::abs(analytic[i]));
      const double abs_err = std::abs(fd - analytic[i]);
      ++r.checked;
      if (scale >= grad_floor) {
        const double rel_err = abs_err / scale;
        if (!(rel_err < rel_tol)) ++r.failures;
        r.max_rel_error = std::max(r.max_rel_error, rel_err);
        r.tensor_max_rel[t] = std::max(r.tensor_max_rel[t], rel_err);
      } else {
        ++r.small;
        if (!(abs_err < abs_tol)) ++r.failures;
        r.max_abs_error = std::max(r.max_abs_error, abs_err);
      }
    }
  return r;
}

struct TrainOptions {
  int epochs = 200;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  int plateau_patience = 5;       // epochs without 0.1% improvement before halving
  double plateau_factor = 0.5;
  std::uint64_t seed = 1;         // shuffling
  unsigned threads = 1;
  std::function<void(int, double, double)> on_epoch;  // (epoch, loss, lr)
};

/// Mini-batch SGD with momentum. Each batch is split into fixed chunks of
/// 8 patches whose gradients are summed in chunk order, so results do not
/// depend on the thread count.
template <typename T>
void train_autoencoder(AEModel<T>& m, const PatchMatrix& X, const TrainOptions& opt) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (n == 0 || opt.batch_size == 0) throw Error(ErrorKind::Data, "empty", "no training batches");
  const std::size_t P = m.params.size();
  AlignedVector<T> velocity(P, T(0));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Stream rng(opt.seed, "ae.shuffle");
  double lr = opt.learning_rate, best = std::numeric_limits<double>::infinity();
  int stale = 0;
  constexpr std::size_t kChunk = 8;
  const std::size_t max_chunks = (opt.batch_size + kChunk - 1) / kChunk;
  std::vector<AEWorkspace<T>> work(max_chunks);
  std::vector<PatchMatrix> inputs(max_chunks);
  std::vector<double> losses(max_chunks);
  AlignedVector<T> grad(P);

  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += opt.batch_size) {
      const std::size_t nb = std::min(opt.batch_size, n - b0);
      const std::size_t chunks = (nb + kChunk - 1) / kChunk;
      parallel_for(chunks, opt.threads, [&](std::size_t c) {
        const std::size_t s = c * kChunk, e = std::min(nb, s + kChunk);
        auto& xb = inputs[c];
        xb.resize(static_cast<Eigen::Index>(e - s), X.cols());
        for (std::size_t i = s; i < e; ++i) xb.row(static_cast<Eigen::Index>(i - s)) = X.row(static_cast<Eigen::Index>(order[b0 + i]));
        losses[c] = loss_and_gradient(m, xb, work[c]);
      });
      std::fill(grad.begin(), grad.end(), T(0));
      double loss = 0.0;
      for (std::size_t c = 0; c < chunks; ++c) {
        const double w = static_cast<double>(std::min(nb, (c + 1) * kChunk) - c * kChunk) / static_cast<double>(nb);
        loss += w * losses[c];
        const T wt = static_cast<T>(w);
        const auto& gc = work[c].gradient;
        for (std::size_t j = 0; j < P; ++j) grad[j] += wt * gc[j];
      }
      if (!std::isfinite(loss))
        throw Error(ErrorKind::Numeric, "divergence", "training loss is not finite in epoch " + std::to_string(epoch));
      epoch_loss += loss * static_cast<double>(nb);
      for (std::size_t j = 0; j < P; ++j) {
        velocity[j] = static_cast<T>(opt.momentum) * velocity[j] - static_cast<T>(lr) * grad[j];
        m.params[j] += velocity[j];
      }
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss))
      throw Error(ErrorKind::Numeric, "divergence", "training loss is not finite in epoch " + std::to_string(epoch));
    m.loss_log.push_back(epoch_loss);
    if (opt.on_epoch) opt.on_epoch(epoch, epoch_loss, lr);
    if (epoch_loss < best * (1.0 - 1e-3)) {
      best = epoch_loss;
      stale = 0;
    } else if (++stale >= opt.plateau_patience) {
      lr *= opt.plateau_factor;
      stale = 0;
    }
  }
}

/// Decodes the one-hot bottleneck e_j.
template <typename T>
Grid<double> probe_cluster(const AEModel<T>& m, int j) {
  if (j < 0 || j >= m.arch.bottleneck)
    throw Error(ErrorKind::Data, "index", "cluster index " + std::to_string(j) + " outside [0, " +
                                              std::to_string(m.arch.bottleneck) + ")");
  const auto L = ae_layout(m.arch);
  ae::Cache<T> c;
  c.N = 1;
  c.s = ae::Mat<T>::Zero(m.arch.bottleneck, 1);
  c.s(j, 0) = T(1);
  ae::decode(m, L, c);
  const auto P = static_cast<std::size_t>(m.arch.patch);
  Grid<double> g(P, P, 0.0);
  for (std::size_t i = 0; i < P * P; ++i) g.data[i] = static_cast<double>(c.out(0, static_cast<Eigen::Index>(i)));
  return g;
}

/// Affine rescale to [0, 65535] for viewing; a constant grid maps to 0.
inline SyntheticImage grid_to_image(const Grid<double>& g) {
  const auto [lo, hi] = std::minmax_element(g.data.begin(), g.data.end());
  SyntheticImage img{static_cast<std::uint32_t>(g.width), static_cast<std::uint32_t>(g.height), {}};
  img.pixels.resize(g.data.size());
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < g.data.size(); ++i)
    img.pixels[i] = span > 0 ? static_cast<std::uint16_t>(std::lround((g.data[i] - *lo) / span * 65535.0)) : 0;
  return img;
}

//---------------------------------------------------------------------------//
// XAEM: "XAEM" | u8 version=1 | u32 patch, kernel, c1, c2, bottleneck |
// u32 tensor count | per tensor: str name, u32 rank, u32 dims... |
// parameters as f64 in declaration order | u32 epochs | f64 loss per epoch.
//---------------------------------------------------------------------------//

inline constexpr std::string_view kModelMagic = "XAEM";

template <typename T>
std::vector<unsigned char> encode_autoencoder(const AEModel<T>& m) {
  io::ByteWriter w;
  w.magic(kModelMagic);
  w.u8(1);
  for (int v : {m.arch.patch, m.arch.kernel, m.arch.c1, m.arch.c2, m.arch.bottleneck})
    w.u32(static_cast<std::uint32_t>(v));
  const auto L = ae_layout(m.arch);
  w.u32(static_cast<std::uint32_t>(L.size()));
  for (const auto& t : L) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(d);
  }
  for (T p : m.params) w.f64(static_cast<double>(p));
  w.u32(static_cast<std::uint32_t>(m.loss_log.size()));
  for (double l : m.loss_log) w.f64(l);
  return w.bytes();
}

template <typename T>
AEModel<T> decode_autoencoder(std::vector<unsigned char> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic(kModelMagic);
  r.expect_version(1);
  AEModel<T> m;
  m.arch.patch = static_cast<int>(r.u32());
  m.arch.kernel = static_cast<int>(r.u32());
  m.arch.c1 = static_cast<int>(r.u32());
  m.arch.c2 = static_cast<int>(r.u32());
  m.arch.bottleneck = static_cast<int>(r.u32());
  try {
    m.arch.validate();
  } catch (const Error& e) {
    throw format_error(std::string("bad architecture header at offset 5: ") + e.what());
  }
  const auto L = ae_layout(m.arch);
  const std::size_t at = r.offset();
  if (r.u32() != L.size()) throw format_error("tensor count mismatch at offset " + std::to_string(at));
  for (const auto& t : L) {
    const std::size_t pos = r.offset();
    if (r.str() != t.name) throw format_error("unexpected tensor name at offset " + std::to_string(pos));
    if (r.u32() != t.shape.size()) throw format_error("tensor rank mismatch at offset " + std::to_string(pos));
    for (auto d : t.shape)
      if (r.u32() != d) throw format_error("tensor shape mismatch at offset " + std::to_string(pos));
  }
  const std::size_t count = ae_param_count(m.arch);
  r.expect_at_least(count * 8 + 4);
  m.params.resize(count);
  for (auto& p : m.params) p = static_cast<T>(r.f64());
  const std::uint32_t epochs = r.u32();
  r.expect_remaining(std::size_t{epochs} * 8);
  m.loss_log.resize(epochs);
  for (auto& l : m.loss_log) l = r.f64();
  for (T p : m.params)
    if (!std::isfinite(static_cast<double>(p))) throw format_error("non-finite parameter");
  return m;
}

template <typename T>
void write_autoencoder(const std::filesystem::path& p, const AEModel<T>& m) {
  io::write_file(p, encode_autoencoder(m));
}

template <typename T>
AEModel<T> read_autoencoder(const std::filesystem::path& p) {
  return decode_autoencoder<T>(io::read_file(p));
}

}  // namespace xsim
