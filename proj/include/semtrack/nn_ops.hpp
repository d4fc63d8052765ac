#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "semtrack/geometry.hpp"
#include "semtrack/parallel.hpp"
#include "semtrack/tensor.hpp"

// Dense NN kernels for the segmentation network, templated on the scalar
// type (float for training/inference, double for gradient checks).
//
// Layouts: activations are HWC (channel fastest), convolution kernels are
// (ky, kx, cin, cout) with cout fastest, so the inner loops accumulate
// along contiguous cout runs. All convolutions are cross-correlations.
namespace semtrack::nn {

// ---------------------------------------------------------------------------
// conv 3x3, stride 1, zero pad 1 (same-size output)

namespace detail {

// Kernel-gradient inner loop: accumulates the rank-1 updates
// d_kernel[ci0..+CIB][co0..+COB] += in_pixel[ci] * d_out_pixel[co] over a
// run of n pixel pairs, with both blocks held in registers.
template <typename T, int CIB, int COB>
inline void dk_rank_block(const T* ip, int istep, const T* dp, int dstep, int n,
                          T* acc) {
  for (int i = 0; i < n; ++i, ip += istep, dp += dstep)
    for (int a = 0; a < CIB; ++a) {
      const T v = ip[a];
      for (int c = 0; c < COB; ++c) acc[a * COB + c] += v * dp[c];
    }
}

template <typename T>
inline void dk_rank_generic(const T* ip, int istep, const T* dp, int dstep, int n,
                            int cib, int cob, int cob_stride, T* acc) {
  for (int i = 0; i < n; ++i, ip += istep, dp += dstep)
    for (int a = 0; a < cib; ++a) {
      const T v = ip[a];
      for (int c = 0; c < cob; ++c) acc[a * cob_stride + c] += v * dp[c];
    }
}

// Shared kernel-gradient tile: for one (row, tap) pair, accumulate the
// cin x cout outer-product sums over the row's valid pixels into d_kernel
// (laid out ci-major, cout contiguous).
template <typename T>
inline void dk_row_tap(const T* in_px0, int istep, const T* d_px0, int dstep, int n,
                       int cin, int cout, T* dk) {
  constexpr int kCib = 4, kCob = 32;
  T acc[kCib * kCob];
  for (int ci0 = 0; ci0 < cin; ci0 += kCib) {
    const int cib = std::min(kCib, cin - ci0);
    for (int co0 = 0; co0 < cout; co0 += kCob) {
      const int cob = std::min(kCob, cout - co0);
      std::fill(acc, acc + kCib * kCob, T(0));
      if (cib == kCib && cob == kCob)
        dk_rank_block<T, kCib, kCob>(in_px0 + ci0, istep, d_px0 + co0, dstep, n, acc);
      else
        dk_rank_generic(in_px0 + ci0, istep, d_px0 + co0, dstep, n, cib, cob, kCob,
                        acc);
      for (int a = 0; a < cib; ++a) {
        T* row = dk + static_cast<size_t>(ci0 + a) * cout + co0;
        for (int c = 0; c < cob; ++c) row[c] += acc[a * kCob + c];
      }
    }
  }
}

// Accumulates one output pixel's cout-block. Bounds-checked; used for
// borders, small images and channel remainders.
template <typename T>
inline void conv_pixel(const TensorT<T>& in, const T* kw, int cout_total, int co0,
                       int cob, int y, int x, T* acc) {
  for (int ky = 0; ky < 3; ++ky) {
    const int iy = y + ky - 1;
    if (iy < 0 || iy >= in.h) continue;
    for (int kx = 0; kx < 3; ++kx) {
      const int ix = x + kx - 1;
      if (ix < 0 || ix >= in.w) continue;
      const T* ip = in.at(iy, ix);
      const T* kp = kw + ((static_cast<size_t>(ky) * 3 + kx) * in.c) * cout_total + co0;
      for (int ci = 0; ci < in.c; ++ci) {
        const T v = ip[ci];
        const T* kk = kp + static_cast<size_t>(ci) * cout_total;
        for (int c = 0; c < cob; ++c) acc[c] += v * kk[c];
      }
    }
  }
}

// Interior fast path: XB consecutive pixels, COB output channels held in
// registers across the whole 3x3 x cin reduction.
template <typename T, int COB, int XB>
inline void conv_block(const TensorT<T>& in, const T* kw, int cout_total, int co0,
                       int y, int x0, T* out_row) {
  T acc[XB][COB];
  for (int b = 0; b < XB; ++b)
    for (int c = 0; c < COB; ++c) acc[b][c] = T(0);
  const int cin = in.c;
  for (int ky = 0; ky < 3; ++ky) {
    const T* irow = in.row(y + ky - 1);
    const T* krow = kw + (static_cast<size_t>(ky) * 3 * cin) * cout_total + co0;
    for (int kx = 0; kx < 3; ++kx) {
      const T* kp = krow + (static_cast<size_t>(kx) * cin) * cout_total;
      for (int ci = 0; ci < cin; ++ci) {
        const T* kk = kp + static_cast<size_t>(ci) * cout_total;
        for (int b = 0; b < XB; ++b) {
          const T v = irow[(static_cast<size_t>(x0 + b + kx - 1)) * cin + ci];
          for (int c = 0; c < COB; ++c) acc[b][c] += v * kk[c];
        }
      }
    }
  }
  for (int b = 0; b < XB; ++b) {
    T* o = out_row + (static_cast<size_t>(x0 + b)) * cout_total + co0;
    for (int c = 0; c < COB; ++c) o[c] += acc[b][c];
  }
}

template <typename T>
inline void conv_rows(const TensorT<T>& in, const T* kw, const T* bias, int cout,
                      TensorT<T>& out, int y0, int y1) {
  const int W = in.w;
  for (int y = y0; y < y1; ++y) {
    T* orow = out.row(y);
    for (int x = 0; x < W; ++x) {
      T* o = orow + static_cast<size_t>(x) * cout;
      if (bias)
        for (int c = 0; c < cout; ++c) o[c] = bias[c];
      else
        for (int c = 0; c < cout; ++c) o[c] = T(0);
    }
    const bool interior_y = (y > 0 && y + 1 < in.h);
    int x = 0;
    if (interior_y && W >= 8) {
      // borders via the checked path
      for (int bx : {0, W - 1})
        conv_pixel(in, kw, cout, 0, cout, y, bx,
                   orow + static_cast<size_t>(bx) * cout);
      int co = 0;
      for (; co + 64 <= cout; co += 64) {
        for (x = 1; x + 4 < W; x += 4) conv_block<T, 64, 4>(in, kw, cout, co, y, x, orow);
        for (; x + 1 < W; ++x) conv_block<T, 64, 1>(in, kw, cout, co, y, x, orow);
      }
      for (; co + 16 <= cout; co += 16) {
        for (x = 1; x + 4 < W; x += 4) conv_block<T, 16, 4>(in, kw, cout, co, y, x, orow);
        for (; x + 1 < W; ++x) conv_block<T, 16, 1>(in, kw, cout, co, y, x, orow);
      }
      if (co < cout)
        for (x = 1; x + 1 < W; ++x) {
          T acc[16];
          const int cob = cout - co;
          for (int c = 0; c < cob; ++c) acc[c] = T(0);
          conv_pixel(in, kw, cout, co, cob, y, x, acc);
          T* o = orow + static_cast<size_t>(x) * cout + co;
          for (int c = 0; c < cob; ++c) o[c] += acc[c];
        }
    } else {
      for (x = 0; x < W; ++x)
        conv_pixel(in, kw, cout, 0, cout, y, x, orow + static_cast<size_t>(x) * cout);
    }
  }
}

}  // namespace detail

template <typename T>
void conv3x3_forward(const TensorT<T>& in, const T* kernel, const T* bias, int cout,
                     TensorT<T>& out) {
  if (in.c <= 0 || cout <= 0) throw std::invalid_argument("conv3x3: bad channel counts");
  if (!out.same_shape(TensorT<T>(in.h, in.w, cout))) out = TensorT<T>(in.h, in.w, cout);
  parallel_for_ranges(in.h, [&](int y0, int y1) {
    detail::conv_rows(in, kernel, bias, cout, out, y0, y1);
  });
}

// d_input = conv of d_out with the flip-transposed kernel, so it reuses
// the forward fast path. d_kernel accumulates row tiles with the cout
// block held in registers.
template <typename T>
void conv3x3_backward(const TensorT<T>& in, const T* kernel, int cout,
                      const TensorT<T>& d_out, TensorT<T>* d_in, T* d_kernel,
                      T* d_bias) {
  const int cin = in.c;
  if (d_out.h != in.h || d_out.w != in.w || d_out.c != cout)
    throw std::invalid_argument("conv3x3_backward: d_out shape mismatch");

  if (d_bias) {
    for (int c = 0; c < cout; ++c) d_bias[c] = T(0);
    for (int y = 0; y < in.h; ++y) {
      const T* drow = d_out.row(y);
      for (int x = 0; x < in.w; ++x) {
        const T* dp = drow + static_cast<size_t>(x) * cout;
        for (int c = 0; c < cout; ++c) d_bias[c] += dp[c];
      }
    }
  }

  if (d_in) {
    std::vector<T> kt(static_cast<size_t>(9) * cout * cin);
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx)
        for (int ci = 0; ci < cin; ++ci) {
          const T* src =
              kernel + ((static_cast<size_t>(ky) * 3 + kx) * cin + ci) * cout;
          for (int co = 0; co < cout; ++co)
            kt[((static_cast<size_t>(2 - ky) * 3 + (2 - kx)) * cout + co) * cin + ci] =
                src[co];
        }
    conv3x3_forward(d_out, kt.data(), static_cast<const T*>(nullptr), cin, *d_in);
  }

  if (d_kernel) {
    std::fill(d_kernel, d_kernel + static_cast<size_t>(9) * cin * cout, T(0));
    for (int y = 0; y < in.h; ++y) {
      const T* drow = d_out.row(y);
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = y + ky - 1;
        if (iy < 0 || iy >= in.h) continue;
        const T* irow = in.row(iy);
        for (int kx = 0; kx < 3; ++kx) {
          const int x0 = std::max(0, 1 - kx);
          const int x1 = std::min(in.w, in.w + 1 - kx);
          if (x0 >= x1) continue;
          T* dk = d_kernel + ((static_cast<size_t>(ky) * 3 + kx) * cin) * cout;
          detail::dk_row_tap(irow + static_cast<size_t>(x0 + kx - 1) * cin, cin,
                             drow + static_cast<size_t>(x0) * cout, cout, x1 - x0,
                             cin, cout, dk);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2, floor semantics (odd trailing row/col dropped)

template <typename T>
void maxpool2x2_forward(const TensorT<T>& in, TensorT<T>& out,
                        std::vector<int32_t>& argmax) {
  if (in.h < 2 || in.w < 2) throw std::invalid_argument("maxpool: input smaller than 2x2");
  const int oh = in.h / 2, ow = in.w / 2, C = in.c;
  if (!out.same_shape(TensorT<T>(oh, ow, C))) out = TensorT<T>(oh, ow, C);
  argmax.resize(out.size());
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const size_t base_out = (static_cast<size_t>(y) * ow + x) * C;
      for (int c = 0; c < C; ++c) {
        T best{};
        int32_t best_idx = -1;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const size_t idx =
                (static_cast<size_t>(2 * y + dy) * in.w + (2 * x + dx)) * C + c;
            const T v = in.data[idx];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = static_cast<int32_t>(idx);
            }
          }
        out.data[base_out + c] = best;
        argmax[base_out + c] = best_idx;
      }
    }
  }
}

template <typename T>
void maxpool2x2_backward(int in_h, int in_w, int in_c, const std::vector<int32_t>& argmax,
                         const TensorT<T>& d_out, TensorT<T>& d_in) {
  if (!d_in.same_shape(TensorT<T>(in_h, in_w, in_c))) d_in = TensorT<T>(in_h, in_w, in_c);
  d_in.fill(T(0));
  if (argmax.size() != d_out.size())
    throw std::invalid_argument("maxpool backward: argmax size mismatch");
  for (size_t i = 0; i < argmax.size(); ++i) {
    const int32_t idx = argmax[i];
    if (idx < 0 || static_cast<size_t>(idx) >= d_in.size())
      throw std::invalid_argument("maxpool backward: argmax index out of range");
    d_in.data[idx] += d_out.data[i];
  }
}

// ---------------------------------------------------------------------------
// 4x4 transposed convolution, stride 2, pad 1. Nominal output is 2h x 2w;
// a target of 2h+1 or 2w+1 is reached by zero-padding the bottom/right
// edge. Exact adjoint of the stride-2 pad-1 4x4 convolution applied to
// the even-cropped counterpart.

template <typename T>
void deconv4x4s2_forward(const TensorT<T>& in, const T* kernel, int cout,
                         int target_h, int target_w, TensorT<T>& out) {
  const int h = in.h, w = in.w, cin = in.c;
  if ((target_h != 2 * h && target_h != 2 * h + 1) ||
      (target_w != 2 * w && target_w != 2 * w + 1))
    throw std::invalid_argument("deconv: target shape must be 2n or 2n+1 per axis");
  if (!out.same_shape(TensorT<T>(target_h, target_w, cout)))
    out = TensorT<T>(target_h, target_w, cout);
  out.fill(T(0));
  const int nh = 2 * h, nw = 2 * w;  // nominal region
  parallel_for_ranges(nh, [&](int oy0, int oy1) {
    for (int oy = oy0; oy < oy1; ++oy) {
      T* orow = out.row(oy);
      for (int ox = 0; ox < nw; ++ox) {
        T* o = orow + static_cast<size_t>(ox) * cout;
        // ky with matching parity: oy = 2y - 1 + ky
        for (int ky = (oy + 1) % 2; ky < 4; ky += 2) {
          const int y = (oy + 1 - ky) / 2;
          if (y < 0 || y >= h) continue;
          for (int kx = (ox + 1) % 2; kx < 4; kx += 2) {
            const int x = (ox + 1 - kx) / 2;
            if (x < 0 || x >= w) continue;
            const T* ip = in.at(y, x);
            const T* kp =
                kernel + ((static_cast<size_t>(ky) * 4 + kx) * cin) * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const T v = ip[ci];
              const T* kk = kp + static_cast<size_t>(ci) * cout;
              for (int c = 0; c < cout; ++c) o[c] += v * kk[c];
            }
          }
        }
      }
    }
  });
}

template <typename T>
void deconv4x4s2_backward(const TensorT<T>& in, const T* kernel, int cout,
                          const TensorT<T>& d_out, TensorT<T>* d_in, T* d_kernel) {
  const int h = in.h, w = in.w, cin = in.c;
  if ((d_out.h != 2 * h && d_out.h != 2 * h + 1) ||
      (d_out.w != 2 * w && d_out.w != 2 * w + 1) || d_out.c != cout)
    throw std::invalid_argument("deconv backward: d_out shape mismatch");

  if (d_in) {
    if (!d_in->same_shape(in)) *d_in = TensorT<T>(h, w, cin);
    // channel-transposed kernel (ci contiguous) so the inner loop is a
    // broadcast-FMA over a register block of input channels
    std::vector<T> kt(static_cast<size_t>(16) * cout * cin);
    for (int tap = 0; tap < 16; ++tap)
      for (int ci = 0; ci < cin; ++ci) {
        const T* src = kernel + (static_cast<size_t>(tap) * cin + ci) * cout;
        for (int co = 0; co < cout; ++co)
          kt[(static_cast<size_t>(tap) * cout + co) * cin + ci] = src[co];
      }
    parallel_for_ranges(h, [&](int y0, int y1) {
      constexpr int kCib = 64;
      T acc[kCib];
      for (int y = y0; y < y1; ++y) {
        for (int x = 0; x < w; ++x) {
          T* di = d_in->at(y, x);
          for (int ci0 = 0; ci0 < cin; ci0 += kCib) {
            const int cib = std::min(kCib, cin - ci0);
            for (int c = 0; c < cib; ++c) acc[c] = T(0);
            for (int ky = 0; ky < 4; ++ky) {
              const int oy = 2 * y - 1 + ky;
              if (oy < 0 || oy >= 2 * h) continue;
              for (int kx = 0; kx < 4; ++kx) {
                const int ox = 2 * x - 1 + kx;
                if (ox < 0 || ox >= 2 * w) continue;
                const T* dp = d_out.at(oy, ox);
                const T* ktp =
                    kt.data() +
                    (static_cast<size_t>(ky * 4 + kx) * cout) * cin + ci0;
                if (cib == kCib) {
                  for (int co = 0; co < cout; ++co) {
                    const T v = dp[co];
                    const T* kk = ktp + static_cast<size_t>(co) * cin;
                    for (int c = 0; c < kCib; ++c) acc[c] += v * kk[c];
                  }
                } else {
                  for (int co = 0; co < cout; ++co) {
                    const T v = dp[co];
                    const T* kk = ktp + static_cast<size_t>(co) * cin;
                    for (int c = 0; c < cib; ++c) acc[c] += v * kk[c];
                  }
                }
              }
            }
            for (int c = 0; c < cib; ++c) di[ci0 + c] = acc[c];
          }
        }
      }
    });
  }

  if (d_kernel) {
    std::fill(d_kernel, d_kernel + static_cast<size_t>(16) * cin * cout, T(0));
    for (int y = 0; y < h; ++y) {
      const T* irow = in.row(y);
      for (int ky = 0; ky < 4; ++ky) {
        const int oy = 2 * y - 1 + ky;
        if (oy < 0 || oy >= 2 * h) continue;
        const T* drow = d_out.row(oy);
        for (int kx = 0; kx < 4; ++kx) {
          const int x0 = (kx == 0) ? 1 : 0;      // ox = 2x-1+kx >= 0
          const int x1 = (kx == 3) ? w - 1 : w;  // ox = 2x-1+kx < 2w
          if (x0 >= x1) continue;
          T* dk = d_kernel + ((static_cast<size_t>(ky) * 4 + kx) * cin) * cout;
          detail::dk_row_tap(irow + static_cast<size_t>(x0) * cin, cin,
                             drow + static_cast<size_t>(2 * x0 - 1 + kx) * cout,
                             2 * cout, x1 - x0, cin, cout, dk);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
void relu_forward(const TensorT<T>& in, TensorT<T>& out) {
  if (!out.same_shape(in)) out = in;
  for (size_t i = 0; i < in.size(); ++i) out.data[i] = in.data[i] > T(0) ? in.data[i] : T(0);
}

template <typename T>
void relu_backward(const TensorT<T>& in, const TensorT<T>& d_out, TensorT<T>& d_in) {
  if (!in.same_shape(d_out)) throw std::invalid_argument("relu backward: shape mismatch");
  if (!d_in.same_shape(in)) d_in = TensorT<T>(in.h, in.w, in.c);
  for (size_t i = 0; i < in.size(); ++i)
    d_in.data[i] = in.data[i] > T(0) ? d_out.data[i] : T(0);
}

// ---------------------------------------------------------------------------
// Pixelwise softmax over the class channel, max-subtracted.

template <typename T>
TensorT<T> softmax_pixelwise(const TensorT<T>& logits) {
  TensorT<T> probs(logits.h, logits.w, logits.c);
  const int C = logits.c;
  for (int y = 0; y < logits.h; ++y) {
    for (int x = 0; x < logits.w; ++x) {
      const T* l = logits.at(y, x);
      T* p = probs.at(y, x);
      T mx = l[0];
      for (int c = 1; c < C; ++c) mx = std::max(mx, l[c]);
      if (!std::isfinite(static_cast<double>(mx)))
        throw std::invalid_argument("softmax: non-finite logits");
      T sum = T(0);
      for (int c = 0; c < C; ++c) {
        p[c] = std::exp(l[c] - mx);
        sum += p[c];
      }
      const T inv = T(1) / sum;
      for (int c = 0; c < C; ++c) p[c] *= inv;
    }
  }
  return probs;
}

// ---------------------------------------------------------------------------
// Cross-entropy with the class-imbalance modifier:
//   per pixel  H = -log p'_truth
//              M = -log p'_bg        when the pixel's truth is background
//                  -log (1 - p'_bg)  otherwise
//   loss = mean over pixels of (H + lambda * M)
// Probabilities are clamped to [eps, 1-eps] before the logs; the returned
// gradient is the exact gradient of that clamped loss w.r.t. the logits
// (softmax fused).

template <typename T>
struct LossResult {
  T loss;
  TensorT<T> d_logits;
};

template <typename T>
LossResult<T> segmentation_loss(const TensorT<T>& probs, const LabelMap& truth,
                                T lambda) {
  if (probs.h != truth.h || probs.w != truth.w)
    throw std::invalid_argument("segmentation_loss: shape mismatch");
  if (lambda < T(0)) throw std::invalid_argument("segmentation_loss: lambda < 0");
  const int C = probs.c;
  const T eps = T(1e-7);
  const T inv_np = T(1) / static_cast<T>(truth.pixel_count());
  LossResult<T> res;
  res.loss = T(0);
  res.d_logits = TensorT<T>(probs.h, probs.w, C);
  for (int y = 0; y < probs.h; ++y) {
    for (int x = 0; x < probs.w; ++x) {
      const T* p = probs.at(y, x);
      T* d = res.d_logits.at(y, x);
      const int cls = truth.at(y, x);
      if (cls >= C) throw std::invalid_argument("segmentation_loss: label id out of range");

      // gradient of the pixel loss w.r.t. the probability vector; only
      // entries cls and background are nonzero
      const auto clamped = [eps](T v) { return std::clamp(v, eps, T(1) - eps); };
      const auto inside = [eps](T v) { return v > eps && v < T(1) - eps; };

      const T pc = clamped(p[cls]);
      T pixel_loss = -std::log(pc);
      T g_cls = inside(p[cls]) ? -T(1) / pc : T(0);
      T g_bg = T(0);
      const T p0 = p[0];
      if (cls == 0) {
        pixel_loss += lambda * -std::log(clamped(p0));
        g_bg = inside(p0) ? lambda * -T(1) / clamped(p0) : T(0);
      } else {
        pixel_loss += lambda * -std::log(clamped(T(1) - p0));
        g_bg = inside(T(1) - p0) ? lambda / clamped(T(1) - p0) : T(0);
      }
      res.loss += pixel_loss * inv_np;

      // chain through softmax: dL/dx_y = p_y * (g_y - sum_a g_a p_a)
      T dot = g_cls * p[cls] + g_bg * p0;
      if (cls == 0) dot = (g_cls + g_bg) * p0;  // same entry
      for (int c = 0; c < C; ++c) {
        T g = (c == cls ? g_cls : T(0)) + (c == 0 ? g_bg : T(0));
        d[c] = p[c] * (g - dot) * inv_np;
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
struct AdamStateT {
  std::vector<T> m, v;
  int64_t t = 0;
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);

  explicit AdamStateT(size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

template <typename T>
void adam_step(std::vector<T>& params, const std::vector<T>& grads, AdamStateT<T>& s) {
  if (params.size() != grads.size() || params.size() != s.m.size() ||
      params.size() != s.v.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  s.t += 1;
  const T bc1 = T(1) - std::pow(s.beta1, static_cast<T>(s.t));
  const T bc2 = T(1) - std::pow(s.beta2, static_cast<T>(s.t));
  for (size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    s.m[i] = s.beta1 * s.m[i] + (T(1) - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (T(1) - s.beta2) * g * g;
    const T mhat = s.m[i] / bc1;
    const T vhat = s.v[i] / bc2;
    params[i] -= s.lr * mhat / (std::sqrt(vhat) + s.epsilon);
  }
}

}  // namespace semtrack::nn
