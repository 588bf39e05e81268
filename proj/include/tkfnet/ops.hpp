#pragma once

// Differentiable operators over NHWC tensors. Every op takes the tape it
// records onto as its first argument; outputs require grad iff the tape is
// recording and some input requires grad. Backward closures accumulate into
// input gradients and never overwrite them.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

#include "tkfnet/errors.hpp"
#include "tkfnet/parallel.hpp"
#include "tkfnet/tensor.hpp"

namespace tkfnet {

namespace testing {
// Negative-control hook: when set, conv2d reports a deliberately wrong weight
// gradient so verification harnesses can prove they detect broken backward code.
inline std::atomic<bool> corrupt_conv_backward{false};
}  // namespace testing

namespace ops {

enum class Padding { same, valid };
enum class Activation { gelu, relu, sigmoid };
enum class PoolKind { avg, max };

struct ConvGeometry {
    std::size_t out_h = 0;
    std::size_t out_w = 0;
    std::size_t pad_top = 0;
    std::size_t pad_left = 0;
};

/// Output extent and leading padding of a convolution. "same" yields
/// ceil(in/stride) with the total padding split floor-first (extra row/column
/// at the bottom/right); "valid" yields floor((in - k)/stride) + 1.
inline ConvGeometry conv_geometry(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                                  std::size_t stride, Padding padding) {
    if (kh == 0 || kw == 0) throw std::invalid_argument("conv2d: kernel extent must be >= 1");
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
    ConvGeometry g;
    if (padding == Padding::same) {
        g.out_h = (h + stride - 1) / stride;
        g.out_w = (w + stride - 1) / stride;
        const std::size_t need_h = (g.out_h - 1) * stride + kh;
        const std::size_t need_w = (g.out_w - 1) * stride + kw;
        g.pad_top = need_h > h ? (need_h - h) / 2 : 0;
        g.pad_left = need_w > w ? (need_w - w) / 2 : 0;
    } else {
        if (h < kh || w < kw) {
            throw ShapeError("conv2d: valid padding needs input extent >= kernel, got input " +
                             std::to_string(h) + "x" + std::to_string(w) + " kernel " +
                             std::to_string(kh) + "x" + std::to_string(kw));
        }
        g.out_h = (h - kh) / stride + 1;
        g.out_w = (w - kw) / stride + 1;
    }
    return g;
}

namespace detail {

// Sample groups used for weight-gradient partial sums; fixed so the reduction
// order does not depend on the worker count.
inline constexpr std::size_t kConvGradGroup = 8;

template <typename T>
void accumulate(std::span<T> dst, std::span<const std::type_identity_t<T>> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Maps output coordinates plus kernel offsets back to input coordinates.
struct ConvWindow {
    ConvGeometry geom;
    std::size_t stride;
    std::size_t in_h;
    std::size_t in_w;

    bool row(std::size_t oy, std::size_t ky, std::size_t& iy) const noexcept {
        return map(oy, ky, geom.pad_top, in_h, iy);
    }
    bool col(std::size_t ox, std::size_t kx, std::size_t& ix) const noexcept {
        return map(ox, kx, geom.pad_left, in_w, ix);
    }

private:
    bool map(std::size_t o, std::size_t k, std::size_t pad, std::size_t extent, std::size_t& i) const noexcept {
        const std::size_t v = o * stride + k;
        if (v < pad || v - pad >= extent) return false;
        i = v - pad;
        return true;
    }
};

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
    if (!(a == b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
    }
}

}  // namespace detail

/// 2-D convolution. weight is (kh, kw, cin, cout), bias is (1, 1, 1, cout).
template <typename T>
BasicTensor<T> conv2d(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t stride, Padding padding) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    const std::size_t kh = ws.n, kw = ws.h, cin = ws.w, cout = ws.c;
    if (xs.c != cin) {
        throw ShapeError("conv2d: input " + xs.str() + " has " + std::to_string(xs.c) +
                         " channels but weight " + ws.str() + " expects " + std::to_string(cin));
    }
    if (bias.shape() != Shape{1, 1, 1, cout}) {
        throw ShapeError("conv2d: bias " + bias.shape().str() + " does not match weight " + ws.str());
    }
    const ConvGeometry g = conv_geometry(xs.h, xs.w, kh, kw, stride, padding);
    BasicTensor<T> y(Shape{xs.n, g.out_h, g.out_w, cout});

    const T* xp = x.data().data();
    const T* wp = weight.data().data();
    const T* bp = bias.data().data();
    T* yp = y.data().data();
    const detail::ConvWindow win{g, stride, xs.h, xs.w};

    parallel_for(xs.n * g.out_h, [&](std::size_t row) {
        const std::size_t n = row / g.out_h, oy = row % g.out_h;
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            T* out = yp + ((n * g.out_h + oy) * g.out_w + ox) * cout;
            std::copy(bp, bp + cout, out);
            for (std::size_t ky = 0; ky < kh; ++ky) {
                std::size_t iy;
                if (!win.row(oy, ky, iy)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    std::size_t ix;
                    if (!win.col(ox, kx, ix)) continue;
                    const T* xin = xp + ((n * xs.h + iy) * xs.w + ix) * cin;
                    const T* wk = wp + (ky * kw + kx) * cin * cout;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const T xv = xin[ci];
                        if (xv == T(0)) continue;
                        const T* wrow = wk + ci * cout;
                        for (std::size_t co = 0; co < cout; ++co) out[co] += xv * wrow[co];
                    }
                }
            }
        }
    }, 4);

    if (tape.should_record(x, weight, bias)) {
        y.set_requires_grad(true);
        tape.record([x, weight, bias, y, win]() mutable {
            const ConvGeometry& g = win.geom;
            if (!y.has_grad()) return;
            const Shape xs = x.shape();
            const Shape ws = weight.shape();
            const std::size_t kh = ws.n, kw = ws.h, cin = ws.w, cout = ws.c;
            const T* gy = y.grad().data();
            const T* xp = x.data().data();
            const T* wp = weight.data().data();

            if (x.requires_grad()) {
                T* gx = x.ensure_grad().data();
                parallel_for(xs.n, [&](std::size_t n) {
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const T* dout = gy + ((n * g.out_h + oy) * g.out_w + ox) * cout;
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                std::size_t iy;
                                if (!win.row(oy, ky, iy)) continue;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    std::size_t ix;
                                    if (!win.col(ox, kx, ix)) continue;
                                    T* din = gx + ((n * xs.h + iy) * xs.w + ix) * cin;
                                    const T* wk = wp + (ky * kw + kx) * cin * cout;
                                    for (std::size_t ci = 0; ci < cin; ++ci) {
                                        const T* wrow = wk + ci * cout;
                                        T acc = T(0);
                                        for (std::size_t co = 0; co < cout; ++co) acc += dout[co] * wrow[co];
                                        din[ci] += acc;
                                    }
                                }
                            }
                        }
                    }
                });
            }

            if (weight.requires_grad() || bias.requires_grad()) {
                const std::size_t groups = (xs.n + detail::kConvGradGroup - 1) / detail::kConvGradGroup;
                const std::size_t wsize = weight.size();
                std::vector<T> partial(groups * (wsize + cout), T(0));
                parallel_for(groups, [&](std::size_t grp) {
                    T* dw = partial.data() + grp * (wsize + cout);
                    T* db = dw + wsize;
                    const std::size_t n_end = std::min(xs.n, (grp + 1) * detail::kConvGradGroup);
                    for (std::size_t n = grp * detail::kConvGradGroup; n < n_end; ++n) {
                        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                                const T* dout = gy + ((n * g.out_h + oy) * g.out_w + ox) * cout;
                                for (std::size_t co = 0; co < cout; ++co) db[co] += dout[co];
                                for (std::size_t ky = 0; ky < kh; ++ky) {
                                    std::size_t iy;
                                    if (!win.row(oy, ky, iy)) continue;
                                    for (std::size_t kx = 0; kx < kw; ++kx) {
                                        std::size_t ix;
                                        if (!win.col(ox, kx, ix)) continue;
                                        const T* xin = xp + ((n * xs.h + iy) * xs.w + ix) * cin;
                                        T* dwk = dw + (ky * kw + kx) * cin * cout;
                                        for (std::size_t ci = 0; ci < cin; ++ci) {
                                            const T xv = xin[ci];
                                            if (xv == T(0)) continue;
                                            T* drow = dwk + ci * cout;
                                            for (std::size_t co = 0; co < cout; ++co) drow[co] += xv * dout[co];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                const T corrupt = testing::corrupt_conv_backward.load() ? T(1.5) : T(1);
                for (std::size_t grp = 0; grp < groups; ++grp) {
                    const T* dw = partial.data() + grp * (wsize + cout);
                    if (weight.requires_grad()) {
                        auto gw = weight.ensure_grad();
                        for (std::size_t i = 0; i < wsize; ++i) gw[i] += corrupt * dw[i];
                    }
                    if (bias.requires_grad()) {
                        detail::accumulate(bias.ensure_grad(), std::span<const T>(dw + wsize, cout));
                    }
                }
            }
        });
    }
    return y;
}

/// Fully connected layer on vector-shaped samples. weight is (1, 1, cin, cout)
/// (row per input dimension), bias is (1, 1, 1, cout).
template <typename T>
BasicTensor<T> linear(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (!xs.is_vector()) throw ShapeError("linear: input must be vector-shaped, got " + xs.str());
    if (ws.n != 1 || ws.h != 1) throw ShapeError("linear: weight must be (1,1,cin,cout), got " + ws.str());
    const std::size_t cin = ws.w, cout = ws.c;
    if (xs.c != cin) {
        throw ShapeError("linear: input " + xs.str() + " does not match weight " + ws.str());
    }
    if (bias.shape() != Shape{1, 1, 1, cout}) {
        throw ShapeError("linear: bias " + bias.shape().str() + " does not match weight " + ws.str());
    }
    BasicTensor<T> y(Shape{xs.n, 1, 1, cout});
    for (std::size_t n = 0; n < xs.n; ++n) {
        T* out = &y[n * cout];
        for (std::size_t co = 0; co < cout; ++co) out[co] = bias[co];
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const T xv = x[n * cin + ci];
            for (std::size_t co = 0; co < cout; ++co) out[co] += xv * weight[ci * cout + co];
        }
    }
    if (tape.should_record(x, weight, bias)) {
        y.set_requires_grad(true);
        tape.record([x, weight, bias, y, cin, cout]() mutable {
            if (!y.has_grad()) return;
            const auto gy = y.grad();
            const std::size_t batch = x.shape().n;
            if (x.requires_grad()) {
                auto gx = x.ensure_grad();
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        T acc = T(0);
                        for (std::size_t co = 0; co < cout; ++co) acc += gy[n * cout + co] * weight[ci * cout + co];
                        gx[n * cin + ci] += acc;
                    }
            }
            if (weight.requires_grad()) {
                auto gw = weight.ensure_grad();
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t co = 0; co < cout; ++co)
                            gw[ci * cout + co] += x[n * cin + ci] * gy[n * cout + co];
            }
            if (bias.requires_grad()) {
                auto gb = bias.ensure_grad();
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t co = 0; co < cout; ++co) gb[co] += gy[n * cout + co];
            }
        });
    }
    return y;
}

namespace detail {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
    return cdf + x * pdf;
}

// Kept strictly inside (0, 1) at the storage precision.
template <typename T>
T sigmoid(double x) {
    const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    const T lo = std::numeric_limits<T>::min();
    const T hi = std::nextafter(T(1), T(0));
    return std::clamp(static_cast<T>(s), lo, hi);
}

}  // namespace detail

/// Elementwise activation. GeLU is the exact x * Phi(x) form.
template <typename T>
BasicTensor<T> activation(BasicTape<T>& tape, Activation kind, const BasicTensor<T>& x) {
    BasicTensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        switch (kind) {
            case Activation::gelu: y[i] = static_cast<T>(detail::gelu(v)); break;
            case Activation::relu: y[i] = v > T(0) ? v : T(0); break;
            case Activation::sigmoid: y[i] = detail::sigmoid<T>(v); break;
        }
    }
    if (tape.should_record(x)) {
        y.set_requires_grad(true);
        tape.record([x, y, kind]() mutable {
            if (!y.has_grad()) return;
            const auto gy = y.grad();
            auto gx = x.ensure_grad();
            for (std::size_t i = 0; i < x.size(); ++i) {
                T d = T(0);
                switch (kind) {
                    case Activation::gelu: d = static_cast<T>(detail::gelu_derivative(x[i])); break;
                    case Activation::relu: d = x[i] > T(0) ? T(1) : T(0); break;
                    case Activation::sigmoid: d = y[i] * (T(1) - y[i]); break;
                }
                gx[i] += gy[i] * d;
            }
        });
    }
    return y;
}

template <typename T>
BasicTensor<T> gelu(BasicTape<T>& tape, const BasicTensor<T>& x) {
    return activation(tape, Activation::gelu, x);
}
template <typename T>
BasicTensor<T> relu(BasicTape<T>& tape, const BasicTensor<T>& x) {
    return activation(tape, Activation::relu, x);
}
template <typename T>
BasicTensor<T> sigmoid(BasicTape<T>& tape, const BasicTensor<T>& x) {
    return activation(tape, Activation::sigmoid, x);
}

template <typename T>
struct Moments {
    BasicTensor<T> mean;
    BasicTensor<T> var;
};

/// Per-channel spatial mean and population variance (divisor h*w).
template <typename T>
Moments<T> spatial_moments(BasicTape<T>& tape, const BasicTensor<T>& x) {
    const Shape s = x.shape();
    if (s.spatial() == 0) throw ShapeError("spatial_moments: empty spatial extent " + s.str());
    const std::size_t hw = s.spatial();
    Moments<T> m{BasicTensor<T>(Shape{s.n, 1, 1, s.c}), BasicTensor<T>(Shape{s.n, 1, 1, s.c})};
    std::vector<double> mean_d(s.n * s.c);
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            double sum = 0.0;
            for (std::size_t p = 0; p < hw; ++p) sum += x[(n * hw + p) * s.c + c];
            const double mean = sum / static_cast<double>(hw);
            double sq = 0.0;
            for (std::size_t p = 0; p < hw; ++p) {
                const double d = static_cast<double>(x[(n * hw + p) * s.c + c]) - mean;
                sq += d * d;
            }
            mean_d[n * s.c + c] = mean;
            m.mean[n * s.c + c] = static_cast<T>(mean);
            m.var[n * s.c + c] = static_cast<T>(sq / static_cast<double>(hw));
        }
    }
    if (tape.should_record(x)) {
        m.mean.set_requires_grad(true);
        m.var.set_requires_grad(true);
        tape.record([x, mean = m.mean, var = m.var, mean_d, hw]() mutable {
            if (!mean.has_grad() && !var.has_grad()) return;
            const Shape s = x.shape();
            auto gx = x.ensure_grad();
            const double inv = 1.0 / static_cast<double>(hw);
            for (std::size_t n = 0; n < s.n; ++n) {
                for (std::size_t c = 0; c < s.c; ++c) {
                    const std::size_t k = n * s.c + c;
                    const double gm = mean.has_grad() ? static_cast<double>(mean.grad()[k]) : 0.0;
                    const double gv = var.has_grad() ? static_cast<double>(var.grad()[k]) : 0.0;
                    for (std::size_t p = 0; p < hw; ++p) {
                        const std::size_t i = (n * hw + p) * s.c + c;
                        const double d = static_cast<double>(x[i]) - mean_d[k];
                        gx[i] += static_cast<T>(gm * inv + gv * 2.0 * d * inv);
                    }
                }
            }
        });
    }
    return m;
}

/// Half-open input range [floor(i*in/out), ceil((i+1)*in/out)) covered by output cell i.
inline std::pair<std::size_t, std::size_t> adaptive_range(std::size_t i, std::size_t in, std::size_t out) {
    const std::size_t begin = (i * in) / out;
    const std::size_t end = ((i + 1) * in + out - 1) / out;
    return {begin, end};
}

/// Adaptive average or max pooling to an (out_h, out_w) grid. Max routes its
/// gradient to the first maximum in row-major scan order.
template <typename T>
BasicTensor<T> adaptive_pool(BasicTape<T>& tape, PoolKind kind, const BasicTensor<T>& x,
                             std::size_t out_h, std::size_t out_w) {
    const Shape s = x.shape();
    if (out_h < 1 || out_w < 1 || out_h > s.h || out_w > s.w) {
        throw ShapeError("adaptive_pool: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " not within input " + s.str());
    }
    BasicTensor<T> y(Shape{s.n, out_h, out_w, s.c});
    std::vector<std::size_t> argmax;
    if (kind == PoolKind::max) argmax.resize(y.size());
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const auto [y0, y1] = adaptive_range(oy, s.h, out_h);
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const auto [x0, x1] = adaptive_range(ox, s.w, out_w);
                for (std::size_t c = 0; c < s.c; ++c) {
                    const std::size_t o = y.offset(n, oy, ox, c);
                    if (kind == PoolKind::avg) {
                        double sum = 0.0;
                        for (std::size_t iy = y0; iy < y1; ++iy)
                            for (std::size_t ix = x0; ix < x1; ++ix) sum += x.at(n, iy, ix, c);
                        y[o] = static_cast<T>(sum / static_cast<double>((y1 - y0) * (x1 - x0)));
                    } else {
                        std::size_t best = x.offset(n, y0, x0, c);
                        for (std::size_t iy = y0; iy < y1; ++iy)
                            for (std::size_t ix = x0; ix < x1; ++ix) {
                                const std::size_t i = x.offset(n, iy, ix, c);
                                if (x[i] > x[best]) best = i;
                            }
                        argmax[o] = best;
                        y[o] = x[best];
                    }
                }
            }
        }
    }
    if (tape.should_record(x)) {
        y.set_requires_grad(true);
        tape.record([x, y, kind, argmax = std::move(argmax), out_h, out_w]() mutable {
            if (!y.has_grad()) return;
            const Shape s = x.shape();
            const auto gy = y.grad();
            auto gx = x.ensure_grad();
            if (kind == PoolKind::max) {
                for (std::size_t o = 0; o < y.size(); ++o) gx[argmax[o]] += gy[o];
                return;
            }
            for (std::size_t n = 0; n < s.n; ++n)
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const auto [y0, y1] = adaptive_range(oy, s.h, out_h);
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const auto [x0, x1] = adaptive_range(ox, s.w, out_w);
                        const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
                        for (std::size_t c = 0; c < s.c; ++c) {
                            const T g = static_cast<T>(gy[y.offset(n, oy, ox, c)] * inv);
                            for (std::size_t iy = y0; iy < y1; ++iy)
                                for (std::size_t ix = x0; ix < x1; ++ix) gx[x.offset(n, iy, ix, c)] += g;
                        }
                    }
                }
        });
    }
    return y;
}

/// Elementwise product; y is either the same shape as x or a per-sample
/// channel vector (n, 1, 1, c) broadcast over height and width.
template <typename T>
BasicTensor<T> hadamard(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& y) {
    const Shape xs = x.shape();
    const Shape ys = y.shape();
    const bool broadcast = !(xs == ys);
    if (broadcast && !(ys == Shape{xs.n, 1, 1, xs.c})) {
        throw ShapeError("hadamard: cannot broadcast " + ys.str() + " onto " + xs.str());
    }
    const std::size_t hw = xs.spatial();
    const auto y_index = [&](std::size_t i) {
        return broadcast ? (i / (hw * xs.c)) * xs.c + i % xs.c : i;
    };
    BasicTensor<T> out(xs);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[y_index(i)];
    if (tape.should_record(x, y)) {
        out.set_requires_grad(true);
        tape.record([x, y, out, broadcast, hw]() mutable {
            if (!out.has_grad()) return;
            const Shape xs = x.shape();
            const auto g = out.grad();
            const auto yi = [&](std::size_t i) {
                return broadcast ? (i / (hw * xs.c)) * xs.c + i % xs.c : i;
            };
            if (x.requires_grad()) {
                auto gx = x.ensure_grad();
                for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * y[yi(i)];
            }
            if (y.requires_grad()) {
                auto gyv = y.ensure_grad();
                if (!broadcast) {
                    for (std::size_t i = 0; i < x.size(); ++i) gyv[i] += g[i] * x[i];
                } else {
                    std::vector<double> acc(y.size(), 0.0);
                    for (std::size_t i = 0; i < x.size(); ++i)
                        acc[yi(i)] += static_cast<double>(g[i]) * static_cast<double>(x[i]);
                    for (std::size_t k = 0; k < acc.size(); ++k) gyv[k] += static_cast<T>(acc[k]);
                }
            }
        });
    }
    return out;
}

/// Channel concatenation: a occupies [0, ca), b occupies [ca, ca + cb).
template <typename T>
BasicTensor<T> concat_channels(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const Shape as = a.shape();
    const Shape bs = b.shape();
    if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
        throw ShapeError("concat_channels: spatial mismatch " + as.str() + " vs " + bs.str());
    }
    const std::size_t positions = as.n * as.h * as.w;
    const std::size_t c = as.c + bs.c;
    BasicTensor<T> y(Shape{as.n, as.h, as.w, c});
    for (std::size_t p = 0; p < positions; ++p) {
        std::copy_n(a.data().begin() + p * as.c, as.c, y.data().begin() + p * c);
        std::copy_n(b.data().begin() + p * bs.c, bs.c, y.data().begin() + p * c + as.c);
    }
    if (tape.should_record(a, b)) {
        y.set_requires_grad(true);
        tape.record([a, b, y, positions]() mutable {
            if (!y.has_grad()) return;
            const std::size_t ca = a.shape().c, cb = b.shape().c, c = ca + cb;
            const auto g = y.grad();
            if (a.requires_grad()) {
                auto ga = a.ensure_grad();
                for (std::size_t p = 0; p < positions; ++p)
                    for (std::size_t k = 0; k < ca; ++k) ga[p * ca + k] += g[p * c + k];
            }
            if (b.requires_grad()) {
                auto gb = b.ensure_grad();
                for (std::size_t p = 0; p < positions; ++p)
                    for (std::size_t k = 0; k < cb; ++k) gb[p * cb + k] += g[p * c + ca + k];
            }
        });
    }
    return y;
}

/// Channels [begin, end) of x.
template <typename T>
BasicTensor<T> slice_channels(BasicTape<T>& tape, const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
    const Shape s = x.shape();
    if (begin > end || end > s.c) {
        throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + s.str());
    }
    const std::size_t positions = s.n * s.h * s.w;
    const std::size_t width = end - begin;
    BasicTensor<T> y(Shape{s.n, s.h, s.w, width});
    for (std::size_t p = 0; p < positions; ++p)
        std::copy_n(x.data().begin() + p * s.c + begin, width, y.data().begin() + p * width);
    if (tape.should_record(x)) {
        y.set_requires_grad(true);
        tape.record([x, y, begin, width, positions]() mutable {
            if (!y.has_grad()) return;
            const std::size_t c = x.shape().c;
            const auto g = y.grad();
            auto gx = x.ensure_grad();
            for (std::size_t p = 0; p < positions; ++p)
                for (std::size_t k = 0; k < width; ++k) gx[p * c + begin + k] += g[p * width + k];
        });
    }
    return y;
}

template <typename T>
BasicTensor<T> add(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_same_shape("add", a.shape(), b.shape());
    BasicTensor<T> y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
    if (tape.should_record(a, b)) {
        y.set_requires_grad(true);
        tape.record([a, b, y]() mutable {
            if (!y.has_grad()) return;
            const auto g = y.grad();
            if (a.requires_grad()) detail::accumulate(a.ensure_grad(), g);
            if (b.requires_grad()) detail::accumulate(b.ensure_grad(), g);
        });
    }
    return y;
}

/// x multiplied by a learnable scalar s of shape (1, 1, 1, 1).
template <typename T>
BasicTensor<T> scale(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& s) {
    if (!s.shape().is_scalar()) throw ShapeError("scale: factor must be a scalar, got " + s.shape().str());
    const T k = s[0];
    BasicTensor<T> y(x.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * k;
    if (tape.should_record(x, s)) {
        y.set_requires_grad(true);
        tape.record([x, s, y]() mutable {
            if (!y.has_grad()) return;
            const auto g = y.grad();
            if (x.requires_grad()) {
                auto gx = x.ensure_grad();
                for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * s[0];
            }
            if (s.requires_grad()) {
                double acc = 0.0;
                for (std::size_t i = 0; i < x.size(); ++i)
                    acc += static_cast<double>(g[i]) * static_cast<double>(x[i]);
                s.ensure_grad()[0] += static_cast<T>(acc);
            }
        });
    }
    return y;
}

/// Sum of all elements as a scalar.
template <typename T>
BasicTensor<T> sum(BasicTape<T>& tape, const BasicTensor<T>& x) {
    double acc = 0.0;
    for (const T v : x.data()) acc += v;
    BasicTensor<T> y = BasicTensor<T>::scalar(static_cast<T>(acc));
    if (tape.should_record(x)) {
        y.set_requires_grad(true);
        tape.record([x, y]() mutable {
            if (!y.has_grad()) return;
            const T g = y.grad()[0];
            for (T& v : x.ensure_grad()) v += g;
        });
    }
    return y;
}

/// Per-sample softmax of (n, 1, 1, q) logits; not differentiable.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
    const Shape s = logits.shape();
    if (!s.is_vector()) throw ShapeError("softmax: logits must be vector-shaped, got " + s.str());
    BasicTensor<T> p(s);
    for (std::size_t n = 0; n < s.n; ++n) {
        const T* row = &logits[n * s.c];
        const double mx = *std::max_element(row, row + s.c);
        double z = 0.0;
        for (std::size_t k = 0; k < s.c; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
        for (std::size_t k = 0; k < s.c; ++k)
            p[n * s.c + k] = static_cast<T>(std::exp(static_cast<double>(row[k]) - mx) / z);
    }
    return p;
}

/// Mean negative log-likelihood of the labelled class under softmax(logits),
/// evaluated max-shifted. Gradient w.r.t. logits is (softmax - onehot) / n.
template <typename T>
BasicTensor<T> softmax_cross_entropy(BasicTape<T>& tape, const BasicTensor<T>& logits,
                                     std::span<const std::size_t> labels) {
    const Shape s = logits.shape();
    if (!s.is_vector()) throw ShapeError("softmax_cross_entropy: logits must be vector-shaped, got " + s.str());
    if (labels.size() != s.n) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(s.n) + " samples");
    }
    if (s.n == 0) throw ShapeError("softmax_cross_entropy: empty batch");
    const std::size_t q = s.c;
    std::vector<double> probs(s.n * q);
    double total = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
        if (labels[n] >= q) {
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[n]) +
                                    " outside [0," + std::to_string(q) + ")");
        }
        const T* row = &logits[n * q];
        const double mx = *std::max_element(row, row + q);
        double z = 0.0;
        for (std::size_t k = 0; k < q; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
        for (std::size_t k = 0; k < q; ++k) probs[n * q + k] = std::exp(static_cast<double>(row[k]) - mx) / z;
        total += std::log(z) - (static_cast<double>(row[labels[n]]) - mx);
    }
    BasicTensor<T> loss = BasicTensor<T>::scalar(static_cast<T>(total / static_cast<double>(s.n)));
    if (tape.should_record(logits)) {
        loss.set_requires_grad(true);
        std::vector<std::size_t> owned(labels.begin(), labels.end());
        tape.record([logits, loss, probs = std::move(probs), owned = std::move(owned), q]() mutable {
            if (!loss.has_grad()) return;
            const double g = loss.grad()[0];
            const double inv = 1.0 / static_cast<double>(owned.size());
            auto gl = logits.ensure_grad();
            for (std::size_t n = 0; n < owned.size(); ++n)
                for (std::size_t k = 0; k < q; ++k) {
                    const double onehot = k == owned[n] ? 1.0 : 0.0;
                    gl[n * q + k] += static_cast<T>(g * (probs[n * q + k] - onehot) * inv);
                }
        });
    }
    return loss;
}

}  // namespace ops
}  // namespace tkfnet
