#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tgl/errors.hpp"
#include "tgl/tape.hpp"
#include "tgl/tensor.hpp"

namespace tgl {

enum class EwKind { add, sub, mul, sin, relu, square };
enum class Padding { same, valid };

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw numeric_error(std::string(op) + ": non-finite value in result");
}

// Binary elementwise shapes: equal, or b a single-element tensor broadcast to
// all of a. No other broadcasting.
inline bool scalar_broadcast(const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) return false;
    if (b.size() == 1) return true;
    throw shape_error("elementwise: shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()) + " (only scalar broadcast is supported)");
}

inline Tensor sum_to_scalar_like(const Tensor& proto, const Tensor& g) {
    Real acc = 0;
    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i];
    Tensor out(proto.shape());
    out[0] = acc;
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    const bool bs = detail::scalar_broadcast(a, b);
    Tensor out(a.shape());
    const Real* pa = a.data();
    const Real* pb = b.data();
    Real* po = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] + (bs ? pb[0] : pb[i]);
    detail::check_finite(out, "add");
    if (!tape) return out;
    return tape->attach(std::move(out), {&a, &b},
                        [bshape = b.shape(), bs](const Tensor& up, const std::vector<bool>& need) {
                            std::vector<Tensor> g(2);
                            if (need[0]) g[0] = up;
                            if (need[1]) g[1] = bs ? detail::sum_to_scalar_like(Tensor(bshape), up) : up;
                            return g;
                        });
}

inline Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    const bool bs = detail::scalar_broadcast(a, b);
    Tensor out(a.shape());
    const Real* pa = a.data();
    const Real* pb = b.data();
    Real* po = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] - (bs ? pb[0] : pb[i]);
    detail::check_finite(out, "sub");
    if (!tape) return out;
    return tape->attach(std::move(out), {&a, &b},
                        [bshape = b.shape(), bs](const Tensor& up, const std::vector<bool>& need) {
                            std::vector<Tensor> g(2);
                            if (need[0]) g[0] = up;
                            if (need[1]) {
                                Tensor gb(bshape);
                                if (bs) {
                                    Real acc = 0;
                                    for (std::size_t i = 0; i < up.size(); ++i) acc -= up[i];
                                    gb[0] = acc;
                                } else {
                                    for (std::size_t i = 0; i < up.size(); ++i) gb[i] = -up[i];
                                }
                                g[1] = std::move(gb);
                            }
                            return g;
                        });
}

inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    const bool bs = detail::scalar_broadcast(a, b);
    Tensor out(a.shape());
    const Real* pa = a.data();
    const Real* pb = b.data();
    Real* po = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] * (bs ? pb[0] : pb[i]);
    detail::check_finite(out, "mul");
    if (!tape) return out;
    return tape->attach(
        std::move(out), {&a, &b},
        [a, b, bs](const Tensor& up, const std::vector<bool>& need) {
            std::vector<Tensor> g(2);
            if (need[0]) {
                Tensor ga(a.shape());
                for (std::size_t i = 0; i < up.size(); ++i) ga[i] = up[i] * (bs ? b[0] : b[i]);
                g[0] = std::move(ga);
            }
            if (need[1]) {
                Tensor gb(b.shape());
                if (bs) {
                    Real acc = 0;
                    for (std::size_t i = 0; i < up.size(); ++i) acc += up[i] * a[i];
                    gb[0] = acc;
                } else {
                    for (std::size_t i = 0; i < up.size(); ++i) gb[i] = up[i] * a[i];
                }
                g[1] = std::move(gb);
            }
            return g;
        });
}

// Multiply by a plain constant (not a tape value).
inline Tensor scale(const Tensor& a, Real c, Tape* tape = nullptr) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
    detail::check_finite(out, "scale");
    if (!tape) return out;
    return tape->attach(std::move(out), {&a},
                        [c](const Tensor& up, const std::vector<bool>& need) {
                            std::vector<Tensor> g(1);
                            if (need[0]) {
                                Tensor ga(up.shape());
                                for (std::size_t i = 0; i < up.size(); ++i) ga[i] = up[i] * c;
                                g[0] = std::move(ga);
                            }
                            return g;
                        });
}

inline Tensor sin(const Tensor& a, Tape* tape = nullptr) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::sin(a[i]);
    detail::check_finite(out, "sin");
    if (!tape) return out;
    return tape->attach(std::move(out), {&a},
                        [a](const Tensor& up, const std::vector<bool>& need) {
                            std::vector<Tensor> g(1);
                            if (need[0]) {
                                Tensor ga(a.shape());
                                for (std::size_t i = 0; i < a.size(); ++i)
                                    ga[i] = up[i] * std::cos(a[i]);
                                g[0] = std::move(ga);
                            }
                            return g;
                        });
}

// Derivative taken as 0 at the kink (x == 0).
inline Tensor relu(const Tensor& a, Tape* tape = nullptr) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0 ? a[i] : Real(0);
    if (!tape) return out;
    return tape->attach(std::move(out), {&a},
                        [a](const Tensor& up, const std::vector<bool>& need) {
                            std::vector<Tensor> g(1);
                            if (need[0]) {
                                Tensor ga(a.shape());
                                for (std::size_t i = 0; i < a.size(); ++i)
                                    ga[i] = a[i] > 0 ? up[i] : Real(0);
                                g[0] = std::move(ga);
                            }
                            return g;
                        });
}

inline Tensor square(const Tensor& a, Tape* tape = nullptr) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * a[i];
    detail::check_finite(out, "square");
    if (!tape) return out;
    return tape->attach(std::move(out), {&a},
                        [a](const Tensor& up, const std::vector<bool>& need) {
                            std::vector<Tensor> g(1);
                            if (need[0]) {
                                Tensor ga(a.shape());
                                for (std::size_t i = 0; i < a.size(); ++i)
                                    ga[i] = up[i] * 2 * a[i];
                                g[0] = std::move(ga);
                            }
                            return g;
                        });
}

// Dispatcher over the op-kind enum; `b` must be present exactly for the
// binary kinds.
inline Tensor elementwise(EwKind kind, const Tensor& a, const Tensor* b = nullptr,
                          Tape* tape = nullptr) {
    const bool binary = kind == EwKind::add || kind == EwKind::sub || kind == EwKind::mul;
    if (binary && !b) throw value_error("elementwise: binary op requires a second operand");
    if (!binary && b) throw value_error("elementwise: unary op takes a single operand");
    switch (kind) {
        case EwKind::add: return add(a, *b, tape);
        case EwKind::sub: return sub(a, *b, tape);
        case EwKind::mul: return mul(a, *b, tape);
        case EwKind::sin: return sin(a, tape);
        case EwKind::relu: return relu(a, tape);
        case EwKind::square: return square(a, tape);
    }
    throw value_error("elementwise: unknown op kind");
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    if (a.rank() != 2 || b.rank() != 2)
        throw shape_error("matmul: expected rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw shape_error("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    Tensor out(Shape{m, n});
    const Real* pa = a.data();
    const Real* pb = b.data();
    Real* po = out.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const Real av = pa[i * k + l];
            if (av == 0) continue;
            const Real* brow = pb + l * n;
            Real* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    detail::check_finite(out, "matmul");
    if (!tape) return out;
    return tape->attach(
        std::move(out), {&a, &b},
        [a, b, m, k, n](const Tensor& up, const std::vector<bool>& need) {
            std::vector<Tensor> g(2);
            const Real* pu = up.data();
            if (need[0]) {  // grad_a = upstream . b^T
                Tensor ga(a.shape());
                Real* pg = ga.data();
                const Real* pb = b.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                        Real acc = 0;
                        for (std::size_t j = 0; j < n; ++j) acc += pu[i * n + j] * pb[l * n + j];
                        pg[i * k + l] = acc;
                    }
                g[0] = std::move(ga);
            }
            if (need[1]) {  // grad_b = a^T . upstream
                Tensor gb(b.shape());
                Real* pg = gb.data();
                const Real* pa = a.data();
                for (std::size_t l = 0; l < k; ++l)
                    for (std::size_t j = 0; j < n; ++j) {
                        Real acc = 0;
                        for (std::size_t i = 0; i < m; ++i) acc += pa[i * k + l] * pu[i * n + j];
                        pg[l * n + j] = acc;
                    }
                g[1] = std::move(gb);
            }
            return g;
        });
}

// ---------------------------------------------------------------------------
// 2-D convolution (cross-correlation), NCHW input, OIKK kernel
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
    std::size_t n, cin, h, w;     // input
    std::size_t cout, k;          // kernel
    std::size_t stride, ph, pw;   // stride and top/left padding
    std::size_t hout, wout;
};

inline ConvDims conv2d_dims(const Shape& in, const Shape& ker, std::size_t stride, Padding pad) {
    if (in.size() != 4) throw shape_error("conv2d: input must be NCHW, got " + shape_str(in));
    if (ker.size() != 4 || ker[2] != ker[3])
        throw shape_error("conv2d: kernel must be OIKK with square window, got " + shape_str(ker));
    if (in[1] != ker[1])
        throw shape_error("conv2d: input channels " + std::to_string(in[1]) +
                          " do not match kernel input extent " + std::to_string(ker[1]));
    if (stride == 0) throw value_error("conv2d: stride must be positive");

    ConvDims d{};
    d.n = in[0];
    d.cin = in[1];
    d.h = in[2];
    d.w = in[3];
    d.cout = ker[0];
    d.k = ker[2];
    d.stride = stride;
    if (pad == Padding::valid) {
        if (d.h < d.k || d.w < d.k)
            throw shape_error("conv2d: input " + shape_str(in) + " smaller than kernel window");
        d.hout = (d.h - d.k) / stride + 1;
        d.wout = (d.w - d.k) / stride + 1;
        d.ph = d.pw = 0;
    } else {
        // same: output = ceil(in / stride); odd padding goes to bottom/right
        d.hout = (d.h + stride - 1) / stride;
        d.wout = (d.w + stride - 1) / stride;
        const std::size_t need_h = (d.hout - 1) * stride + d.k;
        const std::size_t need_w = (d.wout - 1) * stride + d.k;
        d.ph = need_h > d.h ? (need_h - d.h) / 2 : 0;
        d.pw = need_w > d.w ? (need_w - d.w) / 2 : 0;
    }
    return d;
}

}  // namespace detail

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, Padding pad,
                     Tape* tape = nullptr) {
    const detail::ConvDims d = detail::conv2d_dims(input.shape(), kernel.shape(), stride, pad);
    Tensor out(Shape{d.n, d.cout, d.hout, d.wout});
    const Real* pin = input.data();
    const Real* pk = kernel.data();
    Real* po = out.data();
    const std::size_t in_chw = d.cin * d.h * d.w;
    const std::size_t k2 = d.k * d.k;

    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t o = 0; o < d.cout; ++o)
            for (std::size_t oh = 0; oh < d.hout; ++oh)
                for (std::size_t ow = 0; ow < d.wout; ++ow) {
                    Real acc = 0;
                    for (std::size_t i = 0; i < d.cin; ++i) {
                        const Real* in_plane = pin + n * in_chw + i * d.h * d.w;
                        const Real* kwin = pk + (o * d.cin + i) * k2;
                        for (std::size_t kh = 0; kh < d.k; ++kh) {
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * d.stride + kh) -
                                                      static_cast<std::ptrdiff_t>(d.ph);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
                            for (std::size_t kw = 0; kw < d.k; ++kw) {
                                const std::ptrdiff_t iw =
                                    static_cast<std::ptrdiff_t>(ow * d.stride + kw) -
                                    static_cast<std::ptrdiff_t>(d.pw);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w)) continue;
                                acc += in_plane[ih * static_cast<std::ptrdiff_t>(d.w) + iw] *
                                       kwin[kh * d.k + kw];
                            }
                        }
                    }
                    po[((n * d.cout + o) * d.hout + oh) * d.wout + ow] = acc;
                }
    detail::check_finite(out, "conv2d");
    if (!tape) return out;
    return tape->attach(
        std::move(out), {&input, &kernel},
        [input, kernel, d](const Tensor& up, const std::vector<bool>& need) {
            std::vector<Tensor> g(2);
            const Real* pu = up.data();
            const std::size_t in_chw = d.cin * d.h * d.w;
            const std::size_t k2 = d.k * d.k;
            if (need[0]) {
                Tensor gin = Tensor::zeros(input.shape());
                Real* pg = gin.data();
                const Real* pk = kernel.data();
                for (std::size_t n = 0; n < d.n; ++n)
                    for (std::size_t o = 0; o < d.cout; ++o)
                        for (std::size_t oh = 0; oh < d.hout; ++oh)
                            for (std::size_t ow = 0; ow < d.wout; ++ow) {
                                const Real u = pu[((n * d.cout + o) * d.hout + oh) * d.wout + ow];
                                if (u == 0) continue;
                                for (std::size_t i = 0; i < d.cin; ++i) {
                                    Real* gplane = pg + n * in_chw + i * d.h * d.w;
                                    const Real* kwin = pk + (o * d.cin + i) * k2;
                                    for (std::size_t kh = 0; kh < d.k; ++kh) {
                                        const std::ptrdiff_t ih =
                                            static_cast<std::ptrdiff_t>(oh * d.stride + kh) -
                                            static_cast<std::ptrdiff_t>(d.ph);
                                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
                                        for (std::size_t kw = 0; kw < d.k; ++kw) {
                                            const std::ptrdiff_t iw =
                                                static_cast<std::ptrdiff_t>(ow * d.stride + kw) -
                                                static_cast<std::ptrdiff_t>(d.pw);
                                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w))
                                                continue;
                                            gplane[ih * static_cast<std::ptrdiff_t>(d.w) + iw] +=
                                                u * kwin[kh * d.k + kw];
                                        }
                                    }
                                }
                            }
                g[0] = std::move(gin);
            }
            if (need[1]) {
                Tensor gker = Tensor::zeros(kernel.shape());
                Real* pg = gker.data();
                const Real* pin = input.data();
                for (std::size_t n = 0; n < d.n; ++n)
                    for (std::size_t o = 0; o < d.cout; ++o)
                        for (std::size_t oh = 0; oh < d.hout; ++oh)
                            for (std::size_t ow = 0; ow < d.wout; ++ow) {
                                const Real u = pu[((n * d.cout + o) * d.hout + oh) * d.wout + ow];
                                if (u == 0) continue;
                                for (std::size_t i = 0; i < d.cin; ++i) {
                                    const Real* in_plane = pin + n * in_chw + i * d.h * d.w;
                                    Real* gwin = pg + (o * d.cin + i) * k2;
                                    for (std::size_t kh = 0; kh < d.k; ++kh) {
                                        const std::ptrdiff_t ih =
                                            static_cast<std::ptrdiff_t>(oh * d.stride + kh) -
                                            static_cast<std::ptrdiff_t>(d.ph);
                                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
                                        for (std::size_t kw = 0; kw < d.k; ++kw) {
                                            const std::ptrdiff_t iw =
                                                static_cast<std::ptrdiff_t>(ow * d.stride + kw) -
                                                static_cast<std::ptrdiff_t>(d.pw);
                                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w))
                                                continue;
                                            gwin[kh * d.k + kw] +=
                                                u * in_plane[ih * static_cast<std::ptrdiff_t>(d.w) + iw];
                                        }
                                    }
                                }
                            }
                g[1] = std::move(gker);
            }
            return g;
        });
}

// ---------------------------------------------------------------------------
// Bias add: [N,C]+[C] per column, or NCHW+[C] per channel
// ---------------------------------------------------------------------------

inline Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape = nullptr) {
    if (bias.rank() != 1) throw shape_error("add_bias: bias must be rank 1");
    const std::size_t c = bias.dim(0);
    Tensor out(x.shape());
    if (x.rank() == 2) {
        if (x.dim(1) != c)
            throw shape_error("add_bias: bias length " + std::to_string(c) +
                              " does not match columns of " + shape_str(x.shape()));
        for (std::size_t i = 0; i < x.dim(0); ++i)
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + bias[j];
    } else if (x.rank() == 4) {
        if (x.dim(1) != c)
            throw shape_error("add_bias: bias length " + std::to_string(c) +
                              " does not match channels of " + shape_str(x.shape()));
        const std::size_t hw = x.dim(2) * x.dim(3);
        for (std::size_t n = 0; n < x.dim(0); ++n)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t base = (n * c + ch) * hw;
                for (std::size_t s = 0; s < hw; ++s) out[base + s] = x[base + s] + bias[ch];
            }
    } else {
        throw shape_error("add_bias: expected rank-2 or rank-4 input, got " + shape_str(x.shape()));
    }
    detail::check_finite(out, "add_bias");
    if (!tape) return out;
    const Shape xs = x.shape();
    return tape->attach(std::move(out), {&x, &bias},
                        [xs, c](const Tensor& up, const std::vector<bool>& need) {
                            std::vector<Tensor> g(2);
                            if (need[0]) g[0] = up;
                            if (need[1]) {
                                Tensor gb = Tensor::zeros(Shape{c});
                                if (xs.size() == 2) {
                                    for (std::size_t i = 0; i < xs[0]; ++i)
                                        for (std::size_t j = 0; j < c; ++j) gb[j] += up[i * c + j];
                                } else {
                                    const std::size_t hw = xs[2] * xs[3];
                                    for (std::size_t n = 0; n < xs[0]; ++n)
                                        for (std::size_t ch = 0; ch < c; ++ch) {
                                            const std::size_t base = (n * c + ch) * hw;
                                            for (std::size_t s = 0; s < hw; ++s)
                                                gb[ch] += up[base + s];
                                        }
                                }
                                g[1] = std::move(gb);
                            }
                            return g;
                        });
}

// Channelwise scale: out[n,c,...] = x[n,c,...] * s[c]. The means by which a
// bank of gates masks the channels of a layer output.
inline Tensor mul_channels(const Tensor& x, const Tensor& s, Tape* tape = nullptr) {
    if (s.rank() != 1) throw shape_error("mul_channels: scale must be rank 1");
    if (x.rank() < 2)
        throw shape_error("mul_channels: input must have a channel axis, got " +
                          shape_str(x.shape()));
    const std::size_t c = s.dim(0);
    if (x.dim(1) != c)
        throw shape_error("mul_channels: " + std::to_string(c) + " scales for " +
                          std::to_string(x.dim(1)) + " channels");
    std::size_t inner = 1;
    for (std::size_t i = 2; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t n = x.dim(0);
    Tensor out(x.shape());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (b * c + ch) * inner;
            for (std::size_t k = 0; k < inner; ++k) out[base + k] = x[base + k] * s[ch];
        }
    detail::check_finite(out, "mul_channels");
    if (!tape) return out;
    return tape->attach(std::move(out), {&x, &s},
                        [x, s, n, c, inner](const Tensor& up, const std::vector<bool>& need) {
                            std::vector<Tensor> g(2);
                            if (need[0]) {
                                Tensor gx(x.shape());
                                for (std::size_t b = 0; b < n; ++b)
                                    for (std::size_t ch = 0; ch < c; ++ch) {
                                        const std::size_t base = (b * c + ch) * inner;
                                        for (std::size_t k = 0; k < inner; ++k)
                                            gx[base + k] = up[base + k] * s[ch];
                                    }
                                g[0] = std::move(gx);
                            }
                            if (need[1]) {
                                Tensor gs = Tensor::zeros(s.shape());
                                for (std::size_t b = 0; b < n; ++b)
                                    for (std::size_t ch = 0; ch < c; ++ch) {
                                        const std::size_t base = (b * c + ch) * inner;
                                        Real acc = 0;
                                        for (std::size_t k = 0; k < inner; ++k)
                                            acc += up[base + k] * x[base + k];
                                        gs[ch] += acc;
                                    }
                                g[1] = std::move(gs);
                            }
                            return g;
                        });
}

// ---------------------------------------------------------------------------
// Reductions and shape ops
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a, Tape* tape = nullptr) {
    Real acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
    Tensor out = Tensor::scalar(acc);
    detail::check_finite(out, "sum");
    if (!tape) return out;
    return tape->attach(std::move(out), {&a},
                        [shape = a.shape()](const Tensor& up, const std::vector<bool>& need) {
                            std::vector<Tensor> g(1);
                            if (need[0]) g[0] = Tensor::full(shape, up[0]);
                            return g;
                        });
}

inline Tensor mean(const Tensor& a, Tape* tape = nullptr) {
    Real acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
    const Real inv = Real(1) / static_cast<Real>(a.size());
    Tensor out = Tensor::scalar(acc * inv);
    detail::check_finite(out, "mean");
    if (!tape) return out;
    return tape->attach(std::move(out), {&a},
                        [shape = a.shape(), inv](const Tensor& up, const std::vector<bool>& need) {
                            std::vector<Tensor> g(1);
                            if (need[0]) g[0] = Tensor::full(shape, up[0] * inv);
                            return g;
                        });
}

inline Tensor reshape(const Tensor& a, Shape new_shape, Tape* tape = nullptr) {
    if (numel(new_shape) != a.size())
        throw shape_error("reshape: cannot view " + shape_str(a.shape()) + " as " +
                          shape_str(new_shape));
    Tensor out(new_shape, a.vec());
    if (!tape) return out;
    return tape->attach(std::move(out), {&a},
                        [shape = a.shape()](const Tensor& up, const std::vector<bool>& need) {
                            std::vector<Tensor> g(1);
                            if (need[0]) g[0] = Tensor(shape, up.vec());
                            return g;
                        });
}

// [N, d1, d2, ...] -> [N, d1*d2*...]
inline Tensor flatten(const Tensor& a, Tape* tape = nullptr) {
    if (a.rank() < 2) throw shape_error("flatten: expected rank >= 2, got " + shape_str(a.shape()));
    std::size_t rest = 1;
    for (std::size_t i = 1; i < a.rank(); ++i) rest *= a.dim(i);
    return reshape(a, Shape{a.dim(0), rest}, tape);
}

// ---------------------------------------------------------------------------
// Custom gradient: forward passes a precomputed value through, backward runs
// the supplied rule instead of any true derivative.
// ---------------------------------------------------------------------------

using CustomBackwardFn = std::function<std::vector<Tensor>(const Tensor& upstream)>;

inline Tensor custom_grad(Tensor forward_value, CustomBackwardFn backward_fn,
                          const std::vector<const Tensor*>& inputs, Tape* tape = nullptr) {
    detail::check_finite(forward_value, "custom_grad");
    if (!tape) return forward_value;
    return tape->attach(std::move(forward_value), inputs,
                        [fn = std::move(backward_fn)](const Tensor& up, const std::vector<bool>&) {
                            return fn(up);
                        });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline Tensor mse_loss(const Tensor& pred, const Tensor& target, Tape* tape = nullptr) {
    if (!pred.same_shape(target))
        throw shape_error("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                          shape_str(target.shape()));
    return mean(square(sub(pred, target, tape), tape), tape);
}

// Mean softmax cross-entropy over the batch; logits [N,C], one class id per row.
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels,
                                    Tape* tape = nullptr) {
    if (logits.rank() != 2)
        throw shape_error("softmax_cross_entropy: logits must be [N,C], got " +
                          shape_str(logits.shape()));
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (labels.size() != n)
        throw shape_error("softmax_cross_entropy: " + std::to_string(labels.size()) +
                          " labels for batch of " + std::to_string(n));
    // probs computed here are reused by the backward rule
    Tensor probs(Shape{n, c});
    Real loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= c)
            throw value_error("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                              " out of range for " + std::to_string(c) + " classes");
        const Real* row = logits.data() + i * c;
        Real mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        Real z = 0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const Real lse = std::log(z) + mx;
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
        loss += lse - row[labels[i]];
    }
    Tensor out = Tensor::scalar(loss / static_cast<Real>(n));
    detail::check_finite(out, "softmax_cross_entropy");
    if (!tape) return out;
    return tape->attach(std::move(out), {&logits},
                        [probs = std::move(probs), labels, n, c](const Tensor& up,
                                                                 const std::vector<bool>& need) {
                            std::vector<Tensor> g(1);
                            if (need[0]) {
                                Tensor gl(Shape{n, c});
                                const Real s = up[0] / static_cast<Real>(n);
                                for (std::size_t i = 0; i < n; ++i)
                                    for (std::size_t j = 0; j < c; ++j)
                                        gl[i * c + j] =
                                            s * (probs[i * c + j] - (labels[i] == j ? 1 : 0));
                                g[0] = std::move(gl);
                            }
                            return g;
                        });
}

inline std::size_t argmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t c = logits.dim(1);
    const Real* p = logits.data() + row * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
        if (p[j] > p[best]) best = j;
    return best;
}

}  // namespace tgl
