#pragma once

// Layer kernels: forward and backward passes for the primitives the network
// builders compose. All kernels are plain loops over row-major tensors and
// are templated on the scalar type (float for training, double for gradient
// checks).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "arn/errors.hpp"
#include "arn/tensor.hpp"

namespace arn {

enum class LayerKind {
    conv,
    tconv,
    dense,
    relu,
    leaky_relu,
    sigmoid,
    softmax,
    flatten,
    global_avg_pool,
    avg_pool,
    upsample,
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::tconv: return "tconv";
        case LayerKind::dense: return "dense";
        case LayerKind::relu: return "relu";
        case LayerKind::leaky_relu: return "leaky_relu";
        case LayerKind::sigmoid: return "sigmoid";
        case LayerKind::softmax: return "softmax";
        case LayerKind::flatten: return "flatten";
        case LayerKind::global_avg_pool: return "global_avg_pool";
        case LayerKind::avg_pool: return "avg_pool";
        case LayerKind::upsample: return "upsample";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind;
    std::int64_t in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;  // conv / tconv
    std::int64_t in_dim = 0, out_dim = 0;                                 // dense
    double slope = 0.01;                                                  // leaky_relu

    static LayerSpec conv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                            std::int64_t stride = 1, std::int64_t pad = 0) {
        LayerSpec s{LayerKind::conv};
        s.in_ch = in_ch; s.out_ch = out_ch; s.kernel = kernel; s.stride = stride; s.pad = pad;
        return s;
    }
    static LayerSpec tconv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                             std::int64_t stride = 1, std::int64_t pad = 0) {
        LayerSpec s{LayerKind::tconv};
        s.in_ch = in_ch; s.out_ch = out_ch; s.kernel = kernel; s.stride = stride; s.pad = pad;
        return s;
    }
    static LayerSpec dense(std::int64_t in_dim, std::int64_t out_dim) {
        LayerSpec s{LayerKind::dense};
        s.in_dim = in_dim; s.out_dim = out_dim;
        return s;
    }
    static LayerSpec relu() { return LayerSpec{LayerKind::relu}; }
    static LayerSpec leaky_relu(double slope) {
        LayerSpec s{LayerKind::leaky_relu};
        s.slope = slope;
        return s;
    }
    static LayerSpec sigmoid() { return LayerSpec{LayerKind::sigmoid}; }
    static LayerSpec softmax() { return LayerSpec{LayerKind::softmax}; }
    static LayerSpec flatten() { return LayerSpec{LayerKind::flatten}; }
    static LayerSpec global_avg_pool() { return LayerSpec{LayerKind::global_avg_pool}; }
    static LayerSpec avg_pool() { return LayerSpec{LayerKind::avg_pool}; }
    static LayerSpec upsample() { return LayerSpec{LayerKind::upsample}; }

    bool has_params() const {
        return kind == LayerKind::conv || kind == LayerKind::tconv || kind == LayerKind::dense;
    }

    // Static shape propagation; throws on incompatible input.
    Shape out_shape(const Shape& in) const {
        auto fail = [&](const std::string& why) -> Shape {
            throw ConfigError(std::string(layer_kind_name(kind)) + ": " + why + " (input " + shape_str(in) + ")");
        };
        switch (kind) {
            case LayerKind::conv: {
                if (in.size() != 4 || in[1] != in_ch) return fail("expected [N," + std::to_string(in_ch) + ",H,W]");
                const std::int64_t h = in[2] + 2 * pad - kernel;
                const std::int64_t w = in[3] + 2 * pad - kernel;
                if (h < 0 || w < 0) return fail("kernel larger than padded input");
                return {in[0], out_ch, h / stride + 1, w / stride + 1};
            }
            case LayerKind::tconv: {
                if (in.size() != 4 || in[1] != in_ch) return fail("expected [N," + std::to_string(in_ch) + ",H,W]");
                const std::int64_t h = (in[2] - 1) * stride - 2 * pad + kernel;
                const std::int64_t w = (in[3] - 1) * stride - 2 * pad + kernel;
                if (h <= 0 || w <= 0) return fail("output collapses");
                return {in[0], out_ch, h, w};
            }
            case LayerKind::dense: {
                if (in.size() != 2 || in[1] != in_dim) return fail("expected [N," + std::to_string(in_dim) + "]");
                return {in[0], out_dim};
            }
            case LayerKind::relu:
            case LayerKind::leaky_relu:
            case LayerKind::sigmoid:
                return in;
            case LayerKind::softmax:
                if (in.size() != 2) return fail("expected rank-2 logits");
                return in;
            case LayerKind::flatten: {
                if (in.size() < 2) return fail("expected rank >= 2");
                std::int64_t rest = 1;
                for (std::size_t i = 1; i < in.size(); ++i) rest *= in[i];
                return {in[0], rest};
            }
            case LayerKind::global_avg_pool:
                if (in.size() != 4) return fail("expected rank 4");
                return {in[0], in[1]};
            case LayerKind::avg_pool:
                if (in.size() != 4 || in[2] % 2 != 0 || in[3] % 2 != 0) return fail("expected rank 4 with even H,W");
                return {in[0], in[1], in[2] / 2, in[3] / 2};
            case LayerKind::upsample:
                if (in.size() != 4) return fail("expected rank 4");
                return {in[0], in[1], in[2] * 2, in[3] * 2};
        }
        return fail("unknown layer kind");
    }

    Shape weight_shape() const {
        switch (kind) {
            case LayerKind::conv: return {out_ch, in_ch, kernel, kernel};
            case LayerKind::tconv: return {in_ch, out_ch, kernel, kernel};
            case LayerKind::dense: return {out_dim, in_dim};
            default: return {};
        }
    }
    Shape bias_shape() const {
        switch (kind) {
            case LayerKind::conv:
            case LayerKind::tconv: return {out_ch};
            case LayerKind::dense: return {out_dim};
            default: return {};
        }
    }
    std::int64_t fan_in() const {
        switch (kind) {
            case LayerKind::conv:
            case LayerKind::tconv: return in_ch * kernel * kernel;
            case LayerKind::dense: return in_dim;
            default: return 0;
        }
    }
};

namespace kernels {

// Valid x-range [begin,end) of the output row so that the paired input column
// ix = ox*stride + kx - pad stays inside [0, limit).
inline void strided_range(std::int64_t kx, std::int64_t pad, std::int64_t stride, std::int64_t limit,
                          std::int64_t out_len, std::int64_t& begin, std::int64_t& end) {
    const std::int64_t off = kx - pad;
    begin = off < 0 ? (-off + stride - 1) / stride : 0;
    // last ox with off + ox*stride <= limit-1
    end = off >= limit ? 0 : (limit - 1 - off) / stride + 1;
    begin = std::min(begin, out_len);
    end = std::min(end, out_len);
    if (end < begin) end = begin;
}

template <typename T>
void conv_forward(const LayerSpec& s, const Tensor<T>& w, const Tensor<T>& b, const Tensor<T>& in,
                  Tensor<T>& out) {
    const std::int64_t N = in.dim(0), IC = s.in_ch, IH = in.dim(2), IW = in.dim(3);
    const std::int64_t OC = s.out_ch, OH = out.dim(2), OW = out.dim(3), K = s.kernel;
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t oc = 0; oc < OC; ++oc) {
            T* o0 = out.data() + ((n * OC + oc) * OH) * OW;
            std::fill(o0, o0 + OH * OW, b[oc]);
        }
        for (std::int64_t oc = 0; oc < OC; ++oc) {
            for (std::int64_t ic = 0; ic < IC; ++ic) {
                const T* in0 = in.data() + ((n * IC + ic) * IH) * IW;
                T* out0 = out.data() + ((n * OC + oc) * OH) * OW;
                const T* w0 = w.data() + ((oc * IC + ic) * K) * K;
                for (std::int64_t ky = 0; ky < K; ++ky) {
                    for (std::int64_t kx = 0; kx < K; ++kx) {
                        const T wv = w0[ky * K + kx];
                        if (wv == T(0)) continue;
                        std::int64_t xb, xe;
                        strided_range(kx, s.pad, s.stride, IW, OW, xb, xe);
                        for (std::int64_t oy = 0; oy < OH; ++oy) {
                            const std::int64_t iy = oy * s.stride + ky - s.pad;
                            if (iy < 0 || iy >= IH) continue;
                            const T* irow = in0 + iy * IW + (kx - s.pad);
                            T* orow = out0 + oy * OW;
                            for (std::int64_t ox = xb; ox < xe; ++ox) {
                                orow[ox] += wv * irow[ox * s.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_backward(const LayerSpec& s, const Tensor<T>& w, const Tensor<T>& in, const Tensor<T>& dout,
                   Tensor<T>& din, Tensor<T>* dw, Tensor<T>* db) {
    const std::int64_t N = in.dim(0), IC = s.in_ch, IH = in.dim(2), IW = in.dim(3);
    const std::int64_t OC = s.out_ch, OH = dout.dim(2), OW = dout.dim(3), K = s.kernel;
    din.fill(T(0));
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t oc = 0; oc < OC; ++oc) {
            const T* dout0 = dout.data() + ((n * OC + oc) * OH) * OW;
            if (db) {
                T acc = T(0);
                for (std::int64_t i = 0; i < OH * OW; ++i) acc += dout0[i];
                (*db)[oc] += acc;
            }
            for (std::int64_t ic = 0; ic < IC; ++ic) {
                const T* in0 = in.data() + ((n * IC + ic) * IH) * IW;
                T* din0 = din.data() + ((n * IC + ic) * IH) * IW;
                const T* w0 = w.data() + ((oc * IC + ic) * K) * K;
                T* dw0 = dw ? dw->data() + ((oc * IC + ic) * K) * K : nullptr;
                for (std::int64_t ky = 0; ky < K; ++ky) {
                    for (std::int64_t kx = 0; kx < K; ++kx) {
                        const T wv = w0[ky * K + kx];
                        T wacc = T(0);
                        std::int64_t xb, xe;
                        strided_range(kx, s.pad, s.stride, IW, OW, xb, xe);
                        for (std::int64_t oy = 0; oy < OH; ++oy) {
                            const std::int64_t iy = oy * s.stride + ky - s.pad;
                            if (iy < 0 || iy >= IH) continue;
                            const T* irow = in0 + iy * IW + (kx - s.pad);
                            T* drow = din0 + iy * IW + (kx - s.pad);
                            const T* gorow = dout0 + oy * OW;
                            for (std::int64_t ox = xb; ox < xe; ++ox) {
                                const T g = gorow[ox];
                                drow[ox * s.stride] += wv * g;
                                if (dw0) wacc += irow[ox * s.stride] * g;
                            }
                        }
                        if (dw0) dw0[ky * K + kx] += wacc;
                    }
                }
            }
        }
    }
}

template <typename T>
void tconv_forward(const LayerSpec& s, const Tensor<T>& w, const Tensor<T>& b, const Tensor<T>& in,
                   Tensor<T>& out) {
    const std::int64_t N = in.dim(0), IC = s.in_ch, IH = in.dim(2), IW = in.dim(3);
    const std::int64_t OC = s.out_ch, OH = out.dim(2), OW = out.dim(3), K = s.kernel;
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t oc = 0; oc < OC; ++oc) {
            T* o0 = out.data() + ((n * OC + oc) * OH) * OW;
            std::fill(o0, o0 + OH * OW, b[oc]);
        }
        for (std::int64_t ic = 0; ic < IC; ++ic) {
            const T* in0 = in.data() + ((n * IC + ic) * IH) * IW;
            for (std::int64_t oc = 0; oc < OC; ++oc) {
                T* out0 = out.data() + ((n * OC + oc) * OH) * OW;
                const T* w0 = w.data() + ((ic * OC + oc) * K) * K;
                for (std::int64_t ky = 0; ky < K; ++ky) {
                    for (std::int64_t kx = 0; kx < K; ++kx) {
                        const T wv = w0[ky * K + kx];
                        if (wv == T(0)) continue;
                        // ox = ix*stride + kx - pad must land in [0, OW)
                        std::int64_t xb, xe;
                        strided_range(kx, s.pad, s.stride, OW, IW, xb, xe);
                        for (std::int64_t iy = 0; iy < IH; ++iy) {
                            const std::int64_t oy = iy * s.stride + ky - s.pad;
                            if (oy < 0 || oy >= OH) continue;
                            const T* irow = in0 + iy * IW;
                            T* orow = out0 + oy * OW + (kx - s.pad);
                            for (std::int64_t ix = xb; ix < xe; ++ix) {
                                orow[ix * s.stride] += wv * irow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void tconv_backward(const LayerSpec& s, const Tensor<T>& w, const Tensor<T>& in, const Tensor<T>& dout,
                    Tensor<T>& din, Tensor<T>* dw, Tensor<T>* db) {
    const std::int64_t N = in.dim(0), IC = s.in_ch, IH = in.dim(2), IW = in.dim(3);
    const std::int64_t OC = s.out_ch, OH = dout.dim(2), OW = dout.dim(3), K = s.kernel;
    din.fill(T(0));
    if (db) {
        for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t oc = 0; oc < OC; ++oc) {
                const T* d0 = dout.data() + ((n * OC + oc) * OH) * OW;
                T acc = T(0);
                for (std::int64_t i = 0; i < OH * OW; ++i) acc += d0[i];
                (*db)[oc] += acc;
            }
        }
    }
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t ic = 0; ic < IC; ++ic) {
            const T* in0 = in.data() + ((n * IC + ic) * IH) * IW;
            T* din0 = din.data() + ((n * IC + ic) * IH) * IW;
            for (std::int64_t oc = 0; oc < OC; ++oc) {
                const T* dout0 = dout.data() + ((n * OC + oc) * OH) * OW;
                const T* w0 = w.data() + ((ic * OC + oc) * K) * K;
                T* dw0 = dw ? dw->data() + ((ic * OC + oc) * K) * K : nullptr;
                for (std::int64_t ky = 0; ky < K; ++ky) {
                    for (std::int64_t kx = 0; kx < K; ++kx) {
                        const T wv = w0[ky * K + kx];
                        T wacc = T(0);
                        std::int64_t xb, xe;
                        strided_range(kx, s.pad, s.stride, OW, IW, xb, xe);
                        for (std::int64_t iy = 0; iy < IH; ++iy) {
                            const std::int64_t oy = iy * s.stride + ky - s.pad;
                            if (oy < 0 || oy >= OH) continue;
                            const T* irow = in0 + iy * IW;
                            T* drow = din0 + iy * IW;
                            const T* gorow = dout0 + oy * OW + (kx - s.pad);
                            for (std::int64_t ix = xb; ix < xe; ++ix) {
                                const T g = gorow[ix * s.stride];
                                drow[ix] += wv * g;
                                if (dw0) wacc += irow[ix] * g;
                            }
                        }
                        if (dw0) dw0[ky * K + kx] += wacc;
                    }
                }
            }
        }
    }
}

template <typename T>
void dense_forward(const Tensor<T>& w, const Tensor<T>& b, const Tensor<T>& in, Tensor<T>& out) {
    const std::int64_t B = in.dim(0), I = in.dim(1), O = out.dim(1);
    for (std::int64_t n = 0; n < B; ++n) {
        const T* x = in.data() + n * I;
        T* y = out.data() + n * O;
        for (std::int64_t o = 0; o < O; ++o) {
            const T* wr = w.data() + o * I;
            T acc = b[o];
            for (std::int64_t i = 0; i < I; ++i) acc += wr[i] * x[i];
            y[o] = acc;
        }
    }
}

template <typename T>
void dense_backward(const Tensor<T>& w, const Tensor<T>& in, const Tensor<T>& dout, Tensor<T>& din,
                    Tensor<T>* dw, Tensor<T>* db) {
    const std::int64_t B = in.dim(0), I = in.dim(1), O = dout.dim(1);
    din.fill(T(0));
    for (std::int64_t n = 0; n < B; ++n) {
        const T* x = in.data() + n * I;
        const T* g = dout.data() + n * O;
        T* dx = din.data() + n * I;
        for (std::int64_t o = 0; o < O; ++o) {
            const T go = g[o];
            if (db) (*db)[o] += go;
            const T* wr = w.data() + o * I;
            T* dwr = dw ? dw->data() + o * I : nullptr;
            for (std::int64_t i = 0; i < I; ++i) {
                dx[i] += wr[i] * go;
                if (dwr) dwr[i] += x[i] * go;
            }
        }
    }
}

template <typename T>
void softmax_rows(const Tensor<T>& in, Tensor<T>& out) {
    const std::int64_t B = in.dim(0), D = in.dim(1);
    for (std::int64_t n = 0; n < B; ++n) {
        const T* x = in.data() + n * D;
        T* y = out.data() + n * D;
        T mx = x[0];
        for (std::int64_t i = 1; i < D; ++i) mx = std::max(mx, x[i]);
        T sum = T(0);
        for (std::int64_t i = 0; i < D; ++i) {
            y[i] = std::exp(x[i] - mx);
            sum += y[i];
        }
        for (std::int64_t i = 0; i < D; ++i) y[i] /= sum;
    }
}

}  // namespace kernels

}  // namespace arn
