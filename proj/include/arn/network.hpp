#pragma once

// Networks are ordered layer stacks over the kernels in layers.hpp. A forward
// pass records per-layer activations into an external Cache, which is exactly
// the tape the backward pass consumes; keeping the cache outside the network
// makes forward/backward const and safe to run concurrently on distinct
// caches against a shared read-only parameter set.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "arn/dataset.hpp"
#include "arn/layers.hpp"
#include "arn/parallel.hpp"
#include "arn/rng.hpp"
#include "arn/serialize.hpp"
#include "arn/tensor.hpp"

namespace arn {

struct NetworkSpec {
    std::vector<LayerSpec> layers;

    Shape out_shape(Shape in) const {
        for (const LayerSpec& l : layers) in = l.out_shape(in);
        return in;
    }
};

template <typename T>
struct LayerParams {
    Tensor<T> w;
    Tensor<T> b;
};

// Per-layer parameter gradients, aligned with Network::params.
template <typename T>
struct GradSink {
    std::vector<LayerParams<T>> grads;

    void zero() {
        for (auto& g : grads) {
            g.w.fill(T(0));
            g.b.fill(T(0));
        }
    }
};

// Recorded activations from one forward pass: acts[0] is the input, acts[i+1]
// the output of layer i.
template <typename T>
struct Cache {
    std::vector<Tensor<T>> acts;
    const Tensor<T>& output() const { return acts.back(); }
};

enum class Mode { train, eval };

template <typename T>
class Network {
public:
    Network() = default;
    Network(std::string name, NetworkSpec spec) : name_(std::move(name)), spec_(std::move(spec)) {
        params_.resize(spec_.layers.size());
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
            const LayerSpec& l = spec_.layers[i];
            if (l.has_params()) {
                params_[i].w = Tensor<T>(l.weight_shape());
                params_[i].b = Tensor<T>(l.bias_shape());
            }
        }
    }

    const std::string& name() const { return name_; }
    const NetworkSpec& spec() const { return spec_; }
    Mode mode() const { return mode_; }
    void set_mode(Mode m) { mode_ = m; }

    std::vector<LayerParams<T>>& params() { return params_; }
    const std::vector<LayerParams<T>>& params() const { return params_; }

    // Fan-in scaled uniform init: w ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), b = 0.
    void init_params(SeededRng& rng) {
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
            const LayerSpec& l = spec_.layers[i];
            if (!l.has_params()) continue;
            const double bound = 1.0 / std::sqrt(static_cast<double>(l.fan_in()));
            Tensor<T>& w = params_[i].w;
            for (std::int64_t j = 0; j < w.size(); ++j) w[j] = static_cast<T>(rng.uniform(-bound, bound));
            params_[i].b.fill(T(0));
        }
    }

    GradSink<T> make_grad_sink() const {
        GradSink<T> sink;
        sink.grads.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (spec_.layers[i].has_params()) {
                sink.grads[i].w = Tensor<T>(spec_.layers[i].weight_shape());
                sink.grads[i].b = Tensor<T>(spec_.layers[i].bias_shape());
            }
        }
        return sink;
    }

    const Tensor<T>& forward(const Tensor<T>& input, Cache<T>& cache) const {
        cache.acts.clear();
        cache.acts.reserve(spec_.layers.size() + 1);
        cache.acts.push_back(input);
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
            cache.acts.push_back(apply_layer(i, cache.acts.back()));
        }
        return cache.acts.back();
    }

    Tensor<T> forward_eval(const Tensor<T>& input) const {
        Cache<T> cache;
        forward(input, cache);
        return std::move(cache.acts.back());
    }

    // Backpropagates dloss/doutput through the recorded tape. Parameter
    // gradients accumulate into sink when provided; passing nullptr treats
    // the parameters as constants (only the input gradient is produced).
    Tensor<T> backward(const Tensor<T>& dout, const Cache<T>& cache, GradSink<T>* sink) const {
        Tensor<T> grad = dout;
        for (std::size_t ri = spec_.layers.size(); ri-- > 0;) {
            grad = backward_layer(ri, cache.acts[ri], cache.acts[ri + 1], grad,
                                  sink ? &sink->grads[ri] : nullptr);
        }
        return grad;
    }

    NamedTensors<T> to_named_tensors() const {
        NamedTensors<T> named;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (!spec_.layers[i].has_params()) continue;
            named.emplace(name_ + "." + std::to_string(i) + ".w", params_[i].w);
            named.emplace(name_ + "." + std::to_string(i) + ".b", params_[i].b);
        }
        return named;
    }

    void from_named_tensors(const NamedTensors<T>& named) {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (!spec_.layers[i].has_params()) continue;
            for (const char* suffix : {"w", "b"}) {
                const std::string key = name_ + "." + std::to_string(i) + "." + suffix;
                auto it = named.find(key);
                if (it == named.end()) throw IoError(IoCode::bad_value, "checkpoint missing entry " + key);
                Tensor<T>& dst = suffix[0] == 'w' ? params_[i].w : params_[i].b;
                if (it->second.shape() != dst.shape()) {
                    throw IoError(IoCode::bad_value, "checkpoint entry " + key + " has shape " +
                                                         shape_str(it->second.shape()) + ", expected " +
                                                         shape_str(dst.shape()));
                }
                dst = it->second;
            }
        }
    }

    bool params_finite() const {
        for (const auto& p : params_) {
            if (p.w.size() && !p.w.all_finite()) return false;
            if (p.b.size() && !p.b.all_finite()) return false;
        }
        return true;
    }

    template <typename U>
    Network<U> cast() const {
        Network<U> out(name_, spec_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (!spec_.layers[i].has_params()) continue;
            out.params()[i].w = params_[i].w.template cast<U>();
            out.params()[i].b = params_[i].b.template cast<U>();
        }
        return out;
    }

private:
    Tensor<T> apply_layer(std::size_t i, const Tensor<T>& in) const {
        const LayerSpec& l = spec_.layers[i];
        const Shape os = l.out_shape(in.shape());
        switch (l.kind) {
            case LayerKind::conv: {
                Tensor<T> out(os);
                kernels::conv_forward(l, params_[i].w, params_[i].b, in, out);
                return out;
            }
            case LayerKind::tconv: {
                Tensor<T> out(os);
                kernels::tconv_forward(l, params_[i].w, params_[i].b, in, out);
                return out;
            }
            case LayerKind::dense: {
                Tensor<T> out(os);
                kernels::dense_forward(params_[i].w, params_[i].b, in, out);
                return out;
            }
            case LayerKind::relu: {
                Tensor<T> out = in;
                for (std::int64_t j = 0; j < out.size(); ++j) out[j] = std::max(out[j], T(0));
                return out;
            }
            case LayerKind::leaky_relu: {
                Tensor<T> out = in;
                const T slope = static_cast<T>(l.slope);
                for (std::int64_t j = 0; j < out.size(); ++j) {
                    if (out[j] < T(0)) out[j] *= slope;
                }
                return out;
            }
            case LayerKind::sigmoid: {
                Tensor<T> out = in;
                for (std::int64_t j = 0; j < out.size(); ++j) out[j] = T(1) / (T(1) + std::exp(-out[j]));
                return out;
            }
            case LayerKind::softmax: {
                Tensor<T> out(os);
                kernels::softmax_rows(in, out);
                return out;
            }
            case LayerKind::flatten:
                return in.reshaped(os);
            case LayerKind::global_avg_pool: {
                Tensor<T> out(os);
                const std::int64_t B = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
                for (std::int64_t n = 0; n < B; ++n) {
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T* p = in.data() + (n * C + c) * HW;
                        T acc = T(0);
                        for (std::int64_t j = 0; j < HW; ++j) acc += p[j];
                        out[n * C + c] = acc / static_cast<T>(HW);
                    }
                }
                return out;
            }
            case LayerKind::avg_pool: {
                Tensor<T> out(os);
                const std::int64_t B = in.dim(0), C = in.dim(1), OH = os[2], OW = os[3], IW = in.dim(3);
                for (std::int64_t n = 0; n < B; ++n) {
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T* p = in.data() + ((n * C + c) * in.dim(2)) * IW;
                        T* q = out.data() + ((n * C + c) * OH) * OW;
                        for (std::int64_t y = 0; y < OH; ++y) {
                            for (std::int64_t x = 0; x < OW; ++x) {
                                const T* b0 = p + (2 * y) * IW + 2 * x;
                                q[y * OW + x] = (b0[0] + b0[1] + b0[IW] + b0[IW + 1]) / T(4);
                            }
                        }
                    }
                }
                return out;
            }
            case LayerKind::upsample: {
                Tensor<T> out(os);
                const std::int64_t B = in.dim(0), C = in.dim(1), IH = in.dim(2), IW = in.dim(3);
                for (std::int64_t n = 0; n < B; ++n) {
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T* p = in.data() + ((n * C + c) * IH) * IW;
                        T* q = out.data() + ((n * C + c) * IH * 2) * IW * 2;
                        for (std::int64_t y = 0; y < IH * 2; ++y) {
                            for (std::int64_t x = 0; x < IW * 2; ++x) {
                                q[y * IW * 2 + x] = p[(y / 2) * IW + x / 2];
                            }
                        }
                    }
                }
                return out;
            }
        }
        throw ConfigError("unknown layer kind");
    }

    Tensor<T> backward_layer(std::size_t i, const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout,
                             LayerParams<T>* pgrad) const {
        const LayerSpec& l = spec_.layers[i];
        switch (l.kind) {
            case LayerKind::conv: {
                Tensor<T> din(in.shape());
                kernels::conv_backward(l, params_[i].w, in, dout, din, pgrad ? &pgrad->w : nullptr,
                                       pgrad ? &pgrad->b : nullptr);
                return din;
            }
            case LayerKind::tconv: {
                Tensor<T> din(in.shape());
                kernels::tconv_backward(l, params_[i].w, in, dout, din, pgrad ? &pgrad->w : nullptr,
                                        pgrad ? &pgrad->b : nullptr);
                return din;
            }
            case LayerKind::dense: {
                Tensor<T> din(in.shape());
                kernels::dense_backward(params_[i].w, in, dout, din, pgrad ? &pgrad->w : nullptr,
                                        pgrad ? &pgrad->b : nullptr);
                return din;
            }
            case LayerKind::relu: {
                Tensor<T> din = dout;
                for (std::int64_t j = 0; j < din.size(); ++j) {
                    if (in[j] <= T(0)) din[j] = T(0);
                }
                return din;
            }
            case LayerKind::leaky_relu: {
                Tensor<T> din = dout;
                const T slope = static_cast<T>(l.slope);
                for (std::int64_t j = 0; j < din.size(); ++j) {
                    if (in[j] < T(0)) din[j] *= slope;
                }
                return din;
            }
            case LayerKind::sigmoid: {
                Tensor<T> din = dout;
                for (std::int64_t j = 0; j < din.size(); ++j) din[j] *= out[j] * (T(1) - out[j]);
                return din;
            }
            case LayerKind::softmax: {
                Tensor<T> din(in.shape());
                const std::int64_t B = in.dim(0), D = in.dim(1);
                for (std::int64_t n = 0; n < B; ++n) {
                    const T* s = out.data() + n * D;
                    const T* g = dout.data() + n * D;
                    T dot = T(0);
                    for (std::int64_t j = 0; j < D; ++j) dot += s[j] * g[j];
                    T* d = din.data() + n * D;
                    for (std::int64_t j = 0; j < D; ++j) d[j] = s[j] * (g[j] - dot);
                }
                return din;
            }
            case LayerKind::flatten:
                return dout.reshaped(in.shape());
            case LayerKind::global_avg_pool: {
                Tensor<T> din(in.shape());
                const std::int64_t B = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
                for (std::int64_t n = 0; n < B; ++n) {
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T g = dout[n * C + c] / static_cast<T>(HW);
                        T* d = din.data() + (n * C + c) * HW;
                        for (std::int64_t j = 0; j < HW; ++j) d[j] = g;
                    }
                }
                return din;
            }
            case LayerKind::avg_pool: {
                Tensor<T> din(in.shape());
                const std::int64_t B = in.dim(0), C = in.dim(1), OH = out.dim(2), OW = out.dim(3), IW = in.dim(3);
                for (std::int64_t n = 0; n < B; ++n) {
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T* g = dout.data() + ((n * C + c) * OH) * OW;
                        T* d = din.data() + ((n * C + c) * in.dim(2)) * IW;
                        for (std::int64_t y = 0; y < OH; ++y) {
                            for (std::int64_t x = 0; x < OW; ++x) {
                                const T q = g[y * OW + x] / T(4);
                                T* b0 = d + (2 * y) * IW + 2 * x;
                                b0[0] = q;
                                b0[1] = q;
                                b0[IW] = q;
                                b0[IW + 1] = q;
                            }
                        }
                    }
                }
                return din;
            }
            case LayerKind::upsample: {
                Tensor<T> din(in.shape());
                const std::int64_t B = in.dim(0), C = in.dim(1), IH = in.dim(2), IW = in.dim(3);
                for (std::int64_t n = 0; n < B; ++n) {
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T* g = dout.data() + ((n * C + c) * IH * 2) * IW * 2;
                        T* d = din.data() + ((n * C + c) * IH) * IW;
                        for (std::int64_t y = 0; y < IH; ++y) {
                            for (std::int64_t x = 0; x < IW; ++x) {
                                d[y * IW + x] = g[(2 * y) * (IW * 2) + 2 * x] + g[(2 * y) * (IW * 2) + 2 * x + 1] +
                                                g[(2 * y + 1) * (IW * 2) + 2 * x] +
                                                g[(2 * y + 1) * (IW * 2) + 2 * x + 1];
                            }
                        }
                    }
                }
                return din;
            }
        }
        throw ConfigError("unknown layer kind");
    }

    std::string name_;
    NetworkSpec spec_;
    std::vector<LayerParams<T>> params_;
    Mode mode_ = Mode::train;
};

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

// Classic LeNet-5 stack. The first conv pads by 2, which reproduces the usual
// 28x28 layout and adapts cleanly to smaller even sizes (>= 12).
template <typename T = float>
Network<T> build_lenet(int num_classes, const Shape& image_shape) {
    if (image_shape.size() != 3) throw ConfigError("build_lenet expects [C,H,W]");
    const std::int64_t C = image_shape[0], H = image_shape[1], W = image_shape[2];
    if (H != W || H < 12 || H % 4 != 0) {
        throw ConfigError("build_lenet: unsupported image size " + shape_str(image_shape));
    }
    NetworkSpec spec;
    spec.layers = {
        LayerSpec::conv2d(C, 6, 5, 1, 2),
        LayerSpec::relu(),
        LayerSpec::avg_pool(),
        LayerSpec::conv2d(6, 16, 5, 1, 0),
        LayerSpec::relu(),
        LayerSpec::avg_pool(),
        LayerSpec::flatten(),
    };
    const std::int64_t side = (H / 2 - 4) / 2;
    spec.layers.push_back(LayerSpec::dense(16 * side * side, 120));
    spec.layers.push_back(LayerSpec::relu());
    spec.layers.push_back(LayerSpec::dense(120, 84));
    spec.layers.push_back(LayerSpec::relu());
    spec.layers.push_back(LayerSpec::dense(84, num_classes));
    return Network<T>("lenet", std::move(spec));
}

// Deliberately different target: three dense layers on the flat image.
template <typename T = float>
Network<T> build_toynet(int num_classes, const Shape& image_shape) {
    if (image_shape.size() != 3) throw ConfigError("build_toynet expects [C,H,W]");
    const std::int64_t flat = image_shape[0] * image_shape[1] * image_shape[2];
    NetworkSpec spec;
    spec.layers = {
        LayerSpec::flatten(),
        LayerSpec::dense(flat, 128),
        LayerSpec::relu(),
        LayerSpec::dense(128, 64),
        LayerSpec::relu(),
        LayerSpec::dense(64, num_classes),
    };
    return Network<T>("toynet", std::move(spec));
}

inline void require_divisible_by_8(const Shape& image_shape, const char* who) {
    if (image_shape.size() != 3) throw ConfigError(std::string(who) + " expects [C,H,W]");
    if (image_shape[1] % 8 != 0 || image_shape[2] % 8 != 0) {
        throw ConfigError(std::string(who) + ": image size " + shape_str(image_shape) +
                          " must be divisible by 8");
    }
}

// Encoder: three stride-2 conv blocks down to [latent_channels, H/8, W/8].
// The latent head is linear: a relu'd (non-negative) latent cannot match the
// zero-mean unit-variance prior the normalization term pulls toward.
template <typename T = float>
Network<T> build_encoder(std::int64_t latent_channels, const Shape& image_shape) {
    require_divisible_by_8(image_shape, "build_encoder");
    const std::int64_t C = image_shape[0];
    NetworkSpec spec;
    spec.layers = {
        LayerSpec::conv2d(C, 16, 3, 2, 1),
        LayerSpec::relu(),
        LayerSpec::conv2d(16, 32, 3, 2, 1),
        LayerSpec::relu(),
        LayerSpec::conv2d(32, latent_channels, 3, 2, 1),
    };
    return Network<T>("E", std::move(spec));
}

// Decoder: mirror of the encoder with three stride-2 transposed-conv blocks,
// sigmoid output so every restored pixel lands in (0,1).
template <typename T = float>
Network<T> build_decoder(std::int64_t latent_channels, const Shape& image_shape) {
    require_divisible_by_8(image_shape, "build_decoder");
    const std::int64_t C = image_shape[0];
    NetworkSpec spec;
    spec.layers = {
        LayerSpec::tconv2d(latent_channels, 32, 4, 2, 1),
        LayerSpec::relu(),
        LayerSpec::tconv2d(32, 16, 4, 2, 1),
        LayerSpec::relu(),
        LayerSpec::tconv2d(16, C, 4, 2, 1),
        LayerSpec::sigmoid(),
    };
    return Network<T>("G", std::move(spec));
}

// Attack discriminator: one K-way prediction per example from the pooled
// latent map. The hidden layer matters: a purely linear probe on channel
// means is too weak to detect type information, which silently turns the
// invariance game into a no-op.
template <typename T = float>
Network<T> build_attack_discriminator(int num_attack_types, std::int64_t latent_channels) {
    if (num_attack_types < 1) throw ConfigError("build_attack_discriminator: K must be >= 1");
    NetworkSpec spec;
    spec.layers = {
        LayerSpec::global_avg_pool(),
        LayerSpec::dense(latent_channels, 32),
        LayerSpec::relu(),
        LayerSpec::dense(32, num_attack_types),
    };
    return Network<T>("DA", std::move(spec));
}

// Image discriminator: three conv-leaky-relu blocks, then a single sigmoid
// probability per example.
template <typename T = float>
Network<T> build_image_discriminator(const Shape& image_shape) {
    require_divisible_by_8(image_shape, "build_image_discriminator");
    const std::int64_t C = image_shape[0];
    const std::int64_t side = image_shape[1] / 8;
    NetworkSpec spec;
    spec.layers = {
        LayerSpec::conv2d(C, 16, 3, 2, 1),
        LayerSpec::leaky_relu(0.2),
        LayerSpec::conv2d(16, 32, 3, 2, 1),
        LayerSpec::leaky_relu(0.2),
        LayerSpec::conv2d(32, 64, 3, 2, 1),
        LayerSpec::leaky_relu(0.2),
        LayerSpec::flatten(),
        LayerSpec::dense(64 * side * side, 1),
        LayerSpec::sigmoid(),
    };
    return Network<T>("DI", std::move(spec));
}

// ---------------------------------------------------------------------------
// Inference helpers
// ---------------------------------------------------------------------------

template <typename T>
std::vector<int> predict(const Network<T>& net, const Tensor<T>& images) {
    const Tensor<T> logits = net.forward_eval(images);
    const std::int64_t B = logits.dim(0), D = logits.dim(1);
    std::vector<int> labels(static_cast<std::size_t>(B));
    for (std::int64_t n = 0; n < B; ++n) {
        const T* row = logits.data() + n * D;
        int best = 0;
        for (std::int64_t j = 1; j < D; ++j) {
            if (row[j] > row[best]) best = static_cast<int>(j);
        }
        labels[static_cast<std::size_t>(n)] = best;
    }
    return labels;
}

// Fraction of correctly classified examples; batched, parallel over chunks.
inline double accuracy(const Network<float>& net, const LabeledDataset& ds) {
    const std::int64_t n = ds.count();
    if (n == 0) throw ConfigError("accuracy: empty dataset");
    const std::int64_t chunk = 128;
    const std::int64_t n_chunks = (n + chunk - 1) / chunk;
    std::vector<std::int64_t> correct(static_cast<std::size_t>(n_chunks), 0);
    parallel_for(n_chunks, [&](std::int64_t cb, std::int64_t ce) {
        for (std::int64_t c = cb; c < ce; ++c) {
            const std::int64_t lo = c * chunk, hi = std::min(n, lo + chunk);
            std::vector<std::int64_t> idx;
            for (std::int64_t i = lo; i < hi; ++i) idx.push_back(i);
            const auto labels = predict(net, gather_images(ds.images, idx));
            for (std::size_t j = 0; j < labels.size(); ++j) {
                if (labels[j] == ds.labels[static_cast<std::size_t>(idx[j])]) ++correct[static_cast<std::size_t>(c)];
            }
        }
    });
    std::int64_t total = 0;
    for (std::int64_t c : correct) total += c;
    return static_cast<double>(total) / static_cast<double>(n);
}

}  // namespace arn
