#pragma once

// The deployed pre-processing map: restore an input by pushing it through the
// encoder and decoder. Eval-mode, deterministic, shape preserving. Not a
// projection: applying it twice need not be a fixed point.

#include "arn/network.hpp"
#include "arn/tensor.hpp"

namespace arn {

template <typename T>
Tensor<T> denoise(const Network<T>& encoder, const Network<T>& decoder, const Tensor<T>& images) {
    Tensor<T> restored = decoder.forward_eval(encoder.forward_eval(images));
    if (restored.shape() != images.shape()) {
        throw ConfigError("denoise changed shape " + shape_str(images.shape()) + " -> " +
                          shape_str(restored.shape()));
    }
    return restored;
}

template <typename T>
struct Defense {
    Network<T> encoder;
    Network<T> decoder;

    Tensor<T> operator()(const Tensor<T>& images) const { return denoise(encoder, decoder, images); }
};

}  // namespace arn
