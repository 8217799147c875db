#pragma once

// Natural datasets: a synthetic glyph classification set for desk-scale runs
// and an IDX (MNIST layout) reader for the extended runs.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "arn/errors.hpp"
#include "arn/rng.hpp"
#include "arn/tensor.hpp"

namespace arn {

enum class Split { train, test };

struct LabeledDataset {
    Tensor<float> images;         // [N,C,H,W], values in [0,1]
    std::vector<int> labels;      // length N, values in [0, num_classes)
    int num_classes = 0;
    Split split = Split::train;

    std::int64_t count() const { return images.shape().empty() ? 0 : images.dim(0); }

    void validate() const {
        if (images.rank() != 4) throw ConfigError("dataset images must be rank 4, got " + shape_str(images.shape()));
        if (static_cast<std::int64_t>(labels.size()) != images.dim(0)) {
            throw ConfigError("dataset label count does not match image count");
        }
        std::vector<int> per_class(static_cast<std::size_t>(num_classes), 0);
        for (int y : labels) {
            if (y < 0 || y >= num_classes) throw ConfigError("label out of range");
            ++per_class[static_cast<std::size_t>(y)];
        }
        if (split == Split::train) {
            for (int c = 0; c < num_classes; ++c) {
                if (per_class[static_cast<std::size_t>(c)] == 0) {
                    throw ConfigError("train split has no examples of class " + std::to_string(c));
                }
            }
        }
        for (std::int64_t i = 0; i < images.size(); ++i) {
            const float v = images[i];
            if (!(v >= 0.0f && v <= 1.0f)) throw ConfigError("pixel outside [0,1]");
        }
    }
};

// Ten fixed 8x8 glyph stencils, one per class, each row a bitmask. Rendering
// upscales by nearest neighbor and adds clipped Gaussian noise.
inline const std::array<std::array<std::uint8_t, 8>, 10>& glyph_stencils() {
    static const std::array<std::array<std::uint8_t, 8>, 10> stencils = {{
        {0x3C, 0x66, 0x6E, 0x76, 0x66, 0x66, 0x3C, 0x00},
        {0x18, 0x38, 0x18, 0x18, 0x18, 0x18, 0x7E, 0x00},
        {0x3C, 0x66, 0x06, 0x0C, 0x18, 0x30, 0x7E, 0x00},
        {0x3C, 0x66, 0x06, 0x1C, 0x06, 0x66, 0x3C, 0x00},
        {0x0C, 0x1C, 0x3C, 0x6C, 0x7E, 0x0C, 0x0C, 0x00},
        {0x7E, 0x60, 0x7C, 0x06, 0x06, 0x66, 0x3C, 0x00},
        {0x1C, 0x30, 0x60, 0x7C, 0x66, 0x66, 0x3C, 0x00},
        {0x7E, 0x06, 0x0C, 0x18, 0x30, 0x30, 0x30, 0x00},
        {0x3C, 0x66, 0x66, 0x3C, 0x66, 0x66, 0x3C, 0x00},
        {0x3C, 0x66, 0x66, 0x3E, 0x06, 0x0C, 0x38, 0x00},
    }};
    return stencils;
}

inline Tensor<float> render_glyph(int cls, std::int64_t size) {
    const auto& rows = glyph_stencils().at(static_cast<std::size_t>(cls));
    Tensor<float> img({1, size, size});
    for (std::int64_t y = 0; y < size; ++y) {
        const std::int64_t sy = y * 8 / size;
        const std::uint8_t row = rows[static_cast<std::size_t>(sy)];
        for (std::int64_t x = 0; x < size; ++x) {
            const std::int64_t sx = x * 8 / size;
            const bool on = (row >> (7 - sx)) & 1u;
            img[y * size + x] = on ? 1.0f : 0.0f;
        }
    }
    return img;
}

inline LabeledDataset make_synthetic(int num_classes, std::int64_t n_per_class, std::int64_t size,
                                     double noise_sigma, SeededRng& rng, Split split = Split::train) {
    if (num_classes < 1 || num_classes > 10) throw ConfigError("num_classes must be in [1,10]");
    if (size < 8) throw ConfigError("size must be >= 8");
    const std::int64_t n = static_cast<std::int64_t>(num_classes) * n_per_class;
    LabeledDataset ds;
    ds.num_classes = num_classes;
    ds.split = split;
    ds.images = Tensor<float>({n, 1, size, size});
    ds.labels.resize(static_cast<std::size_t>(n));
    std::int64_t idx = 0;
    for (int c = 0; c < num_classes; ++c) {
        const Tensor<float> glyph = render_glyph(c, size);
        for (std::int64_t i = 0; i < n_per_class; ++i, ++idx) {
            ds.labels[static_cast<std::size_t>(idx)] = c;
            float* out = ds.images.data() + idx * size * size;
            for (std::int64_t p = 0; p < size * size; ++p) {
                float v = glyph[p];
                if (noise_sigma > 0.0) v += static_cast<float>(rng.normal(0.0, noise_sigma));
                out[p] = std::min(1.0f, std::max(0.0f, v));
            }
        }
    }
    ds.validate();
    return ds;
}

namespace detail {
inline std::uint32_t read_be_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError(IoCode::truncated, path + ": truncated IDX header");
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}
}  // namespace detail

// IDX pair loader (big-endian magic + dims + ubyte payload). Pixels are
// scaled from {0..255} to [0,1]; output shape [N,1,rows,cols].
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                               Split split = Split::train) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw IoError(IoCode::io_failure, "cannot open " + images_path);
    if (detail::read_be_u32(imgs, images_path) != 0x00000803u) {
        throw IoError(IoCode::bad_magic, images_path + ": expected IDX image magic 0x00000803");
    }
    const std::int64_t n = detail::read_be_u32(imgs, images_path);
    const std::int64_t rows = detail::read_be_u32(imgs, images_path);
    const std::int64_t cols = detail::read_be_u32(imgs, images_path);

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw IoError(IoCode::io_failure, "cannot open " + labels_path);
    if (detail::read_be_u32(labs, labels_path) != 0x00000801u) {
        throw IoError(IoCode::bad_magic, labels_path + ": expected IDX label magic 0x00000801");
    }
    const std::int64_t n_labels = detail::read_be_u32(labs, labels_path);
    if (n_labels != n) {
        throw IoError(IoCode::bad_value, "IDX count mismatch: " + std::to_string(n) + " images vs " +
                                             std::to_string(n_labels) + " labels");
    }

    LabeledDataset ds;
    ds.split = split;
    ds.images = Tensor<float>({n, 1, rows, cols});
    ds.labels.resize(static_cast<std::size_t>(n));
    std::vector<unsigned char> buf(static_cast<std::size_t>(rows * cols));
    int max_label = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!imgs) throw IoError(IoCode::truncated, images_path + ": truncated pixel data");
        float* out = ds.images.data() + i * rows * cols;
        for (std::size_t p = 0; p < buf.size(); ++p) out[p] = static_cast<float>(buf[p]) / 255.0f;
        unsigned char y = 0;
        labs.read(reinterpret_cast<char*>(&y), 1);
        if (!labs) throw IoError(IoCode::truncated, labels_path + ": truncated label data");
        ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(y);
        max_label = std::max(max_label, static_cast<int>(y));
    }
    ds.num_classes = max_label + 1;
    ds.validate();
    return ds;
}

struct Batch {
    Tensor<float> images;      // [B,C,H,W]
    std::vector<int> labels;   // length B
    std::vector<std::int64_t> indices;
};

inline Tensor<float> gather_images(const Tensor<float>& images, const std::vector<std::int64_t>& idx) {
    const std::int64_t per = images.size() / images.dim(0);
    Shape s = images.shape();
    s[0] = static_cast<std::int64_t>(idx.size());
    Tensor<float> out(s);
    for (std::size_t b = 0; b < idx.size(); ++b) {
        std::copy_n(images.data() + idx[b] * per, per, out.data() + static_cast<std::int64_t>(b) * per);
    }
    return out;
}

// One epoch of mini-batch index lists: a seeded permutation (or the identity
// order), last partial batch dropped.
inline std::vector<std::vector<std::int64_t>> epoch_batches(std::int64_t n, std::int64_t batch_size,
                                                            SeededRng& rng, bool shuffle) {
    if (batch_size < 1 || batch_size > n) throw ConfigError("batch_size must be in [1, N]");
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    if (shuffle) rng.shuffle(order);
    const std::int64_t n_batches = n / batch_size;
    std::vector<std::vector<std::int64_t>> batches(static_cast<std::size_t>(n_batches));
    for (std::int64_t b = 0; b < n_batches; ++b) {
        batches[static_cast<std::size_t>(b)].assign(order.begin() + b * batch_size,
                                                    order.begin() + (b + 1) * batch_size);
    }
    return batches;
}

inline Batch make_batch(const LabeledDataset& ds, const std::vector<std::int64_t>& idx) {
    Batch batch;
    batch.images = gather_images(ds.images, idx);
    batch.indices = idx;
    batch.labels.reserve(idx.size());
    for (std::int64_t i : idx) batch.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
    return batch;
}

}  // namespace arn
