#pragma once

// Bit-exact tensor and checkpoint persistence.
//
// ARNT tensor record (all integers little-endian):
//   "ARNT" | dtype u32 (1=f32, 2=f64) | ndim u32 | ndim x u32 dims
//   | payload row-major | CRC32 u32 of payload
//
// ARNC checkpoint container:
//   "ARNC" | count u32 | count x (name_len u16, UTF-8 name, ARNT record)

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "arn/errors.hpp"
#include "arn/tensor.hpp"

namespace arn {

namespace detail {

inline constexpr std::array<std::uint32_t, 256> make_crc32_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) {
            c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        }
        table[i] = c;
    }
    return table;
}

inline constexpr auto kCrc32Table = make_crc32_table();

inline std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t crc = 0) {
    const auto* p = static_cast<const unsigned char*>(data);
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) {
        crc = kCrc32Table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    }
    return crc ^ 0xFFFFFFFFu;
}

template <typename T>
constexpr std::uint32_t dtype_code() {
    if constexpr (std::is_same_v<T, float>) {
        return 1u;
    } else {
        static_assert(std::is_same_v<T, double>, "unsupported dtype");
        return 2u;
    }
}

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
void put_scalar(std::string& out, T v) {
    static_assert(std::is_floating_point_v<T>);
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    const Bits b = std::bit_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((b >> (8 * i)) & 0xFF));
}

// Sequential reader over an in-memory buffer with truncation checks.
class Reader {
public:
    Reader(const unsigned char* data, std::size_t len, std::string origin)
        : data_(data), len_(len), origin_(std::move(origin)) {}

    const unsigned char* take(std::size_t n) {
        if (pos_ + n > len_) {
            throw IoError(IoCode::truncated, origin_ + ": truncated (need " + std::to_string(n) +
                                                 " bytes at offset " + std::to_string(pos_) + ")");
        }
        const unsigned char* p = data_ + pos_;
        pos_ += n;
        return p;
    }

    std::uint16_t u16() {
        const unsigned char* p = take(2);
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }

    std::uint32_t u32() {
        const unsigned char* p = take(4);
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }

    bool done() const { return pos_ == len_; }
    const std::string& origin() const { return origin_; }

private:
    const unsigned char* data_;
    std::size_t len_;
    std::size_t pos_ = 0;
    std::string origin_;
};

template <typename T>
void encode_tensor(std::string& out, const Tensor<T>& t) {
    if (t.shape().empty()) {
        throw IoError(IoCode::bad_value, "cannot serialize rank-0 tensor");
    }
    if (!t.all_finite()) {
        throw IoError(IoCode::bad_value, "cannot serialize tensor with non-finite values");
    }
    out += "ARNT";
    put_u32(out, dtype_code<T>());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));

    std::string payload;
    payload.reserve(sizeof(T) * static_cast<std::size_t>(t.size()));
    for (std::int64_t i = 0; i < t.size(); ++i) put_scalar(payload, t[i]);
    out += payload;
    put_u32(out, crc32(payload.data(), payload.size()));
}

template <typename T>
Tensor<T> decode_tensor(Reader& r) {
    const unsigned char* magic = r.take(4);
    if (std::memcmp(magic, "ARNT", 4) != 0) {
        throw IoError(IoCode::bad_magic, r.origin() + ": bad tensor magic");
    }
    const std::uint32_t dtype = r.u32();
    if (dtype != dtype_code<T>()) {
        throw IoError(IoCode::bad_dtype, r.origin() + ": dtype code " + std::to_string(dtype) +
                                             " does not match requested scalar type");
    }
    const std::uint32_t ndim = r.u32();
    Shape shape(ndim);
    for (std::uint32_t i = 0; i < ndim; ++i) {
        const std::uint32_t d = r.u32();
        if (d == 0) throw IoError(IoCode::bad_value, r.origin() + ": zero dimension");
        shape[i] = static_cast<std::int64_t>(d);
    }
    const std::size_t count = static_cast<std::size_t>(numel(shape));
    const unsigned char* payload = r.take(count * sizeof(T));
    const std::uint32_t stored_crc = r.u32();
    const std::uint32_t actual_crc = crc32(payload, count * sizeof(T));
    if (stored_crc != actual_crc) {
        throw IoError(IoCode::checksum_mismatch, r.origin() + ": payload checksum mismatch");
    }
    std::vector<T> data(count);
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (std::size_t i = 0; i < count; ++i) {
        Bits b = 0;
        for (std::size_t k = 0; k < sizeof(T); ++k) {
            b |= static_cast<Bits>(payload[i * sizeof(T) + k]) << (8 * k);
        }
        data[i] = std::bit_cast<T>(b);
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoCode::io_failure, "cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError(IoCode::io_failure, "read failed on " + path);
    return bytes;
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoCode::io_failure, "cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError(IoCode::io_failure, "write failed on " + path);
}

}  // namespace detail

template <typename T>
void save_tensor(const Tensor<T>& blob, const std::string& path) {
    std::string out;
    detail::encode_tensor(out, blob);
    detail::write_file(path, out);
}

template <typename T = float>
Tensor<T> load_tensor(const std::string& path) {
    const auto bytes = detail::read_file(path);
    detail::Reader r(bytes.data(), bytes.size(), path);
    Tensor<T> t = detail::decode_tensor<T>(r);
    if (!r.done()) throw IoError(IoCode::bad_value, path + ": trailing bytes after tensor record");
    return t;
}

// Checkpoints are ordered name -> tensor maps; std::map keeps the container
// byte-deterministic for identical contents.
template <typename T = float>
using NamedTensors = std::map<std::string, Tensor<T>>;

template <typename T>
void save_checkpoint(const NamedTensors<T>& named, const std::string& path) {
    std::string out = "ARNC";
    detail::put_u32(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, tensor] : named) {
        if (name.size() > 0xFFFF) throw IoError(IoCode::bad_value, "checkpoint entry name too long");
        detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        detail::encode_tensor(out, tensor);
    }
    detail::write_file(path, out);
}

template <typename T = float>
NamedTensors<T> load_checkpoint(const std::string& path) {
    const auto bytes = detail::read_file(path);
    detail::Reader r(bytes.data(), bytes.size(), path);
    const unsigned char* magic = r.take(4);
    if (std::memcmp(magic, "ARNC", 4) != 0) {
        throw IoError(IoCode::bad_magic, path + ": bad checkpoint magic");
    }
    const std::uint32_t count = r.u32();
    NamedTensors<T> named;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16();
        const unsigned char* name_bytes = r.take(name_len);
        std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
        if (named.count(name)) {
            throw IoError(IoCode::duplicate_name, path + ": duplicate checkpoint entry '" + name + "'");
        }
        named.emplace(std::move(name), detail::decode_tensor<T>(r));
    }
    if (!r.done()) throw IoError(IoCode::bad_value, path + ": trailing bytes after checkpoint");
    return named;
}

}  // namespace arn
