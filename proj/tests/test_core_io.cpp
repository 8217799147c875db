#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "arn/rng.hpp"
#include "arn/serialize.hpp"
#include "arn/tensor.hpp"

using namespace arn;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
    static int counter = 0;
    return (fs::temp_directory_path() / ("arn_io_" + std::to_string(counter++) + "_" + name)).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("tensor shape and data must agree") {
    CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.0f, 2.0f}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor<float>({0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor<float>({2, -1}), std::invalid_argument);
}

TEST_CASE("tensor file layout is exactly header + dims + payload + crc") {
    const std::string path = temp_path("layout.arnt");
    save_tensor(Tensor<float>({2, 2}, {0.0f, 1.0f, 2.0f, 3.0f}), path);
    const std::string bytes = slurp(path);
    CHECK(bytes.size() == 40);  // 4 magic + 4 dtype + 4 ndim + 8 dims + 16 payload + 4 crc
    CHECK(bytes.substr(0, 4) == "ARNT");
    CHECK(bytes[4] == 1);  // f32 dtype code
    CHECK(bytes[8] == 2);  // ndim
}

TEST_CASE("tensor roundtrip is bitwise identity") {
    const std::string path = temp_path("rt.arnt");
    SeededRng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t rank = 1 + rng.below(4);
        Shape shape;
        for (std::size_t i = 0; i < rank; ++i) shape.push_back(1 + static_cast<std::int64_t>(rng.below(5)));
        Tensor<float> t(shape);
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-10, 10));
        save_tensor(t, path);
        CHECK(bits_equal(load_tensor<float>(path), t));
    }
    // double mode
    Tensor<double> d({3, 2}, {0.1, -0.2, 0.3, 1e-30, 1e30, 0.0});
    save_tensor(d, path);
    CHECK(bits_equal(load_tensor<double>(path), d));
}

TEST_CASE("identical input gives identical bytes") {
    const std::string p1 = temp_path("det1.arnt"), p2 = temp_path("det2.arnt");
    Tensor<float> t({4, 3}, std::vector<float>(12, 0.25f));
    save_tensor(t, p1);
    save_tensor(t, p2);
    CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("non-finite data refuses to serialize") {
    Tensor<float> t({2});
    t[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(save_tensor(t, temp_path("nan.arnt")), IoError);
}

TEST_CASE("corruption and truncation map to distinct error codes") {
    const std::string path = temp_path("corrupt.arnt");
    save_tensor(Tensor<float>({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}), path);
    std::string bytes = slurp(path);

    SUBCASE("flipped payload byte fails the checksum") {
        bytes[20] = static_cast<char>(bytes[20] ^ 0x40);
        spit(path, bytes);
        try {
            load_tensor<float>(path);
            FAIL("expected checksum error");
        } catch (const IoError& e) {
            CHECK(e.code() == IoCode::checksum_mismatch);
        }
    }
    SUBCASE("ndim promises more dims than the file holds") {
        bytes[8] = 3;  // dim list bleeds into the payload and runs past the end
        spit(path, bytes);
        try {
            load_tensor<float>(path);
            FAIL("expected truncation error");
        } catch (const IoError& e) {
            CHECK(e.code() == IoCode::truncated);
        }
    }
    SUBCASE("bad magic") {
        bytes[0] = 'X';
        spit(path, bytes);
        try {
            load_tensor<float>(path);
            FAIL("expected magic error");
        } catch (const IoError& e) {
            CHECK(e.code() == IoCode::bad_magic);
        }
    }
    SUBCASE("dtype mismatch") {
        try {
            load_tensor<double>(path);
            FAIL("expected dtype error");
        } catch (const IoError& e) {
            CHECK(e.code() == IoCode::bad_dtype);
        }
    }
}

TEST_CASE("missing file reports the path") {
    try {
        load_tensor<float>("/nonexistent/arn/blob.arnt");
        FAIL("expected io error");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("blob.arnt") != std::string::npos);
    }
}

TEST_CASE("checkpoint container roundtrip") {
    const std::string path = temp_path("ckpt.arnc");
    NamedTensors<float> named;
    named.emplace("E.0.w", Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6}));
    named.emplace("E.0.b", Tensor<float>({3}, {0.5f, -0.5f, 0.0f}));
    save_checkpoint(named, path);
    const auto loaded = load_checkpoint<float>(path);
    REQUIRE(loaded.size() == 2);
    CHECK(bits_equal(loaded.at("E.0.w"), named.at("E.0.w")));
    CHECK(bits_equal(loaded.at("E.0.b"), named.at("E.0.b")));
}

TEST_CASE("empty checkpoint is valid") {
    const std::string path = temp_path("empty.arnc");
    save_checkpoint(NamedTensors<float>{}, path);
    CHECK(load_checkpoint<float>(path).empty());
}

TEST_CASE("duplicate checkpoint names are rejected on load") {
    // containers built by this code cannot hold duplicates, so build the
    // bytes by hand: two entries both named "w"
    std::string rec;
    detail::encode_tensor(rec, Tensor<float>({1}, {1.0f}));
    std::string bytes = "ARNC";
    detail::put_u32(bytes, 2);
    for (int i = 0; i < 2; ++i) {
        detail::put_u16(bytes, 1);
        bytes += "w";
        bytes += rec;
    }
    const std::string path = temp_path("dup.arnc");
    spit(path, bytes);
    try {
        load_checkpoint<float>(path);
        FAIL("expected duplicate error");
    } catch (const IoError& e) {
        CHECK(e.code() == IoCode::duplicate_name);
    }
}

TEST_CASE("equal seeds draw equal sequences") {
    SeededRng a(1234), b(1234);
    for (int i = 0; i < 10000; ++i) REQUIRE(a.next_u64() == b.next_u64());

    SeededRng c(1234), d(1235);
    bool all_same = true;
    for (int i = 0; i < 100; ++i) all_same = all_same && (c.next_u64() == d.next_u64());
    CHECK_FALSE(all_same);
}

TEST_CASE("rng draws are well distributed and in range") {
    SeededRng rng(42);
    double sum = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(sum / 20000 == doctest::Approx(0.5).epsilon(0.02));

    double nsum = 0.0, nsq = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double g = rng.normal();
        nsum += g;
        nsq += g * g;
    }
    CHECK(nsum / 20000 == doctest::Approx(0.0).epsilon(0.05));
    CHECK(nsq / 20000 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("forked substreams are independent of parent draw position") {
    SeededRng a(7);
    SeededRng fork_before = a.fork(3);
    a.next_u64();
    a.next_u64();
    SeededRng fork_after = a.fork(3);
    CHECK(fork_before.next_u64() == fork_after.next_u64());
    CHECK(a.fork(3).next_u64() != a.fork(4).next_u64());
}
