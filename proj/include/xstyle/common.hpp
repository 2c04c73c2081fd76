#pragma once

// Shared plumbing: error types, deterministic RNG, SHA-256 digests,
// little-endian binary I/O and a strip-parallel for loop.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace xstyle {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor/matrix dimension violations (divisibility, mismatched shapes).
class ShapeError : public Error {
public:
    using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

// Filesystem and codec failures.
class IoError : public Error {
public:
    using Error::Error;
};

// Malformed or incompatible binary containers.
class FormatError : public Error {
public:
    using Error::Error;
};

// Invalid configuration values.
class ConfigError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 core with Box-Muller normals; identical
// sequences for identical seeds on every platform, unlike <random>
// distributions whose output is implementation-defined.
// ---------------------------------------------------------------------------
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        return n == 0 ? 0 : next_u64() % n;
    }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// SHA-256, used as the content digest of binary containers.
// ---------------------------------------------------------------------------
class Sha256 {
public:
    Sha256() { reset(); }

    void reset() {
        h_ = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
              0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
        buffer_len_ = 0;
        total_len_ = 0;
    }

    void update(const void* data, std::size_t len) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        total_len_ += len;
        while (len > 0) {
            std::size_t take = std::min(len, std::size_t(64) - buffer_len_);
            std::memcpy(buffer_.data() + buffer_len_, p, take);
            buffer_len_ += take;
            p += take;
            len -= take;
            if (buffer_len_ == 64) {
                process_block(buffer_.data());
                buffer_len_ = 0;
            }
        }
    }

    std::array<std::uint8_t, 32> digest() const {
        Sha256 copy = *this;
        std::uint64_t bits = copy.total_len_ * 8;
        std::uint8_t pad = 0x80;
        copy.update(&pad, 1);
        const std::uint8_t zero = 0;
        while (copy.buffer_len_ != 56) copy.update(&zero, 1);
        std::uint8_t len_be[8];
        for (int i = 0; i < 8; ++i) len_be[i] = std::uint8_t(bits >> (56 - 8 * i));
        copy.update(len_be, 8);
        std::array<std::uint8_t, 32> out{};
        for (int i = 0; i < 8; ++i) {
            out[4 * i + 0] = std::uint8_t(copy.h_[i] >> 24);
            out[4 * i + 1] = std::uint8_t(copy.h_[i] >> 16);
            out[4 * i + 2] = std::uint8_t(copy.h_[i] >> 8);
            out[4 * i + 3] = std::uint8_t(copy.h_[i]);
        }
        return out;
    }

    std::string hex() const {
        static const char* k = "0123456789abcdef";
        auto d = digest();
        std::string s(64, '0');
        for (int i = 0; i < 32; ++i) {
            s[2 * i] = k[d[i] >> 4];
            s[2 * i + 1] = k[d[i] & 15];
        }
        return s;
    }

    static std::string hex_of(const void* data, std::size_t len) {
        Sha256 h;
        h.update(data, len);
        return h.hex();
    }

    static std::string to_hex(const std::array<std::uint8_t, 32>& d) {
        static const char* k = "0123456789abcdef";
        std::string s(64, '0');
        for (int i = 0; i < 32; ++i) {
            s[2 * i] = k[d[std::size_t(i)] >> 4];
            s[2 * i + 1] = k[d[std::size_t(i)] & 15];
        }
        return s;
    }

private:
    static std::uint32_t rotr(std::uint32_t x, int n) {
        return (x >> n) | (x << (32 - n));
    }

    void process_block(const std::uint8_t* p) {
        static constexpr std::uint32_t K[64] = {
            0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b,
            0x59f111f1, 0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01,
            0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7,
            0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc,
            0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152,
            0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
            0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
            0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
            0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819,
            0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116, 0x1e376c08,
            0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f,
            0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
            0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
        std::uint32_t w[64];
        for (int i = 0; i < 16; ++i)
            w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
                   (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
        for (int i = 16; i < 64; ++i) {
            std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3];
        std::uint32_t e = h_[4], f = h_[5], g = h_[6], h = h_[7];
        for (int i = 0; i < 64; ++i) {
            std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            std::uint32_t ch = (e & f) ^ (~e & g);
            std::uint32_t t1 = h + s1 + ch + K[i] + w[i];
            std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            std::uint32_t t2 = s0 + maj;
            h = g; g = f; f = e; e = d + t1;
            d = c; c = b; b = a; a = t1 + t2;
        }
        h_[0] += a; h_[1] += b; h_[2] += c; h_[3] += d;
        h_[4] += e; h_[5] += f; h_[6] += g; h_[7] += h;
    }

    std::array<std::uint32_t, 8> h_{};
    std::array<std::uint8_t, 64> buffer_{};
    std::size_t buffer_len_ = 0;
    std::uint64_t total_len_ = 0;
};

// ---------------------------------------------------------------------------
// Little-endian binary stream helpers. Containers are specified as
// little-endian on disk regardless of host order.
// ---------------------------------------------------------------------------
namespace detail {
inline bool host_is_little_endian() {
    const std::uint16_t v = 1;
    std::uint8_t b;
    std::memcpy(&b, &v, 1);
    return b == 1;
}
}  // namespace detail

class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& os) : os_(os) {}

    void bytes(const void* data, std::size_t len) {
        os_.write(static_cast<const char*>(data), std::streamsize(len));
        hash_.update(data, len);
    }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { scalar_le(v); }
    void u64(std::uint64_t v) { scalar_le(v); }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void str(const std::string& s) {
        u32(std::uint32_t(s.size()));
        bytes(s.data(), s.size());
    }
    void f32_array(const float* data, std::size_t n) {
        if (detail::host_is_little_endian()) {
            bytes(data, n * 4);
        } else {
            for (std::size_t i = 0; i < n; ++i) f32(data[i]);
        }
    }

    // Digest of everything written so far; appended as the container tail.
    std::array<std::uint8_t, 32> running_digest() const { return hash_.digest(); }
    void write_digest_tail() {
        auto d = running_digest();
        os_.write(reinterpret_cast<const char*>(d.data()), 32);
    }
    bool good() const { return os_.good(); }

private:
    template <typename T>
    void scalar_le(T v) {
        std::uint8_t b[sizeof(T)];
        for (std::size_t i = 0; i < sizeof(T); ++i)
            b[i] = std::uint8_t(std::uint64_t(v) >> (8 * i));
        bytes(b, sizeof(T));
    }

    std::ostream& os_;
    Sha256 hash_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::istream& is, std::string name = "stream")
        : is_(is), name_(std::move(name)) {}

    void bytes(void* data, std::size_t len) {
        is_.read(static_cast<char*>(data), std::streamsize(len));
        if (std::size_t(is_.gcount()) != len)
            throw FormatError(name_ + ": truncated (wanted " + std::to_string(len) +
                              " more bytes)");
        hash_.update(data, len);
    }
    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint32_t u32() { return scalar_le<std::uint32_t>(); }
    std::uint64_t u64() { return scalar_le<std::uint64_t>(); }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str(std::size_t max_len = 1 << 20) {
        std::uint32_t n = u32();
        if (n > max_len) throw FormatError(name_ + ": string length " + std::to_string(n));
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    void f32_array(float* data, std::size_t n) {
        if (detail::host_is_little_endian()) {
            bytes(data, n * 4);
        } else {
            for (std::size_t i = 0; i < n; ++i) data[i] = f32();
        }
    }

    std::array<std::uint8_t, 32> running_digest() const { return hash_.digest(); }

    // Reads the 32-byte digest tail and compares with the running hash.
    void check_digest_tail() {
        auto expect = hash_.digest();
        std::uint8_t stored[32];
        is_.read(reinterpret_cast<char*>(stored), 32);
        if (is_.gcount() != 32) throw FormatError(name_ + ": missing digest tail");
        if (std::memcmp(stored, expect.data(), 32) != 0)
            throw FormatError(name_ + ": content digest mismatch (corrupt file)");
    }

private:
    template <typename T>
    T scalar_le() {
        std::uint8_t b[sizeof(T)];
        bytes(b, sizeof(T));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= std::uint64_t(b[i]) << (8 * i);
        return T(v);
    }

    std::istream& is_;
    std::string name_;
    Sha256 hash_;
};

// Atomic file write: stream into <path>.tmp.<pid>, then rename over path.
template <typename Fn>
void write_file_atomic(const std::filesystem::path& path, Fn&& fill) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open for write: " + tmp.string());
        fill(os);
        os.flush();
        if (!os) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("rename failed for " + path.string() + ": " + ec.message());
    }
}

// ---------------------------------------------------------------------------
// Strip parallelism. Ranges are split into fixed per-thread chunks so the
// partitioning (and therefore every floating-point reduction that follows a
// fixed chunk order) is run-to-run deterministic. Thread count comes from
// XSTYLE_THREADS, defaulting to the hardware count capped at 8.
// ---------------------------------------------------------------------------
inline int thread_count() {
    static const int n = [] {
        if (const char* env = std::getenv("XSTYLE_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return std::min(v, 64);
        }
        unsigned hw = std::thread::hardware_concurrency();
        return int(hw == 0 ? 1 : std::min(hw, 8u));
    }();
    return n;
}

// fn(chunk_index, begin, end); chunk boundaries depend only on n and nthreads.
inline void parallel_chunks(std::int64_t n,
                            const std::function<void(int, std::int64_t, std::int64_t)>& fn) {
    int nt = thread_count();
    if (n <= 0) return;
    if (nt == 1 || n == 1) {
        fn(0, 0, n);
        return;
    }
    nt = int(std::min<std::int64_t>(nt, n));
    std::vector<std::thread> threads;
    threads.reserve(std::size_t(nt - 1));
    std::int64_t chunk = (n + nt - 1) / nt;
    for (int t = 1; t < nt; ++t) {
        std::int64_t b = t * chunk, e = std::min<std::int64_t>(n, (t + 1) * chunk);
        if (b >= e) break;
        threads.emplace_back([&fn, t, b, e] { fn(t, b, e); });
    }
    fn(0, 0, std::min<std::int64_t>(chunk, n));
    for (auto& th : threads) th.join();
}

inline std::string read_text_file(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw IoError("cannot open: " + p.string());
    std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return s;
}

}  // namespace xstyle
