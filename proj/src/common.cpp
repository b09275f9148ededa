#include "sblab/common.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace sblab {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

uint64_t fnv1a64(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = 14695981039346656037ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    for (int shift = 60; shift >= 0; shift -= 4) os << ((v >> shift) & 0xF);
    return os.str();
}

std::string_view stream_name(Stream s) {
    switch (s) {
        case Stream::init: return "init";
        case Stream::biases: return "biases";
        case Stream::data_order: return "data_order";
        case Stream::nu_refresh: return "nu_refresh";
        case Stream::noise_z: return "noise_z";
        case Stream::mc: return "mc";
        case Stream::misc: return "misc";
    }
    return "unknown";
}

Rng::Rng(uint64_t root_seed, Stream stream, uint64_t counter) {
    uint64_t x = splitmix64(root_seed);
    x = splitmix64(x ^ (0xA5A5A5A5A5A5A5A5ULL * static_cast<uint64_t>(stream)));
    x = splitmix64(x ^ (0xC2B2AE3D27D4EB4FULL * counter));
    eng_.seed(x);
}

uint64_t Rng::raw() { return eng_(); }

double Rng::uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
}

double Rng::open_uniform() {
    return (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = open_uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

uint64_t Rng::integer(uint64_t n) {
    if (n == 0) throw Error("Rng::integer: n must be positive");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
        v = eng_();
    } while (v >= limit);
    return v % n;
}

void Rng::fill_normal(std::span<double> out) {
    for (auto& v : out) v = normal();
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file for reading: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, std::string_view content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open file for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("short write: " + path);
}

std::vector<uint8_t> read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw ConfigError("cannot open file for reading: " + path);
    auto n = static_cast<size_t>(in.tellg());
    in.seekg(0);
    std::vector<uint8_t> buf(n);
    if (n > 0) in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (!in) throw Error("short read: " + path);
    return buf;
}

void write_binary_file(const std::string& path, const void* data, size_t n) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open file for writing: " + path);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw Error("short write: " + path);
}

}  // namespace sblab
