#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sblab {

// Base error for everything the library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad shapes / malformed inputs to numeric ops.
struct ShapeError : Error {
    using Error::Error;
};

// Bad configuration (unknown keys, invalid values, missing files).
struct ConfigError : Error {
    using Error::Error;
};

// Numerical failure at runtime (NaN loss, non-normalizable target, F <= F0, ...).
struct NumericError : Error {
    using Error::Error;
};

uint64_t splitmix64(uint64_t x);

uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64(std::string_view s);
std::string hex64(uint64_t v);

// Named RNG streams. Every consumer of randomness draws from a stream derived
// from (root seed, stream id, counter), so replaying any (stream, counter)
// pair reproduces the exact draws without serializing engine state. That is
// what makes checkpoint resume bit-exact.
enum class Stream : uint64_t {
    init = 1,        // parameter initialization
    biases = 2,      // per-step attention bias draws
    data_order = 3,  // batch offset sampling
    nu_refresh = 4,  // ECD velocity refresh noise
    noise_z = 5,     // landscape noise variable
    mc = 6,          // Monte Carlo estimators
    misc = 7,
};

std::string_view stream_name(Stream s);

// mt19937_64 seeded through a splitmix64 chain over (root, stream, counter).
// Gaussians come from our own Box-Muller transform (pair-cached) so that the
// draw sequence is pinned by this code, not by the standard library's
// unspecified std::normal_distribution algorithm.
class Rng {
  public:
    Rng(uint64_t root_seed, Stream stream, uint64_t counter = 0);

    uint64_t raw();
    double uniform();       // [0, 1)
    double open_uniform();  // (0, 1]
    double normal();        // N(0, 1) via Box-Muller
    uint64_t integer(uint64_t n);  // uniform in [0, n)
    void fill_normal(std::span<double> out);

  private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);
std::vector<uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const void* data, size_t n);

}  // namespace sblab
