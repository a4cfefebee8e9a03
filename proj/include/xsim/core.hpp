#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

namespace xsim {

//---------------------------------------------------------------------------//
// Errors
//---------------------------------------------------------------------------//

enum class ErrorKind {
  Usage,    // bad command line
  Config,   // invalid configuration value
  Format,   // malformed file
  Io,       // filesystem failure
  Recipe,   // recipe cannot be built/sampled
  Data,     // inconsistent data (e.g. single run for leave-one-run-out)
  Numeric,  // divergence, NaN
};

/// Base error for the library. `code()` is a short machine-readable token
/// printed by the CLI as ERROR[<code>].
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& what)
      : std::runtime_error(what), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

inline Error config_error(const std::string& field, const std::string& why) {
  return Error(ErrorKind::Config, "config", field + ": " + why);
}

inline Error format_error(const std::string& why) {
  return Error(ErrorKind::Format, "format", why);
}

//---------------------------------------------------------------------------//
// Grid
//---------------------------------------------------------------------------//

/// Row-major 2-D array. (x, y) = (column, row); row index grows downward.
template <typename T>
struct Grid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(std::size_t w, std::size_t h, T fill = T{})
      : width(w), height(h), data(w * h, fill) {}

  T& operator()(std::size_t x, std::size_t y) { return data[y * width + x]; }
  const T& operator()(std::size_t x, std::size_t y) const {
    return data[y * width + x];
  }
  std::size_t size() const noexcept { return data.size(); }

  friend bool operator==(const Grid&, const Grid&) = default;
};

//---------------------------------------------------------------------------//
// Seeds and counter-based random streams
//---------------------------------------------------------------------------//

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// SplitMix64 finalizer: full 64-bit avalanche.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Per-image seed: mix64(master XOR golden * index).
constexpr std::uint64_t image_seed(std::uint64_t master,
                                   std::uint64_t index) noexcept {
  return mix64(master ^ (kGoldenGamma * index));
}

/// FNV-1a, 64-bit. Used for stream labels and recipe digests.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Counter-based generator: the i-th draw is mix64(key + gamma * i), so a
/// stream is fully described by (key, counter) and two streams with
/// different keys never share state.
///
/// Streams are derived from a seed plus a label. Labels used in this
/// library:
///   "recipe"          recipe sampling for one image
///   "recipe.module.N" per-slot module seed (N = variant slot index)
///   "noise"           detector corruption; children "shot" and "read"
///   "lattice.spots"   global rotation of spot textures
///   "debye.points"    point cloud placement
///   "run.N"           run template sub-range draws
///   "patches"         patch sampling, "kmeans++" seeding, "svm.perm"
class Stream {
 public:
  using result_type = std::uint64_t;

  constexpr Stream() = default;
  constexpr explicit Stream(std::uint64_t key) : key_(key) {}
  constexpr Stream(std::uint64_t seed, std::string_view label)
      : key_(mix64(seed ^ fnv1a64(label))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  constexpr result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + kGoldenGamma * counter_);
  }

  Stream child(std::string_view label) const { return Stream(key_, label); }
  Stream child(std::uint64_t index) const {
    return Stream(mix64(key_ ^ mix64(index + 0x632BE59BD9B4E019ULL)));
  }

  std::uint64_t key() const noexcept { return key_; }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }
  /// Uniform integer in [lo, hi] (inclusive). Multiply-shift mapping.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
    const auto span = static_cast<unsigned __int128>(hi - lo + 1);
    const auto r = static_cast<unsigned __int128>((*this)());
    return lo + static_cast<std::int64_t>((r * span) >> 64);
  }
  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Poisson: sequential inversion below 30, rounded Gaussian above.
  std::int64_t poisson(double lambda) noexcept {
    if (!(lambda > 0.0)) return 0;
    if (lambda >= 30.0) {
      const double v = std::nearbyint(lambda + std::sqrt(lambda) * normal());
      return v < 0.0 ? 0 : static_cast<std::int64_t>(v);
    }
    const double u = uniform();
    double p = std::exp(-lambda);
    double cdf = p;
    std::int64_t k = 0;
    while (u > cdf && k < 1000) {
      ++k;
      p *= lambda / static_cast<double>(k);
      cdf += p;
    }
    return k;
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

//---------------------------------------------------------------------------//
// Parallel loop
//---------------------------------------------------------------------------//

inline unsigned default_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items are
/// claimed dynamically; callers write results into per-index slots so the
/// outcome does not depend on scheduling. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  const unsigned count =
      static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(count);
  for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace xsim
