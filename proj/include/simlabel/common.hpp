// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace simlabel {

using TagId = int;

enum class ErrorKind {
  InvalidArgument,
  NotFound,
  Conflict,
  Corrupt,
  Io,
  Diverged,
  StaleIndex,
  Unavailable,
};

/// Every failure surfaced by the library. The kind drives HTTP status
/// mapping in the service and exit codes in the CLI.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::InvalidArgument, what);
}

// ---------------------------------------------------------------------------
// Hashing and seeding

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent stream seed from a base seed and a list of salts.
template <typename... Salts>
std::uint64_t derive_seed(std::uint64_t base, Salts... salts) {
  std::uint64_t h = splitmix64(base);
  ((h = splitmix64(h ^ static_cast<std::uint64_t>(salts))), ...);
  return h;
}

// ---------------------------------------------------------------------------
// Random helpers. The standard distributions are implementation-defined, so
// everything that must be reproducible goes through these.

using Rng = std::mt19937_64;

inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_real(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

/// Index drawn proportionally to non-negative weights. Returns weights.size()
/// when every weight is zero.
inline std::size_t weighted_index(Rng& rng, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (total <= 0.0) return weights.size();
  double x = uniform01(rng) * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    if (x < weights[i]) return i;
    x -= weights[i];
  }
  for (std::size_t i = weights.size(); i > 0; --i) {
    if (weights[i - 1] > 0.0) return i - 1;
  }
  return weights.size();
}

// ---------------------------------------------------------------------------
// Small set helpers over sorted, duplicate-free tag vectors.

inline std::vector<TagId> normalized(std::vector<TagId> tags) {
  std::sort(tags.begin(), tags.end());
  tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
  return tags;
}

inline std::size_t intersection_size(const std::vector<TagId>& a,
                                     const std::vector<TagId>& b) {
  std::size_t n = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++n;
      ++ia;
      ++ib;
    }
  }
  return n;
}

inline bool contains(const std::vector<TagId>& sorted, TagId t) {
  return std::binary_search(sorted.begin(), sorted.end(), t);
}

// ---------------------------------------------------------------------------
// File helpers

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary sibling and renames over the target, so readers
/// never see a half-written file.
inline void write_file_atomic(const std::filesystem::path& path,
                              std::string_view data) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) fail(ErrorKind::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// ceil(fraction * total) that tolerates representation error in the product
/// (0.15 * 20 must give 3, not 4).
inline std::size_t ceil_fraction(double fraction, std::size_t total) {
  const double x = fraction * static_cast<double>(total);
  const double r = std::round(x);
  if (std::abs(x - r) < 1e-9) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(x));
}

}  // namespace simlabel
