// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <concepts>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <zlib.h>

#include "simlabel/common.hpp"
#include "simlabel/tripletgen.hpp"

namespace simlabel {

// ---------------------------------------------------------------------------
// Tokenizer: lowercase, split on non-alphanumerics, hash each run into [0, V).

struct TokenizerConfig {
  std::uint32_t vocab_size = 1u << 15;
  std::uint64_t hash_seed = 0x51a1be1ULL;
  bool lowercase = true;

  void validate() const {
    require(vocab_size >= (1u << 10) && std::has_single_bit(vocab_size),
            "vocab_size must be a power of two >= 1024");
  }
  bool operator==(const TokenizerConfig&) const = default;
};

inline std::uint32_t hash_token(const TokenizerConfig& cfg,
                                std::string_view token) {
  const std::uint64_t h = splitmix64(fnv1a64(token) ^ cfg.hash_seed);
  return static_cast<std::uint32_t>(h & (cfg.vocab_size - 1));
}

/// Bytes >= 0x80 count as word characters so UTF-8 words stay whole.
inline std::vector<std::uint32_t> tokenize(const TokenizerConfig& cfg,
                                           std::string_view text) {
  std::vector<std::uint32_t> out;
  std::string run;
  auto flush = [&] {
    if (!run.empty()) {
      out.push_back(hash_token(cfg, run));
      run.clear();
    }
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      run.push_back(cfg.lowercase && c < 0x80
                        ? static_cast<char>(std::tolower(c))
                        : ch);
    } else {
      flush();
    }
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

struct Embedding {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t k) const { return values[k]; }
  bool operator==(const Embedding&) const = default;
};

/// Bag-of-tokens encoder: mean of embedding rows, affine projection, tanh.
/// All blocks are row-major.
struct EncoderParams {
  std::uint32_t vocab_size = 0;
  std::uint32_t dim = 0;
  std::vector<double> table;   // vocab_size x dim
  std::vector<double> weight;  // dim x dim
  std::vector<double> bias;    // dim

  /// Uniform(-a, a) table with a = sqrt(6 / (V + d)); projection is the
  /// identity plus small uniform noise; zero bias.
  static EncoderParams init(std::uint32_t vocab_size, std::uint32_t dim,
                            std::uint64_t seed) {
    require(dim >= 1, "embedding dimension must be positive");
    EncoderParams p;
    p.vocab_size = vocab_size;
    p.dim = dim;
    Rng rng(derive_seed(seed, 0x1417ULL));
    const double a = std::sqrt(6.0 / (static_cast<double>(vocab_size) + dim));
    p.table.resize(static_cast<std::size_t>(vocab_size) * dim);
    for (auto& x : p.table) x = uniform_real(rng, -a, a);
    p.weight.assign(static_cast<std::size_t>(dim) * dim, 0.0);
    for (std::uint32_t r = 0; r < dim; ++r) {
      for (std::uint32_t c = 0; c < dim; ++c) {
        p.weight[r * dim + c] =
            (r == c ? 1.0 : 0.0) + uniform_real(rng, -0.01, 0.01);
      }
    }
    p.bias.assign(dim, 0.0);
    return p;
  }

  void check_shapes() const {
    require(table.size() == static_cast<std::size_t>(vocab_size) * dim &&
                weight.size() == static_cast<std::size_t>(dim) * dim &&
                bias.size() == dim,
            "encoder parameter shapes inconsistent with (V, d)");
  }

  void check_finite() const {
    auto finite = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(),
                         [](double x) { return std::isfinite(x); });
    };
    if (!finite(table) || !finite(weight) || !finite(bias)) {
      fail(ErrorKind::Diverged, "non-finite encoder parameter");
    }
  }

  /// Content hash; identifies a checkpoint for index staleness checks.
  std::uint64_t fingerprint() const {
    std::uint64_t h = derive_seed(vocab_size, dim);
    auto mix = [&h](const std::vector<double>& v) {
      for (double x : v) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(x));
    };
    mix(table);
    mix(weight);
    mix(bias);
    return h;
  }

  bool operator==(const EncoderParams&) const = default;
};

namespace detail {

struct Forward {
  std::vector<double> pooled;  // mean of table rows
  std::vector<double> out;     // tanh(W pooled + b)
};

inline Forward forward(const EncoderParams& p,
                       std::span<const std::uint32_t> tokens) {
  const std::size_t d = p.dim;
  Forward f{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  if (tokens.empty()) return f;
  for (std::uint32_t t : tokens) {
    const double* row = &p.table[static_cast<std::size_t>(t) * d];
    for (std::size_t k = 0; k < d; ++k) f.pooled[k] += row[k];
  }
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (auto& x : f.pooled) x *= inv;
  for (std::size_t r = 0; r < d; ++r) {
    double z = p.bias[r];
    const double* w = &p.weight[r * d];
    for (std::size_t c = 0; c < d; ++c) z += w[c] * f.pooled[c];
    f.out[r] = std::tanh(z);
  }
  return f;
}

}  // namespace detail

inline Embedding embed_tokens(const EncoderParams& params,
                              std::span<const std::uint32_t> tokens) {
  return {detail::forward(params, tokens).out};
}

/// Empty texts map to the zero vector.
inline Embedding embed(const EncoderParams& params, const TokenizerConfig& cfg,
                       std::string_view text) {
  params.check_shapes();
  auto tokens = tokenize(cfg, text);
  for (auto t : tokens) {
    if (t >= params.vocab_size) {
      fail(ErrorKind::InvalidArgument, "token index exceeds vocabulary");
    }
  }
  auto e = embed_tokens(params, tokens);
  for (double x : e.values) {
    if (!std::isfinite(x)) {
      fail(ErrorKind::Diverged, "non-finite embedding; parameters are corrupt");
    }
  }
  return e;
}

/// Single pass over the coordinates; 0 when either norm is below 1e-12.
inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    fail(ErrorKind::InvalidArgument,
         "cosine dimension mismatch: " + std::to_string(u.size()) + " vs " +
             std::to_string(v.size()));
  }
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    dot += u[k] * v[k];
    uu += u[k] * u[k];
    vv += v[k] * v[k];
  }
  const double nu = std::sqrt(uu);
  const double nv = std::sqrt(vv);
  if (nu < 1e-12 || nv < 1e-12) return 0.0;
  return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

inline double cosine(const Embedding& u, const Embedding& v) {
  return cosine(std::span<const double>(u.values),
                std::span<const double>(v.values));
}

/// Anything that maps text to a fixed-size embedding and can identify its
/// own parameters. Inference is written against this.
template <typename E>
concept TextEncoder = requires(const E& e, std::string_view text) {
  { e.embed(text) } -> std::same_as<Embedding>;
  { e.fingerprint() } -> std::convertible_to<std::uint64_t>;
};

/// Immutable, cheaply copyable encoder over shared parameters.
class HashingEncoder {
 public:
  HashingEncoder(std::shared_ptr<const EncoderParams> params,
                 TokenizerConfig tokenizer)
      : params_(std::move(params)),
        tokenizer_(tokenizer),
        fingerprint_(params_->fingerprint()) {
    params_->check_shapes();
    require(params_->vocab_size == tokenizer_.vocab_size,
            "encoder vocabulary does not match tokenizer");
  }
  HashingEncoder(EncoderParams params, TokenizerConfig tokenizer)
      : HashingEncoder(std::make_shared<const EncoderParams>(std::move(params)),
                       tokenizer) {}

  Embedding embed(std::string_view text) const {
    return simlabel::embed(*params_, tokenizer_, text);
  }
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }
  const EncoderParams& params() const noexcept { return *params_; }
  const TokenizerConfig& tokenizer() const noexcept { return tokenizer_; }

 private:
  std::shared_ptr<const EncoderParams> params_;
  TokenizerConfig tokenizer_;
  std::uint64_t fingerprint_;
};

// ---------------------------------------------------------------------------
// Objective: mean over the batch of (cos(cbd, itd) - score)^2

/// Sparse gradient: only table rows touched by the batch are present.
struct Gradients {
  std::map<std::uint32_t, std::vector<double>> table_rows;
  std::vector<double> weight;
  std::vector<double> bias;
};

namespace detail {

struct EncodedTriplet {
  std::span<const std::uint32_t> cbd;
  std::span<const std::uint32_t> itd;
  double score;
};

/// Tokenizes each distinct text once.
class TokenCache {
 public:
  explicit TokenCache(const TokenizerConfig& cfg) : cfg_(cfg) {}

  std::span<const std::uint32_t> get(const std::string& text) {
    auto it = cache_.find(text);
    if (it == cache_.end()) it = cache_.emplace(text, tokenize(cfg_, text)).first;
    return it->second;
  }

  std::vector<EncodedTriplet> encode(std::span<const Triplet> batch) {
    std::vector<EncodedTriplet> out;
    out.reserve(batch.size());
    for (const auto& t : batch) out.push_back({get(t.cbd), get(t.itd), t.score});
    return out;
  }

 private:
  TokenizerConfig cfg_;
  std::unordered_map<std::string, std::vector<std::uint32_t>> cache_;
};

inline double pair_cosine(const EncoderParams& p, const EncodedTriplet& t) {
  const auto a = forward(p, t.cbd);
  const auto b = forward(p, t.itd);
  return cosine(a.out, b.out);
}

inline double encoded_loss(const EncoderParams& p,
                           std::span<const EncodedTriplet> batch) {
  double sum = 0.0;
  for (const auto& t : batch) {
    const double diff = pair_cosine(p, t) - t.score;
    sum += diff * diff;
  }
  return sum / static_cast<double>(batch.size());
}

inline void backward_side(const EncoderParams& p,
                          std::span<const std::uint32_t> tokens,
                          const Forward& f, std::span<const double> d_out,
                          Gradients& g) {
  const std::size_t d = p.dim;
  std::vector<double> dz(d);
  for (std::size_t r = 0; r < d; ++r) {
    dz[r] = d_out[r] * (1.0 - f.out[r] * f.out[r]);
  }
  std::vector<double> d_pooled(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    g.bias[r] += dz[r];
    double* gw = &g.weight[r * d];
    const double* w = &p.weight[r * d];
    for (std::size_t c = 0; c < d; ++c) {
      gw[c] += dz[r] * f.pooled[c];
      d_pooled[c] += w[c] * dz[r];
    }
  }
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (std::uint32_t t : tokens) {
    auto& row = g.table_rows[t];
    if (row.empty()) row.assign(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) row[k] += d_pooled[k] * inv;
  }
}

inline Gradients encoded_gradients(const EncoderParams& p,
                                   std::span<const EncodedTriplet> batch,
                                   double* loss_out = nullptr) {
  const std::size_t d = p.dim;
  Gradients g;
  g.weight.assign(d * d, 0.0);
  g.bias.assign(d, 0.0);
  const double scale = 2.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  std::vector<double> da(d), db(d);
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& t = batch[n];
    const auto fa = forward(p, t.cbd);
    const auto fb = forward(p, t.itd);
    double dot = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      dot += fa.out[k] * fb.out[k];
      aa += fa.out[k] * fa.out[k];
      bb += fb.out[k] * fb.out[k];
    }
    const double na = std::sqrt(aa);
    const double nb = std::sqrt(bb);
    const bool degenerate = na < 1e-12 || nb < 1e-12;
    const double cos = degenerate ? 0.0 : std::clamp(dot / (na * nb), -1.0, 1.0);
    const double diff = cos - t.score;
    loss += diff * diff;
    if (!std::isfinite(diff)) {
      fail(ErrorKind::Diverged,
           "non-finite similarity at batch position " + std::to_string(n));
    }
    if (degenerate) continue;
    const double coef = scale * diff;
    const double inv_ab = 1.0 / (na * nb);
    for (std::size_t k = 0; k < d; ++k) {
      da[k] = coef * (fb.out[k] * inv_ab - cos * fa.out[k] / aa);
      db[k] = coef * (fa.out[k] * inv_ab - cos * fb.out[k] / bb);
    }
    backward_side(p, t.cbd, fa, da, g);
    backward_side(p, t.itd, fb, db, g);
  }
  if (loss_out) *loss_out = loss / static_cast<double>(batch.size());
  return g;
}

}  // namespace detail

inline double batch_loss(const EncoderParams& params, const TokenizerConfig& cfg,
                         std::span<const Triplet> batch) {
  require(!batch.empty(), "batch_loss needs a nonempty batch");
  params.check_shapes();
  detail::TokenCache cache(cfg);
  const auto enc = cache.encode(batch);
  return detail::encoded_loss(params, enc);
}

/// Analytic gradient of batch_loss.
inline Gradients batch_gradients(const EncoderParams& params,
                                 const TokenizerConfig& cfg,
                                 std::span<const Triplet> batch) {
  require(!batch.empty(), "batch_gradients needs a nonempty batch");
  params.check_shapes();
  detail::TokenCache cache(cfg);
  const auto enc = cache.encode(batch);
  return detail::encoded_gradients(params, enc);
}

// ---------------------------------------------------------------------------
// Training

enum class Optimizer { GradientDescent, Adam };

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t batch_size = 32;
  int epochs = 100;
  Optimizer optimizer = Optimizer::Adam;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  int patience = 10;  // 0 disables early stopping
  std::uint32_t dim = 64;  // used when no warm start is given
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    require(learning_rate > 0.0, "learning_rate must be positive");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(epochs >= 0, "epochs must be >= 0");
    require(validation_fraction >= 0.0 && validation_fraction < 0.5,
            "validation_fraction must be in [0, 0.5)");
    require(patience >= 0, "patience must be >= 0");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double best_validation_loss = 0.0;
};

struct TrainResult {
  EncoderParams params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0: warm-start parameters kept, or no epochs run
};

using ProgressFn = std::function<void(const EpochRecord&)>;

namespace detail {

class AdamState {
 public:
  AdamState(const TrainConfig& cfg, std::size_t d)
      : cfg_(cfg), m_w_(d * d, 0.0), v_w_(d * d, 0.0), m_b_(d, 0.0), v_b_(d, 0.0) {}

  void step(EncoderParams& p, const Gradients& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto update = [&](double* param, const double* grad, double* m, double* v,
                      std::size_t n) {
      for (std::size_t k = 0; k < n; ++k) {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * grad[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * grad[k] * grad[k];
        param[k] -= cfg_.learning_rate * (m[k] / c1) /
                    (std::sqrt(v[k] / c2) + cfg_.adam_epsilon);
      }
    };
    const std::size_t d = p.dim;
    update(p.weight.data(), g.weight.data(), m_w_.data(), v_w_.data(), d * d);
    update(p.bias.data(), g.bias.data(), m_b_.data(), v_b_.data(), d);
    // Lazy update of the table: only rows present in this batch move.
    for (const auto& [row, grad] : g.table_rows) {
      auto& m = m_rows_[row];
      auto& v = v_rows_[row];
      if (m.empty()) {
        m.assign(d, 0.0);
        v.assign(d, 0.0);
      }
      update(&p.table[static_cast<std::size_t>(row) * d], grad.data(), m.data(),
             v.data(), d);
    }
  }

 private:
  TrainConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<double> m_w_, v_w_, m_b_, v_b_;
  std::unordered_map<std::uint32_t, std::vector<double>> m_rows_, v_rows_;
};

inline void sgd_step(EncoderParams& p, const Gradients& g, double lr) {
  for (std::size_t k = 0; k < p.weight.size(); ++k) p.weight[k] -= lr * g.weight[k];
  for (std::size_t k = 0; k < p.bias.size(); ++k) p.bias[k] -= lr * g.bias[k];
  const std::size_t d = p.dim;
  for (const auto& [row, grad] : g.table_rows) {
    double* dst = &p.table[static_cast<std::size_t>(row) * d];
    for (std::size_t k = 0; k < d; ++k) dst[k] -= lr * grad[k];
  }
}

}  // namespace detail

/// Mini-batch training of the cosine regression objective. Holds out a
/// seeded validation slice, shuffles every epoch, and returns the parameters
/// with the lowest validation loss (training loss when there is no slice).
/// Warm-start parameters compete with the trained epochs; a fresh init does not.
inline TrainResult train(std::span<const Triplet> triplets,
                         const TrainConfig& tcfg,
                         const TokenizerConfig& tokenizer,
                         std::optional<EncoderParams> warm_start = std::nullopt,
                         const ProgressFn& progress = {}) {
  tcfg.validate();
  tokenizer.validate();
  require(triplets.size() >= 2 * tcfg.batch_size,
          "training needs at least 2 * batch_size triplets, got " +
              std::to_string(triplets.size()));
  const bool warm = warm_start.has_value();
  EncoderParams params =
      warm_start ? std::move(*warm_start)
                 : EncoderParams::init(tokenizer.vocab_size, tcfg.dim,
                                       derive_seed(tcfg.seed, 0x1217ULL));
  params.check_shapes();
  require(params.vocab_size == tokenizer.vocab_size,
          "warm start vocabulary does not match tokenizer");

  TrainResult result;
  if (tcfg.epochs == 0) {
    result.params = std::move(params);
    return result;
  }

  detail::TokenCache cache(tokenizer);
  const auto encoded = cache.encode(triplets);
  std::vector<std::size_t> order(encoded.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  Rng split_rng(derive_seed(tcfg.seed, 0x5b11ULL));
  shuffle(order, split_rng);
  const auto n_val = static_cast<std::size_t>(
      std::floor(tcfg.validation_fraction * static_cast<double>(encoded.size())));
  std::vector<detail::EncodedTriplet> val, fit;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_val ? val : fit).push_back(encoded[order[k]]);
  }
  const auto& monitor = val.empty() ? fit : val;

  const double initial = detail::encoded_loss(params, monitor);
  if (!std::isfinite(initial)) fail(ErrorKind::Diverged, "initial loss is not finite");
  double best = warm ? initial : std::numeric_limits<double>::infinity();
  EncoderParams best_params = params;
  int stale = 0;

  detail::AdamState adam(tcfg, params.dim);
  Rng rng(derive_seed(tcfg.seed, 0xe90cULL));
  std::vector<std::size_t> idx(fit.size());
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  std::vector<detail::EncodedTriplet> batch;

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    shuffle(idx, rng);
    double train_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < idx.size(); start += tcfg.batch_size) {
      batch.clear();
      const std::size_t end = std::min(idx.size(), start + tcfg.batch_size);
      for (std::size_t k = start; k < end; ++k) batch.push_back(fit[idx[k]]);
      double loss = 0.0;
      const auto g = detail::encoded_gradients(params, batch, &loss);
      if (!std::isfinite(loss)) {
        fail(ErrorKind::Diverged, "loss became non-finite at epoch " +
                                      std::to_string(epoch) + ", batch " +
                                      std::to_string(batches + 1));
      }
      train_sum += loss;
      ++batches;
      if (tcfg.optimizer == Optimizer::Adam) {
        adam.step(params, g);
      } else {
        detail::sgd_step(params, g, tcfg.learning_rate);
      }
    }
    const double val_loss = detail::encoded_loss(params, monitor);
    if (!std::isfinite(val_loss)) {
      fail(ErrorKind::Diverged,
           "validation loss became non-finite at epoch " + std::to_string(epoch));
    }
    if (val_loss < best) {
      best = val_loss;
      best_params = params;
      result.best_epoch = epoch;
      stale = 0;
    } else {
      ++stale;
    }
    EpochRecord rec{epoch, train_sum / static_cast<double>(batches), val_loss,
                    best};
    result.history.push_back(rec);
    if (progress) progress(rec);
    if (tcfg.patience > 0 && stale >= tcfg.patience) break;
  }
  result.params = std::move(best_params);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: "SLE1", u32 version, u32 V, u32 d, u64 hash_seed, f64 table,
// f64 weight, f64 bias, u32 CRC32 of everything before it. Little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EncoderParams params;
  TokenizerConfig tokenizer;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}
inline std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  }
  return v;
}
inline std::uint32_t crc32_of(std::string_view data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - pos, 1u << 30));
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(data.data() + pos), chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::string serialize_checkpoint(const EncoderParams& params,
                                        const TokenizerConfig& tokenizer) {
  params.check_shapes();
  require(params.vocab_size == tokenizer.vocab_size,
          "checkpoint vocabulary does not match tokenizer");
  std::string out = "SLE1";
  out.reserve(32 + 8 * (params.table.size() + params.weight.size() + params.bias.size()));
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, params.vocab_size);
  detail::put_u32(out, params.dim);
  detail::put_u64(out, tokenizer.hash_seed);
  for (const auto* block : {&params.table, &params.weight, &params.bias}) {
    for (double x : *block) detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
  }
  detail::put_u32(out, detail::crc32_of(out));
  return out;
}

inline void save_checkpoint(const EncoderParams& params,
                            const TokenizerConfig& tokenizer,
                            const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(params, tokenizer));
}

/// Parses a checkpoint. With `expected`, the header must match its
/// vocabulary size and hash seed.
inline Checkpoint parse_checkpoint(const std::string& bytes,
                                   const std::string& name,
                                   std::optional<TokenizerConfig> expected = {}) {
  constexpr std::size_t kHeader = 4 + 4 + 4 + 4 + 8;
  if (bytes.size() < kHeader + 4 || bytes.compare(0, 4, "SLE1") != 0) {
    fail(ErrorKind::Corrupt, name + ": not a checkpoint (bad magic or truncated)");
  }
  const auto version = static_cast<std::uint32_t>(detail::get_le(bytes, 4, 4));
  if (version != kCheckpointVersion) {
    fail(ErrorKind::InvalidArgument,
         name + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto vocab = static_cast<std::uint32_t>(detail::get_le(bytes, 8, 4));
  const auto dim = static_cast<std::uint32_t>(detail::get_le(bytes, 12, 4));
  const auto hash_seed = detail::get_le(bytes, 16, 8);
  const std::size_t n_values = static_cast<std::size_t>(vocab) * dim +
                               static_cast<std::size_t>(dim) * dim + dim;
  if (bytes.size() != kHeader + 8 * n_values + 4) {
    fail(ErrorKind::Corrupt, name + ": checkpoint size does not match header "
                                    "(truncated or corrupt)");
  }
  const auto stored = static_cast<std::uint32_t>(detail::get_le(bytes, bytes.size() - 4, 4));
  if (stored != detail::crc32_of(std::string_view(bytes).substr(0, bytes.size() - 4))) {
    fail(ErrorKind::Corrupt, name + ": checkpoint CRC mismatch");
  }
  if (expected) {
    if (expected->vocab_size != vocab) {
      fail(ErrorKind::InvalidArgument,
           name + ": checkpoint vocabulary " + std::to_string(vocab) +
               " does not match tokenizer vocabulary " +
               std::to_string(expected->vocab_size));
    }
    if (expected->hash_seed != hash_seed) {
      fail(ErrorKind::InvalidArgument, name + ": checkpoint hash seed differs");
    }
  }
  Checkpoint ck;
  ck.tokenizer.vocab_size = vocab;
  ck.tokenizer.hash_seed = hash_seed;
  if (expected) ck.tokenizer.lowercase = expected->lowercase;
  auto& p = ck.params;
  p.vocab_size = vocab;
  p.dim = dim;
  std::size_t pos = kHeader;
  auto read_block = [&](std::vector<double>& block, std::size_t count) {
    block.resize(count);
    for (auto& x : block) {
      x = std::bit_cast<double>(detail::get_le(bytes, pos, 8));
      pos += 8;
    }
  };
  read_block(p.table, static_cast<std::size_t>(vocab) * dim);
  read_block(p.weight, static_cast<std::size_t>(dim) * dim);
  read_block(p.bias, dim);
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  std::optional<TokenizerConfig> expected = {}) {
  return parse_checkpoint(read_file(path), path.string(), expected);
}

}  // namespace simlabel
