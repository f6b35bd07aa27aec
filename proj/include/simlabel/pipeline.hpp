// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "simlabel/corpus.hpp"
#include "simlabel/encoder.hpp"
#include "simlabel/inference.hpp"
#include "simlabel/lsm.hpp"
#include "simlabel/metrics.hpp"
#include "simlabel/tripletgen.hpp"

namespace simlabel {

// ---------------------------------------------------------------------------
// Configuration

struct GridPoint {
  double learning_rate = 0.0;
  std::uint32_t dim = 0;
};

struct PipelineConfig {
  double initial_fraction = 0.15;
  double improvement_epsilon = 0.005;
  int max_rounds = 3;
  std::vector<double> learning_rates = {1e-2, 3e-3};
  std::vector<std::uint32_t> dims = {64};
  std::vector<std::uint32_t> capacity_ladder = {128, 256};
  int epochs = 60;
  std::size_t batch_size = 32;
  double validation_fraction = 0.1;
  int patience = 10;
  int k = kDefaultTopK;
  std::size_t per_stratum = 8;
  bool include_self = true;
  double review_unrated_fraction = 0.05;  // cap on never-rated cells, of all cells
  double random_extra_fraction = 0.10;    // of never-rated cells
  std::size_t validation_companies = 100;
  std::uint64_t seed = 20221;
  TokenizerConfig tokenizer;

  void validate() const {
    require(initial_fraction > 0.0 && initial_fraction <= 1.0,
            "initial_fraction must be in (0, 1]");
    require(improvement_epsilon >= 0.0, "improvement_epsilon must be >= 0");
    require(max_rounds >= 1, "max_rounds must be >= 1");
    require(!learning_rates.empty() && !dims.empty(),
            "hyperparameter grid must be nonempty");
    for (double lr : learning_rates) require(lr > 0.0, "learning rates must be positive");
    for (auto d : dims) require(d >= 1, "dims must be >= 1");
    for (auto d : capacity_ladder) require(d >= 1, "ladder dims must be >= 1");
    require(epochs >= 1, "epochs must be >= 1");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(k >= 1, "k must be >= 1");
    require(per_stratum >= 1, "per_stratum must be >= 1");
    require(review_unrated_fraction >= 0.0 && review_unrated_fraction <= 1.0,
            "review_unrated_fraction must be in [0, 1]");
    require(random_extra_fraction >= 0.0 && random_extra_fraction <= 1.0,
            "random_extra_fraction must be in [0, 1]");
    tokenizer.validate();
  }

  /// Number of rungs: the configured dims, then one per ladder entry.
  std::size_t rungs() const { return 1 + capacity_ladder.size(); }

  std::vector<GridPoint> grid(std::size_t rung) const {
    require(rung < rungs(), "ladder rung out of range");
    const std::vector<std::uint32_t> ds =
        rung == 0 ? dims : std::vector<std::uint32_t>{capacity_ladder[rung - 1]};
    std::vector<GridPoint> out;
    for (auto d : ds) {
      for (double lr : learning_rates) out.push_back({lr, d});
    }
    return out;
  }
};

inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["initial_fraction"] = c.initial_fraction;
  j["improvement_epsilon"] = c.improvement_epsilon;
  j["max_rounds"] = c.max_rounds;
  j["learning_rates"] = c.learning_rates;
  j["dims"] = c.dims;
  j["capacity_ladder"] = c.capacity_ladder;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["validation_fraction"] = c.validation_fraction;
  j["patience"] = c.patience;
  j["k"] = c.k;
  j["per_stratum"] = c.per_stratum;
  j["include_self"] = c.include_self;
  j["review_unrated_fraction"] = c.review_unrated_fraction;
  j["random_extra_fraction"] = c.random_extra_fraction;
  j["validation_companies"] = c.validation_companies;
  j["seed"] = c.seed;
  j["vocab_size"] = c.tokenizer.vocab_size;
  j["hash_seed"] = c.tokenizer.hash_seed;
  return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), "pipeline config must be a JSON object");
  PipelineConfig c;
  const auto known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) {
      fail(ErrorKind::InvalidArgument, "unknown pipeline config key '" + key + "'");
    }
  }
  try {
    c.initial_fraction = j.value("initial_fraction", c.initial_fraction);
    c.improvement_epsilon = j.value("improvement_epsilon", c.improvement_epsilon);
    c.max_rounds = j.value("max_rounds", c.max_rounds);
    c.learning_rates = j.value("learning_rates", c.learning_rates);
    c.dims = j.value("dims", c.dims);
    c.capacity_ladder = j.value("capacity_ladder", c.capacity_ladder);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.patience = j.value("patience", c.patience);
    c.k = j.value("k", c.k);
    c.per_stratum = j.value("per_stratum", c.per_stratum);
    c.include_self = j.value("include_self", c.include_self);
    c.review_unrated_fraction =
        j.value("review_unrated_fraction", c.review_unrated_fraction);
    c.random_extra_fraction = j.value("random_extra_fraction", c.random_extra_fraction);
    c.validation_companies = j.value("validation_companies", c.validation_companies);
    c.seed = j.value("seed", c.seed);
    c.tokenizer.vocab_size = j.value("vocab_size", c.tokenizer.vocab_size);
    c.tokenizer.hash_seed = j.value("hash_seed", c.tokenizer.hash_seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidArgument, std::string("bad pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

inline std::string config_hash(const PipelineConfig& c) {
  return hex64(fnv1a64(to_json(c).dump()));
}

// ---------------------------------------------------------------------------
// Iteration state

enum class Phase { AwaitRatings, Training, AwaitReview, Done };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::AwaitRatings: return "await_ratings";
    case Phase::Training: return "training";
    case Phase::AwaitReview: return "await_review";
    case Phase::Done: return "done";
  }
  return "done";
}

inline Phase parse_phase(std::string_view s) {
  for (auto p : {Phase::AwaitRatings, Phase::Training, Phase::AwaitReview, Phase::Done}) {
    if (s == to_string(p)) return p;
  }
  fail(ErrorKind::InvalidArgument, "unknown phase '" + std::string(s) + "'");
}

/// One training attempt. Improved attempts also form the per-round history.
struct AttemptRecord {
  int round = 0;
  int attempt = 0;
  double learning_rate = 0.0;
  std::uint32_t dim = 0;
  bool warm_start = false;
  std::string outcome;  // improved | retune | escalate | exhausted
  bool diverged = false;
  int best_epoch = 0;
  std::size_t triplets = 0;
  std::size_t sme_cells = 0;
  double emr = 0.0;
  std::optional<double> previous_emr;  // best earlier model on the same cells
  double ap = 0.0;
  double ar = 0.0;
  double p_at_1 = 0.0;

  bool operator==(const AttemptRecord&) const = default;
};

struct IterationState {
  int round = 1;
  int artifact_round = 0;  // directory the state was last persisted to
  Phase phase = Phase::AwaitRatings;
  std::uint64_t step = 0;
  Lsm lsm{2};
  std::shared_ptr<const EncoderParams> best_params;
  std::optional<Lsm> model_lsm;  // inferred by best_params
  double best_ar = 0.0;
  std::size_t grid_cursor = 0;
  std::size_t ladder_rung = 0;
  std::vector<Triplet> triplets;
  std::vector<ReviewItem> queue;
  std::vector<RatingUpdate> inbox;  // ratings applied for `queue`
  std::vector<AttemptRecord> history;
  std::vector<AttemptRecord> attempts;

  bool awaiting_ratings() const {
    return phase == Phase::AwaitRatings || phase == Phase::AwaitReview;
  }

  bool operator==(const IterationState& o) const {
    auto same_params = [](const auto& a, const auto& b) {
      if (!a || !b) return !a && !b;
      return a->vocab_size == b->vocab_size && a->dim == b->dim &&
             a->table == b->table && a->weight == b->weight && a->bias == b->bias;
    };
    auto same_inbox = [](const auto& a, const auto& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k].i != b[k].i || a[k].j != b[k].j || a[k].rating != b[k].rating) return false;
      }
      return true;
    };
    return round == o.round && artifact_round == o.artifact_round &&
           phase == o.phase && step == o.step && lsm == o.lsm &&
           same_params(best_params, o.best_params) && model_lsm == o.model_lsm &&
           best_ar == o.best_ar && grid_cursor == o.grid_cursor &&
           ladder_rung == o.ladder_rung && triplets == o.triplets &&
           queue == o.queue && same_inbox(inbox, o.inbox) &&
           history == o.history && attempts == o.attempts;
  }
};

inline nlohmann::ordered_json to_json(const AttemptRecord& a) {
  nlohmann::ordered_json j;
  j["round"] = a.round;
  j["attempt"] = a.attempt;
  j["learning_rate"] = a.learning_rate;
  j["dim"] = a.dim;
  j["warm_start"] = a.warm_start;
  j["outcome"] = a.outcome;
  j["diverged"] = a.diverged;
  j["best_epoch"] = a.best_epoch;
  j["triplets"] = a.triplets;
  j["sme_cells"] = a.sme_cells;
  j["emr"] = a.emr;
  j["previous_emr"] = a.previous_emr ? nlohmann::ordered_json(*a.previous_emr)
                                     : nlohmann::ordered_json(nullptr);
  j["ap"] = a.ap;
  j["ar"] = a.ar;
  j["p_at_1"] = a.p_at_1;
  return j;
}

inline AttemptRecord attempt_from_json(const nlohmann::json& j) {
  AttemptRecord a;
  a.round = j.at("round").get<int>();
  a.attempt = j.at("attempt").get<int>();
  a.learning_rate = j.at("learning_rate").get<double>();
  a.dim = j.at("dim").get<std::uint32_t>();
  a.warm_start = j.at("warm_start").get<bool>();
  a.outcome = j.at("outcome").get<std::string>();
  a.diverged = j.at("diverged").get<bool>();
  a.best_epoch = j.at("best_epoch").get<int>();
  a.triplets = j.at("triplets").get<std::size_t>();
  a.sme_cells = j.at("sme_cells").get<std::size_t>();
  a.emr = j.at("emr").get<double>();
  if (!j.at("previous_emr").is_null()) a.previous_emr = j.at("previous_emr").get<double>();
  a.ap = j.at("ap").get<double>();
  a.ar = j.at("ar").get<double>();
  a.p_at_1 = j.at("p_at_1").get<double>();
  return a;
}

inline nlohmann::ordered_json to_json(const ReviewItem& r) {
  nlohmann::ordered_json j;
  j["i"] = r.i;
  j["j"] = r.j;
  j["model_rating"] =
      r.model_rating ? nlohmann::ordered_json(*r.model_rating) : nlohmann::ordered_json(nullptr);
  j["prior_rating"] =
      r.prior_rating ? nlohmann::ordered_json(*r.prior_rating) : nlohmann::ordered_json(nullptr);
  return j;
}

inline ReviewItem review_item_from_json(const nlohmann::json& j) {
  ReviewItem r;
  r.i = j.at("i").get<int>();
  r.j = j.at("j").get<int>();
  if (!j.at("model_rating").is_null()) r.model_rating = j.at("model_rating").get<int>();
  if (!j.at("prior_rating").is_null()) r.prior_rating = j.at("prior_rating").get<int>();
  return r;
}

// ---------------------------------------------------------------------------
// Rating oracles

class RatingOracle {
 public:
  virtual ~RatingOracle() = default;
  /// Ratings for some subset of `items`.
  virtual std::vector<RatingUpdate> rate(std::span<const ReviewItem> items, int round) = 0;
  /// True when ratings arrive asynchronously, so an empty answer means
  /// "not yet" rather than failure.
  virtual bool deferred() const { return false; }
  virtual std::string kind() const = 0;
};

/// Answers from a ground-truth LSM. With jitter p, each rating moves by one
/// step (up or down, clamped to 0..5) with probability p.
class SimulatedOracle final : public RatingOracle {
 public:
  explicit SimulatedOracle(Lsm truth, double jitter = 0.0, std::uint64_t seed = 0)
      : truth_(std::move(truth)), jitter_(jitter), seed_(seed) {
    require(jitter >= 0.0 && jitter <= 1.0, "jitter must be in [0, 1]");
  }

  std::vector<RatingUpdate> rate(std::span<const ReviewItem> items, int round) override {
    std::vector<RatingUpdate> out;
    for (const auto& item : items) {
      const auto r = truth_.rating(item.i, item.j);
      if (!r) continue;
      int v = *r;
      if (jitter_ > 0.0) {
        Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(round),
                            static_cast<std::uint64_t>(item.i),
                            static_cast<std::uint64_t>(item.j)));
        if (uniform01(rng) < jitter_) {
          v = std::clamp(v + (uniform_index(rng, 2) == 0 ? -1 : 1), 0, Rating::kMax);
        }
      }
      out.push_back({item.i, item.j, Rating(v)});
    }
    return out;
  }

  std::string kind() const override { return "simulated"; }

 private:
  Lsm truth_;
  double jitter_;
  std::uint64_t seed_;
};

/// One SME submission as stored in a round's inbox.json.
struct InboxEntry {
  TagId i = 0;
  TagId j = 0;
  int rating = 0;
  std::string nonce;
  std::string submitted_at;
};

inline nlohmann::ordered_json to_json(const InboxEntry& e) {
  nlohmann::ordered_json j;
  j["i"] = e.i;
  j["j"] = e.j;
  j["rating"] = e.rating;
  if (!e.nonce.empty()) j["nonce"] = e.nonce;
  if (!e.submitted_at.empty()) j["submitted_at"] = e.submitted_at;
  return j;
}

inline InboxEntry inbox_entry_from_json(const nlohmann::json& j) {
  InboxEntry e;
  e.i = j.at("i").get<int>();
  e.j = j.at("j").get<int>();
  e.rating = j.at("rating").get<int>();
  e.nonce = j.value("nonce", std::string{});
  e.submitted_at = j.value("submitted_at", std::string{});
  return e;
}

inline std::vector<InboxEntry> read_inbox(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corrupt, path.string() + ": " + e.what());
  }
  std::vector<InboxEntry> out;
  for (const auto& e : j) out.push_back(inbox_entry_from_json(e));
  return out;
}

inline void write_inbox(const std::filesystem::path& path,
                        const std::vector<InboxEntry>& entries) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& e : entries) j.push_back(to_json(e));
  write_file_atomic(path, j.dump(1) + "\n");
}

// ---------------------------------------------------------------------------
// Persistence

/// Round directories hold complete snapshots; the manifest names the latest
/// one. A snapshot is written to round_<r>.staging and swapped in before the
/// manifest moves, so a crash leaves either the old or the new snapshot.
class StateStore {
 public:
  explicit StateStore(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path round_dir(int r) const {
    return root_ / ("round_" + std::to_string(r));
  }
  std::filesystem::path manifest_path() const { return root_ / "manifest.json"; }
  std::filesystem::path config_path() const { return root_ / "config.json"; }

  bool initialized() const { return std::filesystem::exists(manifest_path()); }

  /// Starts a fresh state directory. Refuses to overwrite an existing run.
  void init(const PipelineConfig& cfg, std::string oracle_kind,
            std::string corpus_dir = {}) {
    if (initialized()) {
      fail(ErrorKind::Conflict, root_.string() + " already holds a pipeline run");
    }
    std::filesystem::create_directories(root_);
    oracle_ = std::move(oracle_kind);
    corpus_ = std::move(corpus_dir);
    write_file_atomic(config_path(), to_json(cfg).dump(2) + "\n");
    hash_ = config_hash(cfg);
  }

  void persist(const IterationState& s, const TokenizerConfig& tokenizer) const {
    const auto final_dir = round_dir(s.artifact_round);
    auto staging = final_dir;
    staging += ".staging";
    auto prev = final_dir;
    prev += ".prev";
    std::filesystem::remove_all(staging);
    std::filesystem::create_directories(staging);
    write_snapshot(s, tokenizer, staging);
    if (std::filesystem::exists(final_dir)) {
      std::filesystem::remove_all(prev);
      std::filesystem::rename(final_dir, prev);
    }
    std::filesystem::rename(staging, final_dir);
    std::filesystem::remove_all(prev);
    write_manifest(s);
  }

  void write_manifest(const IterationState& s) const {
    nlohmann::ordered_json m;
    m["latest_round"] = s.artifact_round;
    m["step"] = s.step;
    m["phase"] = to_string(s.phase);
    m["config_hash"] = hash_;
    m["oracle"] = oracle_;
    m["corpus"] = corpus_.empty() ? nlohmann::ordered_json(nullptr)
                                  : nlohmann::ordered_json(corpus_);
    write_file_atomic(manifest_path(), m.dump(2) + "\n");
  }

  struct Loaded {
    IterationState state;
    PipelineConfig config;
    std::string oracle;
    std::string corpus_dir;
  };

  /// Rebuilds the state named by the manifest, repairing an interrupted swap.
  Loaded load() {
    if (!std::filesystem::exists(manifest_path())) {
      fail(ErrorKind::NotFound, "no pipeline state in " + root_.string() +
                                    " (missing manifest.json)");
    }
    const auto manifest = parse_json_file(manifest_path());
    const auto cfg = pipeline_config_from_json(parse_json_file(config_path()));
    hash_ = manifest.at("config_hash").get<std::string>();
    if (hash_ != config_hash(cfg)) {
      fail(ErrorKind::Corrupt, config_path().string() + " does not match the manifest hash");
    }
    oracle_ = manifest.value("oracle", std::string{});
    corpus_ = manifest.at("corpus").is_null() ? std::string{}
                                              : manifest.at("corpus").get<std::string>();
    const int latest = manifest.at("latest_round").get<int>();
    repair(latest);

    Loaded out;
    out.config = cfg;
    out.oracle = oracle_;
    out.corpus_dir = corpus_;
    out.state = read_snapshot(round_dir(latest), cfg.tokenizer);
    const auto step = manifest.at("step").get<std::uint64_t>();
    if (out.state.step < step || out.state.artifact_round != latest) {
      fail(ErrorKind::Corrupt, (round_dir(latest) / "state.json").string() +
                                   " does not match manifest.json");
    }
    // Swapped in, but the manifest update was cut short.
    if (out.state.step > step) write_manifest(out.state);
    return out;
  }

  std::filesystem::path latest_dir() const {
    const auto manifest = parse_json_file(manifest_path());
    return round_dir(manifest.at("latest_round").get<int>());
  }

 private:
  static nlohmann::json parse_json_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
      fail(ErrorKind::NotFound, "missing " + path.string());
    }
    try {
      return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Corrupt, path.string() + ": " + e.what());
    }
  }

  /// Drops staging directories and restores a snapshot whose swap was cut
  /// short. Rounds past the manifest are partial and ignored.
  void repair(int latest) const {
    std::vector<std::filesystem::path> staged, prevs;
    for (const auto& entry : std::filesystem::directory_iterator(root_)) {
      const auto name = entry.path().filename().string();
      if (name.ends_with(".staging")) staged.push_back(entry.path());
      if (name.ends_with(".prev")) prevs.push_back(entry.path());
    }
    for (const auto& p : staged) std::filesystem::remove_all(p);
    for (const auto& p : prevs) {
      auto final_dir = p;
      final_dir.replace_extension();
      if (std::filesystem::exists(final_dir)) {
        std::filesystem::remove_all(p);
      } else {
        std::filesystem::rename(p, final_dir);
      }
    }
    if (!std::filesystem::exists(round_dir(latest))) {
      fail(ErrorKind::Corrupt, "manifest names missing snapshot " +
                                   round_dir(latest).string());
    }
  }

  static void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) fail(ErrorKind::Io, "short write to " + path.string());
  }

  static void write_snapshot(const IterationState& s, const TokenizerConfig& tokenizer,
                             const std::filesystem::path& dir) {
    nlohmann::ordered_json st;
    st["round"] = s.round;
    st["artifact_round"] = s.artifact_round;
    st["phase"] = to_string(s.phase);
    st["step"] = s.step;
    st["best_ar"] = s.best_ar;
    st["grid_cursor"] = s.grid_cursor;
    st["ladder_rung"] = s.ladder_rung;
    st["has_model"] = s.best_params != nullptr;
    write_text(dir / "state.json", st.dump(2) + "\n");

    write_text(dir / "lsm.json", to_json(s.lsm).dump() + "\n");
    if (s.best_params) {
      write_text(dir / "model.ckpt", serialize_checkpoint(*s.best_params, tokenizer));
    }
    if (s.model_lsm) write_text(dir / "model_lsm.json", to_json(*s.model_lsm).dump() + "\n");

    nlohmann::ordered_json metrics;
    metrics["history"] = nlohmann::ordered_json::array();
    for (const auto& a : s.history) metrics["history"].push_back(to_json(a));
    metrics["attempts"] = nlohmann::ordered_json::array();
    for (const auto& a : s.attempts) metrics["attempts"].push_back(to_json(a));
    write_text(dir / "metrics.json", metrics.dump(2) + "\n");

    nlohmann::ordered_json queue = nlohmann::ordered_json::array();
    for (const auto& q : s.queue) queue.push_back(to_json(q));
    write_text(dir / "queue.json", queue.dump(1) + "\n");

    nlohmann::ordered_json inbox = nlohmann::ordered_json::array();
    for (const auto& u : s.inbox) inbox.push_back(to_json(InboxEntry{u.i, u.j, u.rating.value(), {}, {}}));
    write_text(dir / "inbox.json", inbox.dump(1) + "\n");

    write_text(dir / "triplets.jsonl", triplets_jsonl(s.triplets, true));
  }

  static IterationState read_snapshot(const std::filesystem::path& dir,
                                      const TokenizerConfig& tokenizer) {
    auto wrap = [&](const char* file, auto&& fn) {
      const auto path = dir / file;
      try {
        return fn(path);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::Corrupt || e.kind() == ErrorKind::NotFound) throw;
        fail(ErrorKind::Corrupt, path.string() + ": " + e.what());
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Corrupt, path.string() + ": " + e.what());
      }
    };
    IterationState s;
    bool has_model = false;
    wrap("state.json", [&](const std::filesystem::path& path) {
      const auto st = parse_json_file(path);
      s.round = st.at("round").get<int>();
      s.artifact_round = st.at("artifact_round").get<int>();
      s.phase = parse_phase(st.at("phase").get<std::string>());
      s.step = st.at("step").get<std::uint64_t>();
      s.best_ar = st.at("best_ar").get<double>();
      s.grid_cursor = st.at("grid_cursor").get<std::size_t>();
      s.ladder_rung = st.at("ladder_rung").get<std::size_t>();
      has_model = st.at("has_model").get<bool>();
      return 0;
    });
    wrap("lsm.json", [&](const std::filesystem::path& path) {
      s.lsm = lsm_from_json(parse_json_file(path));
      return 0;
    });
    if (has_model) {
      wrap("model.ckpt", [&](const std::filesystem::path& path) {
        if (!std::filesystem::exists(path)) fail(ErrorKind::NotFound, "missing " + path.string());
        s.best_params = std::make_shared<const EncoderParams>(
            load_checkpoint(path, tokenizer).params);
        return 0;
      });
      wrap("model_lsm.json", [&](const std::filesystem::path& path) {
        s.model_lsm = lsm_from_json(parse_json_file(path));
        return 0;
      });
    }
    wrap("metrics.json", [&](const std::filesystem::path& path) {
      const auto m = parse_json_file(path);
      for (const auto& a : m.at("history")) s.history.push_back(attempt_from_json(a));
      for (const auto& a : m.at("attempts")) s.attempts.push_back(attempt_from_json(a));
      return 0;
    });
    wrap("queue.json", [&](const std::filesystem::path& path) {
      for (const auto& q : parse_json_file(path)) s.queue.push_back(review_item_from_json(q));
      return 0;
    });
    wrap("inbox.json", [&](const std::filesystem::path& path) {
      for (const auto& e : read_inbox(path)) s.inbox.push_back({e.i, e.j, Rating(e.rating)});
      return 0;
    });
    wrap("triplets.jsonl", [&](const std::filesystem::path& path) {
      if (!std::filesystem::exists(path)) fail(ErrorKind::NotFound, "missing " + path.string());
      s.triplets = load_triplets(path);
      return 0;
    });
    return s;
  }

  std::filesystem::path root_;
  std::string hash_;
  std::string oracle_;
  std::string corpus_;
};

/// Drains ratings that the service wrote to the latest snapshot's inbox.
class LiveOracle final : public RatingOracle {
 public:
  explicit LiveOracle(const StateStore& store) : store_(&store) {}

  std::vector<RatingUpdate> rate(std::span<const ReviewItem>, int) override {
    std::vector<RatingUpdate> out;
    for (const auto& e : read_inbox(store_->latest_dir() / "inbox.json")) {
      out.push_back({e.i, e.j, Rating(e.rating)});
    }
    return out;
  }
  bool deferred() const override { return true; }
  std::string kind() const override { return "live"; }

 private:
  const StateStore* store_;
};

// ---------------------------------------------------------------------------
// The loop

/// Drives bootstrap, training rounds, and SME review over one corpus.
/// Every state change is persisted (when a store is attached) before the
/// next step reads it.
class Pipeline {
 public:
  Pipeline(Corpus corpus, PipelineConfig cfg, RatingOracle& oracle,
           StateStore* store = nullptr)
      : corpus_(std::move(corpus)), cfg_(std::move(cfg)), oracle_(&oracle), store_(store) {
    cfg_.validate();
    require(corpus_.n() >= 2, "pipeline needs at least two tags");
    validation_ = validation_slice();
  }

  const PipelineConfig& config() const noexcept { return cfg_; }
  const Corpus& corpus() const noexcept { return corpus_; }
  void set_progress(ProgressFn fn) { progress_ = std::move(fn); }

  /// Round 1 state: initial pairs selected, rated by the oracle, and
  /// expanded into the first training set.
  IterationState bootstrap() {
    IterationState s;
    s.round = 1;
    s.artifact_round = 0;
    s.phase = Phase::AwaitRatings;
    s.lsm = Lsm(corpus_.n());
    for (const auto& p : select_initial_pairs(s.lsm, cfg_.initial_fraction,
                                              derive_seed(cfg_.seed, 0xb0ULL))) {
      s.queue.push_back({p.i, p.j, std::nullopt, std::nullopt});
    }
    commit(s);
    return drain(std::move(s));
  }

  /// Applies oracle ratings to a parked state. A deferred oracle with
  /// nothing to offer leaves the state unchanged.
  IterationState drain(IterationState s) {
    require(s.awaiting_ratings(), std::string("no ratings pending in phase ") + to_string(s.phase));
    std::vector<RatingUpdate> updates;
    if (!s.queue.empty()) updates = oracle_->rate(s.queue, s.round);
    if (updates.empty() && !s.queue.empty()) {
      if (oracle_->deferred()) return s;
      if (s.phase == Phase::AwaitRatings) {
        fail(ErrorKind::Unavailable, "oracle returned no ratings for the initial pairs");
      }
    }
    const Lsm blank(corpus_.n());
    const Lsm& model = s.phase == Phase::AwaitReview ? *s.model_lsm : blank;
    auto [lsm, diff] = apply_sme_updates(s.lsm, model, updates, s.round);
    const SamplingConfig sampling{cfg_.per_stratum, cfg_.include_self,
                                  derive_seed(cfg_.seed, 0x5aULL,
                                              static_cast<std::uint64_t>(s.round))};
    if (s.phase == Phase::AwaitRatings) {
      s.triplets = build_training_set(lsm, corpus_, sampling);
    } else {
      s.triplets = augment_from_diff(s.triplets, diff, lsm, corpus_, sampling);
      ++s.round;
    }
    s.lsm = std::move(lsm);
    s.inbox = std::move(updates);
    s.phase = Phase::Training;
    commit(s);
    return s;
  }

  /// One training attempt for the current round, then the improvement
  /// branch: review (improved), retune, escalate, or stop.
  IterationState run_round(IterationState s) {
    require(s.phase == Phase::Training,
            std::string("run_round needs phase training, not ") + to_string(s.phase));
    s.queue.clear();
    s.inbox.clear();
    s.artifact_round = s.round;

    const auto grid = cfg_.grid(s.ladder_rung);
    require(s.grid_cursor < grid.size(), "grid cursor out of range");
    const auto point = grid[s.grid_cursor];

    AttemptRecord rec;
    rec.round = s.round;
    rec.attempt = 1 + static_cast<int>(std::count_if(
                          s.attempts.begin(), s.attempts.end(),
                          [&](const AttemptRecord& a) { return a.round == s.round; }));
    rec.learning_rate = point.learning_rate;
    rec.dim = point.dim;
    rec.warm_start = s.best_params && s.best_params->dim == point.dim;
    rec.triplets = s.triplets.size();
    const auto sme = s.lsm.sme_sourced_pairs();
    rec.sme_cells = sme.size();

    TrainConfig tc;
    tc.learning_rate = point.learning_rate;
    tc.dim = point.dim;
    tc.epochs = cfg_.epochs;
    tc.batch_size = cfg_.batch_size;
    tc.validation_fraction = cfg_.validation_fraction;
    tc.patience = cfg_.patience;
    tc.seed = derive_seed(cfg_.seed, 0x7aULL, static_cast<std::uint64_t>(s.round),
                          static_cast<std::uint64_t>(rec.attempt));

    std::optional<TrainResult> result;
    try {
      result = train(s.triplets, tc, cfg_.tokenizer,
                     rec.warm_start ? std::optional<EncoderParams>(*s.best_params)
                                    : std::nullopt,
                     progress_);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Diverged) throw;
      rec.diverged = true;
    }

    bool improved = false;
    std::shared_ptr<const EncoderParams> params;
    std::optional<Lsm> model_lsm;
    if (result) {
      rec.best_epoch = result->best_epoch;
      params = std::make_shared<const EncoderParams>(std::move(result->params));
      const HashingEncoder enc(params, cfg_.tokenizer);
      const auto index = build_itd_index(enc, corpus_);
      model_lsm = reconstruct_lsm(index, s.round);
      rec.emr = sme.empty() ? 0.0 : emr(*model_lsm, s.lsm, std::span<const Pair>(sme));
      if (validation_) {
        const auto report = evaluate(rank_corpus(index, enc, *validation_), *validation_,
                                     std::min(cfg_.k, corpus_.n()));
        rec.ap = report.ap;
        rec.ar = report.ar;
        rec.p_at_1 = report.p_at_k.at(1);
      }
      if (!s.model_lsm) {
        improved = true;
      } else {
        rec.previous_emr =
            sme.empty() ? 0.0 : emr(*s.model_lsm, s.lsm, std::span<const Pair>(sme));
        const double d_emr = rec.emr - *rec.previous_emr;
        const double d_ar = rec.ar - s.best_ar;
        const double eps = cfg_.improvement_epsilon;
        improved = d_emr >= eps || (std::abs(d_emr) < eps && d_ar >= eps);
      }
    }

    if (improved) {
      rec.outcome = "improved";
      s.best_params = std::move(params);
      s.model_lsm = std::move(model_lsm);
      s.best_ar = rec.ar;
      s.grid_cursor = 0;
      s.attempts.push_back(rec);
      s.history.push_back(rec);
      if (static_cast<int>(s.history.size()) >= cfg_.max_rounds) {
        s.phase = Phase::Done;
        commit(s);
        return s;
      }
      const auto cells = s.lsm.cell_count();
      const auto never = static_cast<std::size_t>(std::count_if(
          s.lsm.cells().begin(), s.lsm.cells().end(),
          [](const LsmCell& c) { return !is_sme_sourced(c.state); }));
      s.queue = pending_review_queue(
          s.lsm, *s.model_lsm, ceil_fraction(cfg_.random_extra_fraction, never),
          derive_seed(cfg_.seed, 0x9eULL, static_cast<std::uint64_t>(s.round)),
          ceil_fraction(cfg_.review_unrated_fraction, cells));
      s.phase = Phase::AwaitReview;
      commit(s);
      return drain(std::move(s));
    }

    if (s.grid_cursor + 1 < grid.size()) {
      ++s.grid_cursor;
      rec.outcome = "retune";
    } else if (s.ladder_rung + 1 < cfg_.rungs()) {
      ++s.ladder_rung;
      s.grid_cursor = 0;
      rec.outcome = "escalate";
    } else {
      rec.outcome = "exhausted";
      s.phase = Phase::Done;
    }
    s.attempts.push_back(rec);
    commit(s);
    return s;
  }

  /// Advances by one unit of work for the current phase.
  IterationState step(IterationState s) {
    switch (s.phase) {
      case Phase::Training: return run_round(std::move(s));
      case Phase::AwaitRatings:
      case Phase::AwaitReview: return drain(std::move(s));
      case Phase::Done: return s;
    }
    return s;
  }

  /// Steps until Done, until ratings are awaited and none are available, or
  /// until `max_steps` steps have run.
  IterationState run(IterationState s,
                     std::optional<std::size_t> max_steps = std::nullopt) {
    for (std::size_t n = 0; s.phase != Phase::Done; ++n) {
      if (max_steps && n >= *max_steps) break;
      const auto before = s.step;
      s = step(std::move(s));
      if (s.step == before) break;
    }
    return s;
  }

 private:
  void commit(IterationState& s) {
    ++s.step;
    if (store_) store_->persist(s, cfg_.tokenizer);
  }

  /// Up to `validation_companies` gold-labeled companies, chosen under the
  /// seed and kept in corpus order.
  std::optional<Corpus> validation_slice() const {
    std::vector<std::size_t> gold;
    for (std::size_t c = 0; c < corpus_.companies().size(); ++c) {
      const auto& g = corpus_.companies()[c].gold_tags;
      if (g && !g->empty()) gold.push_back(c);
    }
    if (gold.empty() || cfg_.validation_companies == 0) return std::nullopt;
    const auto picked = detail::sample_companies(
        std::move(gold), cfg_.validation_companies, derive_seed(cfg_.seed, 0x7cULL));
    std::vector<CompanyRecord> companies;
    for (auto c : picked) companies.push_back(corpus_.companies()[c]);
    return Corpus(corpus_.tags(), std::move(companies));
  }

  Corpus corpus_;
  PipelineConfig cfg_;
  RatingOracle* oracle_;
  StateStore* store_;
  ProgressFn progress_;
  std::optional<Corpus> validation_;
};

}  // namespace simlabel
