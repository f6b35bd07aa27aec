// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "simlabel/common.hpp"

namespace simlabel {

/// A 0..5 similarity rating between two tags (0: none, 5: complete).
class Rating {
 public:
  static constexpr int kMin = 0;
  static constexpr int kMax = 5;

  explicit Rating(int value) : value_(value) {
    if (value < kMin || value > kMax) {
      fail(ErrorKind::InvalidArgument,
           "rating " + std::to_string(value) + " outside 0..5");
    }
  }
  int value() const noexcept { return value_; }
  auto operator<=>(const Rating&) const = default;

 private:
  int value_;
};

enum class CellState {
  Unrated,
  SmeRated,
  ModelInferred,
  SmeConfirmed,
  SmeOverridden,
};

inline const char* to_string(CellState s) {
  switch (s) {
    case CellState::Unrated: return "unrated";
    case CellState::SmeRated: return "sme_rated";
    case CellState::ModelInferred: return "model_inferred";
    case CellState::SmeConfirmed: return "sme_confirmed";
    case CellState::SmeOverridden: return "sme_overridden";
  }
  return "unrated";
}

inline CellState parse_cell_state(const std::string& s) {
  for (auto st : {CellState::Unrated, CellState::SmeRated,
                  CellState::ModelInferred, CellState::SmeConfirmed,
                  CellState::SmeOverridden}) {
    if (s == to_string(st)) return st;
  }
  fail(ErrorKind::Corrupt, "unknown cell state '" + s + "'");
}

inline bool is_sme_sourced(CellState s) {
  return s == CellState::SmeRated || s == CellState::SmeConfirmed ||
         s == CellState::SmeOverridden;
}

/// SME ratings are sticky: once a cell is SME-sourced the model can never
/// write it again, and nothing returns to Unrated.
inline bool transition_allowed(CellState from, CellState to) {
  if (to == CellState::Unrated) return false;
  switch (from) {
    case CellState::Unrated:
      return to == CellState::SmeRated || to == CellState::ModelInferred;
    case CellState::ModelInferred:
      return to == CellState::ModelInferred || to == CellState::SmeConfirmed ||
             to == CellState::SmeOverridden;
    case CellState::SmeRated:
    case CellState::SmeConfirmed:
    case CellState::SmeOverridden:
      return is_sme_sourced(to);
  }
  return false;
}

/// Canonical off-diagonal tag pair, i < j.
struct Pair {
  TagId i = 0;
  TagId j = 0;

  static Pair canonical(TagId a, TagId b) {
    return a < b ? Pair{a, b} : Pair{b, a};
  }
  auto operator<=>(const Pair&) const = default;
};

struct LsmCell {
  TagId i = 0;
  TagId j = 0;
  std::optional<Rating> rating;
  CellState state = CellState::Unrated;
  int round = 0;

  bool operator==(const LsmCell&) const = default;
};

/// Label similarity matrix. Only the strict upper triangle is stored; the
/// diagonal is a constant 5 and (j, i) queries resolve to (i, j).
class Lsm {
 public:
  static constexpr int kSelfSimilarity = Rating::kMax;

  explicit Lsm(int n) : n_(n) {
    require(n >= 2, "LSM needs at least 2 tags, got " + std::to_string(n));
    cells_.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (TagId i = 0; i < n; ++i) {
      for (TagId j = i + 1; j < n; ++j) cells_.push_back(LsmCell{i, j, std::nullopt, CellState::Unrated, 0});
    }
  }

  int n() const noexcept { return n_; }
  std::size_t cell_count() const noexcept { return cells_.size(); }
  std::span<const LsmCell> cells() const noexcept { return cells_; }

  const LsmCell& cell(TagId a, TagId b) const { return cells_[index(a, b)]; }

  /// Rating at (a, b); the diagonal reports self-similarity.
  std::optional<int> rating(TagId a, TagId b) const {
    if (a == b) {
      check_tag(a);
      return kSelfSimilarity;
    }
    const auto& c = cell(a, b);
    if (!c.rating) return std::nullopt;
    return c.rating->value();
  }

  void set_rating(TagId a, TagId b, Rating r, CellState state, int round) {
    if (a == b) {
      fail(ErrorKind::InvalidArgument,
           "diagonal cell (" + std::to_string(a) + "," + std::to_string(a) +
               ") is fixed at 5");
    }
    auto& c = cells_[index(a, b)];
    if (state == CellState::Unrated || !transition_allowed(c.state, state)) {
      fail(ErrorKind::InvalidArgument,
           std::string("illegal transition ") + to_string(c.state) + " -> " +
               to_string(state) + " at (" + std::to_string(c.i) + "," +
               std::to_string(c.j) + ")");
    }
    c.rating = r;
    c.state = state;
    c.round = round;
  }

  /// Writes a recorded cell verbatim, bypassing transition checks. Only for
  /// deserialization.
  void restore_cell(TagId a, TagId b, Rating r, CellState state, int round) {
    auto& c = cells_[index(a, b)];
    c.rating = r;
    c.state = state;
    c.round = round;
  }

  std::vector<Pair> sme_sourced_pairs() const {
    std::vector<Pair> out;
    for (const auto& c : cells_) {
      if (is_sme_sourced(c.state)) out.push_back({c.i, c.j});
    }
    return out;
  }

  std::size_t sme_sourced_count() const {
    return static_cast<std::size_t>(std::count_if(
        cells_.begin(), cells_.end(),
        [](const LsmCell& c) { return is_sme_sourced(c.state); }));
  }

  bool operator==(const Lsm&) const = default;

 private:
  void check_tag(TagId t) const {
    if (t < 0 || t >= n_) {
      fail(ErrorKind::InvalidArgument,
           "tag " + std::to_string(t) + " outside 0.." + std::to_string(n_ - 1));
    }
  }

  std::size_t index(TagId a, TagId b) const {
    check_tag(a);
    check_tag(b);
    if (a == b) {
      fail(ErrorKind::InvalidArgument, "diagonal cell has no storage");
    }
    const auto [i, j] = Pair::canonical(a, b);
    const auto si = static_cast<std::size_t>(i);
    const auto sn = static_cast<std::size_t>(n_);
    return si * sn - si * (si + 1) / 2 + static_cast<std::size_t>(j - i - 1);
  }

  int n_;
  std::vector<LsmCell> cells_;
};

inline Lsm new_lsm(int n) { return Lsm(n); }

// ---------------------------------------------------------------------------
// Minimum labeling: initial pair selection

/// Picks ceil(fraction * n(n-1)/2) distinct pairs. Tag coverage comes first:
/// a random perfect matching over the tags, then uniformly random fill.
inline std::vector<Pair> select_initial_pairs(const Lsm& lsm, double fraction,
                                              std::uint64_t seed) {
  require(fraction > 0.0 && fraction <= 1.0,
          "pair fraction must be in (0, 1], got " + std::to_string(fraction));
  for (const auto& c : lsm.cells()) {
    require(c.state == CellState::Unrated,
            "initial pair selection needs an all-unrated LSM");
  }
  const int n = lsm.n();
  const std::size_t want = ceil_fraction(fraction, lsm.cell_count());
  Rng rng(seed);

  std::vector<TagId> order(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) order[static_cast<std::size_t>(t)] = t;
  shuffle(order, rng);

  std::set<Pair> chosen;
  std::vector<Pair> picked;
  auto take = [&](Pair p) {
    if (picked.size() < want && chosen.insert(p).second) picked.push_back(p);
  };
  for (std::size_t k = 0; k + 1 < order.size(); k += 2) {
    take(Pair::canonical(order[k], order[k + 1]));
  }
  if (order.size() % 2 == 1) {
    const TagId last = order.back();
    TagId partner = order[uniform_index(rng, order.size() - 1)];
    take(Pair::canonical(last, partner));
  }

  std::vector<Pair> rest;
  for (const auto& c : lsm.cells()) {
    Pair p{c.i, c.j};
    if (!chosen.count(p)) rest.push_back(p);
  }
  shuffle(rest, rng);
  for (const auto& p : rest) {
    if (picked.size() >= want) break;
    take(p);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

// ---------------------------------------------------------------------------
// SME feedback

struct RatingUpdate {
  TagId i = 0;
  TagId j = 0;
  Rating rating{0};
};

struct OverriddenCell {
  TagId i = 0;
  TagId j = 0;
  int model_rating = 0;
  int sme_rating = 0;
  bool operator==(const OverriddenCell&) const = default;
};

struct NewlyRatedCell {
  TagId i = 0;
  TagId j = 0;
  int sme_rating = 0;
  bool operator==(const NewlyRatedCell&) const = default;
};

struct LsmDiff {
  std::vector<Pair> confirmed;
  std::vector<OverriddenCell> overridden;
  std::vector<NewlyRatedCell> newly_rated;

  std::size_t size() const {
    return confirmed.size() + overridden.size() + newly_rated.size();
  }
  bool empty() const { return size() == 0; }
};

enum class ReviewOutcome { Confirmed, Overridden, NewlyRated };

inline const char* to_string(ReviewOutcome o) {
  switch (o) {
    case ReviewOutcome::Confirmed: return "confirmed";
    case ReviewOutcome::Overridden: return "overridden";
    case ReviewOutcome::NewlyRated: return "newly_rated";
  }
  return "newly_rated";
}

/// How an SME rating relates to what the model inferred for that cell.
inline ReviewOutcome classify_review(const Lsm& model_lsm, TagId i, TagId j,
                                     Rating sme) {
  const auto model = model_lsm.rating(i, j);
  if (!model) return ReviewOutcome::NewlyRated;
  return *model == sme.value() ? ReviewOutcome::Confirmed
                               : ReviewOutcome::Overridden;
}

/// Applies SME ratings on top of `lsm`, classifying each against the model's
/// inference. Repeated updates to one pair collapse to the last one.
inline std::pair<Lsm, LsmDiff> apply_sme_updates(
    const Lsm& lsm, const Lsm& model_lsm, std::span<const RatingUpdate> updates,
    int round) {
  require(lsm.n() == model_lsm.n(), "LSM dimension mismatch");
  std::map<Pair, Rating> latest;
  for (const auto& u : updates) {
    if (u.i == u.j) {
      fail(ErrorKind::InvalidArgument,
           "update targets diagonal cell " + std::to_string(u.i));
    }
    (void)lsm.cell(u.i, u.j);  // range check
    latest.insert_or_assign(Pair::canonical(u.i, u.j), u.rating);
  }

  Lsm out = lsm;
  LsmDiff diff;
  for (const auto& [p, r] : latest) {
    const auto outcome = classify_review(model_lsm, p.i, p.j, r);
    const auto before = out.cell(p.i, p.j).state;
    if (outcome == ReviewOutcome::NewlyRated) {
      out.set_rating(p.i, p.j, r, CellState::SmeRated, round);
      diff.newly_rated.push_back({p.i, p.j, r.value()});
      continue;
    }
    const int model = *model_lsm.rating(p.i, p.j);
    if (before == CellState::Unrated) {
      out.set_rating(p.i, p.j, Rating(model), CellState::ModelInferred, round);
    }
    if (outcome == ReviewOutcome::Confirmed) {
      out.set_rating(p.i, p.j, r, CellState::SmeConfirmed, round);
      diff.confirmed.push_back(p);
    } else {
      out.set_rating(p.i, p.j, r, CellState::SmeOverridden, round);
      diff.overridden.push_back({p.i, p.j, model, r.value()});
    }
  }
  return {std::move(out), std::move(diff)};
}

// ---------------------------------------------------------------------------
// Exact match ratio

/// Fraction of evaluated cells where the integer ratings agree. Cells default
/// to those rated in `truth`.
inline double emr(const Lsm& predicted, const Lsm& truth,
                  std::optional<std::span<const Pair>> cells = std::nullopt) {
  if (predicted.n() != truth.n()) {
    fail(ErrorKind::InvalidArgument,
         "EMR dimension mismatch: " + std::to_string(predicted.n()) + " vs " +
             std::to_string(truth.n()));
  }
  std::size_t evaluated = 0;
  std::size_t matched = 0;
  auto score = [&](TagId i, TagId j) {
    const auto t = truth.rating(i, j);
    if (!t) return;
    ++evaluated;
    const auto p = predicted.rating(i, j);
    if (p && *p == *t) ++matched;
  };
  if (cells) {
    for (const auto& p : *cells) score(p.i, p.j);
  } else {
    for (const auto& c : truth.cells()) score(c.i, c.j);
  }
  if (evaluated == 0) fail(ErrorKind::InvalidArgument, "EMR over zero cells");
  return static_cast<double>(matched) / static_cast<double>(evaluated);
}

// ---------------------------------------------------------------------------
// Review queue

struct ReviewItem {
  TagId i = 0;
  TagId j = 0;
  std::optional<int> model_rating;  // absent before any model exists
  std::optional<int> prior_rating;
  bool operator==(const ReviewItem&) const = default;
};

/// Cells to send back to the SME: every SME cell the model disagrees with,
/// never-rated cells (all of them, or `unrated_cap` picked stratified by
/// model rating and tag coverage), plus `random_extra` uniformly random
/// never-rated cells. Ordered by |model - prior| descending, then (i, j).
inline std::vector<ReviewItem> pending_review_queue(
    const Lsm& lsm, const Lsm& model_lsm, std::size_t random_extra,
    std::uint64_t seed, std::optional<std::size_t> unrated_cap = std::nullopt) {
  require(lsm.n() == model_lsm.n(), "LSM dimension mismatch");
  for (const auto& c : model_lsm.cells()) {
    if (!c.rating) {
      fail(ErrorKind::InvalidArgument,
           "model LSM has no rating at (" + std::to_string(c.i) + "," +
               std::to_string(c.j) + ")");
    }
  }

  std::vector<ReviewItem> queue;
  std::vector<ReviewItem> never_rated;
  for (const auto& c : lsm.cells()) {
    const int model = model_lsm.cell(c.i, c.j).rating->value();
    if (is_sme_sourced(c.state)) {
      if (c.rating->value() != model) {
        queue.push_back({c.i, c.j, model, c.rating->value()});
      }
    } else {
      never_rated.push_back({c.i, c.j, model, std::nullopt});
    }
  }

  Rng rng(seed);
  std::vector<ReviewItem> leftover;
  if (!unrated_cap || *unrated_cap >= never_rated.size()) {
    queue.insert(queue.end(), never_rated.begin(), never_rated.end());
  } else {
    std::vector<std::vector<ReviewItem>> buckets(Rating::kMax + 1);
    for (const auto& item : never_rated) {
      buckets[static_cast<std::size_t>(*item.model_rating)].push_back(item);
    }
    for (auto& b : buckets) shuffle(b, rng);
    std::vector<int> coverage(static_cast<std::size_t>(lsm.n()), 0);
    std::size_t taken = 0;
    bool progress = true;
    while (taken < *unrated_cap && progress) {
      progress = false;
      for (auto& b : buckets) {
        if (taken >= *unrated_cap || b.empty()) continue;
        auto best = b.begin();
        for (auto it = b.begin(); it != b.end(); ++it) {
          const int cov = coverage[static_cast<std::size_t>(it->i)] +
                          coverage[static_cast<std::size_t>(it->j)];
          const int best_cov = coverage[static_cast<std::size_t>(best->i)] +
                               coverage[static_cast<std::size_t>(best->j)];
          if (cov < best_cov) best = it;
        }
        ++coverage[static_cast<std::size_t>(best->i)];
        ++coverage[static_cast<std::size_t>(best->j)];
        queue.push_back(*best);
        b.erase(best);
        ++taken;
        progress = true;
      }
    }
    for (auto& b : buckets) leftover.insert(leftover.end(), b.begin(), b.end());
    std::sort(leftover.begin(), leftover.end(),
              [](const ReviewItem& a, const ReviewItem& b) {
                return Pair{a.i, a.j} < Pair{b.i, b.j};
              });
    shuffle(leftover, rng);
    for (std::size_t k = 0; k < random_extra && k < leftover.size(); ++k) {
      queue.push_back(leftover[k]);
    }
  }

  auto gap = [](const ReviewItem& r) {
    return r.prior_rating && r.model_rating
               ? std::abs(*r.model_rating - *r.prior_rating)
               : 0;
  };
  std::sort(queue.begin(), queue.end(),
            [&](const ReviewItem& a, const ReviewItem& b) {
              if (gap(a) != gap(b)) return gap(a) > gap(b);
              return Pair{a.i, a.j} < Pair{b.i, b.j};
            });
  return queue;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const Lsm& lsm) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : lsm.cells()) {
    nlohmann::json cell;
    cell["i"] = c.i;
    cell["j"] = c.j;
    cell["rating"] =
        c.rating ? nlohmann::json(c.rating->value()) : nlohmann::json(nullptr);
    cell["state"] = to_string(c.state);
    cell["round"] = c.round;
    cells.push_back(std::move(cell));
  }
  return {{"n", lsm.n()}, {"cells", std::move(cells)}};
}

inline Lsm lsm_from_json(const nlohmann::json& j) {
  try {
    Lsm lsm(j.at("n").get<int>());
    std::set<Pair> seen;
    for (const auto& c : j.at("cells")) {
      const TagId i = c.at("i").get<int>();
      const TagId k = c.at("j").get<int>();
      if (i >= k) {
        fail(ErrorKind::Corrupt, "LSM cell (" + std::to_string(i) + "," +
                                     std::to_string(k) + ") must have i < j");
      }
      if (i < 0 || k >= lsm.n()) {
        fail(ErrorKind::Corrupt, "LSM cell (" + std::to_string(i) + "," +
                                     std::to_string(k) + ") outside the matrix");
      }
      if (!seen.insert({i, k}).second) {
        fail(ErrorKind::Corrupt, "duplicate LSM cell (" + std::to_string(i) +
                                     "," + std::to_string(k) + ")");
      }
      const auto state = parse_cell_state(c.at("state").get<std::string>());
      const auto& r = c.at("rating");
      if (state == CellState::Unrated) {
        if (!r.is_null()) {
          fail(ErrorKind::Corrupt, "unrated cell carries a rating");
        }
        (void)lsm.cell(i, k);
        continue;
      }
      if (r.is_null()) fail(ErrorKind::Corrupt, "rated cell has null rating");
      lsm.restore_cell(i, k, Rating(r.get<int>()), state,
                       c.value("round", 0));
    }
    return lsm;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corrupt, std::string("malformed LSM json: ") + e.what());
  }
}

}  // namespace simlabel
