// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "simlabel/common.hpp"
#include "simlabel/corpus.hpp"
#include "simlabel/lsm.hpp"

namespace simlabel {

/// One regression record: the CBD of a company, the ITD of a target tag, and
/// the similarity the pair should have. `source` is the rated tag pair the
/// record came from; a self record has source.i == source.j.
struct Triplet {
  std::string cbd;
  std::string itd;
  double score = 0.0;
  Pair source;
  std::string company_id;
  TagId target_tag = -1;  // -1 when loaded from a dump without a corpus

  bool self() const noexcept { return source.i == source.j; }
  bool operator==(const Triplet&) const = default;
};

struct SamplingConfig {
  std::size_t per_stratum = 8;  // X companies per (ITD, rating) stratum
  bool include_self = true;
  std::uint64_t seed = 0;

  void validate() const { require(per_stratum >= 1, "per_stratum must be >= 1"); }
};

inline double normalize_rating(Rating r) {
  return static_cast<double>(r.value()) / 5.0;
}

namespace detail {

/// Up to `x` companies (seeded draw) from `pool`, returned in corpus order.
inline std::vector<std::size_t> sample_companies(std::vector<std::size_t> pool,
                                                 std::size_t x,
                                                 std::uint64_t seed) {
  if (pool.size() > x) {
    Rng rng(seed);
    shuffle(pool, rng);
    pool.resize(x);
    std::sort(pool.begin(), pool.end());
  }
  return pool;
}

}  // namespace detail

/// Expansion of one rated pair: companies noisy-labeled with i (and not
/// j) meet ITD_j at r/5, and symmetrically for j. Companies already carrying
/// the target tag are skipped.
inline std::vector<Triplet> expand_pair(
    TagId i, TagId j, Rating r, const Corpus& corpus, const SamplingConfig& cfg,
    std::vector<std::string>* warnings = nullptr) {
  cfg.validate();
  require(i != j, "expand_pair needs an off-diagonal pair");
  require(i >= 0 && j >= 0 && i < corpus.n() && j < corpus.n(),
          "expand_pair tag out of range");
  const auto p = Pair::canonical(i, j);
  const double score = normalize_rating(r);
  std::vector<Triplet> out;
  for (int side = 0; side < 2; ++side) {
    const TagId from = side == 0 ? p.i : p.j;
    const TagId to = side == 0 ? p.j : p.i;
    std::vector<std::size_t> pool;
    for (std::size_t c : corpus.companies_with_noisy_tag(from)) {
      if (!contains(corpus.companies()[c].noisy_tags, to)) pool.push_back(c);
    }
    const auto picked = detail::sample_companies(
        std::move(pool), cfg.per_stratum,
        derive_seed(cfg.seed, static_cast<std::uint64_t>(p.i),
                    static_cast<std::uint64_t>(p.j),
                    static_cast<std::uint64_t>(side)));
    for (std::size_t c : picked) {
      const auto& rec = corpus.companies()[c];
      out.push_back({rec.cbd, corpus.tag(to).itd, score, p, rec.company_id, to});
    }
  }
  if (out.empty() && warnings) {
    warnings->push_back("pair (" + std::to_string(p.i) + "," +
                        std::to_string(p.j) + ") expanded to no triplets");
  }
  return out;
}

/// (CBD, own ITD, 1.0) anchors: up to X companies per tag.
inline std::vector<Triplet> self_triplets(const Corpus& corpus,
                                          const SamplingConfig& cfg) {
  cfg.validate();
  std::vector<Triplet> out;
  if (!cfg.include_self) return out;
  for (TagId t = 0; t < corpus.n(); ++t) {
    const auto picked = detail::sample_companies(
        corpus.companies_with_noisy_tag(t), cfg.per_stratum,
        derive_seed(cfg.seed, static_cast<std::uint64_t>(t),
                    static_cast<std::uint64_t>(t), 2ULL));
    for (std::size_t c : picked) {
      const auto& rec = corpus.companies()[c];
      out.push_back({rec.cbd, corpus.tag(t).itd, 1.0, Pair{t, t},
                     rec.company_id, t});
    }
  }
  return out;
}

namespace detail {

using TripletKey = std::pair<std::string, TagId>;

inline bool source_order(const Triplet& a, const Triplet& b) {
  return std::tie(a.source, a.company_id, a.target_tag) <
         std::tie(b.source, b.company_id, b.target_tag);
}

}  // namespace detail

/// Training set for the current LSM: expansions of every SME-sourced cell
/// plus self anchors, deduplicated on (company, target tag) with the most
/// recently rated cell winning over older cells and over self anchors, then
/// shuffled under the seed.
inline std::vector<Triplet> build_training_set(
    const Lsm& lsm, const Corpus& corpus, const SamplingConfig& cfg,
    std::vector<std::string>* warnings = nullptr) {
  require(lsm.n() == corpus.n(), "LSM and corpus disagree on tag count");
  const auto rated = lsm.sme_sourced_pairs();
  require(!rated.empty(), "training set needs at least one SME-rated cell");

  struct Entry {
    Triplet triplet;
    int priority;
  };
  std::map<detail::TripletKey, Entry> chosen;
  for (auto& t : self_triplets(corpus, cfg)) {
    chosen.emplace(detail::TripletKey{t.company_id, t.target_tag},
                   Entry{std::move(t), -1});
  }
  for (const auto& p : rated) {
    const auto& cell = lsm.cell(p.i, p.j);
    for (auto& t : expand_pair(p.i, p.j, *cell.rating, corpus, cfg, warnings)) {
      detail::TripletKey key{t.company_id, t.target_tag};
      auto it = chosen.find(key);
      if (it == chosen.end()) {
        chosen.emplace(std::move(key), Entry{std::move(t), cell.round});
      } else if (cell.round > it->second.priority) {
        it->second = Entry{std::move(t), cell.round};
      }
    }
  }
  std::vector<Triplet> out;
  out.reserve(chosen.size());
  for (auto& [key, e] : chosen) out.push_back(std::move(e.triplet));
  if (out.empty()) {
    fail(ErrorKind::InvalidArgument, "no triplets could be produced");
  }
  std::sort(out.begin(), out.end(), detail::source_order);
  Rng rng(derive_seed(cfg.seed, 0x5487ULL));
  shuffle(out, rng);
  return out;
}

/// Appends expansions for every reviewed cell. A new triplet replaces any
/// existing one with the same (company, target tag).
inline std::vector<Triplet> augment_from_diff(
    const std::vector<Triplet>& existing, const LsmDiff& diff, const Lsm& lsm,
    const Corpus& corpus, const SamplingConfig& cfg,
    std::vector<std::string>* warnings = nullptr) {
  if (diff.empty()) return existing;
  require(lsm.n() == corpus.n(), "LSM and corpus disagree on tag count");

  std::vector<std::pair<Pair, Rating>> cells;
  for (const auto& p : diff.confirmed) {
    cells.emplace_back(p, Rating(*lsm.rating(p.i, p.j)));
  }
  for (const auto& o : diff.overridden) {
    cells.emplace_back(Pair{o.i, o.j}, Rating(o.sme_rating));
  }
  for (const auto& nr : diff.newly_rated) {
    cells.emplace_back(Pair{nr.i, nr.j}, Rating(nr.sme_rating));
  }
  std::sort(cells.begin(), cells.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<Triplet> fresh;
  std::map<detail::TripletKey, std::size_t> fresh_keys;
  for (const auto& [p, r] : cells) {
    for (auto& t : expand_pair(p.i, p.j, r, corpus, cfg, warnings)) {
      detail::TripletKey key{t.company_id, t.target_tag};
      if (fresh_keys.emplace(key, fresh.size()).second) {
        fresh.push_back(std::move(t));
      }
    }
  }
  std::vector<Triplet> out;
  out.reserve(existing.size() + fresh.size());
  for (const auto& t : existing) {
    if (!fresh_keys.count({t.company_id, t.target_tag})) out.push_back(t);
  }
  out.insert(out.end(), fresh.begin(), fresh.end());
  return out;
}

// ---------------------------------------------------------------------------
// Dump format

/// `with_target` adds the target tag id, which the dump format leaves out.
inline nlohmann::ordered_json to_json(const Triplet& t, bool with_target = false) {
  nlohmann::ordered_json j;
  j["cbd"] = t.cbd;
  j["itd"] = t.itd;
  j["score"] = t.score;
  if (t.self()) {
    j["pair"] = "self:" + std::to_string(t.source.i);
  } else {
    j["pair"] = {t.source.i, t.source.j};
  }
  j["company_id"] = t.company_id;
  if (with_target) j["target"] = t.target_tag;
  return j;
}

inline std::string triplets_jsonl(const std::vector<Triplet>& triplets,
                                  bool with_target = false) {
  std::string out;
  for (const auto& t : triplets) out += to_json(t, with_target).dump() + "\n";
  return out;
}

inline Triplet triplet_from_json(const nlohmann::json& j) {
  Triplet t;
  t.cbd = j.at("cbd").get<std::string>();
  t.itd = j.at("itd").get<std::string>();
  t.score = j.at("score").get<double>();
  t.company_id = j.at("company_id").get<std::string>();
  const auto& pair = j.at("pair");
  if (pair.is_string()) {
    const auto s = pair.get<std::string>();
    if (s.rfind("self:", 0) != 0) {
      fail(ErrorKind::InvalidArgument, "bad triplet pair '" + s + "'");
    }
    const TagId tag = std::stoi(s.substr(5));
    t.source = {tag, tag};
    t.target_tag = tag;
  } else {
    t.source = Pair::canonical(pair.at(0).get<int>(), pair.at(1).get<int>());
  }
  if (j.contains("target")) t.target_tag = j.at("target").get<int>();
  require(t.score >= 0.0 && t.score <= 1.0, "triplet score outside [0, 1]");
  return t;
}

inline std::vector<Triplet> load_triplets(const std::filesystem::path& path) {
  std::vector<Triplet> out;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) {
    out.push_back(triplet_from_json(j));
  });
  return out;
}

}  // namespace simlabel
