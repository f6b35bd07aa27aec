// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "simlabel/common.hpp"
#include "simlabel/lsm.hpp"

namespace simlabel {

struct Tag {
  TagId tag_id = 0;
  std::string name;
  std::string itd;  // industry tag description

  bool operator==(const Tag&) const = default;
};

struct CompanyRecord {
  std::string company_id;
  std::string cbd;  // company business description
  std::vector<TagId> noisy_tags;
  std::optional<std::vector<TagId>> gold_tags;

  bool operator==(const CompanyRecord&) const = default;
};

/// Validated, immutable collection of tags and companies. Tag ids are dense
/// (0..n-1) and `tags()[t].tag_id == t`; tag sets are stored sorted.
class Corpus {
 public:
  Corpus() = default;

  Corpus(std::vector<Tag> tags, std::vector<CompanyRecord> companies)
      : tags_(std::move(tags)), companies_(std::move(companies)) {
    std::sort(tags_.begin(), tags_.end(),
              [](const Tag& a, const Tag& b) { return a.tag_id < b.tag_id; });
    for (std::size_t t = 0; t < tags_.size(); ++t) {
      const auto& tag = tags_[t];
      if (tag.tag_id != static_cast<TagId>(t)) {
        fail(ErrorKind::InvalidArgument,
             t > 0 && tags_[t - 1].tag_id == tag.tag_id
                 ? "duplicate tag_id " + std::to_string(tag.tag_id)
                 : "tag ids are not dense: expected " + std::to_string(t) +
                       ", found " + std::to_string(tag.tag_id));
      }
      require(!tag.name.empty(), "tag " + std::to_string(t) + " has empty name");
      require(!tag.itd.empty(), "tag " + std::to_string(t) + " has empty itd");
    }
    for (std::size_t c = 0; c < companies_.size(); ++c) {
      auto& rec = companies_[c];
      require(!rec.cbd.empty(), "company " + rec.company_id + " has empty cbd");
      require(!rec.noisy_tags.empty(),
              "company " + rec.company_id + " has no noisy tags");
      rec.noisy_tags = normalized(std::move(rec.noisy_tags));
      check_refs(rec, rec.noisy_tags);
      if (rec.gold_tags) {
        rec.gold_tags = normalized(std::move(*rec.gold_tags));
        check_refs(rec, *rec.gold_tags);
      }
      if (!by_id_.emplace(rec.company_id, c).second) {
        fail(ErrorKind::InvalidArgument,
             "duplicate company_id " + rec.company_id);
      }
    }
  }

  int n() const noexcept { return static_cast<int>(tags_.size()); }
  const std::vector<Tag>& tags() const noexcept { return tags_; }
  const std::vector<CompanyRecord>& companies() const noexcept {
    return companies_;
  }
  const Tag& tag(TagId t) const { return tags_.at(static_cast<std::size_t>(t)); }

  const CompanyRecord* find(const std::string& company_id) const {
    auto it = by_id_.find(company_id);
    return it == by_id_.end() ? nullptr : &companies_[it->second];
  }

  /// Company indices carrying tag t in their noisy set, in corpus order.
  std::vector<std::size_t> companies_with_noisy_tag(TagId t) const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < companies_.size(); ++c) {
      if (contains(companies_[c].noisy_tags, t)) out.push_back(c);
    }
    return out;
  }

  bool operator==(const Corpus& o) const {
    return tags_ == o.tags_ && companies_ == o.companies_;
  }

 private:
  void check_refs(const CompanyRecord& rec,
                  const std::vector<TagId>& tags) const {
    for (TagId t : tags) {
      if (t < 0 || t >= n()) {
        fail(ErrorKind::InvalidArgument,
             "company " + rec.company_id + " references unknown tag " +
                 std::to_string(t));
      }
    }
  }

  std::vector<Tag> tags_;
  std::vector<CompanyRecord> companies_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// ---------------------------------------------------------------------------
// Noise taxonomy

enum class NoiseClass { Exact, Partial, Incorrect };

inline const char* to_string(NoiseClass c) {
  switch (c) {
    case NoiseClass::Exact: return "exact";
    case NoiseClass::Partial: return "partial";
    case NoiseClass::Incorrect: return "incorrect";
  }
  return "exact";
}

inline constexpr std::array<NoiseClass, 3> kNoiseClasses = {
    NoiseClass::Exact, NoiseClass::Partial, NoiseClass::Incorrect};

/// Exact when the sets agree, Incorrect when they are disjoint, Partial
/// otherwise.
inline NoiseClass classify_noise(const CompanyRecord& rec) {
  if (!rec.gold_tags) {
    fail(ErrorKind::InvalidArgument,
         "company " + rec.company_id + " has no gold tags to classify against");
  }
  const auto noisy = normalized(rec.noisy_tags);
  const auto gold = normalized(*rec.gold_tags);
  if (noisy == gold) return NoiseClass::Exact;
  return intersection_size(noisy, gold) == 0 ? NoiseClass::Incorrect
                                             : NoiseClass::Partial;
}

struct NoiseProfile {
  double exact_frac = 0.26;
  double incorrect_frac = 0.24;
  double partial_frac = 0.50;

  void validate() const {
    for (double f : {exact_frac, incorrect_frac, partial_frac}) {
      require(f >= 0.0 && f <= 1.0, "noise fraction outside [0, 1]");
    }
    require(std::abs(exact_frac + incorrect_frac + partial_frac - 1.0) <= 1e-9,
            "noise fractions must sum to 1");
  }
};

// ---------------------------------------------------------------------------
// JSON Lines I/O

namespace detail {

inline std::vector<TagId> parse_tag_list(const nlohmann::json& j) {
  std::vector<TagId> out;
  for (const auto& v : j) out.push_back(v.get<int>());
  return out;
}

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      fn(j, lineno);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::InvalidArgument, path.string() + ":" +
                                           std::to_string(lineno) +
                                           ": malformed record: " + e.what());
    }
  }
}

}  // namespace detail

inline Corpus load_corpus(const std::filesystem::path& tags_path,
                          const std::filesystem::path& companies_path) {
  std::vector<Tag> tags;
  std::map<TagId, std::size_t> tag_lines;
  detail::for_each_jsonl(tags_path, [&](const nlohmann::json& j,
                                        std::size_t line) {
    Tag t{j.at("tag_id").get<int>(), j.at("name").get<std::string>(),
          j.at("itd").get<std::string>()};
    auto [it, fresh] = tag_lines.emplace(t.tag_id, line);
    if (!fresh) {
      fail(ErrorKind::InvalidArgument,
           tags_path.string() + ": duplicate tag_id " +
               std::to_string(t.tag_id) + " at lines " +
               std::to_string(it->second) + " and " + std::to_string(line));
    }
    if (t.itd.empty()) {
      fail(ErrorKind::InvalidArgument, tags_path.string() + ":" +
                                           std::to_string(line) +
                                           ": empty itd");
    }
    tags.push_back(std::move(t));
  });

  std::vector<CompanyRecord> companies;
  std::map<std::string, std::size_t> company_lines;
  const auto n = static_cast<TagId>(tags.size());
  detail::for_each_jsonl(companies_path, [&](const nlohmann::json& j,
                                             std::size_t line) {
    CompanyRecord rec;
    rec.company_id = j.at("company_id").get<std::string>();
    rec.cbd = j.at("cbd").get<std::string>();
    rec.noisy_tags = detail::parse_tag_list(j.at("noisy_tags"));
    if (j.contains("gold_tags") && !j.at("gold_tags").is_null()) {
      rec.gold_tags = detail::parse_tag_list(j.at("gold_tags"));
    }
    const std::string where =
        companies_path.string() + ":" + std::to_string(line) + ": ";
    auto [it, fresh] = company_lines.emplace(rec.company_id, line);
    if (!fresh) {
      fail(ErrorKind::InvalidArgument,
           where + "duplicate company_id " + rec.company_id +
               " (first seen at line " + std::to_string(it->second) + ")");
    }
    if (rec.cbd.empty()) {
      fail(ErrorKind::InvalidArgument, where + "empty cbd for " + rec.company_id);
    }
    auto check = [&](const std::vector<TagId>& ts) {
      for (TagId t : ts) {
        if (t < 0 || t >= n) {
          fail(ErrorKind::InvalidArgument,
               where + "company " + rec.company_id + " references unknown tag " +
                   std::to_string(t));
        }
      }
    };
    check(rec.noisy_tags);
    if (rec.gold_tags) check(*rec.gold_tags);
    companies.push_back(std::move(rec));
  });
  return Corpus(std::move(tags), std::move(companies));
}

inline Corpus load_corpus_dir(const std::filesystem::path& dir) {
  return load_corpus(dir / "tags.jsonl", dir / "companies.jsonl");
}

inline std::string tags_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& t : corpus.tags()) {
    nlohmann::ordered_json j;
    j["tag_id"] = t.tag_id;
    j["name"] = t.name;
    j["itd"] = t.itd;
    out += j.dump() + "\n";
  }
  return out;
}

inline std::string companies_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& c : corpus.companies()) {
    nlohmann::ordered_json j;
    j["company_id"] = c.company_id;
    j["cbd"] = c.cbd;
    j["noisy_tags"] = c.noisy_tags;
    if (c.gold_tags) j["gold_tags"] = *c.gold_tags;
    out += j.dump() + "\n";
  }
  return out;
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "tags.jsonl", tags_jsonl(corpus));
  write_file_atomic(dir / "companies.jsonl", companies_jsonl(corpus));
}

// ---------------------------------------------------------------------------
// Benchmark split

struct BenchmarkSplit {
  Corpus train;
  Corpus benchmark;
  std::vector<std::string> warnings;
};

/// Holds out round(fraction * candidates) gold-labeled companies, stratified
/// by primary tag (lowest gold tag id). Strata with at least two companies
/// land in both splits.
inline BenchmarkSplit split_benchmark(const Corpus& corpus, double fraction,
                                      std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0,
          "benchmark fraction must be in (0, 1), got " +
              std::to_string(fraction));
  const auto& companies = corpus.companies();
  std::map<TagId, std::vector<std::size_t>> strata;
  std::vector<std::size_t> no_gold;
  for (std::size_t c = 0; c < companies.size(); ++c) {
    const auto& g = companies[c].gold_tags;
    if (!g || g->empty()) {
      no_gold.push_back(c);
    } else {
      strata[g->front()].push_back(c);
    }
  }
  std::size_t candidates = 0;
  for (const auto& [t, members] : strata) candidates += members.size();
  const auto target = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(candidates)));

  BenchmarkSplit split;
  if (!no_gold.empty()) {
    split.warnings.push_back(std::to_string(no_gold.size()) +
                             " companies without gold tags kept in train");
  }

  struct Quota {
    TagId tag;
    std::size_t lo, hi, take;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [t, members] : strata) {
    const std::size_t size = members.size();
    const double exact = fraction * static_cast<double>(size);
    Quota q{t, 0, size, static_cast<std::size_t>(std::floor(exact)), 0.0};
    q.remainder = exact - std::floor(exact);
    if (size >= 2) {
      q.lo = 1;
      q.hi = size - 1;
    } else {
      split.warnings.push_back("tag " + std::to_string(t) +
                               " has a single company; it cannot appear in "
                               "both splits");
    }
    q.take = std::clamp(q.take, q.lo, q.hi);
    assigned += q.take;
    quotas.push_back(q);
  }
  // Largest remainder to hit the overall target, respecting per-stratum caps.
  std::vector<std::size_t> order(quotas.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return quotas[a].remainder > quotas[b].remainder;
  });
  while (assigned < target) {
    bool moved = false;
    for (std::size_t k : order) {
      if (assigned >= target) break;
      if (quotas[k].take < quotas[k].hi) {
        ++quotas[k].take;
        ++assigned;
        moved = true;
      }
    }
    if (!moved) break;
  }
  while (assigned > target) {
    bool moved = false;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if (assigned <= target) break;
      if (quotas[*it].take > quotas[*it].lo) {
        --quotas[*it].take;
        --assigned;
        moved = true;
      }
    }
    if (!moved) break;
  }

  std::vector<bool> in_benchmark(companies.size(), false);
  for (const auto& q : quotas) {
    auto members = strata[q.tag];
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(q.tag)));
    shuffle(members, rng);
    for (std::size_t k = 0; k < q.take; ++k) in_benchmark[members[k]] = true;
  }
  std::vector<CompanyRecord> train, bench;
  for (std::size_t c = 0; c < companies.size(); ++c) {
    (in_benchmark[c] ? bench : train).push_back(companies[c]);
  }
  split.train = Corpus(corpus.tags(), std::move(train));
  split.benchmark = Corpus(corpus.tags(), std::move(bench));
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation

struct SynthOptions {
  int pool_size = 20;       // theme words per tag; multiple of 5
  int min_unique = 8;       // words a tag never shares
  double relate_prob = 0.45;
  int words_per_tag_min = 5;
  int words_per_tag_max = 8;
};

struct SyntheticCorpus {
  Corpus corpus;
  Lsm ground_truth{2};
};

namespace detail {

inline std::string pseudo_word(std::uint64_t index, std::uint64_t salt) {
  static constexpr std::string_view kOnset = "bdfgklmnprstvzh";
  static constexpr std::string_view kVowel = "aeiou";
  constexpr std::uint64_t kSyllables = 15 * 5;
  constexpr std::uint64_t kSpace = kSyllables * kSyllables * kSyllables;
  std::uint64_t x = (index * 104729ULL + (salt % kSpace)) % kSpace;
  std::string w;
  for (int s = 0; s < 3; ++s) {
    const auto syl = x % kSyllables;
    x /= kSyllables;
    w += kOnset[syl / 5];
    w += kVowel[syl % 5];
  }
  return w;
}

inline std::string capitalized(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

inline int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

}  // namespace detail

/// Builds a corpus whose tag similarity is constructible by design: every tag
/// owns a pool of theme words and related tags share word blocks, so the
/// ground-truth rating of a pair is round(5 * |shared| / pool_size).
inline SyntheticCorpus generate_synthetic(int n_tags, int n_companies,
                                          const NoiseProfile& profile,
                                          std::uint64_t seed,
                                          const SynthOptions& opt = {}) {
  require(n_tags >= 3, "need at least 3 tags");
  require(n_companies >= 10 * n_tags, "need at least 10 companies per tag");
  require(opt.pool_size % 5 == 0 && opt.pool_size >= 5,
          "pool_size must be a positive multiple of 5");
  require(opt.min_unique >= 1 && opt.min_unique < opt.pool_size,
          "min_unique must be in [1, pool_size)");
  profile.validate();

  const auto n = static_cast<std::size_t>(n_tags);
  const int unit = opt.pool_size / 5;
  Rng rng(derive_seed(seed, 0x7e3a));
  const std::uint64_t word_salt = derive_seed(seed, 0x9d1) % 421875ULL;
  std::uint64_t next_word = 0;
  auto fresh_word = [&] { return detail::pseudo_word(next_word++, word_salt); };

  // Theme pools: shared blocks first, then unique fill.
  std::vector<std::vector<std::string>> pools(n);
  std::vector<Pair> pairs;
  for (TagId i = 0; i < n_tags; ++i) {
    for (TagId j = i + 1; j < n_tags; ++j) pairs.push_back({i, j});
  }
  shuffle(pairs, rng);
  const std::array<double, 4> level_weights = {0.3, 0.3, 0.25, 0.15};
  for (const auto& p : pairs) {
    if (uniform01(rng) >= opt.relate_prob) continue;
    const auto level = 1 + weighted_index(
        rng, std::vector<double>(level_weights.begin(), level_weights.end()));
    const int words = static_cast<int>(level) * unit;
    auto& a = pools[static_cast<std::size_t>(p.i)];
    auto& b = pools[static_cast<std::size_t>(p.j)];
    const int room = opt.pool_size - opt.min_unique;
    if (static_cast<int>(a.size()) + words > room ||
        static_cast<int>(b.size()) + words > room) {
      continue;
    }
    for (int w = 0; w < words; ++w) {
      auto word = fresh_word();
      a.push_back(word);
      b.push_back(word);
    }
  }
  for (auto& pool : pools) {
    while (static_cast<int>(pool.size()) < opt.pool_size) pool.push_back(fresh_word());
  }

  Lsm truth(n_tags);
  for (TagId i = 0; i < n_tags; ++i) {
    const auto sorted_i = [&] {
      auto v = pools[static_cast<std::size_t>(i)];
      std::sort(v.begin(), v.end());
      return v;
    }();
    for (TagId j = i + 1; j < n_tags; ++j) {
      auto sorted_j = pools[static_cast<std::size_t>(j)];
      std::sort(sorted_j.begin(), sorted_j.end());
      std::vector<std::string> common;
      std::set_intersection(sorted_i.begin(), sorted_i.end(), sorted_j.begin(),
                            sorted_j.end(), std::back_inserter(common));
      const int r = detail::round_half_up(
          5.0 * static_cast<double>(common.size()) / opt.pool_size);
      truth.set_rating(i, j, Rating(r), CellState::SmeRated, 0);
    }
  }

  std::vector<Tag> tags;
  for (TagId t = 0; t < n_tags; ++t) {
    auto words = pools[static_cast<std::size_t>(t)];
    shuffle(words, rng);
    std::string name = detail::capitalized(fresh_word());
    std::string itd = name + " covers ";
    for (std::size_t w = 0; w < words.size(); ++w) {
      itd += words[w];
      itd += w + 1 < words.size() ? ", " : ".";
    }
    tags.push_back({t, name, itd});
  }

  auto similarity_weights = [&](const std::vector<TagId>& anchor,
                                const std::vector<TagId>& exclude) {
    std::vector<double> w(n, 0.0);
    for (TagId t = 0; t < n_tags; ++t) {
      if (contains(exclude, t)) continue;
      int best = 0;
      for (TagId a : anchor) best = std::max(best, *truth.rating(a, t));
      w[static_cast<std::size_t>(t)] = 1.0 + 3.0 * best;
    }
    return w;
  };

  // Noise classes by exact quota (largest remainder), then shuffled.
  const std::array<double, 3> fracs = {profile.exact_frac, profile.partial_frac,
                                       profile.incorrect_frac};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t total = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = fracs[k] * n_companies;
    counts[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[k] = exact - static_cast<double>(counts[k]);
    total += counts[k];
  }
  while (total < static_cast<std::size_t>(n_companies)) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k) {
      if (rem[k] > rem[best]) best = k;
    }
    ++counts[best];
    rem[best] = -1.0;
    ++total;
  }
  std::vector<NoiseClass> classes;
  for (std::size_t k = 0; k < 3; ++k) {
    const NoiseClass cls = k == 0 ? NoiseClass::Exact
                           : k == 1 ? NoiseClass::Partial
                                    : NoiseClass::Incorrect;
    classes.insert(classes.end(), counts[k], cls);
  }
  shuffle(classes, rng);

  static constexpr std::array<std::string_view, 8> kFiller = {
      "leading", "global", "regional", "established",
      "growing", "trusted", "independent", "specialist"};

  std::vector<CompanyRecord> companies;
  for (int c = 0; c < n_companies; ++c) {
    // Gold set: primary tag round-robin, extra tags biased toward related ones.
    std::vector<TagId> gold = {static_cast<TagId>(c % n_tags)};
    const double u = uniform01(rng);
    const int want = std::min(u < 0.5 ? 1 : (u < 0.85 ? 2 : 3), n_tags - 1);
    while (static_cast<int>(gold.size()) < want) {
      const auto sorted = normalized(gold);
      const auto pick = weighted_index(rng, similarity_weights(sorted, sorted));
      gold.push_back(static_cast<TagId>(pick));
    }

    std::vector<std::string> words;
    for (TagId t : gold) {
      auto pool = pools[static_cast<std::size_t>(t)];
      shuffle(pool, rng);
      const auto take = static_cast<std::size_t>(
          opt.words_per_tag_min +
          static_cast<int>(uniform_index(
              rng, static_cast<std::uint64_t>(opt.words_per_tag_max -
                                              opt.words_per_tag_min + 1))));
      words.insert(words.end(), pool.begin(),
                   pool.begin() + static_cast<std::ptrdiff_t>(std::min(take, pool.size())));
    }
    shuffle(words, rng);
    const std::string company_name = detail::capitalized(fresh_word());
    std::string cbd = company_name + " is a " +
                      std::string(kFiller[uniform_index(rng, kFiller.size())]) +
                      " company working in ";
    for (std::size_t w = 0; w < words.size(); ++w) {
      cbd += words[w];
      if (w + 2 == words.size()) {
        cbd += " and ";
      } else if (w + 1 < words.size()) {
        cbd += ", ";
      }
    }
    cbd += ".";

    gold = normalized(gold);
    std::vector<TagId> noisy;
    switch (classes[static_cast<std::size_t>(c)]) {
      case NoiseClass::Exact:
        noisy = gold;
        break;
      case NoiseClass::Partial: {
        const bool can_add = static_cast<int>(gold.size()) < n_tags;
        const bool drop = gold.size() >= 2 && (!can_add || uniform01(rng) < 0.5);
        noisy = gold;
        if (drop) {
          noisy.erase(noisy.begin() +
                      static_cast<std::ptrdiff_t>(uniform_index(rng, noisy.size())));
        } else {
          noisy.push_back(static_cast<TagId>(
              weighted_index(rng, similarity_weights(gold, gold))));
        }
        break;
      }
      case NoiseClass::Incorrect: {
        const int size = std::min(uniform01(rng) < 0.3 ? 2 : 1,
                                  n_tags - static_cast<int>(gold.size()));
        std::vector<TagId> excluded = gold;
        while (static_cast<int>(noisy.size()) < size) {
          const auto pick = static_cast<TagId>(
              weighted_index(rng, similarity_weights(gold, normalized(excluded))));
          noisy.push_back(pick);
          excluded.push_back(pick);
        }
        break;
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "C%05d", c);
    companies.push_back({id, cbd, normalized(noisy), gold});
  }
  // Round-robin primaries would otherwise order companies by tag.
  shuffle(companies, rng);

  return {Corpus(std::move(tags), std::move(companies)), std::move(truth)};
}

}  // namespace simlabel
