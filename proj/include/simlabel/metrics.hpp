// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <span>
#include <vector>

#include <json.hpp>

#include "simlabel/corpus.hpp"
#include "simlabel/inference.hpp"

namespace simlabel {

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

inline PrecisionRecall precision_recall(const std::vector<TagId>& pred,
                                        const std::vector<TagId>& gold) {
  require(!pred.empty(), "precision needs a nonempty prediction set");
  require(!gold.empty(), "recall needs a nonempty gold set");
  const auto p = normalized(pred);
  const auto g = normalized(gold);
  const auto hit = static_cast<double>(intersection_size(p, g));
  return {hit / static_cast<double>(p.size()), hit / static_cast<double>(g.size())};
}

/// Macro-averaged statistics over one group of companies. The ranking maps
/// are empty for the noisy baseline.
struct SubsetReport {
  std::size_t count = 0;
  double ap = 0.0;
  double ar = 0.0;
  std::map<int, double> p_at_k;
  std::map<int, double> sim_at_k;
};

struct EvalReport {
  int k = 0;
  double ap = 0.0;
  double ar = 0.0;
  std::map<int, double> p_at_k;
  std::map<int, double> sim_at_k;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // companies without gold tags
  std::map<NoiseClass, std::size_t> class_counts;
  std::map<NoiseClass, SubsetReport> subsets;
};

namespace detail {

struct Accumulator {
  std::size_t count = 0;
  double sum_p = 0.0;
  double sum_r = 0.0;
  std::map<int, double> sum_p_at;
  std::map<int, double> sum_sim_at;

  SubsetReport finish() const {
    SubsetReport s;
    s.count = count;
    if (count == 0) return s;
    const auto n = static_cast<double>(count);
    s.ap = sum_p / n;
    s.ar = sum_r / n;
    for (const auto& [k, v] : sum_p_at) s.p_at_k[k] = v / n;
    for (const auto& [k, v] : sum_sim_at) s.sim_at_k[k] = v / n;
    return s;
  }
};

inline EvalReport assemble(int k, const Accumulator& all,
                           const std::map<NoiseClass, Accumulator>& by_class,
                           std::size_t skipped) {
  if (all.count == 0) {
    fail(ErrorKind::InvalidArgument, "no evaluable companies (none have gold tags)");
  }
  EvalReport r;
  r.k = k;
  const auto overall = all.finish();
  r.ap = overall.ap;
  r.ar = overall.ar;
  r.p_at_k = overall.p_at_k;
  r.sim_at_k = overall.sim_at_k;
  r.evaluated = all.count;
  r.skipped = skipped;
  for (auto cls : kNoiseClasses) {
    auto it = by_class.find(cls);
    r.class_counts[cls] = it == by_class.end() ? 0 : it->second.count;
    r.subsets[cls] = it == by_class.end() ? SubsetReport{} : it->second.finish();
  }
  return r;
}

}  // namespace detail

/// Scores rankings against gold tags. AP/AR use the top-k prefix; P@K and
/// Sim@K (mean similarity within the top K) are reported for K = 1..k.
/// Companies without gold tags are skipped and counted.
inline EvalReport evaluate(std::span<const RankedAssignment> assignments,
                           const Corpus& corpus, int k = kDefaultTopK) {
  require(k >= 1, "k must be >= 1");
  detail::Accumulator all;
  std::map<NoiseClass, detail::Accumulator> by_class;
  std::size_t skipped = 0;
  for (const auto& a : assignments) {
    const auto* rec = corpus.find(a.company_id);
    if (!rec) {
      fail(ErrorKind::NotFound, "assignment for unknown company " + a.company_id);
    }
    if (!rec->gold_tags || rec->gold_tags->empty()) {
      ++skipped;
      continue;
    }
    require(!a.ranked.empty(), "empty ranking for " + a.company_id);
    const auto& gold = *rec->gold_tags;
    const int used = std::min<int>(k, static_cast<int>(a.ranked.size()));
    auto& cls = by_class[classify_noise(*rec)];
    std::size_t hits = 0;
    double sim_sum = 0.0;
    for (int K = 1; K <= k; ++K) {
      if (K <= static_cast<int>(a.ranked.size())) {
        const auto& r = a.ranked[static_cast<std::size_t>(K - 1)];
        if (contains(gold, r.tag_id)) ++hits;
        sim_sum += r.sim;
      }
      const int len = std::min<int>(K, static_cast<int>(a.ranked.size()));
      const double p = static_cast<double>(hits) / len;
      const double s = sim_sum / len;
      all.sum_p_at[K] += p;
      all.sum_sim_at[K] += s;
      cls.sum_p_at[K] += p;
      cls.sum_sim_at[K] += s;
      if (K == used) {
        const double prec = p;
        const double rec_ = static_cast<double>(hits) / static_cast<double>(gold.size());
        all.sum_p += prec;
        all.sum_r += rec_;
        cls.sum_p += prec;
        cls.sum_r += rec_;
      }
    }
    ++all.count;
    ++cls.count;
  }
  return detail::assemble(k, all, by_class, skipped);
}

/// The same statistics with each company's noisy tags as the prediction.
inline EvalReport noisy_baseline(const Corpus& corpus) {
  detail::Accumulator all;
  std::map<NoiseClass, detail::Accumulator> by_class;
  std::size_t skipped = 0;
  for (const auto& rec : corpus.companies()) {
    if (!rec.gold_tags || rec.gold_tags->empty()) {
      ++skipped;
      continue;
    }
    const auto pr = precision_recall(rec.noisy_tags, *rec.gold_tags);
    auto& cls = by_class[classify_noise(rec)];
    for (auto* acc : {&all, &cls}) {
      acc->sum_p += pr.precision;
      acc->sum_r += pr.recall;
      ++acc->count;
    }
  }
  return detail::assemble(0, all, by_class, skipped);
}

struct EmrTrend {
  double first = 0.0;
  double best = 0.0;
  double last = 0.0;
  std::size_t best_round = 1;   // 1-based
  std::vector<double> deltas;   // round-over-round differences
  double last_minus_first = 0.0;
};

inline EmrTrend emr_trend(std::span<const double> history) {
  require(!history.empty(), "EMR trend needs at least one round");
  EmrTrend t;
  t.first = history.front();
  t.last = history.back();
  t.best = history.front();
  for (std::size_t r = 0; r < history.size(); ++r) {
    if (history[r] > t.best) {
      t.best = history[r];
      t.best_round = r + 1;
    }
    if (r > 0) t.deltas.push_back(history[r] - history[r - 1]);
  }
  t.last_minus_first = t.last - t.first;
  return t;
}

// ---------------------------------------------------------------------------
// Report JSON

namespace detail {

inline nlohmann::ordered_json map_json(const std::map<int, double>& m) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["k"] = r.k;
  j["ap"] = r.ap;
  j["ar"] = r.ar;
  j["p_at_k"] = detail::map_json(r.p_at_k);
  j["sim_at_k"] = detail::map_json(r.sim_at_k);
  j["evaluated"] = r.evaluated;
  j["skipped"] = r.skipped;
  nlohmann::ordered_json counts, subsets;
  for (auto cls : kNoiseClasses) {
    counts[to_string(cls)] = r.class_counts.at(cls);
    const auto& s = r.subsets.at(cls);
    nlohmann::ordered_json sj;
    sj["count"] = s.count;
    sj["ap"] = s.ap;
    sj["ar"] = s.ar;
    sj["p_at_k"] = detail::map_json(s.p_at_k);
    sj["sim_at_k"] = detail::map_json(s.sim_at_k);
    subsets[to_string(cls)] = std::move(sj);
  }
  j["class_counts"] = std::move(counts);
  j["subsets"] = std::move(subsets);
  return j;
}

}  // namespace simlabel
