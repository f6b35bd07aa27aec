// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "support.hpp"

using namespace simlabel;
using simlabel::fixture::make_company;
using simlabel::fixture::make_tag;

namespace {

Corpus four_tags(std::vector<CompanyRecord> companies) {
  return Corpus({make_tag(0, "a"), make_tag(1, "b"), make_tag(2, "c"), make_tag(3, "d")},
                std::move(companies));
}

RankedAssignment ranking(std::string id, std::vector<RankedTag> ranked) {
  RankedAssignment a;
  a.company_id = std::move(id);
  a.ranked = std::move(ranked);
  a.k_used = a.ranked.size();
  return a;
}

// Hand-computed instance at k = 2:
//   A gold {0,1} noisy {0}: top-2 {0,2} -> P 1/2, R 1/2, P@1 1, sims .9 .5
//   B gold {3}   noisy {3}: top-2 {3,1} -> P 1/2, R 1,   P@1 1, sims .8 .6
//   C gold {2}   noisy {0}: top-2 {1,0} -> P 0,   R 0,   P@1 0, sims .4 .2
Corpus hand_corpus() {
  return four_tags({make_company("A", "a", {0}, std::vector<TagId>{0, 1}),
                    make_company("B", "b", {3}, std::vector<TagId>{3}),
                    make_company("C", "c", {0}, std::vector<TagId>{2})});
}

std::vector<RankedAssignment> hand_rankings() {
  return {ranking("A", {{0, 0.9}, {2, 0.5}, {1, 0.3}, {3, 0.1}}),
          ranking("B", {{3, 0.8}, {1, 0.6}, {0, 0.2}, {2, 0.0}}),
          ranking("C", {{1, 0.4}, {0, 0.2}, {2, 0.1}, {3, 0.0}})};
}

void expect_matches(const EvalReport& r, const oracle::Evaluation& ev) {
  EXPECT_EQ(r.evaluated, ev.all.count);
  EXPECT_EQ(r.ap, ev.all.ap);
  EXPECT_EQ(r.ar, ev.all.ar);
  EXPECT_EQ(r.p_at_k, ev.all.p_at);
  EXPECT_EQ(r.sim_at_k, ev.all.sim_at);
  for (auto cls : kNoiseClasses) {
    const auto it = ev.by_class.find(cls);
    const auto& sub = r.subsets.at(cls);
    if (it == ev.by_class.end()) {
      EXPECT_EQ(sub.count, 0u);
      continue;
    }
    EXPECT_EQ(sub.count, it->second.count);
    EXPECT_EQ(r.class_counts.at(cls), it->second.count);
    EXPECT_EQ(sub.ap, it->second.ap);
    EXPECT_EQ(sub.ar, it->second.ar);
    EXPECT_EQ(sub.p_at_k, it->second.p_at);
    EXPECT_EQ(sub.sim_at_k, it->second.sim_at);
  }
}

}  // namespace

TEST(PrecisionRecall, SetArithmetic) {
  const auto pr = precision_recall({1, 2, 3, 4, 5}, {1, 2});
  EXPECT_DOUBLE_EQ(pr.precision, 0.4);
  EXPECT_DOUBLE_EQ(pr.recall, 1.0);
  EXPECT_EQ(precision_recall({3, 1}, {1, 3}).precision, 1.0);
  EXPECT_EQ(precision_recall({0}, {1}).recall, 0.0);
  EXPECT_THROW(precision_recall({}, {1}), Error);
  EXPECT_THROW(precision_recall({1}, {}), Error);
}

TEST(Evaluate, HandComputedInstance) {
  const auto r = evaluate(hand_rankings(), hand_corpus(), 2);
  EXPECT_DOUBLE_EQ(r.ap, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.ar, 0.5);
  EXPECT_DOUBLE_EQ(r.p_at_k.at(1), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.p_at_k.at(2), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.sim_at_k.at(1), 0.7);
  EXPECT_DOUBLE_EQ(r.sim_at_k.at(2), (0.7 + 0.7 + 0.3) / 3.0);
  EXPECT_EQ(r.class_counts.at(NoiseClass::Exact), 1u);
  EXPECT_EQ(r.class_counts.at(NoiseClass::Partial), 1u);
  EXPECT_EQ(r.class_counts.at(NoiseClass::Incorrect), 1u);
  EXPECT_DOUBLE_EQ(r.subsets.at(NoiseClass::Exact).ar, 1.0);
  EXPECT_DOUBLE_EQ(r.subsets.at(NoiseClass::Incorrect).ap, 0.0);

  const auto base = noisy_baseline(hand_corpus());
  EXPECT_DOUBLE_EQ(base.ap, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(base.ar, 0.5);
  EXPECT_TRUE(base.p_at_k.empty());
}

TEST(Evaluate, PerfectPredictions) {
  const auto corpus = four_tags({make_company("A", "a", {1}, std::vector<TagId>{1, 2}),
                                 make_company("B", "b", {0}, std::vector<TagId>{0, 3})});
  const std::vector<RankedAssignment> rankings = {
      ranking("A", {{2, 0.9}, {1, 0.8}, {0, 0.1}, {3, 0.0}}),
      ranking("B", {{0, 0.9}, {3, 0.8}, {1, 0.1}, {2, 0.0}})};
  const auto r = evaluate(rankings, corpus, 2);
  EXPECT_EQ(r.ap, 1.0);
  EXPECT_EQ(r.ar, 1.0);
}

TEST(Evaluate, IncorrectNoisyLabelsScoreZero) {
  const auto corpus = four_tags({make_company("A", "a", {1}, std::vector<TagId>{2}),
                                 make_company("B", "b", {0, 1}, std::vector<TagId>{3})});
  const auto base = noisy_baseline(corpus);
  EXPECT_EQ(base.ap, 0.0);
  EXPECT_EQ(base.ar, 0.0);
  EXPECT_EQ(base.subsets.at(NoiseClass::Incorrect).count, 2u);

  const auto exact = four_tags({make_company("A", "a", {1, 2}, std::vector<TagId>{1, 2})});
  EXPECT_EQ(noisy_baseline(exact).ap, 1.0);
  EXPECT_EQ(noisy_baseline(exact).ar, 1.0);
}

TEST(Evaluate, SkipsCompaniesWithoutGold) {
  auto companies = std::vector<CompanyRecord>{
      make_company("A", "a", {0}, std::vector<TagId>{0}), make_company("Z", "z", {1})};
  const auto corpus = four_tags(std::move(companies));
  const std::vector<RankedAssignment> rankings = {
      ranking("A", {{0, 1.0}, {1, 0.0}, {2, 0.0}, {3, 0.0}}),
      ranking("Z", {{1, 1.0}, {0, 0.0}, {2, 0.0}, {3, 0.0}})};
  const auto r = evaluate(rankings, corpus, 1);
  EXPECT_EQ(r.evaluated, 1u);
  EXPECT_EQ(r.skipped, 1u);

  const auto only_z = four_tags({make_company("Z", "z", {1})});
  EXPECT_THROW(evaluate(std::vector<RankedAssignment>{rankings[1]}, only_z, 1), Error);
  EXPECT_THROW(evaluate(std::vector<RankedAssignment>{ranking("Q", {{0, 1.0}})}, corpus, 1),
               Error);
}

TEST(Evaluate, ExhaustiveAgainstBruteForce) {
  Rng rng(2024);
  for (int instance = 0; instance < 300; ++instance) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 5));
    const int companies = 1 + static_cast<int>(uniform_index(rng, 20));
    const int k = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n)));
    std::vector<Tag> tags;
    for (TagId t = 0; t < n; ++t) tags.push_back(make_tag(t, "itd"));
    auto random_set = [&] {
      std::vector<TagId> s;
      const unsigned mask =
          1u + static_cast<unsigned>(uniform_index(rng, (1u << n) - 1));
      for (TagId t = 0; t < n; ++t) {
        if (mask & (1u << t)) s.push_back(t);
      }
      return s;
    };
    std::vector<CompanyRecord> recs;
    std::vector<RankedAssignment> rankings;
    for (int c = 0; c < companies; ++c) {
      const std::string id = "C" + std::to_string(c);
      recs.push_back(make_company(id, "x", random_set(), random_set()));
      std::vector<RankedTag> r;
      for (TagId t = 0; t < n; ++t) r.push_back({t, std::round(uniform_real(rng, -1, 1) * 8) / 8});
      std::stable_sort(r.begin(), r.end(), [](const RankedTag& a, const RankedTag& b) {
        return a.sim > b.sim;
      });
      rankings.push_back(ranking(id, std::move(r)));
    }
    const Corpus corpus(std::move(tags), std::move(recs));
    SCOPED_TRACE("instance " + std::to_string(instance));
    expect_matches(evaluate(rankings, corpus, k), oracle::evaluate(corpus, &rankings, k));
    expect_matches(noisy_baseline(corpus), oracle::evaluate(corpus, nullptr, 0));
  }
}

TEST(Evaluate, SubsetDecompositionAndIntegrality) {
  const auto synth = generate_synthetic(6, 120, {}, 8);
  const HashingEncoder enc(EncoderParams::init(1u << 15, 8, 4), TokenizerConfig{});
  const auto rankings = rank_corpus(build_itd_index(enc, synth.corpus), enc, synth.corpus);
  const auto r = evaluate(rankings, synth.corpus, 3);
  double ap = 0.0, ar = 0.0;
  std::size_t total = 0;
  for (auto cls : kNoiseClasses) {
    const auto& s = r.subsets.at(cls);
    ap += s.ap * static_cast<double>(s.count);
    ar += s.ar * static_cast<double>(s.count);
    total += s.count;
  }
  EXPECT_EQ(total, r.evaluated);
  EXPECT_NEAR(ap / static_cast<double>(total), r.ap, 1e-12);
  EXPECT_NEAR(ar / static_cast<double>(total), r.ar, 1e-12);

  for (const auto& a : rankings) {
    const auto& gold = *synth.corpus.find(a.company_id)->gold_tags;
    const auto n = static_cast<int>(a.ranked.size());
    EXPECT_EQ(precision_recall(assign_top_k(a, n), gold).recall, 1.0);
    std::size_t prev = 0;
    for (int K = 1; K <= n; ++K) {
      const auto pred = assign_top_k(a, K);
      const auto pr = precision_recall(pred, gold);
      const double hits = pr.precision * static_cast<double>(pred.size());
      EXPECT_EQ(hits, std::round(hits));
      EXPECT_EQ(pr.recall * static_cast<double>(gold.size()), hits);
      EXPECT_GE(static_cast<std::size_t>(hits), prev);
      prev = static_cast<std::size_t>(hits);
    }
  }
}

TEST(EmrTrend, Summaries) {
  const std::vector<double> series = {0.68, 0.60, 0.64, 0.72};
  const auto t = emr_trend(series);
  EXPECT_NEAR(t.last_minus_first, 0.04, 1e-12);
  EXPECT_EQ(t.best, 0.72);
  EXPECT_EQ(t.best_round, 4u);
  ASSERT_EQ(t.deltas.size(), 3u);
  EXPECT_NEAR(t.deltas[0], -0.08, 1e-12);

  const std::vector<double> single = {0.5};
  EXPECT_EQ(emr_trend(single).first, emr_trend(single).last);
  const std::vector<double> rising = {0.1, 0.2, 0.3};
  EXPECT_EQ(emr_trend(rising).best, emr_trend(rising).last);
  EXPECT_THROW(emr_trend(std::span<const double>{}), Error);
}

TEST(ReportJson, CarriesEveryField) {
  const auto j = to_json(evaluate(hand_rankings(), hand_corpus(), 2));
  for (const char* key : {"k", "ap", "ar", "p_at_k", "sim_at_k", "evaluated", "skipped",
                          "class_counts", "subsets"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["class_counts"]["incorrect"], 1);
  EXPECT_TRUE(j["subsets"]["partial"].contains("p_at_k"));
}
