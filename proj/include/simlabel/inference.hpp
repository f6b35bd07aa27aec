// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "simlabel/corpus.hpp"
#include "simlabel/encoder.hpp"
#include "simlabel/lsm.hpp"

namespace simlabel {

/// ITD embeddings for one set of encoder parameters, in tag_id order.
struct ItdIndex {
  std::vector<Embedding> embeddings;
  std::uint64_t fingerprint = 0;

  int n() const noexcept { return static_cast<int>(embeddings.size()); }
};

struct RankedTag {
  TagId tag_id = 0;
  double sim = 0.0;
  bool operator==(const RankedTag&) const = default;
};

/// Tags ordered by similarity (descending, ties by ascending tag_id).
struct RankedAssignment {
  std::string company_id;
  std::vector<RankedTag> ranked;
  std::size_t k_used = 0;
  bool operator==(const RankedAssignment&) const = default;
};

inline constexpr int kDefaultTopK = 5;

template <TextEncoder E>
ItdIndex build_itd_index(const E& encoder, const Corpus& corpus) {
  ItdIndex index;
  index.fingerprint = encoder.fingerprint();
  index.embeddings.reserve(corpus.tags().size());
  for (const auto& tag : corpus.tags()) {
    require(!tag.itd.empty(), "tag " + std::to_string(tag.tag_id) + " has empty itd");
    index.embeddings.push_back(encoder.embed(tag.itd));
  }
  return index;
}

namespace detail {

template <TextEncoder E>
void check_fresh(const ItdIndex& index, const E& encoder) {
  if (index.fingerprint != encoder.fingerprint()) {
    fail(ErrorKind::StaleIndex,
         "ITD index was built for different encoder parameters");
  }
}

inline RankedAssignment rank_embedding(const ItdIndex& index,
                                       const Embedding& query,
                                       std::string company_id) {
  RankedAssignment out;
  out.company_id = std::move(company_id);
  out.ranked.reserve(index.embeddings.size());
  for (std::size_t t = 0; t < index.embeddings.size(); ++t) {
    out.ranked.push_back({static_cast<TagId>(t), cosine(query, index.embeddings[t])});
  }
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [](const RankedTag& a, const RankedTag& b) {
                     if (a.sim != b.sim) return a.sim > b.sim;
                     return a.tag_id < b.tag_id;
                   });
  out.k_used = out.ranked.size();
  return out;
}

}  // namespace detail

/// Full ranking of every tag for one CBD.
template <TextEncoder E>
RankedAssignment rank_tags(const ItdIndex& index, const E& encoder,
                           std::string_view cbd, std::string company_id = {}) {
  detail::check_fresh(index, encoder);
  return detail::rank_embedding(index, encoder.embed(cbd), std::move(company_id));
}

/// Ranks every company of the corpus.
template <TextEncoder E>
std::vector<RankedAssignment> rank_corpus(const ItdIndex& index, const E& encoder,
                                          const Corpus& corpus) {
  detail::check_fresh(index, encoder);
  std::vector<RankedAssignment> out;
  out.reserve(corpus.companies().size());
  for (const auto& c : corpus.companies()) {
    out.push_back(detail::rank_embedding(index, encoder.embed(c.cbd), c.company_id));
  }
  return out;
}

/// The first min(k, n) tags of the ranking, as a sorted set.
inline std::vector<TagId> assign_top_k(const RankedAssignment& ranked, int k) {
  const auto n = static_cast<int>(ranked.ranked.size());
  if (k < 1 || k > n) {
    fail(ErrorKind::InvalidArgument,
         "k=" + std::to_string(k) + " outside 1.." + std::to_string(n));
  }
  std::vector<TagId> out;
  for (int r = 0; r < k; ++r) out.push_back(ranked.ranked[static_cast<std::size_t>(r)].tag_id);
  return normalized(std::move(out));
}

/// Cosine of a similarity to a 0..5 rating: clamp to [0, 1], scale by 5,
/// round half up.
inline int similarity_to_rating(double sim) {
  const double x = 5.0 * std::clamp(sim, 0.0, 1.0);
  return std::min(Rating::kMax, static_cast<int>(std::floor(x + 0.5)));
}

/// Model LSM from pairwise ITD similarities; every cell ModelInferred.
inline Lsm reconstruct_lsm(const ItdIndex& index, int round = 0) {
  Lsm out(index.n());
  for (TagId i = 0; i < index.n(); ++i) {
    for (TagId j = i + 1; j < index.n(); ++j) {
      const double sim = cosine(index.embeddings[static_cast<std::size_t>(i)],
                                index.embeddings[static_cast<std::size_t>(j)]);
      out.set_rating(i, j, Rating(similarity_to_rating(sim)),
                     CellState::ModelInferred, round);
    }
  }
  return out;
}

inline nlohmann::ordered_json to_json(const RankedAssignment& a,
                                      std::optional<int> k = std::nullopt) {
  nlohmann::ordered_json j;
  j["company_id"] = a.company_id;
  nlohmann::ordered_json ranked = nlohmann::ordered_json::array();
  for (const auto& r : a.ranked) {
    nlohmann::ordered_json e;
    e["tag_id"] = r.tag_id;
    e["sim"] = r.sim;
    ranked.push_back(std::move(e));
  }
  j["ranked"] = std::move(ranked);
  if (k) j["assigned"] = assign_top_k(a, *k);
  return j;
}

inline RankedAssignment assignment_from_json(const nlohmann::json& j) {
  RankedAssignment a;
  a.company_id = j.at("company_id").get<std::string>();
  for (const auto& e : j.at("ranked")) {
    a.ranked.push_back({e.at("tag_id").get<int>(), e.at("sim").get<double>()});
  }
  a.k_used = a.ranked.size();
  return a;
}

}  // namespace simlabel
