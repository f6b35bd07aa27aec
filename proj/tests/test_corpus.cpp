// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace simlabel;
using simlabel::fixture::TempDir;
using simlabel::fixture::write_text;

namespace {

const char* kTags =
    R"({"tag_id":0,"name":"T1","itd":"banks and lenders"})" "\n"
    R"({"tag_id":1,"name":"T2","itd":"farms and growers"})" "\n"
    R"({"tag_id":2,"name":"T3","itd":"software vendors"})" "\n"
    R"({"tag_id":3,"name":"T4","itd":"freight carriers"})" "\n";

const char* kCompanies =
    R"({"company_id":"A","cbd":"A lends money","noisy_tags":[0],"gold_tags":[0]})" "\n"
    R"({"company_id":"B","cbd":"B grows wheat","noisy_tags":[1,2],"gold_tags":[1]})" "\n"
    "\n"
    R"({"company_id":"C","cbd":"C ships boxes","noisy_tags":[3]})" "\n";

std::string load_error(const std::string& tags, const std::string& companies) {
  TempDir dir("corpus_err");
  write_text(dir / "tags.jsonl", tags);
  write_text(dir / "companies.jsonl", companies);
  try {
    load_corpus_dir(dir.path());
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
    return e.what();
  }
  ADD_FAILURE() << "expected a load error";
  return {};
}

CompanyRecord with_sets(std::vector<TagId> noisy, std::vector<TagId> gold) {
  return {"X", "x", std::move(noisy), std::move(gold)};
}

}  // namespace

TEST(LoadCorpus, WellFormedFiles) {
  TempDir dir("corpus");
  write_text(dir / "tags.jsonl", kTags);
  write_text(dir / "companies.jsonl", kCompanies);
  const auto corpus = load_corpus_dir(dir.path());
  EXPECT_EQ(corpus.n(), 4);
  ASSERT_EQ(corpus.companies().size(), 3u);
  EXPECT_EQ(corpus.tag(2).itd, "software vendors");
  const auto* b = corpus.find("B");
  ASSERT_NE(b, nullptr);
  EXPECT_EQ(b->noisy_tags, (std::vector<TagId>{1, 2}));
  EXPECT_FALSE(corpus.find("C")->gold_tags.has_value());
  EXPECT_EQ(corpus.find("Z"), nullptr);
}

TEST(LoadCorpus, UnknownTagNamesCompanyAndTag) {
  const auto msg = load_error(
      kTags, R"({"company_id":"Acme","cbd":"x","noisy_tags":[99]})" "\n");
  EXPECT_NE(msg.find("Acme"), std::string::npos) << msg;
  EXPECT_NE(msg.find("99"), std::string::npos) << msg;
}

TEST(LoadCorpus, DuplicateTagListsBothLines) {
  const auto msg = load_error(std::string(kTags) +
                                  R"({"tag_id":2,"name":"T5","itd":"again"})" "\n",
                              kCompanies);
  EXPECT_NE(msg.find("duplicate tag_id 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("lines 3 and 5"), std::string::npos) << msg;
}

TEST(LoadCorpus, DuplicateCompanyAndEmptyFields) {
  EXPECT_NE(load_error(kTags,
                       R"({"company_id":"A","cbd":"x","noisy_tags":[0]})" "\n"
                       R"({"company_id":"A","cbd":"y","noisy_tags":[1]})" "\n")
                .find("duplicate company_id A"),
            std::string::npos);
  EXPECT_NE(load_error(kTags, R"({"company_id":"A","cbd":"","noisy_tags":[0]})" "\n")
                .find("empty cbd"),
            std::string::npos);
  EXPECT_NE(load_error(R"({"tag_id":0,"name":"T1","itd":""})" "\n", "")
                .find("empty itd"),
            std::string::npos);
}

TEST(LoadCorpus, MalformedLineReportsLineNumber) {
  const auto msg = load_error(kTags, std::string(kCompanies) + "{not json\n");
  EXPECT_NE(msg.find(":5"), std::string::npos) << msg;
}

TEST(LoadCorpus, MissingFileIsIo) {
  try {
    load_corpus("/nonexistent/tags.jsonl", "/nonexistent/companies.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}

TEST(LoadCorpus, SaveRoundTrip) {
  const auto corpus = fixture::four_tag_corpus();
  TempDir dir("corpus_rt");
  save_corpus(corpus, dir.path());
  EXPECT_EQ(load_corpus_dir(dir.path()), corpus);
}

TEST(Corpus, NonDenseTagIdsRejected) {
  EXPECT_THROW(Corpus({fixture::make_tag(0, "a"), fixture::make_tag(2, "b")}, {}), Error);
}

TEST(ClassifyNoise, SpecCases) {
  EXPECT_EQ(classify_noise(with_sets({1, 2}, {1, 2})), NoiseClass::Exact);
  EXPECT_EQ(classify_noise(with_sets({1, 2}, {1, 2, 3})), NoiseClass::Partial);
  EXPECT_EQ(classify_noise(with_sets({1, 2}, {3})), NoiseClass::Incorrect);
  EXPECT_EQ(classify_noise(with_sets({2, 1}, {1, 2})), NoiseClass::Exact);
}

TEST(ClassifyNoise, NoGoldIsAnError) {
  CompanyRecord rec{"X", "x", {1}, std::nullopt};
  EXPECT_THROW(classify_noise(rec), Error);
}

TEST(SplitBenchmark, HundredCompaniesSeedSeven) {
  const auto synth = generate_synthetic(5, 100, {}, 3);
  const auto split = split_benchmark(synth.corpus, 0.2, 7);
  EXPECT_EQ(split.benchmark.companies().size(), 20u);
  EXPECT_EQ(split.train.companies().size(), 80u);
  for (TagId t = 0; t < 5; ++t) {
    auto has = [t](const Corpus& c) {
      for (const auto& rec : c.companies()) {
        if (contains(*rec.gold_tags, t)) return true;
      }
      return false;
    };
    EXPECT_TRUE(has(split.train)) << t;
    EXPECT_TRUE(has(split.benchmark)) << t;
  }
  std::set<std::string> ids;
  for (const auto* part : {&split.train, &split.benchmark}) {
    for (const auto& rec : part->companies()) ids.insert(rec.company_id);
  }
  EXPECT_EQ(ids.size(), 100u);
}

TEST(SplitBenchmark, FractionBounds) {
  const auto corpus = fixture::four_tag_corpus();
  EXPECT_THROW(split_benchmark(corpus, 0.0, 1), Error);
  EXPECT_THROW(split_benchmark(corpus, 1.0, 1), Error);
}

TEST(SplitBenchmark, Deterministic) {
  const auto synth = generate_synthetic(6, 120, {}, 9);
  const auto a = split_benchmark(synth.corpus, 0.25, 4);
  const auto b = split_benchmark(synth.corpus, 0.25, 4);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.benchmark, b.benchmark);
}

TEST(GenerateSynthetic, DegenerateProfileAllExact) {
  const auto synth = generate_synthetic(4, 60, {1.0, 0.0, 0.0}, 5);
  for (const auto& rec : synth.corpus.companies()) {
    EXPECT_EQ(classify_noise(rec), NoiseClass::Exact);
  }
}

TEST(GenerateSynthetic, ClassCountsMatchProfile) {
  const NoiseProfile profile;
  const int n = 400;
  const auto synth = generate_synthetic(8, n, profile, 12);
  std::map<NoiseClass, int> counts;
  for (const auto& rec : synth.corpus.companies()) ++counts[classify_noise(rec)];
  const double expect[] = {profile.exact_frac, profile.partial_frac, profile.incorrect_frac};
  int k = 0;
  for (auto cls : {NoiseClass::Exact, NoiseClass::Partial, NoiseClass::Incorrect}) {
    const double p = expect[k++];
    const double sigma = std::sqrt(n * p * (1 - p));
    EXPECT_NEAR(counts[cls], n * p, 3 * sigma) << to_string(cls);
  }
}

TEST(GenerateSynthetic, SeedRepeatIsByteIdentical) {
  const auto a = generate_synthetic(6, 90, {}, 77);
  const auto b = generate_synthetic(6, 90, {}, 77);
  EXPECT_EQ(tags_jsonl(a.corpus), tags_jsonl(b.corpus));
  EXPECT_EQ(companies_jsonl(a.corpus), companies_jsonl(b.corpus));
  EXPECT_EQ(to_json(a.ground_truth).dump(), to_json(b.ground_truth).dump());
  const auto c = generate_synthetic(6, 90, {}, 78);
  EXPECT_NE(companies_jsonl(a.corpus), companies_jsonl(c.corpus));
}

// Independent oracle: the truth rating is determined by how many ITD words two
// tags share out of the 20-word theme pool.
TEST(GenerateSynthetic, GroundTruthFollowsSharedThemeWords) {
  const auto synth = generate_synthetic(10, 200, {}, 31);
  const auto& tags = synth.corpus.tags();
  auto words = [](const std::string& itd) {
    const auto lead = itd.find(" covers ");
    EXPECT_NE(lead, std::string::npos);
    const auto s = itd.substr(lead + 8);
    std::set<std::string> out;
    std::string w;
    for (char ch : s + " ") {
      if (std::isalpha(static_cast<unsigned char>(ch))) {
        w += ch;
      } else if (!w.empty()) {
        out.insert(w);
        w.clear();
      }
    }
    return out;
  };
  for (const auto& cell : synth.ground_truth.cells()) {
    ASSERT_TRUE(cell.rating.has_value());
    EXPECT_EQ(cell.state, CellState::SmeRated);
    const auto a = words(tags[static_cast<std::size_t>(cell.i)].itd);
    const auto b = words(tags[static_cast<std::size_t>(cell.j)].itd);
    int shared = 0;
    for (const auto& w : a) shared += static_cast<int>(b.count(w));
    EXPECT_EQ(cell.rating->value(), static_cast<int>(std::floor(5.0 * shared / 20.0 + 0.5)))
        << cell.i << "," << cell.j;
  }
}

TEST(GenerateSynthetic, RejectsTinyInputs) {
  EXPECT_THROW(generate_synthetic(2, 100, {}, 1), Error);
  EXPECT_THROW(generate_synthetic(5, 20, {}, 1), Error);
  EXPECT_THROW(generate_synthetic(5, 100, {0.5, 0.5, 0.5}, 1), Error);
}
