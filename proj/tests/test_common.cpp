// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "support.hpp"

using namespace simlabel;

TEST(Hashing, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Hashing, SplitmixFirstOutput) {
  EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
}

TEST(Hashing, DeriveSeedDependsOnEverySalt) {
  EXPECT_EQ(derive_seed(7, 1, 2), derive_seed(7, 1, 2));
  EXPECT_NE(derive_seed(7, 1, 2), derive_seed(7, 2, 1));
  EXPECT_NE(derive_seed(7, 1), derive_seed(8, 1));
  EXPECT_NE(derive_seed(7), derive_seed(7, 0));
}

TEST(Random, UniformIndexStaysInRange) {
  Rng rng(3);
  std::vector<int> hits(7, 0);
  for (int k = 0; k < 7000; ++k) ++hits[uniform_index(rng, 7)];
  for (int h : hits) EXPECT_GT(h, 800);
  EXPECT_EQ(uniform_index(rng, 1), 0u);
  EXPECT_EQ(uniform_index(rng, 0), 0u);
}

TEST(Random, Uniform01HalfOpen) {
  Rng rng(5);
  for (int k = 0; k < 10000; ++k) {
    const double x = uniform01(rng);
    ASSERT_GE(x, 0.0);
    ASSERT_LT(x, 1.0);
  }
}

TEST(Random, ShuffleIsAPermutationAndSeeded) {
  std::vector<int> a(50);
  std::iota(a.begin(), a.end(), 0);
  auto b = a;
  Rng r1(11), r2(11);
  shuffle(a, r1);
  shuffle(b, r2);
  EXPECT_EQ(a, b);
  EXPECT_EQ(std::set<int>(a.begin(), a.end()).size(), 50u);
}

TEST(Random, WeightedIndexSkipsZeroWeights) {
  Rng rng(1);
  for (int k = 0; k < 1000; ++k) {
    const auto i = weighted_index(rng, {0.0, 2.0, 0.0, 1.0});
    ASSERT_TRUE(i == 1 || i == 3);
  }
  EXPECT_EQ(weighted_index(rng, {0.0, 0.0}), 2u);
}

TEST(Sets, NormalizedAndIntersection) {
  EXPECT_EQ(normalized({3, 1, 3, 2}), (std::vector<TagId>{1, 2, 3}));
  EXPECT_EQ(intersection_size({1, 2, 5}, {2, 3, 5, 7}), 2u);
  EXPECT_TRUE(contains({1, 4, 9}, 4));
  EXPECT_FALSE(contains({1, 4, 9}, 5));
}

TEST(Arithmetic, CeilFractionToleratesRepresentationError) {
  EXPECT_EQ(ceil_fraction(0.15, 20), 3u);
  EXPECT_EQ(ceil_fraction(0.15, 6), 1u);
  EXPECT_EQ(ceil_fraction(0.15, 190), 29u);
  EXPECT_EQ(ceil_fraction(1.0, 66), 66u);
  EXPECT_EQ(ceil_fraction(0.1, 55), 6u);
}

TEST(Files, AtomicWriteReplacesContent) {
  fixture::TempDir dir("common");
  const auto path = dir / "x.txt";
  write_file_atomic(path, "one");
  write_file_atomic(path, "two");
  EXPECT_EQ(read_file(path), "two");
  EXPECT_FALSE(std::filesystem::exists(dir / "x.txt.tmp"));
}

TEST(Files, ReadMissingIsIoError) {
  try {
    read_file("/nonexistent/simlabel/file");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}
