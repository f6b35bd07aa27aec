// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "simlabel/simlabel.hpp"

namespace simlabel::fixture {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& stem) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("simlabel_" + stem + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline Tag make_tag(TagId t, std::string itd) {
  return {t, "T" + std::to_string(t + 1), std::move(itd)};
}

inline CompanyRecord make_company(std::string id, std::string cbd, std::vector<TagId> noisy,
                                  std::optional<std::vector<TagId>> gold = std::nullopt) {
  return {std::move(id), std::move(cbd), std::move(noisy), std::move(gold)};
}

/// Four tags with disjoint vocabularies and a handful of companies.
inline Corpus four_tag_corpus() {
  std::vector<Tag> tags = {
      make_tag(0, "banking loans credit deposits"),
      make_tag(1, "farming crops harvest soil"),
      make_tag(2, "software cloud servers code"),
      make_tag(3, "shipping freight ports cargo"),
  };
  std::vector<CompanyRecord> companies = {
      make_company("A", "Alpha offers loans and credit", {0}, std::vector<TagId>{0}),
      make_company("B", "Beta grows crops on rich soil", {1}, std::vector<TagId>{1}),
      make_company("C", "Gamma writes code for cloud servers", {2, 0},
                   std::vector<TagId>{2}),
      make_company("D", "Delta moves freight through ports", {3}, std::vector<TagId>{3}),
      make_company("E", "Epsilon deposits and credit cards", {0, 1},
                   std::vector<TagId>{0, 2}),
      make_company("F", "Zeta cargo shipping lines", {1}, std::vector<TagId>{3}),
  };
  return Corpus(std::move(tags), std::move(companies));
}

/// Relative path -> contents for every regular file under `root`.
inline std::map<std::string, std::string> snapshot_tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      out[std::filesystem::relative(e.path(), root).string()] = read_file(e.path());
    }
  }
  return out;
}

/// First difference between two trees, or empty when identical.
inline std::string tree_difference(const std::filesystem::path& a,
                                   const std::filesystem::path& b) {
  const auto ta = snapshot_tree(a);
  const auto tb = snapshot_tree(b);
  for (const auto& [name, bytes] : ta) {
    auto it = tb.find(name);
    if (it == tb.end()) return "only in first: " + name;
    if (it->second != bytes) return "differs: " + name;
  }
  for (const auto& [name, bytes] : tb) {
    if (!ta.count(name)) return "only in second: " + name;
  }
  return {};
}

}  // namespace simlabel::fixture
