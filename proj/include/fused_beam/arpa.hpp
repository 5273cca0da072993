#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fused_beam/errors.hpp"

namespace fused_beam {

inline constexpr std::int32_t kArpaNoWord = -1;

/// Back-off n-gram model read from an ARPA file (orders 1 to 3). Words are
/// interned to ids in order of first appearance in the unigram section.
class NgramModel {
 public:
  static constexpr int kMaxOrder = 3;

  static NgramModel parse(std::istream& in, const std::string& source = "<arpa>") {
    NgramModel m;
    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&]() -> bool {
      while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") != std::string::npos) return true;
      }
      return false;
    };
    auto trimmed = [&]() {
      const auto b = line.find_first_not_of(" \t");
      const auto e = line.find_last_not_of(" \t");
      return line.substr(b, e + 1 - b);
    };

    // Skip any preamble before \data\.
    bool found_data = false;
    while (next_line()) {
      if (trimmed() == "\\data\\") {
        found_data = true;
        break;
      }
    }
    if (!found_data) throw FormatError(source, line_no, "missing \\data\\ section");

    std::vector<std::size_t> declared;
    bool have_line = next_line();
    while (have_line && trimmed().rfind("ngram ", 0) == 0) {
      const std::string t = trimmed();
      const auto eq = t.find('=');
      int order = 0;
      std::size_t count = 0;
      if (eq == std::string::npos || !parse_int(t.substr(6, eq - 6), order) || !parse_size(t.substr(eq + 1), count)) {
        throw FormatError(source, line_no, "malformed ngram count line");
      }
      if (order != static_cast<int>(declared.size()) + 1) throw FormatError(source, line_no, "ngram orders out of sequence");
      if (order > kMaxOrder) throw FormatError(source, line_no, "n-gram order above 3 is not supported");
      declared.push_back(count);
      have_line = next_line();
    }
    if (declared.empty()) throw FormatError(source, line_no, "no ngram counts declared");
    m.order_ = static_cast<int>(declared.size());
    m.tables_.resize(declared.size());

    for (int n = 1; n <= m.order_; ++n) {
      const std::string header = "\\" + std::to_string(n) + "-grams:";
      if (!have_line || trimmed() != header) throw FormatError(source, line_no, "expected " + header);
      std::size_t count = 0;
      while ((have_line = next_line()) && trimmed().front() != '\\') {
        std::istringstream fields(line);
        std::string prob_text;
        fields >> prob_text;
        double logprob = 0.0;
        if (!parse_double(prob_text, logprob)) {
          throw FormatError(source, line_no, "non-numeric log probability '" + prob_text + "'");
        }
        std::vector<std::string> rest;
        for (std::string f; fields >> f;) rest.push_back(std::move(f));
        double backoff = 0.0;
        if (rest.size() == static_cast<std::size_t>(n) + 1) {
          if (!parse_double(rest.back(), backoff)) {
            throw FormatError(source, line_no, "non-numeric back-off weight '" + rest.back() + "'");
          }
          rest.pop_back();
        }
        if (rest.size() != static_cast<std::size_t>(n)) {
          throw FormatError(source, line_no, "expected " + std::to_string(n) + " words");
        }
        std::vector<std::int32_t> ids;
        for (const auto& w : rest) {
          if (n == 1) {
            auto [it, inserted] = m.ids_.emplace(w, static_cast<std::int32_t>(m.words_.size()));
            if (inserted) m.words_.push_back(w);
            ids.push_back(it->second);
          } else {
            auto it = m.ids_.find(w);
            if (it == m.ids_.end()) throw FormatError(source, line_no, "word '" + w + "' missing from unigrams");
            ids.push_back(it->second);
          }
        }
        if (m.words_.size() >= (std::size_t{1} << kBitsPerWord)) throw FormatError(source, line_no, "vocabulary too large");
        if (!m.tables_[static_cast<std::size_t>(n - 1)].emplace(pack(ids), Entry{logprob, backoff}).second) {
          throw FormatError(source, line_no, "duplicate n-gram");
        }
        ++count;
      }
      if (count != declared[static_cast<std::size_t>(n - 1)]) {
        throw FormatError(source, line_no,
                          "declared " + std::to_string(declared[static_cast<std::size_t>(n - 1)]) + " " +
                              std::to_string(n) + "-grams but found " + std::to_string(count));
      }
    }
    if (!have_line || trimmed() != "\\end\\") throw FormatError(source, line_no, "missing \\end\\ marker");
    return m;
  }

  static NgramModel load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open ARPA file " + path.string());
    return parse(in, path.string());
  }

  int order() const { return order_; }
  std::size_t num_words() const { return words_.size(); }
  const std::string& word(std::int32_t id) const { return words_.at(static_cast<std::size_t>(id)); }

  std::optional<std::int32_t> word_id(std::string_view w) const {
    auto it = ids_.find(std::string(w));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  // log10 P(word | context), context oldest first. kArpaNoWord entries cut the
  // context at that point. An unknown predicted word returns -99.
  double log10_prob(std::span<const std::int32_t> context, std::int32_t word) const {
    if (word < 0) return -99.0;
    const std::size_t keep = std::min<std::size_t>(context.size(), static_cast<std::size_t>(order_ - 1));
    context = context.subspan(context.size() - keep);
    for (std::size_t i = context.size(); i-- > 0;) {
      if (context[i] < 0) {
        context = context.subspan(i + 1);
        break;
      }
    }
    double backoff = 0.0;
    std::vector<std::int32_t> key(context.begin(), context.end());
    key.push_back(word);
    for (std::size_t start = 0;; ++start) {
      const std::size_t n = key.size() - start;
      const auto& table = tables_[n - 1];
      std::span<const std::int32_t> gram(key.data() + start, n);
      if (auto it = table.find(pack(gram)); it != table.end()) return backoff + it->second.logprob;
      if (n == 1) return -99.0;
      const auto& ctx_table = tables_[n - 2];
      if (auto it = ctx_table.find(pack(gram.first(n - 1))); it != ctx_table.end()) backoff += it->second.backoff;
    }
  }

 private:
  struct Entry {
    double logprob;
    double backoff;
  };
  static constexpr unsigned kBitsPerWord = 21;

  static std::uint64_t pack(std::span<const std::int32_t> ids) {
    std::uint64_t key = 0;
    for (std::int32_t id : ids) key = (key << kBitsPerWord) | static_cast<std::uint64_t>(id + 1);
    return key;
  }

  static bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
  }
  static bool parse_int(const std::string& s, int& out) {
    const auto b = s.find_first_not_of(' ');
    if (b == std::string::npos) return false;
    auto [ptr, ec] = std::from_chars(s.data() + b, s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
  }
  static bool parse_size(const std::string& s, std::size_t& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return !s.empty() && ec == std::errc{} && ptr == s.data() + s.size();
  }

  int order_ = 0;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> ids_;
  std::vector<std::unordered_map<std::uint64_t, Entry>> tables_;
};

}  // namespace fused_beam
