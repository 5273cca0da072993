#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fused_beam/errors.hpp"

namespace fused_beam {

using TokenId = std::int32_t;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kSpaceToken = "<space>";

// Splits a string into UTF-8 code points. Invalid lead bytes are kept as
// single-byte units so that no input is dropped.
inline std::vector<std::string> split_utf8(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0 && lead < 0xF8) {
      len = 4;
    } else if (lead >= 0xE0) {
      len = lead < 0xF0 ? 3 : 1;
    } else if (lead >= 0xC0) {
      len = 2;
    }
    if (i + len > text.size()) len = 1;
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

/// Subword token inventory. `<pad>`, `<eos>` and `<unk>` always occupy ids
/// 0..2; file tokens follow in file order; `<space>` is appended last unless
/// the file already lists it.
class TokenDictionary {
 public:
  TokenDictionary() : TokenDictionary(from_tokens({})) {}

  static TokenDictionary from_tokens(const std::vector<std::string>& file_tokens) {
    TokenDictionary dict(0);
    dict.append(std::string(kPadToken));
    dict.append(std::string(kEosToken));
    dict.append(std::string(kUnkToken));
    std::map<std::string, std::size_t, std::less<>> seen;
    for (std::size_t i = 0; i < file_tokens.size(); ++i) {
      const std::string& tok = file_tokens[i];
      if (tok.empty()) throw FormatError("empty token at entry " + std::to_string(i + 1));
      if (auto [it, inserted] = seen.emplace(tok, i); !inserted) {
        throw FormatError("duplicate token '" + tok + "' at entry " + std::to_string(i + 1));
      }
      if (tok == kPadToken || tok == kEosToken || tok == kUnkToken) continue;
      dict.append(tok);
    }
    if (!dict.find(kSpaceToken)) dict.append(std::string(kSpaceToken));
    dict.space_id_ = *dict.find(kSpaceToken);
    return dict;
  }

  std::size_t size() const { return tokens_.size(); }
  TokenId pad_id() const { return 0; }
  TokenId eos_id() const { return 1; }
  TokenId unk_id() const { return 2; }
  TokenId space_id() const { return space_id_; }

  bool is_special(TokenId id) const {
    return id == pad_id() || id == eos_id() || id == unk_id() || id == space_id_;
  }

  std::optional<TokenId> find(std::string_view token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Unknown strings map to `<unk>`.
  TokenId index_of(std::string_view token) const { return find(token).value_or(unk_id()); }

  const std::string& token_of(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw ContractError("token id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::span<const std::string> tokens() const { return tokens_; }

 private:
  explicit TokenDictionary(int) {}

  void append(std::string tok) {
    index_.emplace(tok, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(tok));
  }

  std::vector<std::string> tokens_;
  std::map<std::string, TokenId, std::less<>> index_;
  TokenId space_id_ = -1;
};

// One token per line, optional second field ignored, `#` lines are comments.
inline TokenDictionary load_dictionary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dictionary " + path.string());
  std::vector<std::string> tokens;
  std::map<std::string, std::size_t, std::less<>> first_line;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string tok;
    if (!(fields >> tok) || tok.front() == '#') continue;
    if (auto [it, inserted] = first_line.emplace(tok, line_no); !inserted) {
      throw FormatError(path.string(), line_no,
                        "duplicate token '" + tok + "' (first seen on line " + std::to_string(it->second) + ")");
    }
    tokens.push_back(std::move(tok));
  }
  if (tokens.empty()) throw FormatError(path.string() + ": dictionary is empty");
  return TokenDictionary::from_tokens(tokens);
}

// Character-level tokenization: words split on whitespace, `<space>` between
// words, characters missing from the dictionary become `<unk>`.
inline std::vector<TokenId> tokenize_transcript(std::string_view text, const TokenDictionary& dict) {
  std::vector<TokenId> out;
  std::istringstream words{std::string(text)};
  std::string word;
  bool first = true;
  while (words >> word) {
    if (!first) out.push_back(dict.space_id());
    first = false;
    for (const auto& ch : split_utf8(word)) out.push_back(dict.index_of(ch));
  }
  return out;
}

// Inverse of tokenize_transcript; `<pad>` and `<eos>` are dropped.
inline std::string detokenize(std::span<const TokenId> ids, const TokenDictionary& dict) {
  std::string out;
  for (TokenId id : ids) {
    if (id == dict.pad_id() || id == dict.eos_id()) continue;
    if (id == dict.space_id()) {
      out.push_back(' ');
    } else {
      out += dict.token_of(id);
    }
  }
  return out;
}

}  // namespace fused_beam
