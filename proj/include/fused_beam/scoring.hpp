#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fused_beam/errors.hpp"
#include "fused_beam/token_dict.hpp"

namespace fused_beam {

enum class EditOp : char { kOk = ' ', kSub = 'S', kIns = 'I', kDel = 'D' };

struct EditCounts {
  std::size_t sub = 0;
  std::size_t ins = 0;
  std::size_t del = 0;
  std::size_t errors() const { return sub + ins + del; }
};

struct AlignmentRecord {
  std::string utt_id;
  std::vector<std::string> ref_tokens;
  std::vector<std::string> hyp_tokens;
  std::vector<EditOp> steps;
  double wer = 0.0;  // percent

  EditCounts counts() const {
    EditCounts c;
    for (EditOp op : steps) {
      if (op == EditOp::kSub) ++c.sub;
      if (op == EditOp::kIns) ++c.ins;
      if (op == EditOp::kDel) ++c.del;
    }
    return c;
  }
};

// `100 * errors / words` rounded half-up to two decimals, without the sign.
inline std::string format_percent(std::uint64_t errors, std::uint64_t words) {
  const std::uint64_t hundredths = (errors * 20000 + words) / (2 * words);
  std::string frac = std::to_string(hundredths % 100);
  if (frac.size() < 2) frac.insert(0, "0");
  return std::to_string(hundredths / 100) + "." + frac;
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

/// Unit-cost Levenshtein alignment. On equal-cost backtrace choices,
/// match/substitution wins over deletion, deletion over insertion.
inline AlignmentRecord align(std::span<const std::string> ref, std::span<const std::string> hyp,
                             std::string utt_id = {}) {
  if (ref.empty()) throw ContractError("cannot score '" + utt_id + "': empty reference");
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  AlignmentRecord rec;
  rec.utt_id = std::move(utt_id);
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      rec.steps.push_back(ref[i - 1] == hyp[j - 1] ? EditOp::kOk : EditOp::kSub);
      rec.ref_tokens.push_back(ref[i - 1]);
      rec.hyp_tokens.push_back(hyp[j - 1]);
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      rec.steps.push_back(EditOp::kDel);
      rec.ref_tokens.push_back(ref[i - 1]);
      --i;
    } else {
      rec.steps.push_back(EditOp::kIns);
      rec.hyp_tokens.push_back(hyp[j - 1]);
      --j;
    }
  }
  std::reverse(rec.steps.begin(), rec.steps.end());
  std::reverse(rec.ref_tokens.begin(), rec.ref_tokens.end());
  std::reverse(rec.hyp_tokens.begin(), rec.hyp_tokens.end());
  rec.wer = 100.0 * static_cast<double>(at(n, m)) / static_cast<double>(n);
  return rec;
}

struct RawRecord {
  std::string utt_id;
  std::string text;
};

// `<utt_id> <text>` per line, in the given order.
inline std::string write_raw(std::span<const RawRecord> records) {
  std::string out;
  for (const auto& r : records) out += r.utt_id + " " + r.text + "\n";
  return out;
}

inline std::vector<RawRecord> read_raw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transcript file " + path.string());
  std::vector<RawRecord> out;
  std::set<std::string, std::less<>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = line.find_first_of(" \t", b);
    RawRecord r{line.substr(b, e == std::string::npos ? std::string::npos : e - b), {}};
    if (e != std::string::npos) {
      const auto words = split_words(std::string_view(line).substr(e));
      for (std::size_t k = 0; k < words.size(); ++k) r.text += (k ? " " : "") + words[k];
    }
    if (!seen.insert(r.utt_id).second) throw FormatError(path.string(), line_no, "duplicate utterance id '" + r.utt_id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

namespace detail {

inline std::size_t display_width(const std::string& s) { return split_utf8(s).size(); }

inline void rstrip(std::string& s) {
  while (!s.empty() && s.back() == ' ') s.pop_back();
}

}  // namespace detail

/// Five-line record: id, REF, HYP, STP, WER. Each alignment column is as
/// wide as its longer word; blanks fill the missing side of I/D columns and
/// OK steps. Trailing blanks are trimmed.
inline std::string write_aligned(const AlignmentRecord& rec) {
  std::string ref_row = "REF:";
  std::string hyp_row = "HYP:";
  std::string stp_row = "STP:";
  std::size_t ri = 0;
  std::size_t hi = 0;
  for (EditOp op : rec.steps) {
    const std::string r = op == EditOp::kIns ? std::string() : rec.ref_tokens[ri++];
    const std::string h = op == EditOp::kDel ? std::string() : rec.hyp_tokens[hi++];
    const std::size_t width = std::max(detail::display_width(r), detail::display_width(h));
    auto cell = [width](const std::string& word) {
      return " " + word + std::string(width - detail::display_width(word), ' ');
    };
    ref_row += cell(r);
    hyp_row += cell(h);
    stp_row += cell(op == EditOp::kOk ? std::string() : std::string(1, static_cast<char>(op)));
  }
  detail::rstrip(ref_row);
  detail::rstrip(hyp_row);
  detail::rstrip(stp_row);
  const EditCounts c = rec.counts();
  std::size_t ref_words = 0;
  for (EditOp op : rec.steps) ref_words += op == EditOp::kIns ? 0 : 1;
  return rec.utt_id + "\n" + ref_row + "\n" + hyp_row + "\n" + stp_row + "\nWER: " +
         format_percent(c.errors(), ref_words) + "%\n";
}

struct CorpusSummary {
  std::size_t utterances = 0;
  std::size_t ref_words = 0;
  EditCounts counts;
  double wer = 0.0;

  std::string text() const {
    return "%WER " + format_percent(counts.errors(), ref_words) + " [ " + std::to_string(counts.errors()) + " / " +
           std::to_string(ref_words) + ", " + std::to_string(counts.ins) + " ins, " + std::to_string(counts.del) +
           " del, " + std::to_string(counts.sub) + " sub ]\n" + "Sub " + format_percent(counts.sub, ref_words) +
           " Ins " + format_percent(counts.ins, ref_words) + " Del " + format_percent(counts.del, ref_words) + "\n" +
           "Utterances " + std::to_string(utterances) + "\n";
  }
};

inline CorpusSummary corpus_wer(std::span<const AlignmentRecord> records) {
  if (records.empty()) throw ContractError("corpus WER needs at least one record");
  CorpusSummary s;
  for (const auto& r : records) {
    const EditCounts c = r.counts();
    s.counts.sub += c.sub;
    s.counts.ins += c.ins;
    s.counts.del += c.del;
    s.ref_words += r.ref_tokens.size();
    ++s.utterances;
  }
  s.wer = 100.0 * static_cast<double>(s.counts.errors()) / static_cast<double>(s.ref_words);
  return s;
}

}  // namespace fused_beam
