#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fused_beam/errors.hpp"
#include "fused_beam/kaldi_io.hpp"
#include "fused_beam/score_matrix.hpp"
#include "fused_beam/token_dict.hpp"

namespace fused_beam {

// Scores for one decoder step: rows of log_probs (vocab) and attention (encoder frames).
struct AcousticStep {
  ScoreMatrix log_probs;
  ScoreMatrix attention;
};

/// Decoder-side state of an acoustic model for one utterance. Hypothesis
/// slots are reordered by backpointer and extended by one token per step.
class AcousticSession {
 public:
  virtual ~AcousticSession() = default;
  virtual std::size_t encoder_frames() const = 0;
  // Scores for the single empty-prefix slot.
  virtual AcousticStep initial() = 0;
  // New slot i continues old slot parents[i] with tokens[i].
  virtual AcousticStep step(std::span<const std::size_t> parents, std::span<const TokenId> tokens) = 0;
};

class AcousticScorer {
 public:
  virtual ~AcousticScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::unique_ptr<AcousticSession> init(const FeatureMatrix& features) const = 0;
};

struct TraceRow {
  std::vector<double> log_probs;
  std::vector<double> attention;
};

/// Scripted acoustic scores for one utterance, keyed by token prefix.
///
///   TRACE1 <utt_id> <T_enc> <vocab_size>
///   <prefix ids or -> | <log_probs...> | <attention...>
///   default | <log_probs...> | <attention...>
struct TraceFile {
  std::string utt_id;
  std::size_t encoder_frames = 0;
  std::size_t vocab_size = 0;
  std::map<std::vector<TokenId>, TraceRow> rows;
  std::optional<TraceRow> default_row;

  const TraceRow& lookup(std::span<const TokenId> prefix) const {
    auto it = rows.find(std::vector<TokenId>(prefix.begin(), prefix.end()));
    if (it != rows.end()) return it->second;
    if (default_row) return *default_row;
    throw FormatError("trace '" + utt_id + "' has no row for a prefix of length " + std::to_string(prefix.size()) +
                      " and no default row");
  }

  void validate_row(const TraceRow& row, const std::string& where) const {
    if (row.log_probs.size() != vocab_size) throw FormatError(where + ": expected " + std::to_string(vocab_size) + " log probs");
    if (row.attention.size() != encoder_frames) {
      throw FormatError(where + ": expected " + std::to_string(encoder_frames) + " attention weights");
    }
    double mass = 0.0;
    for (double v : row.log_probs) {
      if (std::isnan(v) || v > 0.0) throw FormatError(where + ": log probs must be <= 0");
      mass += std::exp(v);
    }
    if (std::abs(mass - 1.0) > 1e-5) throw FormatError(where + ": log probs do not normalize");
    double attn = 0.0;
    for (double a : row.attention) {
      if (!(a >= 0.0) || !std::isfinite(a)) throw FormatError(where + ": attention must be non-negative");
      attn += a;
    }
    if (std::abs(attn - 1.0) > 1e-5) throw FormatError(where + ": attention does not sum to 1");
  }

  static TraceFile parse(std::istream& in, const std::string& source = "<trace>") {
    TraceFile t;
    std::string line;
    std::size_t line_no = 0;
    auto split_numbers = [&](const std::string& field, std::vector<double>& out) {
      std::istringstream ss(field);
      for (std::string tok; ss >> tok;) {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
          throw FormatError(source, line_no, "bad number '" + tok + "'");
        }
        out.push_back(v);
      }
    };
    bool header = false;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos || line.front() == '#') continue;
      if (!header) {
        std::istringstream ss(line);
        std::string magic;
        if (!(ss >> magic >> t.utt_id >> t.encoder_frames >> t.vocab_size) || magic != "TRACE1" ||
            t.encoder_frames == 0 || t.vocab_size == 0) {
          throw FormatError(source, line_no, "expected header 'TRACE1 <utt_id> <T_enc> <vocab_size>'");
        }
        header = true;
        continue;
      }
      const auto bar1 = line.find('|');
      const auto bar2 = bar1 == std::string::npos ? bar1 : line.find('|', bar1 + 1);
      if (bar2 == std::string::npos) throw FormatError(source, line_no, "expected 'prefix | log_probs | attention'");
      TraceRow row;
      split_numbers(line.substr(bar1 + 1, bar2 - bar1 - 1), row.log_probs);
      split_numbers(line.substr(bar2 + 1), row.attention);
      t.validate_row(row, source + ":" + std::to_string(line_no));

      std::istringstream key(line.substr(0, bar1));
      std::vector<std::string> fields;
      for (std::string f; key >> f;) fields.push_back(f);
      if (fields.size() == 1 && fields[0] == "default") {
        if (t.default_row) throw FormatError(source, line_no, "duplicate default row");
        t.default_row = std::move(row);
        continue;
      }
      std::vector<TokenId> prefix;
      if (!(fields.size() == 1 && fields[0] == "-")) {
        for (const auto& f : fields) {
          TokenId id = 0;
          auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), id);
          if (ec != std::errc{} || ptr != f.data() + f.size() || id < 0 ||
              static_cast<std::size_t>(id) >= t.vocab_size) {
            throw FormatError(source, line_no, "bad prefix token '" + f + "'");
          }
          prefix.push_back(id);
        }
      }
      if (!t.rows.emplace(std::move(prefix), std::move(row)).second) {
        throw FormatError(source, line_no, "duplicate prefix row");
      }
    }
    if (!header) throw FormatError(source + ": missing TRACE1 header");
    return t;
  }

  static TraceFile load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trace " + path.string());
    return parse(in, path.string());
  }

  void write(std::ostream& os) const {
    os << "TRACE1 " << utt_id << ' ' << encoder_frames << ' ' << vocab_size << '\n';
    os << std::setprecision(17);
    auto emit = [&](const TraceRow& row) {
      os << " |";
      for (double v : row.log_probs) os << ' ' << v;
      os << " |";
      for (double v : row.attention) os << ' ' << v;
      os << '\n';
    };
    for (const auto& [prefix, row] : rows) {
      if (prefix.empty()) os << '-';
      for (std::size_t i = 0; i < prefix.size(); ++i) os << (i ? " " : "") << prefix[i];
      emit(row);
    }
    if (default_row) {
      os << "default";
      emit(*default_row);
    }
  }
};

/// Deterministic acoustic scorer backed by trace files, one per utterance id.
class TraceScorer final : public AcousticScorer {
 public:
  explicit TraceScorer(std::size_t vocab_size) : vocab_size_(vocab_size) {}

  void add(TraceFile trace) {
    if (trace.vocab_size != vocab_size_) {
      throw ContractError("trace '" + trace.utt_id + "' vocabulary size " + std::to_string(trace.vocab_size) +
                          " does not match " + std::to_string(vocab_size_));
    }
    const std::string id = trace.utt_id;
    if (!traces_.emplace(id, std::make_shared<const TraceFile>(std::move(trace))).second) {
      throw ContractError("duplicate trace for '" + id + "'");
    }
  }

  // Loads every `*.trace` file of a directory.
  static TraceScorer load_directory(const std::filesystem::path& dir, std::size_t vocab_size) {
    if (!std::filesystem::is_directory(dir)) throw IoError("trace directory " + dir.string() + " not found");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".trace") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    TraceScorer scorer(vocab_size);
    for (const auto& f : files) scorer.add(TraceFile::load(f));
    return scorer;
  }

  std::size_t vocab_size() const override { return vocab_size_; }

  std::vector<std::string> utterance_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : traces_) out.push_back(id);
    return out;
  }

  const TraceFile& trace(const std::string& utt_id) const {
    auto it = traces_.find(utt_id);
    if (it == traces_.end()) throw ContractError("no trace for utterance '" + utt_id + "'");
    return *it->second;
  }

  std::unique_ptr<AcousticSession> init(const FeatureMatrix& features) const override {
    auto it = traces_.find(features.utt_id);
    if (it == traces_.end()) throw ContractError("no trace for utterance '" + features.utt_id + "'");
    return std::make_unique<Session>(it->second);
  }

 private:
  class Session final : public AcousticSession {
   public:
    explicit Session(std::shared_ptr<const TraceFile> trace) : trace_(std::move(trace)) {}

    std::size_t encoder_frames() const override { return trace_->encoder_frames; }

    AcousticStep initial() override {
      prefixes_.assign(1, {});
      return rows();
    }

    AcousticStep step(std::span<const std::size_t> parents, std::span<const TokenId> tokens) override {
      if (parents.size() != tokens.size()) throw ContractError("trace step: parents and tokens differ in length");
      std::vector<std::vector<TokenId>> next;
      next.reserve(parents.size());
      for (std::size_t i = 0; i < parents.size(); ++i) {
        next.push_back(prefixes_.at(parents[i]));
        next.back().push_back(tokens[i]);
      }
      prefixes_ = std::move(next);
      return rows();
    }

   private:
    AcousticStep rows() const {
      AcousticStep out{ScoreMatrix(prefixes_.size(), trace_->vocab_size),
                       ScoreMatrix(prefixes_.size(), trace_->encoder_frames)};
      for (std::size_t i = 0; i < prefixes_.size(); ++i) {
        const TraceRow& row = trace_->lookup(prefixes_[i]);
        std::copy(row.log_probs.begin(), row.log_probs.end(), out.log_probs.row(i).begin());
        std::copy(row.attention.begin(), row.attention.end(), out.attention.row(i).begin());
      }
      return out;
    }

    std::shared_ptr<const TraceFile> trace_;
    std::vector<std::vector<TokenId>> prefixes_;
  };

  std::size_t vocab_size_;
  std::map<std::string, std::shared_ptr<const TraceFile>> traces_;
};

}  // namespace fused_beam
