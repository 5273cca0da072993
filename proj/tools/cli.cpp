#include "cli.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <variant>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "fused_beam/fused_beam.hpp"

namespace fused_beam::cli {
namespace {

namespace fs = std::filesystem;

// Bad flags, missing inputs: exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  // build-trie / lm-probe / decode inputs
  std::string vocab;
  std::string dict;
  std::string output;
  std::string scp;
  std::string trace_dir;
  std::string lm_mode = "none";
  std::string arpa;
  std::string char_arpa;
  std::string table_lm;
  std::string trie;
  std::string ref;
  std::string hyp;
  std::string aligned_output;
  std::string summary_output;
  std::string history;
  std::string prefix;
  std::size_t beam = 50;
  double lm_weight = 0.9;
  std::string coverage = "off";
  double coverage_weight = 0.01;
  double tau1 = 0.5;
  double tau2 = 1.0;
  double cov_margin = 0.7;
  std::optional<double> eos_gamma;
  double max_len_ratio = 1.0;
  double oov_penalty = -10.0;
  std::size_t batch_size = 16;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
};

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("fused_beam", sink);
  logger->set_pattern("[%l] %v");
  auto level = spdlog::level::warn;
  if (const char* env = std::getenv("FUSED_BEAM_LOG"); env != nullptr && *env != '\0') {
    level = spdlog::level::from_str(env);
  }
  logger->set_level(level);
  return logger;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError(what + " is required");
  if (!fs::exists(path)) throw UsageError(what + " '" + path + "' does not exist");
}

std::vector<std::string> read_word_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open word list " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string w;
    if (fields >> w && w.front() != '#') words.push_back(w);
  }
  return words;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os.flush()) throw IoError("write failed on " + path.string());
}

PrefixTreeAutomaton load_or_build_trie(const RunConfig& cfg, const TokenDictionary& dict) {
  if (!cfg.trie.empty()) {
    auto trie = PrefixTreeAutomaton::load(fs::path(cfg.trie));
    if (trie.alphabet_size() != dict.size()) throw UsageError("trie was built for a different dictionary");
    return trie;
  }
  return PrefixTreeAutomaton::build(read_word_list(cfg.vocab), dict);
}

std::unique_ptr<WordLM> load_word_lm(const RunConfig& cfg, std::vector<std::string> words) {
  if (!cfg.table_lm.empty()) return std::make_unique<TableWordLM>(TableWordLM::load(cfg.table_lm, std::move(words)));
  return std::make_unique<ArpaWordLM>(load_arpa(cfg.arpa, std::move(words)));
}

void check_word_inputs(const RunConfig& cfg) {
  if (cfg.trie.empty()) require_file(cfg.vocab, "--word-vocab");
  else require_file(cfg.trie, "--trie");
  if (!cfg.arpa.empty() && !cfg.table_lm.empty()) throw UsageError("--arpa and --table-lm are mutually exclusive");
  if (cfg.table_lm.empty()) require_file(cfg.arpa, "--arpa");
  else require_file(cfg.table_lm, "--table-lm");
}

// ---------------------------------------------------------------- build-trie

int cmd_build_trie(const RunConfig& cfg, std::ostream& out) {
  require_file(cfg.vocab, "--word-vocab");
  require_file(cfg.dict, "--dict");
  if (cfg.output.empty()) throw UsageError("--output is required");
  const TokenDictionary dict = load_dictionary(cfg.dict);
  const auto trie = PrefixTreeAutomaton::build(read_word_list(cfg.vocab), dict);
  trie.save(fs::path(cfg.output));
  out << trie.num_states() << " states, " << trie.num_words() << " words\n";
  return kExitOk;
}

// ------------------------------------------------------------------ lm-probe

int cmd_lm_probe(const RunConfig& cfg, std::ostream& out) {
  require_file(cfg.dict, "--dict");
  check_word_inputs(cfg);
  const TokenDictionary dict = load_dictionary(cfg.dict);
  const auto trie = load_or_build_trie(cfg, dict);
  const auto words = trie.sorted_words(dict);
  const auto lm = load_word_lm(cfg, words);
  LookaheadFusion fusion(trie, *lm, dict, LookaheadOptions{cfg.oov_penalty});

  WordHistory h = lm->start_history();
  for (const auto& w : split_words(cfg.history)) {
    std::int32_t rank = kUnknownWord;
    const StateId node = trie.walk(tokenize_transcript(w, dict));
    if (node != kNoState && trie.is_final(node)) rank = trie.word_index(node);
    h = lm->extend_history(h, rank);
  }
  LookaheadState state{kRootState, fusion.refresh(h), h};
  state.trie_state = trie.walk(tokenize_transcript(cfg.prefix, dict));
  if (state.trie_state == kNoState) {
    out << fmt::format("prefix '{}' is outside the lexicon; every token scores the OOV penalty {:.4f}\n", cfg.prefix,
                       cfg.oov_penalty);
    return kExitOk;
  }
  const ScoreMatrix scores = fusion.score(std::span<const LookaheadState>(&state, 1));
  std::string line;
  const std::size_t degree = trie.max_out_degree();
  for (std::size_t k = 0; k < degree; ++k) {
    const std::size_t cell = static_cast<std::size_t>(state.trie_state) * degree + k;
    if (trie.transitions()[cell] == kNoState) break;
    const TokenId c = trie.edge_labels()[cell];
    if (!line.empty()) line += ", ";
    line += fmt::format("{} {:.4f}", dict.token_of(c), std::exp(scores(0, static_cast<std::size_t>(c))));
  }
  if (!line.empty()) out << line << '\n';
  if (trie.is_final(state.trie_state)) {
    out << fmt::format("word-end {:.4f}\n", std::exp(scores(0, static_cast<std::size_t>(dict.space_id()))));
  }
  return kExitOk;
}

// ----------------------------------------------------------------- score-wer

struct ScoreOutputs {
  std::string aligned;
  std::string summary;
};

ScoreOutputs score_transcripts(const std::vector<RawRecord>& refs, const std::vector<RawRecord>& hyps,
                               spdlog::logger& log) {
  std::map<std::string, const RawRecord*> by_id;
  for (const auto& h : hyps) by_id.emplace(h.utt_id, &h);
  std::vector<AlignmentRecord> records;
  ScoreOutputs out;
  for (const auto& r : refs) {
    const auto ref_words = split_words(r.text);
    if (ref_words.empty()) {
      log.warn("utterance '{}' has an empty reference; skipped", r.utt_id);
      continue;
    }
    std::vector<std::string> hyp_words;
    if (auto it = by_id.find(r.utt_id); it != by_id.end()) {
      hyp_words = split_words(it->second->text);
    } else {
      log.warn("utterance '{}' missing from hypotheses; counted as deletions", r.utt_id);
    }
    records.push_back(align(ref_words, hyp_words, r.utt_id));
    out.aligned += write_aligned(records.back());
  }
  std::map<std::string, bool> ref_ids;
  for (const auto& r : refs) ref_ids.emplace(r.utt_id, true);
  for (const auto& h : hyps) {
    if (!ref_ids.contains(h.utt_id)) log.warn("hypothesis '{}' has no reference; ignored", h.utt_id);
  }
  if (records.empty()) throw FormatError("no scorable utterances");
  out.summary = corpus_wer(records).text();
  return out;
}

int cmd_score_wer(const RunConfig& cfg, std::ostream& out, spdlog::logger& log) {
  require_file(cfg.ref, "--ref");
  require_file(cfg.hyp, "--hyp");
  const auto result = score_transcripts(read_raw(cfg.ref), read_raw(cfg.hyp), log);
  if (cfg.aligned_output.empty()) out << result.aligned;
  else write_text(cfg.aligned_output, result.aligned);
  if (cfg.summary_output.empty()) out << result.summary;
  else write_text(cfg.summary_output, result.summary);
  return kExitOk;
}

// -------------------------------------------------------------------- decode

DecodeConfig decode_config(const RunConfig& cfg, const TokenDictionary& dict) {
  DecodeConfig dc;
  dc.beam_size = cfg.beam;
  dc.lm_weight = cfg.lm_weight;
  dc.coverage_mode = cfg.coverage == "original"  ? CoverageMode::kOriginal
                     : cfg.coverage == "improved" ? CoverageMode::kImproved
                                                  : CoverageMode::kOff;
  dc.coverage_weight = cfg.coverage_weight;
  dc.tau1 = cfg.tau1;
  dc.tau2 = cfg.tau2;
  dc.cov_margin = cfg.cov_margin;
  dc.eos_gamma = cfg.eos_gamma;
  dc.max_len_ratio = cfg.max_len_ratio;
  dc.eos_id = dict.eos_id();
  dc.pad_id = dict.pad_id();
  try {
    dc.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  if (cfg.batch_size == 0) throw UsageError("--batch-size must be positive");
  if (cfg.workers == 0) throw UsageError("--workers must be positive");
  return dc;
}

// Decodes utterance batches on a small worker pool; results keep input order.
template <typename Decode>
std::vector<DecodeResult> decode_all(const std::vector<FeatureMatrix>& utts, std::size_t batch_size,
                                     std::size_t workers, Decode&& decode) {
  const std::size_t n_batches = (utts.size() + batch_size - 1) / batch_size;
  std::vector<std::vector<DecodeResult>> per_batch(n_batches);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&]() {
    for (std::size_t b; (b = next.fetch_add(1)) < n_batches;) {
      try {
        const std::size_t begin = b * batch_size;
        const std::size_t len = std::min(batch_size, utts.size() - begin);
        per_batch[b] = decode(std::span<const FeatureMatrix>(utts.data() + begin, len));
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::min(workers, n_batches); ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  std::vector<DecodeResult> all;
  for (auto& batch : per_batch) {
    for (auto& r : batch) all.push_back(std::move(r));
  }
  return all;
}

int cmd_decode(const RunConfig& cfg, std::ostream& out, std::ostream& err, spdlog::logger& log) {
  // Fail fast on configuration and missing inputs.
  require_file(cfg.dict, "--dict");
  require_file(cfg.trace_dir, "--trace-dir");
  if (!cfg.scp.empty()) require_file(cfg.scp, "--scp");
  if (!cfg.ref.empty()) require_file(cfg.ref, "--ref");
  if (!cfg.aligned_output.empty() && cfg.ref.empty()) throw UsageError("--aligned-output needs --ref");
  if (cfg.lm_mode == "lookahead") {
    check_word_inputs(cfg);
  } else if (cfg.lm_mode == "multilevel") {
    check_word_inputs(cfg);
    if (!cfg.char_arpa.empty()) require_file(cfg.char_arpa, "--char-arpa");
  } else if (cfg.lm_mode == "subword") {
    if (cfg.char_arpa.empty()) require_file(cfg.arpa, "--arpa");
    else require_file(cfg.char_arpa, "--char-arpa");
  }
  const TokenDictionary dict = load_dictionary(cfg.dict);
  const DecodeConfig dc = decode_config(cfg, dict);
  const TraceScorer scorer = TraceScorer::load_directory(cfg.trace_dir, dict.size());

  std::vector<FeatureMatrix> utts;
  if (!cfg.scp.empty()) {
    for (const auto& entry : read_scp(cfg.scp)) utts.push_back(read_ark_matrix(entry));
  } else {
    for (const auto& id : scorer.utterance_ids()) {
      const TraceFile& t = scorer.trace(id);
      utts.push_back(FeatureMatrix{id, t.encoder_frames, 1, std::vector<float>(t.encoder_frames, 0.0f)});
    }
  }
  log.info("decoding {} utterances, lm={}, beam={}, seed={}", utts.size(), cfg.lm_mode, dc.beam_size, cfg.seed);

  std::optional<PrefixTreeAutomaton> trie;
  std::unique_ptr<WordLM> word_lm;
  std::unique_ptr<CharLM> char_lm;
  if (cfg.lm_mode == "lookahead" || cfg.lm_mode == "multilevel") {
    trie = load_or_build_trie(cfg, dict);
    word_lm = load_word_lm(cfg, trie->sorted_words(dict));
  }
  if (cfg.lm_mode == "multilevel") {
    if (cfg.char_arpa.empty()) char_lm = std::make_unique<UniformCharLM>(dict);
    else char_lm = std::make_unique<ArpaCharLM>(NgramModel::load(cfg.char_arpa), dict);
  } else if (cfg.lm_mode == "subword") {
    char_lm = std::make_unique<ArpaCharLM>(NgramModel::load(cfg.char_arpa.empty() ? cfg.arpa : cfg.char_arpa), dict);
  }

  const auto started = std::chrono::steady_clock::now();
  std::vector<DecodeResult> results;
  if (cfg.lm_mode == "lookahead") {
    LookaheadFusion fusion(*trie, *word_lm, dict, LookaheadOptions{cfg.oov_penalty});
    results = decode_all(utts, cfg.batch_size, cfg.workers,
                         [&](std::span<const FeatureMatrix> b) { return decode_batch(b, scorer, fusion, dc); });
    if (fusion.floored_count() > 0) log.info("{} states hit the zero-mass floor", fusion.floored_count());
  } else if (cfg.lm_mode == "multilevel") {
    MultiLevelFusion fusion(*char_lm, *word_lm, *trie, dict, MultiLevelOptions{cfg.oov_penalty});
    results = decode_all(utts, cfg.batch_size, cfg.workers,
                         [&](std::span<const FeatureMatrix> b) { return decode_batch(b, scorer, fusion, dc); });
    if (fusion.empty_word_count() > 0) log.info("{} empty words", fusion.empty_word_count());
  } else if (cfg.lm_mode == "subword") {
    SubwordFusion fusion(*char_lm);
    results = decode_all(utts, cfg.batch_size, cfg.workers,
                         [&](std::span<const FeatureMatrix> b) { return decode_batch(b, scorer, fusion, dc); });
  } else {
    results = decode_all(utts, cfg.batch_size, cfg.workers,
                         [&](std::span<const FeatureMatrix> b) { return decode_batch(b, scorer, dc); });
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  std::vector<RawRecord> raw;
  for (const auto& r : results) {
    if (!r.finished) log.warn("utterance '{}' hit the length cap without <eos>", r.utt_id);
    raw.push_back({r.utt_id, detokenize(r.tokens, dict)});
  }
  const std::string raw_text = write_raw(raw);
  if (cfg.output.empty()) out << raw_text;
  else write_text(cfg.output, raw_text);

  if (!cfg.ref.empty()) {
    const auto scored = score_transcripts(read_raw(cfg.ref), raw, log);
    if (!cfg.aligned_output.empty()) write_text(cfg.aligned_output, scored.aligned);
    if (cfg.summary_output.empty()) out << scored.summary;
    else write_text(cfg.summary_output, scored.summary);
  }
  err << fmt::format("decoded {} utterances in {:.3f} s ({:.1f} utt/s)\n", results.size(), seconds,
                     seconds > 0.0 ? static_cast<double>(results.size()) / seconds : 0.0);
  return kExitOk;
}

void add_word_lm_flags(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--word-vocab", cfg.vocab, "Word vocabulary, one word per line");
  sub->add_option("--trie", cfg.trie, "Prefix tree built by build-trie (replaces --word-vocab)");
  sub->add_option("--arpa", cfg.arpa, "ARPA word n-gram model");
  sub->add_option("--table-lm", cfg.table_lm, "Table word LM (history<TAB>word<TAB>prob)");
  sub->add_option("--oov-penalty", cfg.oov_penalty, "Log score for tokens outside the lexicon");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto logger = make_logger(err);
  RunConfig cfg;
  CLI::App app{"Batched beam search decoding with look-ahead word LM fusion"};
  // Keys go under a [decode] section; flags on the command line win.
  app.set_config("--config", "", "INI/TOML config file; flags override it");
  app.require_subcommand(1);

  auto* build = app.add_subcommand("build-trie", "Build and serialize the prefix tree of a word vocabulary");
  build->add_option("--word-vocab,--vocab", cfg.vocab, "Word vocabulary, one word per line");
  build->add_option("--dict", cfg.dict, "Token dictionary");
  build->add_option("--output,-o", cfg.output, "Output PTA1 file");

  auto* decode = app.add_subcommand("decode", "Decode utterances with optional LM fusion");
  decode->fallthrough();
  decode->add_option("--scp", cfg.scp, "Kaldi scp of feature matrices");
  decode->add_option("--trace-dir", cfg.trace_dir, "Directory of <utt>.trace acoustic score files");
  decode->add_option("--dict", cfg.dict, "Token dictionary");
  decode->add_option("--lm", cfg.lm_mode, "LM fusion mode")
      ->check(CLI::IsMember({"none", "subword", "multilevel", "lookahead"}));
  add_word_lm_flags(decode, cfg);
  decode->add_option("--char-arpa", cfg.char_arpa, "ARPA model over tokens (subword/multilevel modes)");
  decode->add_option("--beam", cfg.beam, "Beam size");
  decode->add_option("--lm-weight", cfg.lm_weight, "LM fusion weight");
  decode->add_option("--coverage", cfg.coverage, "Coverage term")
      ->check(CLI::IsMember({"off", "original", "improved"}));
  decode->add_option("--coverage-weight", cfg.coverage_weight, "Coverage weight");
  decode->add_option("--tau1", cfg.tau1, "Coverage threshold tau1");
  decode->add_option("--tau2", cfg.tau2, "Coverage threshold tau2 (improved)");
  decode->add_option("--cov-margin", cfg.cov_margin, "Coverage over-attention margin (improved)");
  decode->add_option("--eos-gamma", cfg.eos_gamma, "EOS threshold factor (off when unset)");
  decode->add_option("--max-len-ratio", cfg.max_len_ratio, "Max output length per encoder frame");
  decode->add_option("--batch-size", cfg.batch_size, "Utterances per batch");
  decode->add_option("--workers", cfg.workers, "Concurrent decoding workers");
  decode->add_option("--seed", cfg.seed, "Seed (decoding is deterministic; recorded in logs)");
  decode->add_option("--output,-o", cfg.output, "Raw output file (stdout if unset)");
  decode->add_option("--ref", cfg.ref, "Reference transcripts in raw format");
  decode->add_option("--aligned-output", cfg.aligned_output, "Aligned results file (needs --ref)");
  decode->add_option("--summary-output", cfg.summary_output, "Corpus WER summary file (needs --ref)");

  auto* score = app.add_subcommand("score-wer", "Align hypotheses against references and report WER");
  score->add_option("--ref", cfg.ref, "Reference transcripts in raw format");
  score->add_option("--hyp", cfg.hyp, "Hypothesis transcripts in raw format");
  score->add_option("--aligned-output", cfg.aligned_output, "Aligned results file (stdout if unset)");
  score->add_option("--summary-output", cfg.summary_output, "Corpus summary file (stdout if unset)");

  auto* probe = app.add_subcommand("lm-probe", "Print look-ahead character probabilities for a prefix");
  probe->add_option("--dict", cfg.dict, "Token dictionary");
  add_word_lm_flags(probe, cfg);
  probe->add_option("--history", cfg.history, "Preceding words, space separated");
  probe->add_option("--prefix", cfg.prefix, "Characters of the current word");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (build->parsed()) return cmd_build_trie(cfg, out);
    if (decode->parsed()) return cmd_decode(cfg, out, err, *logger);
    if (score->parsed()) return cmd_score_wer(cfg, out, *logger);
    if (probe->parsed()) return cmd_lm_probe(cfg, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace fused_beam::cli
