#pragma once

// Everything upstream of training: the synthetic bilingual corpus, the toy
// translator, round-trip filtered pseudo-parallel corpora, sentence
// separators, TextRank keywords and distillation labels.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace xlsum::data {

enum class UnitMode { Sentence, Keyword };

std::string to_string(UnitMode mode);
UnitMode parse_unit_mode(std::string_view name);

// q for the unit whose <sep> (sentence mode) or first occurrence (keyword
// mode) sits at `position` in the separator-inserted article units.
struct SalienceLabel {
  std::size_t position = 0;
  double q = 0.0;
};

struct Example {
  std::string id;
  std::string article_src;
  std::string summary_src;
  std::optional<std::string> pseudo_summary_tgt;
  std::optional<std::vector<SalienceLabel>> salience;
  std::optional<UnitMode> unit_mode;
};

struct ParallelPair {
  std::string src;
  std::string tgt;
};

// ---- sentences and separators ---------------------------------------------

// Sentences end at a unit ending in '.', '?' or '!'; trailing units without
// a terminator form a final sentence. Returns unit lists per sentence.
std::vector<std::vector<std::string>> split_sentences(std::string_view text);
std::string join_units(const std::vector<std::string>& units);

struct SeparatedArticle {
  std::vector<std::string> units;  // kSepToken before every sentence
  std::vector<std::size_t> sep_positions;
};

SeparatedArticle insert_separators(std::string_view article);
// Inverse of insert_separators on the unit level.
std::vector<std::string> strip_separators(const std::vector<std::string>& units);

// ---- synthetic corpus -----------------------------------------------------

struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::size_t vocab_size = 50;
  std::size_t min_sentences = 6;
  std::size_t max_sentences = 12;
  std::size_t min_sentence_length = 4;
  std::size_t max_sentence_length = 9;
  double salient_fraction = 0.3;
  double mt_noise_rate = 0.1;
  std::size_t mt_pairs_per_example = 4;

  void validate() const;
};

// Bijective word map between two disjoint alphabets (source words are
// lowercase, target words uppercase). The sentence terminator maps to itself.
struct Lexicon {
  std::vector<std::string> source;  // source[i] <-> target[i]
  std::vector<std::string> target;
  std::string topic_word;  // marks salient sentences

  static Lexicon generate(std::uint64_t seed, std::size_t vocab_size);
  std::optional<std::string> to_target(const std::string& word) const;
  std::optional<std::string> to_source(const std::string& word) const;
};

struct SyntheticCorpus {
  SyntheticSpec spec;
  Lexicon lexicon;
  std::vector<Example> examples;
  std::vector<ParallelPair> parallel;
};

// `n` articles with salient sentences (those containing the topic word);
// summary_src is the salient sentences in order. Parallel pairs are fresh
// sentences with their noise-free translations. Deterministic in spec.seed.
// `id_offset` shifts example ids and the article stream, so a held-out split
// generated with the same spec never repeats training articles.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, std::size_t n, std::size_t id_offset = 0);

nlohmann::json spec_to_json(const SyntheticSpec& spec, const Lexicon& lexicon);
std::pair<SyntheticSpec, Lexicon> spec_from_json(const nlohmann::json& j);

// ---- toy translation ------------------------------------------------------

enum class Direction { SourceToTarget, TargetToSource };

struct TranslationStats {
  std::size_t tokens = 0;
  std::size_t substituted = 0;
};

// Word-by-word lexicon mapping, then adjacent-pair swaps inside every
// sentence, then per-token substitution with probability noise_rate by a
// different word of the output language. Unknown words become "<unk>".
std::string toy_translate(const Lexicon& lexicon, double noise_rate, std::uint64_t seed, std::string_view text,
                          Direction direction, TranslationStats* stats = nullptr);

struct ToyTranslator {
  const Lexicon* lexicon = nullptr;
  double noise_rate = 0.0;
  std::uint64_t seed = 0;

  std::string operator()(std::string_view text, Direction direction, std::uint64_t salt) const;
};

struct PseudoCorpusResult {
  std::vector<Example> kept;
  std::vector<std::string> dropped_ids;
  std::vector<double> round_trip_rouge;  // one per input example
};

// ỹ = translate(summary_src); y' = back-translate(ỹ); keep iff
// ROUGE-L F1(y', summary_src) >= tau. Kept examples gain pseudo_summary_tgt
// and are otherwise unchanged.
PseudoCorpusResult build_pseudo_corpus(const std::vector<Example>& examples, const ToyTranslator& translator,
                                       double tau);

// ---- TextRank --------------------------------------------------------------

struct TextRankConfig {
  std::size_t window = 4;
  double damping = 0.85;
  double tol = 1e-6;
  std::size_t max_iter = 100;
};

struct Keyword {
  std::string token;
  double score = 0.0;
};

struct TextRankResult {
  std::vector<Keyword> keywords;  // score descending, ties lexicographic
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> max_deltas;  // per iteration
};

// Keyword candidates are units made of letters/digits only. Two candidates
// are linked when they occur within `window` consecutive candidate slots.
TextRankResult textrank_keywords(std::string_view text, const TextRankConfig& config = {});

// ---- distillation labels --------------------------------------------------

// Per-sentence inclusion probabilities for an article (teacher output).
using SentenceScorer = std::function<std::vector<double>(const std::string& article)>;

struct LabelConfig {
  TextRankConfig textrank;
  double keyword_fraction = 1.0 / 3.0;  // top share of ranked candidates kept
  double clamp_eps = 1e-4;
};

std::vector<SalienceLabel> make_salience_labels(const Example& example, UnitMode mode, const SentenceScorer* teacher,
                                                const LabelConfig& config = {});

// Keeps the k sentences with highest teacher probability (ties: earlier
// sentence), in article order. Salience labels are dropped since their
// positions no longer apply.
Example hard_extract_top_k(const Example& example, const SentenceScorer& teacher, std::size_t k);

// ---- JSONL ----------------------------------------------------------------

nlohmann::json example_to_json(const Example& e);
Example example_from_json(const nlohmann::json& j);
std::string examples_to_jsonl(const std::vector<Example>& examples);
std::vector<Example> examples_from_jsonl(std::string_view text);
std::string parallel_to_jsonl(const std::vector<ParallelPair>& pairs);
std::vector<ParallelPair> parallel_from_jsonl(std::string_view text);

}  // namespace xlsum::data
