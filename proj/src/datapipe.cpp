#include "xlsum/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "xlsum/errors.hpp"
#include "xlsum/metrics.hpp"
#include "xlsum/rng.hpp"
#include "xlsum/vocab.hpp"

namespace xlsum::data {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

bool ends_sentence(const std::string& unit) {
  const char last = unit.back();
  return last == '.' || last == '?' || last == '!';
}

bool is_terminator(const std::string& unit) { return unit == "." || unit == "?" || unit == "!"; }

bool is_keyword_candidate(const std::string& unit) {
  if (unit.empty() || is_reserved_token(unit)) return false;
  for (char c : unit) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && !std::isalnum(u)) return false;
  }
  return true;
}

std::vector<std::string> make_words(Rng& gen, std::size_t count, const std::string& consonants,
                                    const std::string& vowels) {
  std::vector<std::string> all;
  for (char c1 : consonants)
    for (char v1 : vowels)
      for (char c2 : consonants)
        for (char v2 : vowels) all.push_back(std::string{c1, v1, c2, v2});
  shuffle_in_place(all, gen);
  if (count > all.size()) throw ContractError("synthetic vocabulary larger than the word space");
  all.resize(count);
  return all;
}

std::vector<std::string> random_sentence(Rng& gen, const SyntheticSpec& spec, const Lexicon& lex, bool salient) {
  const auto len = static_cast<std::size_t>(
      uniform_between(gen, spec.min_sentence_length, spec.max_sentence_length));
  std::vector<std::string> words(len);
  // Index 0 is the topic word; ordinary words come from 1..V-1.
  for (auto& w : words) w = lex.source[1 + uniform_below(gen, lex.source.size() - 1)];
  if (salient) words[uniform_below(gen, len)] = lex.topic_word;
  words.emplace_back(".");
  return words;
}

}  // namespace

std::string to_string(UnitMode mode) { return mode == UnitMode::Sentence ? "sentence" : "keyword"; }

UnitMode parse_unit_mode(std::string_view name) {
  if (name == "sentence") return UnitMode::Sentence;
  if (name == "keyword") return UnitMode::Keyword;
  throw ContractError("unknown unit mode '" + std::string(name) + "' (expected sentence|keyword)");
}

// ---------------------------------------------------------------------------
// sentences and separators

std::vector<std::vector<std::string>> split_sentences(std::string_view text) {
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> current;
  for (auto& unit : split_ws(text)) {
    const bool end = ends_sentence(unit);
    current.push_back(std::move(unit));
    if (end) {
      sentences.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) sentences.push_back(std::move(current));
  return sentences;
}

std::string join_units(const std::vector<std::string>& units) {
  std::string out;
  for (const auto& u : units) {
    if (!out.empty()) out += ' ';
    out += u;
  }
  return out;
}

SeparatedArticle insert_separators(std::string_view article) {
  SeparatedArticle out;
  for (const auto& sentence : split_sentences(article)) {
    out.sep_positions.push_back(out.units.size());
    out.units.emplace_back(kSepToken);
    out.units.insert(out.units.end(), sentence.begin(), sentence.end());
  }
  return out;
}

std::vector<std::string> strip_separators(const std::vector<std::string>& units) {
  std::vector<std::string> out;
  for (const auto& u : units) {
    if (u != kSepToken) out.push_back(u);
  }
  return out;
}

// ---------------------------------------------------------------------------
// synthetic corpus

void SyntheticSpec::validate() const {
  if (vocab_size < 2) throw ContractError("synthetic spec: vocab_size must be >= 2");
  if (min_sentences < 1 || min_sentences > max_sentences) {
    throw ContractError("synthetic spec: sentence count range is empty");
  }
  if (min_sentence_length < 1 || min_sentence_length > max_sentence_length) {
    throw ContractError("synthetic spec: sentence length range is empty");
  }
  if (!(salient_fraction > 0.0 && salient_fraction <= 1.0)) {
    throw ContractError("synthetic spec: salient_fraction must be in (0, 1]");
  }
  if (!(mt_noise_rate >= 0.0 && mt_noise_rate <= 1.0)) {
    throw ContractError("synthetic spec: mt_noise_rate must be in [0, 1]");
  }
}

Lexicon Lexicon::generate(std::uint64_t seed, std::size_t vocab_size) {
  Rng src_gen(mix_seed(seed, {0x1e}));
  Rng tgt_gen(mix_seed(seed, {0x2e}));
  Lexicon lex;
  lex.source = make_words(src_gen, vocab_size, "bdfgklmnprstvz", "aeiou");
  lex.target = make_words(tgt_gen, vocab_size, "BDFGKLMNPRSTVZ", "AEIOU");
  lex.topic_word = lex.source.front();
  return lex;
}

std::optional<std::string> Lexicon::to_target(const std::string& word) const {
  auto it = std::find(source.begin(), source.end(), word);
  if (it == source.end()) return std::nullopt;
  return target[static_cast<std::size_t>(it - source.begin())];
}

std::optional<std::string> Lexicon::to_source(const std::string& word) const {
  auto it = std::find(target.begin(), target.end(), word);
  if (it == target.end()) return std::nullopt;
  return source[static_cast<std::size_t>(it - target.begin())];
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, std::size_t n, std::size_t id_offset) {
  spec.validate();
  if (n < 1) throw ContractError("generate_synthetic: n must be >= 1");
  SyntheticCorpus corpus;
  corpus.spec = spec;
  corpus.lexicon = Lexicon::generate(spec.seed, spec.vocab_size);
  const auto& lex = corpus.lexicon;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t index = id_offset + i;
    Rng gen(mix_seed(spec.seed, {0xa7, index}));
    const auto n_sent = static_cast<std::size_t>(uniform_between(gen, spec.min_sentences, spec.max_sentences));
    const auto k = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(spec.salient_fraction * static_cast<double>(n_sent))), 1, n_sent);
    std::vector<std::size_t> order(n_sent);
    std::iota(order.begin(), order.end(), 0);
    shuffle_in_place(order, gen);
    std::vector<bool> salient(n_sent, false);
    for (std::size_t j = 0; j < k; ++j) salient[order[j]] = true;

    std::vector<std::string> article, summary;
    for (std::size_t s = 0; s < n_sent; ++s) {
      auto sentence = random_sentence(gen, spec, lex, salient[s]);
      article.insert(article.end(), sentence.begin(), sentence.end());
      if (salient[s]) summary.insert(summary.end(), sentence.begin(), sentence.end());
    }
    Example e;
    e.id = "syn-" + std::to_string(index);
    e.article_src = join_units(article);
    e.summary_src = join_units(summary);
    corpus.examples.push_back(std::move(e));

    Rng mt_gen(mix_seed(spec.seed, {0xb3, index}));
    for (std::size_t p = 0; p < spec.mt_pairs_per_example; ++p) {
      const bool topical = uniform01(mt_gen) < spec.salient_fraction;
      const auto src = join_units(random_sentence(mt_gen, spec, lex, topical));
      corpus.parallel.push_back({src, toy_translate(lex, 0.0, 0, src, Direction::SourceToTarget)});
    }
  }
  return corpus;
}

nlohmann::json spec_to_json(const SyntheticSpec& spec, const Lexicon& lexicon) {
  nlohmann::json j;
  j["version"] = 1;
  j["seed"] = spec.seed;
  j["vocab_size"] = spec.vocab_size;
  j["min_sentences"] = spec.min_sentences;
  j["max_sentences"] = spec.max_sentences;
  j["min_sentence_length"] = spec.min_sentence_length;
  j["max_sentence_length"] = spec.max_sentence_length;
  j["salient_fraction"] = spec.salient_fraction;
  j["mt_noise_rate"] = spec.mt_noise_rate;
  j["mt_pairs_per_example"] = spec.mt_pairs_per_example;
  j["lexicon"] = {{"source", lexicon.source}, {"target", lexicon.target}, {"topic_word", lexicon.topic_word}};
  return j;
}

std::pair<SyntheticSpec, Lexicon> spec_from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != 1) throw FormatError("unsupported synthetic spec version");
  SyntheticSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.vocab_size = j.at("vocab_size").get<std::size_t>();
  s.min_sentences = j.at("min_sentences").get<std::size_t>();
  s.max_sentences = j.at("max_sentences").get<std::size_t>();
  s.min_sentence_length = j.at("min_sentence_length").get<std::size_t>();
  s.max_sentence_length = j.at("max_sentence_length").get<std::size_t>();
  s.salient_fraction = j.at("salient_fraction").get<double>();
  s.mt_noise_rate = j.at("mt_noise_rate").get<double>();
  s.mt_pairs_per_example = j.at("mt_pairs_per_example").get<std::size_t>();
  Lexicon lex;
  lex.source = j.at("lexicon").at("source").get<std::vector<std::string>>();
  lex.target = j.at("lexicon").at("target").get<std::vector<std::string>>();
  lex.topic_word = j.at("lexicon").at("topic_word").get<std::string>();
  if (lex.source.size() != lex.target.size()) throw FormatError("lexicon sides differ in size");
  return {s, lex};
}

// ---------------------------------------------------------------------------
// toy translation

std::string toy_translate(const Lexicon& lexicon, double noise_rate, std::uint64_t seed, std::string_view text,
                          Direction direction, TranslationStats* stats) {
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw ContractError("toy_translate: noise_rate outside [0,1]");
  const bool forward = direction == Direction::SourceToTarget;
  const auto& from = forward ? lexicon.source : lexicon.target;
  const auto& to = forward ? lexicon.target : lexicon.source;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < from.size(); ++i) index.emplace(from[i], i);

  Rng gen(seed);
  std::vector<std::string> out;
  for (auto& sentence : split_sentences(text)) {
    std::string terminator;
    if (is_terminator(sentence.back())) {
      terminator = sentence.back();
      sentence.pop_back();
    }
    // Mapped lexicon index per word, or npos for out-of-lexicon words.
    std::vector<std::size_t> mapped(sentence.size());
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      auto it = index.find(sentence[i]);
      mapped[i] = it == index.end() ? std::string::npos : it->second;
    }
    for (std::size_t i = 0; i + 1 < mapped.size(); i += 2) std::swap(mapped[i], mapped[i + 1]);
    for (auto& m : mapped) {
      if (stats) ++stats->tokens;
      if (noise_rate > 0.0 && uniform01(gen) < noise_rate) {
        if (stats) ++stats->substituted;
        if (m == std::string::npos || to.size() < 2) {
          m = static_cast<std::size_t>(uniform_below(gen, to.size()));
        } else {
          auto r = static_cast<std::size_t>(uniform_below(gen, to.size() - 1));
          m = r >= m ? r + 1 : r;
        }
      }
      out.push_back(m == std::string::npos ? std::string("<unk>") : to[m]);
    }
    if (!terminator.empty()) out.push_back(terminator);
  }
  return join_units(out);
}

std::string ToyTranslator::operator()(std::string_view text, Direction direction, std::uint64_t salt) const {
  if (!lexicon) throw ContractError("ToyTranslator without a lexicon");
  return toy_translate(*lexicon, noise_rate, mix_seed(seed, {salt, static_cast<std::uint64_t>(direction)}), text,
                       direction);
}

PseudoCorpusResult build_pseudo_corpus(const std::vector<Example>& examples, const ToyTranslator& translator,
                                       double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ContractError("build_pseudo_corpus: tau must be in [0,1]");
  PseudoCorpusResult result;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    auto pseudo = translator(e.summary_src, Direction::SourceToTarget, 2 * i);
    auto back = translator(pseudo, Direction::TargetToSource, 2 * i + 1);
    const double score = metrics::rouge_l(back, e.summary_src).f1;
    result.round_trip_rouge.push_back(score);
    if (score >= tau) {
      Example kept = e;
      kept.pseudo_summary_tgt = std::move(pseudo);
      result.kept.push_back(std::move(kept));
    } else {
      result.dropped_ids.push_back(e.id);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// TextRank

TextRankResult textrank_keywords(std::string_view text, const TextRankConfig& config) {
  if (config.window < 2) throw ContractError("textrank: window must be >= 2");
  if (!(config.damping > 0.0 && config.damping < 1.0)) throw ContractError("textrank: damping must be in (0,1)");
  std::vector<std::string> seq;
  for (auto& u : split_ws(text)) {
    if (is_keyword_candidate(u)) seq.push_back(std::move(u));
  }
  TextRankResult result;
  if (seq.empty()) {
    result.converged = true;
    return result;
  }
  std::map<std::string, std::size_t> node_of;
  for (const auto& w : seq) node_of.emplace(w, 0);
  std::vector<std::string> names;
  for (auto& [w, id] : node_of) {
    id = names.size();
    names.push_back(w);
  }
  const std::size_t n = names.size();
  std::vector<std::set<std::size_t>> adj(n);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    for (std::size_t j = i + 1; j < seq.size() && j - i < config.window; ++j) {
      const auto a = node_of[seq[i]], b = node_of[seq[j]];
      if (a == b) continue;
      adj[a].insert(b);
      adj[b].insert(a);
    }
  }
  std::vector<double> score(n, 1.0), next(n);
  for (std::size_t it = 0; it < config.max_iter; ++it) {
    double delta = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      double acc = 0.0;
      for (auto u : adj[v]) acc += score[u] / static_cast<double>(adj[u].size());
      next[v] = (1.0 - config.damping) + config.damping * acc;
      delta = std::max(delta, std::abs(next[v] - score[v]));
    }
    score.swap(next);
    result.max_deltas.push_back(delta);
    result.iterations = it + 1;
    if (delta < config.tol) {
      result.converged = true;
      break;
    }
  }
  for (std::size_t v = 0; v < n; ++v) result.keywords.push_back({names[v], score[v]});
  std::stable_sort(result.keywords.begin(), result.keywords.end(), [](const Keyword& a, const Keyword& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.token < b.token;
  });
  return result;
}

// ---------------------------------------------------------------------------
// distillation labels

std::vector<SalienceLabel> make_salience_labels(const Example& example, UnitMode mode, const SentenceScorer* teacher,
                                                const LabelConfig& config) {
  const auto sep = insert_separators(example.article_src);
  std::vector<SalienceLabel> labels;
  if (mode == UnitMode::Sentence) {
    if (!teacher || !*teacher) throw ContractError("sentence-mode salience labels need a teacher model");
    const auto probs = (*teacher)(example.article_src);
    if (probs.size() != sep.sep_positions.size()) {
      throw ContractError("teacher returned " + std::to_string(probs.size()) + " probabilities for " +
                          std::to_string(sep.sep_positions.size()) + " sentences");
    }
    for (std::size_t i = 0; i < probs.size(); ++i) {
      labels.push_back({sep.sep_positions[i], std::clamp(probs[i], config.clamp_eps, 1.0 - config.clamp_eps)});
    }
    return labels;
  }
  const auto ranked = textrank_keywords(example.article_src, config.textrank).keywords;
  if (ranked.empty()) return labels;
  const auto keep = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(config.keyword_fraction * static_cast<double>(ranked.size()))), 1,
      ranked.size());
  const auto summary_units = split_ws(example.summary_src);
  const std::set<std::string> in_summary(summary_units.begin(), summary_units.end());
  for (std::size_t k = 0; k < keep; ++k) {
    const auto& word = ranked[k].token;
    auto it = std::find(sep.units.begin(), sep.units.end(), word);
    if (it == sep.units.end()) continue;
    labels.push_back({static_cast<std::size_t>(it - sep.units.begin()), in_summary.count(word) ? 1.0 : 0.0});
  }
  std::sort(labels.begin(), labels.end(),
            [](const SalienceLabel& a, const SalienceLabel& b) { return a.position < b.position; });
  return labels;
}

Example hard_extract_top_k(const Example& example, const SentenceScorer& teacher, std::size_t k) {
  if (k < 1) throw ContractError("hard_extract_top_k: k must be >= 1");
  const auto sentences = split_sentences(example.article_src);
  if (sentences.size() <= k) return example;
  const auto probs = teacher(example.article_src);
  if (probs.size() != sentences.size()) throw ContractError("teacher output does not match sentence count");
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  std::vector<std::string> units;
  for (auto s : order) units.insert(units.end(), sentences[s].begin(), sentences[s].end());
  Example out = example;
  out.article_src = join_units(units);
  out.salience.reset();
  out.unit_mode.reset();
  return out;
}

// ---------------------------------------------------------------------------
// JSONL

nlohmann::json example_to_json(const Example& e) {
  nlohmann::json j;
  j["id"] = e.id;
  j["article_src"] = e.article_src;
  j["summary_src"] = e.summary_src;
  j["pseudo_summary_tgt"] = e.pseudo_summary_tgt ? nlohmann::json(*e.pseudo_summary_tgt) : nlohmann::json(nullptr);
  if (e.salience) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : *e.salience) arr.push_back({l.position, l.q});
    j["salience"] = arr;
  } else {
    j["salience"] = nullptr;
  }
  j["unit_mode"] = e.unit_mode ? nlohmann::json(to_string(*e.unit_mode)) : nlohmann::json(nullptr);
  return j;
}

Example example_from_json(const nlohmann::json& j) {
  Example e;
  try {
    e.id = j.at("id").get<std::string>();
    e.article_src = j.at("article_src").get<std::string>();
    e.summary_src = j.at("summary_src").get<std::string>();
    if (j.contains("pseudo_summary_tgt") && !j["pseudo_summary_tgt"].is_null()) {
      e.pseudo_summary_tgt = j["pseudo_summary_tgt"].get<std::string>();
    }
    if (j.contains("salience") && !j["salience"].is_null()) {
      std::vector<SalienceLabel> labels;
      std::size_t last = 0;
      for (const auto& item : j["salience"]) {
        SalienceLabel l{item.at(0).get<std::size_t>(), item.at(1).get<double>()};
        if (!(l.q >= 0.0 && l.q <= 1.0)) throw FormatError("salience q outside [0,1] in example " + e.id);
        if (!labels.empty() && l.position <= last) {
          throw FormatError("salience positions not strictly increasing in example " + e.id);
        }
        last = l.position;
        labels.push_back(l);
      }
      e.salience = std::move(labels);
    }
    if (j.contains("unit_mode") && !j["unit_mode"].is_null()) {
      e.unit_mode = parse_unit_mode(j["unit_mode"].get<std::string>());
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("malformed example record: ") + ex.what());
  }
  return e;
}

std::string examples_to_jsonl(const std::vector<Example>& examples) {
  std::string out;
  for (const auto& e : examples) {
    out += example_to_json(e).dump();
    out += '\n';
  }
  return out;
}

namespace {

template <typename Fn>
void for_each_line(std::string_view text, Fn fn) {
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& ex) {
        throw FormatError("line " + std::to_string(line_no) + ": " + ex.what());
      }
      fn(j);
    }
    start = end + 1;
  }
}

}  // namespace

std::vector<Example> examples_from_jsonl(std::string_view text) {
  std::vector<Example> out;
  for_each_line(text, [&](const nlohmann::json& j) { out.push_back(example_from_json(j)); });
  return out;
}

std::string parallel_to_jsonl(const std::vector<ParallelPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += nlohmann::json{{"src", p.src}, {"tgt", p.tgt}}.dump();
    out += '\n';
  }
  return out;
}

std::vector<ParallelPair> parallel_from_jsonl(std::string_view text) {
  std::vector<ParallelPair> out;
  for_each_line(text, [&](const nlohmann::json& j) {
    try {
      out.push_back({j.at("src").get<std::string>(), j.at("tgt").get<std::string>()});
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(std::string("malformed parallel record: ") + ex.what());
    }
  });
  return out;
}

}  // namespace xlsum::data
