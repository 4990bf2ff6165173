#include "xlsum/xsim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "xlsum/errors.hpp"
#include "xlsum/optim.hpp"
#include "xlsum/rng.hpp"
#include "xlsum/vocab.hpp"

namespace xlsum::xsim {

namespace {

const char* const kMagic = "XSIM 1";

double loss_value(const SimilarityModel& model, const std::vector<std::vector<int>>& src,
                  const std::vector<std::vector<int>>& tgt, double margin) {
  ad::NoGradGuard guard;
  auto s = ad::l2_normalize_rows(ad::embedding_bag_mean(model.table(), src));
  auto t = ad::l2_normalize_rows(ad::embedding_bag_mean(model.table(), tgt));
  return margin_loss(s, t, margin).item();
}

}  // namespace

std::vector<std::string> char_trigrams(std::string_view sentence) {
  const data::Tokenizer chars(data::TokenMode::Character);
  const data::Tokenizer words(data::TokenMode::Word);
  std::vector<std::string> out;
  for (const auto& word : words.split(sentence)) {
    std::vector<std::string> cps{"#"};
    for (auto& c : chars.split(word)) cps.push_back(std::move(c));
    cps.emplace_back("#");
    for (std::size_t i = 0; i + 2 < cps.size(); ++i) out.push_back(cps[i] + cps[i + 1] + cps[i + 2]);
  }
  return out;
}

TrigramVocab::TrigramVocab() {
  trigrams_.emplace_back("<unk>");
  index_.emplace("<unk>", kUnknownTrigram);
}

TrigramVocab TrigramVocab::build(const std::vector<std::string>& sentences) {
  std::set<std::string> seen;
  for (const auto& s : sentences)
    for (auto& t : char_trigrams(s)) seen.insert(std::move(t));
  return from_list(std::vector<std::string>(seen.begin(), seen.end()));
}

TrigramVocab TrigramVocab::from_list(std::vector<std::string> trigrams) {
  TrigramVocab v;
  for (auto& t : trigrams) {
    if (v.index_.count(t)) throw FormatError("duplicate trigram '" + t + "'");
    v.index_.emplace(t, static_cast<int>(v.trigrams_.size()));
    v.trigrams_.push_back(std::move(t));
  }
  return v;
}

int TrigramVocab::id(const std::string& trigram) const {
  auto it = index_.find(trigram);
  return it == index_.end() ? kUnknownTrigram : it->second;
}

SimilarityModel::SimilarityModel(TrigramVocab vocab, std::size_t dim, std::uint64_t seed, double init_scale)
    : vocab_(std::move(vocab)) {
  if (dim == 0) throw ContractError("similarity model dimension must be positive");
  table_ = ad::Tensor::zeros({vocab_.size(), dim}, true);
  Rng gen(mix_seed(seed, {0x51}));
  std::normal_distribution<double> normal(0.0, init_scale);
  auto w = table_.mutable_data();
  for (std::size_t i = dim; i < w.size(); ++i) w[i] = normal(gen);
}

SimilarityModel::SimilarityModel(TrigramVocab vocab, ad::Tensor table) : vocab_(std::move(vocab)), table_(table) {
  if (table_.rank() != 2 || table_.dim(0) != vocab_.size()) {
    throw DimensionError("similarity table " + ad::shape_str(table_.shape()) + " does not match vocabulary of " +
                         std::to_string(vocab_.size()));
  }
}

std::vector<int> SimilarityModel::featurize_all(std::string_view sentence) const {
  std::vector<int> ids;
  for (const auto& t : char_trigrams(sentence)) ids.push_back(vocab_.id(t));
  return ids;
}

std::vector<int> SimilarityModel::featurize(std::string_view sentence) const {
  auto ids = featurize_all(sentence);
  ids.erase(std::remove(ids.begin(), ids.end(), kUnknownTrigram), ids.end());
  return ids;
}

SentenceEmbedding SimilarityModel::embed(std::string_view sentence) const {
  const std::size_t d = dim();
  SentenceEmbedding out;
  out.values.assign(d, 0.0);
  const auto ids = featurize(sentence);
  if (ids.empty()) {
    out.degenerate = true;
    return out;
  }
  const auto T = table_.data();
  for (int id : ids)
    for (std::size_t j = 0; j < d; ++j) out.values[j] += T[static_cast<std::size_t>(id) * d + j];
  double ss = 0.0;
  for (auto& v : out.values) {
    v /= static_cast<double>(ids.size());
    ss += v * v;
  }
  const double norm = std::sqrt(ss);
  if (!(norm > 0.0)) {
    std::fill(out.values.begin(), out.values.end(), 0.0);
    out.degenerate = true;
    return out;
  }
  for (auto& v : out.values) v /= norm;
  return out;
}

Similarity SimilarityModel::score(std::string_view a, std::string_view b) const {
  const auto ea = embed(a), eb = embed(b);
  if (ea.degenerate || eb.degenerate) return {0.0, true};
  const double c = std::inner_product(ea.values.begin(), ea.values.end(), eb.values.begin(), 0.0);
  return {std::clamp(c, -1.0, 1.0), false};
}

std::string SimilarityModel::serialize() const {
  std::ostringstream os;
  os.precision(17);
  const std::size_t d = dim();
  os << kMagic << '\n' << "dim " << d << '\n' << "trigrams " << vocab_.size() - 1 << '\n';
  const auto T = table_.data();
  for (std::size_t r = 0; r < vocab_.size(); ++r) {
    os << (r == 0 ? std::string("<unk>") : vocab_.trigrams()[r]);
    for (std::size_t j = 0; j < d; ++j) os << ' ' << T[r * d + j];
    os << '\n';
  }
  return os.str();
}

SimilarityModel SimilarityModel::deserialize(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line, word;
  if (!std::getline(is, line) || line != kMagic) throw FormatError("not a similarity model file (bad header)");
  std::size_t d = 0, n = 0;
  if (!(is >> word >> d) || word != "dim" || d == 0) throw FormatError("similarity model: bad dim line");
  if (!(is >> word >> n) || word != "trigrams") throw FormatError("similarity model: bad trigrams line");
  std::vector<std::string> names;
  std::vector<double> values;
  values.reserve((n + 1) * d);
  for (std::size_t r = 0; r <= n; ++r) {
    if (!(is >> word)) throw FormatError("similarity model: truncated at row " + std::to_string(r));
    if (r > 0) names.push_back(word);
    for (std::size_t j = 0; j < d; ++j) {
      double v;
      if (!(is >> v) || !std::isfinite(v)) throw FormatError("similarity model: bad value at row " + std::to_string(r));
      values.push_back(v);
    }
  }
  auto vocab = TrigramVocab::from_list(std::move(names));
  return SimilarityModel(std::move(vocab), ad::Tensor::from({n + 1, d}, std::move(values), true));
}

ad::Tensor margin_loss(const ad::Tensor& src, const ad::Tensor& tgt, double margin) {
  if (src.rank() != 2 || src.shape() != tgt.shape()) throw DimensionError("margin_loss: mismatched batches");
  const std::size_t b = src.dim(0);
  if (b < 2) throw ContractError("margin_loss needs at least two pairs for negatives");
  auto cos = ad::matmul_nt(src, tgt);
  std::vector<std::size_t> rows(b), diag(b), hardest(b);
  const auto C = cos.data();
  for (std::size_t i = 0; i < b; ++i) {
    rows[i] = i;
    diag[i] = i;
    std::size_t best = i == 0 ? 1 : 0;
    for (std::size_t j = 0; j < b; ++j) {
      if (j != i && C[i * b + j] > C[i * b + best]) best = j;
    }
    hardest[i] = best;
  }
  auto pos = ad::pick(cos, rows, diag);
  auto neg = ad::pick(cos, rows, hardest);
  return ad::mean(ad::relu(ad::add_scalar(ad::sub(neg, pos), margin)));
}

XsimTrainResult train_similarity(const std::vector<data::ParallelPair>& pairs, const XsimConfig& config) {
  if (pairs.size() < 2) throw ContractError("train_similarity needs at least 2 parallel pairs");
  if (config.batch_size < 2) throw ContractError("train_similarity: batch_size must be >= 2");
  std::vector<std::string> all;
  for (const auto& p : pairs) {
    all.push_back(p.src);
    all.push_back(p.tgt);
  }
  XsimTrainResult result;
  result.model = SimilarityModel(TrigramVocab::build(all), config.dim, config.seed, config.init_scale);
  auto& model = result.model;

  std::vector<std::vector<int>> src_bags, tgt_bags;
  for (const auto& p : pairs) {
    src_bags.push_back(model.featurize(p.src));
    tgt_bags.push_back(model.featurize(p.tgt));
  }
  ad::Adam adam({model.table()}, ad::AdamConfig{config.lr, 0.9, 0.98, 1e-9});
  Rng gen(mix_seed(config.seed, {0x52}));
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_in_place(order, gen);
    std::vector<std::vector<std::vector<int>>> batch_src, batch_tgt;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      if (end - start < 2) break;
      std::vector<std::vector<int>> bs, bt;
      for (std::size_t k = start; k < end; ++k) {
        bs.push_back(src_bags[order[k]]);
        bt.push_back(tgt_bags[order[k]]);
      }
      batch_src.push_back(std::move(bs));
      batch_tgt.push_back(std::move(bt));
    }
    if (epoch == 0) {
      double total = 0.0;
      for (std::size_t k = 0; k < batch_src.size(); ++k)
        total += loss_value(model, batch_src[k], batch_tgt[k], config.margin);
      result.initial_loss = total / static_cast<double>(batch_src.size());
    }
    double total = 0.0;
    for (std::size_t k = 0; k < batch_src.size(); ++k) {
      adam.zero_grad();
      auto s = ad::l2_normalize_rows(ad::embedding_bag_mean(model.table(), batch_src[k]));
      auto t = ad::l2_normalize_rows(ad::embedding_bag_mean(model.table(), batch_tgt[k]));
      auto loss = margin_loss(s, t, config.margin);
      total += loss.item();
      ad::backward(loss);
      adam.step();
    }
    result.epoch_loss.push_back(total / static_cast<double>(batch_src.size()));
  }
  adam.zero_grad();
  return result;
}

SeparationReport separation(const SimilarityModel& model, const std::vector<data::ParallelPair>& pairs) {
  if (pairs.size() < 2) throw ContractError("separation needs at least 2 pairs");
  SeparationReport r;
  const std::size_t n = pairs.size(), shift = std::max<std::size_t>(1, n / 2);
  for (std::size_t i = 0; i < n; ++i) {
    r.aligned += model.score(pairs[i].src, pairs[i].tgt).value;
    r.misaligned += model.score(pairs[i].src, pairs[(i + shift) % n].tgt).value;
  }
  r.aligned /= static_cast<double>(n);
  r.misaligned /= static_cast<double>(n);
  return r;
}

}  // namespace xlsum::xsim
