#pragma once

// Bilingual sentence similarity: sentence vectors are the normalized mean of
// character-trigram embeddings from one table shared by both languages.

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xlsum/datapipe.hpp"
#include "xlsum/tensor.hpp"

namespace xlsum::xsim {

inline constexpr int kUnknownTrigram = 0;

// Trigrams of every whitespace-separated word padded as "#word#", by code
// point. "ab" gives {"#ab", "ab#"}.
std::vector<std::string> char_trigrams(std::string_view sentence);

class TrigramVocab {
 public:
  TrigramVocab();
  static TrigramVocab build(const std::vector<std::string>& sentences);
  static TrigramVocab from_list(std::vector<std::string> trigrams);  // without the unknown entry

  int id(const std::string& trigram) const;
  std::size_t size() const { return trigrams_.size(); }
  const std::vector<std::string>& trigrams() const { return trigrams_; }

 private:
  std::vector<std::string> trigrams_;  // [0] is the unknown entry
  std::unordered_map<std::string, int> index_;
};

struct SentenceEmbedding {
  std::vector<double> values;
  bool degenerate = false;  // no known trigram; values are all zero
};

struct Similarity {
  double value = 0.0;
  bool degenerate = false;
};

class SimilarityModel {
 public:
  SimilarityModel() = default;
  // Rows drawn from N(0, init_scale^2); the unknown row is zero.
  SimilarityModel(TrigramVocab vocab, std::size_t dim, std::uint64_t seed, double init_scale = 0.1);
  SimilarityModel(TrigramVocab vocab, ad::Tensor table);

  const TrigramVocab& vocab() const { return vocab_; }
  std::size_t dim() const { return table_.dim(1); }
  const ad::Tensor& table() const { return table_; }
  ad::Tensor& table() { return table_; }

  // Known trigram ids; unknown trigrams are left out.
  std::vector<int> featurize(std::string_view sentence) const;
  // Trigram ids with unknown trigrams mapped to kUnknownTrigram.
  std::vector<int> featurize_all(std::string_view sentence) const;
  SentenceEmbedding embed(std::string_view sentence) const;
  // Cosine of the two embeddings; 0 and flagged if either is degenerate.
  Similarity score(std::string_view a, std::string_view b) const;

  std::string serialize() const;
  static SimilarityModel deserialize(std::string_view text);

 private:
  TrigramVocab vocab_;
  ad::Tensor table_;
};

struct XsimConfig {
  std::size_t dim = 64;
  double margin = 0.4;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  double lr = 0.01;
  double init_scale = 0.1;
  std::uint64_t seed = 1;
};

// mean_i max(0, margin - cos(s_i, t_i) + cos(s_i, t_j*)), j* the most similar
// t_j with j != i. Inputs are row-normalized [B x d] with B >= 2.
ad::Tensor margin_loss(const ad::Tensor& src, const ad::Tensor& tgt, double margin);

struct XsimTrainResult {
  SimilarityModel model;
  double initial_loss = 0.0;        // before any update, over the first epoch's batches
  std::vector<double> epoch_loss;   // mean batch loss per epoch
};

XsimTrainResult train_similarity(const std::vector<data::ParallelPair>& pairs, const XsimConfig& config);

struct SeparationReport {
  double aligned = 0.0;     // mean score(src_i, tgt_i)
  double misaligned = 0.0;  // mean score(src_i, tgt_{i+shift})
};

// Misaligned partner of pair i is pair (i + n/2) mod n.
SeparationReport separation(const SimilarityModel& model, const std::vector<data::ParallelPair>& pairs);

}  // namespace xlsum::xsim
