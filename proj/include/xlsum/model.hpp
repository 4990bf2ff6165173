#pragma once

// Encoder-decoder transformer for cross-lingual summarization: one encoder,
// a summarization decoder (D1) and a translation decoder (D2) whose bottom
// layers are the same parameter objects, and a pointwise extraction head.

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xlsum/tensor.hpp"

namespace xlsum::nn {

using ad::Tensor;
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

enum class Task { Sum, Trans };
enum class DecoderId { Summary, Translation };  // D1, D2

int tag_id(Task task);
std::string to_string(DecoderId id);

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 2;
  std::size_t ffn_dim = 128;
  std::size_t n_encoder_layers = 3;
  std::size_t n_decoder_layers = 3;
  std::size_t n_shared_decoder_layers = 2;
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;
  std::size_t max_src_len = 256;
  std::size_t max_tgt_len = 64;
  double dropout_rate = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const { return ad::linear(x, weight, bias); }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  Tensor operator()(const Tensor& x) const { return ad::layer_norm(x, gain, bias); }
};

struct Attention {
  Linear q, k, v, o;
};

struct EncoderLayer {
  LayerNorm ln_attn, ln_ffn;
  Attention self_attn;
  Linear ffn_in, ffn_out;
};

struct DecoderLayer {
  LayerNorm ln_self, ln_cross, ln_ffn;
  Attention self_attn, cross_attn;
  Linear ffn_in, ffn_out;
};

struct Decoder {
  std::vector<std::shared_ptr<DecoderLayer>> layers;  // bottom first
  LayerNorm final_ln;
  Linear output;
};

// Two-layer feed-forward net, ReLU in the middle, one logit per row.
struct SalienceHead {
  Linear hidden, out;
};

struct SampleResult {
  std::vector<int> tokens;        // emitted tokens, including a final EOS if produced
  std::vector<double> log_probs;  // log p of each emitted token
};

struct CategoricalDraw {
  std::size_t index = 0;
  double log_prob = 0.0;
};

// Inverse-CDF draw from softmax(logits) using one uniform from `gen`.
CategoricalDraw sample_categorical(std::span<const double> logits, std::mt19937_64& gen);

// Unbatched model: every forward pass handles one example. Copies share
// parameter tensors; use clone() for an independent copy.
class XlsModel {
 public:
  XlsModel() = default;
  XlsModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  XlsModel clone() const;

  // Dropout is active only in training mode; its masks come from a counter
  // stream reset by reseed_dropout.
  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  void reseed_dropout(std::uint64_t seed);

  // h for [tag; src] (truncated to max_src_len, keeping the tag).
  Tensor encode(std::span<const int> src, Task tag) const;
  // Teacher-forced logits [T x V] for a prefix that starts with BOS.
  Tensor decoder_logits(DecoderId which, const Tensor& h, std::span<const int> prefix) const;
  // Next-token logits [V] after `prefix`.
  Tensor decode_step(DecoderId which, const Tensor& h, std::span<const int> prefix) const;

  // Dropout-free incremental decoding. Stops after EOS or max_len tokens.
  std::vector<int> greedy_decode(DecoderId which, const Tensor& h, std::size_t max_len) const;
  SampleResult sample_decode(DecoderId which, const Tensor& h, std::size_t max_len, std::uint64_t seed) const;

  // Extraction-head logits / probabilities for rows of h. Positions index the
  // separator-inserted article units, so row = position + 1 (after the tag).
  // Positions that fall outside h are skipped; `kept` receives the indices of
  // the positions used.
  Tensor salience_logits(const Tensor& h, std::span<const std::size_t> positions,
                         std::vector<std::size_t>* kept = nullptr) const;
  std::vector<double> salience_predict(const Tensor& h, std::span<const std::size_t> positions) const;

  // Distinct parameter tensors with stable names; shared decoder layers are
  // listed once under "decoder.shared.*".
  NamedParams named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  // Parameters exclusive to one decoder, or shared by both.
  std::vector<Tensor> decoder_exclusive_parameters(DecoderId which) const;
  std::vector<Tensor> shared_decoder_parameters() const;

  const Decoder& decoder(DecoderId which) const { return which == DecoderId::Summary ? d1_ : d2_; }

  // Replaces all parameter values in place (names and shapes must match).
  void load_parameters(const NamedParams& values);

 private:
  Tensor embed(const Tensor& table, std::span<const int> ids, std::size_t first_pos) const;
  Tensor attend(const Attention& a, const Tensor& query_in, const Tensor& kv_in, bool causal) const;
  Tensor maybe_dropout(const Tensor& x) const;

  ModelConfig config_;
  Tensor src_embed_;
  Tensor tgt_embed_;  // shared by both decoders
  std::vector<EncoderLayer> encoder_;
  LayerNorm encoder_ln_;
  Decoder d1_, d2_;
  SalienceHead head_;
  bool training_ = false;
  std::uint64_t dropout_seed_ = 0;
  mutable std::uint64_t dropout_counter_ = 0;
};

// Binary checkpoint: magic, version, JSON metadata (config plus caller
// fields), then every named parameter as raw little-endian doubles.
void save_checkpoint(const std::string& path, const XlsModel& model, const nlohmann::json& metadata);
struct LoadedCheckpoint {
  XlsModel model;
  nlohmann::json metadata;
};
LoadedCheckpoint load_checkpoint(const std::string& path);
std::string checkpoint_bytes(const XlsModel& model, const nlohmann::json& metadata);
LoadedCheckpoint checkpoint_from_bytes(std::string_view bytes, const std::string& origin = "<memory>");

}  // namespace xlsum::nn
