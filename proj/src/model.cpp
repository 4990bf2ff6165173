#include "xlsum/model.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "xlsum/errors.hpp"
#include "xlsum/rng.hpp"
#include "xlsum/vocab.hpp"

namespace xlsum::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr char kCheckpointMagic[8] = {'X', 'L', 'S', 'U', 'M', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

class Init {
 public:
  explicit Init(std::uint64_t seed) : gen_(mix_seed(seed, {0x30})) {}

  Tensor normal(const ad::Shape& shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    auto t = Tensor::zeros(shape, true);
    for (auto& w : t.mutable_data()) w = dist(gen_);
    return t;
  }
  Tensor constant(const ad::Shape& shape, double value) {
    auto t = Tensor::zeros(shape, true);
    for (auto& w : t.mutable_data()) w = value;
    return t;
  }
  Linear linear(std::size_t in, std::size_t out, double stddev = -1.0) {
    if (stddev < 0.0) stddev = std::sqrt(2.0 / static_cast<double>(in + out));
    return {normal({in, out}, stddev), constant({out}, 0.0)};
  }
  LayerNorm layer_norm(std::size_t d) { return {constant({d}, 1.0), constant({d}, 0.0)}; }
  Attention attention(std::size_t d) { return {linear(d, d), linear(d, d), linear(d, d), linear(d, d)}; }

 private:
  Rng gen_;
};

void add_linear(NamedParams& out, const std::string& name, const Linear& l) {
  out.emplace_back(name + ".weight", l.weight);
  out.emplace_back(name + ".bias", l.bias);
}
void add_ln(NamedParams& out, const std::string& name, const LayerNorm& l) {
  out.emplace_back(name + ".gain", l.gain);
  out.emplace_back(name + ".bias", l.bias);
}
void add_attention(NamedParams& out, const std::string& name, const Attention& a) {
  add_linear(out, name + ".q", a.q);
  add_linear(out, name + ".k", a.k);
  add_linear(out, name + ".v", a.v);
  add_linear(out, name + ".o", a.o);
}
void add_decoder_layer(NamedParams& out, const std::string& name, const DecoderLayer& l) {
  add_ln(out, name + ".ln_self", l.ln_self);
  add_attention(out, name + ".self_attn", l.self_attn);
  add_ln(out, name + ".ln_cross", l.ln_cross);
  add_attention(out, name + ".cross_attn", l.cross_attn);
  add_ln(out, name + ".ln_ffn", l.ln_ffn);
  add_linear(out, name + ".ffn_in", l.ffn_in);
  add_linear(out, name + ".ffn_out", l.ffn_out);
}

// Scaled dot-product attention over already projected q [Tq x d],
// k, v [Tk x d], split into heads along the feature axis.
Tensor multi_head(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads, bool causal) {
  const std::size_t d = q.dim(1), dh = d / n_heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  auto one = [&](const Tensor& qh, const Tensor& kh, const Tensor& vh) {
    auto scores = ad::scale(ad::matmul_nt(qh, kh), inv);
    if (causal) scores = ad::causal_mask(scores);
    return ad::matmul(ad::softmax(scores, 1), vh);
  };
  if (n_heads == 1) return one(q, k, v);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < n_heads; ++h) {
    heads.push_back(one(ad::slice(q, 1, h * dh, (h + 1) * dh), ad::slice(k, 1, h * dh, (h + 1) * dh),
                        ad::slice(v, 1, h * dh, (h + 1) * dh)));
  }
  return ad::concat(heads, 1);
}

Tensor positions(std::size_t first, std::size_t count, std::size_t d) {
  std::vector<double> pe(count * d);
  for (std::size_t p = 0; p < count; ++p) {
    const double pos = static_cast<double>(first + p);
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe[p * d + i] = std::sin(pos * freq);
      if (i + 1 < d) pe[p * d + i + 1] = std::cos(pos * freq);
    }
  }
  return Tensor::from({count, d}, std::move(pe));
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::atomic<bool> g_truncation_warned{false};

}  // namespace

CategoricalDraw sample_categorical(std::span<const double> logits, std::mt19937_64& gen) {
  if (logits.empty()) throw DimensionError("sample_categorical: no logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double log_z = mx + std::log(z);
  const double u = uniform01(gen);
  double cum = 0.0;
  std::size_t choice = logits.size() - 1;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    cum += std::exp(logits[i] - log_z);
    if (u < cum) {
      choice = i;
      break;
    }
  }
  return {choice, logits[choice] - log_z};
}

int tag_id(Task task) { return task == Task::Sum ? data::kSumTag : data::kTransTag; }

std::string to_string(DecoderId id) { return id == DecoderId::Summary ? "D1" : "D2"; }

// ---------------------------------------------------------------------------
// config

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("model config: " + m); };
  if (d_model == 0 || n_heads == 0) fail("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (ffn_dim == 0) fail("ffn_dim must be positive");
  if (n_shared_decoder_layers > n_decoder_layers) fail("n_shared_decoder_layers exceeds n_decoder_layers");
  if (src_vocab_size <= static_cast<std::size_t>(data::kNumReserved) ||
      tgt_vocab_size <= static_cast<std::size_t>(data::kNumReserved)) {
    fail("vocabularies must extend past the reserved ids");
  }
  if (max_src_len < 2 || max_tgt_len < 2) fail("maximum lengths must be >= 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0,1)");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},
          {"n_heads", n_heads},
          {"ffn_dim", ffn_dim},
          {"n_encoder_layers", n_encoder_layers},
          {"n_decoder_layers", n_decoder_layers},
          {"n_shared_decoder_layers", n_shared_decoder_layers},
          {"src_vocab_size", src_vocab_size},
          {"tgt_vocab_size", tgt_vocab_size},
          {"max_src_len", max_src_len},
          {"max_tgt_len", max_tgt_len},
          {"dropout_rate", dropout_rate}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    get("d_model", c.d_model);
    get("n_heads", c.n_heads);
    get("ffn_dim", c.ffn_dim);
    get("n_encoder_layers", c.n_encoder_layers);
    get("n_decoder_layers", c.n_decoder_layers);
    get("n_shared_decoder_layers", c.n_shared_decoder_layers);
    get("src_vocab_size", c.src_vocab_size);
    get("tgt_vocab_size", c.tgt_vocab_size);
    get("max_src_len", c.max_src_len);
    get("max_tgt_len", c.max_tgt_len);
    get("dropout_rate", c.dropout_rate);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// construction

XlsModel::XlsModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model, f = config_.ffn_dim;
  Init init(seed);
  src_embed_ = init.normal({config_.src_vocab_size, d}, 1.0 / std::sqrt(static_cast<double>(d)));
  tgt_embed_ = init.normal({config_.tgt_vocab_size, d}, 1.0 / std::sqrt(static_cast<double>(d)));
  for (std::size_t i = 0; i < config_.n_encoder_layers; ++i) {
    EncoderLayer l;
    l.ln_attn = init.layer_norm(d);
    l.self_attn = init.attention(d);
    l.ln_ffn = init.layer_norm(d);
    l.ffn_in = init.linear(d, f);
    l.ffn_out = init.linear(f, d);
    encoder_.push_back(std::move(l));
  }
  encoder_ln_ = init.layer_norm(d);

  auto make_layer = [&] {
    auto l = std::make_shared<DecoderLayer>();
    l->ln_self = init.layer_norm(d);
    l->self_attn = init.attention(d);
    l->ln_cross = init.layer_norm(d);
    l->cross_attn = init.attention(d);
    l->ln_ffn = init.layer_norm(d);
    l->ffn_in = init.linear(d, f);
    l->ffn_out = init.linear(f, d);
    return l;
  };
  for (std::size_t i = 0; i < config_.n_shared_decoder_layers; ++i) {
    auto l = make_layer();
    d1_.layers.push_back(l);
    d2_.layers.push_back(l);
  }
  for (Decoder* dec : {&d1_, &d2_}) {
    for (std::size_t i = config_.n_shared_decoder_layers; i < config_.n_decoder_layers; ++i) {
      dec->layers.push_back(make_layer());
    }
    dec->final_ln = init.layer_norm(d);
    dec->output = init.linear(d, config_.tgt_vocab_size, 0.02);
  }
  head_.hidden = init.linear(d, d);
  head_.out = init.linear(d, 1);
}

XlsModel XlsModel::clone() const {
  XlsModel copy(config_, 0);
  copy.load_parameters(named_parameters());
  copy.training_ = training_;
  copy.dropout_seed_ = dropout_seed_;
  copy.dropout_counter_ = dropout_counter_;
  return copy;
}

void XlsModel::reseed_dropout(std::uint64_t seed) {
  dropout_seed_ = seed;
  dropout_counter_ = 0;
}

// ---------------------------------------------------------------------------
// forward passes

Tensor XlsModel::maybe_dropout(const Tensor& x) const {
  if (!training_ || config_.dropout_rate == 0.0) return x;
  return ad::dropout(x, config_.dropout_rate, true, mix_seed(dropout_seed_, {dropout_counter_++}));
}

Tensor XlsModel::embed(const Tensor& table, std::span<const int> ids, std::size_t first_pos) const {
  const std::size_t d = config_.d_model;
  auto e = ad::scale(ad::embedding_lookup(table, ids), std::sqrt(static_cast<double>(d)));
  return maybe_dropout(ad::add(e, positions(first_pos, ids.size(), d)));
}

Tensor XlsModel::attend(const Attention& a, const Tensor& query_in, const Tensor& kv_in, bool causal) const {
  auto out = multi_head(a.q(query_in), a.k(kv_in), a.v(kv_in), config_.n_heads, causal);
  return a.o(out);
}

Tensor XlsModel::encode(std::span<const int> src, Task tag) const {
  std::vector<int> ids{tag_id(tag)};
  std::size_t n = src.size();
  if (n + 1 > config_.max_src_len) {
    n = config_.max_src_len - 1;
    if (!g_truncation_warned.exchange(true)) {
      std::cerr << "warning: encoder input of " << src.size() + 1 << " tokens truncated to " << config_.max_src_len
                << " (further truncations not reported)\n";
    }
  }
  ids.insert(ids.end(), src.begin(), src.begin() + static_cast<std::ptrdiff_t>(n));
  auto x = embed(src_embed_, ids, 0);
  for (const auto& l : encoder_) {
    auto y = l.ln_attn(x);
    x = ad::add(x, maybe_dropout(attend(l.self_attn, y, y, false)));
    y = l.ln_ffn(x);
    x = ad::add(x, maybe_dropout(l.ffn_out(ad::relu(l.ffn_in(y)))));
  }
  return encoder_ln_(x);
}

Tensor XlsModel::decoder_logits(DecoderId which, const Tensor& h, std::span<const int> prefix) const {
  if (prefix.empty() || prefix.front() != data::kBos) throw ContractError("decoder prefix must start with BOS");
  if (prefix.size() > config_.max_tgt_len) {
    throw ContractError("decoder prefix of " + std::to_string(prefix.size()) + " exceeds max_tgt_len " +
                        std::to_string(config_.max_tgt_len));
  }
  const Decoder& dec = decoder(which);
  auto x = embed(tgt_embed_, prefix, 0);
  for (const auto& lp : dec.layers) {
    const auto& l = *lp;
    auto y = l.ln_self(x);
    x = ad::add(x, maybe_dropout(attend(l.self_attn, y, y, true)));
    x = ad::add(x, maybe_dropout(attend(l.cross_attn, l.ln_cross(x), h, false)));
    y = l.ln_ffn(x);
    x = ad::add(x, maybe_dropout(l.ffn_out(ad::relu(l.ffn_in(y)))));
  }
  return dec.output(dec.final_ln(x));
}

Tensor XlsModel::decode_step(DecoderId which, const Tensor& h, std::span<const int> prefix) const {
  auto logits = decoder_logits(which, h, prefix);
  return ad::reshape(ad::slice(logits, 0, prefix.size() - 1, prefix.size()), {config_.tgt_vocab_size});
}

namespace {

// Per-layer key/value caches for incremental decoding.
struct DecodeState {
  std::vector<Tensor> self_k, self_v, cross_k, cross_v;
};

DecodeState start_decoding(const Decoder& dec, const Tensor& h) {
  DecodeState st;
  st.self_k.resize(dec.layers.size());
  st.self_v.resize(dec.layers.size());
  for (const auto& l : dec.layers) {
    st.cross_k.push_back(l->cross_attn.k(h));
    st.cross_v.push_back(l->cross_attn.v(h));
  }
  return st;
}

Tensor step_input(const Tensor& table, int token, std::size_t pos) {
  const std::size_t d = table.dim(1);
  const int ids[1] = {token};
  return ad::add(ad::scale(ad::embedding_lookup(table, ids), std::sqrt(static_cast<double>(d))), positions(pos, 1, d));
}

// One dropout-free decoder step on the newest token; mirrors decoder_logits
// row by row.
Tensor incremental_step(const Decoder& dec, const Tensor& x_in, DecodeState& st, std::size_t n_heads) {
  auto x = x_in;
  for (std::size_t i = 0; i < dec.layers.size(); ++i) {
    const auto& l = *dec.layers[i];
    auto y = l.ln_self(x);
    auto k = l.self_attn.k(y), v = l.self_attn.v(y);
    st.self_k[i] = st.self_k[i].defined() ? ad::concat({st.self_k[i], k}, 0) : k;
    st.self_v[i] = st.self_v[i].defined() ? ad::concat({st.self_v[i], v}, 0) : v;
    x = ad::add(x, l.self_attn.o(multi_head(l.self_attn.q(y), st.self_k[i], st.self_v[i], n_heads, false)));
    y = l.ln_cross(x);
    x = ad::add(x, l.cross_attn.o(multi_head(l.cross_attn.q(y), st.cross_k[i], st.cross_v[i], n_heads, false)));
    y = l.ln_ffn(x);
    x = ad::add(x, l.ffn_out(ad::relu(l.ffn_in(y))));
  }
  return dec.output(dec.final_ln(x));
}

}  // namespace

std::vector<int> XlsModel::greedy_decode(DecoderId which, const Tensor& h, std::size_t max_len) const {
  ad::NoGradGuard guard;
  const Decoder& dec = decoder(which);
  auto st = start_decoding(dec, h);
  std::vector<int> tokens;
  const std::size_t limit = std::min(max_len, config_.max_tgt_len - 1);
  int token = data::kBos;
  for (std::size_t t = 0; t < limit; ++t) {
    auto logits = incremental_step(dec, step_input(tgt_embed_, token, t), st, config_.n_heads);
    token = static_cast<int>(argmax(logits.data()));
    tokens.push_back(token);
    if (token == data::kEos) break;
  }
  return tokens;
}

SampleResult XlsModel::sample_decode(DecoderId which, const Tensor& h, std::size_t max_len, std::uint64_t seed) const {
  SampleResult r;
  ad::NoGradGuard guard;
  const Decoder& dec = decoder(which);
  auto st = start_decoding(dec, h);
  Rng gen(seed);
  const std::size_t limit = std::min(max_len, config_.max_tgt_len - 1);
  int token = data::kBos;
  for (std::size_t t = 0; t < limit; ++t) {
    auto logits = incremental_step(dec, step_input(tgt_embed_, token, t), st, config_.n_heads);
    const auto draw = sample_categorical(logits.data(), gen);
    token = static_cast<int>(draw.index);
    r.tokens.push_back(token);
    r.log_probs.push_back(draw.log_prob);
    if (token == data::kEos) break;
  }
  return r;
}

Tensor XlsModel::salience_logits(const Tensor& h, std::span<const std::size_t> positions,
                                 std::vector<std::size_t>* kept) const {
  std::vector<std::size_t> rows;
  if (kept) kept->clear();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] + 1 < h.dim(0)) {
      rows.push_back(positions[i] + 1);
      if (kept) kept->push_back(i);
    }
  }
  if (rows.empty()) return {};
  auto x = ad::gather_rows(h, rows);
  auto logits = head_.out(ad::relu(head_.hidden(x)));
  return ad::reshape(logits, {rows.size()});
}

std::vector<double> XlsModel::salience_predict(const Tensor& h, std::span<const std::size_t> positions) const {
  ad::NoGradGuard guard;
  for (auto p : positions) {
    if (p + 1 >= h.dim(0)) throw IndexError("salience position " + std::to_string(p) + " outside the encoding");
  }
  if (positions.empty()) return {};
  auto probs = ad::sigmoid(salience_logits(h, positions));
  return {probs.data().begin(), probs.data().end()};
}

// ---------------------------------------------------------------------------
// parameters

NamedParams XlsModel::named_parameters() const {
  NamedParams out;
  out.emplace_back("src_embed", src_embed_);
  out.emplace_back("tgt_embed", tgt_embed_);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const auto& l = encoder_[i];
    const auto name = "encoder." + std::to_string(i);
    add_ln(out, name + ".ln_attn", l.ln_attn);
    add_attention(out, name + ".self_attn", l.self_attn);
    add_ln(out, name + ".ln_ffn", l.ln_ffn);
    add_linear(out, name + ".ffn_in", l.ffn_in);
    add_linear(out, name + ".ffn_out", l.ffn_out);
  }
  add_ln(out, "encoder.ln", encoder_ln_);
  const std::size_t k = config_.n_shared_decoder_layers;
  for (std::size_t i = 0; i < k; ++i) add_decoder_layer(out, "decoder.shared." + std::to_string(i), *d1_.layers[i]);
  for (auto [prefix, dec] : {std::pair<std::string, const Decoder*>{"d1", &d1_}, {"d2", &d2_}}) {
    for (std::size_t i = k; i < dec->layers.size(); ++i) {
      add_decoder_layer(out, prefix + "." + std::to_string(i), *dec->layers[i]);
    }
    add_ln(out, prefix + ".ln", dec->final_ln);
    add_linear(out, prefix + ".output", dec->output);
  }
  add_linear(out, "head.hidden", head_.hidden);
  add_linear(out, "head.out", head_.out);
  return out;
}

std::vector<Tensor> XlsModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t XlsModel::parameter_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

std::vector<Tensor> XlsModel::decoder_exclusive_parameters(DecoderId which) const {
  const std::string prefix = which == DecoderId::Summary ? "d1." : "d2.";
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters())
    if (name.rfind(prefix, 0) == 0) out.push_back(t);
  return out;
}

std::vector<Tensor> XlsModel::shared_decoder_parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters())
    if (name.rfind("decoder.shared.", 0) == 0) out.push_back(t);
  return out;
}

void XlsModel::load_parameters(const NamedParams& values) {
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : values) by_name.emplace(name, t);
  auto mine = named_parameters();
  if (by_name.size() != mine.size()) {
    throw FormatError("checkpoint has " + std::to_string(by_name.size()) + " tensors, model expects " +
                      std::to_string(mine.size()));
  }
  for (auto& [name, t] : mine) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw FormatError("parameter '" + name + "' has shape " + ad::shape_str(it->second.shape()) + ", expected " +
                        ad::shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint " + origin_ + " is truncated");
  }
  std::string_view bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const XlsModel& model, const nlohmann::json& metadata) {
  nlohmann::json meta = metadata;
  meta["config"] = model.config().to_json();
  const auto meta_text = meta.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, meta_text.size());
  out += meta_text;
  const auto params = model.named_parameters();
  put<std::uint64_t>(out, params.size());
  for (const auto& [name, t] : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    const auto data = t.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  }
  return out;
}

LoadedCheckpoint checkpoint_from_bytes(std::string_view bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.take(sizeof(kCheckpointMagic)) != std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw FormatError(origin + " is not a model checkpoint");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(version));
  }
  LoadedCheckpoint out;
  const auto meta_len = r.get<std::uint64_t>();
  try {
    out.metadata = nlohmann::json::parse(r.take(meta_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(origin + ": bad checkpoint metadata: " + e.what());
  }
  const auto config = ModelConfig::from_json(out.metadata.at("config"));
  NamedParams values;
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(r.take(r.get<std::uint32_t>()));
    const auto rank = r.get<std::uint32_t>();
    ad::Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint64_t>());
    const auto n = ad::numel_of(shape);
    auto raw = r.take(n * sizeof(double));
    std::vector<double> data(n);
    std::memcpy(data.data(), raw.data(), raw.size());
    values.emplace_back(std::move(name), Tensor::from(shape, std::move(data)));
  }
  if (!r.done()) throw FormatError(origin + ": trailing bytes after checkpoint");
  out.model = XlsModel(config, 0);
  out.model.load_parameters(values);
  return out;
}

void save_checkpoint(const std::string& path, const XlsModel& model, const nlohmann::json& metadata) {
  const auto bytes = checkpoint_bytes(model, metadata);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("missing checkpoint " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return checkpoint_from_bytes(ss.str(), path);
}

}  // namespace xlsum::nn
