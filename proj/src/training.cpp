#include "xlsum/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "xlsum/errors.hpp"
#include "xlsum/metrics.hpp"
#include "xlsum/optim.hpp"
#include "xlsum/rng.hpp"

namespace xlsum::train {

namespace {

// Stream tags for epoch_order / mix_seed.
constexpr std::uint64_t kXlsStream = 1, kMtStream = 2, kRlStream = 3, kRlSample = 4, kTeacherStream = 5,
                        kDropout = 6;

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw FormatError(std::string(what) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      throw FormatError(std::string(what) + ": unknown key '" + it.key() + "'");
    }
  }
}

std::vector<std::string> param_names(const XlsModel& model) {
  std::vector<std::string> out;
  for (auto& [name, t] : model.named_parameters()) out.push_back(name);
  return out;
}

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const std::vector<Tensor>& params) {
  Snapshot s;
  for (const auto& p : params) s.emplace_back(p.data().begin(), p.data().end());
  return s;
}

void restore(std::vector<Tensor>& params, const Snapshot& s) {
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(s[i].begin(), s[i].end(), params[i].mutable_data().begin());
}

Tensor sequence_nll_impl(const XlsModel& model, nn::DecoderId which, const Tensor& h, std::span<const int> tokens) {
  const std::size_t keep = std::min(tokens.size(), model.config().max_tgt_len - 1);
  std::vector<int> prefix{data::kBos};
  prefix.insert(prefix.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  std::vector<int> targets(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  targets.push_back(data::kEos);
  return ad::cross_entropy(model.decoder_logits(which, h, prefix), targets);
}

Tensor dis_from_encoding(const XlsModel& model, const Tensor& h, const XlsItem& item, double eps,
                         DistillVariant variant) {
  if (!item.has_labels) throw ContractError("example '" + item.id + "' has no salience labels");
  std::vector<std::size_t> kept;
  auto logits = model.salience_logits(h, item.positions, &kept);
  if (kept.empty()) return Tensor::scalar(0.0);
  std::vector<double> q;
  for (auto k : kept) q.push_back(item.q[k]);
  return distill_from_probs(ad::sigmoid(logits), q, eps, variant);
}

}  // namespace

// ---------------------------------------------------------------------------
// enums

std::string to_string(DistillVariant v) { return v == DistillVariant::SquaredLog ? "squared_log" : "kl"; }

std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::RougeL: return "rouge_l";
    case RewardKind::Xsim: return "xsim";
    case RewardKind::Mean: return "mean";
  }
  return "?";
}

std::string to_string(Recipe r) {
  switch (r) {
    case Recipe::MLE_XLS: return "MLE_XLS";
    case Recipe::MLE_XLS_MT: return "MLE_XLS_MT";
    case Recipe::MLE_XLS_MT_DIS: return "MLE_XLS_MT_DIS";
    case Recipe::RL_ROUGE: return "RL_ROUGE";
    case Recipe::RL_XSIM: return "RL_XSIM";
    case Recipe::RL_ROUGE_XSIM: return "RL_ROUGE_XSIM";
  }
  return "?";
}

DistillVariant parse_distill_variant(std::string_view s) {
  if (s == "squared_log") return DistillVariant::SquaredLog;
  if (s == "kl") return DistillVariant::Kl;
  throw ContractError("unknown distill variant '" + std::string(s) + "' (expected squared_log|kl)");
}

RewardKind parse_reward_kind(std::string_view s) {
  if (s == "rouge_l") return RewardKind::RougeL;
  if (s == "xsim") return RewardKind::Xsim;
  if (s == "mean") return RewardKind::Mean;
  throw ContractError("unknown reward kind '" + std::string(s) + "' (expected rouge_l|xsim|mean)");
}

Recipe parse_recipe(std::string_view s) {
  for (auto r : {Recipe::MLE_XLS, Recipe::MLE_XLS_MT, Recipe::MLE_XLS_MT_DIS, Recipe::RL_ROUGE, Recipe::RL_XSIM,
                 Recipe::RL_ROUGE_XSIM}) {
    if (to_string(r) == s) return r;
  }
  throw ContractError("unknown recipe '" + std::string(s) + "'");
}

bool is_rl(Recipe r) { return r == Recipe::RL_ROUGE || r == Recipe::RL_XSIM || r == Recipe::RL_ROUGE_XSIM; }
bool uses_mt(Recipe r) { return r == Recipe::MLE_XLS_MT || r == Recipe::MLE_XLS_MT_DIS; }
bool uses_distill(Recipe r) { return r == Recipe::MLE_XLS_MT_DIS; }

RewardKind reward_kind_of(Recipe r) {
  switch (r) {
    case Recipe::RL_ROUGE: return RewardKind::RougeL;
    case Recipe::RL_XSIM: return RewardKind::Xsim;
    case Recipe::RL_ROUGE_XSIM: return RewardKind::Mean;
    default: throw ContractError("recipe " + to_string(r) + " has no reward");
  }
}

// ---------------------------------------------------------------------------
// configs

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw ContractError("train config: lambda must be >= 0");
  if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw ContractError("train config: clamp_eps must be in (0, 0.5)");
  if (!(lr > 0.0)) throw ContractError("train config: lr must be positive");
  if (xls_batch == 0 || mt_batch == 0) throw ContractError("train config: batch sizes must be positive");
  if (mt_steps_per_cycle == 0) throw ContractError("train config: mt_steps_per_cycle must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  auto m = model.to_json();
  m.erase("src_vocab_size");
  m.erase("tgt_vocab_size");
  return {{"model", m},
          {"lambda", lambda},
          {"lr", lr},
          {"xls_batch", xls_batch},
          {"mt_batch", mt_batch},
          {"mt_steps_per_cycle", mt_steps_per_cycle},
          {"epochs", epochs},
          {"seed", seed},
          {"distill_variant", to_string(distill_variant)},
          {"clamp_eps", clamp_eps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"model", "lambda", "lr", "xls_batch", "mt_batch", "mt_steps_per_cycle", "epochs", "seed",
                     "distill_variant", "clamp_eps"},
                 "train config");
  TrainConfig c;
  try {
    if (j.contains("model")) c.model = nn::ModelConfig::from_json(j["model"]);
    read_key(j, "lambda", c.lambda);
    read_key(j, "lr", c.lr);
    read_key(j, "xls_batch", c.xls_batch);
    read_key(j, "mt_batch", c.mt_batch);
    read_key(j, "mt_steps_per_cycle", c.mt_steps_per_cycle);
    read_key(j, "epochs", c.epochs);
    read_key(j, "seed", c.seed);
    read_key(j, "clamp_eps", c.clamp_eps);
    if (j.contains("distill_variant")) c.distill_variant = parse_distill_variant(j["distill_variant"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  return c;
}

void RlConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ContractError("rl config: gamma must be in [0,1]");
  if (batch == 0 || max_len == 0) throw ContractError("rl config: batch and max_len must be positive");
  if (!(lr > 0.0)) throw ContractError("rl config: lr must be positive");
}

nlohmann::json RlConfig::to_json() const {
  return {{"gamma", gamma},     {"reward", to_string(reward)}, {"seed", seed}, {"max_len", max_len},
          {"epochs", epochs},   {"batch", batch},              {"lr", lr},     {"patience", patience}};
}

RlConfig RlConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"gamma", "reward", "seed", "max_len", "epochs", "batch", "lr", "patience"}, "rl config");
  RlConfig c;
  try {
    read_key(j, "gamma", c.gamma);
    read_key(j, "seed", c.seed);
    read_key(j, "max_len", c.max_len);
    read_key(j, "epochs", c.epochs);
    read_key(j, "batch", c.batch);
    read_key(j, "lr", c.lr);
    read_key(j, "patience", c.patience);
    if (j.contains("reward")) c.reward = parse_reward_kind(j["reward"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("rl config: ") + e.what());
  }
  return c;
}

nlohmann::json TeacherConfig::to_json() const {
  auto m = model.to_json();
  m.erase("src_vocab_size");
  m.erase("tgt_vocab_size");
  return {{"model", m}, {"epochs", epochs}, {"batch", batch}, {"lr", lr}, {"seed", seed}};
}

TeacherConfig TeacherConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"model", "epochs", "batch", "lr", "seed"}, "teacher config");
  TeacherConfig c;
  try {
    if (j.contains("model")) c.model = nn::ModelConfig::from_json(j["model"]);
    read_key(j, "epochs", c.epochs);
    read_key(j, "batch", c.batch);
    read_key(j, "lr", c.lr);
    read_key(j, "seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("teacher config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// data

nlohmann::json Vocabs::to_json() const { return {{"src", src.to_json()}, {"tgt", tgt.to_json()}}; }

Vocabs Vocabs::from_json(const nlohmann::json& j) {
  return {data::Tokenizer::from_json(j.at("src")), data::Tokenizer::from_json(j.at("tgt"))};
}

Vocabs build_vocabs(const std::vector<data::Example>& examples, const std::vector<data::ParallelPair>& parallel) {
  std::vector<std::string> src, tgt;
  for (const auto& e : examples) {
    src.push_back(e.article_src);
    if (e.pseudo_summary_tgt) tgt.push_back(*e.pseudo_summary_tgt);
  }
  for (const auto& p : parallel) {
    src.push_back(p.src);
    tgt.push_back(p.tgt);
  }
  return {data::Tokenizer::build(src), data::Tokenizer::build(tgt)};
}

std::vector<int> encoder_input(const data::Tokenizer& src, std::string_view text) {
  return src.encode_units(data::insert_separators(text).units);
}

XlsItem prepare_xls(const data::Example& e, const Vocabs& v) {
  XlsItem item;
  item.id = e.id;
  item.src = encoder_input(v.src, e.article_src);
  item.summary_src = e.summary_src;
  if (e.pseudo_summary_tgt) {
    item.has_target = true;
    item.reference_tgt = *e.pseudo_summary_tgt;
    item.tgt = v.tgt.encode(*e.pseudo_summary_tgt);
  }
  if (e.salience) {
    item.has_labels = true;
    for (const auto& l : *e.salience) {
      item.positions.push_back(l.position);
      item.q.push_back(l.q);
    }
  }
  return item;
}

MtItem prepare_mt(const data::ParallelPair& p, const Vocabs& v) {
  return {encoder_input(v.src, p.src), v.tgt.encode(p.tgt)};
}

// ---------------------------------------------------------------------------
// losses

Tensor sequence_nll(const XlsModel& model, nn::DecoderId which, const Tensor& h, std::span<const int> tokens) {
  return sequence_nll_impl(model, which, h, tokens);
}

Tensor loss_xls(const XlsModel& model, const XlsItem& item) {
  if (!item.has_target) throw ContractError("example '" + item.id + "' has no pseudo target summary");
  auto h = model.encode(item.src, nn::Task::Sum);
  return sequence_nll_impl(model, nn::DecoderId::Summary, h, item.tgt);
}

Tensor loss_mt(const XlsModel& model, const MtItem& item) {
  auto h = model.encode(item.src, nn::Task::Trans);
  return sequence_nll_impl(model, nn::DecoderId::Translation, h, item.tgt);
}

Tensor distill_from_probs(const Tensor& p, std::span<const double> q, double eps, DistillVariant variant) {
  if (p.numel() != q.size()) throw DimensionError("distillation: probabilities and targets differ in length");
  if (!(eps > 0.0 && eps < 0.5)) throw ContractError("distillation: clamp eps must be in (0, 0.5)");
  auto lp = ad::log(ad::clamp(p, eps, 1.0 - eps));
  std::vector<double> c;
  if (variant == DistillVariant::SquaredLog) {
    for (double v : q) c.push_back(std::log(std::clamp(v, eps, 1.0 - eps)));
    auto diff = ad::sub(lp, Tensor::from({q.size()}, c));
    return ad::mean(ad::mul(diff, diff));
  }
  c.assign(q.begin(), q.end());
  return ad::scale(ad::mean(ad::mul(lp, Tensor::from({q.size()}, c))), -1.0);
}

Tensor loss_dis(const XlsModel& model, const XlsItem& item, double eps, DistillVariant variant) {
  if (!item.has_labels) throw ContractError("example '" + item.id + "' has no salience labels");
  auto h = model.encode(item.src, nn::Task::Sum);
  return dis_from_encoding(model, h, item, eps, variant);
}

Tensor xls_step_loss(const XlsModel& model, const XlsItem& item, const TrainConfig& cfg, bool distill) {
  if (!item.has_target) throw ContractError("example '" + item.id + "' has no pseudo target summary");
  auto h = model.encode(item.src, nn::Task::Sum);
  auto l = sequence_nll_impl(model, nn::DecoderId::Summary, h, item.tgt);
  if (!distill) return l;
  return ad::add(l, ad::scale(dis_from_encoding(model, h, item, cfg.clamp_eps, cfg.distill_variant), cfg.lambda));
}

// ---------------------------------------------------------------------------
// pre-training

std::string trace_csv(const std::vector<TraceRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "step,objective,value\n";
  for (const auto& r : rows) os << r.step << ',' << r.objective << ',' << r.value << '\n';
  return os.str();
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng gen(mix_seed(seed, {stream, epoch}));
  shuffle_in_place(order, gen);
  return order;
}

PretrainResult pretrain(XlsModel& model, const std::vector<XlsItem>& xls, const std::vector<MtItem>& mt, Recipe recipe,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (is_rl(recipe)) throw ContractError("pretrain: " + to_string(recipe) + " is a fine-tuning recipe");
  if (xls.empty()) throw ContractError("pretrain: the summarization corpus is empty");
  const bool with_mt = uses_mt(recipe), distill = uses_distill(recipe);
  if (with_mt && mt.empty()) throw ContractError("pretrain: recipe " + to_string(recipe) + " needs MT data");
  for (const auto& item : xls) {
    if (!item.has_target) throw ContractError("pretrain: example '" + item.id + "' has no pseudo target summary");
    if (distill && !item.has_labels) {
      throw ContractError("pretrain: recipe " + to_string(recipe) + " needs salience labels (example '" + item.id +
                          "')");
    }
  }

  const auto names = param_names(model);
  auto params = model.parameters();
  ad::Adam adam(params, ad::AdamConfig{cfg.lr, 0.9, 0.98, 1e-9});
  model.set_training(true);
  model.reseed_dropout(mix_seed(cfg.seed, {kDropout}));

  PretrainResult result;
  auto note_touched = [&] {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].has_grad()) result.touched.insert(names[i]);
  };

  std::size_t step = 0, mt_epoch = 0, mt_pos = 0;
  std::vector<std::size_t> mt_order = with_mt ? epoch_order(mt.size(), cfg.seed, kMtStream, 0) : std::vector<std::size_t>{};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(xls.size(), cfg.seed, kXlsStream, epoch);
    for (std::size_t start = 0; start < order.size(); start += cfg.xls_batch) {
      if (with_mt) {
        for (std::size_t s = 0; s < cfg.mt_steps_per_cycle; ++s) {
          adam.zero_grad();
          double total = 0.0;
          const std::size_t b = std::min(cfg.mt_batch, mt.size());
          for (std::size_t k = 0; k < b; ++k) {
            if (mt_pos == mt_order.size()) {
              mt_order = epoch_order(mt.size(), cfg.seed, kMtStream, ++mt_epoch);
              mt_pos = 0;
            }
            auto l = loss_mt(model, mt[mt_order[mt_pos++]]);
            total += l.item();
            ad::backward(ad::scale(l, 1.0 / static_cast<double>(b)));
          }
          note_touched();
          adam.step();
          result.trace.push_back({step++, "mt", total / static_cast<double>(b)});
        }
      }
      const std::size_t end = std::min(order.size(), start + cfg.xls_batch);
      const double b = static_cast<double>(end - start);
      adam.zero_grad();
      double total_xls = 0.0, total_dis = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& item = xls[order[k]];
        auto h = model.encode(item.src, nn::Task::Sum);
        auto l = sequence_nll_impl(model, nn::DecoderId::Summary, h, item.tgt);
        total_xls += l.item();
        if (distill) {
          auto d = dis_from_encoding(model, h, item, cfg.clamp_eps, cfg.distill_variant);
          total_dis += d.item();
          l = ad::add(l, ad::scale(d, cfg.lambda));
        }
        ad::backward(ad::scale(l, 1.0 / b));
      }
      note_touched();
      adam.step();
      result.trace.push_back({step, "xls", total_xls / b});
      if (distill) result.trace.push_back({step, "dis", total_dis / b});
      ++step;
    }
  }
  adam.zero_grad();
  model.set_training(false);
  return result;
}

// ---------------------------------------------------------------------------
// teacher

std::vector<int> oracle_sentence_labels(const std::string& article, const std::string& summary) {
  const auto sentences = data::split_sentences(article);
  std::vector<int> labels(sentences.size(), 0);
  double current = 0.0;
  for (;;) {
    std::size_t best = sentences.size();
    double best_score = current;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (labels[i]) continue;
      std::vector<std::string> units;
      for (std::size_t s = 0; s < sentences.size(); ++s)
        if (labels[s] || s == i) units.insert(units.end(), sentences[s].begin(), sentences[s].end());
      const double f = metrics::rouge_l(data::join_units(units), summary).f1;
      if (f > best_score) {
        best_score = f;
        best = i;
      }
    }
    if (best == sentences.size()) break;
    labels[best] = 1;
    current = best_score;
  }
  return labels;
}

TeacherResult train_teacher(const std::vector<data::Example>& examples, const data::Tokenizer& src,
                            const TeacherConfig& cfg) {
  if (examples.empty()) throw ContractError("train_teacher: no examples");
  if (cfg.batch == 0) throw ContractError("train_teacher: batch must be positive");
  auto mcfg = cfg.model;
  mcfg.src_vocab_size = src.size();
  mcfg.tgt_vocab_size = static_cast<std::size_t>(data::kNumReserved) + 1;
  mcfg.n_decoder_layers = 0;
  mcfg.n_shared_decoder_layers = 0;
  TeacherResult result{XlsModel(mcfg, cfg.seed), {}};
  auto& model = result.model;

  struct Item {
    std::vector<int> src;
    std::vector<std::size_t> positions;
    std::vector<double> labels;
  };
  std::vector<Item> items;
  for (const auto& e : examples) {
    Item it;
    it.src = encoder_input(src, e.article_src);
    it.positions = data::insert_separators(e.article_src).sep_positions;
    for (int l : oracle_sentence_labels(e.article_src, e.summary_src)) it.labels.push_back(l);
    items.push_back(std::move(it));
  }

  std::vector<Tensor> params;
  for (auto& [name, t] : model.named_parameters())
    if (name.rfind("encoder.", 0) == 0 || name.rfind("head.", 0) == 0 || name == "src_embed") params.push_back(t);
  ad::Adam adam(params, ad::AdamConfig{cfg.lr, 0.9, 0.98, 1e-9});
  model.set_training(true);
  model.reseed_dropout(mix_seed(cfg.seed, {kDropout, kTeacherStream}));
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(items.size(), cfg.seed, kTeacherStream, epoch);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      adam.zero_grad();
      double total = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& it = items[order[k]];
        auto h = model.encode(it.src, nn::Task::Sum);
        std::vector<std::size_t> kept;
        auto logits = model.salience_logits(h, it.positions, &kept);
        if (kept.empty()) continue;
        std::vector<double> targets;
        for (auto i : kept) targets.push_back(it.labels[i]);
        auto l = ad::bce_with_logits(logits, targets);
        total += l.item();
        ad::backward(ad::scale(l, 1.0 / static_cast<double>(end - start)));
      }
      adam.step();
      result.trace.push_back({step++, "teacher_bce", total / static_cast<double>(end - start)});
    }
  }
  adam.zero_grad();
  model.set_training(false);
  return result;
}

data::SentenceScorer teacher_scorer(const XlsModel& teacher, const data::Tokenizer& src) {
  return [&teacher, &src](const std::string& article) {
    ad::NoGradGuard guard;
    const auto positions = data::insert_separators(article).sep_positions;
    std::vector<double> probs(positions.size(), 0.0);  // sentences cut off by truncation stay at 0
    if (positions.empty()) return probs;
    auto h = teacher.encode(encoder_input(src, article), nn::Task::Sum);
    std::vector<std::size_t> kept;
    auto logits = teacher.salience_logits(h, positions, &kept);
    if (kept.empty()) return probs;
    auto p = ad::sigmoid(logits);
    for (std::size_t i = 0; i < kept.size(); ++i) probs[kept[i]] = p[i];
    return probs;
  };
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
  double pairs = 0.0, wins = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      pairs += 1.0;
      wins += scores[i] > scores[j] ? 1.0 : (scores[i] == scores[j] ? 0.5 : 0.0);
    }
  }
  if (pairs == 0.0) throw ContractError("auc needs at least one positive and one negative");
  return wins / pairs;
}

// ---------------------------------------------------------------------------
// rewards

void check_reward_prerequisites(const RewardContext& ctx) {
  if ((ctx.kind == RewardKind::Xsim || ctx.kind == RewardKind::Mean) && !ctx.xsim) {
    throw PrerequisiteError("reward '" + to_string(ctx.kind) + "' needs a trained similarity model (run train-xsim)");
  }
}

double reward(const RewardContext& ctx, const std::string& hypothesis, const XlsItem& item) {
  check_reward_prerequisites(ctx);
  auto rouge = [&] {
    if (!item.has_target) {
      throw PrerequisiteError("rouge_l reward needs a pseudo target summary (example '" + item.id + "')");
    }
    return metrics::rouge_l(hypothesis, item.reference_tgt).f1;
  };
  auto sim = [&] {
    if (item.summary_src.empty()) throw PrerequisiteError("xsim reward needs summary_src (example '" + item.id + "')");
    return ctx.xsim->score(hypothesis, item.summary_src).value;
  };
  switch (ctx.kind) {
    case RewardKind::RougeL: return rouge();
    case RewardKind::Xsim: return sim();
    case RewardKind::Mean: return 0.5 * (rouge() + sim());
  }
  return 0.0;
}

RewardFn make_reward_fn(const RewardContext& ctx, const data::Tokenizer& tgt) {
  check_reward_prerequisites(ctx);
  return [ctx, &tgt](const std::vector<int>& tokens, const XlsItem& item) {
    return reward(ctx, tgt.decode(tokens), item);
  };
}

// ---------------------------------------------------------------------------
// self-critical training

Tensor rl_loss_fixed(const XlsModel& model, const Tensor& h, std::span<const int> sample, double advantage) {
  if (sample.empty()) return Tensor::scalar(0.0);
  std::vector<int> prefix{data::kBos};
  prefix.insert(prefix.end(), sample.begin(), sample.end() - 1);
  auto logp = ad::log_softmax(model.decoder_logits(nn::DecoderId::Summary, h, prefix), 1);
  std::vector<std::size_t> rows(sample.size()), cols(sample.size());
  for (std::size_t j = 0; j < sample.size(); ++j) {
    rows[j] = j;
    cols[j] = static_cast<std::size_t>(sample[j]);
  }
  return ad::scale(ad::sum(ad::pick(logp, rows, cols)), advantage);
}

namespace {

RlLoss loss_rl_from(const XlsModel& model, const Tensor& h, const XlsItem& item, const RewardFn& reward_fn,
                    std::uint64_t seed, std::size_t max_len) {
  RlLoss r;
  r.greedy = model.greedy_decode(nn::DecoderId::Summary, h, max_len);
  r.sample = model.sample_decode(nn::DecoderId::Summary, h, max_len, seed).tokens;
  r.greedy_reward = reward_fn(r.greedy, item);
  r.sample_reward = reward_fn(r.sample, item);
  r.loss = rl_loss_fixed(model, h, r.sample, r.greedy_reward - r.sample_reward);
  return r;
}

}  // namespace

RlLoss loss_rl(const XlsModel& model, const XlsItem& item, const RewardFn& reward_fn, std::uint64_t seed,
               std::size_t max_len) {
  auto h = model.encode(item.src, nn::Task::Sum);
  return loss_rl_from(model, h, item, reward_fn, seed, max_len);
}

double mean_greedy_reward(const XlsModel& model, const std::vector<XlsItem>& items, const RewardFn& reward_fn,
                          std::size_t max_len) {
  if (items.empty()) throw ContractError("mean_greedy_reward: no examples");
  ad::NoGradGuard guard;
  double total = 0.0;
  for (const auto& item : items) {
    auto h = model.encode(item.src, nn::Task::Sum);
    total += reward_fn(model.greedy_decode(nn::DecoderId::Summary, h, max_len), item);
  }
  return total / static_cast<double>(items.size());
}

RlResult rl_finetune(XlsModel& model, const std::vector<XlsItem>& train, const std::vector<XlsItem>& validation,
                     const RlConfig& cfg, const RewardFn& reward_fn) {
  cfg.validate();
  if (train.empty()) throw ContractError("rl_finetune: no training examples");
  if (cfg.gamma < 1.0) {
    for (const auto& item : train)
      if (!item.has_target) throw ContractError("rl_finetune: example '" + item.id + "' has no pseudo target");
  }
  // Only E and D1 are tuned; the translation decoder's own layers stay fixed.
  std::vector<Tensor> params;
  for (auto& [name, t] : model.named_parameters())
    if (name.rfind("d2.", 0) != 0) params.push_back(t);
  ad::Adam adam(params, ad::AdamConfig{cfg.lr, 0.9, 0.98, 1e-9});
  const bool was_training = model.training();
  model.set_training(false);

  RlResult result;
  Snapshot best;
  double best_reward = 0.0;
  if (!validation.empty()) {
    best_reward = mean_greedy_reward(model, validation, reward_fn, cfg.max_len);
    result.validation_reward.push_back(best_reward);
    best = snapshot(params);
  }
  std::size_t step = 0, stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(train.size(), cfg.seed, kRlStream, epoch);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const double b = static_cast<double>(end - start);
      adam.zero_grad();
      double sum_rl = 0.0, sum_xls = 0.0, sum_rg = 0.0, sum_rs = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& item = train[order[k]];
        auto h = model.encode(item.src, nn::Task::Sum);
        Tensor total;
        if (cfg.gamma > 0.0) {
          auto rl = loss_rl_from(model, h, item, reward_fn, mix_seed(cfg.seed, {kRlSample, epoch, order[k]}),
                                 cfg.max_len);
          sum_rl += rl.loss.item();
          sum_rg += rl.greedy_reward;
          sum_rs += rl.sample_reward;
          total = ad::scale(rl.loss, cfg.gamma);
        }
        if (cfg.gamma < 1.0) {
          auto xl = sequence_nll_impl(model, nn::DecoderId::Summary, h, item.tgt);
          sum_xls += xl.item();
          auto part = ad::scale(xl, 1.0 - cfg.gamma);
          total = total.defined() ? ad::add(total, part) : part;
        }
        ad::backward(ad::scale(total, 1.0 / b));
      }
      adam.step();
      if (cfg.gamma > 0.0) {
        result.trace.push_back({step, "rl", sum_rl / b});
        result.trace.push_back({step, "reward_greedy", sum_rg / b});
        result.trace.push_back({step, "reward_sample", sum_rs / b});
      }
      if (cfg.gamma < 1.0) result.trace.push_back({step, "xls", sum_xls / b});
      ++step;
    }
    if (!validation.empty()) {
      const double r = mean_greedy_reward(model, validation, reward_fn, cfg.max_len);
      result.validation_reward.push_back(r);
      result.trace.push_back({step, "val_reward", r});
      if (r > best_reward) {
        best_reward = r;
        best = snapshot(params);
        result.best_epoch = epoch;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        break;
      }
    }
  }
  adam.zero_grad();
  if (!validation.empty()) restore(params, best);
  else result.best_epoch = cfg.epochs;
  model.set_training(was_training);
  return result;
}

// ---------------------------------------------------------------------------
// inference

std::string summarize(const XlsModel& model, const Vocabs& vocabs, std::string_view article, std::size_t max_len) {
  ad::NoGradGuard guard;
  auto h = model.encode(encoder_input(vocabs.src, article), nn::Task::Sum);
  return vocabs.tgt.decode(model.greedy_decode(nn::DecoderId::Summary, h, max_len));
}

}  // namespace xlsum::train
