#pragma once

// Multi-task pre-training, the extractive teacher, rewards and
// self-critical fine-tuning.

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlsum/datapipe.hpp"
#include "xlsum/model.hpp"
#include "xlsum/vocab.hpp"
#include "xlsum/xsim.hpp"

namespace xlsum::train {

using ad::Tensor;
using nn::XlsModel;

enum class DistillVariant { SquaredLog, Kl };
enum class RewardKind { RougeL, Xsim, Mean };
enum class Recipe { MLE_XLS, MLE_XLS_MT, MLE_XLS_MT_DIS, RL_ROUGE, RL_XSIM, RL_ROUGE_XSIM };

std::string to_string(DistillVariant v);
std::string to_string(RewardKind k);
std::string to_string(Recipe r);
DistillVariant parse_distill_variant(std::string_view s);
RewardKind parse_reward_kind(std::string_view s);
Recipe parse_recipe(std::string_view s);
bool is_rl(Recipe r);
bool uses_mt(Recipe r);
bool uses_distill(Recipe r);
RewardKind reward_kind_of(Recipe r);  // RL recipes only

struct TrainConfig {
  nn::ModelConfig model;  // vocabulary sizes are filled in from the data
  double lambda = 10.0;
  double lr = 1e-3;
  std::size_t xls_batch = 16;
  std::size_t mt_batch = 16;
  std::size_t mt_steps_per_cycle = 1;
  std::size_t epochs = 5;
  std::uint64_t seed = 1;
  DistillVariant distill_variant = DistillVariant::SquaredLog;
  double clamp_eps = 1e-4;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct RlConfig {
  double gamma = 0.998;
  RewardKind reward = RewardKind::RougeL;
  std::uint64_t seed = 1;
  std::size_t max_len = 48;
  std::size_t epochs = 2;
  std::size_t batch = 16;
  double lr = 1e-4;
  std::size_t patience = 1;  // epochs without validation improvement before stopping

  void validate() const;
  nlohmann::json to_json() const;
  static RlConfig from_json(const nlohmann::json& j);
};

// ---- encoded data ------------------------------------------------------------

struct Vocabs {
  data::Tokenizer src;
  data::Tokenizer tgt;

  nlohmann::json to_json() const;
  static Vocabs from_json(const nlohmann::json& j);
};

// Source vocabulary from articles and MT sources, target vocabulary from
// pseudo summaries and MT targets.
Vocabs build_vocabs(const std::vector<data::Example>& examples, const std::vector<data::ParallelPair>& parallel);

struct XlsItem {
  std::string id;
  std::vector<int> src;  // separator-inserted article ids
  std::vector<int> tgt;  // pseudo summary ids (may be empty when unavailable)
  std::vector<std::size_t> positions;
  std::vector<double> q;
  bool has_target = false;
  bool has_labels = false;
  std::string summary_src;
  std::string reference_tgt;
};

struct MtItem {
  std::vector<int> src;
  std::vector<int> tgt;
};

XlsItem prepare_xls(const data::Example& e, const Vocabs& v);
MtItem prepare_mt(const data::ParallelPair& p, const Vocabs& v);
std::vector<int> encoder_input(const data::Tokenizer& src, std::string_view text);

// ---- losses -------------------------------------------------------------------

// Mean token NLL of `tokens` + EOS under teacher forcing with [BOS] + tokens.
Tensor sequence_nll(const XlsModel& model, nn::DecoderId which, const Tensor& h, std::span<const int> tokens);
Tensor loss_xls(const XlsModel& model, const XlsItem& item);
Tensor loss_mt(const XlsModel& model, const MtItem& item);
// From salience probabilities p (tensor) and targets q: squared log
// difference or the KL-style -mean(q log p), both on clamped values.
Tensor distill_from_probs(const Tensor& p, std::span<const double> q, double eps, DistillVariant variant);
Tensor loss_dis(const XlsModel& model, const XlsItem& item, double eps,
                DistillVariant variant = DistillVariant::SquaredLog);
// L_xls + lambda * L_dis (or L_xls alone) from one shared encoding.
Tensor xls_step_loss(const XlsModel& model, const XlsItem& item, const TrainConfig& cfg, bool distill);

// ---- pre-training ----------------------------------------------------------------

struct TraceRow {
  std::size_t step = 0;
  std::string objective;
  double value = 0.0;
};

std::string trace_csv(const std::vector<TraceRow>& rows);

struct PretrainResult {
  std::vector<TraceRow> trace;
  std::set<std::string> touched;  // parameter names that ever received a gradient
};

// Alternates mt_steps_per_cycle MT batches with one XLS batch per cycle;
// an epoch is one pass over the XLS data.
PretrainResult pretrain(XlsModel& model, const std::vector<XlsItem>& xls, const std::vector<MtItem>& mt, Recipe recipe,
                        const TrainConfig& cfg);

// Shuffled visiting order for one epoch of a stream.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch);

// ---- extractive teacher ----------------------------------------------------------

// Greedy sentence selection maximizing ROUGE-L F1 against the summary.
std::vector<int> oracle_sentence_labels(const std::string& article, const std::string& summary);

struct TeacherConfig {
  nn::ModelConfig model;
  std::size_t epochs = 10;
  std::size_t batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static TeacherConfig from_json(const nlohmann::json& j);
};

struct TeacherResult {
  XlsModel model;
  std::vector<TraceRow> trace;
};

TeacherResult train_teacher(const std::vector<data::Example>& examples, const data::Tokenizer& src,
                            const TeacherConfig& cfg);
// Sentence probabilities from a teacher model (encoder + extraction head).
data::SentenceScorer teacher_scorer(const XlsModel& teacher, const data::Tokenizer& src);
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// ---- rewards and self-critical training -------------------------------------------

struct RewardContext {
  RewardKind kind = RewardKind::RougeL;
  const xsim::SimilarityModel* xsim = nullptr;
};

// rouge_l: ROUGE-L F1 against the pseudo target summary; xsim: cosine
// against the source summary; mean: their average.
double reward(const RewardContext& ctx, const std::string& hypothesis, const XlsItem& item);
// Throws PrerequisiteError when the context cannot score `kind`.
void check_reward_prerequisites(const RewardContext& ctx);

using RewardFn = std::function<double(const std::vector<int>& tokens, const XlsItem& item)>;
RewardFn make_reward_fn(const RewardContext& ctx, const data::Tokenizer& tgt);

// (advantage) * sum_j log p(sample_j | sample_<j, x) through D1.
Tensor rl_loss_fixed(const XlsModel& model, const Tensor& h, std::span<const int> sample, double advantage);

struct RlLoss {
  Tensor loss;
  std::vector<int> greedy;
  std::vector<int> sample;
  double greedy_reward = 0.0;
  double sample_reward = 0.0;
};

// (r(greedy) - r(sample)) * log p(sample); the reward difference is a constant.
RlLoss loss_rl(const XlsModel& model, const XlsItem& item, const RewardFn& reward_fn, std::uint64_t seed,
               std::size_t max_len);

double mean_greedy_reward(const XlsModel& model, const std::vector<XlsItem>& items, const RewardFn& reward_fn,
                          std::size_t max_len);

struct RlResult {
  std::vector<TraceRow> trace;
  std::vector<double> validation_reward;  // index 0 = before fine-tuning
  std::size_t best_epoch = 0;
};

// Fine-tunes E and D1 (D2 frozen) on gamma * L_rl + (1 - gamma) * L_xls,
// keeping the parameters with the best validation greedy reward.
RlResult rl_finetune(XlsModel& model, const std::vector<XlsItem>& train, const std::vector<XlsItem>& validation,
                     const RlConfig& cfg, const RewardFn& reward_fn);

// ---- inference -----------------------------------------------------------------

std::string summarize(const XlsModel& model, const Vocabs& vocabs, std::string_view article, std::size_t max_len);

}  // namespace xlsum::train
