#include <doctest.h>

#include <cmath>
#include <numeric>

#include "rl_properties.hpp"
#include "training_fixtures.hpp"
#include "xlsum/errors.hpp"
#include "xlsum/metrics.hpp"
#include "xlsum/optim.hpp"

using namespace xlsum;
using namespace xlsum::train;
using xlsum::testing::shared_fixture;

namespace {

std::vector<std::vector<double>> values_of(const std::vector<Tensor>& ts) {
  std::vector<std::vector<double>> out;
  for (const auto& t : ts) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

bool unchanged(const std::vector<Tensor>& ts, const std::vector<std::vector<double>>& before) {
  for (std::size_t i = 0; i < ts.size(); ++i)
    if (!std::equal(before[i].begin(), before[i].end(), ts[i].data().begin())) return false;
  return true;
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.model = xlsum::testing::tiny_model_config();
  c.xls_batch = 4;
  c.mt_batch = 4;
  c.epochs = 1;
  c.lr = 3e-3;
  return c;
}

// Sum over positions of -log p(target) recomputed one decode step at a time.
double token_by_token_nll(const XlsModel& m, nn::DecoderId which, nn::Task task, const std::vector<int>& src,
                          const std::vector<int>& tgt) {
  ad::NoGradGuard guard;
  auto h = m.encode(src, task);
  std::vector<int> prefix{data::kBos};
  std::vector<int> targets = tgt;
  targets.push_back(data::kEos);
  double total = 0.0;
  for (int t : targets) {
    auto logits = m.decode_step(which, h, prefix);
    const auto v = logits.data();
    const double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double x : v) z += std::exp(x - mx);
    total += -(v[static_cast<std::size_t>(t)] - mx - std::log(z));
    prefix.push_back(t);
  }
  return total / static_cast<double>(targets.size());
}

void flatten_output(XlsModel& m, nn::DecoderId which, int peak) {
  const auto& dec = m.decoder(which);
  auto w = dec.output.weight;
  auto b = dec.output.bias;
  for (auto& x : w.mutable_data()) x = 0.0;
  for (auto& x : b.mutable_data()) x = 0.0;
  if (peak >= 0) b.mutable_data()[static_cast<std::size_t>(peak)] = 60.0;
}

}  // namespace

TEST_CASE("sequence losses") {
  const auto& f = shared_fixture();
  XlsModel m(f.model_config(), 1);
  const auto& item = f.xls[0];
  CHECK(std::abs(loss_xls(m, item).item() -
                 token_by_token_nll(m, nn::DecoderId::Summary, nn::Task::Sum, item.src, item.tgt)) <= 1e-10);
  const auto& mt = f.mt[0];
  CHECK(std::abs(loss_mt(m, mt).item() -
                 token_by_token_nll(m, nn::DecoderId::Translation, nn::Task::Trans, mt.src, mt.tgt)) <= 1e-10);

  const double log_v = std::log(static_cast<double>(f.vocabs.tgt.size()));
  flatten_output(m, nn::DecoderId::Summary, -1);
  flatten_output(m, nn::DecoderId::Translation, -1);
  CHECK(std::abs(loss_xls(m, item).item() - log_v) <= 1e-12);
  CHECK(std::abs(loss_mt(m, mt).item() - log_v) <= 1e-12);

  // A one-token target (just EOS) that the decoder predicts with certainty.
  flatten_output(m, nn::DecoderId::Summary, data::kEos);
  flatten_output(m, nn::DecoderId::Translation, data::kEos);
  auto empty = item;
  empty.tgt.clear();
  CHECK(loss_xls(m, empty).item() < 1e-8);
  auto empty_mt = mt;
  empty_mt.tgt.clear();
  CHECK(loss_mt(m, empty_mt).item() < 1e-8);

  auto no_target = item;
  no_target.has_target = false;
  CHECK_THROWS_AS(loss_xls(m, no_target), ContractError);
}

TEST_CASE("distillation losses") {
  const auto& f = shared_fixture();
  XlsModel m(f.model_config(), 2);
  auto item = f.xls[1];
  REQUIRE(item.has_labels);
  // q equal to the model's own predictions gives zero loss.
  auto h = m.encode(item.src, nn::Task::Sum);
  item.q = m.salience_predict(h, item.positions);
  CHECK(loss_dis(m, item, 1e-4).item() <= 1e-24);

  const double eps = 1e-4;
  auto p = Tensor::from({1}, {eps});
  const std::vector<double> one{1.0};
  const double expected = std::pow(std::log(1 - eps) - std::log(eps), 2);
  CHECK(std::abs(distill_from_probs(p, one, eps, DistillVariant::SquaredLog).item() - expected) <= 1e-12);
  CHECK(std::abs(expected - 84.8) <= 0.05);

  const std::vector<double> zeros{0.0, 0.0};
  CHECK(distill_from_probs(Tensor::from({2}, {0.3, 0.8}), zeros, eps, DistillVariant::Kl).item() == 0.0);
  CHECK(distill_from_probs(Tensor::from({1}, {1.0 - 1e-12}), one, eps, DistillVariant::Kl).item() <= 2e-4);

  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> pv(5), qv(5);
    for (auto& x : pv) x = u(gen);
    for (auto& x : qv) x = u(gen);
    double sq = 0.0, kl = 0.0;
    for (int i = 0; i < 5; ++i) {
      sq += std::pow(std::log(qv[i]) - std::log(pv[i]), 2) / 5.0;
      kl += -qv[i] * std::log(pv[i]) / 5.0;
    }
    CHECK(std::abs(distill_from_probs(Tensor::from({5}, pv), qv, eps, DistillVariant::SquaredLog).item() - sq) <=
          1e-10);
    CHECK(std::abs(distill_from_probs(Tensor::from({5}, pv), qv, eps, DistillVariant::Kl).item() - kl) <= 1e-10);
  }

  auto unlabeled = f.xls[1];
  unlabeled.has_labels = false;
  CHECK_THROWS_AS(loss_dis(m, unlabeled, 1e-4), ContractError);
}

TEST_CASE("loss gradients match finite differences") {
  for (const auto& c : xlsum::testing::loss_cases()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) worst = std::max(worst, c.run(seed));
    INFO(c.name);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("pre-training objective composition") {
  const auto& f = shared_fixture();
  XlsModel m(f.model_config(), 3);
  auto cfg = tiny_train_config();
  for (const auto& item : f.xls) {
    const double combined = xls_step_loss(m, item, cfg, true).item();
    const double parts = loss_xls(m, item).item() + cfg.lambda * loss_dis(m, item, cfg.clamp_eps).item();
    CHECK(std::abs(combined - parts) <= 1e-10);
  }
}

TEST_CASE("pre-training updates only the active objectives") {
  const auto& f = shared_fixture();
  auto cfg = tiny_train_config();

  XlsModel a(f.model_config(), 4);
  const auto d2 = a.decoder_exclusive_parameters(nn::DecoderId::Translation);
  const auto d2_before = values_of(d2);
  auto ra = pretrain(a, f.xls, f.mt, Recipe::MLE_XLS, cfg);
  CHECK(unchanged(d2, d2_before));
  for (const auto& name : ra.touched) CHECK(name.rfind("d2.", 0) != 0);

  XlsModel b(f.model_config(), 4);
  auto rb = pretrain(b, f.xls, f.mt, Recipe::MLE_XLS_MT, cfg);
  for (const auto& name : ra.touched) CHECK(rb.touched.count(name) == 1);
  CHECK(rb.touched.size() > ra.touched.size());
  CHECK(!unchanged(b.decoder_exclusive_parameters(nn::DecoderId::Translation), d2_before));

  // Alternation: one MT step, then one XLS step (plus a dis row with distillation).
  XlsModel c(f.model_config(), 4);
  auto rc = pretrain(c, f.xls, f.mt, Recipe::MLE_XLS_MT_DIS, cfg);
  REQUIRE(rc.trace.size() >= 6);
  CHECK(rc.trace[0].objective == "mt");
  CHECK(rc.trace[1].objective == "xls");
  CHECK(rc.trace[2].objective == "dis");
  CHECK(rc.trace[1].step == rc.trace[2].step);
  CHECK(rc.trace[3].objective == "mt");
  CHECK(rc.touched.count("head.out.weight") == 1);
  CHECK(rb.touched.count("head.out.weight") == 0);

  CHECK_THROWS_AS(pretrain(c, {}, f.mt, Recipe::MLE_XLS, cfg), ContractError);
  CHECK_THROWS_AS(pretrain(c, f.xls, {}, Recipe::MLE_XLS_MT, cfg), ContractError);
  CHECK_THROWS_AS(pretrain(c, f.xls, f.mt, Recipe::RL_ROUGE, cfg), ContractError);
  auto unlabeled = f.xls;
  unlabeled[0].has_labels = false;
  CHECK_THROWS_AS(pretrain(c, unlabeled, f.mt, Recipe::MLE_XLS_MT_DIS, cfg), ContractError);
}

TEST_CASE("pre-training is deterministic and reduces every loss") {
  auto f = xlsum::testing::make_fixture(120, 5);
  auto cfg = tiny_train_config();
  cfg.epochs = 8;
  cfg.model.dropout_rate = 0.1;
  std::string bytes[2];
  PretrainResult result;
  for (int run = 0; run < 2; ++run) {
    XlsModel m(f.model_config(cfg.model), 6);
    result = pretrain(m, f.xls, f.mt, Recipe::MLE_XLS_MT_DIS, cfg);
    bytes[run] = nn::checkpoint_bytes(m, {});
  }
  CHECK(bytes[0] == bytes[1]);
  for (const char* objective : {"mt", "xls", "dis"}) {
    std::vector<double> v;
    for (const auto& r : result.trace)
      if (r.objective == objective) v.push_back(r.value);
    REQUIRE(v.size() >= 200);
    const double head = std::accumulate(v.begin(), v.begin() + 100, 0.0) / 100.0;
    const double tail = std::accumulate(v.end() - 100, v.end(), 0.0) / 100.0;
    INFO(objective << " first " << head << " last " << tail);
    CHECK(tail < head);
  }
  auto csv = trace_csv(result.trace);
  CHECK(csv.rfind("step,objective,value\n", 0) == 0);
}

TEST_CASE("oracle sentence labels") {
  const std::string article = "a b c . d e f . g h i . j k l .";
  CHECK(oracle_sentence_labels(article, "g h i .") == std::vector<int>{0, 0, 1, 0});
  CHECK(oracle_sentence_labels(article, "d e f . j k l .") == std::vector<int>{0, 1, 0, 1});
  // Identical sentences tie; the earlier one wins.
  CHECK(oracle_sentence_labels("x y . x y . z w .", "x y .") == std::vector<int>{1, 0, 0});
  CHECK(oracle_sentence_labels(article, "q r s") == std::vector<int>{0, 0, 0, 0});
}

TEST_CASE("auc") {
  CHECK(auc({0.9, 0.1, 0.5}, {1, 0, 0}) == 1.0);
  CHECK(auc({0.1, 0.9}, {1, 0}) == 0.0);
  CHECK(auc({0.5, 0.5}, {1, 0}) == 0.5);
  CHECK_THROWS_AS(auc({0.5}, {1}), ContractError);
}

TEST_CASE("rewards") {
  const auto& f = shared_fixture();
  const auto& item = f.xls[0];
  RewardContext rouge{RewardKind::RougeL, nullptr};
  CHECK(reward(rouge, item.reference_tgt, item) == 1.0);

  std::vector<data::ParallelPair> pairs = f.corpus.parallel;
  xsim::XsimConfig xcfg;
  xcfg.epochs = 2;
  auto sim = xsim::train_similarity(pairs, xcfg).model;
  RewardContext x{RewardKind::Xsim, &sim};
  RewardContext mean{RewardKind::Mean, &sim};
  for (const auto& it : f.xls) {
    for (const std::string& hyp : {it.reference_tgt, std::string("garbage words"), std::string()}) {
      const double rx = reward(x, hyp, it);
      CHECK(rx >= -1.0);
      CHECK(rx <= 1.0);
      CHECK(std::abs(reward(mean, hyp, it) - 0.5 * (reward(rouge, hyp, it) + rx)) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(make_reward_fn(RewardContext{RewardKind::Xsim, nullptr}, f.vocabs.tgt), PrerequisiteError);
  auto no_target = item;
  no_target.has_target = false;
  CHECK_THROWS_AS(reward(rouge, "a", no_target), PrerequisiteError);
}

TEST_CASE("self-critical loss properties") {
  const auto& f = shared_fixture();
  XlsModel m(f.model_config(), 7);
  const auto rep = xlsum::testing::measure_self_critical(m, xlsum::testing::short_item(f.xls[2], 30, 8));
  CHECK(rep.equal_reward_loss == 0.0);
  CHECK(rep.equal_reward_max_grad == 0.0);
  CHECK(rep.constant_loss_mean == 0.0);
  INFO("projection mean " << rep.projection_mean << " se " << rep.projection_se);
  CHECK(std::abs(rep.projection_mean) <= 3.0 * rep.projection_se);
  CHECK(rep.sample_reproduced);
  CHECK(rep.log_prob_after > rep.log_prob_before);
}

TEST_CASE("rl fine-tuning with gamma 0 equals plain summarization training") {
  const auto& f = shared_fixture();
  RlConfig cfg;
  cfg.gamma = 0.0;
  cfg.epochs = 1;
  cfg.batch = 4;
  cfg.lr = 1e-3;
  RewardFn r = make_reward_fn(RewardContext{}, f.vocabs.tgt);

  XlsModel a(f.model_config(), 8);
  auto d2 = a.decoder_exclusive_parameters(nn::DecoderId::Translation);
  const auto d2_before = values_of(d2);
  rl_finetune(a, f.xls, {}, cfg, r);
  CHECK(unchanged(d2, d2_before));

  XlsModel b(f.model_config(), 8);
  std::vector<Tensor> params;
  for (auto& [name, t] : b.named_parameters())
    if (name.rfind("d2.", 0) != 0) params.push_back(t);
  ad::Adam opt(params, ad::AdamConfig{cfg.lr, 0.9, 0.98, 1e-9});
  const auto order = epoch_order(f.xls.size(), cfg.seed, 3, 1);
  for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
    const std::size_t end = std::min(order.size(), start + cfg.batch);
    opt.zero_grad();
    for (std::size_t k = start; k < end; ++k)
      ad::backward(ad::scale(loss_xls(b, f.xls[order[k]]), 1.0 / static_cast<double>(end - start)));
    opt.step();
  }
  CHECK(nn::checkpoint_bytes(a, {}) == nn::checkpoint_bytes(b, {}));

  cfg.gamma = 0.998;
  CHECK_NOTHROW(cfg.validate());
  cfg.gamma = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("rl fine-tuning is deterministic and keeps the best validation state") {
  const auto& f = shared_fixture();
  RlConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 5;
  cfg.max_len = 12;
  auto r = make_reward_fn(RewardContext{}, f.vocabs.tgt);
  std::vector<XlsItem> val(f.xls.begin(), f.xls.begin() + 5);
  std::string bytes[2];
  RlResult res;
  for (int run = 0; run < 2; ++run) {
    XlsModel m(f.model_config(), 9);
    res = rl_finetune(m, f.xls, val, cfg, r);
    bytes[run] = nn::checkpoint_bytes(m, {});
    const double final_reward = mean_greedy_reward(m, val, r, cfg.max_len);
    CHECK(final_reward == res.validation_reward[res.best_epoch]);
  }
  CHECK(bytes[0] == bytes[1]);
  CHECK(res.validation_reward.size() >= 2);
}

TEST_CASE("config files") {
  auto c = tiny_train_config();
  c.distill_variant = DistillVariant::Kl;
  auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"lamda", 3}}), FormatError);
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"lambda", "x"}}), FormatError);
  RlConfig r;
  r.reward = RewardKind::Mean;
  CHECK(RlConfig::from_json(r.to_json()).to_json() == r.to_json());
  CHECK(parse_recipe("RL_XSIM") == Recipe::RL_XSIM);
  CHECK_THROWS_AS(parse_recipe("RL_FOO"), ContractError);
  CHECK(reward_kind_of(Recipe::RL_ROUGE_XSIM) == RewardKind::Mean);
}

TEST_CASE("extractive teacher separates salient sentences") {
  data::SyntheticSpec spec;
  spec.seed = 21;
  const auto train_set = data::generate_synthetic(spec, 300);
  const auto held_out = data::generate_synthetic(spec, 60, 300);
  auto src = data::Tokenizer::build([&] {
    std::vector<std::string> texts;
    for (const auto& e : train_set.examples) texts.push_back(e.article_src);
    return texts;
  }());

  TeacherConfig cfg;
  cfg.model = xlsum::testing::tiny_model_config();
  cfg.epochs = 10;
  cfg.batch = 8;
  cfg.lr = 3e-3;
  auto a = train_teacher(train_set.examples, src, cfg);
  auto b = train_teacher(train_set.examples, src, cfg);
  CHECK(nn::checkpoint_bytes(a.model, {}) == nn::checkpoint_bytes(b.model, {}));

  // True salience: the sentence carries the topic word.
  const auto scorer = teacher_scorer(a.model, src);
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& e : held_out.examples) {
    const auto sentences = data::split_sentences(e.article_src);
    std::vector<int> labels;
    for (const auto& s : sentences)
      labels.push_back(std::find(s.begin(), s.end(), train_set.lexicon.topic_word) != s.end());
    const int pos = std::accumulate(labels.begin(), labels.end(), 0);
    if (pos == 0 || pos == static_cast<int>(labels.size())) continue;
    total += auc(scorer(e.article_src), labels);
    ++counted;
  }
  REQUIRE(counted > 30);
  INFO("mean auc " << total / static_cast<double>(counted));
  CHECK(total / static_cast<double>(counted) >= 0.9);
}
