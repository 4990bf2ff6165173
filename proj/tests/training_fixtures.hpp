#pragma once

// Small synthetic corpora, tiny models and randomized finite-difference
// cases for the training losses. Shared by unit and acceptance tests.

#include <cstdint>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "primitive_cases.hpp"
#include "xlsum/datapipe.hpp"
#include "xlsum/training.hpp"

namespace xlsum::testing {

inline nn::ModelConfig tiny_model_config() {
  nn::ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.ffn_dim = 32;
  c.n_encoder_layers = 1;
  c.n_decoder_layers = 2;
  c.n_shared_decoder_layers = 1;
  c.max_src_len = 160;
  c.max_tgt_len = 64;
  c.dropout_rate = 0.0;
  return c;
}

struct Fixture {
  data::SyntheticCorpus corpus;
  std::vector<data::Example> examples;  // pseudo targets and keyword labels attached
  train::Vocabs vocabs;
  std::vector<train::XlsItem> xls;
  std::vector<train::MtItem> mt;

  nn::ModelConfig model_config(nn::ModelConfig base = tiny_model_config()) const {
    base.src_vocab_size = vocabs.src.size();
    base.tgt_vocab_size = vocabs.tgt.size();
    return base;
  }
};

inline Fixture make_fixture(std::size_t n, std::uint64_t seed = 3, double noise = 0.1) {
  Fixture f;
  data::SyntheticSpec spec;
  spec.seed = seed;
  f.corpus = data::generate_synthetic(spec, n);
  data::ToyTranslator tr{&f.corpus.lexicon, noise, seed};
  f.examples = data::build_pseudo_corpus(f.corpus.examples, tr, 0.0).kept;
  for (auto& e : f.examples) {
    e.salience = data::make_salience_labels(e, data::UnitMode::Keyword, nullptr);
    e.unit_mode = data::UnitMode::Keyword;
  }
  f.vocabs = train::build_vocabs(f.examples, f.corpus.parallel);
  for (const auto& e : f.examples) f.xls.push_back(train::prepare_xls(e, f.vocabs));
  for (const auto& p : f.corpus.parallel) f.mt.push_back(train::prepare_mt(p, f.vocabs));
  return f;
}

// Shortened items keep the finite-difference cases cheap.
inline train::XlsItem short_item(const train::XlsItem& item, std::size_t src_len, std::size_t tgt_len) {
  auto out = item;
  out.src.resize(std::min(src_len, out.src.size()));
  out.tgt.resize(std::min(tgt_len, out.tgt.size()));
  return out;
}

inline const Fixture& shared_fixture() {
  static const Fixture f = make_fixture(20);
  return f;
}

inline constexpr double kLossGradResolution = 1e-5;

// Finite-difference cases for every training loss. Each run builds a tiny
// model from the seed and checks a random subset of coordinates of every
// parameter tensor.
inline std::vector<PrimitiveCase> loss_cases() {
  auto model_for = [](std::uint64_t seed) {
    return train::XlsModel(shared_fixture().model_config(), seed);
  };
  auto item_for = [](std::uint64_t seed) {
    const auto& f = shared_fixture();
    return short_item(f.xls[seed % f.xls.size()], 24, 6);
  };
  auto check = [](const train::XlsModel& m, const std::function<ad::Tensor()>& fn, std::uint64_t seed) {
    // Sequence losses are sums of many terms; at h = 1e-5 their roundoff
    // (a few ulps of a loss near 4) limits the quotient to about 1e-9
    // absolute, so entries below 1e-5 are judged against that floor.
    return grad_check(fn, m.parameters(), 1e-5, 2, seed, kLossGradResolution).max_rel_error;
  };
  std::vector<PrimitiveCase> cases;
  cases.push_back({"L_xls", [=](std::uint64_t seed) {
                     auto m = model_for(seed);
                     auto item = item_for(seed);
                     return check(m, [&] { return train::loss_xls(m, item); }, seed);
                   }});
  cases.push_back({"L_mt", [=](std::uint64_t seed) {
                     auto m = model_for(seed);
                     const auto& f = shared_fixture();
                     auto item = f.mt[seed % f.mt.size()];
                     return check(m, [&] { return train::loss_mt(m, item); }, seed);
                   }});
  cases.push_back({"L_dis", [=](std::uint64_t seed) {
                     auto m = model_for(seed);
                     auto item = item_for(seed);
                     return check(m, [&] { return train::loss_dis(m, item, 1e-4); }, seed);
                   }});
  cases.push_back({"L_dis_kl", [=](std::uint64_t seed) {
                     auto m = model_for(seed);
                     auto item = item_for(seed);
                     return check(m, [&] { return train::loss_dis(m, item, 1e-4, train::DistillVariant::Kl); },
                                  seed);
                   }});
  cases.push_back({"L_rl", [=](std::uint64_t seed) {
                     auto m = model_for(seed);
                     auto item = item_for(seed);
                     std::vector<int> sample;
                     {
                       auto h = m.encode(item.src, nn::Task::Sum);
                       sample = m.sample_decode(nn::DecoderId::Summary, h, 6, seed).tokens;
                     }
                     const double advantage = 0.25 + static_cast<double>(seed % 7) / 10.0;
                     return check(m,
                                  [&] {
                                    auto h = m.encode(item.src, nn::Task::Sum);
                                    return train::rl_loss_fixed(m, h, sample, advantage);
                                  },
                                  seed);
                   }});
  return cases;
}

}  // namespace xlsum::testing
