#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "xlsum/datapipe.hpp"
#include "xlsum/errors.hpp"
#include "xlsum/xsim.hpp"

using namespace xlsum;
using namespace xlsum::xsim;

namespace {

double norm(const std::vector<double>& v) { return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)); }

SimilarityModel tiny_model() {
  return SimilarityModel(TrigramVocab::build({"ab cd", "AB CD", "xyz"}), 8, 3);
}

std::vector<data::ParallelPair> parallel(std::size_t n, std::uint64_t seed, std::size_t offset = 0) {
  data::SyntheticSpec spec;
  spec.seed = seed;
  spec.mt_pairs_per_example = 5;
  auto corpus = data::generate_synthetic(spec, n / 5, offset);
  return corpus.parallel;
}

}  // namespace

TEST_CASE("trigram featurization") {
  CHECK(char_trigrams("ab") == std::vector<std::string>{"#ab", "ab#"});
  CHECK(char_trigrams("a") == std::vector<std::string>{"#a#"});
  CHECK(char_trigrams("").empty());
  CHECK(char_trigrams("   ").empty());
  CHECK(char_trigrams("ab  cd") == char_trigrams(" ab cd "));
  CHECK(char_trigrams("\xc3\xa9t") == std::vector<std::string>{"#\xc3\xa9t", "\xc3\xa9t#"});

  auto model = tiny_model();
  CHECK(model.featurize("ab cd") == model.featurize("ab cd"));
  auto all = model.featurize_all("ab qq");
  CHECK(all.size() == 4);
  CHECK(all[2] == kUnknownTrigram);
  CHECK(model.featurize("ab qq").size() == 2);
}

TEST_CASE("embedding and score contracts") {
  auto model = tiny_model();
  auto e = model.embed("ab cd");
  CHECK(!e.degenerate);
  CHECK(std::abs(norm(e.values) - 1.0) <= 1e-9);
  CHECK(model.embed("ab cd").values == e.values);

  auto none = model.embed("qqq");
  CHECK(none.degenerate);
  CHECK(norm(none.values) == 0.0);
  CHECK(model.embed("").degenerate);
  auto s = model.score("qqq", "ab");
  CHECK(s.degenerate);
  CHECK(s.value == 0.0);

  // One known trigram: the embedding is that row, normalized.
  auto vocab = TrigramVocab::build({"k"});
  SimilarityModel one(vocab, 5, 11);
  const int id = vocab.id("#k#");
  std::vector<double> row(one.table().data().begin() + id * 5, one.table().data().begin() + id * 5 + 5);
  const double n = norm(row);
  auto ek = one.embed("k");
  for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(ek.values[j] - row[j] / n) <= 1e-12);

  CHECK(std::abs(model.score("ab cd", "ab cd").value - 1.0) <= 1e-12);
  CHECK(model.score("ab", "CD xyz").value == model.score("CD xyz", "ab").value);
  const double v = model.score("ab", "AB xyz").value;
  CHECK(v >= -1.0);
  CHECK(v <= 1.0);

  // Cosine is invariant to a positive rescaling of the table.
  SimilarityModel scaled(model.vocab(), model.table().detach());
  for (auto& w : scaled.table().mutable_data()) w *= 3.5;
  CHECK(std::abs(scaled.score("ab", "AB xyz").value - v) <= 1e-12);
}

TEST_CASE("model file round trip") {
  auto model = tiny_model();
  auto text = model.serialize();
  auto back = SimilarityModel::deserialize(text);
  CHECK(back.serialize() == text);
  CHECK(back.vocab().trigrams() == model.vocab().trigrams());
  for (std::size_t i = 0; i < model.table().numel(); ++i) CHECK(back.table()[i] == model.table()[i]);
  CHECK_THROWS_AS(SimilarityModel::deserialize("XSIM 9\n"), FormatError);
  CHECK_THROWS_AS(SimilarityModel::deserialize(text.substr(0, text.size() / 2)), FormatError);
}

TEST_CASE("margin loss values and gradients") {
  // Aligned pairs that already beat every negative by more than the margin.
  auto s = ad::Tensor::from({2, 2}, {1, 0, 0, 1});
  auto t = ad::Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(margin_loss(s, t, 0.0).item() == 0.0);
  CHECK(margin_loss(s, t, 0.4).item() == 0.0);
  // Swapped targets: pos = 0, hardest neg = 1.
  auto swapped = ad::Tensor::from({2, 2}, {0, 1, 1, 0});
  CHECK(std::abs(margin_loss(s, swapped, 0.4).item() - 1.4) <= 1e-15);
  CHECK_THROWS_AS(margin_loss(ad::Tensor::from({1, 2}, {1, 0}), ad::Tensor::from({1, 2}, {1, 0}), 0.4),
                  ContractError);

  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = testing::random_tensor({4, 3}, gen, -1, 1, true);
    auto b = testing::random_tensor({4, 3}, gen, -1, 1, true);
    auto fn = [&] { return margin_loss(ad::l2_normalize_rows(a), ad::l2_normalize_rows(b), 0.4); };
    CHECK(fn().item() >= 0.0);
    auto r = testing::grad_check(fn, {a, b}, 1e-6);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("training separates aligned from misaligned pairs") {
  auto train = parallel(2000, 21);
  XsimConfig cfg;
  cfg.epochs = 5;
  auto result = train_similarity(train, cfg);
  REQUIRE(result.epoch_loss.size() == 5);
  for (double l : result.epoch_loss) CHECK(l >= 0.0);
  CHECK(result.epoch_loss.back() < 0.5 * result.initial_loss);
  auto held_out = parallel(500, 21, 100000);
  auto sep = separation(result.model, held_out);
  MESSAGE("aligned " << sep.aligned << " misaligned " << sep.misaligned);
  CHECK(sep.aligned - sep.misaligned >= 0.2);
  CHECK_THROWS_AS(train_similarity({train[0]}, cfg), ContractError);
}
