#pragma once

// Randomized finite-difference cases for every differentiable primitive.
// Shared by the unit tests and the acceptance gradient suite.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "xlsum/tensor.hpp"

namespace xlsum::testing {

struct PrimitiveCase {
  std::string name;
  // Returns the maximum relative error for one random instance.
  std::function<double(std::uint64_t seed)> run;
};

namespace detail {

inline ad::Tensor contract(const ad::Tensor& t, std::uint64_t seed) {
  std::mt19937_64 gen(seed ^ 0x51ed270b2f5e4c1dULL);
  auto w = random_tensor(t.shape(), gen, -1.0, 1.0, false);
  return ad::sum(ad::mul(t, w));
}

inline std::size_t dim(std::mt19937_64& gen, std::size_t lo = 1, std::size_t hi = 6) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(gen);
}

// Values bounded away from zero so kinks (relu, clamp edges) are not hit by
// a 1e-5 perturbation.
inline ad::Tensor away_from(double kink, const ad::Shape& shape, std::mt19937_64& gen) {
  auto t = random_tensor(shape, gen, -1.0, 1.0);
  for (auto& v : t.mutable_data()) {
    if (std::abs(v - kink) < 1e-3) v = kink + 0.5;
  }
  return t;
}

}  // namespace detail

inline std::vector<PrimitiveCase> primitive_cases() {
  using namespace ad;
  using detail::contract;
  using detail::dim;
  std::vector<PrimitiveCase> cases;
  auto add_case = [&](std::string name, std::function<double(std::uint64_t)> fn) {
    cases.push_back({std::move(name), std::move(fn)});
  };

  add_case("matmul", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = random_tensor({dim(g), dim(g)}, g);
    auto b = random_tensor({a.dim(1), dim(g)}, g);
    return grad_check([&] { return contract(matmul(a, b), seed); }, {a, b}).max_rel_error;
  });
  add_case("matmul_nt", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = random_tensor({dim(g), dim(g)}, g);
    auto b = random_tensor({dim(g), a.dim(1)}, g);
    return grad_check([&] { return contract(matmul_nt(a, b), seed); }, {a, b}).max_rel_error;
  });
  add_case("transpose", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = random_tensor({dim(g), dim(g)}, g);
    return grad_check([&] { return contract(transpose(a), seed); }, {a}).max_rel_error;
  });
  add_case("linear", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto x = random_tensor({dim(g), dim(g)}, g);
    auto w = random_tensor({x.dim(1), dim(g)}, g);
    auto b = random_tensor({w.dim(1)}, g);
    return grad_check([&] { return contract(linear(x, w, b), seed); }, {x, w, b}).max_rel_error;
  });
  add_case("add", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = random_tensor({dim(g), dim(g)}, g);
    auto b = random_tensor(a.shape(), g);
    auto row = random_tensor({a.dim(1)}, g);
    return grad_check([&] { return contract(add(add(a, b), row), seed); }, {a, b, row}).max_rel_error;
  });
  add_case("sub", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = random_tensor({dim(g), dim(g)}, g);
    auto b = random_tensor(a.shape(), g);
    return grad_check([&] { return contract(sub(a, b), seed); }, {a, b}).max_rel_error;
  });
  add_case("mul", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = random_tensor({dim(g), dim(g)}, g);
    auto b = random_tensor(a.shape(), g);
    return grad_check([&] { return contract(mul(a, b), seed); }, {a, b}).max_rel_error;
  });
  add_case("scale+add_scalar", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = random_tensor({dim(g), dim(g)}, g);
    return grad_check([&] { return contract(add_scalar(scale(a, -1.7), 0.3), seed); }, {a}).max_rel_error;
  });
  add_case("relu", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = detail::away_from(0.0, {dim(g), dim(g)}, g);
    return grad_check([&] { return contract(relu(a), seed); }, {a}).max_rel_error;
  });
  add_case("sigmoid", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = random_tensor({dim(g), dim(g)}, g, -4, 4);
    return grad_check([&] { return contract(sigmoid(a), seed); }, {a}).max_rel_error;
  });
  add_case("log", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = random_tensor({dim(g), dim(g)}, g, 0.1, 3.0);
    return grad_check([&] { return contract(log(a), seed); }, {a}).max_rel_error;
  });
  add_case("clamp", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = detail::away_from(0.5, {dim(g), dim(g)}, g);
    for (auto& v : a.mutable_data()) {
      if (std::abs(v + 0.5) < 1e-3) v = 0.0;
    }
    return grad_check([&] { return contract(clamp(a, -0.5, 0.5), seed); }, {a}).max_rel_error;
  });
  add_case("dropout", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = random_tensor({dim(g), dim(g)}, g);
    return grad_check([&] { return contract(dropout(a, 0.3, true, seed), seed); }, {a}).max_rel_error;
  });
  add_case("sum+mean", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = random_tensor({dim(g), dim(g)}, g);
    return grad_check([&] { return add(sum(mul(a, a)), mean(a)); }, {a}).max_rel_error;
  });
  add_case("softmax", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = random_tensor({dim(g), dim(g), dim(g, 1, 3)}, g, -3, 3);
    const std::size_t axis = seed % 3;
    return grad_check([&] { return contract(softmax(a, axis), seed); }, {a}).max_rel_error;
  });
  add_case("log_softmax", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto a = random_tensor({dim(g), dim(g, 2, 7)}, g, -3, 3);
    const std::size_t axis = seed % 2;
    return grad_check([&] { return contract(log_softmax(a, axis), seed); }, {a}).max_rel_error;
  });
  add_case("layer_norm", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto x = random_tensor({dim(g), dim(g, 2, 8)}, g, -2, 2);
    auto gain = random_tensor({x.dim(1)}, g, 0.5, 1.5);
    auto bias = random_tensor({x.dim(1)}, g);
    return grad_check([&] { return contract(layer_norm(x, gain, bias), seed); }, {x, gain, bias})
        .max_rel_error;
  });
  add_case("l2_normalize_rows", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto x = random_tensor({dim(g), dim(g, 2, 8)}, g);
    return grad_check([&] { return contract(l2_normalize_rows(x), seed); }, {x}).max_rel_error;
  });
  add_case("causal_mask+softmax", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    const std::size_t tq = dim(g);
    auto s = random_tensor({tq, tq + dim(g, 0, 3)}, g, -2, 2);
    return grad_check([&] { return contract(softmax(causal_mask(s), 1), seed); }, {s}).max_rel_error;
  });
  add_case("cross_entropy", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto logits = random_tensor({dim(g), dim(g, 2, 9)}, g, -3, 3);
    std::vector<int> targets(logits.dim(0));
    std::uniform_int_distribution<int> pick_t(-1, static_cast<int>(logits.dim(1)) - 1);
    for (auto& t : targets) t = pick_t(g);
    targets[0] = 0;
    return grad_check([&] { return cross_entropy(logits, targets, -1); }, {logits}).max_rel_error;
  });
  add_case("bce_with_logits", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto z = random_tensor({dim(g, 1, 10)}, g, -4, 4);
    std::vector<double> y(z.numel());
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& v : y) v = u(g);
    return grad_check([&] { return bce_with_logits(z, y); }, {z}).max_rel_error;
  });
  add_case("embedding_lookup", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto table = random_tensor({dim(g, 2, 8), dim(g)}, g);
    std::vector<int> ids(dim(g, 1, 10));
    std::uniform_int_distribution<int> pick_id(0, static_cast<int>(table.dim(0)) - 1);
    for (auto& i : ids) i = pick_id(g);
    return grad_check([&] { return contract(embedding_lookup(table, ids), seed); }, {table}).max_rel_error;
  });
  add_case("embedding_bag_mean", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto table = random_tensor({dim(g, 2, 8), dim(g)}, g);
    std::vector<std::vector<int>> bags(dim(g, 1, 5));
    std::uniform_int_distribution<int> pick_id(0, static_cast<int>(table.dim(0)) - 1);
    for (auto& bag : bags) {
      bag.resize(dim(g, 0, 5));
      for (auto& i : bag) i = pick_id(g);
    }
    return grad_check([&] { return contract(embedding_bag_mean(table, bags), seed); }, {table})
        .max_rel_error;
  });
  add_case("gather_rows+pick", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto x = random_tensor({dim(g, 2, 6), dim(g)}, g);
    std::vector<std::size_t> rows(dim(g)), cols(rows.size());
    std::uniform_int_distribution<std::size_t> pr(0, x.dim(0) - 1), pc(0, x.dim(1) - 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i] = pr(g);
      cols[i] = pc(g);
    }
    return grad_check(
               [&] { return add(contract(gather_rows(x, rows), seed), contract(pick(x, rows, cols), seed + 1)); },
               {x})
        .max_rel_error;
  });
  add_case("concat+slice+reshape", [](std::uint64_t seed) {
    std::mt19937_64 g(seed);
    const std::size_t rows = dim(g);
    auto a = random_tensor({rows, dim(g)}, g);
    auto b = random_tensor({rows, dim(g)}, g);
    const std::size_t axis = seed % 2;
    auto c = axis == 1 ? b : random_tensor({dim(g), a.dim(1)}, g);
    auto fn = [&] {
      auto joined = concat({a, axis == 1 ? b : c}, axis);
      const std::size_t len = joined.shape()[axis];
      auto part = slice(joined, axis, len / 3, len);
      return contract(reshape(part, {part.numel()}), seed);
    };
    return grad_check(fn, {a, axis == 1 ? b : c}).max_rel_error;
  });
  return cases;
}

}  // namespace xlsum::testing
