#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "clsum/autodiff.hpp"

using namespace clsum;
using Catch::Matchers::WithinAbs;

namespace {
std::string tmp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("matmul forward and gradient", "[autodiff]") {
  Tensor a = constant({2, 2}, {1, 2, 3, 4});
  Tensor b = constant({2, 2}, {5, 6, 7, 8});
  Tensor c = matmul(a, b);
  CHECK(c->data == std::vector<double>{19, 22, 43, 50});

  Tensor fixed = constant({2, 3}, {0.5, -1, 2, 1.5, 0.25, -0.75});
  double err = grad_check([&](const Tensor& x) { return sum_all(matmul(x, fixed)); }, {3, 2},
                          {0.1, -0.2, 0.3, 0.4, -0.5, 0.6});
  CHECK(err < 1e-6);
  double err2 = grad_check([&](const Tensor& x) { return sum_all(matmul(transpose(fixed), x)); },
                           {2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(err2 < 1e-6);
  CHECK_THROWS_AS(matmul(constant({2, 3}, 1.0), constant({2, 3}, 1.0)), std::invalid_argument);
}

TEST_CASE("elementwise op gradients match finite differences", "[autodiff]") {
  std::vector<double> x0{0.3, -0.7, 1.2, 0.05, -1.4, 2.2};
  Tensor other = constant({2, 3}, {1.5, -0.5, 0.25, 2.0, -1.0, 0.75});

  CHECK(grad_check([&](const Tensor& x) { return sum_all(add(x, other)); }, {2, 3}, x0) < 1e-6);
  CHECK(grad_check([&](const Tensor& x) { return sum_all(mul(x, other)); }, {2, 3}, x0) < 1e-6);
  CHECK(grad_check([&](const Tensor& x) { return sum_all(scale(x, -2.5)); }, {2, 3}, x0) < 1e-6);
  CHECK(grad_check([&](const Tensor& x) { return sum_all(transpose(x)); }, {2, 3}, x0) < 1e-6);
  // relu checked away from the kink
  CHECK(grad_check([&](const Tensor& x) { return sum_all(relu(x)); }, {2, 3}, x0) < 1e-6);

  Tensor row = constant({1, 3}, {0.5, -1.5, 0.25});
  CHECK(grad_check([&](const Tensor& x) { return sum_all(add_rowwise(x, row)); }, {2, 3}, x0) <
        1e-6);
  CHECK(grad_check([&](const Tensor& x) {
          return sum_all(add_rowwise(other, x));
        }, {1, 3}, {0.5, -1.5, 0.25}) < 1e-6);
}

TEST_CASE("softmax rows are distributions and differentiate", "[autodiff]") {
  Tensor x = constant({2, 3}, {1, 1, 1, 0, 2, -2});
  Tensor y = softmax(x);
  for (std::size_t r = 0; r < 2; ++r) {
    double sum = y->data[3 * r] + y->data[3 * r + 1] + y->data[3 * r + 2];
    CHECK_THAT(sum, WithinAbs(1.0, 1e-12));
  }
  CHECK_THAT(y->data[0], WithinAbs(1.0 / 3.0, 1e-12));

  // weight the entries so the gradient is not the trivial zero of sum(softmax)
  Tensor w = constant({2, 3}, {3, -1, 0.5, 2, 2, -4});
  double err = grad_check([&](const Tensor& t) { return sum_all(mul(softmax(t), w)); }, {2, 3},
                          {0.3, -0.7, 1.2, 0.05, -1.4, 2.2});
  CHECK(err < 1e-6);
}

TEST_CASE("masked softmax ignores hidden positions entirely", "[autodiff]") {
  Tensor x = constant({2, 3}, {5, 1, 100, 0.5, 0.25, -1});
  std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1};
  Tensor y = masked_softmax(x, mask);
  CHECK(y->data[2] == 0.0);
  // The huge masked logit must not leak into the normalization.
  double denom = std::exp(5.0) + std::exp(1.0);
  CHECK_THAT(y->data[0], WithinAbs(std::exp(5.0) / denom, 1e-12));
  CHECK_THAT(y->data[0] + y->data[1], WithinAbs(1.0, 1e-12));

  Tensor w = constant({2, 3}, {3, -1, 0.5, 2, 2, -4});
  double err = grad_check(
      [&](const Tensor& t) { return sum_all(mul(masked_softmax(t, mask), w)); }, {2, 3},
      {0.3, -0.7, 1.2, 0.05, -1.4, 2.2});
  CHECK(err < 1e-6);

  std::vector<std::uint8_t> dead{0, 0, 0, 1, 1, 1};
  CHECK_THROWS_WITH(masked_softmax(x, dead), Catch::Matchers::ContainsSubstring("fully masked"));
}

TEST_CASE("layer norm standardizes rows", "[autodiff]") {
  Tensor g = constant({1, 2}, {1, 1});
  Tensor b = constant({1, 2}, {0, 0});
  Tensor x = constant({1, 2}, {1, 3});
  Tensor y = layer_norm(x, g, b);
  CHECK_THAT(y->data[0], WithinAbs(-1.0, 1e-4));
  CHECK_THAT(y->data[1], WithinAbs(1.0, 1e-4));

  Tensor w = constant({2, 4}, {3, -1, 0.5, 2, 2, -4, 1, 0.25});
  Tensor gain = constant({1, 4}, {1.1, 0.9, 1.3, 0.8});
  Tensor bias = constant({1, 4}, {0.1, -0.2, 0.3, 0.0});
  std::vector<double> x0{0.3, -0.7, 1.2, 0.05, -1.4, 2.2, 0.6, -0.1};
  double err = grad_check(
      [&](const Tensor& t) { return sum_all(mul(layer_norm(t, gain, bias), w)); }, {2, 4}, x0);
  CHECK(err < 1e-6);

  // gradients reach the gain and bias too
  Tensor data = constant({2, 4}, x0);
  double gerr = grad_check(
      [&](const Tensor& t) { return sum_all(mul(layer_norm(data, t, bias), w)); }, {1, 4},
      {1.1, 0.9, 1.3, 0.8});
  CHECK(gerr < 1e-6);
}

TEST_CASE("embedding lookup routes gradients to the right rows", "[autodiff]") {
  Tensor table = param({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor picked = embedding_lookup(table, {2, 0, 2});
  CHECK(picked->data == std::vector<double>{5, 6, 1, 2, 5, 6});
  backward(sum_all(picked));
  CHECK(table->grad == std::vector<double>{1, 1, 0, 0, 2, 2});
  CHECK_THROWS_AS(embedding_lookup(table, {3}), std::invalid_argument);
}

TEST_CASE("concat_cols splits gradients back to its parts", "[autodiff]") {
  Tensor a = param({2, 1}, {1, 2});
  Tensor b = param({2, 2}, {3, 4, 5, 6});
  Tensor c = concat_cols({a, b});
  REQUIRE(c->shape == std::vector<std::size_t>{2, 3});
  CHECK(c->data == std::vector<double>{1, 3, 4, 2, 5, 6});
  Tensor w = constant({2, 3}, {1, 10, 100, 1000, 10000, 100000});
  backward(sum_all(mul(c, w)));
  CHECK(a->grad == std::vector<double>{1, 1000});
  CHECK(b->grad == std::vector<double>{10, 100, 10000, 100000});
}

TEST_CASE("cross entropy matches a hand-computed value and ignores pad", "[autodiff]") {
  Tensor logits = constant({1, 2}, {1, 0});
  Tensor loss = cross_entropy(logits, {0}, /*pad_id=*/-1);
  CHECK_THAT(scalar_value(loss), WithinAbs(0.31326168751822286, 1e-12));

  // a padded row contributes nothing, and the mean is over active rows
  Tensor padded = constant({2, 2}, {1, 0, 50, -50});
  Tensor loss3 = cross_entropy(padded, {0, 9}, /*pad_id=*/9);
  CHECK_THAT(scalar_value(loss3), WithinAbs(0.31326168751822286, 1e-12));

  double err = grad_check(
      [&](const Tensor& t) { return cross_entropy(t, {2, 0, 1}, -1); }, {3, 4},
      {0.3, -0.7, 1.2, 0.05, -1.4, 2.2, 0.6, -0.1, 0.9, 1.1, -0.3, 0.2});
  CHECK(err < 1e-6);

  double serr = grad_check(
      [&](const Tensor& t) { return cross_entropy(t, {2, 0, 1}, -1, 0.1); }, {3, 4},
      {0.3, -0.7, 1.2, 0.05, -1.4, 2.2, 0.6, -0.1, 0.9, 1.1, -0.3, 0.2});
  CHECK(serr < 1e-6);

  CHECK_THROWS_AS(cross_entropy(logits, {0, 1}, -1), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(logits, {5}, -1), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(logits, {0}, 0), std::invalid_argument);
}

TEST_CASE("gradients accumulate across backward passes until cleared", "[autodiff]") {
  Tensor x = param({1, 2}, {2, 3});
  backward(sum_all(mul(x, x)));
  CHECK(x->grad == std::vector<double>{4, 6});
  backward(sum_all(mul(x, x)));
  CHECK(x->grad == std::vector<double>{8, 12});
  zero_grad(x);
  CHECK(x->grad == std::vector<double>{0, 0});
}

TEST_CASE("a node reused by two consumers gets both contributions", "[autodiff]") {
  Tensor x = param({1, 1}, {3});
  Tensor y = add(mul(x, x), scale(x, 4));  // x^2 + 4x -> d/dx = 2x + 4 = 10
  backward(sum_all(y));
  CHECK_THAT(x->grad[0], WithinAbs(10.0, 1e-12));
}

TEST_CASE("dropout scales surviving entries and disables cleanly", "[autodiff]") {
  Rng rng(0);
  Tensor x = constant({10, 10}, 1.0);
  Tensor kept = dropout(x, 0.0, rng, true);
  CHECK(kept->data == x->data);
  Tensor eval = dropout(x, 0.9, rng, false);
  CHECK(eval->data == x->data);
  Tensor dropped = dropout(x, 0.5, rng, true);
  std::size_t zeros = 0;
  for (double v : dropped->data) {
    if (v == 0.0)
      ++zeros;
    else
      CHECK_THAT(v, WithinAbs(2.0, 1e-12));
  }
  CHECK(zeros > 10);
  CHECK(zeros < 90);
  CHECK_THROWS_AS(dropout(x, 1.0, rng, true), std::invalid_argument);
}

TEST_CASE("checkpoints round trip bit-for-bit and validate names", "[autodiff]") {
  NamedParams params{{"w", param({2, 2}, {0.1, -0.25, 1e-300, 3.5})},
                     {"b", param({1, 2}, {7, -0.0})}};
  std::string path = tmp_file("clsum_test_ckpt.bin");
  save_params(params, path);

  NamedParams fresh{{"w", param({2, 2}, {0, 0, 0, 0})}, {"b", param({1, 2}, {0, 0})}};
  load_params_into(fresh, path);
  CHECK(fresh[0].second->data == params[0].second->data);
  CHECK(fresh[1].second->data == params[1].second->data);

  NamedParams missing{{"w", param({2, 2}, {0, 0, 0, 0})}};
  CHECK_THROWS_WITH(load_params_into(missing, path),
                    Catch::Matchers::ContainsSubstring("extra parameter"));
  NamedParams extra{{"w", param({2, 2}, {0, 0, 0, 0})},
                    {"b", param({1, 2}, {0, 0})},
                    {"q", param({1, 1}, {0})}};
  CHECK_THROWS_WITH(load_params_into(extra, path),
                    Catch::Matchers::ContainsSubstring("missing parameter"));
  NamedParams wrong{{"w", param({4, 1}, {0, 0, 0, 0})}, {"b", param({1, 2}, {0, 0})}};
  CHECK_THROWS_WITH(load_params_into(wrong, path),
                    Catch::Matchers::ContainsSubstring("shape mismatch"));
  CHECK_THROWS_AS(load_stored_params(tmp_file("clsum_no_such_ckpt.bin")), std::runtime_error);
}
