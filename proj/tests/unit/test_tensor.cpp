#include <doctest.h>

#include <cmath>
#include <random>

#include "nowcast/error.hpp"
#include "nowcast/tensor.hpp"

using namespace nowcast;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool grad = true, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Values bounded away from 0 so the relu kink never sits inside a probe.
Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

TEST_CASE("construction checks shape and finiteness") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), UsageError);
  CHECK_THROWS_AS(Tensor::from({2}, {1, NAN}), DomainError);
  CHECK_THROWS_AS(Tensor::from({0, 2}, {}), UsageError);
  const auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6);
  CHECK(Tensor::identity(3).at({1, 1}) == 1);
}

TEST_CASE("softmax examples") {
  auto s = softmax(Tensor::from({3}, {0, 0, 0}), 0).values();
  for (double v : s) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  s = softmax(Tensor::from({2}, {1000, 1000}), 0).values();
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 0.5);
  s = softmax(Tensor::from({2}, {0, std::log(3.0)}), 0).values();
  CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK_THROWS_AS(softmax(Tensor::from({2}, {0, 1}), 1), UsageError);
}

TEST_CASE("softmax slices sum to one for large magnitudes") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const auto x = random_tensor({4, 7}, rng, false, -1e3, 1e3);
    for (std::size_t axis : {0u, 1u}) {
      const auto s = softmax(x, axis);
      const std::size_t other = axis == 0 ? 7 : 4, along = axis == 0 ? 4 : 7;
      for (std::size_t o = 0; o < other; ++o) {
        double total = 0;
        for (std::size_t a = 0; a < along; ++a) {
          const double v = axis == 0 ? s.at({a, o}) : s.at({o, a});
          CHECK(v >= 0.0);
          total += v;
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("relu values and subgradient") {
  const auto r = relu(Tensor::from({3}, {-1, 0, 2})).values();
  CHECK(r[0] == 0);
  CHECK(r[1] == 0);
  CHECK(r[2] == 2);
  auto x = Tensor::from({3}, {-1, 0, 2}, true);
  backward(sum(relu(x)));
  const auto g = x.grad();
  CHECK(g[0] == 0);
  CHECK(g[1] == 0);  // subgradient 0 at 0
  CHECK(g[2] == 1);
}

TEST_CASE("gradient_check examples") {
  const auto x = Tensor::from({2}, {1, 2}, true);
  CHECK(gradient_check([](const Tensor& t) { return sum(mul(t, t)); }, x, 1e-5) < 1e-6);
  std::mt19937_64 rng(1);
  CHECK(gradient_check([](const Tensor& t) { return sum(t); }, random_tensor({5}, rng), 1e-5) < 1e-10);
  CHECK_THROWS_AS(gradient_check([](const Tensor& t) { return t; }, x, 1e-5), UsageError);
  CHECK_THROWS_AS(gradient_check([](const Tensor& t) { return sum(t); }, x, 0.0), UsageError);
  CHECK_THROWS_AS(gradient_check([](const Tensor& t) { return sum(t); }, x, 0.1), UsageError);
}

TEST_CASE("every differentiable op passes gradient_check on random inputs") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto w = random_tensor({4, 3}, rng, false);
    const auto other = random_tensor({3, 4}, rng, false);
    const auto bias = random_tensor({4}, rng, false);
    const auto kernel = random_tensor({3, 2, 3}, rng, false);
    const auto weights = random_tensor({3, 4}, rng, false);
    auto check = [&](const char* name, auto f, const Tensor& x) {
      INFO(std::string(name) << " seed " << seed);
      CHECK(gradient_check(f, x, 1e-5) < 1e-4);
    };
    // Weighted sums make every output coordinate matter.
    auto wsum = [&](const Tensor& t) { return sum(mul(t, weights)); };
    check("add", [&](const Tensor& x) { return wsum(add(x, other)); }, random_tensor({3, 4}, rng));
    check("sub", [&](const Tensor& x) { return wsum(sub(other, x)); }, random_tensor({3, 4}, rng));
    check("mul", [&](const Tensor& x) { return wsum(mul(x, x)); }, random_tensor({3, 4}, rng));
    check("scale", [&](const Tensor& x) { return wsum(scale(x, -2.5)); }, random_tensor({3, 4}, rng));
    check("relu", [&](const Tensor& x) { return wsum(relu(x)); }, away_from_zero({3, 4}, rng));
    check("sigmoid", [&](const Tensor& x) { return wsum(sigmoid(x)); }, random_tensor({3, 4}, rng, true, -4, 4));
    check("add_bias", [&](const Tensor& b) { return wsum(add_bias(other, b, 1)); }, random_tensor({4}, rng));
    check("mean", [&](const Tensor& x) { return mean(mul(x, x)); }, random_tensor({3, 4}, rng));
    check("reshape", [&](const Tensor& x) { return wsum(reshape(x, {3, 4})); }, random_tensor({2, 6}, rng));
    check("transpose", [&](const Tensor& x) { return wsum(transpose(x)); }, random_tensor({4, 3}, rng));
    const auto w3 = random_tensor({3, 3}, rng, false);
    check("matmul lhs", [&](const Tensor& x) { return sum(mul(matmul(x, w), w3)); }, random_tensor({3, 4}, rng));
    check("matmul rhs", [&](const Tensor& x) { return wsum(matmul(other, x)); }, random_tensor({4, 4}, rng));
    const auto probe3 = random_tensor({2, 3, 2}, rng, false);
    const auto fixed3 = random_tensor({2, 4, 2}, rng, false);
    check("mode_product axis 1", [&](const Tensor& x) { return sum(mul(mode_product(x, w, 1), probe3)); },
          random_tensor({2, 4, 2}, rng));
    check("mode_product weight", [&](const Tensor& m) { return sum(mul(mode_product(fixed3, m, 1), probe3)); },
          random_tensor({4, 3}, rng));
    check("softmax", [&](const Tensor& x) { return wsum(softmax(x, 1)); }, random_tensor({3, 4}, rng, true, -3, 3));
    check("softmax axis 0", [&](const Tensor& x) { return wsum(softmax(x, 0)); }, random_tensor({3, 4}, rng, true, -3, 3));
    check("log_softmax", [&](const Tensor& x) { return wsum(log_softmax(x, 1)); }, random_tensor({3, 4}, rng, true, -3, 3));
    const auto probe_t = random_tensor({2, 3, 5}, rng, false);
    const auto fixed_t = random_tensor({2, 2, 5}, rng, false);
    check("conv_time input", [&](const Tensor& x) { return sum(mul(conv_time(x, kernel), probe_t)); },
          random_tensor({2, 2, 5}, rng));
    check("conv_time kernel", [&](const Tensor& k) { return sum(mul(conv_time(fixed_t, k), probe_t)); },
          random_tensor({3, 2, 3}, rng));
    const std::vector<std::size_t> perm = {2, 0, 1};
    check("permute_axis", [&](const Tensor& x) { return sum(mul(permute_axis(x, perm, 0), other)); },
          random_tensor({3, 4}, rng));
  }
}

TEST_CASE("matmul agrees with a naive triple loop") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto a = random_tensor({8, 8}, rng, false), b = random_tensor({8, 8}, rng, false);
    const auto c = matmul(a, b);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        double ref = 0;
        for (std::size_t k = 0; k < 8; ++k) ref += a.at({i, k}) * b.at({k, j});
        CHECK(std::abs(c.at({i, j}) - ref) <= 1e-12);
      }
  }
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), UsageError);
}

TEST_CASE("mode_product contracts the named axis") {
  // a[n, c] with w[c, j]: same as matmul; along axis 0: w^T a.
  const auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto w = Tensor::from({2, 2}, {1, 1, 0, 2});
  const auto out = mode_product(a, w, 0);  // out[j, c] = sum_i a[i, c] w[i, j]
  CHECK(out.at({0, 0}) == 1);
  CHECK(out.at({1, 0}) == 1 + 8);
  CHECK(out.at({1, 2}) == 3 + 12);
  CHECK_THROWS_AS(mode_product(a, w, 1), UsageError);
}

TEST_CASE("a tensor reused twice accumulates both chain-rule contributions") {
  auto x = Tensor::from({3}, {1, -2, 3}, true);
  backward(sum(mul(x, x)));
  const auto g = x.grad();
  CHECK(g[0] == 2);
  CHECK(g[1] == -4);
  CHECK(g[2] == 6);
  // Leaf gradients accumulate until zero_grad.
  backward(sum(x));
  CHECK(x.grad()[0] == 3);
  x.zero_grad();
  CHECK(x.grad()[0] == 0);
}

TEST_CASE("tape orders inputs before outputs and visits shared nodes once") {
  auto x = Tensor::from({2}, {1, 2}, true);
  const auto y = mul(x, x);
  const auto z = add(y, y);
  const auto tape = ComputationTape::record(sum(z));
  CHECK(tape.size() == 4);  // x, y, z, sum
  backward(sum(z));
  CHECK(x.grad()[1] == 8);
}

TEST_CASE("conv_time kernel [1,0,0] shifts right with zero padding") {
  const auto x = Tensor::from({1, 1, 5}, {1, 2, 3, 4, 5});
  const auto k = Tensor::from({3, 1, 1}, {1, 0, 0});
  const auto y = conv_time(x, k).values();
  // out[t] = x[t - 1]
  const double expected[] = {0, 1, 2, 3, 4};
  for (std::size_t t = 0; t < 5; ++t) CHECK(y[t] == expected[t]);
  CHECK_THROWS_AS(conv_time(Tensor::zeros({1, 1, 5}), Tensor::zeros({2, 1, 1})), UsageError);
}

TEST_CASE("permute_axis gathers along one axis") {
  const auto a = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  const auto r = permute_axis(a, {2, 0, 1}, 0);
  CHECK(r.at({0, 0}) == 5);
  CHECK(r.at({1, 1}) == 2);
  const auto c = permute_axis(a, {1, 0}, 1);
  CHECK(c.at({2, 0}) == 6);
  CHECK_THROWS_AS(permute_axis(a, {0, 0, 1}, 0), UsageError);
  CHECK_THROWS_AS(permute_axis(a, {0, 1}, 0), UsageError);
}

TEST_CASE("no-grad guard records no history") {
  auto x = Tensor::from({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    const auto y = sum(mul(x, x));
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(sum(mul(x, x)).requires_grad());
}

TEST_CASE("non-finite results raise DomainError") {
  const auto big = Tensor::from({1}, {1e308});
  CHECK_THROWS_AS(scale(big, 10.0), DomainError);
  CHECK_THROWS_AS(add(big, big), DomainError);
}
