#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "cmir/environments.hpp"
#include "gradcheck.hpp"

using namespace cmir;
using cmir::testing::random_tensor;

namespace {

bool bit_identical(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) && std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(Schedule, LinearCoefficients) {
  EXPECT_EQ(make_schedule(4, 0.1).coefficients, (std::vector<double>{0.1 * 1, 0.1 * 2, 0.1 * 3, 0.1 * 4}));
  EXPECT_EQ(make_schedule(1, 0.0).coefficients, (std::vector<double>{0.0}));
  EXPECT_EQ(make_schedule(5, 1.0).coefficients, (std::vector<double>{1, 2, 3, 4, 5}));
  const auto s = make_schedule(4, 0.1).coefficients;
  EXPECT_NEAR(s[2], 0.3, 1e-15);
}

TEST(Schedule, StrictlyIncreasingForPositiveAlpha) {
  const auto s = make_schedule(10, 0.37).coefficients;
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s[i - 1], s[i]);
}

TEST(Schedule, Errors) {
  EXPECT_THROW(make_schedule(0, 0.1), ConfigError);
  EXPECT_THROW(make_schedule(2, -0.1), ConfigError);
}

TEST(Pairs, SmallCases) {
  EXPECT_EQ(pair_indices(1), (std::vector<VariantPair>{{0, 1}}));
  EXPECT_EQ(pair_indices(2), (std::vector<VariantPair>{{0, 1}, {0, 2}, {1, 2}}));
  EXPECT_EQ(pair_indices(4).size(), 10u);
  EXPECT_THROW(pair_indices(0), ConfigError);
}

TEST(Pairs, CountFormulaAndUniqueness) {
  for (std::size_t k = 1; k <= 10; ++k) {
    const auto p = pair_indices(k);
    EXPECT_EQ(p.size(), k * (k + 1) / 2);
    std::set<VariantPair> seen(p.begin(), p.end());
    EXPECT_EQ(seen.size(), p.size());
    for (auto [i, j] : p) {
      EXPECT_LT(i, j);
      EXPECT_LE(j, k);
    }
  }
}

TEST(Perturb, VariantZeroIsTheInput) {
  const Tensor x = random_tensor(5, 3, 1);
  const EnvironmentBatch b = perturb(x, make_schedule(3, 0.2), 42);
  ASSERT_EQ(b.size(), 4u);
  EXPECT_TRUE(bit_identical(b.variants[0], x));
  EXPECT_FALSE(bit_identical(b.variants[1], x));
}

TEST(Perturb, ZeroAlphaLeavesEveryVariantUnchanged) {
  const Tensor x = random_tensor(4, 4, 2);
  for (const Tensor& v : perturb(x, make_schedule(3, 0.0), 7).variants) EXPECT_TRUE(bit_identical(v, x));
}

TEST(Perturb, DeterministicForFixedSeed) {
  const Tensor x = random_tensor(4, 4, 3);
  const auto a = perturb(x, make_schedule(2, 0.5), 11);
  const auto b = perturb(x, make_schedule(2, 0.5), 11);
  const auto c = perturb(x, make_schedule(2, 0.5), 12);
  for (std::size_t e = 0; e < a.size(); ++e) EXPECT_TRUE(bit_identical(a.variants[e], b.variants[e]));
  EXPECT_FALSE(bit_identical(a.variants[1], c.variants[1]));
}

TEST(Perturb, NoiseDoesNotDependOnOtherEnvironments) {
  const Tensor x = random_tensor(3, 3, 4);
  const auto two = perturb(x, make_schedule(2, 0.5), 5);
  const auto four = perturb(x, make_schedule(4, 0.5), 5);
  EXPECT_TRUE(bit_identical(two.variants[2], four.variants[2]));
}

TEST(Perturb, MonteCarloNoiseScale) {
  // 10^5 elements in environment 1 with coefficient 0.3.
  const Tensor x = random_tensor(1000, 100, 5);
  const auto b = perturb(x, make_schedule(1, 0.3), 99);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = b.variants[1].values()[i] - x.values()[i];
    sum += d;
    sq += d * d;
  }
  const double n = static_cast<double>(x.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(sd, 0.3, 0.01);
}

TEST(Perturb, VariantsStayDifferentiable) {
  Tensor x = random_tensor(2, 2, 6);
  x.requires_grad(true);
  Tape tape;
  const auto b = perturb(tape, x, make_schedule(2, 0.5), 1);
  tape.backward(sum_all(tape, b.variants[2]));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(AssignEnvironments, RangeAndDeterminism) {
  const auto a = assign_environments(500, 4, 3);
  EXPECT_EQ(a, assign_environments(500, 4, 3));
  std::set<std::size_t> seen(a.begin(), a.end());
  EXPECT_EQ(seen, (std::set<std::size_t>{1, 2, 3, 4}));
  EXPECT_THROW(assign_environments(3, 0, 1), ConfigError);
}
