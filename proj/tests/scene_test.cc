#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "kwmlp/scene.h"
#include "test_util.h"

namespace kwmlp::scene {

void PrintTo(Algorithm a, std::ostream* os) { *os << to_string(a); }

namespace {

using testing::random_matrix;

Matrix column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Matrix(n, 1, std::move(v));
}

Matrix ramp(int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = i;
  return column(v);
}

TEST(Interp, IdentityWhenSizesMatch) {
  std::mt19937_64 rng(1);
  for (int n : {1, 2, 7, 98}) {
    const Matrix x = random_matrix(n, 5, rng);
    EXPECT_EQ(linear_interp_time(x, n), x);
  }
}

TEST(Interp, ConstantsPreserved) {
  const Matrix x(37, 3, 0.3);
  for (int m : {1, 5, 16, 37, 100}) {
    const Matrix y = linear_interp_time(x, m);
    ASSERT_EQ(y.rows(), static_cast<std::size_t>(m));
    for (double v : y.flat()) EXPECT_EQ(v, 0.3);
  }
}

TEST(Interp, HandExample) {
  const Matrix y = linear_interp_time(column({0, 1, 2, 3}), 2);
  EXPECT_EQ(y, column({0.5, 2.5}));
  // Upsampling clamps at the edges: c = -0.25 -> 0, c = 1.25 -> 1.
  EXPECT_EQ(linear_interp_time(column({0, 1}), 4), column({0, 0.25, 0.75, 1}));
}

TEST(Interp, RejectsBadSizes) {
  EXPECT_THROW(linear_interp_time(Matrix(0, 3), 2), std::invalid_argument);
  EXPECT_THROW(linear_interp_time(Matrix(3, 3), 0), std::invalid_argument);
}

TEST(Steps, Table) {
  EXPECT_EQ(num_interp_steps(100, 16), 3);
  EXPECT_EQ(num_interp_steps(16, 16), 0);
  EXPECT_EQ(num_interp_steps(490, 16), 5);
  EXPECT_EQ(num_interp_steps(98, 16), 3);
  EXPECT_EQ(num_interp_steps(1600, 16), 7);
  EXPECT_EQ(num_interp_steps(8, 16), 0);
  EXPECT_EQ(num_interp_steps(17, 16), 1);
  EXPECT_EQ(num_interp_steps(32, 16), 1);
  EXPECT_EQ(num_interp_steps(33, 16), 2);
}

TEST(Steps, MatchesLog2Formula) {
  for (int n = 1; n <= 5000; ++n) {
    const int expect = n <= 16 ? 0 : static_cast<int>(std::ceil(std::log2(n / 16.0) - 1e-12));
    ASSERT_EQ(num_interp_steps(n, 16), expect) << n;
  }
}

TEST(Schedule, CeilHalvingEndsAtTarget) {
  EXPECT_EQ(iterative_schedule(98, 16), (std::vector<int>{98, 49, 25, 16}));
  EXPECT_EQ(iterative_schedule(16, 16), (std::vector<int>{16}));
  EXPECT_EQ(iterative_schedule(8, 16), (std::vector<int>{8, 16}));
  for (int n = 17; n <= 3000; ++n) {
    const auto s = iterative_schedule(n, 16);
    ASSERT_EQ(static_cast<int>(s.size()) - 1, num_interp_steps(n, 16)) << n;
    ASSERT_EQ(s.back(), 16);
    for (std::size_t i = 1; i < s.size(); ++i) ASSERT_GE(s[i], 16);
  }
}

TEST(Iterative, PowerOfTwoIsExactHalvings) {
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(128, 4, rng);
  Matrix by_hand = x;
  for (int n = 64; n >= 16; n /= 2) {
    Matrix half(n, 4);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < 4; ++c) half(r, c) = 0.5 * (by_hand(2 * r, c) + by_hand(2 * r + 1, c));
    by_hand = half;
  }
  const Matrix got = iterative_downsample(x, 16);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.flat()[i], by_hand.flat()[i], 1e-15);
}

TEST(Iterative, FlattenOnlyAtTarget) {
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(16, 64, rng);
  EXPECT_EQ(scene_iterative(x), x.values());
  EXPECT_EQ(scene_single(x), x.values());
  EXPECT_EQ(scene_mean(x), x.values());
}

TEST(Single, EqualsIterativeForOneHalving) {
  const Matrix x = ramp(32);
  EXPECT_EQ(scene_single(x), scene_iterative(x));
}

TEST(Single, RampFirstElement) {
  const auto v = scene_single(ramp(98));
  ASSERT_EQ(v.size(), 16u);
  EXPECT_NEAR(v[0], 2.5625, 1e-12);
}

TEST(Mean, PairwiseMeans) {
  const auto v = scene_mean(ramp(32));
  ASSERT_EQ(v.size(), 16u);
  for (int g = 0; g < 16; ++g) EXPECT_EQ(v[g], 2 * g + 0.5);
}

TEST(Mean, GroupSizesFor98) {
  // Mean of a ramp over [a, b) is (a + b - 1) / 2, so group bounds can be read back.
  const auto v = scene_mean(ramp(98));
  int total = 0;
  for (int g = 0; g < 16; ++g) {
    const int lo = g * 98 / 16, hi = (g + 1) * 98 / 16;
    EXPECT_TRUE(hi - lo == 6 || hi - lo == 7);
    EXPECT_EQ(v[g], (lo + hi - 1) / 2.0);
    total += hi - lo;
  }
  EXPECT_EQ(total, 98);
}

TEST(Mean, CannotUpsample) {
  EXPECT_THROW(scene_mean(Matrix(15, 64)), SceneError);
}

TEST(Algorithms, NameRoundTrip) {
  for (auto a : {Algorithm::kIterative, Algorithm::kSingle, Algorithm::kMean})
    EXPECT_EQ(parse_algorithm(to_string(a)), a);
  EXPECT_THROW(parse_algorithm("median"), std::invalid_argument);
}

class SceneProperties : public ::testing::TestWithParam<Algorithm> {};

TEST_P(SceneProperties, LengthConstantsPermutationAndBounds) {
  const SceneConfig cfg{16, GetParam()};
  std::mt19937_64 rng(4);
  for (int n : {16, 17, 98, 196, 490, 1000}) {
    const Matrix x = random_matrix(n, 64, rng);
    const auto v = scene_embedding(x, cfg);
    ASSERT_EQ(v.size(), 1024u);

    for (double c : scene_embedding(Matrix(n, 64, -0.7), cfg)) EXPECT_EQ(c, -0.7);

    std::vector<int> perm(64);
    for (int i = 0; i < 64; ++i) perm[i] = (i * 17 + 5) % 64;
    Matrix px(n, 64);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < 64; ++c) px(r, c) = x(r, perm[c]);
    const auto pv = scene_embedding(px, cfg);
    for (int t = 0; t < 16; ++t)
      for (int c = 0; c < 64; ++c) ASSERT_EQ(pv[t * 64 + c], v[t * 64 + perm[c]]);

    for (int c = 0; c < 64; ++c) {
      double lo = 1e300, hi = -1e300;
      for (int r = 0; r < n; ++r) {
        lo = std::min(lo, x(r, c));
        hi = std::max(hi, x(r, c));
      }
      for (int t = 0; t < 16; ++t) {
        ASSERT_GE(v[t * 64 + c], lo);
        ASSERT_LE(v[t * 64 + c], hi);
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(All, SceneProperties,
                         ::testing::Values(Algorithm::kIterative, Algorithm::kSingle,
                                           Algorithm::kMean),
                         [](const auto& info) { return to_string(info.param); });

TEST(Upsampling, SubTargetInputsInterpolateOnce) {
  std::mt19937_64 rng(5);
  const Matrix x = random_matrix(8, 3, rng);
  const auto v = scene_iterative(x);
  EXPECT_EQ(v, linear_interp_time(x, 16).values());
  EXPECT_EQ(scene_single(x), v);
}

}  // namespace
}  // namespace kwmlp::scene
