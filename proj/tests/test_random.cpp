#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "corrgcv/random.hpp"

using namespace corrgcv;

TEST(Philox, KnownAnswerZero) {
  const auto r = Philox4x32::block({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(r, (Philox4x32::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
}

TEST(Philox, KnownAnswerOnes) {
  const auto r = Philox4x32::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(r, (Philox4x32::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, KnownAnswerPi) {
  const auto r = Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(r, (Philox4x32::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(RandomStreamTest, UniformsInOpenInterval) {
  const RandomStream rs{42, 7};
  double mean = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rs.uniform(static_cast<std::uint64_t>(i));
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    mean += u;
  }
  EXPECT_NEAR(mean / n, 0.5, 5.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(RandomStreamTest, NormalMoments) {
  const RandomStream rs{3, 1};
  const std::uint64_t n = 200000;
  std::vector<double> z(n);
  rs.fill_normal(z.data(), n);
  double m1 = 0.0, m2 = 0.0, m4 = 0.0;
  for (double v : z) {
    m1 += v;
    m2 += v * v;
    m4 += v * v * v * v;
  }
  m1 /= n;
  m2 /= n;
  m4 /= n;
  EXPECT_NEAR(m1, 0.0, 5.0 / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(m2, 1.0, 5.0 * std::sqrt(2.0 / n));
  EXPECT_NEAR(m4, 3.0, 5.0 * std::sqrt(96.0 / n));
}

TEST(RandomStreamTest, OrderIndependentAddressing) {
  const RandomStream rs{11, 2};
  std::vector<double> all(101);
  rs.fill_normal(all.data(), all.size());
  for (std::uint64_t off : {0u, 1u, 17u, 50u}) {
    std::vector<double> part(30);
    rs.fill_normal(part.data(), part.size(), off);
    for (std::size_t j = 0; j < part.size(); ++j) EXPECT_EQ(part[j], all[off + j]) << off << " " << j;
  }
  for (std::uint64_t i = 100; i-- > 0;) EXPECT_EQ(rs.normal(i), all[i]);
}

TEST(RandomStreamTest, StreamsAndSeedsDiffer) {
  const RandomStream a{1, 0}, b{1, 1}, c{2, 0};
  EXPECT_NE(a.normal(0), b.normal(0));
  EXPECT_NE(a.normal(0), c.normal(0));
  EXPECT_EQ(a.substream(3).stream, 3u);
  EXPECT_EQ(b.substream(3).stream, 19u);
  EXPECT_EQ(a.substream(3).seed, 1u);
}
