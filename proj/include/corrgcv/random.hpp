#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace corrgcv {

// Philox4x32-10 counter-based generator.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr std::uint32_t M0 = 0xD2511F53u;
  static constexpr std::uint32_t M1 = 0xCD9E8D57u;
  static constexpr std::uint32_t W0 = 0x9E3779B9u;
  static constexpr std::uint32_t W1 = 0xBB67AE85u;

  static Counter round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }

  static Counter block(Counter c, Key k) {
    for (int r = 0; r < 10; ++r) {
      if (r > 0) {
        k[0] += W0;
        k[1] += W1;
      }
      c = round(c, k);
    }
    return c;
  }
};

// Random numbers addressed by (seed, stream, index); no hidden state.
struct RandomStream {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  Philox4x32::Counter block(std::uint64_t index) const {
    const Philox4x32::Counter c{static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                                static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    const Philox4x32::Key k{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    return Philox4x32::block(c, k);
  }

  // Two uniforms in (0,1) with 53-bit resolution from block `index`.
  std::array<double, 2> uniform_pair(std::uint64_t index) const {
    const auto b = block(index);
    const std::uint64_t a = ((static_cast<std::uint64_t>(b[0]) << 32) | b[1]) >> 11;
    const std::uint64_t c = ((static_cast<std::uint64_t>(b[2]) << 32) | b[3]) >> 11;
    constexpr double scale = 1.0 / 9007199254740992.0;  // 2^-53
    return {(static_cast<double>(a) + 0.5) * scale, (static_cast<double>(c) + 0.5) * scale};
  }

  double uniform(std::uint64_t i) const { return uniform_pair(i / 2)[i % 2]; }

  // Two standard normals (Box-Muller) from block `index`.
  std::array<double, 2> normal_pair(std::uint64_t index) const {
    const auto u = uniform_pair(index);
    const double r = std::sqrt(-2.0 * std::log(u[0]));
    const double th = 6.283185307179586476925 * u[1];
    return {r * std::cos(th), r * std::sin(th)};
  }

  double normal(std::uint64_t i) const { return normal_pair(i / 2)[i % 2]; }

  // Normals i = offset .. offset+n-1 written to out.
  void fill_normal(double* out, std::uint64_t n, std::uint64_t offset = 0) const {
    std::uint64_t i = offset;
    std::uint64_t j = 0;
    if (i % 2 == 1 && j < n) out[j++] = normal(i++);
    for (; j + 1 < n; j += 2, i += 2) {
      const auto p = normal_pair(i / 2);
      out[j] = p[0];
      out[j + 1] = p[1];
    }
    if (j < n) out[j] = normal(i);
  }

  RandomStream substream(std::uint64_t sub) const { return {seed, stream * 16 + sub}; }
};

}  // end of namespace corrgcv ------------------------------------------------
