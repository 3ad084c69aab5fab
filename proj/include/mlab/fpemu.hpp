#pragma once

// Software emulation of reduced-precision accumulation. Rounds into a
// reduced significand (round-to-nearest-even) after every accumulation
// step, and provides the two reduction orders whose disagreement under
// rounding is the mismatch source: a sequential left fold and a balanced
// pairwise tree. The exponent range is left untouched, so behaviour is
// reproducible on any IEEE-754 double platform.

#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace mlab::fpemu {

enum class Precision { exact, bf16_like, fp16_like };
enum class ReduceOrder { sequential, pairwise_tree };

// Significand width in bits, implicit leading bit included.
constexpr int significand_bits(Precision p) {
  switch (p) {
    case Precision::bf16_like: return 8;
    case Precision::fp16_like: return 11;
    default: return 53;
  }
}

// Round x to `bits` significand bits, ties to even. Non-finite values and
// zero pass through; the exponent is not clamped.
inline double round_significand(double x, int bits) {
  if (bits >= 53 || x == 0.0 || !std::isfinite(x)) return x;
  std::uint64_t u = std::bit_cast<std::uint64_t>(x);
  const int shift = 53 - bits;  // dropped low mantissa bits
  const std::uint64_t drop_mask = (std::uint64_t{1} << shift) - 1;
  const std::uint64_t rem = u & drop_mask;
  const std::uint64_t half = std::uint64_t{1} << (shift - 1);
  u &= ~drop_mask;
  if (rem > half || (rem == half && ((u >> shift) & 1))) {
    u += std::uint64_t{1} << shift;  // carry may bump the exponent; that is correct RNE
  }
  return std::bit_cast<double>(u);
}

struct Rounder {
  Precision precision = Precision::exact;
  double operator()(double x) const {
    return precision == Precision::exact
               ? x
               : round_significand(x, significand_bits(precision));
  }
};

namespace detail {
inline double reduce_tree(std::span<const double> v, const Rounder& r) {
  if (v.size() == 1) return r(v[0]);
  const std::size_t mid = v.size() / 2;
  return r(reduce_tree(v.first(mid), r) + reduce_tree(v.subspan(mid), r));
}
}  // namespace detail

// Sum of v with the given order; inputs and every partial sum are rounded.
inline double reduce_sum(std::span<const double> v, ReduceOrder order, Rounder r) {
  if (v.empty()) return 0.0;
  if (order == ReduceOrder::pairwise_tree) return detail::reduce_tree(v, r);
  double acc = r(v[0]);
  for (std::size_t i = 1; i < v.size(); ++i) acc = r(acc + r(v[i]));
  return acc;
}

// Dot product: each input and each product is rounded, then the products
// are reduced with the requested order.
inline double dot(std::span<const double> a, std::span<const double> b,
                  ReduceOrder order, Rounder r) {
  const std::size_t n = a.size() < b.size() ? a.size() : b.size();
  if (n == 0) return 0.0;
  if (order == ReduceOrder::pairwise_tree) {
    // materialize products, then tree-reduce
    double buf[64];
    if (n <= 64) {
      for (std::size_t i = 0; i < n; ++i) buf[i] = r(r(a[i]) * r(b[i]));
      return detail::reduce_tree({buf, n}, r);
    }
    std::vector<double> prods(n);
    for (std::size_t i = 0; i < n; ++i) prods[i] = r(r(a[i]) * r(b[i]));
    return detail::reduce_tree(prods, r);
  }
  double acc = r(r(a[0]) * r(b[0]));
  for (std::size_t i = 1; i < n; ++i) acc = r(acc + r(r(a[i]) * r(b[i])));
  return acc;
}

}  // namespace mlab::fpemu
