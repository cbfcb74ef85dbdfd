#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace aap {

// Upper tail of the standard normal, P(Z > z).
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

struct ProportionTest {
  double z = 0.0;           // sign: positive when p1 > p2
  double p_two_sided = 1.0;
  double p_one_sided = 1.0;  // tests p1 > p2
  bool defined = false;
};

// Pooled two-proportion z-test on counts x1/n1 vs x2/n2.
inline ProportionTest two_proportion_z(std::int64_t x1, std::int64_t n1,
                                       std::int64_t x2, std::int64_t n2) {
  ProportionTest t;
  if (n1 <= 0 || n2 <= 0) return t;
  t.defined = true;
  const double p1 = static_cast<double>(x1) / static_cast<double>(n1);
  const double p2 = static_cast<double>(x2) / static_cast<double>(n2);
  const double pooled = static_cast<double>(x1 + x2) / static_cast<double>(n1 + n2);
  const double se2 = pooled * (1.0 - pooled) *
                     (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2));
  if (se2 <= 0.0) {
    // Pooled rate is 0 or 1: identical proportions are indistinguishable,
    // anything else is a certain difference.
    if (p1 == p2) {
      t.z = 0.0;
      t.p_two_sided = 1.0;
      t.p_one_sided = 1.0;
    } else {
      t.z = p1 > p2 ? std::numeric_limits<double>::infinity()
                    : -std::numeric_limits<double>::infinity();
      t.p_two_sided = 0.0;
      t.p_one_sided = p1 > p2 ? 0.0 : 1.0;
    }
    return t;
  }
  t.z = (p1 - p2) / std::sqrt(se2);
  t.p_two_sided = 2.0 * normal_sf(std::fabs(t.z));
  t.p_one_sided = normal_sf(t.z);
  return t;
}

}  // namespace aap
