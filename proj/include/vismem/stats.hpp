#pragma once

#include <cstddef>

namespace vismem {

// Standard error of a proportion: sqrt(p(1-p)/n).
double proportion_se(double p, std::size_t n);

struct ZTest {
  double z = 0.0;
  bool significant_at_5pct = false;  // |z| > 1.96
};

// Pooled-variance two-proportion z-test.
ZTest two_proportion_ztest(double p1, std::size_t n1, double p2, std::size_t n2);

}  // namespace vismem
