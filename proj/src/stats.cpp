#include "vismem/stats.hpp"

#include <cmath>

#include "vismem/error.hpp"

namespace vismem {

namespace {

void check_proportion(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::usage, "proportion must lie in [0, 1]");
}

}  // namespace

double proportion_se(double p, std::size_t n) {
  check_proportion(p);
  if (n == 0) throw Error(Errc::usage, "sample size must be >= 1");
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

ZTest two_proportion_ztest(double p1, std::size_t n1, double p2, std::size_t n2) {
  check_proportion(p1);
  check_proportion(p2);
  if (n1 == 0 || n2 == 0) throw Error(Errc::usage, "z-test needs nonzero sample sizes");
  const double a = static_cast<double>(n1);
  const double b = static_cast<double>(n2);
  const double pooled = (p1 * a + p2 * b) / (a + b);
  const double se = std::sqrt(pooled * (1.0 - pooled) * (1.0 / a + 1.0 / b));
  ZTest out;
  // A pooled proportion of 0 or 1 forces p1 == p2.
  out.z = se > 0.0 ? (p1 - p2) / se : 0.0;
  out.significant_at_5pct = std::abs(out.z) > 1.96;
  return out;
}

}  // namespace vismem
