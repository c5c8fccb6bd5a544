#include "atomdet/detect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace atomdet {

const char* to_string(ThresholdMode m) { return m == ThresholdMode::oracle ? "oracle" : "gmm"; }

namespace {

void score(DetectionResult& out, std::span<const double> x_hat, const GroundTruth& truth) {
  if (truth.occupied.size() != x_hat.size()) {
    throw std::invalid_argument("ground truth length does not match the estimates");
  }
  out.fp = 0;
  out.fn = 0;
  for (std::size_t i = 0; i < x_hat.size(); ++i) {
    if (out.labels[i] && !truth.occupied[i]) ++out.fp;
    if (!out.labels[i] && truth.occupied[i]) ++out.fn;
  }
  out.der = x_hat.empty() ? 0.0 : static_cast<double>(out.fp + out.fn) / static_cast<double>(x_hat.size());
  out.scored = true;
}

std::vector<bool> label(std::span<const double> x_hat, double threshold) {
  std::vector<bool> labels(x_hat.size());
  for (std::size_t i = 0; i < x_hat.size(); ++i) labels[i] = x_hat[i] >= threshold;
  return labels;
}

}  // namespace

DetectionResult oracle_threshold(std::span<const double> x_hat, const GroundTruth& truth) {
  const std::size_t n = x_hat.size();
  if (truth.occupied.size() != n) throw std::invalid_argument("ground truth length does not match the estimates");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x_hat[a] != x_hat[b] ? x_hat[a] < x_hat[b] : a < b;
  });
  std::vector<double> sorted(n);
  std::vector<int> occupied_below(n + 1, 0);
  for (std::size_t j = 0; j < n; ++j) {
    sorted[j] = x_hat[order[j]];
    occupied_below[j + 1] = occupied_below[j] + (truth.occupied[order[j]] ? 1 : 0);
  }
  const int n_occupied = occupied_below[n];

  constexpr double kInf = std::numeric_limits<double>::infinity();
  double best_threshold = -kInf;
  long best_errors = std::numeric_limits<long>::max();
  for (std::size_t c = 0; c <= n; ++c) {
    double t;
    if (c == 0) {
      t = -kInf;
    } else if (c == n) {
      t = kInf;
    } else {
      t = 0.5 * (sorted[c - 1] + sorted[c]);
    }
    // Everything strictly below t is labelled empty.
    const std::size_t below = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
    const long fn = occupied_below[below];
    const long fp = static_cast<long>(n - below) - (n_occupied - occupied_below[below]);
    if (fn + fp < best_errors) {
      best_errors = fn + fp;
      best_threshold = t;
    }
  }

  DetectionResult out;
  out.mode = ThresholdMode::oracle;
  out.threshold = best_threshold;
  out.labels = label(x_hat, best_threshold);
  score(out, x_hat, truth);
  return out;
}

double gmm_threshold(const GmmFit& gmm) {
  gmm.validate();
  const double lo0 = gmm.mu0;
  const double hi0 = gmm.mu1;

  // log_odds(x) is the quadratic a x^2 + b x + c.
  const double v0 = gmm.sigma0 * gmm.sigma0;
  const double v1 = gmm.sigma1 * gmm.sigma1;
  const double a = 0.5 / v0 - 0.5 / v1;
  const double b = gmm.mu1 / v1 - gmm.mu0 / v0;
  std::vector<double> roots;
  if (std::abs(a) * (hi0 - lo0) <= 1e-14 * std::abs(b)) {
    const double c = gmm.log_odds(0.0);
    roots.push_back(-c / b);
  } else {
    const double c = gmm.log_odds(0.0);
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      const double q = -0.5 * (b + std::copysign(sq, b));
      roots.push_back(q / a);
      if (q != 0.0) roots.push_back(c / q);
    }
  }
  std::vector<double> inside;
  for (double r : roots) {
    if (r > lo0 && r < hi0) inside.push_back(r);
  }
  if (inside.empty()) {
    throw std::runtime_error("mixture modes overlap too much: no equal-likelihood point between the means");
  }
  std::sort(inside.begin(), inside.end());
  double lo = lo0, hi = hi0;
  if (inside.size() == 2) {
    const double mid = 0.5 * (lo0 + hi0);
    const double split = 0.5 * (inside[0] + inside[1]);
    if (std::abs(inside[0] - mid) <= std::abs(inside[1] - mid)) {
      hi = split;
    } else {
      lo = split;
    }
  }

  double f_lo = gmm.log_odds(lo);
  const double f_hi = gmm.log_odds(hi);
  if (f_lo == 0.0) return lo;
  if (f_hi == 0.0) return hi;
  if ((f_lo < 0.0) == (f_hi < 0.0)) {
    throw std::runtime_error("equal-likelihood point could not be bracketed between the mixture means");
  }
  const double scale = std::max({std::abs(lo0), std::abs(hi0), hi0 - lo0});
  for (int it = 0; it < 200 && hi - lo > 1e-12 * scale; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f_mid = gmm.log_odds(mid);
    if (f_mid == 0.0) return mid;
    if ((f_mid < 0.0) == (f_lo < 0.0)) {
      lo = mid;
      f_lo = f_mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

DetectionResult classify_and_score(std::span<const double> x_hat, double threshold,
                                   const GroundTruth* truth, ThresholdMode mode) {
  if (!std::isfinite(threshold)) throw std::invalid_argument("detection threshold must be finite");
  DetectionResult out;
  out.mode = mode;
  out.threshold = threshold;
  out.labels = label(x_hat, threshold);
  if (truth) score(out, x_hat, *truth);
  return out;
}

}  // namespace atomdet
