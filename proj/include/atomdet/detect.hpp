#pragma once

#include <span>
#include <vector>

#include "atomdet/gmm.hpp"
#include "atomdet/model.hpp"

namespace atomdet {

enum class ThresholdMode { oracle, gmm };

const char* to_string(ThresholdMode m);

/// Labels use the inclusive rule x_hat >= threshold -> occupied. Counts and
/// DER are only meaningful when `scored` is set.
struct DetectionResult {
  double threshold = 0.0;
  std::vector<bool> labels;
  int fp = 0;
  int fn = 0;
  double der = 0.0;
  ThresholdMode mode = ThresholdMode::gmm;
  bool scored = false;
};

/// DER-minimizing uniform threshold over -inf, midpoints of consecutive sorted
/// estimates, and +inf; ties go to the smallest threshold.
DetectionResult oracle_threshold(std::span<const double> x_hat, const GroundTruth& truth);

/// Equal-likelihood point between the two modes. Throws when no crossing lies
/// strictly between mu0 and mu1.
double gmm_threshold(const GmmFit& gmm);

DetectionResult classify_and_score(std::span<const double> x_hat, double threshold,
                                   const GroundTruth* truth, ThresholdMode mode = ThresholdMode::gmm);

}  // namespace atomdet
