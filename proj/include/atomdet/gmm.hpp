#pragma once

#include <vector>

#include <json.hpp>

namespace atomdet {

/// Two-component 1-D Gaussian mixture (1 - phi) N(mu0, sigma0) + phi N(mu1, sigma1);
/// mode 1 (the higher mean) is the occupied mode.
struct GmmFit {
  double phi = 0.5;
  double mu0 = 0.0;
  double sigma0 = 1.0;
  double mu1 = 1.0;
  double sigma1 = 1.0;
  double log_likelihood = 0.0;
  int iterations = 0;
  std::vector<double> log_likelihood_trace;

  void validate() const;

  /// log[phi N1(x)] - log[(1 - phi) N0(x)]
  double log_odds(double x) const;
  /// Unclamped responsibility of the occupied mode.
  double responsibility(double x) const;
};

void to_json(nlohmann::json& j, const GmmFit& g);
void from_json(const nlohmann::json& j, GmmFit& g);

}  // namespace atomdet
