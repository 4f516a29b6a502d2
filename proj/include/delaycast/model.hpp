#pragma once

// The probability model: negative binomial observation layer over a
// log-linear mean with temporal and delay random walks, optional spatial
// blocks, and vague hyperpriors.
//
// Variant table (spatial effects on top of the shared alpha_t, beta_d):
//   BASE              none (S = 1)
//   M0                delta_ind
//   M1                delta_ind + delta_iar
//   M2                delta_ind + alpha_ts
//   M3                delta_ind + delta_iar + alpha_ts
//   M4                delta_ind + beta_ds
//   M5                delta_ind + delta_iar + beta_ds
//   M6                delta_ind + alpha_ts + beta_ds
//   M7                delta_ind + delta_iar + alpha_ts + beta_ds

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "delaycast/spatial.hpp"
#include "delaycast/triangle.hpp"

namespace delaycast {

enum class Variant { base, m0, m1, m2, m3, m4, m5, m6, m7 };

inline const char* variant_name(Variant v) {
  static const char* names[] = {"BASE", "M0", "M1", "M2", "M3", "M4", "M5", "M6", "M7"};
  return names[static_cast<int>(v)];
}

inline Variant parse_variant(const std::string& s) {
  for (int i = 0; i <= 8; ++i) {
    auto v = static_cast<Variant>(i);
    if (s == variant_name(v)) return v;
  }
  // Lowercase spellings are accepted for CLI convenience.
  if (s == "base") return Variant::base;
  for (int k = 0; k <= 7; ++k)
    if (s == "m" + std::to_string(k)) return static_cast<Variant>(k + 1);
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

struct ModelSpec {
  Variant variant = Variant::base;
  int T = 0;
  int D = 0;
  int S = 1;
  int covariate_count = 0;
  double anchor_precision = 0.001;  // precision pinning the first RW element
  double hyper_shape = 0.001;       // Gamma hyperprior on precisions and phi
  double hyper_rate = 0.001;
  double normal_prior_variance = 1000.0;  // diffuse prior for mu and gamma

  bool spatial() const { return variant != Variant::base; }
  bool has_delta_ind() const { return spatial(); }
  bool has_delta_iar() const {
    return spatial() && ((static_cast<int>(variant) - 1) & 1) != 0;
  }
  bool has_alpha_ts() const {
    return spatial() && ((static_cast<int>(variant) - 1) & 2) != 0;
  }
  bool has_beta_ds() const {
    return spatial() && ((static_cast<int>(variant) - 1) & 4) != 0;
  }
};

inline void validate_spec(const ModelSpec& spec) {
  if (spec.T < 1 || spec.D < 1) throw std::invalid_argument("model needs T >= 1 and D >= 1");
  if (spec.S < 1) throw std::invalid_argument("model needs S >= 1");
  if (spec.variant == Variant::base && spec.S != 1)
    throw std::invalid_argument("the base model is non-spatial and requires S = 1");
  if (spec.covariate_count < 0) throw std::invalid_argument("negative covariate count");
  if (!(spec.anchor_precision > 0.0))
    throw std::invalid_argument("anchor precision must be positive");
  if (!(spec.hyper_shape > 0.0) || !(spec.hyper_rate > 0.0))
    throw std::invalid_argument("hyperprior shape and rate must be positive");
  if (!(spec.normal_prior_variance > 0.0))
    throw std::invalid_argument("normal prior variance must be positive");
}

// All blocks are allocated at full size regardless of the variant; inactive
// blocks stay identically zero and contribute nothing anywhere.
struct ParameterState {
  double mu = 0.0;
  std::vector<double> gamma;      // covariate coefficients, length p
  std::vector<double> alpha;      // length T
  std::vector<double> beta;       // length D+1
  std::vector<double> alpha_ts;   // T x S, row-major t*S + s
  std::vector<double> beta_ds;    // (D+1) x S
  std::vector<double> delta_ind;  // length S
  std::vector<double> delta_iar;  // length S, sums to zero per component
  double tau_alpha = 1.0;
  double tau_beta = 1.0;
  double tau_alpha_ts = 1.0;
  double tau_beta_ds = 1.0;
  double tau_delta_ind = 1.0;
  double tau_delta_iar = 1.0;
  double phi = 1.0;
};

inline ParameterState init_state(const ModelSpec& spec) {
  validate_spec(spec);
  ParameterState st;
  st.gamma.assign(spec.covariate_count, 0.0);
  st.alpha.assign(spec.T, 0.0);
  st.beta.assign(spec.D + 1, 0.0);
  st.alpha_ts.assign(static_cast<std::size_t>(spec.T) * spec.S, 0.0);
  st.beta_ds.assign(static_cast<std::size_t>(spec.D + 1) * spec.S, 0.0);
  st.delta_ind.assign(spec.S, 0.0);
  st.delta_iar.assign(spec.S, 0.0);
  return st;
}

inline void check_state(const ParameterState& st, const ModelSpec& spec) {
  if (static_cast<int>(st.gamma.size()) != spec.covariate_count ||
      static_cast<int>(st.alpha.size()) != spec.T ||
      static_cast<int>(st.beta.size()) != spec.D + 1 ||
      st.alpha_ts.size() != static_cast<std::size_t>(spec.T) * spec.S ||
      st.beta_ds.size() != static_cast<std::size_t>(spec.D + 1) * spec.S ||
      static_cast<int>(st.delta_ind.size()) != spec.S ||
      static_cast<int>(st.delta_iar.size()) != spec.S)
    throw std::invalid_argument("parameter state does not match the model dimensions");
  for (double tau : {st.tau_alpha, st.tau_beta, st.tau_alpha_ts, st.tau_beta_ds,
                     st.tau_delta_ind, st.tau_delta_iar})
    if (!(tau > 0.0)) throw std::invalid_argument("precisions must be positive");
  if (!(st.phi > 0.0)) throw std::invalid_argument("phi must be positive");
}

struct CovariateArray {
  int T = 0;
  int D = 0;
  int S = 1;
  int p = 0;
  std::vector<double> X;  // ((t*(D+1)+d)*S + s)*p + j

  double at(int t, int d, int s, int j) const {
    return X[(static_cast<std::size_t>((t * (D + 1) + d)) * S + s) * p + j];
  }
};

inline void check_covariates(const CovariateArray& X, const ModelSpec& spec) {
  if (X.T != spec.T || X.D != spec.D || X.S != spec.S || X.p != spec.covariate_count)
    throw std::invalid_argument("covariate array does not match the model dimensions");
  if (X.X.size() != static_cast<std::size_t>(spec.T) * (spec.D + 1) * spec.S * spec.covariate_count)
    throw std::invalid_argument("covariate array has the wrong length");
  for (double v : X.X)
    if (!std::isfinite(v)) throw std::invalid_argument("covariates must be finite");
}

// log p(n) for a negative binomial with mean lambda and scale phi
// (variance lambda * (1 + lambda/phi)).
inline double negbin_logpmf(long long n, double lambda, double phi) {
  if (n < 0) throw std::domain_error("negative count");
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw std::domain_error("negbin mean must be positive and finite");
  if (!(phi > 0.0) || !std::isfinite(phi))
    throw std::domain_error("negbin scale must be positive and finite");
  const double nd = static_cast<double>(n);
  return std::lgamma(nd + phi) - std::lgamma(phi) - std::lgamma(nd + 1.0) +
         phi * std::log(phi / (phi + lambda)) + nd * std::log(lambda / (phi + lambda));
}

inline double log_normal_density(double x, double mean, double variance) {
  const double diff = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * variance) - 0.5 * diff * diff / variance;
}

inline double log_gamma_density(double x, double shape, double rate) {
  if (!(x > 0.0)) throw std::domain_error("gamma density needs a positive argument");
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) -
         rate * x;
}

// First-order random walk: the first element is pinned by a zero-mean
// normal with the (small) anchor precision, increments are N(0, 1/tau).
inline double rw1_logdensity(std::span<const double> x, double tau, double anchor_precision) {
  if (x.empty()) throw std::invalid_argument("random walk needs at least one element");
  if (!(tau > 0.0)) throw std::domain_error("random walk precision must be positive");
  if (!(anchor_precision > 0.0)) throw std::domain_error("anchor precision must be positive");
  double out = log_normal_density(x[0], 0.0, 1.0 / anchor_precision);
  for (std::size_t i = 1; i < x.size(); ++i)
    out += log_normal_density(x[i], x[i - 1], 1.0 / tau);
  return out;
}

// Linear predictor of cell (t, d, s); inactive blocks contribute zero.
inline double log_mean(const ParameterState& st, const ModelSpec& spec,
                       const CovariateArray* X, int t, int d, int s) {
  if (t < 0 || t >= spec.T || d < 0 || d > spec.D || s < 0 || s >= spec.S)
    throw std::out_of_range("cell index out of range");
  double eta = st.mu + st.alpha[t] + st.beta[d];
  if (X)
    for (int j = 0; j < X->p; ++j) eta += X->at(t, d, s, j) * st.gamma[j];
  if (spec.has_alpha_ts()) eta += st.alpha_ts[static_cast<std::size_t>(t) * spec.S + s];
  if (spec.has_beta_ds()) eta += st.beta_ds[static_cast<std::size_t>(d) * spec.S + s];
  if (spec.has_delta_ind()) eta += st.delta_ind[s];
  if (spec.has_delta_iar()) eta += st.delta_iar[s];
  return eta;
}

inline double log_prior(const ParameterState& st, const ModelSpec& spec,
                        const IarStructure* iar = nullptr) {
  check_state(st, spec);
  if (spec.has_delta_iar() && !iar)
    throw std::invalid_argument("variant with an IAR block needs the adjacency structure");
  const double a = spec.hyper_shape, b = spec.hyper_rate;
  double out = log_normal_density(st.mu, 0.0, spec.normal_prior_variance);
  for (double g : st.gamma) out += log_normal_density(g, 0.0, spec.normal_prior_variance);
  out += rw1_logdensity(st.alpha, st.tau_alpha, spec.anchor_precision);
  out += rw1_logdensity(st.beta, st.tau_beta, spec.anchor_precision);
  out += log_gamma_density(st.tau_alpha, a, b);
  out += log_gamma_density(st.tau_beta, a, b);
  if (spec.has_alpha_ts()) {
    for (double v : st.alpha_ts) out += log_normal_density(v, 0.0, 1.0 / st.tau_alpha_ts);
    out += log_gamma_density(st.tau_alpha_ts, a, b);
  }
  if (spec.has_beta_ds()) {
    for (double v : st.beta_ds) out += log_normal_density(v, 0.0, 1.0 / st.tau_beta_ds);
    out += log_gamma_density(st.tau_beta_ds, a, b);
  }
  if (spec.has_delta_ind()) {
    for (double v : st.delta_ind) out += log_normal_density(v, 0.0, 1.0 / st.tau_delta_ind);
    out += log_gamma_density(st.tau_delta_ind, a, b);
  }
  if (spec.has_delta_iar()) {
    out += iar_logdensity(st.delta_iar, st.tau_delta_iar, *iar);
    out += log_gamma_density(st.tau_delta_iar, a, b);
  }
  out += log_gamma_density(st.phi, a, b);
  return out;
}

inline double log_likelihood(const ParameterState& st, const ModelSpec& spec,
                             const CovariateArray* X, const ReportingTriangle& tri) {
  check_state(st, spec);
  if (tri.T != spec.T || tri.D != spec.D || tri.S != spec.S)
    throw std::invalid_argument("triangle does not match the model dimensions");
  double out = 0.0;
  for (int t = 0; t < tri.T; ++t)
    for (int d = 0; d <= tri.D; ++d) {
      if (!tri.observed(t, d)) continue;
      for (int s = 0; s < tri.S; ++s)
        out += negbin_logpmf(tri.count(t, d, s), std::exp(log_mean(st, spec, X, t, d, s)),
                             st.phi);
    }
  return out;
}

inline double log_posterior_unnormalized(const ParameterState& st, const ModelSpec& spec,
                                         const CovariateArray* X,
                                         const ReportingTriangle& tri,
                                         const IarStructure* iar = nullptr) {
  return log_prior(st, spec, iar) + log_likelihood(st, spec, X, tri);
}

inline nlohmann::json modelspec_to_json(const ModelSpec& spec) {
  return nlohmann::json{{"variant", variant_name(spec.variant)},
                        {"T", spec.T},
                        {"D", spec.D},
                        {"S", spec.S},
                        {"covariate_count", spec.covariate_count},
                        {"anchor_precision", spec.anchor_precision},
                        {"hyper_shape", spec.hyper_shape},
                        {"hyper_rate", spec.hyper_rate},
                        {"normal_prior_variance", spec.normal_prior_variance}};
}

inline ModelSpec modelspec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.variant = parse_variant(j.at("variant").get<std::string>());
  spec.T = j.at("T").get<int>();
  spec.D = j.at("D").get<int>();
  spec.S = j.at("S").get<int>();
  spec.covariate_count = j.value("covariate_count", 0);
  spec.anchor_precision = j.value("anchor_precision", 0.001);
  spec.hyper_shape = j.value("hyper_shape", 0.001);
  spec.hyper_rate = j.value("hyper_rate", 0.001);
  spec.normal_prior_variance = j.value("normal_prior_variance", 1000.0);
  validate_spec(spec);
  return spec;
}

}  // namespace delaycast
