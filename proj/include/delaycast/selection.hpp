#pragma once

// Model comparison criteria computed from posterior samples: DIC with a
// plug-in at the posterior mean (taken on the log scale for precisions and
// phi, identity otherwise) and WAIC with one triangle cell as the pointwise
// unit. Variance terms use the population convention so duplicating the
// draw set leaves both criteria unchanged.

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "delaycast/csv.hpp"
#include "delaycast/inference.hpp"
#include "delaycast/model.hpp"
#include "delaycast/triangle.hpp"

namespace delaycast {

struct DicResult {
  double dbar = 0.0;
  double pd = 0.0;
  double dic = 0.0;
};

struct WaicResult {
  double lppd = 0.0;
  double p_waic = 0.0;
  double waic = 0.0;
};

namespace detail {

inline void require_draws(const PosteriorSamples& samples) {
  if (samples.draws.size() < 2)
    throw std::invalid_argument("criteria need at least two posterior draws");
}

[[noreturn]] inline void bad_draw(const char* what, std::size_t m, const char* why) {
  throw std::runtime_error(std::string(what) + " in draw " + std::to_string(m + 1) +
                           (why && *why ? std::string(": ") + why : std::string()));
}

// Posterior mean state; precisions and phi averaged on the log scale.
inline ParameterState plugin_state(const PosteriorSamples& samples) {
  const auto& spec = samples.spec;
  ParameterState mean = init_state(spec);
  const double M = static_cast<double>(samples.draws.size());
  double lt_a = 0, lt_b = 0, lt_ats = 0, lt_bds = 0, lt_di = 0, lt_dr = 0, lphi = 0;
  mean.mu = 0.0;
  for (const auto& st : samples.draws) {
    mean.mu += st.mu;
    for (std::size_t i = 0; i < mean.gamma.size(); ++i) mean.gamma[i] += st.gamma[i];
    for (std::size_t i = 0; i < mean.alpha.size(); ++i) mean.alpha[i] += st.alpha[i];
    for (std::size_t i = 0; i < mean.beta.size(); ++i) mean.beta[i] += st.beta[i];
    for (std::size_t i = 0; i < mean.alpha_ts.size(); ++i) mean.alpha_ts[i] += st.alpha_ts[i];
    for (std::size_t i = 0; i < mean.beta_ds.size(); ++i) mean.beta_ds[i] += st.beta_ds[i];
    for (std::size_t i = 0; i < mean.delta_ind.size(); ++i) mean.delta_ind[i] += st.delta_ind[i];
    for (std::size_t i = 0; i < mean.delta_iar.size(); ++i) mean.delta_iar[i] += st.delta_iar[i];
    lt_a += std::log(st.tau_alpha);
    lt_b += std::log(st.tau_beta);
    lt_ats += std::log(st.tau_alpha_ts);
    lt_bds += std::log(st.tau_beta_ds);
    lt_di += std::log(st.tau_delta_ind);
    lt_dr += std::log(st.tau_delta_iar);
    lphi += std::log(st.phi);
  }
  mean.mu /= M;
  for (auto& v : mean.gamma) v /= M;
  for (auto& v : mean.alpha) v /= M;
  for (auto& v : mean.beta) v /= M;
  for (auto& v : mean.alpha_ts) v /= M;
  for (auto& v : mean.beta_ds) v /= M;
  for (auto& v : mean.delta_ind) v /= M;
  for (auto& v : mean.delta_iar) v /= M;
  mean.tau_alpha = std::exp(lt_a / M);
  mean.tau_beta = std::exp(lt_b / M);
  mean.tau_alpha_ts = std::exp(lt_ats / M);
  mean.tau_beta_ds = std::exp(lt_bds / M);
  mean.tau_delta_ind = std::exp(lt_di / M);
  mean.tau_delta_iar = std::exp(lt_dr / M);
  mean.phi = std::exp(lphi / M);
  return mean;
}

}  // namespace detail

inline DicResult dic(const PosteriorSamples& samples, const ReportingTriangle& tri,
                     const CovariateArray* X = nullptr) {
  detail::require_draws(samples);
  const auto& spec = samples.spec;
  const double M = static_cast<double>(samples.draws.size());
  double dbar = 0.0;
  for (std::size_t m = 0; m < samples.draws.size(); ++m) {
    double ll = 0.0;
    try {
      ll = log_likelihood(samples.draws[m], spec, X, tri);
    } catch (const std::exception& e) {
      detail::bad_draw("non-finite deviance", m, e.what());
    }
    if (!std::isfinite(ll)) detail::bad_draw("non-finite deviance", m, "");
    dbar += -2.0 * ll;
  }
  dbar /= M;
  const ParameterState mean = detail::plugin_state(samples);
  const double d_hat = -2.0 * log_likelihood(mean, spec, X, tri);
  if (!std::isfinite(d_hat))
    throw std::runtime_error("non-finite deviance at the posterior mean");
  DicResult out;
  out.dbar = dbar;
  out.pd = dbar - d_hat;
  out.dic = dbar + out.pd;
  return out;
}

inline WaicResult waic(const PosteriorSamples& samples, const ReportingTriangle& tri,
                       const CovariateArray* X = nullptr) {
  detail::require_draws(samples);
  const auto& spec = samples.spec;
  if (tri.T != spec.T || tri.D != spec.D || tri.S != spec.S)
    throw std::invalid_argument("triangle does not match the model dimensions");
  const std::size_t M = samples.draws.size();
  std::vector<double> cell_ll(M);
  WaicResult out;
  for (int t = 0; t < tri.T; ++t)
    for (int d = 0; d <= tri.D; ++d) {
      if (!tri.observed(t, d)) continue;
      for (int s = 0; s < tri.S; ++s) {
        const long long n = tri.count(t, d, s);
        for (std::size_t m = 0; m < M; ++m) {
          const auto& st = samples.draws[m];
          try {
            cell_ll[m] =
                negbin_logpmf(n, std::exp(log_mean(st, spec, X, t, d, s)), st.phi);
          } catch (const std::exception& e) {
            detail::bad_draw("non-finite log-likelihood", m, e.what());
          }
          if (!std::isfinite(cell_ll[m])) detail::bad_draw("non-finite log-likelihood", m, "");
        }
        double mx = cell_ll[0], mean = 0.0;
        for (double v : cell_ll) mx = std::max(mx, v);
        double sum_exp = 0.0;
        for (double v : cell_ll) {
          sum_exp += std::exp(v - mx);
          mean += v;
        }
        mean /= static_cast<double>(M);
        double var = 0.0;
        for (double v : cell_ll) var += (v - mean) * (v - mean);
        var /= static_cast<double>(M);  // population form: duplication-proof
        out.lppd += mx + std::log(sum_exp / static_cast<double>(M));
        out.p_waic += var;
      }
    }
  out.waic = -2.0 * (out.lppd - out.p_waic);
  return out;
}

struct ModelCriteria {
  std::string model;
  DicResult dic;
  WaicResult waic;
};

inline void write_criteria_csv(const std::string& path,
                               const std::vector<ModelCriteria>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "model,Dbar,pD,DIC,WAIC\n";
  for (const auto& r : rows) {
    if (r.dic.pd < 0.0) out << "# warning: negative pD for " << r.model << '\n';
    out << csv::quote(r.model) << ',' << csv::format_double(r.dic.dbar) << ','
        << csv::format_double(r.dic.pd) << ',' << csv::format_double(r.dic.dic) << ','
        << csv::format_double(r.waic.waic) << '\n';
  }
}

}  // namespace delaycast
