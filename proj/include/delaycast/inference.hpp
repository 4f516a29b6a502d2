#pragma once

// Posterior sampling via adaptive Metropolis-within-Gibbs.
//
// Every scalar effect gets a single-site Gaussian random-walk proposal with
// an adaptively tuned step size (target acceptance 0.44, tuning frozen at
// the end of burn-in). Precisions are drawn exactly from their conjugate
// Gamma conditionals. phi moves on the log scale. Three extra
// likelihood-invariant "level" moves translate mass between mu and the
// weakly anchored blocks (alpha, beta, delta_ind), which removes the flat
// ridge the small anchor precision would otherwise leave behind. The IAR
// block is recentered every sweep with the removed level pushed into
// delta_ind and mu so the linear predictor never changes.
//
// Chains own independent substreams derived from (seed, chain); running
// them serially or in parallel yields bit-identical output.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "delaycast/csv.hpp"
#include "delaycast/model.hpp"
#include "delaycast/rng.hpp"
#include "delaycast/spatial.hpp"
#include "delaycast/triangle.hpp"
#include "delaycast/version.hpp"

namespace delaycast {

struct SamplerConfig {
  int chains = 3;
  int iterations = 20000;
  int burn_in = 10000;
  int thin = 5;
  std::uint64_t seed = 1;
  double target_acceptance = 0.44;
  int adapt_window = 50;
  int threads = 0;  // 0 = one thread per chain, capped by the hardware
  // Fixing a hyperparameter replaces its update with the given value.
  std::optional<double> fix_tau_alpha;
  std::optional<double> fix_tau_beta;
  std::optional<double> fix_phi;
};

inline void validate_config(const SamplerConfig& cfg) {
  if (cfg.chains < 1) throw std::invalid_argument("need at least one chain");
  if (cfg.iterations < 1) throw std::invalid_argument("need at least one iteration");
  if (cfg.burn_in < 0 || cfg.burn_in >= cfg.iterations)
    throw std::invalid_argument("burn_in must lie in [0, iterations)");
  if (cfg.thin < 1) throw std::invalid_argument("thin must be at least 1");
  if (!(cfg.target_acceptance > 0.0 && cfg.target_acceptance < 1.0))
    throw std::invalid_argument("target acceptance must lie in (0, 1)");
  if (cfg.adapt_window < 1) throw std::invalid_argument("adapt_window must be at least 1");
  for (const auto& fixed : {cfg.fix_tau_alpha, cfg.fix_tau_beta, cfg.fix_phi})
    if (fixed && !(*fixed > 0.0))
      throw std::invalid_argument("fixed hyperparameters must be positive");
}

inline nlohmann::json samplerconfig_to_json(const SamplerConfig& cfg) {
  nlohmann::json j{{"chains", cfg.chains},
                   {"iterations", cfg.iterations},
                   {"burn_in", cfg.burn_in},
                   {"thin", cfg.thin},
                   {"seed", cfg.seed},
                   {"target_acceptance", cfg.target_acceptance},
                   {"adapt_window", cfg.adapt_window},
                   {"threads", cfg.threads}};
  if (cfg.fix_tau_alpha) j["fix_tau_alpha"] = *cfg.fix_tau_alpha;
  if (cfg.fix_tau_beta) j["fix_tau_beta"] = *cfg.fix_tau_beta;
  if (cfg.fix_phi) j["fix_phi"] = *cfg.fix_phi;
  return j;
}

inline SamplerConfig samplerconfig_from_json(const nlohmann::json& j) {
  SamplerConfig cfg;
  cfg.chains = j.value("chains", cfg.chains);
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.burn_in = j.value("burn_in", cfg.burn_in);
  cfg.thin = j.value("thin", cfg.thin);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.target_acceptance = j.value("target_acceptance", cfg.target_acceptance);
  cfg.adapt_window = j.value("adapt_window", cfg.adapt_window);
  cfg.threads = j.value("threads", cfg.threads);
  if (j.contains("fix_tau_alpha")) cfg.fix_tau_alpha = j.at("fix_tau_alpha").get<double>();
  if (j.contains("fix_tau_beta")) cfg.fix_tau_beta = j.at("fix_tau_beta").get<double>();
  if (j.contains("fix_phi")) cfg.fix_phi = j.at("fix_phi").get<double>();
  validate_config(cfg);
  return cfg;
}

struct PosteriorSamples {
  ModelSpec spec;
  SamplerConfig config;
  std::vector<ParameterState> draws;  // chain-major, recording order
  std::vector<int> chain_id;          // per draw, 1-based
  std::vector<int> iteration;         // per draw, sweep index
  std::map<std::string, double> acceptance_rates;  // per block, after burn-in
  // Proposal scales per site, snapshotted when adaptation freezes and at the
  // end of the run; equality certifies the freeze.
  std::vector<std::vector<double>> scales_at_freeze;
  std::vector<std::vector<double>> scales_at_end;

  int draws_per_chain() const { return (config.iterations - config.burn_in) / config.thin; }
};

struct Diagnostics {
  std::vector<std::string> names;
  std::vector<double> rhat;  // NaN when only one chain was run
  std::vector<double> ess;
};

struct GammaParams {
  double shape = 0.0;
  double rate = 0.0;
};

// Conjugate Gamma conditional for a precision: shape a + dim/2, rate
// b + sum(terms^2)/2. `terms` are RW1 increments, unstructured values, or
// IAR edge differences (then effective_dim is the rank, not the count).
inline GammaParams gibbs_precision_params(std::span<const double> terms, double a, double b,
                                          int effective_dim) {
  if (effective_dim < 0) throw std::invalid_argument("effective dimension must be >= 0");
  double ss = 0.0;
  for (double v : terms) ss += v * v;
  if (!std::isfinite(ss) || ss < 0.0)
    throw std::logic_error("sum of squares in a precision update is not finite");
  return {a + 0.5 * effective_dim, b + 0.5 * ss};
}

inline double gibbs_precision(std::span<const double> terms, double a, double b,
                              int effective_dim, Rng& rng) {
  const auto p = gibbs_precision_params(terms, a, b, effective_dim);
  // Shapes below one can underflow to zero; keep the draw strictly positive.
  return std::max(rng.gamma(p.shape, 1.0 / p.rate), std::numeric_limits<double>::min());
}

// Multiplicative Robbins-Monro style update of a proposal scale.
inline double adapt_step(double current_scale, double recent_acceptance, double target,
                         double kappa) {
  if (!(current_scale > 0.0)) throw std::invalid_argument("scale must be positive");
  if (recent_acceptance < 0.0 || recent_acceptance > 1.0 || target < 0.0 || target > 1.0)
    throw std::invalid_argument("acceptance rates lie in [0, 1]");
  return current_scale * std::exp(kappa * (recent_acceptance - target));
}

namespace detail {

inline constexpr std::uint64_t kChainStreamTag = 0x636861696eULL;

struct Site {
  enum class Kind {
    mu,
    gamma,
    alpha,
    beta,
    alpha_ts,
    beta_ds,
    delta_ind,
    delta_iar,
    level_alpha,
    level_beta,
    level_delta,
    phi
  };
  Kind kind;
  int a = 0;  // t, d, s or covariate index, depending on kind
  int b = 0;  // region index for interaction sites
};

inline const char* site_block_name(Site::Kind k) {
  switch (k) {
    case Site::Kind::mu: return "mu";
    case Site::Kind::gamma: return "gamma";
    case Site::Kind::alpha: return "alpha";
    case Site::Kind::beta: return "beta";
    case Site::Kind::alpha_ts: return "alpha_ts";
    case Site::Kind::beta_ds: return "beta_ds";
    case Site::Kind::delta_ind: return "delta_ind";
    case Site::Kind::delta_iar: return "delta_iar";
    case Site::Kind::level_alpha: return "level_alpha";
    case Site::Kind::level_beta: return "level_beta";
    case Site::Kind::level_delta: return "level_delta";
    case Site::Kind::phi: return "phi";
  }
  return "?";
}

class McmcChain {
 public:
  McmcChain(const ReportingTriangle& tri, const ModelSpec& spec, const CovariateArray* X,
            const IarStructure* iar, const SamplerConfig& cfg, int chain_index)
      : tri_(tri),
        spec_(spec),
        X_(X),
        iar_(iar),
        cfg_(cfg),
        rng_(Rng::stream(cfg.seed, {kChainStreamTag, static_cast<std::uint64_t>(chain_index)})) {
    build_cells();
    build_sites();
    init_state();
  }

  // Runs all sweeps; kept draws are appended to `draws` etc.
  void run(std::vector<ParameterState>& draws, std::vector<int>& chain_ids,
           std::vector<int>& iterations, int chain_label) {
    for (int sweep = 1; sweep <= cfg_.iterations; ++sweep) {
      const bool adapting = sweep <= cfg_.burn_in;
      for (std::size_t i = 0; i < sites_.size(); ++i) update_site(i, adapting);
      recenter_iar();
      gibbs_precisions();
      if (sweep == cfg_.burn_in) scales_at_freeze_ = scale_;
      if (sweep > cfg_.burn_in && (sweep - cfg_.burn_in) % cfg_.thin == 0) {
        draws.push_back(state_);
        chain_ids.push_back(chain_label);
        iterations.push_back(sweep);
      }
    }
    if (cfg_.burn_in == 0) scales_at_freeze_ = scale_;
    scales_at_end_ = scale_;
  }

  const std::vector<Site>& sites() const { return sites_; }
  const std::vector<long long>& post_accepts() const { return post_accepts_; }
  const std::vector<long long>& post_proposals() const { return post_proposals_; }
  const std::vector<double>& scales_at_freeze() const { return scales_at_freeze_; }
  const std::vector<double>& scales_at_end() const { return scales_at_end_; }

 private:
  const ReportingTriangle& tri_;
  const ModelSpec& spec_;
  const CovariateArray* X_;
  const IarStructure* iar_;
  SamplerConfig cfg_;
  Rng rng_;

  ParameterState state_;
  double lgamma_phi_ = 0.0;
  double phi_log_phi_ = 0.0;

  // Observed-cell caches, indexed by position in cells_.
  std::vector<std::uint32_t> cells_;      // flat triangle indices
  std::vector<int> cell_t_, cell_d_, cell_s_;
  std::vector<double> n_;                 // counts as doubles
  std::vector<double> lgamma_n1_;
  std::vector<double> eta_, lambda_, cell_ll_;
  std::vector<double> cell_const_;        // lgamma(n+phi) - lgamma(phi) + phi log phi - lgamma(n+1)
  std::vector<long long> distinct_counts_;
  std::vector<int> count_index_;          // per cell, index into distinct_counts_
  std::vector<double> lgamma_n_phi_by_count_;

  // Affected-cell lists per site axis (positions into cells_).
  std::vector<std::vector<std::uint32_t>> by_t_, by_d_, by_s_, by_ts_, by_ds_;
  std::vector<std::uint32_t> all_cells_;

  std::vector<Site> sites_;
  std::vector<double> scale_;
  std::vector<int> window_accepts_, window_proposals_, rounds_;
  std::vector<long long> post_accepts_, post_proposals_;
  std::vector<double> scales_at_freeze_, scales_at_end_;
  std::vector<double> scratch_ll_;
  std::vector<double> scratch_terms_;

  void build_cells() {
    by_t_.assign(spec_.T, {});
    by_d_.assign(spec_.D + 1, {});
    by_s_.assign(spec_.S, {});
    if (spec_.has_alpha_ts()) by_ts_.assign(static_cast<std::size_t>(spec_.T) * spec_.S, {});
    if (spec_.has_beta_ds()) by_ds_.assign(static_cast<std::size_t>(spec_.D + 1) * spec_.S, {});
    for (int t = 0; t < spec_.T; ++t)
      for (int d = 0; d <= spec_.D; ++d) {
        if (!tri_.observed(t, d)) continue;
        for (int s = 0; s < spec_.S; ++s) {
          const auto pos = static_cast<std::uint32_t>(cells_.size());
          cells_.push_back(static_cast<std::uint32_t>(tri_.cell(t, d, s)));
          cell_t_.push_back(t);
          cell_d_.push_back(d);
          cell_s_.push_back(s);
          const long long n = tri_.count(t, d, s);
          n_.push_back(static_cast<double>(n));
          lgamma_n1_.push_back(std::lgamma(static_cast<double>(n) + 1.0));
          by_t_[t].push_back(pos);
          by_d_[d].push_back(pos);
          by_s_[s].push_back(pos);
          if (spec_.has_alpha_ts()) by_ts_[static_cast<std::size_t>(t) * spec_.S + s].push_back(pos);
          if (spec_.has_beta_ds()) by_ds_[static_cast<std::size_t>(d) * spec_.S + s].push_back(pos);
          all_cells_.push_back(pos);
        }
      }
    // Distinct count values share one lgamma(n + phi) evaluation.
    distinct_counts_.assign(n_.begin(), n_.end());
    std::sort(distinct_counts_.begin(), distinct_counts_.end());
    distinct_counts_.erase(std::unique(distinct_counts_.begin(), distinct_counts_.end()),
                           distinct_counts_.end());
    count_index_.resize(cells_.size());
    for (std::size_t i = 0; i < cells_.size(); ++i)
      count_index_[i] = static_cast<int>(
          std::lower_bound(distinct_counts_.begin(), distinct_counts_.end(),
                           static_cast<long long>(n_[i])) -
          distinct_counts_.begin());
    scratch_ll_.resize(cells_.size());
  }

  void build_sites() {
    sites_.push_back({Site::Kind::mu, 0, 0});
    for (int j = 0; j < spec_.covariate_count; ++j) sites_.push_back({Site::Kind::gamma, j, 0});
    for (int t = 0; t < spec_.T; ++t) sites_.push_back({Site::Kind::alpha, t, 0});
    for (int d = 0; d <= spec_.D; ++d) sites_.push_back({Site::Kind::beta, d, 0});
    if (spec_.has_alpha_ts())
      for (int t = 0; t < spec_.T; ++t)
        for (int s = 0; s < spec_.S; ++s) sites_.push_back({Site::Kind::alpha_ts, t, s});
    if (spec_.has_beta_ds())
      for (int d = 0; d <= spec_.D; ++d)
        for (int s = 0; s < spec_.S; ++s) sites_.push_back({Site::Kind::beta_ds, d, s});
    if (spec_.has_delta_ind())
      for (int s = 0; s < spec_.S; ++s) sites_.push_back({Site::Kind::delta_ind, s, 0});
    if (spec_.has_delta_iar())
      for (int s = 0; s < spec_.S; ++s) sites_.push_back({Site::Kind::delta_iar, s, 0});
    sites_.push_back({Site::Kind::level_alpha, 0, 0});
    sites_.push_back({Site::Kind::level_beta, 0, 0});
    if (spec_.has_delta_ind()) sites_.push_back({Site::Kind::level_delta, 0, 0});
    if (!cfg_.fix_phi) sites_.push_back({Site::Kind::phi, 0, 0});

    scale_.assign(sites_.size(), 0.5);
    window_accepts_.assign(sites_.size(), 0);
    window_proposals_.assign(sites_.size(), 0);
    rounds_.assign(sites_.size(), 0);
    post_accepts_.assign(sites_.size(), 0);
    post_proposals_.assign(sites_.size(), 0);
  }

  void init_state() {
    state_ = delaycast::init_state(spec_);
    double total = 0.0;
    for (std::size_t i = 0; i < cells_.size(); ++i) total += n_[i];
    const double mean =
        cells_.empty() ? 0.0 : total / static_cast<double>(cells_.size());
    state_.mu = std::log(mean + 0.5);
    if (cfg_.fix_tau_alpha) state_.tau_alpha = *cfg_.fix_tau_alpha;
    if (cfg_.fix_tau_beta) state_.tau_beta = *cfg_.fix_tau_beta;
    if (cfg_.fix_phi) state_.phi = *cfg_.fix_phi;

    refresh_phi_caches();
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      eta_.push_back(log_mean(state_, spec_, X_, cell_t_[i], cell_d_[i], cell_s_[i]));
      lambda_.push_back(std::exp(eta_.back()));
      cell_ll_.push_back(cell_loglik(i, eta_.back(), lambda_.back()));
    }
    check_initial_finiteness();
  }

  void refresh_phi_caches() {
    lgamma_phi_ = std::lgamma(state_.phi);
    phi_log_phi_ = state_.phi * std::log(state_.phi);
    lgamma_n_phi_by_count_.resize(distinct_counts_.size());
    for (std::size_t k = 0; k < distinct_counts_.size(); ++k)
      lgamma_n_phi_by_count_[k] =
          std::lgamma(static_cast<double>(distinct_counts_[k]) + state_.phi);
    cell_const_.resize(cells_.size());
    for (std::size_t i = 0; i < cells_.size(); ++i)
      cell_const_[i] =
          lgamma_n_phi_by_count_[count_index_[i]] - lgamma_phi_ + phi_log_phi_ - lgamma_n1_[i];
  }

  double cell_loglik(std::size_t i, double eta, double lambda) const {
    return cell_const_[i] + n_[i] * eta - (state_.phi + n_[i]) * std::log(state_.phi + lambda);
  }

  void check_initial_finiteness() {
    struct Named {
      const char* name;
      double value;
    };
    double lik = 0.0;
    for (double v : cell_ll_) lik += v;
    std::vector<Named> blocks{
        {"mu prior", log_normal_density(state_.mu, 0.0, spec_.normal_prior_variance)},
        {"alpha walk", rw1_logdensity(state_.alpha, state_.tau_alpha, spec_.anchor_precision)},
        {"beta walk", rw1_logdensity(state_.beta, state_.tau_beta, spec_.anchor_precision)},
        {"likelihood", lik}};
    if (spec_.has_delta_iar())
      blocks.push_back({"delta_iar block",
                        iar_logdensity(state_.delta_iar, state_.tau_delta_iar, *iar_)});
    for (const auto& b : blocks)
      if (!std::isfinite(b.value))
        throw std::runtime_error(std::string("non-finite ") + b.name + " at initialization");
  }

  double& site_param(const Site& st) {
    switch (st.kind) {
      case Site::Kind::mu: return state_.mu;
      case Site::Kind::gamma: return state_.gamma[st.a];
      case Site::Kind::alpha: return state_.alpha[st.a];
      case Site::Kind::beta: return state_.beta[st.a];
      case Site::Kind::alpha_ts:
        return state_.alpha_ts[static_cast<std::size_t>(st.a) * spec_.S + st.b];
      case Site::Kind::beta_ds:
        return state_.beta_ds[static_cast<std::size_t>(st.a) * spec_.S + st.b];
      case Site::Kind::delta_ind: return state_.delta_ind[st.a];
      case Site::Kind::delta_iar: return state_.delta_iar[st.a];
      default: break;
    }
    throw std::logic_error("site has no single parameter");
  }

  const std::vector<std::uint32_t>& site_cells(const Site& st) const {
    switch (st.kind) {
      case Site::Kind::mu:
      case Site::Kind::gamma: return all_cells_;
      case Site::Kind::alpha: return by_t_[st.a];
      case Site::Kind::beta: return by_d_[st.a];
      case Site::Kind::alpha_ts: return by_ts_[static_cast<std::size_t>(st.a) * spec_.S + st.b];
      case Site::Kind::beta_ds: return by_ds_[static_cast<std::size_t>(st.a) * spec_.S + st.b];
      case Site::Kind::delta_ind:
      case Site::Kind::delta_iar: return by_s_[st.a];
      default: break;
    }
    throw std::logic_error("site has no cell list");
  }

  // Log prior ratio for moving this site's parameter from `old_v` to `new_v`.
  double prior_delta(const Site& st, double old_v, double new_v) const {
    const double v = spec_.normal_prior_variance;
    switch (st.kind) {
      case Site::Kind::mu:
      case Site::Kind::gamma:
        return log_normal_density(new_v, 0.0, v) - log_normal_density(old_v, 0.0, v);
      case Site::Kind::alpha:
        return walk_delta(state_.alpha, st.a, old_v, new_v, state_.tau_alpha);
      case Site::Kind::beta:
        return walk_delta(state_.beta, st.a, old_v, new_v, state_.tau_beta);
      case Site::Kind::alpha_ts:
        return log_normal_density(new_v, 0.0, 1.0 / state_.tau_alpha_ts) -
               log_normal_density(old_v, 0.0, 1.0 / state_.tau_alpha_ts);
      case Site::Kind::beta_ds:
        return log_normal_density(new_v, 0.0, 1.0 / state_.tau_beta_ds) -
               log_normal_density(old_v, 0.0, 1.0 / state_.tau_beta_ds);
      case Site::Kind::delta_ind:
        return log_normal_density(new_v, 0.0, 1.0 / state_.tau_delta_ind) -
               log_normal_density(old_v, 0.0, 1.0 / state_.tau_delta_ind);
      case Site::Kind::delta_iar: {
        double delta = 0.0;
        const int s = st.a;
        for (int j = 0; j < iar_->S; ++j) {
          if (iar_->Q[s][j] == 0.0 || j == s) continue;
          const double dn = new_v - state_.delta_iar[j];
          const double dm = old_v - state_.delta_iar[j];
          delta += -0.5 * state_.tau_delta_iar * (dn * dn - dm * dm);
        }
        return delta;
      }
      default: break;
    }
    throw std::logic_error("site has no scalar prior");
  }

  // RW1 prior terms touching element `i` of a walk.
  double walk_delta(const std::vector<double>& x, int i, double old_v, double new_v,
                    double tau) const {
    double delta = 0.0;
    if (i == 0)
      delta += log_normal_density(new_v, 0.0, 1.0 / spec_.anchor_precision) -
               log_normal_density(old_v, 0.0, 1.0 / spec_.anchor_precision);
    else
      delta += log_normal_density(new_v, x[i - 1], 1.0 / tau) -
               log_normal_density(old_v, x[i - 1], 1.0 / tau);
    if (i + 1 < static_cast<int>(x.size()))
      delta += log_normal_density(x[i + 1], new_v, 1.0 / tau) -
               log_normal_density(x[i + 1], old_v, 1.0 / tau);
    return delta;
  }

  void update_site(std::size_t idx, bool adapting) {
    const Site& st = sites_[idx];
    bool accepted = false;
    switch (st.kind) {
      case Site::Kind::phi: accepted = update_phi(scale_[idx]); break;
      case Site::Kind::level_alpha:
        accepted = update_level(scale_[idx], state_.alpha, nullptr);
        break;
      case Site::Kind::level_beta:
        accepted = update_level(scale_[idx], state_.beta, nullptr);
        break;
      case Site::Kind::level_delta:
        accepted = update_level(scale_[idx], state_.delta_ind, &state_.tau_delta_ind);
        break;
      case Site::Kind::gamma: accepted = update_gamma(idx); break;
      default: accepted = update_shift_site(idx); break;
    }
    note_proposal(idx, accepted, adapting);
  }

  void note_proposal(std::size_t idx, bool accepted, bool adapting) {
    if (adapting) {
      ++window_proposals_[idx];
      if (accepted) ++window_accepts_[idx];
      if (window_proposals_[idx] >= cfg_.adapt_window) {
        ++rounds_[idx];
        const double rate =
            static_cast<double>(window_accepts_[idx]) / window_proposals_[idx];
        const double kappa = std::pow(static_cast<double>(rounds_[idx]), -0.6);
        scale_[idx] = adapt_step(scale_[idx], rate, cfg_.target_acceptance, kappa);
        window_accepts_[idx] = 0;
        window_proposals_[idx] = 0;
      }
    } else {
      ++post_proposals_[idx];
      if (accepted) ++post_accepts_[idx];
    }
  }

  // Sites whose parameter shifts eta by the same amount on every affected cell.
  bool update_shift_site(std::size_t idx) {
    const Site& st = sites_[idx];
    double& param = site_param(st);
    const auto& cells = site_cells(st);
    const double h = scale_[idx] * rng_.normal();
    const double proposed = param + h;
    double delta = prior_delta(st, param, proposed);
    double lik_delta = 0.0;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const auto i = cells[k];
      const double eta2 = eta_[i] + h;
      if (std::abs(eta2) > 500.0) return false;
      const double ll = cell_loglik(i, eta2, std::exp(eta2));
      scratch_ll_[k] = ll;
      lik_delta += ll - cell_ll_[i];
    }
    delta += lik_delta;
    if (!(std::log(rng_.uniform_pos()) < delta)) return false;
    param = proposed;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const auto i = cells[k];
      eta_[i] += h;
      lambda_[i] = std::exp(eta_[i]);
      cell_ll_[i] = scratch_ll_[k];
    }
    return true;
  }

  bool update_gamma(std::size_t idx) {
    const Site& st = sites_[idx];
    const int j = st.a;
    double& param = state_.gamma[j];
    const double h = scale_[idx] * rng_.normal();
    const double proposed = param + h;
    double delta = prior_delta(st, param, proposed);
    for (std::size_t k = 0; k < all_cells_.size(); ++k) {
      const auto i = all_cells_[k];
      const double eta2 =
          eta_[i] + h * X_->at(cell_t_[i], cell_d_[i], cell_s_[i], j);
      if (std::abs(eta2) > 500.0) return false;
      const double ll = cell_loglik(i, eta2, std::exp(eta2));
      scratch_ll_[k] = ll;
      delta += ll - cell_ll_[i];
    }
    if (!(std::log(rng_.uniform_pos()) < delta)) return false;
    param = proposed;
    for (std::size_t k = 0; k < all_cells_.size(); ++k) {
      const auto i = all_cells_[k];
      eta_[i] += h * X_->at(cell_t_[i], cell_d_[i], cell_s_[i], j);
      lambda_[i] = std::exp(eta_[i]);
      cell_ll_[i] = scratch_ll_[k];
    }
    return true;
  }

  // Translation mu += h, block -= h. The linear predictor is untouched, so
  // only the anchored or proper prior terms enter the ratio.
  bool update_level(double scale, std::vector<double>& block, const double* block_tau) {
    const double h = scale * rng_.normal();
    const double v = spec_.normal_prior_variance;
    double delta = log_normal_density(state_.mu + h, 0.0, v) -
                   log_normal_density(state_.mu, 0.0, v);
    if (block_tau) {
      const double bv = 1.0 / *block_tau;
      for (double x : block)
        delta += log_normal_density(x - h, 0.0, bv) - log_normal_density(x, 0.0, bv);
    } else {
      const double av = 1.0 / spec_.anchor_precision;
      delta += log_normal_density(block[0] - h, 0.0, av) -
               log_normal_density(block[0], 0.0, av);
      // RW increments are translation invariant.
    }
    if (!(std::log(rng_.uniform_pos()) < delta)) return false;
    state_.mu += h;
    for (double& x : block) x -= h;
    return true;
  }

  bool update_phi(double scale) {
    const double psi = std::log(state_.phi);
    const double psi2 = psi + scale * rng_.normal();
    if (std::abs(psi2) > 300.0) return false;
    const double phi2 = std::exp(psi2);
    const double a = spec_.hyper_shape, b = spec_.hyper_rate;
    // Gamma(a, b) prior plus the log-scale Jacobian.
    double delta = (a * psi2 - b * phi2) - (a * psi - b * state_.phi);
    const double lgamma_phi2 = std::lgamma(phi2);
    const double phi2_log_phi2 = phi2 * std::log(phi2);
    // One lgamma per distinct count value, one log per cell.
    std::vector<double>& lg2 = scratch_terms_;
    lg2.resize(distinct_counts_.size());
    for (std::size_t k = 0; k < distinct_counts_.size(); ++k)
      lg2[k] = std::lgamma(static_cast<double>(distinct_counts_[k]) + phi2);
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      const double c2 = lg2[count_index_[i]] - lgamma_phi2 + phi2_log_phi2 - lgamma_n1_[i];
      const double ll =
          c2 + n_[i] * eta_[i] - (phi2 + n_[i]) * std::log(phi2 + lambda_[i]);
      scratch_ll_[i] = ll;
      delta += ll - cell_ll_[i];
    }
    if (!(std::log(rng_.uniform_pos()) < delta)) return false;
    state_.phi = phi2;
    refresh_phi_caches();
    cell_ll_ = scratch_ll_;
    return true;
  }

  void gibbs_precisions() {
    const double a = spec_.hyper_shape, b = spec_.hyper_rate;
    auto& terms = scratch_terms_;
    if (!cfg_.fix_tau_alpha) {
      terms.clear();
      for (int t = 1; t < spec_.T; ++t) terms.push_back(state_.alpha[t] - state_.alpha[t - 1]);
      state_.tau_alpha = gibbs_precision(terms, a, b, spec_.T - 1, rng_);
    }
    if (!cfg_.fix_tau_beta) {
      terms.clear();
      for (int d = 1; d <= spec_.D; ++d) terms.push_back(state_.beta[d] - state_.beta[d - 1]);
      state_.tau_beta = gibbs_precision(terms, a, b, spec_.D, rng_);
    }
    if (spec_.has_alpha_ts())
      state_.tau_alpha_ts = gibbs_precision(state_.alpha_ts, a, b,
                                            static_cast<int>(state_.alpha_ts.size()), rng_);
    if (spec_.has_beta_ds())
      state_.tau_beta_ds =
          gibbs_precision(state_.beta_ds, a, b, static_cast<int>(state_.beta_ds.size()), rng_);
    if (spec_.has_delta_ind())
      state_.tau_delta_ind =
          gibbs_precision(state_.delta_ind, a, b, spec_.S, rng_);
    if (spec_.has_delta_iar()) {
      terms.clear();
      for (const auto& [i, j] : iar_->edges)
        terms.push_back(state_.delta_iar[i] - state_.delta_iar[j]);
      state_.tau_delta_iar = gibbs_precision(terms, a, b, iar_->rank, rng_);
    }
  }

  // Centers delta_iar per component; the removed level is pushed into
  // delta_ind and mu so eta is exactly preserved.
  void recenter_iar() {
    if (!spec_.has_delta_iar()) return;
    std::vector<double> removed;
    state_.delta_iar = center_per_component(std::move(state_.delta_iar), *iar_, &removed);
    double overall = 0.0;
    for (std::size_t c = 0; c < iar_->members.size(); ++c)
      overall += removed[c] * static_cast<double>(iar_->members[c].size());
    overall /= static_cast<double>(spec_.S);
    for (int s = 0; s < spec_.S; ++s)
      state_.delta_ind[s] += removed[iar_->component[s]] - overall;
    state_.mu += overall;
  }
};

}  // namespace detail

inline PosteriorSamples run_mcmc(const ReportingTriangle& tri, const ModelSpec& spec,
                                 const CovariateArray* X, const RegionMap* map,
                                 const SamplerConfig& cfg) {
  validate_spec(spec);
  validate_config(cfg);
  if (tri.T != spec.T || tri.D != spec.D || tri.S != spec.S)
    throw std::invalid_argument("triangle does not match the model dimensions");
  if (X) check_covariates(*X, spec);
  if (!X && spec.covariate_count != 0)
    throw std::invalid_argument("model expects covariates but none were given");
  IarStructure iar;
  const IarStructure* iar_ptr = nullptr;
  if (spec.has_delta_iar()) {
    if (!map)
      throw std::invalid_argument("variant with an IAR block needs an adjacency matrix");
    iar = build_iar(*map);
    if (iar.S != spec.S)
      throw std::invalid_argument("region map does not match the model dimensions");
    iar_ptr = &iar;
  }

  PosteriorSamples out;
  out.spec = spec;
  out.config = cfg;
  const int per_chain = (cfg.iterations - cfg.burn_in) / cfg.thin;

  struct ChainResult {
    std::vector<ParameterState> draws;
    std::vector<int> chain_ids;
    std::vector<int> iterations;
    std::vector<double> scales_at_freeze, scales_at_end;
    std::vector<long long> post_accepts, post_proposals;
    std::vector<detail::Site> sites;
    std::string error;
  };
  std::vector<ChainResult> results(cfg.chains);

  auto run_one = [&](int c) {
    try {
      detail::McmcChain chain(tri, spec, X, iar_ptr, cfg, c + 1);
      results[c].draws.reserve(per_chain);
      chain.run(results[c].draws, results[c].chain_ids, results[c].iterations, c + 1);
      results[c].scales_at_freeze = chain.scales_at_freeze();
      results[c].scales_at_end = chain.scales_at_end();
      results[c].post_accepts = chain.post_accepts();
      results[c].post_proposals = chain.post_proposals();
      results[c].sites = chain.sites();
    } catch (const std::exception& e) {
      results[c].error = e.what();
    }
  };

  int threads = cfg.threads;
  if (threads <= 0)
    threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, cfg.chains);
  if (threads <= 1) {
    for (int c = 0; c < cfg.chains; ++c) run_one(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int w = 0; w < threads; ++w)
      pool.emplace_back([&] {
        for (;;) {
          const int c = next.fetch_add(1);
          if (c >= cfg.chains) return;
          run_one(c);
        }
      });
    for (auto& th : pool) th.join();
  }

  for (const auto& r : results)
    if (!r.error.empty()) throw std::runtime_error(r.error);

  std::map<std::string, std::pair<long long, long long>> tallies;
  for (auto& r : results) {
    out.draws.insert(out.draws.end(), r.draws.begin(), r.draws.end());
    out.chain_id.insert(out.chain_id.end(), r.chain_ids.begin(), r.chain_ids.end());
    out.iteration.insert(out.iteration.end(), r.iterations.begin(), r.iterations.end());
    out.scales_at_freeze.push_back(r.scales_at_freeze);
    out.scales_at_end.push_back(r.scales_at_end);
    for (std::size_t i = 0; i < r.sites.size(); ++i) {
      auto& tally = tallies[detail::site_block_name(r.sites[i].kind)];
      tally.first += r.post_accepts[i];
      tally.second += r.post_proposals[i];
    }
  }
  for (const auto& [name, tally] : tallies)
    out.acceptance_rates[name] =
        tally.second == 0 ? 0.0 : static_cast<double>(tally.first) / tally.second;
  return out;
}

// ---------------------------------------------------------------------------
// Convergence diagnostics

namespace detail {

// Split-Rhat over m sequences of equal length n.
inline double split_rhat(const std::vector<std::vector<double>>& seqs) {
  const std::size_t m = seqs.size();
  const std::size_t n = seqs.front().size();
  double grand = 0.0;
  std::vector<double> means(m);
  for (std::size_t j = 0; j < m; ++j) {
    double sum = 0.0;
    for (double v : seqs[j]) sum += v;
    means[j] = sum / static_cast<double>(n);
    grand += means[j];
  }
  grand /= static_cast<double>(m);
  double w = 0.0, bn = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double ss = 0.0;
    for (double v : seqs[j]) ss += (v - means[j]) * (v - means[j]);
    w += ss / static_cast<double>(n - 1);
    bn += (means[j] - grand) * (means[j] - grand);
  }
  w /= static_cast<double>(m);
  const double b_over_n = bn / static_cast<double>(m - 1);
  if (w < 1e-300) return 1.0;  // constant sequences
  const double var_plus =
      (static_cast<double>(n - 1) / n) * w + b_over_n;
  return std::sqrt(var_plus / w);
}

// Effective sample size with Geyer's initial monotone positive sequence.
inline double ess(const std::vector<std::vector<double>>& seqs) {
  const std::size_t m = seqs.size();
  const std::size_t n = seqs.front().size();
  const double total = static_cast<double>(m * n);
  std::vector<double> means(m);
  double w = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double sum = 0.0;
    for (double v : seqs[j]) sum += v;
    means[j] = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double v : seqs[j]) ss += (v - means[j]) * (v - means[j]);
    w += ss / static_cast<double>(n - 1);
  }
  w /= static_cast<double>(m);
  if (w < 1e-300) return total;
  double var_plus = (static_cast<double>(n - 1) / n) * w;
  if (m > 1) {
    double grand = 0.0;
    for (double v : means) grand += v;
    grand /= static_cast<double>(m);
    double bn = 0.0;
    for (double v : means) bn += (v - grand) * (v - grand);
    var_plus += bn / static_cast<double>(m - 1);
  }

  auto mean_acov = [&](std::size_t lag) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i + lag < n; ++i)
        sum += (seqs[j][i] - means[j]) * (seqs[j][i + lag] - means[j]);
      acc += sum / static_cast<double>(n);
    }
    return acc / static_cast<double>(m);
  };

  auto rho = [&](std::size_t lag) { return 1.0 - (w - mean_acov(lag)) / var_plus; };

  double tau = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0;; ++k) {
    const std::size_t t0 = 2 * k, t1 = 2 * k + 1;
    if (t1 >= n) break;
    double pair = (t0 == 0 ? 1.0 : rho(t0)) + rho(t1);
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  tau -= 1.0;  // rho_0 was counted twice
  tau = std::max(tau, 1e-12);
  return std::min(total, total / tau);
}

inline std::vector<std::vector<double>> split_in_half(
    const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> seqs;
  std::size_t n = std::numeric_limits<std::size_t>::max();
  for (const auto& c : chains) n = std::min(n, c.size());
  const std::size_t half = n / 2;
  for (const auto& c : chains) {
    seqs.emplace_back(c.begin(), c.begin() + half);
    seqs.emplace_back(c.begin() + (n - half), c.begin() + n);
  }
  return seqs;
}

}  // namespace detail

// Rhat/ESS for externally supplied scalar chains (used for every monitored
// quantity; exposed for testing against synthetic chains).
inline std::pair<double, double> scalar_diagnostics(
    const std::vector<std::vector<double>>& chains) {
  if (chains.empty() || chains.front().size() < 4)
    return {std::numeric_limits<double>::quiet_NaN(), 0.0};
  auto seqs = detail::split_in_half(chains);
  const double r = chains.size() >= 2 ? detail::split_rhat(seqs)
                                      : std::numeric_limits<double>::quiet_NaN();
  return {r, detail::ess(seqs)};
}

inline Diagnostics diagnostics(const PosteriorSamples& samples,
                               const CovariateArray* X = nullptr) {
  const auto& spec = samples.spec;
  Diagnostics out;
  std::vector<std::pair<std::string, std::vector<double>>> monitored;
  auto add = [&](std::string name) {
    monitored.emplace_back(std::move(name), std::vector<double>());
    monitored.back().second.reserve(samples.draws.size());
  };
  add("mu");
  add("phi");
  add("tau_alpha");
  add("tau_beta");
  if (spec.has_alpha_ts()) add("tau_alpha_ts");
  if (spec.has_beta_ds()) add("tau_beta_ds");
  if (spec.has_delta_ind()) add("tau_delta_ind");
  if (spec.has_delta_iar()) add("tau_delta_iar");
  const int corners[4][2] = {
      {0, 0}, {0, spec.D}, {spec.T - 1, 0}, {spec.T - 1, spec.D}};
  for (const auto& c : corners)
    add("lambda[" + std::to_string(c[0] + 1) + "," + std::to_string(c[1]) + "]");

  for (const auto& st : samples.draws) {
    std::size_t k = 0;
    monitored[k++].second.push_back(st.mu);
    monitored[k++].second.push_back(st.phi);
    monitored[k++].second.push_back(st.tau_alpha);
    monitored[k++].second.push_back(st.tau_beta);
    if (spec.has_alpha_ts()) monitored[k++].second.push_back(st.tau_alpha_ts);
    if (spec.has_beta_ds()) monitored[k++].second.push_back(st.tau_beta_ds);
    if (spec.has_delta_ind()) monitored[k++].second.push_back(st.tau_delta_ind);
    if (spec.has_delta_iar()) monitored[k++].second.push_back(st.tau_delta_iar);
    for (const auto& c : corners)
      monitored[k++].second.push_back(std::exp(log_mean(st, spec, X, c[0], c[1], 0)));
  }

  const int n_chains =
      samples.chain_id.empty()
          ? 0
          : *std::max_element(samples.chain_id.begin(), samples.chain_id.end());
  for (auto& [name, series] : monitored) {
    std::vector<std::vector<double>> chains(n_chains);
    for (std::size_t i = 0; i < series.size(); ++i)
      chains[samples.chain_id[i] - 1].push_back(series[i]);
    auto [r, e] = scalar_diagnostics(chains);
    out.names.push_back(name);
    out.rhat.push_back(r);
    out.ess.push_back(e);
  }
  return out;
}

inline nlohmann::json diagnostics_to_json(const Diagnostics& diag) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < diag.names.size(); ++i) {
    nlohmann::json entry;
    if (std::isfinite(diag.rhat[i])) entry["rhat"] = diag.rhat[i];
    entry["ess"] = diag.ess[i];
    j[diag.names[i]] = std::move(entry);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Samples CSV

namespace detail {

inline std::vector<std::string> sample_columns(const ModelSpec& spec) {
  std::vector<std::string> cols{"chain", "iteration", "mu"};
  for (int j = 0; j < spec.covariate_count; ++j)
    cols.push_back("gamma[" + std::to_string(j + 1) + "]");
  for (int t = 0; t < spec.T; ++t) cols.push_back("alpha[" + std::to_string(t + 1) + "]");
  for (int d = 0; d <= spec.D; ++d) cols.push_back("beta[" + std::to_string(d) + "]");
  if (spec.has_alpha_ts())
    for (int t = 0; t < spec.T; ++t)
      for (int s = 0; s < spec.S; ++s)
        cols.push_back("alpha_ts[" + std::to_string(t + 1) + "," + std::to_string(s + 1) + "]");
  if (spec.has_beta_ds())
    for (int d = 0; d <= spec.D; ++d)
      for (int s = 0; s < spec.S; ++s)
        cols.push_back("beta_ds[" + std::to_string(d) + "," + std::to_string(s + 1) + "]");
  if (spec.has_delta_ind())
    for (int s = 0; s < spec.S; ++s)
      cols.push_back("delta_ind[" + std::to_string(s + 1) + "]");
  if (spec.has_delta_iar())
    for (int s = 0; s < spec.S; ++s)
      cols.push_back("delta_iar[" + std::to_string(s + 1) + "]");
  cols.push_back("tau_alpha");
  cols.push_back("tau_beta");
  if (spec.has_alpha_ts()) cols.push_back("tau_alpha_ts");
  if (spec.has_beta_ds()) cols.push_back("tau_beta_ds");
  if (spec.has_delta_ind()) cols.push_back("tau_delta_ind");
  if (spec.has_delta_iar()) cols.push_back("tau_delta_iar");
  cols.push_back("phi");
  return cols;
}

}  // namespace detail

inline void write_samples_csv(const std::string& path, const PosteriorSamples& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# delaycast " << kVersion << '\n';
  const auto cols = detail::sample_columns(samples.spec);
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << csv::quote(cols[i]);
  out << '\n';
  const auto& spec = samples.spec;
  for (std::size_t i = 0; i < samples.draws.size(); ++i) {
    const auto& st = samples.draws[i];
    out << samples.chain_id[i] << ',' << samples.iteration[i];
    auto put = [&](double v) { out << ',' << csv::format_double(v); };
    put(st.mu);
    for (double v : st.gamma) put(v);
    for (double v : st.alpha) put(v);
    for (double v : st.beta) put(v);
    if (spec.has_alpha_ts())
      for (double v : st.alpha_ts) put(v);
    if (spec.has_beta_ds())
      for (double v : st.beta_ds) put(v);
    if (spec.has_delta_ind())
      for (double v : st.delta_ind) put(v);
    if (spec.has_delta_iar())
      for (double v : st.delta_iar) put(v);
    put(st.tau_alpha);
    put(st.tau_beta);
    if (spec.has_alpha_ts()) put(st.tau_alpha_ts);
    if (spec.has_beta_ds()) put(st.tau_beta_ds);
    if (spec.has_delta_ind()) put(st.tau_delta_ind);
    if (spec.has_delta_iar()) put(st.tau_delta_iar);
    put(st.phi);
    out << '\n';
  }
}

// Reads draws back given the spec they were written under. Chain/iteration
// labels are restored; acceptance rates and scales are not part of the CSV.
inline PosteriorSamples read_samples_csv(const std::string& path, const ModelSpec& spec) {
  const auto table = csv::read_file(path);
  const auto cols = detail::sample_columns(spec);
  if (table.header != cols)
    throw std::runtime_error(path + ": column layout does not match the model spec");
  PosteriorSamples out;
  out.spec = spec;
  for (const auto& row : table.rows) {
    if (row.size() != cols.size())
      throw std::runtime_error(path + ": row width does not match the header");
    ParameterState st = init_state(spec);
    std::size_t k = 0;
    out.chain_id.push_back(static_cast<int>(csv::parse_int(row[k++])));
    out.iteration.push_back(static_cast<int>(csv::parse_int(row[k++])));
    st.mu = csv::parse_double(row[k++]);
    for (auto& v : st.gamma) v = csv::parse_double(row[k++]);
    for (auto& v : st.alpha) v = csv::parse_double(row[k++]);
    for (auto& v : st.beta) v = csv::parse_double(row[k++]);
    if (spec.has_alpha_ts())
      for (auto& v : st.alpha_ts) v = csv::parse_double(row[k++]);
    if (spec.has_beta_ds())
      for (auto& v : st.beta_ds) v = csv::parse_double(row[k++]);
    if (spec.has_delta_ind())
      for (auto& v : st.delta_ind) v = csv::parse_double(row[k++]);
    if (spec.has_delta_iar())
      for (auto& v : st.delta_iar) v = csv::parse_double(row[k++]);
    st.tau_alpha = csv::parse_double(row[k++]);
    st.tau_beta = csv::parse_double(row[k++]);
    if (spec.has_alpha_ts()) st.tau_alpha_ts = csv::parse_double(row[k++]);
    if (spec.has_beta_ds()) st.tau_beta_ds = csv::parse_double(row[k++]);
    if (spec.has_delta_ind()) st.tau_delta_ind = csv::parse_double(row[k++]);
    if (spec.has_delta_iar()) st.tau_delta_iar = csv::parse_double(row[k++]);
    st.phi = csv::parse_double(row[k++]);
    out.draws.push_back(std::move(st));
  }
  return out;
}

}  // namespace delaycast
