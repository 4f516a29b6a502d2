#pragma once

// Intrinsic autoregressive (IAR) prior machinery. The precision structure
// Q = diag(degree) - W is rank deficient: its null space is spanned by the
// indicator vectors of the connected components, so densities are defined
// up to a constant which we fix to 0, and identifiability is restored by
// centering per component.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "delaycast/triangle.hpp"

namespace delaycast {

struct IarStructure {
  int S = 0;
  std::vector<std::vector<double>> Q;       // S x S, Q_ii = degree(i), Q_ij = -w_ij
  std::vector<int> component;               // component label per region
  std::vector<std::vector<int>> members;    // regions per component
  int rank = 0;                             // S minus component count
  std::vector<int> isolated;                // degree-0 regions (their IAR term is null)
  std::vector<std::pair<int, int>> edges;   // i < j with w_ij = 1
};

inline IarStructure build_iar(const RegionMap& map) {
  const auto diag = validate_adjacency(map);
  if (!diag.symmetric)
    throw std::invalid_argument("IAR structure needs a symmetric adjacency matrix");
  const int n = map.size();
  IarStructure iar;
  iar.S = n;
  iar.Q.assign(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) {
    iar.Q[i][i] = diag.degrees[i];
    for (int j = 0; j < n; ++j)
      if (j != i && map.adjacency[i][j]) {
        iar.Q[i][j] = -1.0;
        if (i < j) iar.edges.emplace_back(i, j);
      }
  }
  iar.component = component_labels(map.adjacency);
  const int n_components =
      iar.component.empty() ? 0 : 1 + *std::max_element(iar.component.begin(), iar.component.end());
  iar.members.assign(n_components, {});
  for (int i = 0; i < n; ++i) iar.members[iar.component[i]].push_back(i);
  iar.rank = n - n_components;
  iar.isolated = diag.isolated;
  return iar;
}

// delta' Q delta, evaluated as the sum of squared edge differences.
inline double iar_quad_form(std::span<const double> delta, const IarStructure& iar) {
  if (static_cast<int>(delta.size()) != iar.S)
    throw std::invalid_argument("delta length does not match the region count");
  double quad = 0.0;
  for (const auto& [i, j] : iar.edges) {
    const double diff = delta[i] - delta[j];
    quad += diff * diff;
  }
  return quad;
}

// (rank/2) log tau - (tau/2) delta' Q delta, normalizing constant fixed to 0.
inline double iar_logdensity(std::span<const double> delta, double tau,
                             const IarStructure& iar) {
  if (!(tau > 0.0)) throw std::domain_error("IAR precision must be positive");
  return 0.5 * iar.rank * std::log(tau) - 0.5 * tau * iar_quad_form(delta, iar);
}

// Subtracts each connected component's mean. When `removed` is given it
// receives one entry per component (the mean that was taken out), so the
// caller can absorb the level elsewhere.
inline std::vector<double> center_per_component(std::vector<double> delta,
                                                const IarStructure& iar,
                                                std::vector<double>* removed = nullptr) {
  if (static_cast<int>(delta.size()) != iar.S)
    throw std::invalid_argument("delta length does not match the region count");
  if (removed) removed->assign(iar.members.size(), 0.0);
  for (std::size_t c = 0; c < iar.members.size(); ++c) {
    double mean = 0.0;
    for (int i : iar.members[c]) mean += delta[i];
    mean /= static_cast<double>(iar.members[c].size());
    for (int i : iar.members[c]) delta[i] -= mean;
    if (removed) (*removed)[c] = mean;
  }
  return delta;
}

namespace detail {

// Cyclic Jacobi eigen decomposition for small symmetric matrices. Returns
// eigenvalues and column eigenvectors (a[][k] is the k-th eigenvector).
struct EigenDecomposition {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;  // vectors[i][k]: component i of vector k
};

inline EigenDecomposition jacobi_eigen(std::vector<std::vector<double>> a) {
  const int n = static_cast<int>(a.size());
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-26) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  EigenDecomposition out;
  out.values.resize(n);
  for (int i = 0; i < n; ++i) out.values[i] = a[i][i];
  out.vectors = std::move(v);
  return out;
}

}  // namespace detail

// Exact draw of an IAR effect with precision tau: independent normals on
// the positive-eigenvalue directions of Q, zero on the null space, then a
// centering pass to absorb numerical residue. Used by the simulator.
template <typename RngT>
std::vector<double> sample_iar(const IarStructure& iar, double tau, RngT& rng) {
  if (!(tau > 0.0)) throw std::domain_error("IAR precision must be positive");
  const int n = iar.S;
  auto eig = detail::jacobi_eigen(iar.Q);
  std::vector<double> delta(n, 0.0);
  for (int k = 0; k < n; ++k) {
    if (eig.values[k] < 1e-9) continue;  // null space of Q
    const double z = rng.normal() / std::sqrt(tau * eig.values[k]);
    for (int i = 0; i < n; ++i) delta[i] += z * eig.vectors[i][k];
  }
  return center_per_component(std::move(delta), iar);
}

}  // namespace delaycast
