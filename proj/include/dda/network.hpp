#pragma once

// Random gossip weight matrices A_k and their mixing diagnostics.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dda/errors.hpp"
#include "dda/linalg.hpp"
#include "dda/schedule.hpp"

namespace dda {

using Rng = std::mt19937_64;

/// Undirected simple graph on nodes 0..m-1.
class Graph {
public:
  Graph() = default;
  Graph(int m, std::vector<std::pair<int, int>> edges) : m_(m), adj_(static_cast<std::size_t>(std::max(m, 0))) {
    if (m < 1) throw ConfigError("graph: node count must be at least 1");
    std::set<std::pair<int, int>> seen;
    for (auto [i, j] : edges) {
      if (i < 0 || j < 0 || i >= m || j >= m) {
        std::ostringstream msg;
        msg << "graph: edge (" << i << "," << j << ") references a node outside 0.." << m - 1;
        throw ConfigError(msg.str());
      }
      if (i == j) throw ConfigError("graph: self loops are not allowed");
      auto key = std::minmax(i, j);
      if (!seen.insert({key.first, key.second}).second) continue;
      edges_.emplace_back(key.first, key.second);
      adj_[static_cast<std::size_t>(i)].push_back(j);
      adj_[static_cast<std::size_t>(j)].push_back(i);
    }
    for (auto& a : adj_) std::sort(a.begin(), a.end());
  }

  static Graph complete(int m) {
    std::vector<std::pair<int, int>> e;
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j) e.emplace_back(i, j);
    return Graph(m, std::move(e));
  }

  static Graph ring(int m) {
    std::vector<std::pair<int, int>> e;
    if (m == 2) e.emplace_back(0, 1);
    if (m > 2)
      for (int i = 0; i < m; ++i) e.emplace_back(i, (i + 1) % m);
    return Graph(m, std::move(e));
  }

  [[nodiscard]] int nodes() const { return m_; }
  [[nodiscard]] const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  [[nodiscard]] const std::vector<int>& neighbors(int i) const { return adj_[static_cast<std::size_t>(i)]; }

  [[nodiscard]] bool connected() const {
    if (m_ <= 1) return true;
    std::vector<char> seen(static_cast<std::size_t>(m_), 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    int count = 1;
    while (!q.empty()) {
      const int v = q.front();
      q.pop();
      for (int w : neighbors(v)) {
        if (!seen[static_cast<std::size_t>(w)]) {
          seen[static_cast<std::size_t>(w)] = 1;
          ++count;
          q.push(w);
        }
      }
    }
    return count == m_;
  }

  [[nodiscard]] bool regular() const {
    return std::all_of(adj_.begin(), adj_.end(), [&](const auto& a) { return a.size() == adj_[0].size(); });
  }

private:
  int m_ = 0;
  std::vector<std::pair<int, int>> edges_;
  std::vector<std::vector<int>> adj_;
};

enum class GossipKind { Pairwise, Broadcast, FixedDoublyStochastic };

inline const char* to_string(GossipKind k) {
  switch (k) {
    case GossipKind::Pairwise: return "pairwise";
    case GossipKind::Broadcast: return "broadcast";
    case GossipKind::FixedDoublyStochastic: return "fixed";
  }
  return "?";
}

/// One realization of the random weight matrix, stored by its generating
/// choice so it can be applied to a state in O(neighbourhood) time.
struct GossipDraw {
  GossipKind kind = GossipKind::Pairwise;
  int i = 0;  // pairwise: first endpoint; broadcast: broadcaster
  int j = 0;  // pairwise: second endpoint
};

class GossipScheme {
public:
  static GossipScheme pairwise(Graph g) {
    GossipScheme s;
    s.kind_ = GossipKind::Pairwise;
    s.graph_ = std::move(g);
    s.validate();
    return s;
  }

  static GossipScheme broadcast(Graph g, double mix = 0.5) {
    GossipScheme s;
    s.kind_ = GossipKind::Broadcast;
    s.graph_ = std::move(g);
    s.mix_ = mix;
    s.validate();
    return s;
  }

  /// A_k = W for every k. W must be doubly stochastic and nonnegative.
  static GossipScheme fixed(Matrix W) {
    GossipScheme s;
    s.kind_ = GossipKind::FixedDoublyStochastic;
    const auto m = static_cast<int>(W.rows());
    if (W.rows() != W.cols() || m < 1) throw ConfigError("fixed scheme: weight matrix must be square and nonempty");
    if ((W.array() < 0.0).any() || !W.allFinite()) throw ConfigError("fixed scheme: weights must be finite and nonnegative");
    const Vector ones = Vector::Ones(m);
    if ((W * ones - ones).cwiseAbs().maxCoeff() > 1e-12 || (W.transpose() * ones - ones).cwiseAbs().maxCoeff() > 1e-12) {
      throw ConfigError("fixed scheme: weight matrix must be doubly stochastic");
    }
    std::vector<std::pair<int, int>> e;
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j)
        if (W(i, j) > 0.0 || W(j, i) > 0.0) e.emplace_back(i, j);
    s.graph_ = Graph(m, std::move(e));
    s.fixed_ = std::move(W);
    s.validate();
    return s;
  }

  static GossipScheme averaging(int m) { return fixed(Matrix::Constant(m, m, 1.0 / m)); }

  [[nodiscard]] GossipKind kind() const { return kind_; }
  [[nodiscard]] const Graph& graph() const { return graph_; }
  [[nodiscard]] int agents() const { return graph_.nodes(); }
  [[nodiscard]] double mix() const { return mix_; }
  [[nodiscard]] const Matrix& fixed_matrix() const { return fixed_; }

  /// True when every realization is doubly stochastic (pairwise, fixed).
  [[nodiscard]] bool doubly_stochastic() const { return kind_ != GossipKind::Broadcast; }

  /// Number of equally likely realizations.
  [[nodiscard]] std::size_t atoms() const {
    switch (kind_) {
      case GossipKind::Pairwise: return graph_.edges().size();
      case GossipKind::Broadcast: return static_cast<std::size_t>(graph_.nodes());
      case GossipKind::FixedDoublyStochastic: return 1;
    }
    return 0;
  }

  [[nodiscard]] GossipDraw atom(std::size_t idx) const {
    GossipDraw d;
    d.kind = kind_;
    if (kind_ == GossipKind::Pairwise) {
      d.i = graph_.edges()[idx].first;
      d.j = graph_.edges()[idx].second;
    } else if (kind_ == GossipKind::Broadcast) {
      d.i = static_cast<int>(idx);
    }
    return d;
  }

  [[nodiscard]] GossipDraw draw(Rng& rng) const {
    if (kind_ == GossipKind::FixedDoublyStochastic) return atom(0);
    std::uniform_int_distribution<std::size_t> pick(0, atoms() - 1);
    return atom(pick(rng));
  }

  /// Dense m x m matrix of a realization.
  [[nodiscard]] Matrix to_matrix(const GossipDraw& d) const {
    const int m = agents();
    if (kind_ == GossipKind::FixedDoublyStochastic) return fixed_;
    Matrix A = Matrix::Identity(m, m);
    if (kind_ == GossipKind::Pairwise) {
      A(d.i, d.i) = A(d.j, d.j) = 0.5;
      A(d.i, d.j) = A(d.j, d.i) = 0.5;
    } else {
      for (int nb : graph_.neighbors(d.i)) {
        A(nb, nb) = 1.0 - mix_;
        A(nb, d.i) = mix_;
      }
    }
    return A;
  }

  /// Z <- A Z in place, one agent per row of Z.
  void apply(const GossipDraw& d, Matrix& Z) const {
    switch (kind_) {
      case GossipKind::Pairwise: {
        const Vector avg = 0.5 * (Z.row(d.i) + Z.row(d.j)).transpose();
        Z.row(d.i) = avg.transpose();
        Z.row(d.j) = avg.transpose();
        break;
      }
      case GossipKind::Broadcast: {
        const Vector src = Z.row(d.i).transpose();
        for (int nb : graph_.neighbors(d.i)) Z.row(nb) = (1.0 - mix_) * Z.row(nb) + mix_ * src.transpose();
        break;
      }
      case GossipKind::FixedDoublyStochastic: Z = fixed_ * Z; break;
    }
  }

private:
  void validate() const {
    if (!graph_.connected()) throw ConfigError("gossip scheme: communication graph is disconnected");
    if (kind_ == GossipKind::Pairwise && graph_.edges().empty()) {
      throw ConfigError("gossip scheme: pairwise gossip needs at least one edge");
    }
    if (kind_ == GossipKind::Broadcast) {
      if (!(mix_ > 0.0 && mix_ <= 1.0)) throw ConfigError("gossip scheme: broadcast mix must lie in (0, 1]");
      if (!graph_.regular()) throw ConfigError("gossip scheme: broadcast gossip requires a regular graph");
    }
  }

  GossipKind kind_ = GossipKind::Pairwise;
  Graph graph_;
  double mix_ = 0.5;
  Matrix fixed_;
};

inline Matrix sample_weight_matrix(const GossipScheme& s, Rng& rng) { return s.to_matrix(s.draw(rng)); }

struct MixingReport {
  double rho = 0.0;
  bool row_stochastic = false;
  bool column_stochastic_in_mean = false;
  bool doubly_stochastic_always = false;
  bool exact = true;          // enumeration (true) or Monte Carlo (false)
  std::size_t evaluated = 0;  // number of matrices inspected
  Matrix expected_disagreement;  // E[A^T (I - 11^T/m) A]
};

namespace detail {

inline Matrix disagreement_form(const Matrix& A) {
  const auto m = A.rows();
  const Matrix J = Matrix::Identity(m, m) - Matrix::Constant(m, m, 1.0 / static_cast<double>(m));
  return A.transpose() * J * A;
}

}  // namespace detail

/// Exact enumeration when the scheme has at most 1e6 equally likely
/// realizations, Monte Carlo over n_samples otherwise.
inline MixingReport mixing_report(const GossipScheme& s, std::size_t n_samples, std::uint64_t fallback_seed = 0x5eed) {
  if (n_samples < 1) throw PreconditionError("mixing_report: n_samples must be >= 1");
  if (!s.graph().connected()) throw ConfigError("mixing_report: disconnected graph");
  const int m = s.agents();
  MixingReport rep;
  Matrix sumE = Matrix::Zero(m, m);
  Matrix sumA = Matrix::Zero(m, m);
  bool rows_ok = true;
  bool cols_always = true;
  const Vector ones = Vector::Ones(m);
  auto visit = [&](const Matrix& A) {
    if ((A.array() < 0.0).any() || (A * ones - ones).cwiseAbs().maxCoeff() > 1e-14) rows_ok = false;
    if ((A.transpose() * ones - ones).cwiseAbs().maxCoeff() > 1e-12) cols_always = false;
    sumE += detail::disagreement_form(A);
    sumA += A;
  };
  std::size_t count = 0;
  if (s.atoms() <= 1000000) {
    for (std::size_t i = 0; i < s.atoms(); ++i) visit(s.to_matrix(s.atom(i)));
    count = s.atoms();
  } else {
    Rng rng(fallback_seed);
    for (std::size_t i = 0; i < n_samples; ++i) visit(sample_weight_matrix(s, rng));
    count = n_samples;
    rep.exact = false;
  }
  rep.evaluated = count;
  rep.expected_disagreement = sumE / static_cast<double>(count);
  const Vector colsum = (sumA / static_cast<double>(count)).transpose() * ones;
  rep.rho = spectral_norm(rep.expected_disagreement);
  rep.row_stochastic = rows_ok;
  rep.doubly_stochastic_always = cols_always;
  rep.column_stochastic_in_mean = (colsum - ones).cwiseAbs().maxCoeff() <= 1e-12;
  return rep;
}

/// Monte Carlo estimate of E[A^T (I - 11^T/m) A] with entrywise standard errors.
struct MixingEstimate {
  Matrix mean;
  Matrix std_error;
};

inline MixingEstimate estimate_disagreement_form(const GossipScheme& s, std::size_t n, Rng& rng) {
  const int m = s.agents();
  Matrix sum = Matrix::Zero(m, m);
  Matrix sumsq = Matrix::Zero(m, m);
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix F = detail::disagreement_form(sample_weight_matrix(s, rng));
    sum += F;
    sumsq += F.cwiseProduct(F);
  }
  const double nn = static_cast<double>(n);
  MixingEstimate e;
  e.mean = sum / nn;
  const Matrix var = (sumsq / nn - e.mean.cwiseProduct(e.mean)) * (nn / std::max(nn - 1.0, 1.0));
  e.std_error = (var.cwiseMax(0.0) / nn).cwiseSqrt();
  return e;
}

/// For i.i.d. schemes the step-size/mixing conditions reduce to rho < 1.
inline bool check_assumption_stepsize_vs_rho(double rho, const StepSizeSchedule& /*schedule*/) { return rho < 1.0; }

}  // namespace dda
