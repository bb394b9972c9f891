#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "riskadj/types.hpp"

namespace riskadj {

/// Precomputed event-time grid and per-row index ranges for counting-process
/// risk sets {rows: start < s <= stop}. Ranges are static per dataset, so a
/// fit only recomputes row weights between Newton iterations.
struct RiskIndex {
  std::vector<double> times;   // distinct event times, ascending
  std::vector<double> dcount;  // dN total at each time (Breslow ties)
  std::vector<int> lo, hi;     // per row: half-open range [lo, hi) into times
  std::vector<int> event_k;    // per row: index of own event time, -1 if none

  std::size_t n_times() const { return times.size(); }

  /// Grid from the dataset's own events.
  static RiskIndex from_events(const Dataset& d) {
    std::vector<double> t;
    for (std::size_t i = 0; i < d.n_rows(); ++i)
      if (d.event(i)) t.push_back(d.stop(i));
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    RiskIndex idx = against_times(d, t);
    for (std::size_t i = 0; i < d.n_rows(); ++i)
      if (d.event(i)) idx.dcount[static_cast<std::size_t>(idx.event_k[i])] += 1.0;
    return idx;
  }

  /// Ranges of this dataset's rows against an external time grid (Eq. 4
  /// evaluation of validation intervals against training jump times).
  static RiskIndex against_times(const Dataset& d, const std::vector<double>& t) {
    RiskIndex idx;
    idx.times = t;
    idx.dcount.assign(t.size(), 0.0);
    idx.lo.resize(d.n_rows());
    idx.hi.resize(d.n_rows());
    idx.event_k.assign(d.n_rows(), -1);
    for (std::size_t i = 0; i < d.n_rows(); ++i) {
      idx.lo[i] = static_cast<int>(std::upper_bound(t.begin(), t.end(), d.start(i)) - t.begin());
      idx.hi[i] = static_cast<int>(std::upper_bound(t.begin(), t.end(), d.stop(i)) - t.begin());
      if (d.event(i)) {
        auto it = std::lower_bound(t.begin(), t.end(), d.stop(i));
        if (it != t.end() && *it == d.stop(i))
          idx.event_k[i] = static_cast<int>(it - t.begin());
      }
    }
    return idx;
  }
};

/// Per-iteration risk sums for given row weights w_r = exp(eta_r - shift).
/// The shift cancels in every ratio; loglik corrects for it explicitly.
struct RiskSums {
  std::vector<double> S0;      // risk-set weight sum per event time (shifted scale)
  std::vector<double> dl;      // dcount / S0 per event time (shift cancels nowhere: shifted scale)
  std::vector<double> A;       // per row: sum over own range of dcount/S0 (shifted scale)
  double log_shift = 0.0;      // eta shift c: true S0 = S0_shifted * e^c

  static RiskSums compute(const RiskIndex& idx, const VectorXd& eta) {
    RiskSums s;
    const std::size_t n = idx.lo.size();
    const std::size_t K = idx.times.size();
    s.log_shift = eta.size() ? eta.maxCoeff() : 0.0;
    std::vector<double> diff(K + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (idx.lo[i] >= idx.hi[i]) continue;
      double w = std::exp(eta[static_cast<Eigen::Index>(i)] - s.log_shift);
      diff[static_cast<std::size_t>(idx.lo[i])] += w;
      diff[static_cast<std::size_t>(idx.hi[i])] -= w;
    }
    s.S0.resize(K);
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      acc += diff[k];
      s.S0[k] = acc;
    }
    s.dl.resize(K);
    std::vector<double> pref(K + 1, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      s.dl[k] = idx.dcount[k] > 0.0 ? idx.dcount[k] / s.S0[k] : 0.0;
      pref[k + 1] = pref[k] + s.dl[k];
    }
    s.A.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      s.A[i] = pref[static_cast<std::size_t>(idx.hi[i])] - pref[static_cast<std::size_t>(idx.lo[i])];
    return s;
  }
};

/// One random-effect term: a per-row group index into n_groups coefficients.
struct RandomEffectTerm {
  std::vector<int> group;  // per row
  int n_groups = 0;
};

/// Design for the (penalized) partial-likelihood problem: dense covariates
/// plus optional random-intercept terms entering the linear predictor.
struct CoxDesign {
  const RiskIndex* index = nullptr;
  MatrixXd X;                          // n x p, already on the optimization scale
  VectorXd offset;                     // fixed per-row offset (may be empty)
  std::vector<RandomEffectTerm> terms;
  std::vector<std::uint8_t> event;     // per row

  std::size_t n_rows() const { return static_cast<std::size_t>(X.rows()); }
  Eigen::Index p() const { return X.cols(); }
  Eigen::Index dim() const {
    Eigen::Index d = X.cols();
    for (const auto& t : terms) d += t.n_groups;
    return d;
  }

  static CoxDesign build(const Dataset& data, const RiskIndex& idx, const MatrixXd& X,
                         std::vector<RandomEffectTerm> terms = {}, VectorXd offset = {}) {
    CoxDesign d;
    d.index = &idx;
    d.X = X;
    d.offset = std::move(offset);
    d.terms = std::move(terms);
    d.event.resize(data.n_rows());
    for (std::size_t i = 0; i < data.n_rows(); ++i) d.event[i] = data.event(i) ? 1 : 0;
    return d;
  }

  VectorXd eta(const VectorXd& xi) const {
    VectorXd e = X * xi.head(p());
    Eigen::Index off = p();
    for (const auto& t : terms) {
      for (std::size_t i = 0; i < n_rows(); ++i)
        e[static_cast<Eigen::Index>(i)] += xi[off + t.group[i]];
      off += t.n_groups;
    }
    if (offset.size()) e += offset;
    return e;
  }
};

/// Value, gradient and Hessian of the Breslow-ties partial log-likelihood at
/// parameter xi = [beta; b_term1; b_term2...]. `penalty_inv_theta` holds 1/theta
/// per term (empty for plain Cox); penalized contributions are included in all
/// three outputs. The Hessian returned is the negative second derivative
/// (observed information), positive semidefinite.
struct CoxEval {
  double loglik = 0.0;        // penalized partial log-likelihood
  double loglik_unpen = 0.0;  // partial log-likelihood alone
  VectorXd grad;
  MatrixXd info;              // filled only when want_hessian
};

inline CoxEval eval_partial_loglik(const CoxDesign& d, const VectorXd& xi,
                                   const std::vector<double>& penalty_inv_theta = {},
                                   bool want_hessian = true) {
  const RiskIndex& idx = *d.index;
  const std::size_t n = d.n_rows();
  const std::size_t K = idx.n_times();
  const Eigen::Index p = d.p();
  const Eigen::Index D = d.dim();

  VectorXd eta = d.eta(xi);
  if (!eta.allFinite()) throw ComputeError("non-finite linear predictor");
  RiskSums sums = RiskSums::compute(idx, eta);

  CoxEval out;
  // loglik = sum_events eta_r - sum_k d_k log S0_k  (true scale)
  double ll = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (d.event[i]) ll += eta[static_cast<Eigen::Index>(i)];
  for (std::size_t k = 0; k < K; ++k)
    if (idx.dcount[k] > 0.0) ll -= idx.dcount[k] * (std::log(sums.S0[k]) + sums.log_shift);
  out.loglik_unpen = ll;

  // gradient: sum_events z_r - sum_r w_r A_r z_r   (w A is shift-invariant)
  VectorXd g = VectorXd::Zero(D);
  std::vector<double> wA(n);
  for (std::size_t i = 0; i < n; ++i)
    wA[i] = std::exp(eta[static_cast<Eigen::Index>(i)] - sums.log_shift) * sums.A[i];
  for (std::size_t i = 0; i < n; ++i) {
    const double ev = d.event[i] ? 1.0 : 0.0;
    const double c = ev - wA[i];
    if (c != 0.0) g.head(p) += c * d.X.row(static_cast<Eigen::Index>(i)).transpose();
    Eigen::Index off = p;
    for (const auto& t : d.terms) {
      g[off + t.group[i]] += c;
      off += t.n_groups;
    }
  }

  if (want_hessian) {
    MatrixXd H = MatrixXd::Zero(D, D);
    // part 1: sum_r w_r A_r z_r z_r^T, exploiting the one-hot group blocks
    for (std::size_t i = 0; i < n; ++i) {
      const double w = wA[i];
      if (w == 0.0) continue;
      const auto xi_row = d.X.row(static_cast<Eigen::Index>(i));
      H.topLeftCorner(p, p).noalias() += w * xi_row.transpose() * xi_row;
      Eigen::Index off1 = p;
      for (std::size_t t1 = 0; t1 < d.terms.size(); ++t1) {
        const Eigen::Index r1 = off1 + d.terms[t1].group[i];
        H.block(r1, 0, 1, p) += w * xi_row;
        H(r1, r1) += w;
        Eigen::Index off2 = p;
        for (std::size_t t2 = 0; t2 < t1; ++t2) {
          H(r1, off2 + d.terms[t2].group[i]) += w;
          off2 += d.terms[t2].n_groups;
        }
        off1 += d.terms[t1].n_groups;
      }
    }
    // part 2: -sum_k d_k zbar_k zbar_k^T, accumulated in chunks of event times
    const int chunk = 192;
    MatrixXd Zbar(D, chunk);
    std::vector<double> w_row(n);
    for (std::size_t i = 0; i < n; ++i)
      w_row[i] = std::exp(eta[static_cast<Eigen::Index>(i)] - sums.log_shift);
    for (std::size_t k0 = 0; k0 < K; k0 += chunk) {
      const int kc = static_cast<int>(std::min<std::size_t>(chunk, K - k0));
      Zbar.setZero();
      for (std::size_t i = 0; i < n; ++i) {
        int a = std::max(idx.lo[i], static_cast<int>(k0));
        int b = std::min(idx.hi[i], static_cast<int>(k0) + kc);
        if (a >= b) continue;
        const double w = w_row[i];
        for (int k = a; k < b; ++k) {
          if (idx.dcount[static_cast<std::size_t>(k)] == 0.0) continue;
          const int col = k - static_cast<int>(k0);
          Zbar.col(col).head(p) += w * d.X.row(static_cast<Eigen::Index>(i)).transpose();
          Eigen::Index off = p;
          for (const auto& t : d.terms) {
            Zbar(off + t.group[i], col) += w;
            off += t.n_groups;
          }
        }
      }
      for (int c = 0; c < kc; ++c) {
        std::size_t k = k0 + static_cast<std::size_t>(c);
        if (idx.dcount[k] == 0.0) continue;
        Zbar.col(c) *= std::sqrt(idx.dcount[k]) / sums.S0[k];
      }
      H.selfadjointView<Eigen::Lower>().rankUpdate(Zbar.leftCols(kc), -1.0);
    }
    H.triangularView<Eigen::StrictlyUpper>() = H.transpose();
    out.info = std::move(H);
  }

  // Gaussian penalty on random effects
  if (!penalty_inv_theta.empty()) {
    Eigen::Index off = p;
    for (std::size_t t = 0; t < d.terms.size(); ++t) {
      const double it = penalty_inv_theta[t];
      auto b = xi.segment(off, d.terms[t].n_groups);
      ll -= 0.5 * it * b.squaredNorm();
      g.segment(off, d.terms[t].n_groups) -= it * b;
      if (want_hessian)
        out.info.diagonal().segment(off, d.terms[t].n_groups).array() += it;
      off += d.terms[t].n_groups;
    }
  }
  out.loglik = ll;
  out.grad = std::move(g);
  return out;
}

/// Newton maximization with step halving. Returns iterations used; throws
/// ComputeError on non-convergence (message carries the last iterate norm).
struct NewtonResult {
  int iterations = 0;
  bool converged = false;
  double loglik = 0.0;
  CoxEval last;
};

inline NewtonResult newton_maximize(const CoxDesign& d, VectorXd& xi,
                                    const std::vector<double>& penalty_inv_theta = {},
                                    int max_iter = 50, double rel_tol = 1e-9) {
  NewtonResult res;
  CoxEval cur = eval_partial_loglik(d, xi, penalty_inv_theta, true);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::LDLT<MatrixXd> ldlt(cur.info);
    VectorXd step;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      step = ldlt.solve(cur.grad);
    } else {
      // ridge fallback for a semidefinite information matrix
      MatrixXd R = cur.info;
      R.diagonal().array() += 1e-8 * (1.0 + R.diagonal().maxCoeff());
      step = Eigen::LDLT<MatrixXd>(R).solve(cur.grad);
    }
    double scale = 1.0;
    CoxEval next;
    bool accepted = false;
    for (int h = 0; h < 30; ++h) {
      VectorXd cand = xi + scale * step;
      try {
        next = eval_partial_loglik(d, cand, penalty_inv_theta, true);
      } catch (const ComputeError&) {
        scale *= 0.5;
        continue;
      }
      if (next.loglik >= cur.loglik - 1e-12 * (std::fabs(cur.loglik) + 1.0)) {
        xi = cand;
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    ++res.iterations;
    if (!accepted) {
      // step halving exhausted: at a numerical optimum this is convergence
      res.converged =
          cur.grad.lpNorm<Eigen::Infinity>() < 1e-6 * (std::fabs(cur.loglik) + 1.0);
      res.last = std::move(cur);
      res.loglik = res.last.loglik;
      return res;
    }
    double change = std::fabs(next.loglik - cur.loglik) / (std::fabs(cur.loglik) + 1.0);
    cur = std::move(next);
    if (change < rel_tol) {
      res.converged = true;
      break;
    }
  }
  res.loglik = cur.loglik;
  res.last = std::move(cur);
  return res;
}

}  // namespace riskadj
