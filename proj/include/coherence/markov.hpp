#pragma once

#include <Eigen/Dense>
#include <string>

namespace coherence {

/// Finite-state first-order Markov chain driving the exogenous block.
/// Column i of `support` is the value of the exogenous vector in state i;
/// kernel(i,j) = Pr(next state = j | current state = i).
struct MarkovChain {
  Eigen::MatrixXd support;  // n_x x k
  Eigen::MatrixXd kernel;   // k x k, rows sum to one

  int k() const { return static_cast<int>(kernel.rows()); }
  int n_x() const { return static_cast<int>(support.rows()); }

  /// Conditional expectation of next-period exogenous vector in state i.
  Eigen::VectorXd expected_next(int i) const { return support * kernel.row(i).transpose(); }

  std::string to_json() const;
  static MarkovChain from_json(const std::string& text);
};

/// Validates dimensions and stochasticity, clamping tiny negative/overshooting
/// kernel entries (within 1e-14) to [0,1]. Throws std::invalid_argument.
MarkovChain make_chain(Eigen::MatrixXd support, Eigen::MatrixXd kernel);

/// Two-state chain with kernel [[p, 1-p], [1-q, q]] and support columns x1, x2.
MarkovChain two_state(double p, double q, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2);

/// Scalar convenience overload of two_state.
MarkovChain two_state(double p, double q, double x1, double x2);

/// Transitory/absorbing chain: state 1 carries the shock -r_L > 0 and persists
/// with probability p; state 2 carries 0 and is absorbing. Requires r_L < 0.
MarkovChain absorbing_chain(double p, double r_L);

/// Rouwenhorst discretization of an AR(1) with autocorrelation rho and
/// conditional standard deviation sigma_cond, on k >= 2 states. The grid is
/// evenly spaced on +/- sqrt(k-1) * sigma_cond / sqrt(1 - rho^2), so the
/// stationary variance matches sigma_cond^2 / (1 - rho^2) and the second
/// kernel eigenvalue equals rho.
MarkovChain rouwenhorst(double rho, double sigma_cond, int k);

struct StationaryResult {
  Eigen::VectorXd pi;  // pi * kernel = pi, entries >= 0, sums to 1
  bool unique;         // false when the chain has multiple ergodic classes
};

StationaryResult stationary_distribution(const MarkovChain& chain);

}  // namespace coherence
