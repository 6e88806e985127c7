#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "coherence/markov.hpp"

namespace coherence {

/// One occasionally binding constraint. The regime indicator is
///   s = 1{ a'Y_t + b'Y_{t+1|t} + c'X_t + d'X_{t+1|t} + h'Y_{t-1} > 0 },
/// slack when the expression is positive, binding otherwise. `h` is empty for
/// purely forward-looking models.
struct ConstraintSpec {
  Eigen::VectorXd a;  // n
  Eigen::VectorXd b;  // n
  Eigen::VectorXd c;  // n_x
  Eigen::VectorXd d;  // n_x
  Eigen::VectorXd h;  // n or empty
};

/// Piecewise-linear expectational model
///   A_s Y_t + B_s Y_{t+1|t} + C_s X_t + D_s X_{t+1|t} + h_s y_{t-1} = 0,
/// with one set of coefficient blocks per regime combination. Regimes are
/// indexed by a bitmask over the constraint list: bit j set means constraint j
/// is slack. With m constraints the block vectors have 2^m entries.
///
/// Endogenous dynamics enter in scalar form: y_t = g'Y_t and per-regime lag
/// loadings h_s (n-vectors), equivalent to H_s = h_s g'. Models whose lagged
/// variable is carried inside Y_t instead (a predetermined leading component)
/// set n_predetermined and leave the lag blocks empty.
struct CanonicalModel {
  int n = 0;
  int n_x = 0;
  std::vector<Eigen::MatrixXd> A;  // 2^m entries, n x n
  std::vector<Eigen::MatrixXd> B;  // 2^m entries, n x n
  std::vector<Eigen::MatrixXd> C;  // 2^m entries, n x n_x
  std::vector<Eigen::MatrixXd> D;  // 2^m entries, n x n_x
  std::vector<ConstraintSpec> constraints;  // m >= 1

  std::vector<Eigen::VectorXd> h;  // lag loadings, 2^m entries or empty
  Eigen::VectorXd g;               // state selector, size n or empty
  int n_predetermined = 0;

  int m() const { return static_cast<int>(constraints.size()); }
  int regime_count() const { return 1 << m(); }
  bool has_lag() const;

  /// Throws std::invalid_argument naming the offending block on dimension
  /// mismatches or a missing constraint.
  void validate() const;
};

/// log(r * pi_star), the constant entering the binding-rate branch.
double mu_from(double r, double pi_star);

// Builders for the worked examples. Parameters are in log-deviation units;
// mu = log(r * pi_star).

/// Fisher equation plus contemporaneous Taylor rule, n = 1, X = (M, 1)'.
CanonicalModel build_acs(double psi, double mu);

/// Three-equation model with a contemporaneous Taylor rule, n = 2,
/// X = (u, eps, nu, 1)'.
CanonicalModel build_nk_tr(double beta, double sigma, double lambda, double psi,
                           double psi_x, double mu);

/// Three-equation model under optimal discretionary policy, n = 2,
/// X = (u, eps, 1)'.
CanonicalModel build_nk_op(double beta, double sigma, double lambda, double gamma,
                           double mu);

/// Inertial Taylor rule, n = 3 with Y = (pi, x, R)' and lagged R via g = e3.
CanonicalModel build_nk_itr(double beta, double sigma, double lambda, double psi,
                            double psi_x, double phi, double mu);

/// Inertial Taylor rule in the Fisher-equation model, n = 2 with
/// Y = (R_{t-1}, pi_t)': the lagged rate rides inside Y as a predetermined
/// first component, making the model eligible for quasi-differencing.
CanonicalModel build_acs_str(double psi, double phi, double mu);

/// Shadow-rate transmission: a fraction xi of the desired rate bypasses the
/// floor. In the binding regime the Euler row is
///   x = x' - sigma*((1-xi)(-mu) + xi*(psi pi + psi_x x + nu) - pi') + eps,
/// obtained by substituting R = -mu and the shadow rate R* into
/// x = x' - sigma*((1-xi) R + xi R* - pi') + eps; the slack regime has R = R*
/// and collapses to the plain Taylor-rule model. xi = 0 reproduces build_nk_tr
/// exactly; xi = 1 removes the floor from the Euler row.
CanonicalModel build_nk_ump(double beta, double sigma, double lambda, double psi,
                            double psi_x, double xi, double mu);

/// Floor on both the policy rate and expected inflation: two constraints,
/// n = 1, X = (M, 1)'.
CanonicalModel build_zlb_expectations(double psi, double mu);

/// JSON round trip. serialize() emits the flat A0/A1... schema for a single
/// constraint and a "blocks" map keyed by regime bitmask for m >= 2.
std::string serialize(const CanonicalModel& model);
CanonicalModel load_model(const std::string& json_text);
CanonicalModel load_model_file(const std::string& path);

/// Scalar-inflation reduction of the Taylor-rule model (psi_x = 0) on a chain
/// whose support rows are the eps states: Q pi = -lambda*sigma*max(-mu*1, psi*pi)
/// + lambda*eps with Q = I - K - beta (I-K) K - lambda*sigma*K. A slack state i
/// adds slack_addon to Q(i,i); a binding state adds rhs_binding_addon to the
/// right-hand side entry i.
struct ReducedNk {
  Eigen::MatrixXd Q;          // k x k
  double slack_addon = 0.0;   // lambda*sigma*psi
  Eigen::VectorXd rhs_base;   // lambda * eps support
  double rhs_binding_addon = 0.0;  // lambda*sigma*mu
  double psi = 0.0;
  double mu = 0.0;

  int k() const { return static_cast<int>(Q.rows()); }
};

ReducedNk reduce_nk(double beta, double sigma, double lambda, double psi, double mu,
                    const MarkovChain& chain);

}  // namespace coherence
