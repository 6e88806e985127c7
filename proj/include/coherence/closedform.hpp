#pragma once

#include <array>
#include <optional>
#include <string>

#include <Eigen/Dense>

namespace coherence {

/// Shared parameter bag for the calculators and the CLI. All rates are log
/// deviations; mu = log(r * pi_star).
struct NkParams {
  double beta = 0.99;
  double sigma = 1.0;
  double lambda = 0.4479;
  double psi = 1.5;
  double psi_x = 0.0;
  double phi = 0.0;
  double gamma = 1.0;
  double mu = 0.01;
  double p = 0.8;
  double q = 1.0;
  double r_L = -0.004;
  double pi_star = 1.0;
  double r = 1.0;
  double xi = 0.0;
};

/// Slope ratio (1-p)(1-p*beta) / (p*sigma*lambda) separating the flat-supply
/// from the steep-supply case in the transitory state.
double theta(double p, double beta, double sigma, double lambda);

/// Two-state coherency cutoff p+q-1 - (2-p-q)(1-p*beta-q*beta+beta)/(sigma*lambda).
double psi_cutoff(double p, double q, double beta, double sigma, double lambda);

struct AcsSupportBounds {
  bool r_inv_le_pistar = false;     // first existence condition
  double nonlinear_bound = 0.0;     // on -r_L, exact two-branch map
  double linear_bound = 0.0;        // on -r_L, piecewise-linear model
};
AcsSupportBounds acs_support_bounds(double psi, double p, double r, double pi_star);

/// Which branch of an existence condition applies.
enum class SupportCase { NoShockBound, ShockBound };

struct SupportRestriction {
  SupportCase kase = SupportCase::NoShockBound;
  bool r_cond = false;              // r^{-1} <= pi_star
  double theta = 0.0;
  std::optional<double> bound;      // on -r_L when kase == ShockBound
  bool exists(double r_L) const {
    if (!r_cond) return false;
    return kase == SupportCase::NoShockBound || -r_L <= *bound;
  }
};

SupportRestriction nk_tr_support(double psi, double p, double beta, double sigma,
                                 double lambda, double r, double pi_star);
SupportRestriction nk_op_support(double p, double beta, double sigma, double lambda,
                                 double r, double pi_star);

/// Admissible upper bound on the policy shock nu_t under the forward-looking
/// rule: nu <= -psi*rho*sigma*eps - psi*rho^2*M_lag - (1-psi)*log(r*pi_star).
double forward_tr_support(double psi, double rho, double sigma, double M_lag, double eps,
                          double r, double pi_star);

enum class UmpCase { High, Mid, Low, None };
std::string to_string(UmpCase c);

/// Trichotomy of the shadow-rate coherency condition at (psi, xi).
UmpCase ump_coherency_case(double psi, double xi, double p, double beta, double sigma,
                           double lambda);

struct AcsStrCondition {
  bool coherent = false;       // psi + phi < p
  double support_bound = 0.0;  // on -r_L when incoherent: mu*(psi+phi-p)/(psi*p)
};
AcsStrCondition acs_str_condition(double psi, double phi, double p, double mu);

struct NkItrBound {
  double gamma_R = 0.0;   // unique stable root of the inertial-rule cubic
  double gamma_pi = 0.0;  // (gamma_R - phi)/psi
  double gamma_x = 0.0;   // gamma_pi (1 - beta*gamma_R)/lambda
  double r_bar_L = 0.0;   // bound on -r_L for the ZIR-transitory/PIR-absorbing rule
};

/// Throws std::domain_error ("indeterminate-manifold") when the cubic has zero
/// or multiple roots inside the unit circle. Roots are found via the companion
/// matrix; "stable" means |root| < 1 - 1e-10 with |imag| < 1e-10.
NkItrBound nk_itr_bound(double beta, double sigma, double lambda, double psi, double phi,
                        double p, double mu);

/// Persistence cutoff at which theta crosses 1:
/// (1 + beta + sigma*lambda - sqrt((1+beta+sigma*lambda)^2 - 4 beta)) / (2 beta).
double ns_p_l_star(double beta, double sigma, double lambda);

struct Table2Entry {
  std::string regime;        // e.g. "(PIR,PIR)"
  double pi_transitory = 0;  // inflation while the shock lasts
  double pi_absorbing = 0;   // inflation after absorption
  double window_lo = 0;      // admissible -r_L interval (open)
  double window_hi = 0;
  bool valid = false;        // -r_L inside the window
};

/// The four candidate two-state solutions with their validity windows.
std::array<Table2Entry, 4> table2_solutions(double psi, double p, double mu, double r_L);

struct SunspotForms {
  std::array<Eigen::Vector2d, 4> pi;  // candidates, all-slack first
  double a_p = 0.0;
  double a_q = 0.0;
  double identity = 0.0;  // a_p + a_q + sigma*lambda (= sigma*lambda*psi_cutoff)
};
SunspotForms sunspot_closed_forms(double psi, double p, double q, double mu, double beta,
                                  double sigma, double lambda);

}  // namespace coherence
