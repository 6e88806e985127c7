#include "coherence/closedform.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace coherence {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

double theta(double p, double beta, double sigma, double lambda) {
  require(p > 0.0 && p <= 1.0, "theta: p must be in (0,1]");
  return (1.0 - p) * (1.0 - p * beta) / (p * sigma * lambda);
}

double psi_cutoff(double p, double q, double beta, double sigma, double lambda) {
  return p + q - 1.0 - (2.0 - p - q) * (1.0 - p * beta - q * beta + beta) / (sigma * lambda);
}

AcsSupportBounds acs_support_bounds(double psi, double p, double r, double pi_star) {
  require(psi > 0.0 && p > 0.0 && p <= 1.0, "acs_support_bounds: bad psi or p");
  const double rpi = r * pi_star;
  AcsSupportBounds out;
  out.r_inv_le_pistar = 1.0 / r <= pi_star;
  if (rpi < 1.0) return out;  // bounds void: already incoherent
  const double mu = std::log(rpi);
  out.nonlinear_bound = std::log((rpi - 1.0 + p) / p) - mu / psi;
  out.linear_bound = mu * (psi - p) / (psi * p);
  return out;
}

SupportRestriction nk_tr_support(double psi, double p, double beta, double sigma,
                                 double lambda, double r, double pi_star) {
  SupportRestriction out;
  out.r_cond = 1.0 / r <= pi_star;
  out.theta = theta(p, beta, sigma, lambda);
  if (out.theta > 1.0) {
    out.kase = SupportCase::NoShockBound;
  } else {
    out.kase = SupportCase::ShockBound;
    const double mu = std::log(r * pi_star);
    out.bound = mu * ((psi - p) / (psi * p) + out.theta / psi);
  }
  return out;
}

SupportRestriction nk_op_support(double p, double beta, double sigma, double lambda,
                                 double r, double pi_star) {
  SupportRestriction out;
  out.r_cond = 1.0 / r <= pi_star;
  out.theta = theta(p, beta, sigma, lambda);
  if (out.theta > 1.0) {
    out.kase = SupportCase::NoShockBound;
  } else {
    out.kase = SupportCase::ShockBound;
    out.bound = std::log(r * pi_star) / p;
  }
  return out;
}

double forward_tr_support(double psi, double rho, double sigma, double M_lag, double eps,
                          double r, double pi_star) {
  return -psi * rho * sigma * eps - psi * rho * rho * M_lag -
         (1.0 - psi) * std::log(r * pi_star);
}

std::string to_string(UmpCase c) {
  switch (c) {
    case UmpCase::High: return "high";
    case UmpCase::Mid: return "mid";
    case UmpCase::Low: return "low";
    case UmpCase::None: return "none";
  }
  return "?";
}

UmpCase ump_coherency_case(double psi, double xi, double p, double beta, double sigma,
                           double lambda) {
  require(xi > 0.0 && xi <= 1.0, "ump_coherency_case: xi must be in (0,1]");
  const double cut = psi_cutoff(p, 1.0, beta, sigma, lambda);
  if (psi > std::max(1.0, 1.0 / xi)) return UmpCase::High;
  if (psi > std::max(cut, cut / xi) && psi < std::min(1.0, 1.0 / xi)) return UmpCase::Mid;
  if (psi < std::min(cut, cut / xi)) return UmpCase::Low;
  return UmpCase::None;
}

AcsStrCondition acs_str_condition(double psi, double phi, double p, double mu) {
  AcsStrCondition out;
  out.coherent = psi + phi < p;
  out.support_bound = mu * (psi + phi - p) / (psi * p);
  return out;
}

NkItrBound nk_itr_bound(double beta, double sigma, double lambda, double psi, double phi,
                        double p, double mu) {
  // Cubic in gamma_R:
  //   beta g^3 + g^2 (psi*sigma - 1 - beta - beta*phi - lambda*sigma)
  //            + g (1 + phi + beta*phi + lambda*sigma*phi) - phi = 0.
  const double c2 = (psi * sigma - 1.0 - beta - beta * phi - lambda * sigma) / beta;
  const double c1 = (1.0 + phi + beta * phi + lambda * sigma * phi) / beta;
  const double c0 = -phi / beta;
  Eigen::Matrix3d companion;
  companion << 0, 0, -c0,
               1, 0, -c1,
               0, 1, -c2;
  Eigen::EigenSolver<Eigen::Matrix3d> es(companion);
  double gamma_R = 0.0;
  int stable_count = 0;
  for (int i = 0; i < 3; ++i) {
    const auto root = es.eigenvalues()(i);
    if (std::abs(root) < 1.0 - 1e-10 && std::abs(root.imag()) < 1e-10) {
      ++stable_count;
      gamma_R = root.real();
    }
  }
  if (stable_count != 1)
    throw std::domain_error("nk_itr_bound: indeterminate-manifold (found " +
                            std::to_string(stable_count) + " stable roots)");
  NkItrBound out;
  out.gamma_R = gamma_R;
  out.gamma_pi = (gamma_R - phi) / psi;
  out.gamma_x = out.gamma_pi * (1.0 - beta * gamma_R) / lambda;
  const double th = theta(p, beta, sigma, lambda);
  out.r_bar_L = mu * ((psi - p) / (psi * p) + th / psi + (phi / psi) * (1.0 - th) -
                      (1.0 - p) *
                          (lambda * out.gamma_x +
                           out.gamma_pi * (beta * (1.0 - p) + lambda * sigma)) /
                          (lambda * sigma * p));
  return out;
}

double ns_p_l_star(double beta, double sigma, double lambda) {
  const double s = 1.0 + beta + sigma * lambda;
  return (s - std::sqrt(s * s - 4.0 * beta)) / (2.0 * beta);
}

std::array<Table2Entry, 4> table2_solutions(double psi, double p, double mu, double r_L) {
  require(psi > p, "table2_solutions: requires psi > p (otherwise the test passes and the solution is unique)");
  const double outer = mu * (psi - p) / (psi * p);  // (PIR,PIR) and (ZIR,PIR) window
  const double inner = mu * (psi - 1.0) / psi;      // (PIR,ZIR) and (ZIR,ZIR) window
  const double shock = -r_L;
  std::array<Table2Entry, 4> out;
  out[0] = {"(PIR,PIR)", r_L * p / (psi - p), 0.0, 0.0, outer, shock > 0.0 && shock < outer};
  out[1] = {"(ZIR,PIR)", -r_L - mu / p, 0.0, 0.0, outer, shock > 0.0 && shock < outer};
  out[2] = {"(PIR,ZIR)", (p * r_L - (1.0 - p) * mu) / (psi - p), -mu, 0.0, inner,
            shock > 0.0 && shock < inner};
  out[3] = {"(ZIR,ZIR)", -r_L - mu, -mu, 0.0, inner, shock > 0.0 && shock < inner};
  return out;
}

SunspotForms sunspot_closed_forms(double psi, double p, double q, double mu, double beta,
                                  double sigma, double lambda) {
  SunspotForms out;
  const double sl = sigma * lambda;
  out.a_p = (p - 1.0) * (beta * (1.0 - p - q) + sl + 1.0);
  out.a_q = (q - 1.0) * (beta * (1.0 - p - q) + sl + 1.0);
  out.identity = out.a_p + out.a_q + sl;
  const double cut = psi_cutoff(p, q, beta, sigma, lambda);
  const double den_zp = psi * out.a_p + sl * (psi - cut);
  const double den_pz = psi * out.a_q + sl * (psi - cut);
  out.pi[0] = Eigen::Vector2d::Zero();  // all slack
  out.pi[1] = mu * Eigen::Vector2d(out.a_q + sl - sl * psi, out.a_q) / den_zp;  // (ZIR,PIR)
  out.pi[2] = mu * Eigen::Vector2d(out.a_p, out.a_p + sl - sl * psi) / den_pz;  // (PIR,ZIR)
  out.pi[3] = Eigen::Vector2d(-mu, -mu);  // all binding
  return out;
}

}  // namespace coherence
