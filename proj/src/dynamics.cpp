#include "coherence/dynamics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace coherence {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

constexpr double kDivergenceCap = 1e8;
constexpr double kConvergenceTol = 1e-13;

}  // namespace

std::string Trajectory::status_string() const {
  switch (status) {
    case TrajectoryStatus::Converged: return "converged";
    case TrajectoryStatus::Diverged: return "diverged";
    case TrajectoryStatus::DomainBreakdown: return "domain-breakdown";
    case TrajectoryStatus::MaxIterations: return "max-iterations";
  }
  return "?";
}

std::string Trajectory::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "t,value\n";
  for (size_t t = 0; t < values.size(); ++t) os << t << ',' << values[t] << '\n';
  return os.str();
}

Trajectory iterate_absorbing(double pi0, double psi, double mu, int T) {
  require(psi > 0.0, "iterate_absorbing: psi must be positive");
  require(T >= 1, "iterate_absorbing: T must be >= 1");
  Trajectory tr;
  tr.values.reserve(static_cast<size_t>(T) + 1);
  tr.values.push_back(pi0);

  if (mu >= 0.0) {
    // Binding fixed point -mu sits on the flat branch (stable); the slack
    // fixed point 0 has slope psi.
    const auto unstable =
        psi > 1.0 ? FixedPoint::Stability::Unstable
                  : (psi < 1.0 ? FixedPoint::Stability::Stable : FixedPoint::Stability::SemiStable);
    if (mu > 0.0) {
      tr.fixed_points.push_back({-mu, FixedPoint::Stability::Stable});
      tr.fixed_points.push_back({0.0, unstable});
    } else {
      tr.fixed_points.push_back({0.0, psi > 1.0 ? FixedPoint::Stability::SemiStable : FixedPoint::Stability::Stable});
    }
  }

  double pi = pi0;
  for (int t = 0; t < T; ++t) {
    pi = std::max(-mu, psi * pi);
    tr.values.push_back(pi);
    if (!std::isfinite(pi) || std::abs(pi) > kDivergenceCap) {
      tr.status = TrajectoryStatus::Diverged;
      tr.event_index = t + 1;
      return tr;
    }
    for (const auto& fp : tr.fixed_points) {
      if (std::abs(pi - fp.value) < kConvergenceTol) {
        tr.status = TrajectoryStatus::Converged;
        tr.limit = fp.value;
        return tr;
      }
    }
  }
  if (mu < 0.0) {
    tr.status = TrajectoryStatus::Diverged;  // monotone escape, just not past the cap yet
    tr.event_index = T;
  }
  return tr;
}

namespace {

struct TransitoryMap {
  double psi, p, r, pi_star, r_L, pi_bar;
  double mu, bbar, kink, upper, zir_value;
  bool valid;

  TransitoryMap(double psi_, double p_, double r_, double pi_star_, double r_L_, double pi_bar_)
      : psi(psi_), p(p_), r(r_), pi_star(pi_star_), r_L(r_L_), pi_bar(pi_bar_) {
    mu = std::log(r * pi_star);
    bbar = pi_bar / pi_star;
    kink = -mu / psi;
    valid = r * pi_bar - 1.0 + p > 0.0;
    zir_value = valid ? std::log(p * bbar / (r * pi_bar - 1.0 + p)) - r_L
                      : std::numeric_limits<double>::quiet_NaN();
    upper = p < 1.0 ? (std::log(bbar) - std::log(1.0 - p)) / psi
                    : std::numeric_limits<double>::infinity();
  }

  bool in_domain(double pi) const { return pi < upper; }

  double step(double pi) const {
    if (pi <= kink) return zir_value;
    return std::log(p * bbar / (bbar - (1.0 - p) * std::exp(psi * pi))) + psi * pi - r_L;
  }

  double slope(double pi) const {
    if (pi < kink) return 0.0;
    const double e = (1.0 - p) * std::exp(psi * pi);
    return psi * bbar / (bbar - e);
  }
};

}  // namespace

Trajectory iterate_transitory(double pi0, double psi, double p, double r, double pi_star,
                              double r_L, double pi_bar, int T) {
  require(psi > 0.0, "iterate_transitory: psi must be positive");
  require(p > 0.0 && p <= 1.0, "iterate_transitory: p must be in (0,1]");
  require(r > 0.0 && pi_star > 0.0 && pi_bar > 0.0, "iterate_transitory: rates must be positive");
  require(T >= 1, "iterate_transitory: T must be >= 1");

  TransitoryMap map(psi, p, r, pi_star, r_L, pi_bar);
  Trajectory tr;
  tr.values.push_back(pi0);
  if (!map.valid) {
    tr.status = TrajectoryStatus::DomainBreakdown;
    tr.event_index = 0;
    return tr;
  }

  // Fixed points: the flat branch value if it lands on the flat branch, plus
  // any roots of the increasing branch located by a scan-and-bisect.
  if (map.zir_value <= map.kink)
    tr.fixed_points.push_back({map.zir_value, FixedPoint::Stability::Stable});
  {
    const double hi = std::min(map.upper - 1e-12, map.kink + 50.0);
    const int grid = 2000;
    double prev_x = map.kink, prev_g = map.step(prev_x) - prev_x;
    for (int i = 1; i <= grid; ++i) {
      const double x = map.kink + (hi - map.kink) * i / grid;
      const double gx = map.step(x) - x;
      if (std::isfinite(gx) && std::isfinite(prev_g) && prev_g * gx < 0.0) {
        double lo = prev_x, up = x;
        for (int it = 0; it < 100; ++it) {
          const double mid = 0.5 * (lo + up);
          ((map.step(mid) - mid) * prev_g > 0.0 ? lo : up) = mid;
        }
        const double root = 0.5 * (lo + up);
        const double sl = map.slope(root);
        tr.fixed_points.push_back(
            {root, std::abs(sl) < 1.0 ? FixedPoint::Stability::Stable
                                      : FixedPoint::Stability::Unstable});
      }
      prev_x = x;
      prev_g = gx;
    }
  }

  double pi = pi0;
  for (int t = 0; t < T; ++t) {
    if (!map.in_domain(pi)) {
      tr.status = TrajectoryStatus::DomainBreakdown;
      tr.event_index = t;
      return tr;
    }
    pi = map.step(pi);
    tr.values.push_back(pi);
    if (!std::isfinite(pi) || std::abs(pi) > kDivergenceCap) {
      tr.status = TrajectoryStatus::Diverged;
      tr.event_index = t + 1;
      return tr;
    }
    for (const auto& fp : tr.fixed_points) {
      if (std::abs(pi - fp.value) < kConvergenceTol) {
        tr.status = TrajectoryStatus::Converged;
        tr.limit = fp.value;
        return tr;
      }
    }
  }
  return tr;
}

ExistenceResult existence_nonlinear(double psi, double p, double r, double pi_star,
                                    double r_L, std::optional<double> pi_bar) {
  require(psi > 1.0, "existence_nonlinear: the condition applies to psi > 1");
  require(p > 0.0 && p <= 1.0, "existence_nonlinear: p must be in (0,1]");
  const double pb = pi_bar.value_or(pi_star);
  ExistenceResult out;
  out.r_cond = 1.0 / r <= pi_star;
  if (r * pb - 1.0 + p <= 0.0) {
    out.exists = false;
    out.bound = -std::numeric_limits<double>::infinity();
    out.margin = -std::numeric_limits<double>::infinity();
    return out;
  }
  const double mu = std::log(r * pi_star);
  out.bound = -mu / psi - std::log(p * (pb / pi_star) / (r * pb - 1.0 + p));
  out.margin = out.bound - (-r_L);
  out.boundary = std::abs(out.margin) < 1e-9;
  out.exists = out.r_cond && (out.margin >= 0.0 || out.boundary);
  return out;
}

QuasiDiffResult quasi_difference(const CanonicalModel& model,
                                 std::optional<Eigen::MatrixXd> user_Q) {
  QuasiDiffResult out;
  auto fail = [&](const std::string& why) {
    out.eligible = false;
    out.diagnostic = why;
    return out;
  };
  model.validate();
  if (model.m() != 1) return fail("only single-constraint models are supported");
  if (model.has_lag()) return fail("explicit lag loadings present; carry the predetermined variable inside Y instead");
  const int n = model.n;
  const int n1 = model.n_predetermined;
  if (n1 < 1) return fail("model has no predetermined components (n_predetermined = 0)");
  const int n2 = n - n1;

  std::vector<Eigen::MatrixXd> M(2), Binv(2);
  for (int s = 0; s < 2; ++s) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(model.B[static_cast<size_t>(s)]);
    if (!lu.isInvertible()) return fail(std::string("B") + std::to_string(s) + " is singular");
    Binv[static_cast<size_t>(s)] = lu.inverse();
    M[static_cast<size_t>(s)] = Binv[static_cast<size_t>(s)] * model.A[static_cast<size_t>(s)];
  }

  const auto& a = model.constraints[0].a;
  const auto& b = model.constraints[0].b;
  Eigen::MatrixXd Q;
  if (user_Q) {
    Q = *user_Q;
    if (Q.rows() != n || Q.cols() != n) return fail("user basis has the wrong dimensions");
  } else {
    const double comm = (M[0] * M[1] - M[1] * M[0]).cwiseAbs().maxCoeff();
    const double scale = 1.0 + M[0].cwiseAbs().maxCoeff() * M[1].cwiseAbs().maxCoeff();
    if (comm > 1e-10 * scale)
      return fail("regime maps do not commute; supply a triangularizing basis explicitly");
    // Eigenbasis of a generic combination triangularizes both maps when the
    // combination has distinct real eigenvalues.
    bool built = false;
    for (double c : {1.0, 0.6180339887498949, 0.0, 2.4142135623730951, -0.71}) {
      const Eigen::MatrixXd W = M[1] + c * M[0];
      Eigen::EigenSolver<Eigen::MatrixXd> es(W);
      if (es.info() != Eigen::Success) continue;
      const double wscale = 1.0 + W.cwiseAbs().maxCoeff();
      if (es.eigenvalues().imag().cwiseAbs().maxCoeff() > 1e-9 * wscale) continue;
      Eigen::MatrixXd V = es.eigenvectors().real();
      // Distinctness proxy: the eigenvector matrix must be well conditioned.
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(V);
      if (svd.singularValues()(n - 1) < 1e-8 * svd.singularValues()(0)) continue;
      // Predetermined columns are the ones the constraint cannot see.
      std::vector<int> pre, rest;
      for (int j = 0; j < n; ++j) {
        const Eigen::VectorXd q = V.col(j);
        const double qa = std::abs(a.dot(q));
        const double qb = std::abs(b.dot(q));
        const double tol = 1e-9 * q.norm() * (1.0 + a.norm() + b.norm());
        (qa <= tol && qb <= tol ? pre : rest).push_back(j);
      }
      if (static_cast<int>(pre.size()) != n1) continue;
      Q.resize(n, n);
      int col = 0;
      for (int j : pre) Q.col(col++) = V.col(j);
      for (int j : rest) Q.col(col++) = V.col(j);
      for (int j = 0; j < n; ++j) {
        // Deterministic scaling: largest entry +1.
        Eigen::Index imax;
        Q.col(j).cwiseAbs().maxCoeff(&imax);
        Q.col(j) /= Q(imax, j);
      }
      built = true;
      break;
    }
    if (!built)
      return fail("no real simultaneous triangularizing basis found (complex or repeated spectrum)");
  }

  Eigen::FullPivLU<Eigen::MatrixXd> qlu(Q);
  if (!qlu.isInvertible()) return fail("triangularizing basis is singular");
  const Eigen::MatrixXd Qi = qlu.inverse();

  out.Lambda.resize(2);
  for (int s = 0; s < 2; ++s) {
    out.Lambda[static_cast<size_t>(s)] = Qi * M[static_cast<size_t>(s)] * Q;
    const auto& L = out.Lambda[static_cast<size_t>(s)];
    double below = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < i; ++j) below = std::max(below, std::abs(L(i, j)));
    if (below > 1e-10 * (1.0 + L.cwiseAbs().maxCoeff()))
      return fail(std::string("basis does not triangularize the regime-") + std::to_string(s) + " map");
  }
  const Eigen::MatrixXd Q1 = Q.leftCols(n1);
  if ((a.transpose() * Q1).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + a.norm()) ||
      (b.transpose() * Q1).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + b.norm()))
    return fail("constraint loads on the predetermined directions");

  const Eigen::MatrixXd Qi22 = Qi.bottomRightCorner(n2, n2);
  Eigen::FullPivLU<Eigen::MatrixXd> q22(Qi22);
  if (!q22.isInvertible()) return fail("inverse-basis corner is singular");
  const Eigen::MatrixXd Tmat = q22.inverse() * Qi.bottomRows(n2);

  CanonicalModel red;
  red.n = n2;
  red.n_x = model.n_x;
  red.A.resize(2);
  red.B.assign(2, Eigen::MatrixXd::Identity(n2, n2));
  red.C.resize(2);
  red.D.resize(2);
  for (int s = 0; s < 2; ++s) {
    red.A[static_cast<size_t>(s)] =
        q22.inverse() * out.Lambda[static_cast<size_t>(s)].bottomRightCorner(n2, n2) * Qi22;
    red.C[static_cast<size_t>(s)] = Tmat * Binv[static_cast<size_t>(s)] * model.C[static_cast<size_t>(s)];
    red.D[static_cast<size_t>(s)] = Tmat * Binv[static_cast<size_t>(s)] * model.D[static_cast<size_t>(s)];
  }
  ConstraintSpec cs;
  const Eigen::MatrixXd Q2 = Q.rightCols(n2);
  cs.a = (a.transpose() * Q2 * Qi22).transpose();
  cs.b = (b.transpose() * Q2 * Qi22).transpose();
  cs.c = model.constraints[0].c;
  cs.d = model.constraints[0].d;
  red.constraints = {cs};
  red.validate();

  out.eligible = true;
  out.reduced = std::move(red);
  out.Q = std::move(Q);
  out.transform = std::move(Tmat);
  return out;
}

namespace {

struct LagSystem {
  const CanonicalModel& model;
  const MarkovChain& chain;
  Eigen::VectorXd g;                 // zero vector when absent
  std::vector<Eigen::VectorXd> h;    // per regime, zero vectors when absent

  LagSystem(const CanonicalModel& md, const MarkovChain& ch) : model(md), chain(ch) {
    g = md.g.size() ? md.g : Eigen::VectorXd::Zero(md.n);
    if (md.h.empty())
      h.assign(static_cast<size_t>(md.regime_count()), Eigen::VectorXd::Zero(md.n));
    else
      h = md.h;
  }

  Eigen::VectorXd g_residual(const Eigen::MatrixXd& G, const RegimeConfig& J) const {
    const int n = model.n, k = chain.k();
    Eigen::VectorXd F(n * k);
    const Eigen::MatrixXd GE = G * chain.kernel.transpose();  // column i = G K' e_i
    for (int i = 0; i < k; ++i) {
      const int s = J.regime_of(i);
      F.segment(i * n, n) = model.A[static_cast<size_t>(s)] * G.col(i) + h[static_cast<size_t>(s)] +
                            g.dot(G.col(i)) * (model.B[static_cast<size_t>(s)] * GE.col(i));
    }
    return F;
  }

  Eigen::MatrixXd g_jacobian(const Eigen::MatrixXd& G, const RegimeConfig& J) const {
    const int n = model.n, k = chain.k();
    Eigen::MatrixXd Jac = Eigen::MatrixXd::Zero(n * k, n * k);
    const Eigen::MatrixXd GE = G * chain.kernel.transpose();
    for (int i = 0; i < k; ++i) {
      const int s = J.regime_of(i);
      const auto& B = model.B[static_cast<size_t>(s)];
      const double gi = g.dot(G.col(i));
      const Eigen::VectorXd Bu = B * GE.col(i);
      for (int j = 0; j < k; ++j) {
        auto block = Jac.block(i * n, j * n, n, n);
        block = gi * chain.kernel(i, j) * B;
        if (i == j) {
          block += model.A[static_cast<size_t>(s)];
          block += Bu * g.transpose();
        }
      }
    }
    return Jac;
  }

  /// Stage/stationary coefficient matrix for the linear Z solve given G.
  Eigen::MatrixXd z_matrix(const Eigen::MatrixXd& G, const RegimeConfig& J) const {
    const int n = model.n, k = chain.k();
    Eigen::MatrixXd Mz = Eigen::MatrixXd::Zero(n * k, n * k);
    const Eigen::MatrixXd GE = G * chain.kernel.transpose();
    for (int i = 0; i < k; ++i) {
      const int s = J.regime_of(i);
      const auto& B = model.B[static_cast<size_t>(s)];
      for (int j = 0; j < k; ++j) {
        auto block = Mz.block(i * n, j * n, n, n);
        block = chain.kernel(i, j) * B;
        if (i == j) {
          block += model.A[static_cast<size_t>(s)];
          block += (B * GE.col(i)) * g.transpose();
        }
      }
    }
    return Mz;
  }

  Eigen::VectorXd z_rhs(const RegimeConfig& J) const {
    const int n = model.n, k = chain.k();
    Eigen::VectorXd rhs(n * k);
    for (int i = 0; i < k; ++i) {
      const int s = J.regime_of(i);
      rhs.segment(i * n, n) = -(model.C[static_cast<size_t>(s)] * chain.support.col(i) +
                                model.D[static_cast<size_t>(s)] * chain.expected_next(i));
    }
    return rhs;
  }

  Eigen::VectorXd z_residual(const Eigen::MatrixXd& G, const Eigen::MatrixXd& Z,
                             const RegimeConfig& J) const {
    Eigen::VectorXd z(model.n * chain.k());
    for (int i = 0; i < chain.k(); ++i) z.segment(i * model.n, model.n) = Z.col(i);
    return z_matrix(G, J) * z - z_rhs(J);
  }
};

}  // namespace

std::vector<GzSolution> solve_gz(const CanonicalModel& model, const MarkovChain& chain,
                                 const RegimeConfig& J0, const GzOptions& opts) {
  model.validate();
  require(chain.n_x() == model.n_x, "solve_gz: chain and model disagree on n_x");
  require(J0.k == chain.k() && J0.m == model.m(), "solve_gz: configuration shape mismatch");
  const int n = model.n, k = chain.k();
  LagSystem sys(model, chain);

  auto newton = [&](Eigen::MatrixXd G) -> std::optional<Eigen::MatrixXd> {
    for (int it = 0; it < opts.max_iterations; ++it) {
      const Eigen::VectorXd F = sys.g_residual(G, J0);
      const double fn = F.cwiseAbs().maxCoeff();
      if (fn < opts.newton_tol) return G;
      const Eigen::MatrixXd Jac = sys.g_jacobian(G, J0);
      Eigen::FullPivLU<Eigen::MatrixXd> lu(Jac);
      if (!lu.isInvertible()) return std::nullopt;
      const Eigen::VectorXd step = lu.solve(-F);
      double lambda = 1.0;
      const double f0 = F.squaredNorm();
      bool accepted = false;
      for (int half = 0; half < 30; ++half) {
        Eigen::MatrixXd Gtry = G;
        for (int i = 0; i < k; ++i) Gtry.col(i) += lambda * step.segment(i * n, n);
        if (sys.g_residual(Gtry, J0).squaredNorm() < (1.0 - 1e-4 * lambda) * f0) {
          G = std::move(Gtry);
          accepted = true;
          break;
        }
        lambda *= 0.5;
      }
      if (!accepted) return std::nullopt;
    }
    const Eigen::VectorXd F = sys.g_residual(G, J0);
    if (F.cwiseAbs().maxCoeff() < opts.newton_tol) return G;
    return std::nullopt;
  };

  // Deterministic start list: the flat rule, single-state quadratic roots
  // replicated across states, then coarse constant offsets.
  std::vector<Eigen::MatrixXd> starts;
  starts.push_back(Eigen::MatrixXd::Zero(n, k));
  auto single_state_root = [&](int regime, const Eigen::VectorXd& v0) -> std::optional<Eigen::VectorXd> {
    const auto& A = model.A[static_cast<size_t>(regime)];
    const auto& B = model.B[static_cast<size_t>(regime)];
    const auto& hs = sys.h[static_cast<size_t>(regime)];
    Eigen::VectorXd v = v0;
    for (int it = 0; it < 80; ++it) {
      const Eigen::VectorXd F = A * v + hs + sys.g.dot(v) * (B * v);
      if (F.cwiseAbs().maxCoeff() < 1e-12) return v;
      Eigen::MatrixXd Jc = A + sys.g.dot(v) * B + (B * v) * sys.g.transpose();
      Eigen::FullPivLU<Eigen::MatrixXd> lu(Jc);
      if (!lu.isInvertible()) return std::nullopt;
      v += lu.solve(-F);
      if (!v.allFinite()) return std::nullopt;
    }
    return std::nullopt;
  };
  const int slack_all = model.regime_count() - 1;
  for (int regime : {slack_all, 0}) {
    for (double seed : {0.0, 0.1, -0.1}) {
      if (auto v = single_state_root(regime, Eigen::VectorXd::Constant(n, seed)))
        starts.push_back(v->replicate(1, k));
    }
  }
  for (double c : {0.1, -0.1, 0.5, -0.5}) starts.push_back(Eigen::MatrixXd::Constant(n, k, c));
  if (static_cast<int>(starts.size()) > opts.max_starts)
    starts.resize(static_cast<size_t>(opts.max_starts));

  std::vector<GzSolution> roots;
  for (const auto& start : starts) {
    auto G = newton(start);
    if (!G) continue;
    bool dup = false;
    for (const auto& r : roots)
      if ((r.G - *G).cwiseAbs().maxCoeff() < opts.dedup_tol) {
        dup = true;
        break;
      }
    if (dup) continue;
    // Z is linear given G.
    const Eigen::MatrixXd Mz = sys.z_matrix(*G, J0);
    const auto det = detail::classified_det(Mz, opts.det_tol);
    if (det.degenerate) continue;
    const Eigen::VectorXd zv = Eigen::PartialPivLU<Eigen::MatrixXd>(Mz).solve(sys.z_rhs(J0));
    GzSolution sol;
    sol.G = *G;
    sol.Z.resize(n, k);
    for (int i = 0; i < k; ++i) sol.Z.col(i) = zv.segment(i * n, n);
    sol.residual = std::max(sys.g_residual(sol.G, J0).cwiseAbs().maxCoeff(),
                            sys.z_residual(sol.G, sol.Z, J0).cwiseAbs().maxCoeff());
    if (sol.residual < opts.newton_tol * 10) roots.push_back(std::move(sol));
  }
  std::sort(roots.begin(), roots.end(), [](const GzSolution& x, const GzSolution& y) {
    for (int i = 0; i < x.G.size(); ++i) {
      const double a = x.G.reshaped()(i), b = y.G.reshaped()(i);
      if (a != b) return a < b;
    }
    return false;
  });
  return roots;
}

namespace {

struct StageRule {
  RegimeConfig config;
  Eigen::MatrixXd G, Z;
};

struct BranchOutcome {
  std::vector<BackwardPath> survivors;
  std::uint64_t explored = 0, pruned_singular = 0, pruned_infeasible = 0;
  std::vector<StageCcRecord> stage_cc;
};

class BackwardExplorer {
 public:
  BackwardExplorer(const CanonicalModel& model, const MarkovChain& chain, int T, double y0,
                   const BackwardOptions& opts)
      : model_(model), chain_(chain), sys_(model, chain), T_(T), y0_(y0), opts_(opts) {
    shocks_ = opts.shock_sequence;
    if (shocks_.empty()) shocks_.assign(static_cast<size_t>(T), 0);
    require(static_cast<int>(shocks_.size()) >= T, "backward_solve: shock sequence shorter than T");
    for (int s : shocks_) require(s >= 0 && s < chain.k(), "backward_solve: shock index out of range");
  }

  BranchOutcome explore(const RegimeConfig& J0, const Eigen::MatrixXd& Gterm,
                        const Eigen::MatrixXd& Zterm) {
    BranchOutcome out;
    terminal_ = StageRule{J0, Gterm, Zterm};
    path_.clear();
    dfs(out, T_ - 1, Gterm, Zterm);
    return out;
  }

 private:
  void dfs(BranchOutcome& out, int stage, const Eigen::MatrixXd& Gnext,
           const Eigen::MatrixXd& Znext) {
    if (stage == 0) {
      ++out.explored;
      verify_leaf(out);
      return;
    }
    const int n = model_.n, k = chain_.k();
    const std::uint64_t total = 1ull << (model_.m() * k);
    const Eigen::MatrixXd GE = Gnext * chain_.kernel.transpose();
    // Per-state stage matrices depend only on the state regime, not the whole
    // configuration: precompute per (state, regime block).
    const int rblocks = model_.regime_count();
    std::vector<std::vector<std::optional<Eigen::PartialPivLU<Eigen::MatrixXd>>>> lus(
        static_cast<size_t>(k));
    std::vector<std::vector<detail::DetResult>> dets(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
      lus[static_cast<size_t>(i)].resize(static_cast<size_t>(rblocks));
      dets[static_cast<size_t>(i)].resize(static_cast<size_t>(rblocks));
      for (int s = 0; s < rblocks; ++s) {
        Eigen::MatrixXd S = model_.A[static_cast<size_t>(s)] +
                            (model_.B[static_cast<size_t>(s)] * GE.col(i)) * sys_.g.transpose();
        dets[static_cast<size_t>(i)][static_cast<size_t>(s)] =
            detail::classified_det(S, opts_.det_tol);
        lus[static_cast<size_t>(i)][static_cast<size_t>(s)].emplace(S);
      }
    }

    // Stage-wise same-sign check across all configurations.
    {
      int sign = 0;
      bool mixed = false, degenerate = false;
      for (std::uint64_t idx = 0; idx < total && !(mixed && degenerate); ++idx) {
        const RegimeConfig J = RegimeConfig::from_index(idx, model_.m(), k);
        int s = 1;
        bool deg = false;
        for (int i = 0; i < k; ++i) {
          const auto& d = dets[static_cast<size_t>(i)][static_cast<size_t>(J.regime_of(i))];
          if (d.degenerate) deg = true;
          s *= d.sign;
        }
        if (deg) {
          degenerate = true;
          continue;
        }
        if (sign == 0)
          sign = s;
        else if (s != sign)
          mixed = true;
      }
      if (out.stage_cc.size() < 64) {
        StageCcRecord rec;
        rec.terminal = terminal_.config;
        rec.stage = stage;
        rec.verdict = degenerate ? Verdict::Degenerate
                                 : (mixed ? Verdict::IncoherentOrIncomplete
                                          : Verdict::CoherentAndComplete);
        out.stage_cc.push_back(rec);
      }
    }

    for (std::uint64_t idx = 0; idx < total; ++idx) {
      const RegimeConfig J = RegimeConfig::from_index(idx, model_.m(), k);
      if (opts_.transition_allowed) {
        const RegimeConfig& next_cfg = path_.empty() ? terminal_.config : path_.back().config;
        if (!opts_.transition_allowed(J, next_cfg)) continue;
      }
      bool singular = false;
      for (int i = 0; i < k && !singular; ++i)
        if (dets[static_cast<size_t>(i)][static_cast<size_t>(J.regime_of(i))].degenerate)
          singular = true;
      if (singular) {
        ++out.pruned_singular;
        continue;
      }
      Eigen::MatrixXd Gt(n, k), Zt(n, k);
      for (int i = 0; i < k; ++i) {
        const int s = J.regime_of(i);
        const auto& lu = *lus[static_cast<size_t>(i)][static_cast<size_t>(s)];
        Gt.col(i) = lu.solve(-sys_.h[static_cast<size_t>(s)]);
        const Eigen::VectorXd rhs =
            model_.B[static_cast<size_t>(s)] * (Znext * chain_.kernel.row(i).transpose()) +
            model_.C[static_cast<size_t>(s)] * chain_.support.col(i) +
            model_.D[static_cast<size_t>(s)] * chain_.expected_next(i);
        Zt.col(i) = lu.solve(-rhs);
      }
      path_.push_back(StageRule{J, Gt, Zt});
      dfs(out, stage - 1, Gt, Zt);
      path_.pop_back();
    }
  }

  // path_ holds stages T-1, T-2, ..., 1 in push order; verify forward in time.
  void verify_leaf(BranchOutcome& out) {
    const int k = chain_.k();
    const int m = model_.m();
    // Constraint lag loadings must ride on the scalar state: h_j = kappa_j g.
    std::vector<double> kappa(static_cast<size_t>(m), 0.0);
    for (int j = 0; j < m; ++j) {
      const auto& hj = model_.constraints[static_cast<size_t>(j)].h;
      if (hj.size() == 0) continue;
      const double gg = sys_.g.squaredNorm();
      kappa[static_cast<size_t>(j)] = gg > 0.0 ? hj.dot(sys_.g) / gg : 0.0;
    }
    double y_prev = y0_;
    double min_margin = std::numeric_limits<double>::infinity();
    bool boundary = false;
    for (int t = 1; t <= T_; ++t) {
      const StageRule& rule = (t < T_) ? path_[static_cast<size_t>(T_ - 1 - t)] : terminal_;
      const StageRule& next = (t + 1 < T_) ? path_[static_cast<size_t>(T_ - 2 - t)] : terminal_;
      const Eigen::MatrixXd Yt = rule.G * y_prev + rule.Z;
      for (int i = 0; i < k; ++i) {
        const double yi = sys_.g.dot(Yt.col(i));
        const Eigen::VectorXd EY = (next.G * yi + next.Z) * chain_.kernel.row(i).transpose();
        for (int j = 0; j < m; ++j) {
          const auto& cs = model_.constraints[static_cast<size_t>(j)];
          const double margin = cs.a.dot(Yt.col(i)) + cs.b.dot(EY) +
                                cs.c.dot(chain_.support.col(i)) +
                                cs.d.dot(chain_.expected_next(i)) +
                                kappa[static_cast<size_t>(j)] * y_prev;
          if (std::abs(margin) < opts_.margin_tol) boundary = true;
          const bool want_slack = rule.config.slack(j, i);
          const double signed_margin = want_slack ? margin : -margin;
          if (signed_margin < -opts_.margin_tol) {
            ++out.pruned_infeasible;
            return;
          }
          min_margin = std::min(min_margin, std::abs(margin));
        }
      }
      y_prev = sys_.g.dot(Yt.col(shocks_[static_cast<size_t>(t - 1)]));
    }

    BackwardPath bp;
    bp.terminal = terminal_.config;
    for (int t = 1; t < T_; ++t) bp.stages.push_back(path_[static_cast<size_t>(T_ - 1 - t)].config);
    const StageRule& first = (T_ > 1) ? path_.back() : terminal_;
    bp.G1 = first.G;
    bp.Z1 = first.Z;
    bp.verified = true;
    bp.boundary = boundary;
    bp.min_margin = min_margin;
    bool stationary = true;
    for (const auto& st : path_)
      if (!(st.config == terminal_.config)) stationary = false;
    if (stationary && T_ > 1) {
      stationary = (first.G - terminal_.G).cwiseAbs().maxCoeff() < 1e-7 &&
                   (first.Z - terminal_.Z).cwiseAbs().maxCoeff() < 1e-7;
    }
    bp.stationary = stationary;
    out.survivors.push_back(std::move(bp));
  }

  const CanonicalModel& model_;
  const MarkovChain& chain_;
  LagSystem sys_;
  int T_;
  double y0_;
  const BackwardOptions& opts_;
  std::vector<int> shocks_;
  StageRule terminal_;
  std::vector<StageRule> path_;
};

}  // namespace

BackwardSolveResult backward_solve(const CanonicalModel& model, const MarkovChain& chain,
                                   int T, double y0, const BackwardOptions& opts) {
  model.validate();
  require(T >= 1, "backward_solve: T must be >= 1");
  if (model.g.size() > 0) {
    const double gg = model.g.squaredNorm();
    for (const auto& cs : model.constraints) {
      if (cs.h.size() == 0) continue;
      const double kappa = cs.h.dot(model.g) / gg;
      require((cs.h - kappa * model.g).norm() <= 1e-12 * (1.0 + cs.h.norm()),
              "backward_solve: constraint lag loading must be proportional to the selector g");
    }
  }
  const int mk = model.m() * chain.k();
  require(mk < 63, "backward_solve: configuration space too large to index");
  const double log2paths = static_cast<double>(mk) * (T - 1);
  if (log2paths > 62 || (1ull << static_cast<int>(log2paths)) > opts.path_budget) {
    std::ostringstream os;
    os << "backward_solve: 2^" << mk * (T - 1) << " regime paths exceed the budget of "
       << opts.path_budget << "; lower T or raise path_budget";
    throw std::invalid_argument(os.str());
  }

  std::vector<RegimeConfig> terminals;
  if (opts.terminal_configs) {
    terminals = *opts.terminal_configs;
  } else {
    for (std::uint64_t idx = 0; idx < (1ull << mk); ++idx)
      terminals.push_back(RegimeConfig::from_index(idx, model.m(), chain.k()));
  }

  struct Branch {
    RegimeConfig J0;
    Eigen::MatrixXd G, Z;
  };
  std::vector<Branch> branches;
  for (const auto& J0 : terminals)
    for (const auto& root : solve_gz(model, chain, J0, opts.gz))
      branches.push_back(Branch{J0, root.G, root.Z});

  std::vector<BranchOutcome> outcomes(branches.size());
  auto run = [&](size_t b) {
    BackwardExplorer ex(model, chain, T, y0, opts);
    outcomes[b] = ex.explore(branches[b].J0, branches[b].G, branches[b].Z);
  };
  const int threads = std::max(1, opts.threads);
  if (threads == 1) {
    for (size_t b = 0; b < branches.size(); ++b) run(b);
  } else {
    std::vector<std::future<void>> futs;
    std::atomic<size_t> next{0};
    for (int t = 0; t < threads; ++t)
      futs.push_back(std::async(std::launch::async, [&] {
        for (size_t b = next.fetch_add(1); b < branches.size(); b = next.fetch_add(1)) run(b);
      }));
    for (auto& f : futs) f.get();
  }

  BackwardSolveResult res;
  for (auto& oc : outcomes) {
    for (auto& s : oc.survivors) res.survivors.push_back(std::move(s));
    res.explored += oc.explored;
    res.pruned_singular += oc.pruned_singular;
    res.pruned_infeasible += oc.pruned_infeasible;
    for (auto& rec : oc.stage_cc)
      if (res.stage_cc.size() < 256) res.stage_cc.push_back(rec);
  }
  return res;
}

std::string BackwardSolveResult::paths_to_csv() const {
  std::ostringstream os;
  os << "path_id,t,regime_bits,terminal_bits,stationary,boundary\n";
  for (size_t pid = 0; pid < survivors.size(); ++pid) {
    const auto& p = survivors[pid];
    for (size_t t = 0; t < p.stages.size(); ++t)
      os << pid << ',' << (t + 1) << ',' << p.stages[t].bitstring() << ','
         << p.terminal.bitstring() << ',' << (p.stationary ? 1 : 0) << ','
         << (p.boundary ? 1 : 0) << '\n';
    os << pid << ',' << (p.stages.size() + 1) << ',' << p.terminal.bitstring() << ','
       << p.terminal.bitstring() << ',' << (p.stationary ? 1 : 0) << ',' << (p.boundary ? 1 : 0)
       << '\n';
  }
  return os.str();
}

}  // namespace coherence
