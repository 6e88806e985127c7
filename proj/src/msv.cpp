#include "coherence/msv.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace coherence {

namespace {

// Shared enumeration engine: both the canonical and the reduced paths provide
// matrix/rhs/margins callbacks with identical shapes.
struct SystemHooks {
  int n, k, m;
  std::function<Eigen::MatrixXd(const RegimeConfig&)> matrix;
  std::function<Eigen::VectorXd(const RegimeConfig&)> rhs;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> margins;  // Y -> m x k
};

SystemHooks canonical_hooks(const CanonicalModel& model, const MarkovChain& chain) {
  return SystemHooks{
      model.n, chain.k(), model.m(),
      [&model, &chain](const RegimeConfig& J) { return assemble_A(model, chain, J); },
      [&model, &chain](const RegimeConfig& J) { return assemble_rhs(model, chain, J); },
      [&model, &chain](const Eigen::MatrixXd& Y) { return constraint_margins(model, chain, Y); }};
}

SystemHooks reduced_hooks(const ReducedNk& sys) {
  return SystemHooks{
      1, sys.k(), 1,
      [&sys](const RegimeConfig& J) { return assemble_A(sys, J); },
      [&sys](const RegimeConfig& J) { return assemble_rhs(sys, J); },
      [&sys](const Eigen::MatrixXd& Y) -> Eigen::MatrixXd {
        return (sys.psi * Y).array() + sys.mu;
      }};
}

RegimeSolveResult solve_one(const SystemHooks& sys, const RegimeConfig& J,
                            const MsvOptions& opts) {
  RegimeSolveResult out;
  const Eigen::MatrixXd A = sys.matrix(J);
  const auto det = detail::classified_det(A, opts.det_tol);
  if (det.degenerate) {
    out.status = RegimeStatus::DegenerateRegime;
    return out;
  }
  const Eigen::VectorXd rhs = sys.rhs(J);
  const Eigen::VectorXd y = Eigen::PartialPivLU<Eigen::MatrixXd>(A).solve(rhs);
  Eigen::MatrixXd Y(sys.n, sys.k);
  for (int i = 0; i < sys.k; ++i) Y.col(i) = y.segment(i * sys.n, sys.n);

  MsvSolution sol;
  sol.Y = Y;
  sol.regime = J;
  sol.residual_norm = (A * y - rhs).cwiseAbs().maxCoeff();
  sol.margins = sys.margins(Y);
  const double rtol = opts.residual_tol * (1.0 + rhs.cwiseAbs().maxCoeff());

  bool ok = sol.residual_norm < rtol;
  for (int j = 0; j < sys.m && ok; ++j) {
    for (int i = 0; i < sys.k; ++i) {
      const double mrg = sol.margins(j, i);
      if (std::abs(mrg) < opts.margin_tol) {
        sol.boundary_flag = true;
        continue;
      }
      const bool want_slack = J.slack(j, i);
      if ((mrg > 0.0) != want_slack) out.violated.emplace_back(j, i);
    }
  }
  if (!ok) {
    out.status = RegimeStatus::Infeasible;  // numerically unusable solve
    return out;
  }
  if (out.violated.empty()) {
    out.status = RegimeStatus::Solved;
    out.solution = std::move(sol);
  } else {
    out.status = RegimeStatus::Infeasible;
  }
  return out;
}

std::vector<MsvSolution> enumerate_all(const SystemHooks& sys, const MsvOptions& opts) {
  const int mk = sys.m * sys.k;
  if (mk >= 63) throw std::invalid_argument("enumerate_msv: configuration space too large to index");
  const std::uint64_t total = 1ull << mk;
  if (total > opts.enumeration_cap) {
    std::ostringstream os;
    os << "enumerate_msv: " << total << " configurations exceed the cap of "
       << opts.enumeration_cap << "; raise enumeration_cap to proceed";
    throw std::invalid_argument(os.str());
  }

  const int threads = std::max(1, opts.threads);
  std::vector<std::vector<MsvSolution>> found(static_cast<size_t>(threads));
  auto work = [&](int t) {
    for (std::uint64_t idx = static_cast<std::uint64_t>(t); idx < total;
         idx += static_cast<std::uint64_t>(threads)) {
      const RegimeConfig J = RegimeConfig::from_index(idx, sys.m, sys.k);
      auto res = solve_one(sys, J, opts);
      if (res.status == RegimeStatus::Solved)
        found[static_cast<size_t>(t)].push_back(std::move(*res.solution));
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  std::vector<MsvSolution> all;
  for (auto& v : found)
    for (auto& s : v) all.push_back(std::move(s));
  std::sort(all.begin(), all.end(),
            [](const MsvSolution& a, const MsvSolution& b) { return a.regime.index() < b.regime.index(); });

  // Merge knife-edge duplicates produced by adjacent configurations.
  std::vector<MsvSolution> dedup;
  for (auto& s : all) {
    bool merged = false;
    for (auto& kept : dedup) {
      if ((kept.Y - s.Y).cwiseAbs().maxCoeff() < opts.dedup_tol) {
        kept.merged_regimes.push_back(s.regime);
        kept.boundary_flag = kept.boundary_flag || s.boundary_flag;
        merged = true;
        break;
      }
    }
    if (!merged) dedup.push_back(std::move(s));
  }
  return dedup;
}

}  // namespace

RegimeSolveResult solve_regime(const CanonicalModel& model, const MarkovChain& chain,
                               const RegimeConfig& J, const MsvOptions& opts) {
  return solve_one(canonical_hooks(model, chain), J, opts);
}

RegimeSolveResult solve_regime(const ReducedNk& sys, const RegimeConfig& J,
                               const MsvOptions& opts) {
  return solve_one(reduced_hooks(sys), J, opts);
}

std::vector<MsvSolution> enumerate_msv(const CanonicalModel& model, const MarkovChain& chain,
                                       const MsvOptions& opts) {
  model.validate();
  if (model.has_lag())
    throw std::invalid_argument("enumerate_msv: model has lag loadings; use the backward solver");
  return enumerate_all(canonical_hooks(model, chain), opts);
}

std::vector<MsvSolution> enumerate_msv(const ReducedNk& sys, const MsvOptions& opts) {
  return enumerate_all(reduced_hooks(sys), opts);
}

VerificationRecord verify_solution(const CanonicalModel& model, const MarkovChain& chain,
                                   const Eigen::MatrixXd& Y, const MsvOptions& opts) {
  VerificationRecord rec;
  rec.margins = constraint_margins(model, chain, Y);
  rec.implied_regime.m = model.m();
  rec.implied_regime.k = chain.k();
  rec.implied_regime.bits.assign(static_cast<size_t>(model.m()), 0);
  for (int j = 0; j < model.m(); ++j)
    for (int i = 0; i < chain.k(); ++i) {
      if (rec.margins(j, i) > 0.0) rec.implied_regime.bits[static_cast<size_t>(j)] |= 1ull << i;
      if (std::abs(rec.margins(j, i)) < opts.margin_tol) rec.boundary_flag = true;
    }
  const Eigen::MatrixXd A = assemble_A(model, chain, rec.implied_regime);
  const Eigen::VectorXd rhs = assemble_rhs(model, chain, rec.implied_regime);
  Eigen::VectorXd y(model.n * chain.k());
  for (int i = 0; i < chain.k(); ++i) y.segment(i * model.n, model.n) = Y.col(i);
  rec.residual_norm = (A * y - rhs).cwiseAbs().maxCoeff();
  rec.passes = rec.residual_norm < opts.residual_tol * (1.0 + rhs.cwiseAbs().maxCoeff());
  return rec;
}

std::vector<MsvSolution> sunspot_enumerate(const CanonicalModel& model,
                                           const MarkovChain& sunspot,
                                           const Eigen::VectorXd& fundamental_x,
                                           const MsvOptions& opts) {
  if (fundamental_x.size() != model.n_x)
    throw std::invalid_argument("sunspot_enumerate: fundamental_x must have length n_x");
  MarkovChain chain;
  chain.kernel = sunspot.kernel;
  chain.support = fundamental_x.replicate(1, sunspot.k());
  return enumerate_msv(model, chain, opts);
}

std::string solutions_to_csv(const std::vector<MsvSolution>& solutions,
                             const MarkovChain& chain) {
  std::ostringstream os;
  os.precision(17);
  const int n_x = chain.n_x();
  const int n = solutions.empty() ? 0 : static_cast<int>(solutions[0].Y.rows());
  const int m = solutions.empty() ? 1 : static_cast<int>(solutions[0].margins.rows());
  os << "solution_id,regime_bits,boundary,state_index";
  for (int v = 0; v < n_x; ++v) os << ",x_" << (v + 1);
  for (int v = 0; v < n; ++v) os << ",y_" << (v + 1);
  for (int j = 0; j < m; ++j) os << ",margin_" << (j + 1);
  os << '\n';
  for (size_t sid = 0; sid < solutions.size(); ++sid) {
    const auto& s = solutions[sid];
    for (int i = 0; i < chain.k(); ++i) {
      os << sid << ',' << s.regime.bitstring() << ',' << (s.boundary_flag ? 1 : 0) << ',' << i;
      for (int v = 0; v < n_x; ++v) os << ',' << chain.support(v, i);
      for (int v = 0; v < n; ++v) os << ',' << s.Y(v, i);
      for (int j = 0; j < static_cast<int>(s.margins.rows()); ++j) os << ',' << s.margins(j, i);
      os << '\n';
    }
  }
  return os.str();
}

int count_interior(const std::vector<MsvSolution>& solutions) {
  int c = 0;
  for (const auto& s : solutions)
    if (!s.boundary_flag) ++c;
  return c;
}

}  // namespace coherence
