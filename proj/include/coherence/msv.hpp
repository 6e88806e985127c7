#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "coherence/canonical.hpp"
#include "coherence/glm.hpp"
#include "coherence/markov.hpp"

namespace coherence {

/// One state-contingent solution: column i of Y is the endogenous vector in
/// state i. `margins` carries the per-constraint, per-state signed slack;
/// boundary_flag marks solutions with any |margin| below the tolerance.
struct MsvSolution {
  Eigen::MatrixXd Y;  // n x k
  RegimeConfig regime;
  double residual_norm = 0.0;
  Eigen::MatrixXd margins;  // m x k
  bool boundary_flag = false;
  std::vector<RegimeConfig> merged_regimes;  // extra regimes after dedup
};

enum class RegimeStatus { Solved, Infeasible, DegenerateRegime };

struct RegimeSolveResult {
  RegimeStatus status = RegimeStatus::DegenerateRegime;
  std::optional<MsvSolution> solution;      // present when Solved
  std::vector<std::pair<int, int>> violated;  // (constraint, state) sign mismatches
};

struct MsvOptions {
  double margin_tol = 1e-9;        // absolute boundary band
  double residual_tol = 1e-9;      // scaled by (1 + |rhs|_inf)
  double dedup_tol = 1e-8;         // max-abs Y distance for merging
  double det_tol = 1e-10;
  std::uint64_t enumeration_cap = 1ull << 24;
  int threads = 1;
};

RegimeSolveResult solve_regime(const CanonicalModel& model, const MarkovChain& chain,
                               const RegimeConfig& J, const MsvOptions& opts = {});
RegimeSolveResult solve_regime(const ReducedNk& sys, const RegimeConfig& J,
                               const MsvOptions& opts = {});

/// Attempts every regime configuration and returns the verified solutions,
/// sorted by regime bitstring; knife-edge solutions carry boundary_flag.
std::vector<MsvSolution> enumerate_msv(const CanonicalModel& model, const MarkovChain& chain,
                                       const MsvOptions& opts = {});
std::vector<MsvSolution> enumerate_msv(const ReducedNk& sys, const MsvOptions& opts = {});

struct VerificationRecord {
  double residual_norm = 0.0;
  Eigen::MatrixXd margins;
  RegimeConfig implied_regime;
  bool boundary_flag = false;
  bool passes = false;
};

/// Residual and inequality audit of an externally supplied Y.
VerificationRecord verify_solution(const CanonicalModel& model, const MarkovChain& chain,
                                   const Eigen::MatrixXd& Y, const MsvOptions& opts = {});

/// Enumeration driven by an extrinsic randomization device: the kernel comes
/// from `sunspot`, the fundamental exogenous vector is pinned at
/// `fundamental_x` in every state.
std::vector<MsvSolution> sunspot_enumerate(const CanonicalModel& model,
                                           const MarkovChain& sunspot,
                                           const Eigen::VectorXd& fundamental_x,
                                           const MsvOptions& opts = {});

/// Plot-ready CSV: one row per (solution, state) with the shock values, the
/// endogenous components and the constraint margins.
std::string solutions_to_csv(const std::vector<MsvSolution>& solutions,
                             const MarkovChain& chain);

int count_interior(const std::vector<MsvSolution>& solutions);

}  // namespace coherence
