#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "coherence/canonical.hpp"
#include "coherence/glm.hpp"
#include "coherence/markov.hpp"

namespace coherence {

enum class TrajectoryStatus { Converged, Diverged, DomainBreakdown, MaxIterations };

struct FixedPoint {
  double value = 0.0;
  enum class Stability { Stable, Unstable, SemiStable } stability = Stability::Stable;
};

struct Trajectory {
  std::vector<double> values;  // pi_0 .. pi_T (trimmed at a breakdown)
  TrajectoryStatus status = TrajectoryStatus::MaxIterations;
  int event_index = -1;   // step of divergence/breakdown, -1 otherwise
  double limit = 0.0;     // fixed point reached when Converged
  std::vector<FixedPoint> fixed_points;

  std::string status_string() const;
  std::string to_csv() const;  // t,value rows
};

/// Absorbing-state recursion pi' = max(-mu, psi*pi). For mu >= 0 the map has
/// the binding fixed point -mu (stable) and the slack fixed point 0
/// (unstable); for mu < 0 every orbit diverges.
Trajectory iterate_absorbing(double pi0, double psi, double mu, int T);

/// Transitory-state recursion of the exact two-branch map, conditioning on a
/// post-exit inflation level pi_bar <= pi_star. Records a domain breakdown
/// when the iterate exits the region where the map is defined.
Trajectory iterate_transitory(double pi0, double psi, double p, double r, double pi_star,
                              double r_L, double pi_bar, int T);

struct ExistenceResult {
  bool exists = false;
  bool boundary = false;   // within tolerance of the bound
  bool r_cond = false;     // r^{-1} <= pi_star
  double bound = 0.0;      // admissible -r_L
  double margin = 0.0;     // bound - (-r_L)
};

/// Existence of a bounded solution of the exact two-branch model.
ExistenceResult existence_nonlinear(double psi, double p, double r, double pi_star,
                                    double r_L, std::optional<double> pi_bar = std::nullopt);

struct QuasiDiffResult {
  bool eligible = false;
  std::string diagnostic;          // reason when not eligible
  CanonicalModel reduced;          // lag-free model in the transformed variable
  Eigen::MatrixXd Q;               // common triangularizing basis
  std::vector<Eigen::MatrixXd> Lambda;  // Q^-1 B_s^-1 A_s Q per regime
  Eigen::MatrixXd transform;       // tilde Y = transform * Y
};

/// Removes the predetermined leading components of Y when both regime maps
/// B_s^-1 A_s share a triangularizing basis whose predetermined columns are
/// annihilated by the constraint vectors. Accepts commuting pairs
/// automatically or verifies a user-supplied basis.
QuasiDiffResult quasi_difference(const CanonicalModel& model,
                                 std::optional<Eigen::MatrixXd> user_Q = std::nullopt);

struct GzSolution {
  Eigen::MatrixXd G;  // n x k
  Eigen::MatrixXd Z;  // n x k
  double residual = 0.0;
};

struct GzOptions {
  double newton_tol = 1e-11;
  int max_iterations = 50;
  int max_starts = 8;
  double dedup_tol = 1e-8;
  double det_tol = 1e-10;
};

/// Stationary decision rules Y_t = G y_{t-1} + Z for the regime configuration
/// J0: Newton iterations on the stacked quadratic system from a deterministic
/// start list, then a linear solve for Z given each admissible G. Returns all
/// distinct roots; empty means no convergent start (not proven nonexistence).
std::vector<GzSolution> solve_gz(const CanonicalModel& model, const MarkovChain& chain,
                                 const RegimeConfig& J0, const GzOptions& opts = {});

struct BackwardPath {
  RegimeConfig terminal;              // configuration assumed from T onward
  std::vector<RegimeConfig> stages;   // configurations at t = 1..T-1
  Eigen::MatrixXd G1, Z1;             // stage-1 decision rule
  bool stationary = false;            // constant path whose rule equals the terminal rule
  bool verified = false;
  bool boundary = false;              // some margin within tolerance
  double min_margin = 0.0;            // tightest satisfied margin
};

struct BackwardOptions {
  std::uint64_t path_budget = 1ull << 22;
  std::vector<int> shock_sequence;    // realized states, length >= T; default all 0
  double margin_tol = 1e-9;
  double det_tol = 1e-10;
  GzOptions gz;
  std::optional<std::vector<RegimeConfig>> terminal_configs;  // default: all 2^k
  /// Optional restriction on stage-to-stage regime transitions (cost control):
  /// allowed(previous, next) must return true for the pair to be explored.
  std::function<bool(const RegimeConfig&, const RegimeConfig&)> transition_allowed;
  int threads = 1;
};

struct StageCcRecord {
  RegimeConfig terminal;
  int stage = 0;
  Verdict verdict = Verdict::Degenerate;
};

struct BackwardSolveResult {
  std::vector<BackwardPath> survivors;  // all paths passing every stage inequality
  std::uint64_t explored = 0;
  std::uint64_t pruned_singular = 0;
  std::uint64_t pruned_infeasible = 0;
  std::vector<StageCcRecord> stage_cc;  // same-sign check per terminal branch and stage

  std::string paths_to_csv() const;
};

/// Backward recursion from stationary terminal rules over all regime paths,
/// then forward inequality selection for the initial state y0 along the given
/// realized shock sequence. Refuses when 2^(k(T-1)) exceeds the path budget.
BackwardSolveResult backward_solve(const CanonicalModel& model, const MarkovChain& chain,
                                   int T, double y0, const BackwardOptions& opts = {});

}  // namespace coherence
