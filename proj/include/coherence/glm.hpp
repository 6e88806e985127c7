#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "coherence/canonical.hpp"
#include "coherence/markov.hpp"

namespace coherence {

/// A regime configuration: for each constraint, the subset of states in which
/// it is slack. Encoded as one bitset per constraint (bit i = state i slack).
struct RegimeConfig {
  int m = 1;
  int k = 0;
  std::vector<std::uint64_t> bits;  // size m

  bool slack(int constraint, int state) const {
    return (bits[static_cast<size_t>(constraint)] >> state) & 1u;
  }
  /// Bitmask over constraints for one state (the regime block index).
  int regime_of(int state) const {
    int s = 0;
    for (int j = 0; j < m; ++j)
      if (slack(j, state)) s |= 1 << j;
    return s;
  }
  /// Flat enumeration index: constraint j occupies bits [j*k, (j+1)*k).
  std::uint64_t index() const;
  static RegimeConfig from_index(std::uint64_t idx, int m, int k);
  /// Printable form, state 1 first, constraints joined by '|': "101|110".
  std::string bitstring() const;

  bool operator==(const RegimeConfig& o) const { return m == o.m && k == o.k && bits == o.bits; }
};

enum class Verdict { CoherentAndComplete, IncoherentOrIncomplete, Degenerate };

std::string to_string(Verdict v);

struct DetWitness {
  RegimeConfig config;
  double det = 0.0;
};

struct CoherencyReport {
  int n = 0, k = 0, m = 1;
  std::uint64_t evaluated = 0;
  std::uint64_t skipped_infeasible = 0;
  std::uint64_t positive = 0, negative = 0, degenerate = 0;
  Verdict verdict = Verdict::Degenerate;
  std::optional<DetWitness> max_positive;   // largest positive det
  std::optional<DetWitness> max_negative;   // most negative det
  std::optional<DetWitness> min_abs;        // smallest |det| among non-degenerate
  std::vector<RegimeConfig> degenerate_configs;  // capped at 16

  std::string to_json() const;
  std::string summary() const;
};

struct CoherencyOptions {
  double det_tol = 1e-10;
  std::uint64_t enumeration_cap = 1ull << 24;
  std::optional<std::vector<RegimeConfig>> cone_list;  // evaluate exactly these
  bool skip_infeasible = true;  // multi-constraint models: drop empty cones
  int threads = 1;
};

/// Per-regime stacked coefficient matrix of the piecewise-linear state system:
/// block row i, block column j is 1{i=j} A_{s_i} + K(i,j) B_{s_i}, where s_i is
/// the regime block selected by J in state i. Rejects models with lag loadings.
Eigen::MatrixXd assemble_A(const CanonicalModel& model, const MarkovChain& chain,
                           const RegimeConfig& J);

/// Right-hand side: block i is -(C_{s_i} X + D_{s_i} X K') e_i.
Eigen::VectorXd assemble_rhs(const CanonicalModel& model, const MarkovChain& chain,
                             const RegimeConfig& J);

/// Per-constraint, per-state signed slack of a candidate solution Y (n x k):
/// margins(j, i) = (a_j' Y + b_j' Y K' + c_j' X + d_j' X K') e_i.
Eigen::MatrixXd constraint_margins(const CanonicalModel& model, const MarkovChain& chain,
                                   const Eigen::MatrixXd& Y);

/// True if the open cone {Y : sign pattern of margins matches J} is non-empty,
/// using an LP feasibility check with a 1e-9 interior margin on the strict side.
bool cone_feasible(const CanonicalModel& model, const MarkovChain& chain,
                   const RegimeConfig& J, double interior = 1e-9);

/// Same-sign determinant test over all regime configurations (or the supplied
/// cone list). Any |det| below det_tol * scale yields a Degenerate verdict.
CoherencyReport check_coherency(const CanonicalModel& model, const MarkovChain& chain,
                                const CoherencyOptions& opts = {});

/// Reduced scalar system: per-state matrix Q + slack_addon on slack diagonal
/// entries. Enumerates in Gray-code order maintaining determinants through
/// rank-one updates, O(k^2) per configuration, with periodic refactorization.
CoherencyReport check_coherency_fast(const ReducedNk& sys, const CoherencyOptions& opts = {});

/// A_J of the reduced system (shared with the MSV enumeration path).
Eigen::MatrixXd assemble_A(const ReducedNk& sys, const RegimeConfig& J);
Eigen::VectorXd assemble_rhs(const ReducedNk& sys, const RegimeConfig& J);

struct PsiBarResult {
  enum class Status {
    Bracketed,          // single coherent->incoherent boundary located
    AllCoherent,        // no sign change: coherent on the whole range
    AllIncoherent,      // no sign change: incoherent on the whole range
    NonMonotone,        // several transitions; see brackets
  };
  double psi_bar = 0.0;
  Status status = Status::Bracketed;
  std::vector<std::pair<double, double>> brackets;  // transition intervals found
};

/// Largest psi below which the reduced Taylor-rule system passes the
/// coherency test, located by bisection after a monotonicity scan.
PsiBarResult find_psi_bar(double beta, double sigma, double lambda, double mu,
                          const MarkovChain& chain, double psi_lo = 1e-3,
                          double psi_hi = 1.5, double tol = 1e-4,
                          const CoherencyOptions& opts = {});

namespace detail {

/// Determinant with a degeneracy classification: degenerate when
/// |det| < det_tol * max(1, prod_i max_j |A(i,j)|).
struct DetResult {
  double det = 0.0;
  int sign = 0;  // 0 when degenerate
  bool degenerate = true;
};
DetResult classified_det(const Eigen::MatrixXd& A, double det_tol);

/// Feasibility of {y : G y >= h} via a two-phase simplex (dense, small sizes).
bool lp_feasible(const Eigen::MatrixXd& G, const Eigen::VectorXd& h);

}  // namespace detail

}  // namespace coherence
