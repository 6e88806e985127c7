#include "coherence/glm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace coherence {

std::uint64_t RegimeConfig::index() const {
  std::uint64_t idx = 0;
  for (int j = 0; j < m; ++j) idx |= bits[static_cast<size_t>(j)] << (j * k);
  return idx;
}

RegimeConfig RegimeConfig::from_index(std::uint64_t idx, int m, int k) {
  RegimeConfig J;
  J.m = m;
  J.k = k;
  J.bits.resize(static_cast<size_t>(m));
  const std::uint64_t mask = (k == 64) ? ~0ull : ((1ull << k) - 1);
  for (int j = 0; j < m; ++j) J.bits[static_cast<size_t>(j)] = (idx >> (j * k)) & mask;
  return J;
}

std::string RegimeConfig::bitstring() const {
  std::string out;
  for (int j = 0; j < m; ++j) {
    if (j) out += '|';
    for (int i = 0; i < k; ++i) out += slack(j, i) ? '1' : '0';
  }
  return out;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::CoherentAndComplete: return "coherent-and-complete";
    case Verdict::IncoherentOrIncomplete: return "incoherent-or-incomplete";
    case Verdict::Degenerate: return "degenerate";
  }
  return "?";
}

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

Eigen::MatrixXd assemble_A(const CanonicalModel& model, const MarkovChain& chain,
                           const RegimeConfig& J) {
  require(!model.has_lag(), "assemble_A: model has lag loadings; use the backward solver");
  require(chain.k() == J.k, "assemble_A: chain and configuration disagree on k");
  require(chain.n_x() == model.n_x, "assemble_A: chain and model disagree on n_x");
  require(J.m == model.m(), "assemble_A: configuration and model disagree on constraint count");
  const int n = model.n, k = chain.k();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n * k, n * k);
  for (int i = 0; i < k; ++i) {
    const int s = J.regime_of(i);
    for (int j = 0; j < k; ++j) {
      auto block = A.block(i * n, j * n, n, n);
      block = chain.kernel(i, j) * model.B[static_cast<size_t>(s)];
      if (i == j) block += model.A[static_cast<size_t>(s)];
    }
  }
  return A;
}

Eigen::VectorXd assemble_rhs(const CanonicalModel& model, const MarkovChain& chain,
                             const RegimeConfig& J) {
  const int n = model.n, k = chain.k();
  Eigen::VectorXd rhs(n * k);
  for (int i = 0; i < k; ++i) {
    const int s = J.regime_of(i);
    const Eigen::VectorXd x_i = chain.support.col(i);
    const Eigen::VectorXd ex_i = chain.expected_next(i);
    rhs.segment(i * n, n) =
        -(model.C[static_cast<size_t>(s)] * x_i + model.D[static_cast<size_t>(s)] * ex_i);
  }
  return rhs;
}

Eigen::MatrixXd constraint_margins(const CanonicalModel& model, const MarkovChain& chain,
                                   const Eigen::MatrixXd& Y) {
  const int k = chain.k();
  const int m = model.m();
  const Eigen::MatrixXd EY = Y * chain.kernel.transpose();  // column i = E(Y_{t+1} | i)
  Eigen::MatrixXd margins(m, k);
  for (int j = 0; j < m; ++j) {
    const auto& cs = model.constraints[static_cast<size_t>(j)];
    for (int i = 0; i < k; ++i) {
      margins(j, i) = cs.a.dot(Y.col(i)) + cs.b.dot(EY.col(i)) + cs.c.dot(chain.support.col(i)) +
                      cs.d.dot(chain.expected_next(i));
    }
  }
  return margins;
}

Eigen::MatrixXd assemble_A(const ReducedNk& sys, const RegimeConfig& J) {
  require(J.m == 1, "assemble_A: reduced system has a single constraint");
  require(J.k == sys.k(), "assemble_A: configuration and system disagree on k");
  Eigen::MatrixXd A = sys.Q;
  for (int i = 0; i < sys.k(); ++i)
    if (J.slack(0, i)) A(i, i) += sys.slack_addon;
  return A;
}

Eigen::VectorXd assemble_rhs(const ReducedNk& sys, const RegimeConfig& J) {
  Eigen::VectorXd rhs = sys.rhs_base;
  for (int i = 0; i < sys.k(); ++i)
    if (!J.slack(0, i)) rhs(i) += sys.rhs_binding_addon;
  return rhs;
}

namespace detail {

DetResult classified_det(const Eigen::MatrixXd& A, double det_tol) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  const double det = lu.determinant();
  double scale = 1.0;
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    scale *= std::max(A.row(i).cwiseAbs().maxCoeff(), 1e-300);
  scale = std::max(1.0, scale);
  DetResult r;
  r.det = det;
  if (!std::isfinite(det) || std::abs(det) < det_tol * scale) {
    r.sign = 0;
    r.degenerate = true;
  } else {
    r.sign = det > 0 ? 1 : -1;
    r.degenerate = false;
  }
  return r;
}

bool lp_feasible(const Eigen::MatrixXd& G, const Eigen::VectorXd& h) {
  // Phase-1 simplex for {y : G y >= h}, free y split as u - v.
  const int rows = static_cast<int>(G.rows());
  const int d = static_cast<int>(G.cols());
  const int nvars = 2 * d + rows;          // u, v, surplus
  const int total = nvars + rows;          // + artificials
  Eigen::MatrixXd T(rows, total);
  Eigen::VectorXd b(rows);
  for (int r = 0; r < rows; ++r) {
    double sgn = (h(r) < 0.0) ? -1.0 : 1.0;
    T.row(r).setZero();
    T.block(r, 0, 1, d) = sgn * G.row(r);
    T.block(r, d, 1, d) = -sgn * G.row(r);
    T(r, 2 * d + r) = -sgn;      // surplus: G y - s = h
    T(r, nvars + r) = 1.0;       // artificial
    b(r) = sgn * h(r);
  }
  std::vector<int> basis(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) basis[static_cast<size_t>(r)] = nvars + r;

  // Reduced cost row for min sum(artificials): z_j - c_j = sum over basic
  // artificial rows of T(r, j); objective value = sum(b).
  Eigen::VectorXd cost = Eigen::VectorXd::Zero(total);
  for (int r = 0; r < rows; ++r) cost += T.row(r).transpose();
  double obj = b.sum();

  const double eps = 1e-11;
  const int max_iter = 200 * (total + rows);
  for (int it = 0; it < max_iter; ++it) {
    int enter = -1;  // Bland: smallest index with positive reduced cost
    for (int j = 0; j < nvars; ++j) {
      if (cost(j) > eps) {
        enter = j;
        break;
      }
    }
    if (enter < 0) break;
    int leave = -1;
    double best = 0.0;
    for (int r = 0; r < rows; ++r) {
      if (T(r, enter) > eps) {
        const double ratio = b(r) / T(r, enter);
        if (leave < 0 || ratio < best - eps ||
            (ratio < best + eps && basis[static_cast<size_t>(r)] < basis[static_cast<size_t>(leave)])) {
          leave = r;
          best = ratio;
        }
      }
    }
    if (leave < 0) return true;  // unbounded improvement direction: feasible region unbounded
    const double piv = T(leave, enter);
    T.row(leave) /= piv;
    b(leave) /= piv;
    for (int r = 0; r < rows; ++r) {
      if (r == leave) continue;
      const double f = T(r, enter);
      if (f != 0.0) {
        T.row(r) -= f * T.row(leave);
        b(r) -= f * b(leave);
      }
    }
    const double fc = cost(enter);
    cost -= fc * T.row(leave).transpose();
    obj -= fc * b(leave);
    basis[static_cast<size_t>(leave)] = enter;
  }
  return obj <= 1e-8 * (1.0 + h.cwiseAbs().maxCoeff());
}

}  // namespace detail

bool cone_feasible(const CanonicalModel& model, const MarkovChain& chain,
                   const RegimeConfig& J, double interior) {
  const int n = model.n, k = chain.k(), m = model.m();
  // Margins are affine in vec(Y) (state-major): build one inequality per
  // (constraint, state), oriented so the cone is G y >= h.
  const int rows = m * k;
  Eigen::MatrixXd G(rows, n * k);
  Eigen::VectorXd h(rows);
  int r = 0;
  for (int j = 0; j < m; ++j) {
    const auto& cs = model.constraints[static_cast<size_t>(j)];
    for (int i = 0; i < k; ++i, ++r) {
      Eigen::RowVectorXd coeff = Eigen::RowVectorXd::Zero(n * k);
      coeff.segment(i * n, n) += cs.a.transpose();
      for (int l = 0; l < k; ++l) coeff.segment(l * n, n) += chain.kernel(i, l) * cs.b.transpose();
      const double cst = cs.c.dot(chain.support.col(i)) + cs.d.dot(chain.expected_next(i));
      if (J.slack(j, i)) {
        G.row(r) = coeff;
        h(r) = interior - cst;  // margin >= interior
      } else {
        G.row(r) = -coeff;
        h(r) = cst;  // margin <= 0
      }
    }
  }
  return detail::lp_feasible(G, h);
}

namespace {

struct Tally {
  std::uint64_t evaluated = 0, skipped = 0, positive = 0, negative = 0, degenerate = 0;
  std::optional<DetWitness> max_positive, max_negative, min_abs;
  std::vector<RegimeConfig> degenerate_configs;

  void add(const RegimeConfig& J, const detail::DetResult& d) {
    ++evaluated;
    if (d.degenerate) {
      ++degenerate;
      if (degenerate_configs.size() < 16) degenerate_configs.push_back(J);
      return;
    }
    if (d.sign > 0) {
      ++positive;
      if (!max_positive || d.det > max_positive->det) max_positive = DetWitness{J, d.det};
    } else {
      ++negative;
      if (!max_negative || d.det < max_negative->det) max_negative = DetWitness{J, d.det};
    }
    if (!min_abs || std::abs(d.det) < std::abs(min_abs->det)) min_abs = DetWitness{J, d.det};
  }

  void merge(const Tally& o) {
    evaluated += o.evaluated;
    skipped += o.skipped;
    positive += o.positive;
    negative += o.negative;
    degenerate += o.degenerate;
    if (o.max_positive && (!max_positive || o.max_positive->det > max_positive->det))
      max_positive = o.max_positive;
    if (o.max_negative && (!max_negative || o.max_negative->det < max_negative->det))
      max_negative = o.max_negative;
    if (o.min_abs && (!min_abs || std::abs(o.min_abs->det) < std::abs(min_abs->det)))
      min_abs = o.min_abs;
    for (const auto& J : o.degenerate_configs)
      if (degenerate_configs.size() < 16) degenerate_configs.push_back(J);
  }
};

CoherencyReport finalize(Tally t, int n, int k, int m) {
  CoherencyReport rep;
  rep.n = n;
  rep.k = k;
  rep.m = m;
  rep.evaluated = t.evaluated;
  rep.skipped_infeasible = t.skipped;
  rep.positive = t.positive;
  rep.negative = t.negative;
  rep.degenerate = t.degenerate;
  rep.max_positive = t.max_positive;
  rep.max_negative = t.max_negative;
  rep.min_abs = t.min_abs;
  rep.degenerate_configs = std::move(t.degenerate_configs);
  if (t.degenerate > 0)
    rep.verdict = Verdict::Degenerate;
  else if (t.positive > 0 && t.negative > 0)
    rep.verdict = Verdict::IncoherentOrIncomplete;
  else
    rep.verdict = Verdict::CoherentAndComplete;
  return rep;
}

}  // namespace

CoherencyReport check_coherency(const CanonicalModel& model, const MarkovChain& chain,
                                const CoherencyOptions& opts) {
  model.validate();
  const int n = model.n, k = chain.k(), m = model.m();
  require(m * k < 63, "check_coherency: configuration space too large to index");

  std::vector<RegimeConfig> configs;
  if (opts.cone_list) {
    configs = *opts.cone_list;
  } else {
    const std::uint64_t total = 1ull << (m * k);
    if (total > opts.enumeration_cap) {
      std::ostringstream os;
      os << "check_coherency: " << total << " configurations exceed the cap of "
         << opts.enumeration_cap << "; raise enumeration_cap to proceed";
      throw std::invalid_argument(os.str());
    }
    configs.reserve(total);
    for (std::uint64_t idx = 0; idx < total; ++idx)
      configs.push_back(RegimeConfig::from_index(idx, m, k));
  }

  const int threads = std::max(1, opts.threads);
  std::vector<Tally> tallies(static_cast<size_t>(threads));
  auto work = [&](int t) {
    Tally& tally = tallies[static_cast<size_t>(t)];
    for (size_t c = static_cast<size_t>(t); c < configs.size(); c += static_cast<size_t>(threads)) {
      const RegimeConfig& J = configs[c];
      if (!opts.cone_list && opts.skip_infeasible && m > 1 && !cone_feasible(model, chain, J)) {
        ++tally.skipped;
        continue;
      }
      tally.add(J, detail::classified_det(assemble_A(model, chain, J), opts.det_tol));
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  Tally total;
  for (auto& t : tallies) total.merge(t);
  return finalize(std::move(total), n, k, m);
}

CoherencyReport check_coherency_fast(const ReducedNk& sys, const CoherencyOptions& opts) {
  const int k = sys.k();
  require(k >= 1 && k < 63, "check_coherency_fast: k out of range");
  const std::uint64_t total = 1ull << k;
  if (total > opts.enumeration_cap) {
    std::ostringstream os;
    os << "check_coherency_fast: " << total << " configurations exceed the cap of "
       << opts.enumeration_cap;
    throw std::invalid_argument(os.str());
  }
  const double alpha = sys.slack_addon;

  // Per-row degeneracy scale pieces: the off-diagonal row max never changes.
  Eigen::VectorXd offdiag_max(k);
  for (int i = 0; i < k; ++i) {
    double mx = 0.0;
    for (int j = 0; j < k; ++j)
      if (j != i) mx = std::max(mx, std::abs(sys.Q(i, j)));
    offdiag_max(i) = mx;
  }
  auto row_scale = [&](int i, bool slack_bit) {
    const double diag = std::abs(sys.Q(i, i) + (slack_bit ? alpha : 0.0));
    return std::max(std::max(diag, offdiag_max(i)), 1e-300);
  };

  const int threads = std::max(1, opts.threads);
  // Chunks of contiguous Gray positions, each seeded by a fresh factorization.
  const std::uint64_t chunk = std::min<std::uint64_t>(total, 1ull << 14);
  const std::uint64_t nchunks = (total + chunk - 1) / chunk;
  std::vector<Tally> tallies(static_cast<size_t>(threads));

  auto run_chunk = [&](std::uint64_t c0, Tally& tally) {
    const std::uint64_t begin = c0 * chunk;
    const std::uint64_t end = std::min(total, begin + chunk);
    std::uint64_t gray = begin ^ (begin >> 1);
    Eigen::MatrixXd A = sys.Q;
    for (int i = 0; i < k; ++i)
      if ((gray >> i) & 1) A(i, i) += alpha;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    double det = lu.determinant();
    Eigen::MatrixXd Minv;
    bool inv_ok = std::isfinite(det) && det != 0.0;
    if (inv_ok) Minv = lu.inverse();

    for (std::uint64_t t = begin; t < end; ++t) {
      if (t != begin) {
        const std::uint64_t next_gray = t ^ (t >> 1);
        const int b = std::countr_zero(gray ^ next_gray);
        const bool now_slack = (next_gray >> b) & 1;
        const double delta = now_slack ? alpha : -alpha;
        A(b, b) += delta;
        gray = next_gray;
        if (inv_ok) {
          const double f = 1.0 + delta * Minv(b, b);
          if (std::abs(f) < 1e-12) {
            inv_ok = false;  // next-to-singular: refactorize below
          } else {
            det *= f;
            const Eigen::VectorXd col = Minv.col(b);
            const Eigen::RowVectorXd row = Minv.row(b);
            Minv.noalias() -= (delta / f) * (col * row);
          }
        }
        if (!inv_ok) {
          Eigen::PartialPivLU<Eigen::MatrixXd> relu(A);
          det = relu.determinant();
          if (std::isfinite(det) && det != 0.0) {
            Minv = relu.inverse();
            inv_ok = true;
          }
        }
      }
      double scale = 1.0;
      for (int i = 0; i < k; ++i) scale *= row_scale(i, (gray >> i) & 1);
      scale = std::max(1.0, scale);
      detail::DetResult d;
      d.det = det;
      if (!std::isfinite(det) || std::abs(det) < opts.det_tol * scale) {
        d.sign = 0;
        d.degenerate = true;
      } else {
        d.sign = det > 0 ? 1 : -1;
        d.degenerate = false;
      }
      RegimeConfig J;
      J.m = 1;
      J.k = k;
      J.bits = {gray};
      tally.add(J, d);
    }
  };

  if (threads == 1) {
    for (std::uint64_t c = 0; c < nchunks; ++c) run_chunk(c, tallies[0]);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::uint64_t c = static_cast<std::uint64_t>(t); c < nchunks;
             c += static_cast<std::uint64_t>(threads))
          run_chunk(c, tallies[static_cast<size_t>(t)]);
      });
    for (auto& th : pool) th.join();
  }
  Tally totalt;
  for (auto& t : tallies) totalt.merge(t);
  return finalize(std::move(totalt), 1, k, 1);
}

PsiBarResult find_psi_bar(double beta, double sigma, double lambda, double mu,
                          const MarkovChain& chain, double psi_lo, double psi_hi, double tol,
                          const CoherencyOptions& opts) {
  require(psi_lo > 0.0 && psi_hi > psi_lo, "find_psi_bar: invalid psi range");
  MarkovChain eps_chain = chain;
  if (eps_chain.n_x() != 1) {
    // The cutoff depends only on the kernel; collapse the support to one row.
    eps_chain.support = Eigen::MatrixXd::Zero(1, chain.k());
  }
  auto coherent = [&](double psi) {
    const ReducedNk red = reduce_nk(beta, sigma, lambda, psi, mu, eps_chain);
    return check_coherency_fast(red, opts).verdict == Verdict::CoherentAndComplete;
  };

  const int samples = 25;
  std::vector<double> xs(samples);
  std::vector<bool> ok(samples);
  for (int i = 0; i < samples; ++i) {
    xs[static_cast<size_t>(i)] = psi_lo + (psi_hi - psi_lo) * i / (samples - 1);
    ok[static_cast<size_t>(i)] = coherent(xs[static_cast<size_t>(i)]);
  }
  std::vector<std::pair<double, double>> brackets;
  for (int i = 0; i + 1 < samples; ++i)
    if (ok[static_cast<size_t>(i)] != ok[static_cast<size_t>(i + 1)])
      brackets.emplace_back(xs[static_cast<size_t>(i)], xs[static_cast<size_t>(i + 1)]);

  PsiBarResult res;
  auto bisect = [&](double lo, double hi) {
    bool lo_ok = coherent(lo);
    while (hi - lo > tol) {
      const double mid = 0.5 * (lo + hi);
      if (coherent(mid) == lo_ok)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  };

  if (brackets.empty()) {
    res.status = ok[0] ? PsiBarResult::Status::AllCoherent : PsiBarResult::Status::AllIncoherent;
    res.psi_bar = ok[0] ? psi_hi : psi_lo;
    return res;
  }
  if (brackets.size() == 1) {
    res.status = PsiBarResult::Status::Bracketed;
    res.psi_bar = bisect(brackets[0].first, brackets[0].second);
    res.brackets = brackets;
    return res;
  }
  res.status = PsiBarResult::Status::NonMonotone;
  for (auto& br : brackets) {
    const double b = bisect(br.first, br.second);
    res.brackets.emplace_back(b, b);
  }
  res.psi_bar = res.brackets.front().first;
  return res;
}

std::string CoherencyReport::to_json() const {
  nlohmann::json j;
  j["n"] = n;
  j["k"] = k;
  j["m"] = m;
  j["evaluated"] = evaluated;
  j["skipped_infeasible"] = skipped_infeasible;
  j["positive"] = positive;
  j["negative"] = negative;
  j["degenerate"] = degenerate;
  j["verdict"] = to_string(verdict);
  auto witness = [](const std::optional<DetWitness>& w) -> nlohmann::json {
    if (!w) return nullptr;
    return {{"config", w->config.bitstring()}, {"det", w->det}};
  };
  j["max_positive"] = witness(max_positive);
  j["max_negative"] = witness(max_negative);
  j["min_abs"] = witness(min_abs);
  nlohmann::json degs = nlohmann::json::array();
  for (const auto& J : degenerate_configs) degs.push_back(J.bitstring());
  j["degenerate_configs"] = std::move(degs);
  return j.dump(2);
}

std::string CoherencyReport::summary() const {
  std::ostringstream os;
  os << "configs " << evaluated;
  if (skipped_infeasible) os << " (+" << skipped_infeasible << " infeasible skipped)";
  os << "  sign tally +" << positive << " / -" << negative << " / deg " << degenerate
     << "  verdict " << to_string(verdict);
  if (max_positive) os << "\n  max positive det " << max_positive->det << " at " << max_positive->config.bitstring();
  if (max_negative) os << "\n  max negative det " << max_negative->det << " at " << max_negative->config.bitstring();
  if (!degenerate_configs.empty()) {
    os << "\n  degenerate at";
    for (const auto& J : degenerate_configs) os << ' ' << J.bitstring();
  }
  return os.str();
}

}  // namespace coherence
