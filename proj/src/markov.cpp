#include "coherence/markov.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace coherence {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

MarkovChain make_chain(Eigen::MatrixXd support, Eigen::MatrixXd kernel) {
  const auto k = kernel.rows();
  require(k >= 1, "markov: k must be >= 1");
  require(kernel.cols() == k, "markov: kernel must be square");
  require(support.rows() >= 1, "markov: n_x must be >= 1");
  require(support.cols() == k, "markov: support must have one column per state");
  require(support.allFinite(), "markov: support has non-finite entries");
  require(kernel.allFinite(), "markov: kernel has non-finite entries");

  constexpr double kClamp = 1e-14;
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      double v = kernel(i, j);
      require(v >= -kClamp && v <= 1.0 + kClamp, "markov: kernel entry outside [0,1]");
      kernel(i, j) = std::min(1.0, std::max(0.0, v));
    }
    require(std::abs(kernel.row(i).sum() - 1.0) <= 1e-12, "markov: kernel row does not sum to 1");
  }
  return MarkovChain{std::move(support), std::move(kernel)};
}

MarkovChain two_state(double p, double q, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) {
  require(p >= 0.0 && p <= 1.0, "two_state: p outside [0,1]");
  require(q >= 0.0 && q <= 1.0, "two_state: q outside [0,1]");
  require(x1.size() == x2.size(), "two_state: state vectors must have equal length");
  Eigen::MatrixXd support(x1.size(), 2);
  support.col(0) = x1;
  support.col(1) = x2;
  Eigen::MatrixXd kernel(2, 2);
  kernel << p, 1.0 - p, 1.0 - q, q;
  return make_chain(std::move(support), std::move(kernel));
}

MarkovChain two_state(double p, double q, double x1, double x2) {
  Eigen::VectorXd v1(1), v2(1);
  v1 << x1;
  v2 << x2;
  return two_state(p, q, v1, v2);
}

MarkovChain absorbing_chain(double p, double r_L) {
  require(p > 0.0 && p <= 1.0, "absorbing_chain: p outside (0,1]");
  require(r_L < 0.0, "absorbing_chain: shock must be a negative rate (r_L < 0)");
  return two_state(p, 1.0, -r_L, 0.0);
}

MarkovChain rouwenhorst(double rho, double sigma_cond, int k) {
  require(std::abs(rho) < 1.0, "rouwenhorst: |rho| must be < 1");
  require(sigma_cond > 0.0, "rouwenhorst: sigma_cond must be positive");
  require(k >= 2, "rouwenhorst: k must be >= 2");

  const double p = (1.0 + rho) / 2.0;
  Eigen::MatrixXd P(2, 2);
  P << p, 1.0 - p, 1.0 - p, p;
  for (int n = 3; n <= k; ++n) {
    Eigen::MatrixXd Pn = Eigen::MatrixXd::Zero(n, n);
    Pn.topLeftCorner(n - 1, n - 1) += p * P;
    Pn.topRightCorner(n - 1, n - 1) += (1.0 - p) * P;
    Pn.bottomLeftCorner(n - 1, n - 1) += (1.0 - p) * P;
    Pn.bottomRightCorner(n - 1, n - 1) += p * P;
    Pn.middleRows(1, n - 2) /= 2.0;
    P = std::move(Pn);
  }

  const double sigma_y = sigma_cond / std::sqrt(1.0 - rho * rho);
  const double half_width = std::sqrt(static_cast<double>(k - 1)) * sigma_y;
  Eigen::MatrixXd support(1, k);
  for (int i = 0; i < k; ++i)
    support(0, i) = -half_width + 2.0 * half_width * i / (k - 1);
  return make_chain(std::move(support), std::move(P));
}

StationaryResult stationary_distribution(const MarkovChain& chain) {
  const int k = chain.k();
  // Solve pi' (K - I) = 0 with sum(pi) = 1 by least squares on the stacked system.
  Eigen::MatrixXd M(k + 1, k);
  M.topRows(k) = chain.kernel.transpose() - Eigen::MatrixXd::Identity(k, k);
  M.bottomRows(1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k + 1);
  rhs(k) = 1.0;
  Eigen::VectorXd pi = M.colPivHouseholderQr().solve(rhs);
  for (int i = 0; i < k; ++i) pi(i) = std::max(0.0, pi(i));
  pi /= pi.sum();

  Eigen::FullPivLU<Eigen::MatrixXd> lu(chain.kernel.transpose() - Eigen::MatrixXd::Identity(k, k));
  lu.setThreshold(1e-10);
  const bool unique = lu.rank() == k - 1;
  return StationaryResult{std::move(pi), unique};
}

std::string MarkovChain::to_json() const {
  nlohmann::json j;
  j["k"] = k();
  j["n_x"] = n_x();
  auto mat = [](const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  j["support"] = mat(support);
  j["kernel"] = mat(kernel);
  return j.dump(2);
}

MarkovChain MarkovChain::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  auto mat = [](const nlohmann::json& rows, const char* name) {
    if (!rows.is_array() || rows.empty()) throw std::invalid_argument(std::string("markov: ") + name + " must be a non-empty array of rows");
    Eigen::MatrixXd m(rows.size(), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != static_cast<size_t>(m.cols()))
        throw std::invalid_argument(std::string("markov: ragged rows in ") + name);
      for (size_t c = 0; c < rows[i].size(); ++c) m(i, c) = rows[i][c].get<double>();
    }
    return m;
  };
  Eigen::MatrixXd support = mat(j.at("support"), "support");
  Eigen::MatrixXd kernel = mat(j.at("kernel"), "kernel");
  if (j.contains("k") && j["k"].get<int>() != kernel.rows())
    throw std::invalid_argument("markov: declared k does not match kernel");
  if (j.contains("n_x") && j["n_x"].get<int>() != support.rows())
    throw std::invalid_argument("markov: declared n_x does not match support");
  return make_chain(std::move(support), std::move(kernel));
}

}  // namespace coherence
