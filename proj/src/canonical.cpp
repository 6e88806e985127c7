#include "coherence/canonical.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace coherence {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

}  // namespace

bool CanonicalModel::has_lag() const {
  if (h.empty() || g.size() == 0) return false;
  for (const auto& hs : h)
    if (hs.size() > 0 && hs.cwiseAbs().maxCoeff() > 0.0) return true;
  return false;
}

void CanonicalModel::validate() const {
  require(n >= 1, "model: n must be >= 1");
  require(n_x >= 1, "model: n_x must be >= 1");
  require(!constraints.empty(), "model: at least one constraint is required");
  const size_t r = static_cast<size_t>(regime_count());
  auto check_blocks = [&](const std::vector<Eigen::MatrixXd>& blocks, const char* name,
                          Eigen::Index rows, Eigen::Index cols) {
    require(blocks.size() == r, std::string("model: block list ") + name + " must have one entry per regime combination");
    for (size_t s = 0; s < blocks.size(); ++s) {
      if (blocks[s].rows() != rows || blocks[s].cols() != cols) {
        std::ostringstream os;
        os << "model: block " << name << (m() == 1 ? std::to_string(s) : "[" + std::to_string(s) + "]")
           << " must be " << rows << "x" << cols << ", got " << blocks[s].rows() << "x" << blocks[s].cols();
        throw std::invalid_argument(os.str());
      }
    }
  };
  check_blocks(A, "A", n, n);
  check_blocks(B, "B", n, n);
  check_blocks(C, "C", n, n_x);
  check_blocks(D, "D", n, n_x);
  for (size_t j = 0; j < constraints.size(); ++j) {
    const auto& cs = constraints[j];
    auto check_vec = [&](const Eigen::VectorXd& v, const char* name, Eigen::Index len, bool optional) {
      if (optional && v.size() == 0) return;
      if (v.size() != len) {
        std::ostringstream os;
        os << "model: constraint " << j << " vector " << name << " must have length " << len
           << ", got " << v.size();
        throw std::invalid_argument(os.str());
      }
    };
    check_vec(cs.a, "a", n, false);
    check_vec(cs.b, "b", n, false);
    check_vec(cs.c, "c", n_x, false);
    check_vec(cs.d, "d", n_x, false);
    check_vec(cs.h, "h", n, true);
  }
  if (!h.empty()) {
    require(h.size() == r, "model: lag loading list must have one entry per regime combination");
    require(g.size() == n, "model: selector g must have length n");
    for (size_t s = 0; s < h.size(); ++s)
      require(h[s].size() == n, "model: lag loading h[" + std::to_string(s) + "] must have length n");
  }
  require(n_predetermined >= 0 && n_predetermined < n, "model: n_predetermined out of range");
}

double mu_from(double r, double pi_star) {
  require(r > 0.0 && pi_star > 0.0, "mu_from: r and pi_star must be positive");
  return std::log(r * pi_star);
}

CanonicalModel build_acs(double psi, double mu) {
  require(psi > 0.0, "build_acs: psi must be positive");
  CanonicalModel md;
  md.n = 1;
  md.n_x = 2;  // X = (M, 1)'
  md.A = {Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Constant(1, 1, -psi)};
  md.B = {Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1)};
  Eigen::MatrixXd C0(1, 2), C1(1, 2), Dm(1, 2);
  C0 << 0, mu;
  C1 << 0, 0;
  Dm << -1, 0;
  md.C = {C0, C1};
  md.D = {Dm, Dm};
  md.constraints = {{vec({psi}), vec({0}), vec({0, mu}), vec({0, 0}), {}}};
  md.validate();
  return md;
}

CanonicalModel build_nk_tr(double beta, double sigma, double lambda, double psi,
                           double psi_x, double mu) {
  require(beta > 0.0 && beta < 1.0, "build_nk_tr: beta must be in (0,1)");
  require(sigma > 0.0, "build_nk_tr: sigma must be positive");
  require(lambda > 0.0, "build_nk_tr: lambda must be positive");
  CanonicalModel md;
  md.n = 2;
  md.n_x = 4;  // X = (u, eps, nu, 1)'
  Eigen::MatrixXd A0(2, 2), A1(2, 2), B(2, 2), C0(2, 4), C1(2, 4);
  A0 << 1, -lambda, 0, 1;
  A1 << 1, -lambda, sigma * psi, 1 + sigma * psi_x;
  B << -beta, 0, -sigma, -1;
  C0 << -1, 0, 0, 0, 0, -1, 0, -sigma * mu;
  C1 << -1, 0, 0, 0, 0, -1, sigma, 0;
  md.A = {A0, A1};
  md.B = {B, B};
  md.C = {C0, C1};
  md.D = {Eigen::MatrixXd::Zero(2, 4), Eigen::MatrixXd::Zero(2, 4)};
  md.constraints = {{vec({psi, psi_x}), vec({0, 0}), vec({0, 0, 1, mu}), vec({0, 0, 0, 0}), {}}};
  md.validate();
  return md;
}

CanonicalModel build_nk_op(double beta, double sigma, double lambda, double gamma,
                           double mu) {
  require(beta > 0.0 && beta < 1.0, "build_nk_op: beta must be in (0,1)");
  require(sigma > 0.0, "build_nk_op: sigma must be positive");
  require(lambda > 0.0, "build_nk_op: lambda must be positive");
  require(gamma > 0.0, "build_nk_op: gamma must be positive");
  CanonicalModel md;
  md.n = 2;
  md.n_x = 3;  // X = (u, eps, 1)'
  Eigen::MatrixXd A0(2, 2), A1(2, 2), B0(2, 2), B1(2, 2), C0(2, 3), C1(2, 3);
  A0 << 1, -lambda, 0, 1;
  A1 << 1, -lambda, lambda / gamma, 1;
  B0 << -beta, 0, -sigma, -1;
  B1 << -beta, 0, 0, 0;
  C0 << -1, 0, 0, 0, -1, -sigma * mu;
  C1 << -1, 0, 0, 0, 0, 0;
  md.A = {A0, A1};
  md.B = {B0, B1};
  md.C = {C0, C1};
  md.D = {Eigen::MatrixXd::Zero(2, 3), Eigen::MatrixXd::Zero(2, 3)};
  md.constraints = {{vec({0, -1.0 / sigma}), vec({1, 1.0 / sigma}), vec({0, 1.0 / sigma, mu}),
                     vec({0, 0, 0}), {}}};
  md.validate();
  return md;
}

CanonicalModel build_nk_itr(double beta, double sigma, double lambda, double psi,
                            double psi_x, double phi, double mu) {
  require(beta > 0.0 && beta < 1.0, "build_nk_itr: beta must be in (0,1)");
  require(sigma > 0.0, "build_nk_itr: sigma must be positive");
  require(lambda > 0.0, "build_nk_itr: lambda must be positive");
  require(phi >= 0.0 && phi < 1.0, "build_nk_itr: phi must be in [0,1)");
  CanonicalModel md;
  md.n = 3;  // Y = (pi, x, R)'
  md.n_x = 4;
  Eigen::MatrixXd A0(3, 3), A1(3, 3), B(3, 3), C0(3, 4), C1(3, 4);
  A0 << 1, -lambda, 0,
        0, 1, 0,
        0, 0, 1;
  A1 << 1, -lambda, 0,
        0, 1, sigma,
        -psi, -psi_x, 1;
  B << -beta, 0, 0,
       -sigma, -1, 0,
        0, 0, 0;
  // Binding branch pins R = -mu, so the rate row constant is +mu (R + mu = 0).
  C0 << -1, 0, 0, 0,
         0, -1, 0, -sigma * mu,
         0, 0, 0, mu;
  C1 << -1, 0, 0, 0,
         0, -1, 0, 0,
         0, 0, -1, 0;
  md.A = {A0, A1};
  md.B = {B, B};
  md.C = {C0, C1};
  md.D = {Eigen::MatrixXd::Zero(3, 4), Eigen::MatrixXd::Zero(3, 4)};
  // Desired-rate indicator: phi*R_{t-1} + psi*pi + psi_x*x + nu + mu > 0. Equivalent to
  // R_t + mu > 0 for regime classification but keeps binding-state margins strict.
  md.constraints = {{vec({psi, psi_x, 0}), vec({0, 0, 0}), vec({0, 0, 1, mu}),
                     vec({0, 0, 0, 0}), vec({0, 0, phi})}};
  md.h = {vec({0, 0, 0}), vec({0, 0, -phi})};
  md.g = vec({0, 0, 1});
  md.validate();
  return md;
}

CanonicalModel build_acs_str(double psi, double phi, double mu) {
  require(psi > 0.0, "build_acs_str: psi must be positive");
  require(phi >= 0.0, "build_acs_str: phi must be nonnegative");
  CanonicalModel md;
  md.n = 2;  // Y = (R_{t-1}, pi_t)', first component predetermined
  md.n_x = 2;
  Eigen::MatrixXd A0 = Eigen::MatrixXd::Zero(2, 2), A1(2, 2), B(2, 2), D0(2, 2), D1(2, 2);
  A1 << phi, psi, 0, 0;
  B << -1, 0, 1, -1;
  D0 << 0, -mu, 1, 0;
  D1 << 0, 0, 1, 0;
  md.A = {A0, A1};
  md.B = {B, B};
  md.C = {Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2)};
  md.D = {D0, D1};
  md.constraints = {{vec({phi, psi}), vec({0, 0}), vec({0, mu}), vec({0, 0}), {}}};
  md.n_predetermined = 1;
  md.validate();
  return md;
}

CanonicalModel build_nk_ump(double beta, double sigma, double lambda, double psi,
                            double psi_x, double xi, double mu) {
  require(xi >= 0.0 && xi <= 1.0, "build_nk_ump: xi must be in [0,1]");
  CanonicalModel md = build_nk_tr(beta, sigma, lambda, psi, psi_x, mu);
  // Only the binding regime changes: the shadow rate keeps transmitting with
  // weight xi, the floored rate with weight 1-xi.
  md.A[0] << 1, -lambda, sigma * xi * psi, 1 + sigma * xi * psi_x;
  md.C[0] << -1, 0, 0, 0, 0, -1, sigma * xi, -sigma * (1.0 - xi) * mu;
  md.validate();
  return md;
}

CanonicalModel build_zlb_expectations(double psi, double mu) {
  require(psi > 0.0, "build_zlb_expectations: psi must be positive");
  CanonicalModel md;
  md.n = 1;
  md.n_x = 2;  // X = (M, 1)'
  // Regime index: bit 0 = rate constraint slack, bit 1 = expectations floor slack.
  md.A.assign(4, Eigen::MatrixXd::Zero(1, 1));
  md.B.assign(4, Eigen::MatrixXd::Zero(1, 1));
  md.C.assign(4, Eigen::MatrixXd::Zero(1, 2));
  md.D.assign(4, Eigen::MatrixXd::Zero(1, 2));
  for (int s = 0; s < 4; ++s) {
    const bool rate_slack = s & 1;
    const bool exp_slack = s & 2;
    md.A[s](0, 0) = rate_slack ? -psi : 0.0;
    md.B[s](0, 0) = exp_slack ? 1.0 : 0.0;
    md.C[s](0, 1) = rate_slack ? 0.0 : mu;
    md.D[s](0, 0) = -1.0;
  }
  md.constraints = {
      {vec({psi}), vec({0}), vec({0, mu}), vec({0, 0}), {}},  // rate floor
      {vec({0}), vec({1}), vec({0, 0}), vec({0, 0}), {}},     // expectations floor
  };
  md.validate();
  return md;
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& rows, const std::string& name) {
  if (!rows.is_array() || rows.empty() || !rows[0].is_array())
    throw std::invalid_argument("model: field " + name + " must be an array of rows");
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != static_cast<size_t>(m.cols()))
      throw std::invalid_argument("model: ragged rows in " + name);
    for (size_t c = 0; c < rows[i].size(); ++c) m(i, c) = rows[i][c].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& arr, const std::string& name) {
  if (!arr.is_array()) throw std::invalid_argument("model: field " + name + " must be an array");
  Eigen::VectorXd v(arr.size());
  for (size_t i = 0; i < arr.size(); ++i) v(i) = arr[i].get<double>();
  return v;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

}  // namespace

std::string serialize(const CanonicalModel& model) {
  model.validate();
  nlohmann::json j;
  j["n"] = model.n;
  j["n_x"] = model.n_x;
  if (model.m() == 1) {
    j["A0"] = matrix_to_json(model.A[0]);
    j["A1"] = matrix_to_json(model.A[1]);
    j["B0"] = matrix_to_json(model.B[0]);
    j["B1"] = matrix_to_json(model.B[1]);
    j["C0"] = matrix_to_json(model.C[0]);
    j["C1"] = matrix_to_json(model.C[1]);
    j["D0"] = matrix_to_json(model.D[0]);
    j["D1"] = matrix_to_json(model.D[1]);
  } else {
    nlohmann::json blocks;
    for (int s = 0; s < model.regime_count(); ++s) {
      nlohmann::json b;
      b["A"] = matrix_to_json(model.A[s]);
      b["B"] = matrix_to_json(model.B[s]);
      b["C"] = matrix_to_json(model.C[s]);
      b["D"] = matrix_to_json(model.D[s]);
      blocks[std::to_string(s)] = std::move(b);
    }
    j["blocks"] = std::move(blocks);
  }
  nlohmann::json cons = nlohmann::json::array();
  for (const auto& cs : model.constraints) {
    nlohmann::json c;
    c["a"] = vector_to_json(cs.a);
    c["b"] = vector_to_json(cs.b);
    c["c"] = vector_to_json(cs.c);
    c["d"] = vector_to_json(cs.d);
    if (cs.h.size() > 0) c["h"] = vector_to_json(cs.h);
    cons.push_back(std::move(c));
  }
  j["constraints"] = std::move(cons);
  if (!model.h.empty()) {
    // Emitted as full H_s = h_s g' plus the selector.
    for (int s = 0; s < model.regime_count() && s < 2; ++s)
      j[s == 0 ? "H0" : "H1"] = matrix_to_json(model.h[s] * model.g.transpose());
    j["g"] = vector_to_json(model.g);
  }
  if (model.n_predetermined > 0) j["n_predetermined"] = model.n_predetermined;
  return j.dump(2);
}

CanonicalModel load_model(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("model: JSON parse error: ") + e.what());
  }
  CanonicalModel md;
  md.n = j.at("n").get<int>();
  md.n_x = j.at("n_x").get<int>();

  if (!j.contains("constraints") || !j["constraints"].is_array() || j["constraints"].empty())
    throw std::invalid_argument("model: constraints list is missing or empty");
  for (const auto& c : j["constraints"]) {
    ConstraintSpec cs;
    cs.a = vector_from_json(c.at("a"), "constraint a");
    cs.b = vector_from_json(c.at("b"), "constraint b");
    cs.c = vector_from_json(c.at("c"), "constraint c");
    cs.d = vector_from_json(c.at("d"), "constraint d");
    if (c.contains("h")) cs.h = vector_from_json(c["h"], "constraint h");
    md.constraints.push_back(std::move(cs));
  }

  const int regimes = md.regime_count();
  if (j.contains("blocks")) {
    md.A.resize(regimes);
    md.B.resize(regimes);
    md.C.resize(regimes);
    md.D.resize(regimes);
    for (int s = 0; s < regimes; ++s) {
      const std::string key = std::to_string(s);
      if (!j["blocks"].contains(key))
        throw std::invalid_argument("model: blocks map is missing regime " + key);
      const auto& b = j["blocks"][key];
      md.A[s] = matrix_from_json(b.at("A"), "blocks." + key + ".A");
      md.B[s] = matrix_from_json(b.at("B"), "blocks." + key + ".B");
      md.C[s] = matrix_from_json(b.at("C"), "blocks." + key + ".C");
      md.D[s] = matrix_from_json(b.at("D"), "blocks." + key + ".D");
    }
  } else {
    if (md.m() != 1)
      throw std::invalid_argument("model: flat A0/A1 schema requires exactly one constraint");
    for (const char* key : {"A0", "A1", "B0", "B1", "C0", "C1", "D0", "D1"})
      if (!j.contains(key)) throw std::invalid_argument(std::string("model: missing block ") + key);
    md.A = {matrix_from_json(j["A0"], "A0"), matrix_from_json(j["A1"], "A1")};
    md.B = {matrix_from_json(j["B0"], "B0"), matrix_from_json(j["B1"], "B1")};
    md.C = {matrix_from_json(j["C0"], "C0"), matrix_from_json(j["C1"], "C1")};
    md.D = {matrix_from_json(j["D0"], "D0"), matrix_from_json(j["D1"], "D1")};
  }

  if (j.contains("H0") || j.contains("H1")) {
    if (!j.contains("g"))
      throw std::invalid_argument("model: lag blocks require the selector g");
    md.g = vector_from_json(j["g"], "g");
    if (md.g.size() != md.n) throw std::invalid_argument("model: selector g must have length n");
    const double gg = md.g.squaredNorm();
    if (gg <= 0.0) throw std::invalid_argument("model: selector g must be nonzero");
    md.h.resize(regimes, Eigen::VectorXd::Zero(md.n));
    for (int s = 0; s < 2 && s < regimes; ++s) {
      const char* key = s == 0 ? "H0" : "H1";
      if (!j.contains(key)) continue;
      Eigen::MatrixXd H = matrix_from_json(j[key], key);
      if (H.rows() != md.n || H.cols() != md.n)
        throw std::invalid_argument(std::string("model: block ") + key + " must be n x n");
      Eigen::VectorXd hs = H * md.g / gg;
      if ((hs * md.g.transpose() - H).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + H.cwiseAbs().maxCoeff()))
        throw std::invalid_argument(std::string("model: block ") + key +
                                    " is not of the scalar-state form h g'");
      md.h[s] = std::move(hs);
    }
  }
  if (j.contains("n_predetermined")) md.n_predetermined = j["n_predetermined"].get<int>();

  md.validate();
  return md;
}

CanonicalModel load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("model: cannot open file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_model(ss.str());
}

ReducedNk reduce_nk(double beta, double sigma, double lambda, double psi, double mu,
                    const MarkovChain& chain) {
  require(chain.n_x() == 1, "reduce_nk: chain support must be the scalar eps states");
  const int k = chain.k();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
  const Eigen::MatrixXd& K = chain.kernel;
  ReducedNk red;
  red.Q = I - K - beta * (I - K) * K - lambda * sigma * K;
  red.slack_addon = lambda * sigma * psi;
  red.rhs_base = lambda * chain.support.row(0).transpose();
  red.rhs_binding_addon = lambda * sigma * mu;
  red.psi = psi;
  red.mu = mu;
  return red;
}

}  // namespace coherence
