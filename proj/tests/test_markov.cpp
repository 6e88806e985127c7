#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "coherence/markov.hpp"

using namespace coherence;

TEST_CASE("two_state kernels") {
  auto ch = two_state(1.0, 1.0, -(-0.01), 0.0);
  CHECK(ch.kernel.isApprox(Eigen::Matrix2d::Identity()));

  ch = two_state(0.8, 1.0, 0.01, 0.0);
  CHECK(ch.kernel(1, 0) == 0.0);
  CHECK(ch.kernel(1, 1) == 1.0);

  ch = two_state(0.5, 0.5, 1.0, -1.0);
  CHECK(ch.kernel.minCoeff() == doctest::Approx(0.5));
  CHECK(ch.kernel.maxCoeff() == doctest::Approx(0.5));

  CHECK_THROWS_AS(two_state(1.2, 0.5, 0.0, 0.0), std::invalid_argument);
  Eigen::VectorXd x1(2), x2(1);
  x1 << 1, 2;
  x2 << 1;
  CHECK_THROWS_AS(two_state(0.5, 0.5, x1, x2), std::invalid_argument);
}

TEST_CASE("absorbing_chain") {
  auto ch = absorbing_chain(0.8, -0.01);
  CHECK(ch.support(0, 0) == doctest::Approx(0.01));
  CHECK(ch.support(0, 1) == 0.0);
  CHECK(ch.kernel(0, 0) == doctest::Approx(0.8));
  CHECK(ch.kernel(0, 1) == doctest::Approx(0.2));
  CHECK(ch.kernel(1, 0) == 0.0);
  CHECK(ch.kernel(1, 1) == 1.0);

  CHECK_THROWS_AS(absorbing_chain(0.8, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(absorbing_chain(0.0, -0.01), std::invalid_argument);

  auto st = stationary_distribution(absorbing_chain(0.5, -0.02));
  CHECK(st.pi(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(st.pi(1) == doctest::Approx(1.0));
  CHECK(st.unique);
}

TEST_CASE("rouwenhorst basics") {
  auto ch = rouwenhorst(0.0, 1.0, 2);
  CHECK(ch.kernel(0, 0) == doctest::Approx(0.5));
  CHECK(ch.support(0, 0) == doctest::Approx(-1.0));
  CHECK(ch.support(0, 1) == doctest::Approx(1.0));

  ch = rouwenhorst(0.7, 1.0, 2);
  CHECK(ch.kernel(0, 0) == doctest::Approx(0.85));
  CHECK(ch.kernel(0, 1) == doctest::Approx(0.15));

  ch = rouwenhorst(0.9, 0.0007, 3);
  const double m = std::sqrt(2.0) * 0.0007 / std::sqrt(1.0 - 0.81);
  CHECK(ch.support(0, 0) == doctest::Approx(-m));
  CHECK(ch.support(0, 1) == doctest::Approx(0.0));
  CHECK(ch.support(0, 2) == doctest::Approx(m));

  auto st = stationary_distribution(ch);
  CHECK(st.pi(0) == doctest::Approx(0.25).epsilon(1e-10));
  CHECK(st.pi(1) == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(st.pi(2) == doctest::Approx(0.25).epsilon(1e-10));

  CHECK_THROWS_AS(rouwenhorst(1.0, 1.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(rouwenhorst(0.5, 1.0, 1), std::invalid_argument);
}

TEST_CASE("rouwenhorst moments and spectrum across k") {
  for (int k = 2; k <= 10; ++k) {
    const double rho = 0.9, sc = 0.0007;
    auto ch = rouwenhorst(rho, sc, k);
    for (int i = 0; i < k; ++i) CHECK(std::abs(ch.kernel.row(i).sum() - 1.0) <= 1e-12);

    auto st = stationary_distribution(ch);
    const Eigen::VectorXd grid = ch.support.row(0).transpose();
    const double mean = st.pi.dot(grid);
    CHECK(std::abs(mean) < 1e-12);
    const double var = st.pi.dot(grid.cwiseProduct(grid).eval()) - mean * mean;
    const double target = sc * sc / (1.0 - rho * rho);
    CHECK(var == doctest::Approx(target).epsilon(1e-8));

    Eigen::EigenSolver<Eigen::MatrixXd> es(ch.kernel);
    std::vector<double> mags;
    for (int i = 0; i < k; ++i) mags.push_back(std::abs(es.eigenvalues()(i)));
    std::sort(mags.rbegin(), mags.rend());
    CHECK(mags[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mags[1] == doctest::Approx(rho).epsilon(1e-10));

    CHECK((st.pi.transpose() * ch.kernel - st.pi.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("stationary distribution flags multiple ergodic classes") {
  auto ch = two_state(1.0, 1.0, 1.0, -1.0);  // both states absorbing
  auto st = stationary_distribution(ch);
  CHECK(!st.unique);
  CHECK(st.pi.sum() == doctest::Approx(1.0));
}

TEST_CASE("json round trip") {
  auto ch = rouwenhorst(0.7, 0.01, 4);
  auto back = MarkovChain::from_json(ch.to_json());
  CHECK(back.kernel.isApprox(ch.kernel, 1e-15));
  CHECK(back.support.isApprox(ch.support, 1e-15));
}
