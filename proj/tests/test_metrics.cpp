#include <doctest.h>

#include "tribench/metrics.hpp"

#include <cmath>
#include <random>

using namespace tribench;

namespace {

GaussianStats gauss(Eigen::VectorXd mu, Eigen::MatrixXd sigma) { return {std::move(mu), std::move(sigma), false}; }

// Weighted least squares at x0 using every point, solved by normal equations.
double wls_oracle(const std::vector<double>& xs, const std::vector<double>& ys, std::size_t i) {
  double dmax = 0.0;
  for (double x : xs) dmax = std::max(dmax, std::abs(x - xs[i]));
  Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const double u = std::abs(xs[j] - xs[i]) / dmax;
    const double w = u < 1 ? std::pow(1 - u * u * u, 3) : 0.0;
    const Eigen::Vector2d row(1.0, xs[j]);
    A += w * row * row.transpose();
    b += w * row * ys[j];
  }
  const Eigen::Vector2d beta = A.ldlt().solve(b);
  return beta[0] + beta[1] * xs[i];
}

}  // namespace

TEST_CASE("Frechet distance of scalar Gaussians has the closed form") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> mu(-5, 5), sd(0.01, 3);
  for (int i = 0; i < 100; ++i) {
    const double m1 = mu(rng), m2 = mu(rng), s1 = sd(rng), s2 = sd(rng);
    const double d = frechet_distance(gauss(Eigen::VectorXd::Constant(1, m1), Eigen::MatrixXd::Constant(1, 1, s1 * s1)),
                                      gauss(Eigen::VectorXd::Constant(1, m2), Eigen::MatrixXd::Constant(1, 1, s2 * s2)));
    CHECK(std::abs(d - ((m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2))) < 1e-8);
  }
}

TEST_CASE("Frechet distance for diagonal covariances is per-axis") {
  const Eigen::VectorXd ma{{0.0, 1.0, -2.0}}, mb{{1.0, 1.5, 0.0}};
  const Eigen::VectorXd va{{1.0, 4.0, 0.25}}, vb{{2.0, 1.0, 0.5}};
  const double d = frechet_distance(gauss(ma, va.asDiagonal()), gauss(mb, vb.asDiagonal()));
  const double expect = (ma - mb).squaredNorm() + (va.cwiseSqrt() - vb.cwiseSqrt()).squaredNorm();
  CHECK(std::abs(d - expect) < 1e-8);
}

TEST_CASE("Frechet distance is zero on itself, symmetric and non-negative") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  auto random_stats = [&] {
    Eigen::MatrixXd f(40, 5);
    for (int i = 0; i < f.size(); ++i) f.data()[i] = n(rng);
    return gaussian_stats(f);
  };
  const GaussianStats a = random_stats(), b = random_stats();
  CHECK(std::abs(frechet_distance(a, a)) < 1e-8);
  CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-8);
  CHECK(frechet_distance(a, b) >= 0.0);
  CHECK_THROWS_AS(frechet_distance(a, gauss(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2))),
                  ContractError);
}

TEST_CASE("covariance uses n-1 and loads the diagonal when samples are few") {
  Eigen::MatrixXd f(3, 1);
  f << 1.0, 2.0, 3.0;
  const GaussianStats s = gaussian_stats(f);
  CHECK(s.mu[0] == doctest::Approx(2.0));
  CHECK(s.sigma(0, 0) == doctest::Approx(1.0));
  CHECK_FALSE(s.diagonal_loading);
  const GaussianStats few = gaussian_stats(Eigen::MatrixXd::Random(3, 4));
  CHECK(few.diagonal_loading);
  CHECK((few.sigma - few.sigma.transpose()).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("Inception score closed forms and bounds") {
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(8, 4);
  for (int i = 0; i < 8; ++i) onehot(i, i % 4) = 1.0;
  CHECK(std::abs(inception_score(onehot, 1).mean - 4.0) < 1e-9);
  CHECK(std::abs(inception_score(onehot, 2).mean - 4.0) < 1e-9);
  CHECK(std::abs(inception_score(onehot, 2).std) < 1e-12);

  const Eigen::MatrixXd same = Eigen::RowVectorXd{{0.1, 0.2, 0.3, 0.4}}.replicate(10, 1);
  CHECK(std::abs(inception_score(same, 2).mean - 1.0) < 1e-12);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  Eigen::MatrixXd p(20, 4);
  for (int i = 0; i < 20; ++i) {
    for (int c = 0; c < 4; ++c) p(i, c) = u(rng);
    p.row(i) /= p.row(i).sum();
  }
  const double is = inception_score(p, 1).mean;
  CHECK(is >= 1.0);
  CHECK(is <= 4.0);
  Eigen::MatrixXd shuffled = p;
  shuffled.row(0).swap(shuffled.row(7));
  CHECK(inception_score(shuffled, 1).mean == doctest::Approx(is).epsilon(1e-12));
  CHECK_THROWS_AS(inception_score(Eigen::MatrixXd(0, 4), 1), ContractError);
}

TEST_CASE("rank-sum selection") {
  SUBCASE("single checkpoint") {
    const auto r = rank_sum_select({10}, {2.0}, {5.0});
    REQUIRE(r.size() == 1);
    CHECK(r[0].epoch == 10);
  }
  SUBCASE("dominant checkpoint comes first") {
    const auto r = rank_sum_select({10, 20, 30}, {1.5, 3.0, 2.0}, {9.0, 1.0, 4.0});
    CHECK(r[0].epoch == 20);
  }
  SUBCASE("opposite ranks tie and fall back to FID") {
    const auto r = rank_sum_select({10, 20, 30}, {3.0, 2.0, 1.0}, {3.0, 2.0, 1.0});
    REQUIRE(r.size() == 3);
    for (const auto& c : r) CHECK(c.rank_sum == 4);
    CHECK(r[0].epoch == 30);
    CHECK(r[1].epoch == 20);
    CHECK(r[2].epoch == 10);
  }
  SUBCASE("shared ranks and epoch tiebreak") {
    const auto r = rank_sum_order({10, 20}, {2.0, 2.0}, {1.0, 1.0});
    CHECK(r[0].is_rank == 1);
    CHECK(r[1].is_rank == 1);
    CHECK(r[0].epoch == 10);
  }
  SUBCASE("top five out of forty, permutation invariant") {
    std::vector<int> epochs;
    std::vector<double> is, fid;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (int e = 1; e <= 40; ++e) {
      epochs.push_back(10 * e);
      is.push_back(1 + 3 * u(rng));
      fid.push_back(10 * u(rng));
    }
    const auto top = rank_sum_select(epochs, is, fid);
    CHECK(top.size() == 5);
    std::vector<int> pe(epochs.rbegin(), epochs.rend());
    std::vector<double> pi(is.rbegin(), is.rend()), pf(fid.rbegin(), fid.rend());
    const auto top2 = rank_sum_select(pe, pi, pf);
    for (int i = 0; i < 5; ++i) CHECK(top[i].epoch == top2[i].epoch);
  }
  CHECK_THROWS_AS(rank_sum_select({}, {}, {}), ContractError);
  CHECK_THROWS_AS(rank_sum_select({1, 2}, {1.0}, {1.0, 2.0}), ContractError);
}

TEST_CASE("lowess reproduces lines and constants") {
  std::vector<double> xs, ys, cs;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> gap(0.1, 2.0);
  double x = 0.0;
  for (int i = 0; i < 50; ++i) {
    x += gap(rng);
    xs.push_back(x);
    ys.push_back(3.0 - 0.7 * x);
    cs.push_back(2.5);
  }
  for (double frac : {0.05, 0.3, 0.7, 1.0}) {
    const auto sm = lowess(xs, ys, frac);
    for (std::size_t i = 0; i < xs.size(); ++i) CHECK(std::abs(sm[i] - ys[i]) < 1e-9);
    const auto sc = lowess(xs, cs, frac);
    for (double v : sc) CHECK(std::abs(v - 2.5) < 1e-12);
  }
}

TEST_CASE("lowess with frac 1 is global weighted least squares") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> xs, ys;
  for (int i = 0; i < 30; ++i) {
    xs.push_back(i + 0.5 * u(rng) * 0.9);
    ys.push_back(u(rng));
  }
  const auto sm = lowess(xs, ys, 1.0);
  for (std::size_t i = 0; i < xs.size(); ++i) CHECK(std::abs(sm[i] - wls_oracle(xs, ys, i)) < 1e-9);

  std::vector<double> scaled;
  for (double v : xs) scaled.push_back(4.0 * v - 7.0);
  const auto a = lowess(xs, ys, 0.3), b = lowess(scaled, ys, 0.3);
  for (std::size_t i = 0; i < xs.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
}

TEST_CASE("lowess input contract") {
  CHECK_THROWS_AS(lowess({1.0}, {1.0}), ContractError);
  CHECK_THROWS_AS(lowess({1.0, 1.0}, {1.0, 2.0}), ContractError);
  CHECK_THROWS_AS(lowess({1.0, 2.0}, {1.0, 2.0}, 0.0), ContractError);
}

TEST_CASE("pose buckets follow the goal report") {
  GoalReport r;
  CHECK(pose_bucket(r) == PoseBucket::Hidden);
  r.n_mask = 3;
  CHECK(pose_bucket(r) == PoseBucket::Partial);
  r.goal1 = true;
  CHECK(pose_bucket(r) == PoseBucket::VisibleOutside);
  r.goal2 = true;
  CHECK(pose_bucket(r) == PoseBucket::VisibleInside);
}

TEST_CASE("feature net outputs distributions and learns a separable set") {
  FeatureNet net(32, 32, 8, 1);
  std::vector<ImageBuffer> imgs;
  std::vector<int> labels;
  Rng rng(7);
  for (int i = 0; i < 32; ++i) {
    const int label = i % 4;
    ImageBuffer img(32, 32, 1, static_cast<std::uint8_t>(30 + 60 * label));
    for (auto& v : img.data) v = static_cast<std::uint8_t>(v + rng() % 10);
    imgs.push_back(img);
    labels.push_back(label);
  }
  const FeatureOutput before = net.run(imgs);
  for (int i = 0; i < before.probs.rows(); ++i) CHECK(std::abs(before.probs.row(i).sum() - 1.0) < 1e-9);
  CHECK(before.features.cols() == 8);
  const double loss = net.train(imgs, labels, 60, 8, 3e-3, rng);
  CHECK(loss < 0.5);
  const FeatureOutput after = net.run(imgs);
  int correct = 0;
  for (int i = 0; i < 32; ++i) {
    Eigen::Index arg;
    after.probs.row(i).maxCoeff(&arg);
    correct += arg == labels[static_cast<std::size_t>(i)];
  }
  CHECK(correct >= 28);
  CHECK_THROWS_AS(FeatureNet(30, 32, 8, 1), ConfigError);
}
