#include "tribench/metrics.hpp"

#include "tribench/cut.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tribench {

using ad::Tape;
using ad::Var;

PoseBucket pose_bucket(const GoalReport& r) {
  if (r.n_mask == 0) return PoseBucket::Hidden;
  if (!r.goal1) return PoseBucket::Partial;
  return r.goal2 ? PoseBucket::VisibleInside : PoseBucket::VisibleOutside;
}

// ---------------------------------------------------------------- FeatureNet

FeatureNet::FeatureNet(int width, int height, int feature_dim, std::uint64_t seed)
    : width_(width), height_(height), feature_dim_(feature_dim) {
  if (width % 16 != 0 || height % 16 != 0 || width < 16 || height < 16)
    throw ConfigError("feature net: image sides must be positive multiples of 16");
  if (feature_dim < 2) throw ConfigError("feature net: feature dimension must be >= 2");
  Rng rng(seed);
  c1_ = ad::Conv2d(store_, "F.c1", 1, 8, 4, 2, 1, rng);
  c2_ = ad::Conv2d(store_, "F.c2", 8, 16, 4, 2, 1, rng);
  c3_ = ad::Conv2d(store_, "F.c3", 16, 16, 4, 4, 0, rng);
  fc_ = ad::Linear(store_, "F.fc", 16 * (width / 16) * (height / 16), feature_dim, rng);
  out_ = ad::Linear(store_, "F.out", feature_dim, kPoseBuckets, rng);
}

Var FeatureNet::logits(Tape& t, Var x, Var* features) const {
  Var h = ad::leaky_relu(c1_(t, x), 0.2);
  h = ad::leaky_relu(c2_(t, h), 0.2);
  h = ad::leaky_relu(c3_(t, h), 0.2);
  const int n = x.shape()[0];
  h = ad::reshape(h, {n, fc_.in_features()});
  const Var f = ad::tanh(fc_(t, h));
  if (features) *features = f;
  return out_(t, f);
}

FeatureOutput FeatureNet::run(const std::vector<ImageBuffer>& images) const {
  if (images.empty()) throw ContractError("feature net: no images");
  FeatureOutput out;
  const int n = static_cast<int>(images.size());
  out.probs.resize(n, kPoseBuckets);
  out.features.resize(n, feature_dim_);
  for (int i = 0; i < n; ++i) {
    const ImageBuffer& img = images[static_cast<std::size_t>(i)];
    if (img.width != width_ || img.height != height_)
      throw ShapeError("feature net: expected " + std::to_string(width_) + "x" +
                       std::to_string(height_) + " images");
    Tape t(false);
    Var f;
    const Var z = logits(t, t.constant(image_to_tensor(img)), &f);
    const Eigen::VectorXd& l = z.value().data;
    const Eigen::ArrayXd e = (l.array() - l.maxCoeff()).exp();
    out.probs.row(i) = (e / e.sum()).matrix().transpose();
    out.features.row(i) = f.value().data.transpose();
  }
  return out;
}

double FeatureNet::train(const std::vector<ImageBuffer>& images, const std::vector<int>& labels,
                         int epochs, int batch_size, double lr, Rng& rng) {
  if (images.empty() || images.size() != labels.size())
    throw ContractError("feature net: need one label per image");
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  const ad::AdamConfig adam{lr, 0.9, 0.999, 1e-8};
  double last = 0.0;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(batch_size)) {
      std::vector<const ImageBuffer*> batch;
      std::vector<int> targets;
      for (std::size_t i = s; i < std::min(order.size(), s + batch_size); ++i) {
        batch.push_back(&images[order[i]]);
        targets.push_back(labels[order[i]]);
      }
      Tape t;
      const Var loss = ad::cross_entropy(logits(t, t.constant(stack_images(batch)), nullptr), targets);
      store_.zero_grad();
      t.backward(loss);
      store_.adam_step(adam);
      total += loss.item();
      ++batches;
    }
    last = total / batches;
    if (!std::isfinite(last)) throw TrainingDiverged("feature net loss is not finite");
  }
  return last;
}

// ------------------------------------------------------------------- scores

GaussianStats gaussian_stats(const Eigen::MatrixXd& features) {
  const Eigen::Index n = features.rows(), f = features.cols();
  if (n < 2) throw ContractError("gaussian_stats: need at least two samples");
  GaussianStats s;
  s.mu = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mu.transpose();
  s.sigma = centered.transpose() * centered / static_cast<double>(n - 1);
  s.sigma = 0.5 * (s.sigma + s.sigma.transpose());
  if (n < f + 1) {
    s.sigma.diagonal().array() += 1e-6;
    s.diagonal_loading = true;
  }
  return s;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mu.size() != b.mu.size() || a.sigma.rows() != a.mu.size() ||
      b.sigma.rows() != b.mu.size() || a.sigma.cols() != a.sigma.rows() ||
      b.sigma.cols() != b.sigma.rows())
    throw ContractError("frechet_distance: dimension mismatch");
  const Eigen::MatrixXd ra = psd_sqrt(a.sigma);
  const Eigen::MatrixXd inner = ra * b.sigma * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double tr_cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_cross;
  return std::max(0.0, d);
}

InceptionScore inception_score(const Eigen::MatrixXd& probs, int splits) {
  const Eigen::Index n = probs.rows();
  if (n == 0) throw ContractError("inception_score: no samples");
  if (splits < 1 || n < splits) throw ContractError("inception_score: need at least one sample per split");
  std::vector<double> scores;
  for (int s = 0; s < splits; ++s) {
    const Eigen::Index lo = n * s / splits, hi = n * (s + 1) / splits;
    const Eigen::MatrixXd part = probs.middleRows(lo, hi - lo);
    const Eigen::RowVectorXd marginal = part.colwise().mean();
    double kl = 0.0;
    for (Eigen::Index i = 0; i < part.rows(); ++i)
      for (Eigen::Index c = 0; c < part.cols(); ++c) {
        const double p = part(i, c);
        if (p > 0.0) kl += p * (std::log(p) - std::log(marginal(c)));
      }
    scores.push_back(std::exp(kl / static_cast<double>(part.rows())));
  }
  InceptionScore out;
  out.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / splits;
  double var = 0.0;
  for (double v : scores) var += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(var / splits);
  return out;
}

InceptionScore inception_score(const FeatureNet& net, const std::vector<ImageBuffer>& images,
                               int splits) {
  if (images.empty()) throw ContractError("inception_score: no images");
  return inception_score(net.run(images).probs, splits);
}

// ---------------------------------------------------------------- selection

namespace {

// Competition ranking: equal scores share the smallest rank.
std::vector<int> ranks(const std::vector<double>& v, bool higher_better) {
  std::vector<int> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    int better = 0;
    for (double w : v) better += higher_better ? (w > v[i]) : (w < v[i]);
    r[i] = better + 1;
  }
  return r;
}

}  // namespace

std::vector<RankedCheckpoint> rank_sum_order(const std::vector<int>& epochs,
                                             const std::vector<double>& is_scores,
                                             const std::vector<double>& fid_scores) {
  if (epochs.empty()) throw ContractError("rank_sum_select: no checkpoints");
  if (is_scores.size() != epochs.size() || fid_scores.size() != epochs.size())
    throw ContractError("rank_sum_select: score lists must match the checkpoint list");
  const std::vector<int> ri = ranks(is_scores, true), rf = ranks(fid_scores, false);
  std::vector<RankedCheckpoint> out;
  for (std::size_t i = 0; i < epochs.size(); ++i)
    out.push_back({i, epochs[i], ri[i], rf[i], ri[i] + rf[i], is_scores[i], fid_scores[i]});
  std::sort(out.begin(), out.end(), [](const RankedCheckpoint& a, const RankedCheckpoint& b) {
    if (a.rank_sum != b.rank_sum) return a.rank_sum < b.rank_sum;
    if (a.fid != b.fid) return a.fid < b.fid;
    return a.epoch < b.epoch;
  });
  return out;
}

std::vector<RankedCheckpoint> rank_sum_select(const std::vector<int>& epochs,
                                              const std::vector<double>& is_scores,
                                              const std::vector<double>& fid_scores,
                                              std::size_t top_n) {
  std::vector<RankedCheckpoint> out = rank_sum_order(epochs, is_scores, fid_scores);
  if (out.size() > top_n) out.resize(top_n);
  return out;
}

// ------------------------------------------------------------------ LOWESS

std::vector<double> lowess(const std::vector<double>& xs, const std::vector<double>& ys,
                           double frac) {
  const std::size_t n = xs.size();
  if (n < 2 || ys.size() != n) throw ContractError("lowess: need at least two (x, y) pairs");
  if (!(frac > 0.0 && frac <= 1.0)) throw ContractError("lowess: frac must be in (0, 1]");
  for (std::size_t i = 1; i < n; ++i)
    if (!(xs[i] > xs[i - 1])) throw ContractError("lowess: xs must be strictly increasing");

  const std::size_t r = std::min(n, static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n))));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Grow [lo, hi] around i to the r nearest points.
    std::size_t lo = i, hi = i;
    while (hi - lo + 1 < r) {
      if (lo == 0) ++hi;
      else if (hi == n - 1) --lo;
      else if (xs[i] - xs[lo - 1] <= xs[hi + 1] - xs[i]) --lo;
      else ++hi;
    }
    const double dmax = std::max(xs[i] - xs[lo], xs[hi] - xs[i]);
    if (dmax <= 0.0) {
      out[i] = ys[i];
      continue;
    }
    double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0;
    for (std::size_t j = lo; j <= hi; ++j) {
      const double dx = xs[j] - xs[i];
      const double u = std::abs(dx) / dmax;
      const double w = u < 1.0 ? std::pow(1.0 - u * u * u, 3) : 0.0;
      s0 += w;
      s1 += w * dx;
      s2 += w * dx * dx;
      t0 += w * ys[j];
      t1 += w * dx * ys[j];
    }
    const double det = s0 * s2 - s1 * s1;
    out[i] = det > 1e-12 * s0 * s2 ? (s2 * t0 - s1 * t1) / det : t0 / s0;
  }
  return out;
}

}  // namespace tribench
