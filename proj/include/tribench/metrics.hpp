#pragma once

#include "tribench/autodiff.hpp"
#include "tribench/layers.hpp"
#include "tribench/raster.hpp"
#include "tribench/reward.hpp"

#include <vector>

namespace tribench {

// Coarse tissue pose bucket used as the classifier target.
enum class PoseBucket { Hidden = 0, Partial = 1, VisibleOutside = 2, VisibleInside = 3 };
constexpr int kPoseBuckets = 4;
PoseBucket pose_bucket(const GoalReport& r);

struct FeatureOutput {
  Eigen::MatrixXd probs;     // n x classes, rows sum to 1
  Eigen::MatrixXd features;  // n x F penultimate activations
};

// Small convolutional classifier standing in for a pretrained feature network.
class FeatureNet {
 public:
  FeatureNet(int width, int height, int feature_dim, std::uint64_t seed);
  FeatureNet(const FeatureNet&) = delete;
  FeatureNet& operator=(const FeatureNet&) = delete;

  FeatureOutput run(const std::vector<ImageBuffer>& images) const;
  // Cross-entropy training with Adam; returns the last epoch's mean loss.
  double train(const std::vector<ImageBuffer>& images, const std::vector<int>& labels, int epochs,
               int batch_size, double lr, Rng& rng);

  int feature_dim() const { return feature_dim_; }
  ad::ParamStore& store() { return store_; }

 private:
  ad::Var logits(ad::Tape& t, ad::Var x, ad::Var* features) const;

  ad::ParamStore store_;
  ad::Conv2d c1_, c2_, c3_;
  ad::Linear fc_, out_;
  int width_, height_, feature_dim_;
};

struct GaussianStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  bool diagonal_loading = false;  // set when n < F + 1
};

// Sample mean and 1/(n-1) covariance of the rows.
GaussianStats gaussian_stats(const Eigen::MatrixXd& features);

double frechet_distance(const GaussianStats& a, const GaussianStats& b);

struct InceptionScore {
  double mean = 0.0;
  double std = 0.0;
};

// probs: n x C conditionals; split into contiguous chunks.
InceptionScore inception_score(const Eigen::MatrixXd& probs, int splits);
InceptionScore inception_score(const FeatureNet& net, const std::vector<ImageBuffer>& images,
                               int splits);

struct RankedCheckpoint {
  std::size_t index = 0;  // position in the input lists
  int epoch = 0;
  int is_rank = 0;
  int fid_rank = 0;
  int rank_sum = 0;
  double is = 0.0;
  double fid = 0.0;
};

// Full ordering by IS rank + FID rank; ties by lower FID, then earlier epoch.
std::vector<RankedCheckpoint> rank_sum_order(const std::vector<int>& epochs,
                                             const std::vector<double>& is_scores,
                                             const std::vector<double>& fid_scores);
std::vector<RankedCheckpoint> rank_sum_select(const std::vector<int>& epochs,
                                              const std::vector<double>& is_scores,
                                              const std::vector<double>& fid_scores,
                                              std::size_t top_n = 5);

// Single-pass tricube local-linear smoother.
std::vector<double> lowess(const std::vector<double>& xs, const std::vector<double>& ys,
                           double frac = 0.3);

}  // namespace tribench
