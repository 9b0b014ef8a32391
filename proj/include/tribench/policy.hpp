#pragma once

#include "tribench/cut.hpp"
#include "tribench/embed.hpp"
#include "tribench/env.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace tribench {

enum class Variant { Original, Translated, Embedded };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct InputConfig {
  Variant variant = Variant::Original;
  std::filesystem::path translator_checkpoint;  // Translated / Embedded only
  CutConfig cut;                                // architecture of that checkpoint
  EmbedConfig embed;                            // Embedded only

  bool needs_translator() const { return variant != Variant::Original; }
  void validate() const;
};

// Turns a rendered BGR frame into the policy input of one variant.
class Observer {
 public:
  explicit Observer(InputConfig cfg);
  Observer(const Observer&) = delete;
  Observer& operator=(const Observer&) = delete;

  Eigen::VectorXd operator()(const ImageBuffer& frame, std::uint64_t episode = 0) const;
  int length(int width, int height) const;
  const InputConfig& config() const { return cfg_; }

 private:
  InputConfig cfg_;
  std::unique_ptr<Translator> tr_;
};

Eigen::VectorXd make_observation(const TissueState& state, const Camera& cam,
                                 const RenderStyle& style, const Observer& obs,
                                 std::uint64_t episode = 0);

struct PolicyConfig {
  int hidden = 32;
  double init_log_std = -0.5;
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  void validate() const;
};

// Actor trunk feeding a Gaussian mean head; the value head reads the trunk
// features through a stop-gradient, so value regression never moves the
// action distribution.
class PolicyNet {
 public:
  // Image variants take frames of width x height; obs_length must match the
  // observer (width * height, or L*S*k for Embedded).
  PolicyNet(Variant v, int width, int height, int obs_length, const PolicyConfig& cfg,
            std::uint64_t seed);
  PolicyNet(const PolicyNet&) = delete;
  PolicyNet& operator=(const PolicyNet&) = delete;

  struct Output {
    ad::Var mu;       // [B,6], pre-squash
    ad::Var log_std;  // [6]
    ad::Var value;    // [B]
  };
  // obs is [B, obs_length] row-major.
  Output forward(ad::Tape& t, const ad::Tensor& obs) const;

  int obs_length() const { return obs_len_; }
  Variant variant() const { return variant_; }
  const PolicyConfig& config() const { return cfg_; }
  void clamp_log_std();

  ad::ParamStore store;

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  Variant variant_;
  PolicyConfig cfg_;
  int width_, height_, obs_len_;
  ad::Conv2d c1_, c2_;
  ad::Linear fc1_, fc2_, mu_, v1_, v2_;
  ad::Parameter* log_std_ = nullptr;
};

ad::Tensor stack_observations(const std::vector<const Eigen::VectorXd*>& rows);

// log(1 - tanh(u)^2) summed over action dims, the change-of-variables term.
double squash_correction(const ActionVec& u);

}  // namespace tribench
