#pragma once

#include "tribench/autodiff.hpp"
#include "tribench/layers.hpp"
#include "tribench/raster.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace tribench {

struct CutConfig {
  double lambda_gan = 1.0;
  double lambda_x = 1.0;
  double lambda_y = 1.0;
  double tau = 0.07;
  int taps = 5;      // L
  int patches = 32;  // S per tap; negatives are the other S-1 patches
  int embed_dim = 32;  // k
  double a = 0.0;
  double b = 1.0;
  double c = 1.0;
  int epochs = 40;
  int save_every = 1;
  int batch_size = 1;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::vector<int> channels{4, 8, 16};  // stem/down1, down2, down3
  int disc_channels = 8;

  int negatives() const { return patches - 1; }
  void validate() const;
};

// Encoder layer indices: 0 input, 1 stem, 2..4 strided downsamples, 5..6
// residual blocks. Features for the contrastive loss come from the tap list.
class Generator {
 public:
  Generator(ad::ParamStore& store, const std::string& prefix, const CutConfig& cfg, Rng& rng);

  // Runs the encoder up to the deepest tap and returns the tapped features.
  std::vector<ad::Var> encode(ad::Tape& t, ad::Var x) const;
  // Full translation; fills `taps` with the encoder features of x on the way.
  ad::Var forward(ad::Tape& t, ad::Var x, std::vector<ad::Var>* taps = nullptr) const;

  const std::vector<int>& tap_layers() const { return tap_layers_; }
  const std::vector<int>& tap_channels() const { return tap_channels_; }
  int encoder_layers() const { return 7; }

 private:
  ad::Var encoder_layer(ad::Tape& t, int layer, ad::Var h) const;
  ad::Var residual(ad::Tape& t, const ad::Conv2d& c1, const ad::Conv2d& c2, ad::Var h) const;

  ad::Conv2d stem_, down1_, down2_, down3_;
  ad::Conv2d res1a_, res1b_, res2a_, res2b_;
  ad::ConvTranspose2d up1_, up2_, up3_;
  ad::Conv2d out_;
  std::vector<int> tap_layers_;
  std::vector<int> tap_channels_;
};

// Patch classifier producing a score map.
class Discriminator {
 public:
  Discriminator(ad::ParamStore& store, const std::string& prefix, const CutConfig& cfg, Rng& rng);
  ad::Var operator()(ad::Tape& t, ad::Var x) const;

 private:
  ad::Conv2d c1_, c2_, c3_;
};

// One two-layer perceptron per tap, output rows L2-normalized.
class ProjectionHead {
 public:
  ProjectionHead(ad::ParamStore& store, const std::string& prefix,
                 const std::vector<int>& tap_channels, int k, Rng& rng);
  ad::Var operator()(ad::Tape& t, int tap, ad::Var rows) const;
  int taps() const { return static_cast<int>(l1_.size()); }
  int dim() const { return k_; }

 private:
  std::vector<ad::Linear> l1_, l2_;
  int k_ = 0;
};

// Generator + head + discriminator with their parameter stores. Layers keep
// pointers into the stores, so the bundle is not copyable.
struct Translator {
  explicit Translator(const CutConfig& cfg, std::uint64_t seed = 0);
  Translator(const Translator&) = delete;
  Translator& operator=(const Translator&) = delete;

  CutConfig cfg;
  ad::ParamStore gen_store;  // "G." and "H." parameters
  ad::ParamStore disc_store;  // "D." parameters
  std::unique_ptr<Generator> G;
  std::unique_ptr<ProjectionHead> H;
  std::unique_ptr<Discriminator> D;

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);
};

// Gray image <-> [1,1,H,W] tensor in [-1,1].
ad::Tensor image_to_tensor(const ImageBuffer& gray);
ad::Tensor stack_images(const std::vector<const ImageBuffer*>& grays);
ImageBuffer tensor_to_image(const ad::Tensor& t, int n = 0);

ImageBuffer translate(const Translator& tr, const ImageBuffer& gray);

// Score-level losses.
ad::Var lsgan_d_loss(ad::Var d_real, ad::Var d_fake, const CutConfig& cfg);
ad::Var lsgan_g_loss(ad::Var d_fake, const CutConfig& cfg);
// Network-level forms; the fake batch is detached for the discriminator loss.
ad::Var lsgan_d_loss(ad::Tape& t, const Discriminator& D, ad::Var real, ad::Var fake,
                     const CutConfig& cfg);
ad::Var lsgan_g_loss(ad::Tape& t, const Discriminator& D, ad::Var fake, const CutConfig& cfg);

// v [1,k], v_pos [1,k], v_negs [N,k], all unit rows.
ad::Var nce_loss(ad::Var v, ad::Var v_pos, ad::Var v_negs, double tau);

using PatchLocations = std::vector<std::vector<int>>;  // per tap, flat spatial indices

// S distinct positions per tap, sampled without replacement.
PatchLocations sample_locations(const std::vector<ad::Var>& taps, int S, Rng& rng);

struct PatchFeatures {
  std::vector<ad::Var> features;  // per tap, [S,k] unit rows
  PatchLocations locations;
};

// Features of sample n at the given (or freshly sampled) locations.
PatchFeatures sample_patch_features(ad::Tape& t, const ProjectionHead& H,
                                    const std::vector<ad::Var>& taps, int n, int S, Rng& rng,
                                    const PatchLocations* locations = nullptr);
PatchFeatures sample_patch_features(ad::Tape& t, const Generator& G, const ProjectionHead& H,
                                    ad::Var image, int S, Rng& rng);

// Queries from y_hat, positive and negatives from x at the same locations.
// x_taps may be passed in when the encoder features of x are already on the tape.
ad::Var patchnce_loss(ad::Tape& t, const Generator& G, const ProjectionHead& H, ad::Var x,
                      ad::Var y_hat, const CutConfig& cfg, Rng& rng,
                      const std::vector<ad::Var>* x_taps = nullptr);

struct GLossParts {
  ad::Var total;
  ad::Var fake;  // G(x), still attached to the tape
  double gan = 0.0;
  double nce_x = 0.0;
  double nce_y = 0.0;
};

GLossParts cut_total_g_loss(ad::Tape& t, const Generator& G, const Discriminator& D,
                            const ProjectionHead& H, ad::Var x, ad::Var y, const CutConfig& cfg,
                            Rng& rng);

struct TranslatorCheckpoint {
  int epoch = 0;
  std::filesystem::path path;
};

struct EpochLoss {
  int epoch = 0;
  double d_loss = 0.0;
  double g_gan = 0.0;
  double nce_x = 0.0;
  double nce_y = 0.0;
};

// Writes ckpt_epochNNNN.bin every save_every epochs and loss_log.csv into out_dir.
std::vector<TranslatorCheckpoint> train_translator(const std::filesystem::path& source_dir,
                                                   const std::filesystem::path& target_dir,
                                                   const CutConfig& cfg,
                                                   const std::filesystem::path& out_dir, Rng& rng,
                                                   std::vector<EpochLoss>* losses = nullptr);

std::vector<TranslatorCheckpoint> list_translator_checkpoints(const std::filesystem::path& dir);

}  // namespace tribench
