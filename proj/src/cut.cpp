#include "tribench/cut.hpp"

#include "tribench/checkpoint.hpp"
#include "tribench/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <regex>

namespace tribench {

using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

constexpr double kSlope = 0.2;
const std::vector<int> kTapOrder{0, 2, 3, 4, 5};

Var norm_act(Var h) { return ad::leaky_relu(ad::instance_norm(h), kSlope); }

}  // namespace

void CutConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("cut: tau must be > 0");
  if (patches < 2) throw ConfigError("cut: patches must be >= 2 (at least one negative)");
  if (taps < 1 || taps > static_cast<int>(kTapOrder.size()))
    throw ConfigError("cut: taps must be in [1, " + std::to_string(kTapOrder.size()) + "]");
  if (embed_dim < 1) throw ConfigError("cut: embed_dim must be >= 1");
  if (epochs < 1 || save_every < 1 || batch_size < 1)
    throw ConfigError("cut: epochs, save_every and batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("cut: lr must be > 0");
  if (channels.size() != 3 || *std::min_element(channels.begin(), channels.end()) < 1)
    throw ConfigError("cut: channels needs three positive entries");
  if (disc_channels < 1) throw ConfigError("cut: disc_channels must be >= 1");
  if (lambda_gan < 0.0 || lambda_x < 0.0 || lambda_y < 0.0)
    throw ConfigError("cut: loss weights must be >= 0");
}

// ----------------------------------------------------------------- networks

Generator::Generator(ad::ParamStore& store, const std::string& prefix, const CutConfig& cfg,
                     Rng& rng) {
  cfg.validate();
  const int c0 = cfg.channels[0], c1 = cfg.channels[1], c2 = cfg.channels[2];
  const std::string p = prefix;
  stem_ = ad::Conv2d(store, p + "stem", 1, c0, 3, 1, 1, rng);
  down1_ = ad::Conv2d(store, p + "down1", c0, c0, 3, 2, 1, rng);
  down2_ = ad::Conv2d(store, p + "down2", c0, c1, 3, 2, 1, rng);
  down3_ = ad::Conv2d(store, p + "down3", c1, c2, 3, 2, 1, rng);
  res1a_ = ad::Conv2d(store, p + "res1a", c2, c2, 3, 1, 1, rng);
  res1b_ = ad::Conv2d(store, p + "res1b", c2, c2, 3, 1, 1, rng);
  res2a_ = ad::Conv2d(store, p + "res2a", c2, c2, 3, 1, 1, rng);
  res2b_ = ad::Conv2d(store, p + "res2b", c2, c2, 3, 1, 1, rng);
  up1_ = ad::ConvTranspose2d(store, p + "up1", c2, c1, 4, 2, 1, 0, rng);
  up2_ = ad::ConvTranspose2d(store, p + "up2", c1, c0, 4, 2, 1, 0, rng);
  up3_ = ad::ConvTranspose2d(store, p + "up3", c0, c0, 4, 2, 1, 0, rng);
  out_ = ad::Conv2d(store, p + "out", c0, 1, 3, 1, 1, rng, 0.5);

  const int layer_channels[7] = {1, c0, c0, c1, c2, c2, c2};
  tap_layers_.assign(kTapOrder.begin(), kTapOrder.begin() + cfg.taps);
  for (int l : tap_layers_) tap_channels_.push_back(layer_channels[l]);
}

Var Generator::residual(Tape& t, const ad::Conv2d& c1, const ad::Conv2d& c2, Var h) const {
  return ad::add(h, ad::instance_norm(c2(t, norm_act(c1(t, h)))));
}

Var Generator::encoder_layer(Tape& t, int layer, Var h) const {
  switch (layer) {
    case 1: return norm_act(stem_(t, h));
    case 2: return norm_act(down1_(t, h));
    case 3: return norm_act(down2_(t, h));
    case 4: return norm_act(down3_(t, h));
    case 5: return residual(t, res1a_, res1b_, h);
    case 6: return residual(t, res2a_, res2b_, h);
    default: throw ContractError("generator: no encoder layer " + std::to_string(layer));
  }
}

std::vector<Var> Generator::encode(Tape& t, Var x) const {
  if (x.shape().size() != 4 || x.shape()[1] != 1)
    throw ShapeError("generator: expected [N,1,H,W] input, got " + ad::shape_str(x.shape()));
  std::vector<Var> taps;
  Var h = x;
  const int last = tap_layers_.back();
  for (int layer = 0; layer <= last; ++layer) {
    if (layer > 0) h = encoder_layer(t, layer, h);
    if (std::find(tap_layers_.begin(), tap_layers_.end(), layer) != tap_layers_.end())
      taps.push_back(h);
  }
  return taps;
}

Var Generator::forward(Tape& t, Var x, std::vector<Var>* taps) const {
  if (x.shape().size() != 4 || x.shape()[1] != 1)
    throw ShapeError("generator: expected [N,1,H,W] input, got " + ad::shape_str(x.shape()));
  const int h = x.shape()[2], w = x.shape()[3];
  if (h % 8 != 0 || w % 8 != 0)
    throw ShapeError("generator: image sides must be multiples of 8, got " + std::to_string(w) +
                     "x" + std::to_string(h));
  if (taps) taps->clear();
  Var z = x;
  for (int layer = 0; layer < encoder_layers(); ++layer) {
    if (layer > 0) z = encoder_layer(t, layer, z);
    if (taps && std::find(tap_layers_.begin(), tap_layers_.end(), layer) != tap_layers_.end())
      taps->push_back(z);
  }
  z = norm_act(up1_(t, z));
  z = norm_act(up2_(t, z));
  z = norm_act(up3_(t, z));
  return ad::tanh(out_(t, z));
}

Discriminator::Discriminator(ad::ParamStore& store, const std::string& prefix,
                             const CutConfig& cfg, Rng& rng) {
  const int c = cfg.disc_channels;
  c1_ = ad::Conv2d(store, prefix + "c1", 1, c, 4, 2, 1, rng);
  c2_ = ad::Conv2d(store, prefix + "c2", c, 2 * c, 4, 2, 1, rng);
  c3_ = ad::Conv2d(store, prefix + "c3", 2 * c, 1, 3, 1, 1, rng);
}

Var Discriminator::operator()(Tape& t, Var x) const {
  Var h = ad::leaky_relu(c1_(t, x), kSlope);
  h = norm_act(c2_(t, h));
  return c3_(t, h);
}

ProjectionHead::ProjectionHead(ad::ParamStore& store, const std::string& prefix,
                               const std::vector<int>& tap_channels, int k, Rng& rng)
    : k_(k) {
  for (std::size_t l = 0; l < tap_channels.size(); ++l) {
    const std::string name = prefix + "mlp" + std::to_string(l);
    l1_.emplace_back(store, name + ".0", tap_channels[l], k, rng);
    l2_.emplace_back(store, name + ".1", k, k, rng);
  }
}

Var ProjectionHead::operator()(Tape& t, int tap, Var rows) const {
  if (tap < 0 || tap >= taps()) throw ContractError("projection head: no tap " + std::to_string(tap));
  const auto i = static_cast<std::size_t>(tap);
  return ad::l2_normalize_rows(l2_[i](t, ad::leaky_relu(l1_[i](t, rows), 0.0)));
}

Translator::Translator(const CutConfig& c, std::uint64_t seed) : cfg(c) {
  cfg.validate();
  Rng rng(seed);
  G = std::make_unique<Generator>(gen_store, "G.", cfg, rng);
  H = std::make_unique<ProjectionHead>(gen_store, "H.", G->tap_channels(), cfg.embed_dim, rng);
  D = std::make_unique<Discriminator>(disc_store, "D.", cfg, rng);
}

void Translator::save(const std::filesystem::path& path) const {
  TensorMap all = gen_store.snapshot();
  all.merge(disc_store.snapshot());
  write_checkpoint(path, all);
}

void Translator::load(const std::filesystem::path& path) {
  const TensorMap all = read_checkpoint(path);
  gen_store.load(all);
  disc_store.load(all);
}

// ------------------------------------------------------------------- images

Tensor image_to_tensor(const ImageBuffer& gray) { return stack_images({&gray}); }

Tensor stack_images(const std::vector<const ImageBuffer*>& grays) {
  if (grays.empty()) throw ContractError("stack_images: empty batch");
  const int w = grays[0]->width, h = grays[0]->height;
  Tensor t({static_cast<int>(grays.size()), 1, h, w});
  Eigen::Index k = 0;
  for (const ImageBuffer* g : grays) {
    if (g->channels != 1) throw ShapeError("stack_images: expected 1-channel images");
    if (g->width != w || g->height != h) throw ShapeError("stack_images: image sizes differ");
    for (std::uint8_t v : g->data) t.data[k++] = v / 127.5 - 1.0;
  }
  return t;
}

ImageBuffer tensor_to_image(const Tensor& t, int n) {
  if (t.rank() != 4 || t.dim(1) != 1) throw ShapeError("tensor_to_image: expected [N,1,H,W]");
  const int h = t.dim(2), w = t.dim(3);
  ImageBuffer img(w, h, 1);
  const Eigen::Index base = static_cast<Eigen::Index>(n) * h * w;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(h) * w; ++i)
    img.data[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(std::clamp(std::lround((t.data[base + i] + 1.0) * 127.5), 0L, 255L));
  return img;
}

ImageBuffer translate(const Translator& tr, const ImageBuffer& gray) {
  Tape t(false);
  return tensor_to_image(tr.G->forward(t, t.constant(image_to_tensor(gray))).value());
}

// ------------------------------------------------------------------- losses

namespace {
void require_nonempty(Var v, const char* what) {
  if (v.value().size() == 0) throw ContractError(std::string(what) + ": empty batch");
}
}  // namespace

Var lsgan_d_loss(Var d_real, Var d_fake, const CutConfig& cfg) {
  require_nonempty(d_real, "lsgan_d_loss");
  require_nonempty(d_fake, "lsgan_d_loss");
  return ad::add(ad::scale(ad::mse_const(d_real, cfg.b), 0.5),
                 ad::scale(ad::mse_const(d_fake, cfg.a), 0.5));
}

Var lsgan_g_loss(Var d_fake, const CutConfig& cfg) {
  require_nonempty(d_fake, "lsgan_g_loss");
  return ad::scale(ad::mse_const(d_fake, cfg.c), 0.5);
}

Var lsgan_d_loss(Tape& t, const Discriminator& D, Var real, Var fake, const CutConfig& cfg) {
  if (real.shape().size() != 4 || fake.shape().size() != 4 || real.shape()[0] == 0 ||
      fake.shape()[0] == 0)
    throw ContractError("lsgan_d_loss: need non-empty NCHW batches");
  if (real.shape()[2] != fake.shape()[2] || real.shape()[3] != fake.shape()[3])
    throw ShapeError("lsgan_d_loss: real and fake resolutions differ");
  return lsgan_d_loss(D(t, real), D(t, t.detach(fake)), cfg);
}

Var lsgan_g_loss(Tape& t, const Discriminator& D, Var fake, const CutConfig& cfg) {
  if (fake.shape().size() != 4 || fake.shape()[0] == 0)
    throw ContractError("lsgan_g_loss: need a non-empty NCHW batch");
  return lsgan_g_loss(D(t, fake), cfg);
}

Var nce_loss(Var v, Var v_pos, Var v_negs, double tau) {
  if (!(tau > 0.0)) throw ContractError("nce_loss: tau must be > 0");
  const auto& vs = v.shape();
  if (vs.size() != 2 || vs[0] != 1 || v_pos.shape() != vs || v_negs.shape().size() != 2 ||
      v_negs.shape()[1] != vs[1] || v_negs.shape()[0] < 1)
    throw ShapeError("nce_loss: expected v [1,k], v_pos [1,k], v_negs [N,k]");
  for (Var x : {v, v_pos, v_negs}) {
    const Tensor& val = x.value();
    const int k = val.dim(1);
    for (int r = 0; r < val.dim(0); ++r)
      if (std::abs(val.data.segment(static_cast<Eigen::Index>(r) * k, k).norm() - 1.0) > 1e-6)
        throw ContractError("nce_loss: inputs must be unit vectors");
  }
  const Var logits = ad::scale(ad::matmul_nt(v, ad::concat_rows(v_pos, v_negs)), 1.0 / tau);
  const int target = 0;
  return ad::cross_entropy(logits, std::span<const int>(&target, 1));
}

PatchLocations sample_locations(const std::vector<Var>& taps, int S, Rng& rng) {
  PatchLocations locs;
  for (const Var& tap : taps) {
    const int hw = tap.shape()[2] * tap.shape()[3];
    if (S > hw)
      throw ContractError("sample_patch_features: " + std::to_string(S) + " patches requested but tap has " +
                          std::to_string(hw) + " positions");
    std::vector<int> all(static_cast<std::size_t>(hw));
    std::iota(all.begin(), all.end(), 0);
    for (int i = 0; i < S; ++i) {
      std::uniform_int_distribution<int> pick(i, hw - 1);
      std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
    }
    all.resize(static_cast<std::size_t>(S));
    locs.push_back(std::move(all));
  }
  return locs;
}

PatchFeatures sample_patch_features(Tape& t, const ProjectionHead& H, const std::vector<Var>& taps,
                                    int n, int S, Rng& rng, const PatchLocations* locations) {
  if (static_cast<int>(taps.size()) != H.taps())
    throw ContractError("sample_patch_features: tap count does not match the projection head");
  PatchFeatures out;
  out.locations = locations ? *locations : sample_locations(taps, S, rng);
  if (out.locations.size() != taps.size())
    throw ContractError("sample_patch_features: one location set per tap required");
  for (std::size_t l = 0; l < taps.size(); ++l) {
    const Var rows = ad::gather_positions(taps[l], n, out.locations[l]);
    out.features.push_back(H(t, static_cast<int>(l), rows));
  }
  return out;
}

PatchFeatures sample_patch_features(Tape& t, const Generator& G, const ProjectionHead& H,
                                    Var image, int S, Rng& rng) {
  return sample_patch_features(t, H, G.encode(t, image), 0, S, rng);
}

Var patchnce_loss(Tape& t, const Generator& G, const ProjectionHead& H, Var x, Var y_hat,
                  const CutConfig& cfg, Rng& rng, const std::vector<Var>* x_taps) {
  if (x.shape() != y_hat.shape())
    throw ShapeError("patchnce_loss: x " + ad::shape_str(x.shape()) + " and y_hat " +
                     ad::shape_str(y_hat.shape()) + " differ");
  const std::vector<Var> q_taps = G.encode(t, y_hat);
  const std::vector<Var> k_taps = x_taps ? *x_taps : G.encode(t, x);
  const int S = cfg.patches;
  std::vector<int> diagonal(static_cast<std::size_t>(S));
  std::iota(diagonal.begin(), diagonal.end(), 0);

  std::optional<Var> total;
  const int batch = x.shape()[0];
  for (int n = 0; n < batch; ++n) {
    const PatchFeatures q = sample_patch_features(t, H, q_taps, n, S, rng);
    const PatchFeatures k = sample_patch_features(t, H, k_taps, n, S, rng, &q.locations);
    for (std::size_t l = 0; l < q.features.size(); ++l) {
      // Row s: positive at column s, the other S-1 patches of x are negatives.
      const Var logits = ad::scale(ad::matmul_nt(q.features[l], k.features[l]), 1.0 / cfg.tau);
      const Var ce = ad::cross_entropy(logits, diagonal);
      total = total ? ad::add(*total, ce) : ce;
    }
  }
  return ad::scale(*total, 1.0 / (batch * static_cast<double>(q_taps.size())));
}

namespace {

GLossParts g_loss_from_fake(Tape& t, const Generator& G, const Discriminator& D,
                            const ProjectionHead& H, Var x, Var fake,
                            const std::vector<Var>& x_taps, Var y, const CutConfig& cfg, Rng& rng) {
  GLossParts parts;
  parts.fake = fake;
  const Var gan = lsgan_g_loss(t, D, fake, cfg);
  parts.gan = gan.item();
  Var total = ad::scale(gan, cfg.lambda_gan);
  if (cfg.lambda_x > 0.0) {
    const Var nce = patchnce_loss(t, G, H, x, fake, cfg, rng, &x_taps);
    parts.nce_x = nce.item();
    total = ad::add(total, ad::scale(nce, cfg.lambda_x));
  }
  if (cfg.lambda_y > 0.0) {
    std::vector<Var> y_taps;
    const Var idt = G.forward(t, y, &y_taps);
    const Var nce = patchnce_loss(t, G, H, y, idt, cfg, rng, &y_taps);
    parts.nce_y = nce.item();
    total = ad::add(total, ad::scale(nce, cfg.lambda_y));
  }
  parts.total = total;
  return parts;
}

}  // namespace

GLossParts cut_total_g_loss(Tape& t, const Generator& G, const Discriminator& D,
                            const ProjectionHead& H, Var x, Var y, const CutConfig& cfg, Rng& rng) {
  std::vector<Var> x_taps;
  const Var fake = G.forward(t, x, &x_taps);
  return g_loss_from_fake(t, G, D, H, x, fake, x_taps, y, cfg, rng);
}

// ----------------------------------------------------------------- training

namespace {

std::vector<ImageBuffer> load_domain(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<ImageBuffer> out;
  for (const auto& p : list_images(dir)) {
    out.push_back(read_image(p));
    if (out.back().channels != 1) throw IoError("expected a 1-channel image: " + p.string());
    if (out.back().width != out.front().width || out.back().height != out.front().height)
      throw IoError("image size differs from the rest of the set: " + p.string());
  }
  if (out.empty()) throw IoError("no images in " + dir.string());
  return out;
}

std::string checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_epoch%04d.bin", epoch);
  return buf;
}

}  // namespace

std::vector<TranslatorCheckpoint> train_translator(const std::filesystem::path& source_dir,
                                                   const std::filesystem::path& target_dir,
                                                   const CutConfig& cfg,
                                                   const std::filesystem::path& out_dir, Rng& rng,
                                                   std::vector<EpochLoss>* losses) {
  cfg.validate();
  const std::vector<ImageBuffer> xs = load_domain(source_dir);
  const std::vector<ImageBuffer> ys = load_domain(target_dir);
  if (xs.front().width != ys.front().width || xs.front().height != ys.front().height)
    throw IoError("source and target images differ in size");

  std::filesystem::create_directories(out_dir);
  std::ofstream log(out_dir / "loss_log.csv");
  if (!log) throw IoError("cannot write " + (out_dir / "loss_log.csv").string());
  log << "epoch,d_loss,g_gan,nce_x,nce_y\n";

  Translator tr(cfg, rng());
  const ad::AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, 1e-8};
  std::vector<TranslatorCheckpoint> saved;
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::uniform_int_distribution<std::size_t> pick_target(0, ys.size() - 1);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLoss acc;
    acc.epoch = epoch;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const ImageBuffer*> xb, yb;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        xb.push_back(&xs[order[i]]);
        yb.push_back(&ys[pick_target(rng)]);
      }

      Tape tg;
      const Var x = tg.constant(stack_images(xb));
      const Var y = tg.constant(stack_images(yb));
      std::vector<Var> x_taps;
      const Var fake = tr.G->forward(tg, x, &x_taps);

      {
        Tape td;
        const Var d_loss =
            lsgan_d_loss(td, *tr.D, td.constant(y.value()), td.constant(fake.value()), cfg);
        tr.disc_store.zero_grad();
        td.backward(d_loss);
        tr.disc_store.adam_step(adam);
        acc.d_loss += d_loss.item();
      }

      const GLossParts parts = g_loss_from_fake(tg, *tr.G, *tr.D, *tr.H, x, fake, x_taps, y, cfg, rng);
      tr.gen_store.zero_grad();
      tg.backward(parts.total);
      tr.gen_store.adam_step(adam);
      acc.g_gan += parts.gan;
      acc.nce_x += parts.nce_x;
      acc.nce_y += parts.nce_y;
      ++batches;
    }
    acc.d_loss /= batches;
    acc.g_gan /= batches;
    acc.nce_x /= batches;
    acc.nce_y /= batches;
    if (!std::isfinite(acc.d_loss) || !std::isfinite(acc.g_gan) || !std::isfinite(acc.nce_x) ||
        !std::isfinite(acc.nce_y))
      throw TrainingDiverged("translator loss is not finite at epoch " + std::to_string(epoch) +
                             " (d " + std::to_string(acc.d_loss) + ", gan " +
                             std::to_string(acc.g_gan) + ", nce_x " + std::to_string(acc.nce_x) +
                             ", nce_y " + std::to_string(acc.nce_y) + ")");
    log << acc.epoch << ',' << acc.d_loss << ',' << acc.g_gan << ',' << acc.nce_x << ','
        << acc.nce_y << '\n';
    log.flush();
    if (losses) losses->push_back(acc);
    if (epoch % cfg.save_every == 0) {
      const auto path = out_dir / checkpoint_name(epoch);
      tr.save(path);
      saved.push_back({epoch, path});
    }
  }
  return saved;
}

std::vector<TranslatorCheckpoint> list_translator_checkpoints(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  static const std::regex pattern(R"(ckpt_epoch(\d+)\.bin)");
  std::vector<TranslatorCheckpoint> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) out.push_back({std::stoi(m[1]), entry.path()});
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.epoch < b.epoch; });
  return out;
}

}  // namespace tribench
