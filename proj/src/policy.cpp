#include "tribench/policy.hpp"

#include "tribench/checkpoint.hpp"

#include <cmath>

namespace tribench {

using ad::Tape;
using ad::Tensor;
using ad::Var;

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Original: return "original";
    case Variant::Translated: return "translated";
    case Variant::Embedded: return "embedded";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "original") return Variant::Original;
  if (s == "translated") return Variant::Translated;
  if (s == "embedded") return Variant::Embedded;
  throw ConfigError("unknown variant '" + s + "' (original, translated, embedded)");
}

void InputConfig::validate() const {
  if (needs_translator()) {
    if (translator_checkpoint.empty())
      throw ConfigError(variant_name(variant) + " input needs a translator checkpoint");
    if (!std::filesystem::is_regular_file(translator_checkpoint))
      throw ConfigError("translator checkpoint not found: " + translator_checkpoint.string());
    cut.validate();
  }
  if (variant == Variant::Embedded) embed.validate();
}

Observer::Observer(InputConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.needs_translator()) {
    tr_ = std::make_unique<Translator>(cfg_.cut);
    tr_->load(cfg_.translator_checkpoint);
  }
}

int Observer::length(int width, int height) const {
  return cfg_.variant == Variant::Embedded ? cfg_.embed.length() : width * height;
}

Eigen::VectorXd Observer::operator()(const ImageBuffer& frame, std::uint64_t episode) const {
  const ImageBuffer gray = frame.channels == 1 ? frame : to_gray(frame);
  const Eigen::Index n = static_cast<Eigen::Index>(gray.pixel_count());
  if (cfg_.variant == Variant::Original) {
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = gray.data[static_cast<std::size_t>(i)] / 255.0;
    return out;
  }
  Tape t(false);
  const Tensor y = tr_->G->forward(t, t.constant(image_to_tensor(gray))).value();
  if (cfg_.variant == Variant::Translated)
    return ((y.data.array() + 1.0) * 0.5).cwiseMax(0.0).cwiseMin(1.0).matrix();
  Rng rng = location_rng(cfg_.embed, episode);
  return flatten(extract_embedding(*tr_->G, *tr_->H, y, cfg_.embed, rng));
}

Eigen::VectorXd make_observation(const TissueState& state, const Camera& cam,
                                 const RenderStyle& style, const Observer& obs,
                                 std::uint64_t episode) {
  return obs(render(state, cam, style), episode);
}

void PolicyConfig::validate() const {
  if (hidden < 1) throw ConfigError("policy: hidden width must be >= 1");
  if (!(log_std_min < log_std_max)) throw ConfigError("policy: log-std bounds out of order");
  if (init_log_std < log_std_min || init_log_std > log_std_max)
    throw ConfigError("policy: initial log-std outside its bounds");
}

PolicyNet::PolicyNet(Variant v, int width, int height, int obs_length, const PolicyConfig& cfg,
                     std::uint64_t seed)
    : variant_(v), cfg_(cfg), width_(width), height_(height), obs_len_(obs_length) {
  cfg_.validate();
  Rng rng(seed);
  const int h = cfg_.hidden;
  if (v == Variant::Embedded) {
    if (obs_len_ < 1) throw ConfigError("policy: empty observation");
    fc1_ = ad::Linear(store, "P.fc1", obs_len_, h, rng);
    fc2_ = ad::Linear(store, "P.fc2", h, h, rng);
  } else {
    if (width % 8 != 0 || height % 8 != 0 || width < 8 || height < 8)
      throw ConfigError("policy: image sides must be positive multiples of 8");
    if (obs_len_ != width * height) throw ConfigError("policy: observation length is not width*height");
    c1_ = ad::Conv2d(store, "P.c1", 1, 8, 4, 4, 0, rng);
    c2_ = ad::Conv2d(store, "P.c2", 8, 16, 4, 2, 1, rng);
    fc1_ = ad::Linear(store, "P.fc1", 16 * (width / 8) * (height / 8), h, rng);
  }
  mu_ = ad::Linear(store, "P.mu", h, 6, rng, 0.01);
  log_std_ = &store.add("P.log_std", Tensor({6}, Eigen::VectorXd::Constant(6, cfg_.init_log_std)));
  v1_ = ad::Linear(store, "P.v1", h, h, rng);
  v2_ = ad::Linear(store, "P.v2", h, 1, rng);
}

namespace {

// Zero-mean, unit-variance rows before the squashing nonlinearity. Without it
// the wide first layer of the Embedded trunk drifts into tanh saturation
// within a few updates; both variants use it so the trunks stay comparable.
Var normalize_rows(Var z) {
  const int b = z.shape()[0], f = z.shape()[1];
  return ad::reshape(ad::instance_norm(ad::reshape(z, {b, 1, f, 1})), {b, f});
}

}  // namespace

PolicyNet::Output PolicyNet::forward(Tape& t, const Tensor& obs) const {
  if (obs.shape.size() != 2 || obs.shape[1] != obs_len_)
    throw ShapeError("policy: expected observations of length " + std::to_string(obs_len_));
  const int b = obs.shape[0];
  Var x = t.constant(obs);
  Var h;
  if (variant_ == Variant::Embedded) {
    h = ad::tanh(fc2_(t, ad::tanh(normalize_rows(fc1_(t, x)))));
  } else {
    x = ad::reshape(x, {b, 1, height_, width_});
    x = ad::leaky_relu(c1_(t, x), 0.2);
    x = ad::leaky_relu(c2_(t, x), 0.2);
    h = ad::tanh(normalize_rows(fc1_(t, ad::reshape(x, {b, fc1_.in_features()}))));
  }
  Output out;
  out.mu = mu_(t, h);
  out.log_std = t.param(*log_std_);
  const Var hv = ad::tanh(v1_(t, t.detach(h)));
  out.value = ad::reshape(v2_(t, hv), {b});
  return out;
}

void PolicyNet::clamp_log_std() {
  log_std_->value.data = log_std_->value.data.cwiseMax(cfg_.log_std_min).cwiseMin(cfg_.log_std_max);
}

void PolicyNet::save(const std::filesystem::path& path) const { write_checkpoint(path, store.snapshot()); }

void PolicyNet::load(const std::filesystem::path& path) { store.load(read_checkpoint(path)); }

Tensor stack_observations(const std::vector<const Eigen::VectorXd*>& rows) {
  if (rows.empty()) throw ContractError("stack_observations: no rows");
  const int n = static_cast<int>(rows.size());
  const int len = static_cast<int>(rows[0]->size());
  Tensor out({n, len});
  for (int i = 0; i < n; ++i) {
    if (rows[static_cast<std::size_t>(i)]->size() != len)
      throw ShapeError("stack_observations: ragged observation rows");
    out.data.segment(static_cast<Eigen::Index>(i) * len, len) = *rows[static_cast<std::size_t>(i)];
  }
  return out;
}

double squash_correction(const ActionVec& u) {
  double c = 0.0;
  for (int i = 0; i < 6; ++i) {
    // log(1 - tanh^2) in a form that stays finite for large |u|.
    const double a = std::abs(u[i]);
    c += 2.0 * (std::log(2.0) - a - std::log1p(std::exp(-2.0 * a)));
  }
  return c;
}

}  // namespace tribench
