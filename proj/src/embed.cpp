#include "tribench/embed.hpp"

#include <ostream>

namespace tribench {

void EmbedConfig::validate() const {
  if (L < 1 || S < 1 || k < 1) throw ConfigError("embed: L, S and k must be >= 1");
}

Rng location_rng(const EmbedConfig& cfg, std::uint64_t episode) {
  if (cfg.policy == LocationPolicy::FixedGlobal) return Rng(cfg.location_seed);
  return Rng(splitmix64(cfg.location_seed ^ splitmix64(episode + 1)));
}

EmbeddingBlock extract_embedding(const Generator& enc, const ProjectionHead& head,
                                 const ad::Tensor& y_hat, const EmbedConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.L > static_cast<int>(enc.tap_layers().size()))
    throw ConfigError("embed: L = " + std::to_string(cfg.L) + " but the encoder exposes " +
                      std::to_string(enc.tap_layers().size()) + " taps");
  if (cfg.k != head.dim())
    throw ConfigError("embed: k = " + std::to_string(cfg.k) + " but the projection head outputs " +
                      std::to_string(head.dim()));
  if (y_hat.rank() != 4 || y_hat.dim(0) != 1)
    throw ShapeError("embed: expected a single [1,1,H,W] image, got " + ad::shape_str(y_hat.shape));

  ad::Tape t(false);
  std::vector<ad::Var> taps = enc.encode(t, t.constant(y_hat));
  taps.resize(static_cast<std::size_t>(cfg.L));

  EmbeddingBlock block;
  block.L = cfg.L;
  block.S = cfg.S;
  block.k = cfg.k;
  block.tap_layers.assign(enc.tap_layers().begin(), enc.tap_layers().begin() + cfg.L);
  block.locations = sample_locations(taps, cfg.S, rng);
  block.values.resize(cfg.length());
  const Eigen::Index per_tap = static_cast<Eigen::Index>(cfg.S) * cfg.k;
  for (int l = 0; l < cfg.L; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const ad::Var rows = ad::gather_positions(taps[li], 0, block.locations[li]);
    block.values.segment(l * per_tap, per_tap) = head(t, l, rows).value().data;
  }
  return block;
}

Eigen::VectorXd flatten(const EmbeddingBlock& block) { return block.values; }

EmbeddingBlock unflatten(const Eigen::VectorXd& values, int L, int S, int k) {
  if (values.size() != static_cast<Eigen::Index>(L) * S * k)
    throw ShapeError("unflatten: length " + std::to_string(values.size()) + " is not " +
                     std::to_string(L) + "x" + std::to_string(S) + "x" + std::to_string(k));
  EmbeddingBlock b;
  b.L = L;
  b.S = S;
  b.k = k;
  b.values = values;
  return b;
}

double embedding_size_ratio(const EmbedConfig& cfg, int width, int height) {
  return static_cast<double>(cfg.length()) / (static_cast<double>(width) * height);
}

void write_embedding_csv_header(std::ostream& os) { os << "episode,step,l,s,k,value\n"; }

void write_embedding_csv_rows(std::ostream& os, int episode, int step, const EmbeddingBlock& block) {
  for (int l = 0; l < block.L; ++l)
    for (int s = 0; s < block.S; ++s)
      for (int j = 0; j < block.k; ++j)
        os << episode << ',' << step << ',' << l << ',' << s << ',' << j << ',' << block(l, s, j)
           << '\n';
}

}  // namespace tribench
