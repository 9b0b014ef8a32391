#pragma once

#include "tribench/cut.hpp"

#include <iosfwd>

namespace tribench {

enum class LocationPolicy { FixedGlobal, PerEpisode };

struct EmbedConfig {
  int L = 5;
  int S = 32;
  int k = 32;
  LocationPolicy policy = LocationPolicy::FixedGlobal;
  std::uint64_t location_seed = 0;

  int length() const { return L * S * k; }
  void validate() const;
};

// L x S x k block of unit patch vectors, stored l-major, then s, then k.
struct EmbeddingBlock {
  int L = 0;
  int S = 0;
  int k = 0;
  Eigen::VectorXd values;
  std::vector<int> tap_layers;
  PatchLocations locations;

  double operator()(int l, int s, int j) const {
    return values[(static_cast<Eigen::Index>(l) * S + s) * k + j];
  }
};

// Location stream for a frame: the same stream for every frame under
// FixedGlobal, one per episode under PerEpisode.
Rng location_rng(const EmbedConfig& cfg, std::uint64_t episode);

// Encoder forward on y_hat ([1,1,H,W]), patch sampling at the first L taps,
// projection and normalization. No gradients are recorded.
EmbeddingBlock extract_embedding(const Generator& enc, const ProjectionHead& head,
                                 const ad::Tensor& y_hat, const EmbedConfig& cfg, Rng& rng);

Eigen::VectorXd flatten(const EmbeddingBlock& block);
EmbeddingBlock unflatten(const Eigen::VectorXd& values, int L, int S, int k);

// Observation size relative to a raw 8-bit single-channel frame.
double embedding_size_ratio(const EmbedConfig& cfg, int width, int height);

void write_embedding_csv_header(std::ostream& os);
void write_embedding_csv_rows(std::ostream& os, int episode, int step, const EmbeddingBlock& block);

}  // namespace tribench
