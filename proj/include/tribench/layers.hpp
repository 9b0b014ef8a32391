#pragma once

#include "tribench/autodiff.hpp"

#include <string>

namespace tribench::ad {

// Thin parameter holders; the parameters live in a ParamStore so optimizers
// and checkpoints see one flat namespace.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride,
         int pad, Rng& rng, double gain = 1.0);
  Var operator()(Tape& t, Var x) const;
  int out_channels() const { return out_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  ConvSpec spec_;
  int out_ = 0;
  std::string name_;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParamStore& store, const std::string& name, int in, int out, int kernel,
                  int stride, int pad, int output_padding, Rng& rng, double gain = 1.0);
  Var operator()(Tape& t, Var x) const;

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  ConvSpec spec_;
  std::string name_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, double gain = 1.0);
  Var operator()(Tape& t, Var x) const;
  int in_features() const { return in_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  int in_ = 0;
  std::string name_;
};

}  // namespace tribench::ad
