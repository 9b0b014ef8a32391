#include "tribench/layers.hpp"

#include <cmath>

namespace tribench::ad {

namespace {
double fan_in_std(int fan_in, double gain) { return gain * std::sqrt(2.0 / fan_in); }
}  // namespace

Conv2d::Conv2d(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride,
               int pad, Rng& rng, double gain)
    : spec_{stride, pad, 0}, out_(out), name_(name) {
  w_ = &store.add_normal(name + ".weight", {out, in, kernel, kernel},
                         fan_in_std(in * kernel * kernel, gain), rng);
  b_ = &store.add(name + ".bias", Tensor({out}));
}

Var Conv2d::operator()(Tape& t, Var x) const {
  return conv2d(x, t.param(*w_), t.param(*b_), spec_, name_);
}

ConvTranspose2d::ConvTranspose2d(ParamStore& store, const std::string& name, int in, int out,
                                 int kernel, int stride, int pad, int output_padding, Rng& rng,
                                 double gain)
    : spec_{stride, pad, output_padding}, name_(name) {
  w_ = &store.add_normal(name + ".weight", {in, out, kernel, kernel},
                         fan_in_std(in * kernel * kernel / (stride * stride), gain), rng);
  b_ = &store.add(name + ".bias", Tensor({out}));
}

Var ConvTranspose2d::operator()(Tape& t, Var x) const {
  return conv_transpose2d(x, t.param(*w_), t.param(*b_), spec_, name_);
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, double gain)
    : in_(in), name_(name) {
  w_ = &store.add_normal(name + ".weight", {out, in}, fan_in_std(in, gain), rng);
  b_ = &store.add(name + ".bias", Tensor({out}));
}

Var Linear::operator()(Tape& t, Var x) const {
  return linear(x, t.param(*w_), t.param(*b_), name_);
}

}  // namespace tribench::ad
