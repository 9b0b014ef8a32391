#include "tribench/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace tribench::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, Eigen::VectorXd d) : shape(std::move(s)), data(std::move(d)) {
  if (static_cast<std::size_t>(data.size()) != numel(shape))
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
}

double Tensor::item() const {
  if (data.size() != 1) throw ContractError("item() on a tensor of shape " + shape_str(shape));
  return data[0];
}

// ---------------------------------------------------------------- ParamStore

ParamStore::ParamStore(const ParamStore& other) { *this = other; }

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this == &other) return *this;
  params_.clear();
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
  index_ = other.index_;
  steps_ = other.steps_;
  return *this;
}

Parameter& ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter>(name, std::move(init)));
  return *params_.back();
}

Parameter& ParamStore::add_normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data[i] = stddev * gauss(rng);
  return add(name, std::move(t));
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return *params_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad = Eigen::VectorXd::Zero(p->value.data.size());
}

void ParamStore::adam_step(const AdamConfig& cfg) {
  for (const auto& p : params_)
    if (!p->has_grad()) throw ContractError("adam_step: missing gradient for " + p->name());
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(steps_));
  for (auto& p : params_) {
    const auto n = p->value.data.size();
    if (p->m.size() != n) p->m = Eigen::VectorXd::Zero(n);
    if (p->v.size() != n) p->v = Eigen::VectorXd::Zero(n);
    p->m = cfg.beta1 * p->m + (1.0 - cfg.beta1) * p->grad;
    p->v = cfg.beta2 * p->v + (1.0 - cfg.beta2) * p->grad.cwiseAbs2();
    p->value.data.array() -=
        (cfg.lr / bc1) * p->m.array() / ((p->v.array() * (1.0 / bc2)).sqrt() + cfg.eps);
  }
}

std::map<std::string, Tensor> ParamStore::snapshot(const std::string& prefix) const {
  std::map<std::string, Tensor> out;
  for (const auto& p : params_) out[prefix + p->name()] = p->value;
  return out;
}

void ParamStore::load(const std::map<std::string, Tensor>& tensors, const std::string& prefix) {
  for (auto& p : params_) {
    auto it = tensors.find(prefix + p->name());
    if (it == tensors.end()) throw ContractError("checkpoint is missing tensor " + prefix + p->name());
    if (it->second.shape != p->value.shape)
      throw ShapeError("checkpoint tensor " + it->first + " has shape " + shape_str(it->second.shape) +
                       ", expected " + shape_str(p->value.shape));
    p->value = it->second;
  }
}

// ---------------------------------------------------------------------- Tape

const Tensor& Var::value() const {
  if (!tape) throw ContractError("use of an unbound Var");
  return tape->value(id);
}

Var Tape::constant(Tensor t) { return push(std::move(t), false, nullptr); }

Var Tape::param(Parameter& p) {
  Var v = push(Tensor(), grad_enabled_, nullptr);
  nodes_.back().param = &p;
  return v;
}

Var Tape::push(Tensor value, bool requires_grad, std::function<void()> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Eigen::VectorXd& Tape::grad(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Eigen::VectorXd::Zero(value(id).data.size());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss belongs to another tape");
  if (value(loss.id).size() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(value(loss.id).shape));
  if (!requires_grad(loss.id)) return;
  grad(loss.id).setOnes();
  for (int i = loss.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward();
  }
  for (auto& n : nodes_) {
    if (!n.param) continue;
    if (!n.param->has_grad()) n.param->grad = Eigen::VectorXd::Zero(n.param->value.data.size());
    if (n.grad.size()) n.param->grad += n.grad;
  }
}

Eigen::VectorXd Tape::gradient(Var v) const {
  const auto& n = nodes_[static_cast<std::size_t>(v.id)];
  return n.grad.size() ? n.grad : Eigen::VectorXd::Zero(value(v.id).data.size());
}

// ----------------------------------------------------------------------- ops

namespace {

void same_tape(Var a, Var b) {
  if (a.tape != b.tape || !a.tape) throw ContractError("operands live on different tapes");
}

void same_shape(Var a, Var b, std::string_view op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

bool rg(Var v) { return v.tape->requires_grad(v.id); }
int next_id(Tape* t) { return static_cast<int>(t->node_count()); }

}  // namespace

Var add(Var a, Var b) {
  same_tape(a, b);
  same_shape(a, b, "add");
  Tape* t = a.tape;
  const int o = next_id(t);
  return t->push(Tensor(a.shape(), a.value().data + b.value().data), rg(a) || rg(b), [t, a, b, o] {
    const auto& g = t->grad(o);
    if (rg(a)) t->grad(a.id) += g;
    if (rg(b)) t->grad(b.id) += g;
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  same_shape(a, b, "sub");
  Tape* t = a.tape;
  const int o = next_id(t);
  return t->push(Tensor(a.shape(), a.value().data - b.value().data), rg(a) || rg(b), [t, a, b, o] {
    const auto& g = t->grad(o);
    if (rg(a)) t->grad(a.id) += g;
    if (rg(b)) t->grad(b.id) -= g;
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  same_shape(a, b, "mul");
  Tape* t = a.tape;
  const int o = next_id(t);
  Tensor out(a.shape(), a.value().data.cwiseProduct(b.value().data));
  return t->push(std::move(out), rg(a) || rg(b), [t, a, b, o] {
    const auto& g = t->grad(o);
    if (rg(a)) t->grad(a.id) += g.cwiseProduct(b.value().data);
    if (rg(b)) t->grad(b.id) += g.cwiseProduct(a.value().data);
  });
}

Var scale(Var a, double s) {
  Tape* t = a.tape;
  const int o = next_id(t);
  return t->push(Tensor(a.shape(), s * a.value().data), rg(a),
                 [t, a, o, s] { t->grad(a.id) += s * t->grad(o); });
}

Var add_scalar(Var a, double s) {
  Tape* t = a.tape;
  const int o = next_id(t);
  Tensor out(a.shape(), (a.value().data.array() + s).matrix());
  return t->push(std::move(out), rg(a), [t, a, o] { t->grad(a.id) += t->grad(o); });
}

Var square(Var a) {
  Tape* t = a.tape;
  const int o = next_id(t);
  return t->push(Tensor(a.shape(), a.value().data.cwiseAbs2()), rg(a), [t, a, o] {
    t->grad(a.id) += 2.0 * t->grad(o).cwiseProduct(a.value().data);
  });
}

Var leaky_relu(Var a, double slope) {
  Tape* t = a.tape;
  const int o = next_id(t);
  const auto& x = a.value().data;
  Tensor out(a.shape(), (x.array() > 0.0).select(x, slope * x));
  return t->push(std::move(out), rg(a), [t, a, o, slope] {
    const auto& x = a.value().data;
    t->grad(a.id).array() += (x.array() > 0.0).select(t->grad(o).array(), slope * t->grad(o).array());
  });
}

Var tanh(Var a) {
  Tape* t = a.tape;
  const int o = next_id(t);
  return t->push(Tensor(a.shape(), a.value().data.array().tanh().matrix()), rg(a), [t, a, o] {
    const auto& y = t->value(o).data;
    t->grad(a.id).array() += t->grad(o).array() * (1.0 - y.array().square());
  });
}

Var reshape(Var a, Shape shape) {
  if (numel(shape) != a.value().size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tape* t = a.tape;
  const int o = next_id(t);
  return t->push(Tensor(std::move(shape), a.value().data), rg(a),
                 [t, a, o] { t->grad(a.id) += t->grad(o); });
}

Var sum(Var a) {
  Tape* t = a.tape;
  const int o = next_id(t);
  return t->push(Tensor::scalar(a.value().data.sum()), rg(a),
                 [t, a, o] { t->grad(a.id).array() += t->grad(o)[0]; });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw ContractError("mean of an empty tensor");
  Tape* t = a.tape;
  const int o = next_id(t);
  return t->push(Tensor::scalar(a.value().data.sum() / n), rg(a),
                 [t, a, o, n] { t->grad(a.id).array() += t->grad(o)[0] / n; });
}

Var mse(Var a, const Tensor& target) {
  if (a.value().size() != target.size())
    throw ShapeError("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(target.shape));
  if (target.size() == 0) throw ContractError("mse of an empty tensor");
  Tape* t = a.tape;
  const int o = next_id(t);
  const double n = static_cast<double>(target.size());
  Eigen::VectorXd diff = a.value().data - target.data;
  const double loss = diff.squaredNorm() / n;
  return t->push(Tensor::scalar(loss), rg(a), [t, a, o, n, diff = std::move(diff)] {
    t->grad(a.id) += (2.0 * t->grad(o)[0] / n) * diff;
  });
}

Var mse_const(Var a, double target) {
  return mse(a, Tensor(a.shape(), Eigen::VectorXd::Constant(static_cast<Eigen::Index>(a.value().size()), target)));
}

Var linear(Var x, Var w, std::optional<Var> b, std::string_view name) {
  same_tape(x, w);
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    throw ShapeError(std::string(name) + ": input " + shape_str(xs) + " incompatible with weight " +
                     shape_str(ws));
  const int n = xs[0], f = xs[1], out_f = ws[0];
  if (b && (b->shape() != Shape{out_f}))
    throw ShapeError(std::string(name) + ": bias shape " + shape_str(b->shape()));
  Tape* t = x.tape;
  const int o = next_id(t);
  Tensor out({n, out_f});
  {
    ConstRowMap X(x.value().data.data(), n, f);
    ConstRowMap W(w.value().data.data(), out_f, f);
    RowMap Y(out.data.data(), n, out_f);
    Y.noalias() = X * W.transpose();
    if (b) Y.rowwise() += b->value().data.transpose();
  }
  const bool req = rg(x) || rg(w) || (b && rg(*b));
  return t->push(std::move(out), req, [t, x, w, b, o, n, f, out_f] {
    ConstRowMap G(t->grad(o).data(), n, out_f);
    if (rg(x)) {
      ConstRowMap W(w.value().data.data(), out_f, f);
      RowMap dX(t->grad(x.id).data(), n, f);
      dX.noalias() += G * W;
    }
    if (rg(w)) {
      ConstRowMap X(x.value().data.data(), n, f);
      RowMap dW(t->grad(w.id).data(), out_f, f);
      dW.noalias() += G.transpose() * X;
    }
    if (b && rg(*b)) t->grad(b->id) += G.colwise().sum().transpose();
  });
}

namespace {

struct ConvGeom {
  int c, h, w;      // image being unfolded
  int kh, kw, stride, pad;
  int ho, wo;       // sliding-window grid
  int k() const { return c * kh * kw; }
  int p() const { return ho * wo; }
};

// Output columns ox whose input column ox*stride - pad + kj lands inside [0, w).
std::pair<int, int> valid_span(int kj, const ConvGeom& g) {
  const int off = kj - g.pad;
  const int lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  const int hi = std::min(g.wo, off >= g.w ? 0 : (g.w - 1 - off) / g.stride + 1);
  return {lo, std::max(lo, hi)};
}

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const int P = g.p();
  std::fill(cols, cols + static_cast<std::size_t>(g.k()) * P, 0.0);
  for (int c = 0; c < g.c; ++c)
    for (int ki = 0; ki < g.kh; ++ki)
      for (int kj = 0; kj < g.kw; ++kj) {
        double* dst = cols + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * P;
        const double* src = x + static_cast<std::size_t>(c) * g.h * g.w;
        const auto [lo, hi] = valid_span(kj, g);
        const int off = kj - g.pad;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          double* row = dst + oy * g.wo;
          const double* srow = src + static_cast<std::size_t>(iy) * g.w + off;
          if (g.stride == 1)
            for (int ox = lo; ox < hi; ++ox) row[ox] = srow[ox];
          else
            for (int ox = lo; ox < hi; ++ox) row[ox] = srow[ox * g.stride];
        }
      }
}

void col2im(const double* cols, const ConvGeom& g, double* x) {
  const int P = g.p();
  for (int c = 0; c < g.c; ++c)
    for (int ki = 0; ki < g.kh; ++ki)
      for (int kj = 0; kj < g.kw; ++kj) {
        const double* src = cols + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * P;
        double* dst = x + static_cast<std::size_t>(c) * g.h * g.w;
        const auto [lo, hi] = valid_span(kj, g);
        const int off = kj - g.pad;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          double* drow = dst + static_cast<std::size_t>(iy) * g.w + off;
          const double* row = src + oy * g.wo;
          if (g.stride == 1)
            for (int ox = lo; ox < hi; ++ox) drow[ox] += row[ox];
          else
            for (int ox = lo; ox < hi; ++ox) drow[ox * g.stride] += row[ox];
        }
      }
}

void check_conv_inputs(Var x, Var w, const std::optional<Var>& b, int bias_len, std::string_view name,
                       int weight_in_dim) {
  same_tape(x, w);
  if (x.shape().size() != 4) throw ShapeError(std::string(name) + ": expected NCHW input, got " + shape_str(x.shape()));
  if (w.shape().size() != 4) throw ShapeError(std::string(name) + ": expected rank-4 weight");
  if (x.shape()[1] != w.shape()[static_cast<std::size_t>(weight_in_dim)])
    throw ShapeError(std::string(name) + ": input has " + std::to_string(x.shape()[1]) +
                     " channels, weight expects " + std::to_string(w.shape()[static_cast<std::size_t>(weight_in_dim)]));
  if (b && b->shape() != Shape{bias_len})
    throw ShapeError(std::string(name) + ": bias shape " + shape_str(b->shape()));
}

}  // namespace

Var conv2d(Var x, Var w, std::optional<Var> b, ConvSpec spec, std::string_view name) {
  const int out_c = w.shape().size() == 4 ? w.shape()[0] : 0;
  check_conv_inputs(x, w, b, out_c, name, 1);
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const int kh = w.shape()[2], kw = w.shape()[3];
  if (spec.stride < 1 || spec.pad < 0) throw ShapeError(std::string(name) + ": invalid stride/padding");
  const int ho = (h + 2 * spec.pad - kh) / spec.stride + 1;
  const int wo = (wd + 2 * spec.pad - kw) / spec.stride + 1;
  if (h + 2 * spec.pad < kh || wd + 2 * spec.pad < kw || ho < 1 || wo < 1)
    throw ShapeError(std::string(name) + ": kernel larger than padded input " + shape_str(x.shape()));
  const ConvGeom g{c, h, wd, kh, kw, spec.stride, spec.pad, ho, wo};
  const int K = g.k(), P = g.p();

  Tape* t = x.tape;
  const int o = next_id(t);
  const bool keep_cols = t->grad_enabled() && rg(w);
  auto cols_saved = std::make_shared<std::vector<RowMat>>();
  Tensor out({n, out_c, ho, wo});
  ConstRowMap W(w.value().data.data(), out_c, K);
  RowMat cols(K, P);
  for (int i = 0; i < n; ++i) {
    im2col(x.value().data.data() + static_cast<std::size_t>(i) * c * h * wd, g, cols.data());
    RowMap Y(out.data.data() + static_cast<std::size_t>(i) * out_c * P, out_c, P);
    Y.noalias() = W * cols;
    if (b) Y.colwise() += b->value().data;
    if (keep_cols) cols_saved->push_back(cols);
  }
  const bool req = rg(x) || rg(w) || (b && rg(*b));
  return t->push(std::move(out), req, [t, x, w, b, o, g, n, out_c, cols_saved] {
    const int K = g.k(), P = g.p();
    ConstRowMap W(w.value().data.data(), out_c, K);
    RowMat dcols(K, P);
    for (int i = 0; i < n; ++i) {
      ConstRowMap G(t->grad(o).data() + static_cast<std::size_t>(i) * out_c * P, out_c, P);
      if (rg(w)) {
        RowMap dW(t->grad(w.id).data(), out_c, K);
        dW.noalias() += G * (*cols_saved)[static_cast<std::size_t>(i)].transpose();
      }
      if (b && rg(*b)) t->grad(b->id) += G.rowwise().sum();
      if (rg(x)) {
        dcols.noalias() = W.transpose() * G;
        col2im(dcols.data(), g, t->grad(x.id).data() + static_cast<std::size_t>(i) * g.c * g.h * g.w);
      }
    }
  });
}

Var conv_transpose2d(Var x, Var w, std::optional<Var> b, ConvSpec spec, std::string_view name) {
  const int out_c = w.shape().size() == 4 ? w.shape()[1] : 0;
  check_conv_inputs(x, w, b, out_c, name, 0);
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const int kh = w.shape()[2], kw = w.shape()[3];
  if (spec.stride < 1 || spec.pad < 0 || spec.output_padding < 0 || spec.output_padding >= spec.stride)
    throw ShapeError(std::string(name) + ": invalid stride/padding/output_padding");
  const int ho = (h - 1) * spec.stride - 2 * spec.pad + kh + spec.output_padding;
  const int wo = (wd - 1) * spec.stride - 2 * spec.pad + kw + spec.output_padding;
  if (ho < 1 || wo < 1) throw ShapeError(std::string(name) + ": empty output");
  // Unfold geometry of the output image; the sliding grid is the input grid.
  const ConvGeom g{out_c, ho, wo, kh, kw, spec.stride, spec.pad, h, wd};
  const int K = g.k(), P = g.p();

  Tape* t = x.tape;
  const int o = next_id(t);
  Tensor out({n, out_c, ho, wo});
  ConstRowMap W(w.value().data.data(), c, K);
  RowMat cols(K, P);
  for (int i = 0; i < n; ++i) {
    ConstRowMap X(x.value().data.data() + static_cast<std::size_t>(i) * c * P, c, P);
    cols.noalias() = W.transpose() * X;
    double* y = out.data.data() + static_cast<std::size_t>(i) * out_c * ho * wo;
    col2im(cols.data(), g, y);
    if (b)
      for (int oc = 0; oc < out_c; ++oc) {
        Eigen::Map<Eigen::VectorXd> plane(y + static_cast<std::size_t>(oc) * ho * wo, ho * wo);
        plane.array() += b->value().data[oc];
      }
  }
  const bool req = rg(x) || rg(w) || (b && rg(*b));
  return t->push(std::move(out), req, [t, x, w, b, o, g, n, c, out_c] {
    const int K = g.k(), P = g.p();
    ConstRowMap W(w.value().data.data(), c, K);
    RowMat dcols(K, P);
    const std::size_t out_plane = static_cast<std::size_t>(g.h) * g.w;
    for (int i = 0; i < n; ++i) {
      const double* gy = t->grad(o).data() + static_cast<std::size_t>(i) * out_c * out_plane;
      if (b && rg(*b)) {
        ConstRowMap G(gy, out_c, static_cast<Eigen::Index>(out_plane));
        t->grad(b->id) += G.rowwise().sum();
      }
      if (!rg(x) && !rg(w)) continue;
      im2col(gy, g, dcols.data());
      if (rg(x)) {
        RowMap dX(t->grad(x.id).data() + static_cast<std::size_t>(i) * c * P, c, P);
        dX.noalias() += W * dcols;
      }
      if (rg(w)) {
        ConstRowMap X(x.value().data.data() + static_cast<std::size_t>(i) * c * P, c, P);
        RowMap dW(t->grad(w.id).data(), c, K);
        dW.noalias() += X * dcols.transpose();
      }
    }
  });
}

Var instance_norm(Var x, double eps) {
  if (x.shape().size() != 4) throw ShapeError("instance_norm: expected NCHW input, got " + shape_str(x.shape()));
  const int planes = x.shape()[0] * x.shape()[1];
  const int hw = x.shape()[2] * x.shape()[3];
  Tape* t = x.tape;
  const int o = next_id(t);
  Tensor out(x.shape());
  Eigen::VectorXd inv_std(planes);
  for (int p = 0; p < planes; ++p) {
    Eigen::Map<const Eigen::ArrayXd> xp(x.value().data.data() + static_cast<std::size_t>(p) * hw, hw);
    Eigen::Map<Eigen::ArrayXd> yp(out.data.data() + static_cast<std::size_t>(p) * hw, hw);
    const double mu = xp.mean();
    const double var = (xp - mu).square().mean();
    inv_std[p] = 1.0 / std::sqrt(var + eps);
    yp = (xp - mu) * inv_std[p];
  }
  return t->push(std::move(out), rg(x), [t, x, o, planes, hw, inv_std] {
    for (int p = 0; p < planes; ++p) {
      const std::size_t off = static_cast<std::size_t>(p) * hw;
      Eigen::Map<const Eigen::ArrayXd> y(t->value(o).data.data() + off, hw);
      Eigen::Map<const Eigen::ArrayXd> g(t->grad(o).data() + off, hw);
      Eigen::Map<Eigen::ArrayXd> dx(t->grad(x.id).data() + off, hw);
      const double gm = g.mean();
      const double gym = (g * y).mean();
      dx += inv_std[p] * (g - gm - y * gym);
    }
  });
}

Var gather_positions(Var x, int n, std::span<const int> positions) {
  const auto& s = x.shape();
  if (s.size() != 4) throw ShapeError("gather_positions: expected NCHW input, got " + shape_str(s));
  if (n < 0 || n >= s[0]) throw ShapeError("gather_positions: batch index out of range");
  const int c = s[1], hw = s[2] * s[3];
  const int count = static_cast<int>(positions.size());
  for (int p : positions)
    if (p < 0 || p >= hw) throw ShapeError("gather_positions: spatial index out of range");
  std::vector<int> pos(positions.begin(), positions.end());
  Tape* t = x.tape;
  const int o = next_id(t);
  Tensor out({count, c});
  const double* base = x.value().data.data() + static_cast<std::size_t>(n) * c * hw;
  for (int r = 0; r < count; ++r)
    for (int ch = 0; ch < c; ++ch) out.data[r * c + ch] = base[static_cast<std::size_t>(ch) * hw + pos[static_cast<std::size_t>(r)]];
  return t->push(std::move(out), rg(x), [t, x, o, n, c, hw, pos] {
    double* dbase = t->grad(x.id).data() + static_cast<std::size_t>(n) * c * hw;
    const auto& g = t->grad(o);
    for (std::size_t r = 0; r < pos.size(); ++r)
      for (int ch = 0; ch < c; ++ch) dbase[static_cast<std::size_t>(ch) * hw + pos[r]] += g[static_cast<Eigen::Index>(r) * c + ch];
  });
}

Var l2_normalize_rows(Var x) {
  const auto& s = x.shape();
  if (s.size() != 2) throw ShapeError("l2_normalize_rows: expected a matrix, got " + shape_str(s));
  const int m = s[0], k = s[1];
  Tape* t = x.tape;
  const int o = next_id(t);
  Tensor out(s);
  Eigen::VectorXd norms(m);
  {
    ConstRowMap X(x.value().data.data(), m, k);
    RowMap Y(out.data.data(), m, k);
    for (int r = 0; r < m; ++r) {
      norms[r] = std::max(X.row(r).norm(), 1e-12);
      Y.row(r) = X.row(r) / norms[r];
    }
  }
  return t->push(std::move(out), rg(x), [t, x, o, m, k, norms] {
    ConstRowMap Y(t->value(o).data.data(), m, k);
    ConstRowMap G(t->grad(o).data(), m, k);
    RowMap dX(t->grad(x.id).data(), m, k);
    for (int r = 0; r < m; ++r) dX.row(r) += (G.row(r) - Y.row(r) * Y.row(r).dot(G.row(r))) / norms[r];
  });
}

Var matmul_nt(Var a, Var b) {
  same_tape(a, b);
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[1])
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  const int m = as[0], k = as[1], n = bs[0];
  Tape* t = a.tape;
  const int o = next_id(t);
  Tensor out({m, n});
  RowMap(out.data.data(), m, n).noalias() =
      ConstRowMap(a.value().data.data(), m, k) * ConstRowMap(b.value().data.data(), n, k).transpose();
  return t->push(std::move(out), rg(a) || rg(b), [t, a, b, o, m, k, n] {
    ConstRowMap G(t->grad(o).data(), m, n);
    if (rg(a)) RowMap(t->grad(a.id).data(), m, k).noalias() += G * ConstRowMap(b.value().data.data(), n, k);
    if (rg(b)) RowMap(t->grad(b.id).data(), n, k).noalias() += G.transpose() * ConstRowMap(a.value().data.data(), m, k);
  });
}

Var concat_rows(Var a, Var b) {
  same_tape(a, b);
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[1])
    throw ShapeError("concat_rows: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  const Eigen::Index na = a.value().data.size(), nb = b.value().data.size();
  Tape* t = a.tape;
  const int o = next_id(t);
  Tensor out({as[0] + bs[0], as[1]});
  out.data << a.value().data, b.value().data;
  return t->push(std::move(out), rg(a) || rg(b), [t, a, b, o, na, nb] {
    const Eigen::VectorXd& g = t->grad(o);
    if (rg(a)) t->grad(a.id) += g.head(na);
    if (rg(b)) t->grad(b.id) += g.tail(nb);
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const auto& s = logits.shape();
  if (s.size() != 2) throw ShapeError("cross_entropy: expected [rows, classes], got " + shape_str(s));
  const int m = s[0], n = s[1];
  if (static_cast<int>(targets.size()) != m || m == 0)
    throw ShapeError("cross_entropy: need one target per row");
  std::vector<int> tg(targets.begin(), targets.end());
  for (int v : tg)
    if (v < 0 || v >= n) throw ShapeError("cross_entropy: target class out of range");
  ConstRowMap L(logits.value().data.data(), m, n);
  RowMat probs(m, n);
  double loss = 0.0;
  for (int r = 0; r < m; ++r) {
    const double mx = L.row(r).maxCoeff();
    probs.row(r) = (L.row(r).array() - mx).exp().matrix();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    loss += mx + std::log(z) - L(r, tg[static_cast<std::size_t>(r)]);
  }
  loss /= m;
  Tape* t = logits.tape;
  const int o = next_id(t);
  return t->push(Tensor::scalar(loss), rg(logits), [t, logits, o, m, n, tg, probs = std::move(probs)] {
    const double g = t->grad(o)[0] / m;
    RowMap dL(t->grad(logits.id).data(), m, n);
    dL += g * probs;
    for (int r = 0; r < m; ++r) dL(r, tg[static_cast<std::size_t>(r)]) -= g;
  });
}

Var gaussian_log_prob(Var mu, Var log_std, const Tensor& u) {
  same_tape(mu, log_std);
  const auto& s = mu.shape();
  if (s.size() != 2 || u.shape != s || log_std.shape() != Shape{s[1]})
    throw ShapeError("gaussian_log_prob: shapes " + shape_str(s) + ", " + shape_str(log_std.shape()) +
                     ", " + shape_str(u.shape));
  const int bsz = s[0], d = s[1];
  ConstRowMap M(mu.value().data.data(), bsz, d);
  ConstRowMap U(u.data.data(), bsz, d);
  const Eigen::ArrayXd ls = log_std.value().data.array();
  const Eigen::ArrayXd inv_var = (-2.0 * ls).exp();
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  RowMat diff = U - M;
  Tensor out({bsz});
  for (int r = 0; r < bsz; ++r)
    out.data[r] = (-0.5 * diff.row(r).array().square() * inv_var.transpose() - ls.transpose() - half_log_2pi).sum();
  Tape* t = mu.tape;
  const int o = next_id(t);
  return t->push(std::move(out), rg(mu) || rg(log_std), [t, mu, log_std, o, bsz, d, diff = std::move(diff), inv_var] {
    const auto& g = t->grad(o);
    if (rg(mu)) {
      RowMap dM(t->grad(mu.id).data(), bsz, d);
      for (int r = 0; r < bsz; ++r) dM.row(r).array() += g[r] * diff.row(r).array() * inv_var.transpose();
    }
    if (rg(log_std)) {
      auto& dls = t->grad(log_std.id);
      for (int r = 0; r < bsz; ++r)
        dls.array() += g[r] * (diff.row(r).array().square().transpose() * inv_var - 1.0);
    }
  });
}

Var gaussian_entropy(Var log_std) {
  const double c = 0.5 * (1.0 + std::log(2.0 * std::numbers::pi));
  const double h = (log_std.value().data.array() + c).sum();
  Tape* t = log_std.tape;
  const int o = next_id(t);
  return t->push(Tensor::scalar(h), rg(log_std),
                 [t, log_std, o] { t->grad(log_std.id).array() += t->grad(o)[0]; });
}

Var ppo_clip_loss(Var logp, const Eigen::VectorXd& old_logp, const Eigen::VectorXd& advantages,
                  double clip) {
  const auto n = static_cast<Eigen::Index>(logp.value().size());
  if (logp.shape().size() != 1 || old_logp.size() != n || advantages.size() != n || n == 0)
    throw ShapeError("ppo_clip_loss: log-prob, old log-prob and advantage lengths differ");
  if (clip < 0.0) throw ContractError("ppo_clip_loss: clip must be >= 0");
  const Eigen::ArrayXd ratio = (logp.value().data - old_logp).array().exp();
  const Eigen::ArrayXd unclipped = ratio * advantages.array();
  const Eigen::ArrayXd clipped = ratio.cwiseMax(1.0 - clip).cwiseMin(1.0 + clip) * advantages.array();
  // Ties take the unclipped branch so the gradient at ratio == 1 is A * dlogp.
  const Eigen::Array<bool, Eigen::Dynamic, 1> use_unclipped = unclipped <= clipped;
  const double loss = -use_unclipped.select(unclipped, clipped).mean();
  Eigen::VectorXd dlogp = use_unclipped.select(unclipped, Eigen::ArrayXd::Zero(n)).matrix();
  Tape* t = logp.tape;
  const int o = next_id(t);
  return t->push(Tensor::scalar(loss), rg(logp), [t, logp, o, n, dlogp = std::move(dlogp)] {
    t->grad(logp.id) -= (t->grad(o)[0] / static_cast<double>(n)) * dlogp;
  });
}

}  // namespace tribench::ad
