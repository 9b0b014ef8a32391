#pragma once

#include "tribench/core.hpp"
#include "tribench/rng.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tribench::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major float64 array.
struct Tensor {
  Shape shape;
  Eigen::VectorXd data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(Eigen::VectorXd::Zero(numel(shape))) {}
  Tensor(Shape s, Eigen::VectorXd d);

  static Tensor scalar(double v) { return Tensor({}, Eigen::VectorXd::Constant(1, v)); }

  std::size_t size() const { return static_cast<std::size_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  double item() const;
};

class Parameter {
 public:
  Parameter(std::string name, Tensor value) : value(std::move(value)), name_(std::move(name)) {}

  const std::string& name() const { return name_; }
  bool has_grad() const { return grad.size() == value.data.size(); }

  Tensor value;
  Eigen::VectorXd grad;
  Eigen::VectorXd m;
  Eigen::VectorXd v;

 private:
  std::string name_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named parameters plus Adam moment buffers and step counter.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter& add(const std::string& name, Tensor init);
  Parameter& add_normal(const std::string& name, Shape shape, double stddev, Rng& rng);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }
  std::size_t scalar_count() const;

  void zero_grad();
  void adam_step(const AdamConfig& cfg);
  long step_count() const { return steps_; }

  std::map<std::string, Tensor> snapshot(const std::string& prefix = "") const;
  void load(const std::map<std::string, Tensor>& tensors, const std::string& prefix = "");

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
  long steps_ = 0;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  double item() const { return value().item(); }
};

// Define-by-run gradient tape. Nodes are appended in evaluation order, so
// the node list is a topological order and backward is a reverse sweep.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t);
  Var param(Parameter& p);
  Var detach(Var v) { return constant(v.value()); }

  void backward(Var loss);
  Eigen::VectorXd gradient(Var v) const;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t node_count() const { return nodes_.size(); }

  // Op plumbing.
  // Parameter nodes read the parameter in place, so parameters must not be
  // modified while a tape that uses them is still live.
  const Tensor& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.param ? n.param->value : n.value;
  }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  Eigen::VectorXd& grad(int id);
  Var push(Tensor value, bool requires_grad, std::function<void()> backward);

 private:
  struct Node {
    Tensor value;
    Eigen::VectorXd grad;
    bool requires_grad = false;
    std::function<void()> backward;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var square(Var a);
Var leaky_relu(Var a, double slope);
Var tanh(Var a);
Var reshape(Var a, Shape shape);

// Reductions to a scalar.
Var sum(Var a);
Var mean(Var a);
Var mse(Var a, const Tensor& target);
Var mse_const(Var a, double target);

// Dense layers. Layouts: x [N,F], w [O,F], images NCHW,
// conv weights [O,C,kh,kw], transposed-conv weights [C,O,kh,kw].
Var linear(Var x, Var w, std::optional<Var> b, std::string_view name = "linear");

struct ConvSpec {
  int stride = 1;
  int pad = 0;
  int output_padding = 0;  // transposed convolution only
};
Var conv2d(Var x, Var w, std::optional<Var> b, ConvSpec spec, std::string_view name = "conv2d");
Var conv_transpose2d(Var x, Var w, std::optional<Var> b, ConvSpec spec,
                     std::string_view name = "conv_transpose2d");
Var instance_norm(Var x, double eps = 1e-5);

// Patch features: rows of x[n, :, p] for the given flat spatial positions -> [S,C].
Var gather_positions(Var x, int n, std::span<const int> positions);
Var l2_normalize_rows(Var x);
Var matmul_nt(Var a, Var b);  // a [M,K], b [N,K] -> a b^T
Var concat_rows(Var a, Var b);
// Mean over rows of -log softmax(row)[target].
Var cross_entropy(Var logits, std::span<const int> targets);

// Policy-gradient pieces. u holds pre-squash actions.
Var gaussian_log_prob(Var mu, Var log_std, const Tensor& u);
Var gaussian_entropy(Var log_std);
// -mean(min(r A, clip(r, 1-eps, 1+eps) A)), r = exp(logp - old_logp).
Var ppo_clip_loss(Var logp, const Eigen::VectorXd& old_logp, const Eigen::VectorXd& advantages,
                  double clip);

}  // namespace tribench::ad
