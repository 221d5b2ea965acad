#pragma once

#include <map>
#include <string>
#include <vector>

#include "goirl/core.hpp"

namespace goirl {

/// One named trainable tensor (stored as a 2-D matrix; biases are 1×n).
struct Param {
  Matrix value;
  Matrix grad;
};

/// Named parameter tensors. Shapes are fixed once a name is registered.
class ParamStore {
 public:
  /// Registers `name` with the given shape, uniformly initialised in
  /// [-scale, scale]. A scale of zero yields a zero tensor.
  void add(const std::string& name, int rows, int cols, double scale, Rng& rng) {
    require(!params_.count(name), "duplicate parameter " + name);
    Param p;
    p.value = Matrix::Zero(rows, cols);
    if (scale != 0.0)
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = rng.uniform(-scale, scale);
    p.grad = Matrix::Zero(rows, cols);
    params_.emplace(name, std::move(p));
    ++version_;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const Matrix& value(const std::string& name) const { return get(name).value; }
  Matrix& mutable_value(const std::string& name) {
    ++version_;
    return get(name).value;
  }
  Matrix& grad(const std::string& name) { return get(name).grad; }

  const std::map<std::string, Param>& all() const { return params_; }
  std::map<std::string, Param>& all_mutable() {
    ++version_;
    return params_;
  }

  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.setZero();
  }

  /// Scales every parameter by `s` (used to build zero configurations).
  void scale_all(double s) {
    for (auto& [_, p] : params_) p.value *= s;
    ++version_;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (const auto& [name, p] : a.params_) {
      auto it = b.params_.find(name);
      if (it == b.params_.end()) return false;
      if (p.value.rows() != it->second.value.rows() || p.value.cols() != it->second.value.cols()) return false;
      if (p.value != it->second.value) return false;
    }
    return true;
  }

 private:
  Param& get(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown parameter " + name);
    return it->second;
  }
  const Param& get(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown parameter " + name);
    return it->second;
  }

  std::map<std::string, Param> params_;
  std::uint64_t version_ = 0;
};

/// Gradient accumulator with the same names and shapes as a ParamStore.
/// One per worker; merged into the store in a fixed order.
class GradientBuffer {
 public:
  GradientBuffer() = default;
  explicit GradientBuffer(const ParamStore& store) {
    for (const auto& [name, p] : store.all()) grads_.emplace(name, Matrix::Zero(p.value.rows(), p.value.cols()));
  }

  Matrix& operator[](const std::string& name) {
    auto it = grads_.find(name);
    require(it != grads_.end(), "no gradient buffer for " + name);
    return it->second;
  }
  const Matrix& at(const std::string& name) const {
    auto it = grads_.find(name);
    require(it != grads_.end(), "no gradient buffer for " + name);
    return it->second;
  }

  const std::map<std::string, Matrix>& all() const { return grads_; }

  void add_to(ParamStore& store, double scale = 1.0) const {
    for (const auto& [name, g] : grads_) store.grad(name) += scale * g;
  }
  void accumulate(const GradientBuffer& other, double scale = 1.0) {
    for (const auto& [name, g] : other.grads_) (*this)[name] += scale * g;
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& [_, g] : grads_) s += g.squaredNorm();
    return s;
  }

 private:
  std::map<std::string, Matrix> grads_;
};

enum class Activation { kRelu, kLinear };

inline Matrix activate(const Matrix& x, Activation a) {
  return a == Activation::kRelu ? Matrix(x.cwiseMax(0.0)) : x;
}

/// dL/dx given dL/dy and the pre-activation x.
inline Matrix activate_backward(const Matrix& pre, const Matrix& dy, Activation a) {
  if (a == Activation::kLinear) return dy;
  return (pre.array() > 0.0).select(dy, 0.0);
}

/// Dense layer y = x W + b over row-batched inputs.
struct Linear {
  std::string weight;
  std::string bias;
  int in = 0;
  int out = 0;

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in_dim, int out_dim, Rng& rng, bool with_bias = true)
      : weight(name + ".w"), bias(with_bias ? name + ".b" : ""), in(in_dim), out(out_dim) {
    store.add(weight, in, out, std::sqrt(6.0 / (in + out)), rng);
    if (with_bias) store.add(bias, 1, out, 0.0, rng);
  }

  Matrix forward(const ParamStore& p, const Matrix& x) const {
    require(x.cols() == in, "Linear " + weight + ": input width " + std::to_string(x.cols()) + " != " + std::to_string(in));
    Matrix y = x * p.value(weight);
    if (!bias.empty()) y.rowwise() += p.value(bias).row(0);
    return y;
  }

  /// Accumulates parameter gradients; returns dL/dx.
  Matrix backward(const ParamStore& p, const Matrix& x, const Matrix& dy, GradientBuffer& g) const {
    g[weight].noalias() += x.transpose() * dy;
    if (!bias.empty()) g[bias] += dy.colwise().sum();
    return dy * p.value(weight).transpose();
  }
};

/// Perceptron block: Linear (+ReLU) ... Linear (+optional output activation).
class Mlp {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation output of each layer
  };

  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, std::vector<int> dims, Rng& rng,
      Activation output = Activation::kLinear, Activation hidden = Activation::kRelu)
      : output_(output), hidden_(hidden) {
    require(dims.size() >= 2, "Mlp needs at least input and output widths");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      layers_.emplace_back(store, name + ".l" + std::to_string(i), dims[i], dims[i + 1], rng);
  }

  int in_dim() const { return layers_.front().in; }
  int out_dim() const { return layers_.back().out; }
  const std::vector<Linear>& layers() const { return layers_; }

  Matrix forward(const ParamStore& p, const Matrix& x, Cache* cache = nullptr) const {
    Matrix h = x;
    if (cache) {
      cache->inputs.clear();
      cache->pre.clear();
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Matrix z = layers_[i].forward(p, h);
      const Activation a = (i + 1 == layers_.size()) ? output_ : hidden_;
      if (cache) {
        cache->inputs.push_back(std::move(h));
        cache->pre.push_back(z);
      }
      h = activate(z, a);
    }
    return h;
  }

  Matrix backward(const ParamStore& p, const Cache& cache, const Matrix& dy, GradientBuffer& g) const {
    Matrix d = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const Activation a = (i + 1 == layers_.size()) ? output_ : hidden_;
      d = activate_backward(cache.pre[i], d, a);
      d = layers_[i].backward(p, cache.inputs[i], d, g);
    }
    return d;
  }

 private:
  std::vector<Linear> layers_;
  Activation output_ = Activation::kLinear;
  Activation hidden_ = Activation::kRelu;
};

/// Adam with bias correction and decoupled weight decay (AdamW); state keyed
/// by parameter name.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  /// Applies one update using the gradients accumulated in `store`.
  void step(ParamStore& store) {
    ++t_;
    if (lr_ == 0.0) return;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    for (auto& [name, p] : store.all_mutable()) {
      auto [it, inserted] = m_.try_emplace(name, Matrix::Zero(p.value.rows(), p.value.cols()));
      auto [jt, _] = v_.try_emplace(name, Matrix::Zero(p.value.rows(), p.value.cols()));
      Matrix& m = it->second;
      Matrix& v = jt->second;
      m = b1_ * m + (1.0 - b1_) * p.grad;
      v = b2_ * v + (1.0 - b2_) * p.grad.cwiseAbs2();
      if (wd_ > 0.0) p.value *= 1.0 - lr_ * wd_;
      p.value.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  int t_ = 0;
  std::map<std::string, Matrix> m_, v_;
};

}  // namespace goirl
