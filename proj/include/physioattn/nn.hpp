#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "physioattn/ops.hpp"
#include "physioattn/tensor.hpp"

namespace physioattn {

/// A trainable leaf: value tensor (grad lives on the same node) plus a path name.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;

  std::vector<T>& grad() { return value.grad(); }
  const std::vector<T>& grad() const { return value.grad(); }
  bool trainable() const { return value.requires_grad(); }
  std::size_t size() const { return value.size(); }
  void zero_grad() { value.zero_grad(); }
};

enum class InitKind { kaiming_uniform, xavier_uniform, zeros, ones };

/// Seeded weight initializer shared by all layers of one model build.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <class T>
  std::vector<T> draw(InitKind kind, std::size_t n, std::size_t fan_in, std::size_t fan_out) {
    std::vector<T> v(n, T(0));
    double bound = 0;
    switch (kind) {
      case InitKind::zeros:
        return v;
      case InitKind::ones:
        std::fill(v.begin(), v.end(), T(1));
        return v;
      case InitKind::kaiming_uniform:
        bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        break;
      case InitKind::xavier_uniform:
        bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        break;
    }
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& x : v) x = static_cast<T>(dist(rng_));
    return v;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

template <class T>
class Layer {
 public:
  explicit Layer(std::string name = {}) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual std::string kind() const = 0;

  const std::string& name() const { return name_; }

  /// Own parameters followed by children's, depth first.
  void collect_parameters(std::vector<Parameter<T>>& out) const {
    for (const auto& p : params_) out.push_back(p);
    for (const auto& c : children_) c->collect_parameters(out);
  }

  void collect_layers(std::vector<const Layer*>& out) const {
    out.push_back(this);
    for (const auto& c : children_) c->collect_layers(out);
  }

  /// Non-trainable state (batchnorm running statistics), named.
  virtual void collect_buffers(std::vector<std::pair<std::string, std::vector<T>*>>& out) {
    for (auto& c : children_) c->collect_buffers(out);
  }

  const std::vector<Parameter<T>>& own_parameters() const { return params_; }
  Parameter<T>& parameter(std::size_t i) { return params_.at(i); }
  const std::vector<std::unique_ptr<Layer>>& children() const { return children_; }

 protected:
  Tensor<T>& add_parameter(const std::string& suffix, Shape shape, std::vector<T> init) {
    params_.push_back({name_.empty() ? suffix : name_ + "/" + suffix, Tensor<T>(std::move(shape), std::move(init), true)});
    return params_.back().value;
  }

  template <class L>
  L* add_child(std::unique_ptr<L> child) {
    L* raw = child.get();
    children_.push_back(std::move(child));
    return raw;
  }

 private:
  std::string name_;
  std::vector<Parameter<T>> params_;
  std::vector<std::unique_ptr<Layer>> children_;
};

template <class T>
class Conv1d : public Layer<T> {
 public:
  Conv1d(std::string name, std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride, Padding padding,
         Initializer& init, InitKind weight_init, bool bias = true)
      : Layer<T>(std::move(name)), stride_(stride), padding_(padding) {
    detail::require(stride >= 1, "conv1d stride must be positive");
    kernel_ = this->add_parameter("kernel", {cout, cin, kernel},
                                  init.draw<T>(weight_init, cout * cin * kernel, cin * kernel, cout * kernel));
    if (bias) bias_ = this->add_parameter("bias", {cout}, std::vector<T>(cout, T(0)));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override { return conv1d(x, kernel_, bias_, stride_, padding_); }
  std::string kind() const override { return "conv1d"; }

  Tensor<T>& kernel() { return kernel_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> kernel_, bias_;
  std::size_t stride_;
  Padding padding_;
};

template <class T>
class Dense : public Layer<T> {
 public:
  Dense(std::string name, std::size_t in, std::size_t out, Initializer& init, InitKind weight_init)
      : Layer<T>(std::move(name)) {
    weight_ = this->add_parameter("weight", {in, out}, init.draw<T>(weight_init, in * out, in, out));
    bias_ = this->add_parameter("bias", {out}, std::vector<T>(out, T(0)));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override { return dense(x, weight_, bias_); }
  std::string kind() const override { return "dense"; }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> weight_, bias_;
};

template <class T>
class BatchNorm : public Layer<T> {
 public:
  BatchNorm(std::string name, std::size_t channels) : Layer<T>(std::move(name)), state_(channels) {
    gamma_ = this->add_parameter("gamma", {channels}, std::vector<T>(channels, T(1)));
    beta_ = this->add_parameter("beta", {channels}, std::vector<T>(channels, T(0)));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override { return batchnorm1d(x, gamma_, beta_, state_, mode); }
  std::string kind() const override { return "batchnorm"; }

  void collect_buffers(std::vector<std::pair<std::string, std::vector<T>*>>& out) override {
    out.emplace_back(this->name() + "/running_mean", &state_.running_mean);
    out.emplace_back(this->name() + "/running_var", &state_.running_var);
  }

  BatchNormState<T>& state() { return state_; }

 private:
  Tensor<T> gamma_, beta_;
  BatchNormState<T> state_;
};

template <class T>
class LayerNorm : public Layer<T> {
 public:
  LayerNorm(std::string name, std::size_t dim) : Layer<T>(std::move(name)) {
    gamma_ = this->add_parameter("gamma", {dim}, std::vector<T>(dim, T(1)));
    beta_ = this->add_parameter("beta", {dim}, std::vector<T>(dim, T(0)));
  }
  Tensor<T> forward(const Tensor<T>& x, Mode) override { return layer_norm(x, gamma_, beta_); }
  std::string kind() const override { return "layernorm"; }

 private:
  Tensor<T> gamma_, beta_;
};

template <class T>
class ActivationLayer : public Layer<T> {
 public:
  explicit ActivationLayer(Activation a) : a_(a) {}
  Tensor<T> forward(const Tensor<T>& x, Mode) override { return activation(x, a_); }
  std::string kind() const override { return "activation"; }

 private:
  Activation a_;
};

template <class T>
class Pool : public Layer<T> {
 public:
  Pool(PoolKind k, std::size_t window, std::size_t stride, Padding padding = Padding::valid)
      : k_(k), window_(window), stride_(stride), padding_(padding) {}
  Tensor<T> forward(const Tensor<T>& x, Mode) override { return pool1d(x, k_, window_, stride_, padding_); }
  std::string kind() const override { return "pool1d"; }

 private:
  PoolKind k_;
  std::size_t window_, stride_;
  Padding padding_;
};

template <class T>
class GlobalPool : public Layer<T> {
 public:
  explicit GlobalPool(PoolKind k) : k_(k) {}
  Tensor<T> forward(const Tensor<T>& x, Mode) override { return global_pool(x, k_); }
  std::string kind() const override { return "global_pool"; }

 private:
  PoolKind k_;
};

template <class T>
class Flatten : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override { return flatten(x); }
  std::string kind() const override { return "flatten"; }
};

template <class T>
class Sequential : public Layer<T> {
 public:
  explicit Sequential(std::string name = {}, std::string kind = "sequential")
      : Layer<T>(std::move(name)), kind_(std::move(kind)) {}

  template <class L>
  L* add(std::unique_ptr<L> layer) {
    return this->add_child(std::move(layer));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> h = x;
    for (const auto& c : this->children()) h = c->forward(h, mode);
    return h;
  }
  std::string kind() const override { return kind_; }
  std::size_t size() const { return this->children().size(); }

 private:
  std::string kind_;
};

/// relu(main(x) + shortcut(x)); identity shortcut when none is given.
template <class T>
class Residual : public Layer<T> {
 public:
  Residual(std::string name, std::unique_ptr<Sequential<T>> main, std::unique_ptr<Sequential<T>> shortcut)
      : Layer<T>(std::move(name)) {
    main_ = this->add_child(std::move(main));
    if (shortcut) shortcut_ = this->add_child(std::move(shortcut));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> m = main_->forward(x, mode);
    Tensor<T> s = shortcut_ ? shortcut_->forward(x, mode) : x;
    return relu(add(m, s));
  }
  std::string kind() const override { return "residual"; }

 private:
  Sequential<T>* main_ = nullptr;
  Sequential<T>* shortcut_ = nullptr;
};

/// Parallel branches concatenated along channels.
template <class T>
class Branches : public Layer<T> {
 public:
  explicit Branches(std::string name) : Layer<T>(std::move(name)) {}

  Sequential<T>* add_branch(std::unique_ptr<Sequential<T>> b) { return this->add_child(std::move(b)); }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    std::vector<Tensor<T>> outs;
    for (const auto& c : this->children()) outs.push_back(c->forward(x, mode));
    return concat(outs, 1);
  }
  std::string kind() const override { return "inception"; }
};

template <class T>
std::vector<Parameter<T>> parameters_of(const Layer<T>& layer) {
  std::vector<Parameter<T>> out;
  layer.collect_parameters(out);
  return out;
}

}  // namespace physioattn
