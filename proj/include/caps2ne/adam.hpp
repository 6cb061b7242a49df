#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace caps2ne {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <std::floating_point Real>
struct AdamMoments {
  std::vector<Real> first;
  std::vector<Real> second;
};

// Adam with bias correction. One moment pair per registered tensor and a
// single shared step counter.
template <std::floating_point Real>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  std::size_t add_tensor(std::string name, std::size_t size) {
    names_.push_back(std::move(name));
    moments_.push_back({std::vector<Real>(size, Real(0)), std::vector<Real>(size, Real(0))});
    return moments_.size() - 1;
  }

  struct Update {
    std::size_t tensor;
    std::span<Real> params;
    std::span<const Real> grads;
  };

  // All gradients are validated before any parameter moves.
  void step(std::span<const Update> updates, double lr) {
    for (const auto& u : updates) {
      auto& mom = moments_.at(u.tensor);
      if (u.params.size() != mom.first.size() || u.grads.size() != mom.first.size())
        throw std::invalid_argument("adam: shape mismatch for tensor '" + names_[u.tensor] + "'");
      for (std::size_t i = 0; i < u.grads.size(); ++i)
        if (!std::isfinite(u.grads[i]))
          throw NonFiniteGradient("adam: non-finite gradient " + std::to_string(static_cast<double>(u.grads[i])) +
                                  " in tensor '" + names_[u.tensor] + "' at index " + std::to_string(i) +
                                  " (step " + std::to_string(step_ + 1) + ")");
    }
    ++step_;
    const Real b1 = static_cast<Real>(cfg_.beta1), b2 = static_cast<Real>(cfg_.beta2);
    const Real bc1 = Real(1) - static_cast<Real>(std::pow(cfg_.beta1, static_cast<double>(step_)));
    const Real bc2 = Real(1) - static_cast<Real>(std::pow(cfg_.beta2, static_cast<double>(step_)));
    // m_hat / (sqrt(v_hat) + eps) == (sqrt(bc2) / bc1) m / (sqrt(v) + eps sqrt(bc2))
    const Real rate = static_cast<Real>(lr) * std::sqrt(bc2) / bc1;
    const Real eps = static_cast<Real>(cfg_.epsilon) * std::sqrt(bc2);
    for (const auto& u : updates) {
      auto& mom = moments_[u.tensor];
      for (std::size_t i = 0; i < u.params.size(); ++i) {
        const Real g = u.grads[i];
        Real& m = mom.first[i];
        Real& v = mom.second[i];
        m = b1 * m + (Real(1) - b1) * g;
        v = b2 * v + (Real(1) - b2) * g * g;
        u.params[i] -= rate * m / (std::sqrt(v) + eps);
      }
    }
  }

  std::uint64_t steps() const { return step_; }
  void set_steps(std::uint64_t s) { step_ = s; }
  const AdamConfig& config() const { return cfg_; }
  std::size_t num_tensors() const { return moments_.size(); }
  const std::string& name(std::size_t t) const { return names_.at(t); }
  AdamMoments<Real>& moments(std::size_t t) { return moments_.at(t); }
  const AdamMoments<Real>& moments(std::size_t t) const { return moments_.at(t); }

 private:
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<std::string> names_;
  std::vector<AdamMoments<Real>> moments_;
};

}  // namespace caps2ne
