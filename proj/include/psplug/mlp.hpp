#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "psplug/backbone.hpp"
#include "psplug/errors.hpp"

namespace psplug {

// Named view over one parameter tensor and its gradient accumulator; the
// optimizer walks these without knowing the module layout.
struct ParamRef {
  std::string name;
  Matrix* value;
  Matrix* grad;
  bool weight_decay;  // true for weight matrices, false for biases
};

inline double gelu(double z) { return 0.5 * z * (1.0 + std::erf(z * M_SQRT1_2)); }

inline double gelu_grad(double z) {
  constexpr double inv_sqrt_2pi = 0.3989422804014326779;
  return 0.5 * (1.0 + std::erf(z * M_SQRT1_2)) + z * inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

// in -> hidden (exact GELU) -> out, with biases. The output layer starts at
// zero so a freshly initialized module is the constant-zero map; gradients
// accumulate across backward() calls until zero_grad().
class TwoLayerMlp {
 public:
  TwoLayerMlp() = default;

  TwoLayerMlp(int in, int hidden, int out, std::uint64_t seed) {
    if (in < 1 || hidden < 1 || out < 1) throw ConfigError("mlp dims must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(double(in)));
    w1.resize(in, hidden);
    for (Eigen::Index j = 0; j < w1.cols(); ++j)
      for (Eigen::Index i = 0; i < w1.rows(); ++i) w1(i, j) = gauss(rng);
    b1 = Matrix::Zero(1, hidden);
    w2 = Matrix::Zero(hidden, out);
    b2 = Matrix::Zero(1, out);
    zero_grad();
  }

  int in_dim() const { return int(w1.rows()); }
  int hidden_dim() const { return int(w1.cols()); }
  int out_dim() const { return int(w2.cols()); }

  struct Cache {
    Vector x;  // input
    Vector z;  // pre-activation
    Vector h;  // gelu(z)
  };

  Vector forward(const Vector& x) const {
    Cache scratch;
    return forward(x, scratch);
  }

  Vector forward(const Vector& x, Cache& cache) const {
    if (x.size() != w1.rows()) {
      throw InvalidInputError("mlp input dim " + std::to_string(x.size()) +
                              " != " + std::to_string(w1.rows()));
    }
    cache.x = x;
    cache.z = w1.transpose() * x + b1.transpose();
    cache.h = cache.z.unaryExpr([](double v) { return gelu(v); });
    return w2.transpose() * cache.h + b2.transpose();
  }

  // Accumulates parameter gradients from one sample; returns d(loss)/d(input).
  Vector backward(const Cache& cache, const Vector& dy) {
    if (dy.size() != w2.cols()) throw InvalidInputError("mlp grad dim mismatch");
    gb2 += dy.transpose();
    gw2 += cache.h * dy.transpose();
    Vector dh = w2 * dy;
    Vector dz = dh.cwiseProduct(cache.z.unaryExpr([](double v) { return gelu_grad(v); }));
    gb1 += dz.transpose();
    gw1 += cache.x * dz.transpose();
    return w1 * dz;
  }

  void zero_grad() {
    gw1 = Matrix::Zero(w1.rows(), w1.cols());
    gb1 = Matrix::Zero(b1.rows(), b1.cols());
    gw2 = Matrix::Zero(w2.rows(), w2.cols());
    gb2 = Matrix::Zero(b2.rows(), b2.cols());
  }

  std::vector<ParamRef> params(const std::string& scope) {
    return {{scope + ".w1", &w1, &gw1, true},
            {scope + ".b1", &b1, &gb1, false},
            {scope + ".w2", &w2, &gw2, true},
            {scope + ".b2", &b2, &gb2, false}};
  }

  Matrix w1, b1, w2, b2;
  Matrix gw1, gb1, gw2, gb2;
};

}  // namespace psplug
