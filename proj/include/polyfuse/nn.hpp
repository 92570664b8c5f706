#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "polyfuse/autodiff.hpp"
#include "polyfuse/tensor.hpp"

namespace polyfuse::nn {

/// A convolution whose output would have no time steps.
class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Mode { Train, Eval };

struct Conv1dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t filter = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::string name = "conv1d";

  /// floor((L + 2*padding - filter) / stride) + 1; throws GeometryError when < 1.
  std::size_t output_length(std::size_t input_length) const;
};

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  explicit BatchNormState(std::size_t channels = 1)
      : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}
};

// Plain forward kernels. Inputs may be unbatched ([C, T], [features]) or
// carry a leading batch axis.

Tensor conv1d_forward(const Tensor& x, const Conv1dSpec& spec, const Tensor& weight, const Tensor& bias);
Tensor batchnorm_forward(const Tensor& x, BatchNormState& state, const Tensor& gamma, const Tensor& beta,
                         Mode mode);
Tensor relu_forward(const Tensor& x);
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor global_avgpool(const Tensor& x);
Tensor softmax(const Tensor& logits);
double softmax_crossentropy(const Tensor& logits, std::span<const int> labels);
Tensor l2_normalize(const Tensor& y, double eps = 1e-12);

// Differentiable versions recorded on the tape of their input.

/// x: [N, C, T], weight: [O, C, F], bias: [O] -> [N, O, T'].
Var conv1d(const Var& x, const Var& weight, const Var& bias, const Conv1dSpec& spec);
/// x: [N, C, T] or [N, C]; statistics are per channel over batch and time.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode);
Var relu(const Var& x);
/// x: [N, in], weight: [in, out], bias: [out].
Var linear(const Var& x, const Var& weight, const Var& bias);
/// [N, C, T] -> [N, C].
Var global_avgpool(const Var& x);
/// Mean cross-entropy of row-wise softmax against integer labels.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);
/// Row-wise y / max(||y||, eps) for [N, O]; order-1 inputs are one row.
Var l2_normalize(const Var& y, double eps = 1e-12);

/// Uniform samples in [-bound, bound].
Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng);

}  // namespace polyfuse::nn
