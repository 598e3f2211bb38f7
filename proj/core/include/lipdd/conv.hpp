#pragma once

#include <cstddef>
#include <span>

#include "lipdd/spectral.hpp"

namespace lipdd {

/// Channel-major image shape (C, H, W).
struct Shape3 {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const noexcept { return channels * height * width; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Square-kernel convolution, stride 1, zero padding kernel/2 (same-size output
/// for odd kernels), no bias. Kernel layout is (out, in, ky, kx).
struct ConvGeometry {
  Shape3 input;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;

  std::size_t padding() const noexcept { return kernel / 2; }
  Shape3 output() const;
  std::size_t weight_count() const noexcept {
    return out_channels * input.channels * kernel * kernel;
  }
  void validate() const;
};

void conv2d_forward(const ConvGeometry& g, std::span<const double> weights,
                    std::span<const double> in, std::span<double> out);

/// Transposed convolution: the adjoint of conv2d_forward in its input argument.
void conv2d_adjoint(const ConvGeometry& g, std::span<const double> weights,
                    std::span<const double> grad_out, std::span<double> grad_in);

/// Accumulates d<grad_out, conv(in)>/d weights into grad_weights.
void conv2d_weight_grad(const ConvGeometry& g, std::span<const double> in,
                        std::span<const double> grad_out, std::span<double> grad_weights);

/// The convolution as an implicit linear map; copies the weights.
LinearOperator conv2d_operator(const ConvGeometry& g, std::span<const double> weights);

/// Non-overlapping max pooling with window = stride = size.
struct PoolGeometry {
  Shape3 input;
  std::size_t size = 1;

  Shape3 output() const;
  void validate() const;
};

void maxpool_forward(const PoolGeometry& g, std::span<const double> in, std::span<double> out);

/// Routes each output gradient to the first maximal element of its window.
void maxpool_backward(const PoolGeometry& g, std::span<const double> in,
                      std::span<const double> grad_out, std::span<double> grad_in);

}  // namespace lipdd
