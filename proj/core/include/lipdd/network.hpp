#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lipdd/conv.hpp"
#include "lipdd/linalg.hpp"
#include "lipdd/spectral.hpp"

namespace lipdd {

/// Flattened concatenation of every layer's weights in layer order
/// (dense: out × in row-major; conv: out, in, ky, kx).
using ParamVector = Vector;

enum class ModelFamily { FFRelu, Cnn };

/// Architecture description. Enough to rebuild a network's layer list.
struct ArchSpec {
  ModelFamily family = ModelFamily::FFRelu;
  std::size_t input_dim = 40;
  std::size_t output_dim = 10;
  /// FF ReLU hidden widths, input side first. Empty means a single linear layer.
  std::vector<std::size_t> widths;
  /// CNN channel multiplier w (channels w, 2w, 4w, 8w).
  std::size_t cnn_width = 0;
  Shape3 image{3, 32, 32};
  std::vector<std::size_t> pools{1, 2, 2, 8};

  static ArchSpec ff_relu(std::vector<std::size_t> widths, std::size_t input_dim = 40,
                          std::size_t output_dim = 10);
  static ArchSpec cnn(std::size_t width, Shape3 image = {3, 32, 32},
                      std::size_t output_dim = 10);

  std::size_t input_size() const;
  std::size_t param_count() const;
  std::string name() const;
  void validate() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

void to_json(nlohmann::json& j, const ArchSpec& a);
void from_json(const nlohmann::json& j, ArchSpec& a);

struct DenseLayer {
  Matrix weight;  // out × in
};
struct ConvLayer {
  ConvGeometry geometry;
  std::vector<double> weight;
};
struct ReluLayer {};
struct MaxPoolLayer {
  PoolGeometry geometry;
};
using Layer = std::variant<DenseLayer, ConvLayer, ReluLayer, MaxPoolLayer>;

/// Per-layer inputs recorded by a batched forward pass; `activations.back()`
/// is the network output. Rows are samples.
struct ForwardTape {
  std::vector<Matrix> activations;
};

/// A sequential zero-bias network: linear or conv maps, ReLU, max pooling.
class Network {
 public:
  Network(ArchSpec arch, std::vector<Layer> layers);

  /// Fan-in uniform initialization with ReLU gain: U(-b, b), b = sqrt(6 / fan_in).
  static Network init(const ArchSpec& arch, std::uint64_t seed);
  /// Same layer structure as `init`, all weights zero.
  static Network zeros(const ArchSpec& arch);

  const ArchSpec& arch() const noexcept { return arch_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  std::size_t input_size() const noexcept { return input_size_; }
  std::size_t output_size() const noexcept { return output_size_; }
  std::size_t param_count() const;

  ParamVector params() const;
  void set_params(std::span<const double> theta);

  Vector forward(std::span<const double> x) const;
  Matrix forward(const Matrix& batch) const;
  ForwardTape forward_tape(const Matrix& batch) const;

  /// Reverse pass for a batch. Adds the parameter gradient of <grad_out, f(X)>
  /// into `param_grad` (length param_count()).
  void backward(const ForwardTape& tape, Matrix grad_out, std::span<double> param_grad) const;

  /// Vector-Jacobian products at one sample of a recorded batch: row r of the
  /// result is cotangents.row(r) · ∇ₓf(x_sample).
  Matrix vjp_input(const ForwardTape& tape, std::size_t sample, Matrix cotangents) const;

  /// output_size × input_size Jacobian at x. ReLU'(0) is taken as 0.
  Matrix input_jacobian(std::span<const double> x) const;

 private:
  ArchSpec arch_;
  std::vector<Layer> layers_;
  std::size_t input_size_ = 0;
  std::size_t output_size_ = 0;
};

/// The linear map of a conv layer at its recorded input geometry.
LinearOperator conv_layer_operator(const ConvLayer& layer);

/// Spectral norm of every dense and conv layer in order. Activations and
/// pooling are 1-Lipschitz and contribute nothing.
std::vector<double> layer_spectral_norms(const Network& net, const PowerIterSettings& s = {});

/// ||θ - θ_ref||₂.
double param_distance(const Network& net, std::span<const double> reference);

}  // namespace lipdd
