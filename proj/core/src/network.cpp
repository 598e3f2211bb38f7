#include "lipdd/network.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "lipdd/error.hpp"
#include "lipdd/rng.hpp"

namespace lipdd {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::size_t layer_param_count(const Layer& layer) {
  return std::visit(overloaded{[](const DenseLayer& d) { return d.weight.size(); },
                               [](const ConvLayer& c) { return c.weight.size(); },
                               [](const auto&) { return std::size_t{0}; }},
                    layer);
}

std::size_t layer_output_size(const Layer& layer, std::size_t in) {
  return std::visit(overloaded{[](const DenseLayer& d) { return d.weight.rows(); },
                               [](const ConvLayer& c) { return c.geometry.output().size(); },
                               [in](const ReluLayer&) { return in; },
                               [](const MaxPoolLayer& p) { return p.geometry.output().size(); }},
                    layer);
}

std::size_t cnn_final_spatial(const ArchSpec& a, std::size_t extent) {
  for (std::size_t p : a.pools) extent /= p;
  return extent;
}

// Layer list for an architecture with all weights zero.
std::vector<Layer> build_layers(const ArchSpec& arch) {
  std::vector<Layer> layers;
  if (arch.family == ModelFamily::FFRelu) {
    std::size_t prev = arch.input_dim;
    for (std::size_t w : arch.widths) {
      layers.emplace_back(DenseLayer{Matrix(w, prev)});
      layers.emplace_back(ReluLayer{});
      prev = w;
    }
    layers.emplace_back(DenseLayer{Matrix(arch.output_dim, prev)});
    layers.emplace_back(ReluLayer{});
    return layers;
  }
  Shape3 shape = arch.image;
  std::size_t channels = arch.cnn_width;
  for (std::size_t block = 0; block < arch.pools.size(); ++block) {
    ConvGeometry g{shape, channels, 3};
    layers.emplace_back(ConvLayer{g, std::vector<double>(g.weight_count(), 0.0)});
    layers.emplace_back(ReluLayer{});
    shape = g.output();
    if (arch.pools[block] > 1) {
      PoolGeometry pg{shape, arch.pools[block]};
      layers.emplace_back(MaxPoolLayer{pg});
      shape = pg.output();
    }
    channels *= 2;
  }
  layers.emplace_back(DenseLayer{Matrix(arch.output_dim, shape.size())});
  return layers;
}

std::vector<std::size_t> param_offsets(const std::vector<Layer>& layers) {
  std::vector<std::size_t> offsets(layers.size());
  std::size_t off = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    offsets[i] = off;
    off += layer_param_count(layers[i]);
  }
  return offsets;
}

void relu_mask_rows(Matrix& g, const Matrix& input) {
  auto& gd = g.data();
  const auto& xd = input.data();
  for (std::size_t i = 0; i < gd.size(); ++i)
    if (!(xd[i] > 0.0)) gd[i] = 0.0;
}

}  // namespace

ArchSpec ArchSpec::ff_relu(std::vector<std::size_t> widths, std::size_t input_dim,
                           std::size_t output_dim) {
  ArchSpec a;
  a.family = ModelFamily::FFRelu;
  a.widths = std::move(widths);
  a.input_dim = input_dim;
  a.output_dim = output_dim;
  return a;
}

ArchSpec ArchSpec::cnn(std::size_t width, Shape3 image, std::size_t output_dim) {
  ArchSpec a;
  a.family = ModelFamily::Cnn;
  a.cnn_width = width;
  a.image = image;
  a.input_dim = image.size();
  a.output_dim = output_dim;
  return a;
}

std::size_t ArchSpec::input_size() const {
  return family == ModelFamily::FFRelu ? input_dim : image.size();
}

std::size_t ArchSpec::param_count() const {
  if (family == ModelFamily::FFRelu) {
    std::size_t total = 0, prev = input_dim;
    for (std::size_t w : widths) {
      total += prev * w;
      prev = w;
    }
    return total + prev * output_dim;
  }
  std::size_t total = 0, in_ch = image.channels, out_ch = cnn_width;
  for (std::size_t b = 0; b < pools.size(); ++b) {
    total += in_ch * out_ch * 9;
    in_ch = out_ch;
    out_ch *= 2;
  }
  const std::size_t h = cnn_final_spatial(*this, image.height);
  const std::size_t w = cnn_final_spatial(*this, image.width);
  return total + in_ch * h * w * output_dim;
}

std::string ArchSpec::name() const {
  if (family == ModelFamily::Cnn) return "CNN " + std::to_string(cnn_width);
  std::string s = "FF ReLU ";
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(widths[i]);
  }
  if (widths.empty()) s += "linear";
  return s;
}

void ArchSpec::validate() const {
  if (output_dim == 0) throw ConfigError("model.output_dim", "must be positive");
  if (family == ModelFamily::FFRelu) {
    if (input_dim == 0) throw ConfigError("model.input_dim", "must be positive");
    for (std::size_t w : widths)
      if (w == 0) throw ConfigError("model.widths", "zero width");
    return;
  }
  if (cnn_width == 0) throw ConfigError("model.cnn_width", "zero width");
  if (image.size() == 0) throw ConfigError("model.image", "empty image shape");
  std::size_t h = image.height, w = image.width;
  for (std::size_t p : pools) {
    if (p == 0 || h % p != 0 || w % p != 0)
      throw ConfigError("model.pools", "pool sizes must divide the spatial extent");
    h /= p;
    w /= p;
  }
}

void to_json(nlohmann::json& j, const ArchSpec& a) {
  if (a.family == ModelFamily::FFRelu) {
    j = {{"family", "ff_relu"},
         {"input_dim", a.input_dim},
         {"output_dim", a.output_dim},
         {"widths", a.widths}};
  } else {
    j = {{"family", "cnn"},
         {"width", a.cnn_width},
         {"image", {a.image.channels, a.image.height, a.image.width}},
         {"pools", a.pools},
         {"output_dim", a.output_dim}};
  }
}

void from_json(const nlohmann::json& j, ArchSpec& a) {
  const std::string family = j.at("family").get<std::string>();
  if (family == "ff_relu") {
    a = ArchSpec::ff_relu(j.at("widths").get<std::vector<std::size_t>>(),
                          j.value("input_dim", std::size_t{40}),
                          j.value("output_dim", std::size_t{10}));
  } else if (family == "cnn") {
    Shape3 image{3, 32, 32};
    if (j.contains("image")) {
      auto dims = j.at("image").get<std::vector<std::size_t>>();
      if (dims.size() != 3) throw ConfigError("model.image", "expected [channels, height, width]");
      image = {dims[0], dims[1], dims[2]};
    }
    a = ArchSpec::cnn(j.at("width").get<std::size_t>(), image,
                      j.value("output_dim", std::size_t{10}));
    if (j.contains("pools")) a.pools = j.at("pools").get<std::vector<std::size_t>>();
  } else {
    throw ConfigError("model.family", "unknown family '" + family + "'");
  }
}

Network::Network(ArchSpec arch, std::vector<Layer> layers)
    : arch_(std::move(arch)), layers_(std::move(layers)) {
  input_size_ = arch_.input_size();
  std::size_t size = input_size_;
  for (const auto& layer : layers_) {
    std::visit(overloaded{[&](const DenseLayer& d) {
                            if (d.weight.cols() != size) throw Error("dense layer input mismatch");
                          },
                          [&](const ConvLayer& c) {
                            if (c.geometry.input.size() != size)
                              throw Error("conv layer input mismatch");
                            if (c.weight.size() != c.geometry.weight_count())
                              throw Error("conv layer weight count mismatch");
                          },
                          [&](const MaxPoolLayer& p) {
                            if (p.geometry.input.size() != size)
                              throw Error("maxpool layer input mismatch");
                          },
                          [](const ReluLayer&) {}},
               layer);
    size = layer_output_size(layer, size);
  }
  output_size_ = size;
}

Network Network::zeros(const ArchSpec& arch) {
  arch.validate();
  return Network(arch, build_layers(arch));
}

Network Network::init(const ArchSpec& arch, std::uint64_t seed) {
  Network net = zeros(arch);
  Rng rng(seed);
  for (auto& layer : net.layers_) {
    std::visit(overloaded{[&](DenseLayer& d) {
                            const double b = std::sqrt(6.0 / static_cast<double>(d.weight.cols()));
                            for (auto& w : d.weight.data()) w = rng.uniform(-b, b);
                          },
                          [&](ConvLayer& c) {
                            const double fan_in = static_cast<double>(
                                c.geometry.input.channels * c.geometry.kernel * c.geometry.kernel);
                            const double b = std::sqrt(6.0 / fan_in);
                            for (auto& w : c.weight) w = rng.uniform(-b, b);
                          },
                          [](auto&) {}},
               layer);
  }
  return net;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += layer_param_count(l);
  return n;
}

ParamVector Network::params() const {
  ParamVector theta;
  theta.reserve(param_count());
  for (const auto& layer : layers_) {
    std::visit(overloaded{[&](const DenseLayer& d) {
                            theta.insert(theta.end(), d.weight.data().begin(),
                                         d.weight.data().end());
                          },
                          [&](const ConvLayer& c) {
                            theta.insert(theta.end(), c.weight.begin(), c.weight.end());
                          },
                          [](const auto&) {}},
               layer);
  }
  return theta;
}

void Network::set_params(std::span<const double> theta) {
  if (theta.size() != param_count()) {
    throw Error("set_params: expected " + std::to_string(param_count()) + " values, got " +
                std::to_string(theta.size()));
  }
  std::size_t off = 0;
  for (auto& layer : layers_) {
    std::visit(overloaded{[&](DenseLayer& d) {
                            std::copy_n(theta.begin() + off, d.weight.size(),
                                        d.weight.data().begin());
                            off += d.weight.size();
                          },
                          [&](ConvLayer& c) {
                            std::copy_n(theta.begin() + off, c.weight.size(), c.weight.begin());
                            off += c.weight.size();
                          },
                          [](auto&) {}},
               layer);
  }
}

Vector Network::forward(std::span<const double> x) const {
  if (x.size() != input_size_) {
    throw Error("forward: input has " + std::to_string(x.size()) + " values, network expects " +
                std::to_string(input_size_));
  }
  Matrix batch(1, x.size(), Vector(x.begin(), x.end()));
  return forward(batch).data();
}

Matrix Network::forward(const Matrix& batch) const {
  ForwardTape tape = forward_tape(batch);
  return std::move(tape.activations.back());
}

ForwardTape Network::forward_tape(const Matrix& batch) const {
  if (batch.cols() != input_size_) {
    throw Error("forward: input has " + std::to_string(batch.cols()) +
                " features, network expects " + std::to_string(input_size_));
  }
  const std::size_t B = batch.rows();
  ForwardTape tape;
  tape.activations.reserve(layers_.size() + 1);
  tape.activations.push_back(batch);
  for (const auto& layer : layers_) {
    const Matrix& x = tape.activations.back();
    Matrix y = std::visit(
        overloaded{
            [&](const DenseLayer& d) {
              Matrix out(B, d.weight.rows());
              gemm_nt(x.data().data(), d.weight.data().data(), out.data().data(), B,
                      d.weight.rows(), d.weight.cols());
              return out;
            },
            [&](const ConvLayer& c) {
              Matrix out(B, c.geometry.output().size());
              for (std::size_t r = 0; r < B; ++r)
                conv2d_forward(c.geometry, c.weight, x.row(r), out.row(r));
              return out;
            },
            [&](const ReluLayer&) {
              Matrix out = x;
              for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
              return out;
            },
            [&](const MaxPoolLayer& p) {
              Matrix out(B, p.geometry.output().size());
              for (std::size_t r = 0; r < B; ++r) maxpool_forward(p.geometry, x.row(r), out.row(r));
              return out;
            }},
        layer);
    tape.activations.push_back(std::move(y));
  }
  return tape;
}

void Network::backward(const ForwardTape& tape, Matrix g, std::span<double> param_grad) const {
  if (param_grad.size() != param_count()) throw Error("backward: gradient buffer size mismatch");
  if (tape.activations.size() != layers_.size() + 1) throw Error("backward: tape mismatch");
  const std::size_t B = g.rows();
  const auto offsets = param_offsets(layers_);
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Matrix& x = tape.activations[li];
    const bool need_input_grad = li > 0;
    std::visit(
        overloaded{
            [&](const DenseLayer& d) {
              gemm_tn_accumulate(g.data().data(), x.data().data(),
                                 param_grad.data() + offsets[li], d.weight.rows(),
                                 d.weight.cols(), B);
              if (!need_input_grad) return;
              Matrix gin(B, d.weight.cols());
              gemm_nn(g.data().data(), d.weight.data().data(), gin.data().data(), B,
                      d.weight.cols(), d.weight.rows());
              g = std::move(gin);
            },
            [&](const ConvLayer& c) {
              std::span<double> gw = param_grad.subspan(offsets[li], c.weight.size());
              Matrix gin(B, c.geometry.input.size());
              for (std::size_t r = 0; r < B; ++r) {
                conv2d_weight_grad(c.geometry, x.row(r), g.row(r), gw);
                if (need_input_grad) conv2d_adjoint(c.geometry, c.weight, g.row(r), gin.row(r));
              }
              g = std::move(gin);
            },
            [&](const ReluLayer&) { relu_mask_rows(g, x); },
            [&](const MaxPoolLayer& p) {
              Matrix gin(B, p.geometry.input.size());
              for (std::size_t r = 0; r < B; ++r)
                maxpool_backward(p.geometry, x.row(r), g.row(r), gin.row(r));
              g = std::move(gin);
            }},
        layers_[li]);
  }
}

Matrix Network::vjp_input(const ForwardTape& tape, std::size_t sample, Matrix c) const {
  if (tape.activations.size() != layers_.size() + 1) throw Error("vjp_input: tape mismatch");
  if (c.cols() != output_size_) throw Error("vjp_input: cotangent width mismatch");
  const std::size_t m = c.rows();
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto x = tape.activations[li].row(sample);
    std::visit(
        overloaded{
            [&](const DenseLayer& d) {
              Matrix next(m, d.weight.cols());
              gemm_nn(c.data().data(), d.weight.data().data(), next.data().data(), m,
                      d.weight.cols(), d.weight.rows());
              c = std::move(next);
            },
            [&](const ConvLayer& cv) {
              Matrix next(m, cv.geometry.input.size());
              for (std::size_t r = 0; r < m; ++r)
                conv2d_adjoint(cv.geometry, cv.weight, c.row(r), next.row(r));
              c = std::move(next);
            },
            [&](const ReluLayer&) {
              for (std::size_t r = 0; r < m; ++r) {
                auto row = c.row(r);
                for (std::size_t k = 0; k < row.size(); ++k)
                  if (!(x[k] > 0.0)) row[k] = 0.0;
              }
            },
            [&](const MaxPoolLayer& p) {
              Matrix next(m, p.geometry.input.size());
              for (std::size_t r = 0; r < m; ++r)
                maxpool_backward(p.geometry, x, c.row(r), next.row(r));
              c = std::move(next);
            }},
        layers_[li]);
  }
  return c;
}

Matrix Network::input_jacobian(std::span<const double> x) const {
  if (x.size() != input_size_) {
    throw Error("input_jacobian: input has " + std::to_string(x.size()) +
                " values, network expects " + std::to_string(input_size_));
  }
  Matrix batch(1, x.size(), Vector(x.begin(), x.end()));
  const ForwardTape tape = forward_tape(batch);
  return vjp_input(tape, 0, Matrix::identity(output_size_));
}

LinearOperator conv_layer_operator(const ConvLayer& layer) {
  return conv2d_operator(layer.geometry, layer.weight);
}

std::vector<double> layer_spectral_norms(const Network& net, const PowerIterSettings& s) {
  std::vector<double> norms;
  for (const auto& layer : net.layers()) {
    std::visit(overloaded{[&](const DenseLayer& d) {
                            norms.push_back(spectral_norm_dense(d.weight, s));
                          },
                          [&](const ConvLayer& c) {
                            norms.push_back(spectral_norm_operator(conv_layer_operator(c), s));
                          },
                          [](const auto&) {}},
               layer);
  }
  return norms;
}

double param_distance(const Network& net, std::span<const double> reference) {
  const ParamVector theta = net.params();
  if (theta.size() != reference.size()) {
    throw Error("param_distance: reference has " + std::to_string(reference.size()) +
                " values, network has " + std::to_string(theta.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - reference[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace lipdd
