#include "lipdd/conv.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "lipdd/error.hpp"

namespace lipdd {

namespace {

void check_len(std::span<const double> s, std::size_t n, const char* what) {
  if (s.size() != n) {
    throw Error(std::string(what) + ": expected length " + std::to_string(n) + ", got " +
                std::to_string(s.size()));
  }
}

// Range of output columns x for which x + k - pad lands inside [0, extent).
struct Span1 {
  std::size_t lo, hi;
};
Span1 valid_range(std::size_t extent, std::size_t k, std::size_t pad) {
  const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
  const std::ptrdiff_t hi =
      std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(extent),
                               static_cast<std::ptrdiff_t>(extent) - shift);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

Shape3 ConvGeometry::output() const { return {out_channels, input.height, input.width}; }

void ConvGeometry::validate() const {
  if (input.size() == 0 || out_channels == 0) throw Error("conv geometry: zero extent");
  if (kernel == 0 || kernel % 2 == 0) throw Error("conv geometry: kernel must be odd");
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> weights,
                    std::span<const double> in, std::span<double> out) {
  check_len(weights, g.weight_count(), "conv2d weights");
  check_len(in, g.input.size(), "conv2d input");
  check_len(out, g.output().size(), "conv2d output");
  const std::size_t H = g.input.height, W = g.input.width, K = g.kernel, P = g.padding();
  const std::size_t C = g.input.channels;
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    double* out_o = out.data() + o * H * W;
    for (std::size_t c = 0; c < C; ++c) {
      const double* in_c = in.data() + c * H * W;
      const double* w = weights.data() + ((o * C + c) * K) * K;
      for (std::size_t ky = 0; ky < K; ++ky) {
        const Span1 ys = valid_range(H, ky, P);
        for (std::size_t kx = 0; kx < K; ++kx) {
          const double wv = w[ky * K + kx];
          if (wv == 0.0) continue;
          const Span1 xs = valid_range(W, kx, P);
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            const double* src = in_c + (y + ky - P) * W;
            double* dst = out_o + y * W;
            for (std::size_t x = xs.lo; x < xs.hi; ++x) dst[x] += wv * src[x + kx - P];
          }
        }
      }
    }
  }
}

void conv2d_adjoint(const ConvGeometry& g, std::span<const double> weights,
                    std::span<const double> grad_out, std::span<double> grad_in) {
  check_len(weights, g.weight_count(), "conv2d weights");
  check_len(grad_out, g.output().size(), "conv2d grad_out");
  check_len(grad_in, g.input.size(), "conv2d grad_in");
  const std::size_t H = g.input.height, W = g.input.width, K = g.kernel, P = g.padding();
  const std::size_t C = g.input.channels;
  std::fill(grad_in.begin(), grad_in.end(), 0.0);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const double* go = grad_out.data() + o * H * W;
    for (std::size_t c = 0; c < C; ++c) {
      double* gi = grad_in.data() + c * H * W;
      const double* w = weights.data() + ((o * C + c) * K) * K;
      for (std::size_t ky = 0; ky < K; ++ky) {
        const Span1 ys = valid_range(H, ky, P);
        for (std::size_t kx = 0; kx < K; ++kx) {
          const double wv = w[ky * K + kx];
          if (wv == 0.0) continue;
          const Span1 xs = valid_range(W, kx, P);
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            double* dst = gi + (y + ky - P) * W;
            const double* src = go + y * W;
            for (std::size_t x = xs.lo; x < xs.hi; ++x) dst[x + kx - P] += wv * src[x];
          }
        }
      }
    }
  }
}

void conv2d_weight_grad(const ConvGeometry& g, std::span<const double> in,
                        std::span<const double> grad_out, std::span<double> grad_weights) {
  check_len(grad_weights, g.weight_count(), "conv2d grad_weights");
  check_len(in, g.input.size(), "conv2d input");
  check_len(grad_out, g.output().size(), "conv2d grad_out");
  const std::size_t H = g.input.height, W = g.input.width, K = g.kernel, P = g.padding();
  const std::size_t C = g.input.channels;
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const double* go = grad_out.data() + o * H * W;
    for (std::size_t c = 0; c < C; ++c) {
      const double* in_c = in.data() + c * H * W;
      double* gw = grad_weights.data() + ((o * C + c) * K) * K;
      for (std::size_t ky = 0; ky < K; ++ky) {
        const Span1 ys = valid_range(H, ky, P);
        for (std::size_t kx = 0; kx < K; ++kx) {
          const Span1 xs = valid_range(W, kx, P);
          double acc = 0.0;
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            const double* src = in_c + (y + ky - P) * W;
            const double* gy = go + y * W;
            for (std::size_t x = xs.lo; x < xs.hi; ++x) acc += gy[x] * src[x + kx - P];
          }
          gw[ky * K + kx] += acc;
        }
      }
    }
  }
}

LinearOperator conv2d_operator(const ConvGeometry& g, std::span<const double> weights) {
  g.validate();
  check_len(weights, g.weight_count(), "conv2d weights");
  std::vector<double> w(weights.begin(), weights.end());
  LinearOperator op;
  op.in_dim = g.input.size();
  op.out_dim = g.output().size();
  op.apply = [g, w](std::span<const double> x, std::span<double> y) {
    conv2d_forward(g, w, x, y);
  };
  op.apply_adjoint = [g, w](std::span<const double> x, std::span<double> y) {
    conv2d_adjoint(g, w, x, y);
  };
  return op;
}

Shape3 PoolGeometry::output() const {
  return {input.channels, input.height / size, input.width / size};
}

void PoolGeometry::validate() const {
  if (size == 0) throw Error("maxpool: zero window");
  if (input.height % size != 0 || input.width % size != 0) {
    throw Error("maxpool: window " + std::to_string(size) + " does not divide " +
                std::to_string(input.height) + "x" + std::to_string(input.width));
  }
}

void maxpool_forward(const PoolGeometry& g, std::span<const double> in, std::span<double> out) {
  check_len(in, g.input.size(), "maxpool input");
  const Shape3 os = g.output();
  check_len(out, os.size(), "maxpool output");
  const std::size_t H = g.input.height, W = g.input.width, S = g.size;
  for (std::size_t c = 0; c < os.channels; ++c)
    for (std::size_t oy = 0; oy < os.height; ++oy)
      for (std::size_t ox = 0; ox < os.width; ++ox) {
        double best = in[c * H * W + (oy * S) * W + ox * S];
        for (std::size_t dy = 0; dy < S; ++dy)
          for (std::size_t dx = 0; dx < S; ++dx)
            best = std::max(best, in[c * H * W + (oy * S + dy) * W + ox * S + dx]);
        out[(c * os.height + oy) * os.width + ox] = best;
      }
}

void maxpool_backward(const PoolGeometry& g, std::span<const double> in,
                      std::span<const double> grad_out, std::span<double> grad_in) {
  check_len(in, g.input.size(), "maxpool input");
  check_len(grad_in, g.input.size(), "maxpool grad_in");
  const Shape3 os = g.output();
  check_len(grad_out, os.size(), "maxpool grad_out");
  const std::size_t H = g.input.height, W = g.input.width, S = g.size;
  std::fill(grad_in.begin(), grad_in.end(), 0.0);
  for (std::size_t c = 0; c < os.channels; ++c)
    for (std::size_t oy = 0; oy < os.height; ++oy)
      for (std::size_t ox = 0; ox < os.width; ++ox) {
        std::size_t arg = c * H * W + (oy * S) * W + ox * S;
        for (std::size_t dy = 0; dy < S; ++dy)
          for (std::size_t dx = 0; dx < S; ++dx) {
            const std::size_t idx = c * H * W + (oy * S + dy) * W + ox * S + dx;
            if (in[idx] > in[arg]) arg = idx;
          }
        grad_in[arg] += grad_out[(c * os.height + oy) * os.width + ox];
      }
}

}  // namespace lipdd
