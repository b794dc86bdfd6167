#include "pvmdnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pvmdnn {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

std::string shape_str(const MapStack& m) {
  return std::to_string(m.maps) + "x" + std::to_string(m.height) + "x" +
         std::to_string(m.width);
}

}  // namespace

int conv_out_extent(int in, int k, int stride) { return (in - k) / stride + 1; }
int convt_out_extent(int in, int k, int stride) { return stride * (in - 1) + k; }

void conv_valid_acc(MapStack& out, const MapStack& in, const Kernel4& k) {
  require(in.maps == k.in_maps, "conv_valid: input has " + std::to_string(in.maps) +
                                    " maps, kernel expects " + std::to_string(k.in_maps));
  require(in.height >= k.kh && in.width >= k.kw,
          "conv_valid: input " + shape_str(in) + " smaller than kernel");
  const int oh = conv_out_extent(in.height, k.kh, k.stride_y);
  const int ow = conv_out_extent(in.width, k.kw, k.stride_x);
  require(out.maps == k.out_maps && out.height == oh && out.width == ow,
          "conv_valid: output buffer is " + shape_str(out) + ", expected " +
              std::to_string(k.out_maps) + "x" + std::to_string(oh) + "x" +
              std::to_string(ow));

  for (int o = 0; o < k.out_maps; ++o) {
    double* outp = &out.data[static_cast<std::size_t>(o) * out.plane()];
    for (int i = 0; i < k.in_maps; ++i) {
      const double* inp = &in.data[static_cast<std::size_t>(i) * in.plane()];
      for (int ky = 0; ky < k.kh; ++ky) {
        for (int kx = 0; kx < k.kw; ++kx) {
          const double w = k.at(o, i, ky, kx);
          if (w == 0.0) continue;
          for (int oy = 0; oy < oh; ++oy) {
            const double* inrow = inp + (static_cast<std::size_t>(oy) * k.stride_y + ky) * in.width + kx;
            double* outrow = outp + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              outrow[ox] += w * inrow[static_cast<std::size_t>(ox) * k.stride_x];
            }
          }
        }
      }
    }
  }
}

void conv_transposed_acc(MapStack& out, const MapStack& in, const Kernel4& k) {
  require(in.maps == k.out_maps, "conv_transposed: input has " + std::to_string(in.maps) +
                                     " maps, kernel produces " + std::to_string(k.out_maps));
  const int oh = convt_out_extent(in.height, k.kh, k.stride_y);
  const int ow = convt_out_extent(in.width, k.kw, k.stride_x);
  require(out.maps == k.in_maps && out.height == oh && out.width == ow,
          "conv_transposed: output buffer is " + shape_str(out) + ", expected " +
              std::to_string(k.in_maps) + "x" + std::to_string(oh) + "x" +
              std::to_string(ow));

  for (int o = 0; o < k.out_maps; ++o) {
    const double* inp = &in.data[static_cast<std::size_t>(o) * in.plane()];
    for (int i = 0; i < k.in_maps; ++i) {
      double* outp = &out.data[static_cast<std::size_t>(i) * out.plane()];
      for (int ky = 0; ky < k.kh; ++ky) {
        for (int kx = 0; kx < k.kw; ++kx) {
          const double w = k.at(o, i, ky, kx);
          if (w == 0.0) continue;
          for (int iy = 0; iy < in.height; ++iy) {
            const double* inrow = inp + static_cast<std::size_t>(iy) * in.width;
            double* outrow = outp + (static_cast<std::size_t>(iy) * k.stride_y + ky) * ow + kx;
            for (int ix = 0; ix < in.width; ++ix) {
              outrow[static_cast<std::size_t>(ix) * k.stride_x] += w * inrow[ix];
            }
          }
        }
      }
    }
  }
}

void conv_kernel_grad_acc(Kernel4& gk, const MapStack& input, const MapStack& grad_out) {
  require(input.maps == gk.in_maps && grad_out.maps == gk.out_maps,
          "conv_kernel_grad: map counts disagree with kernel");
  const int oh = conv_out_extent(input.height, gk.kh, gk.stride_y);
  const int ow = conv_out_extent(input.width, gk.kw, gk.stride_x);
  require(grad_out.height == oh && grad_out.width == ow,
          "conv_kernel_grad: grad_out is " + shape_str(grad_out) + ", expected " +
              std::to_string(gk.out_maps) + "x" + std::to_string(oh) + "x" +
              std::to_string(ow));

  for (int o = 0; o < gk.out_maps; ++o) {
    const double* gp = &grad_out.data[static_cast<std::size_t>(o) * grad_out.plane()];
    for (int i = 0; i < gk.in_maps; ++i) {
      const double* inp = &input.data[static_cast<std::size_t>(i) * input.plane()];
      for (int ky = 0; ky < gk.kh; ++ky) {
        for (int kx = 0; kx < gk.kw; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < oh; ++oy) {
            const double* inrow = inp + (static_cast<std::size_t>(oy) * gk.stride_y + ky) * input.width + kx;
            const double* grow = gp + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              acc += grow[ox] * inrow[static_cast<std::size_t>(ox) * gk.stride_x];
            }
          }
          gk.at(o, i, ky, kx) += acc;
        }
      }
    }
  }
}

MapStack conv_valid(const MapStack& in, const Kernel4& k, std::span<const double> bias) {
  require(bias.empty() || static_cast<int>(bias.size()) == k.out_maps,
          "conv_valid: bias length must equal out_maps");
  require(in.maps == k.in_maps, "conv_valid: input maps != kernel in_maps");
  require(in.height >= k.kh && in.width >= k.kw, "conv_valid: input smaller than kernel");
  MapStack out(k.out_maps, conv_out_extent(in.height, k.kh, k.stride_y),
               conv_out_extent(in.width, k.kw, k.stride_x));
  if (!bias.empty()) {
    for (int o = 0; o < out.maps; ++o) {
      std::fill_n(out.data.begin() + static_cast<std::size_t>(o) * out.plane(), out.plane(),
                  bias[o]);
    }
  }
  conv_valid_acc(out, in, k);
  return out;
}

MapStack conv_transposed(const MapStack& in, const Kernel4& k, std::span<const double> bias) {
  require(bias.empty() || static_cast<int>(bias.size()) == k.in_maps,
          "conv_transposed: bias length must equal the produced map count");
  require(in.maps == k.out_maps, "conv_transposed: input maps != kernel out_maps");
  MapStack out(k.in_maps, convt_out_extent(in.height, k.kh, k.stride_y),
               convt_out_extent(in.width, k.kw, k.stride_x));
  if (!bias.empty()) {
    for (int o = 0; o < out.maps; ++o) {
      std::fill_n(out.data.begin() + static_cast<std::size_t>(o) * out.plane(), out.plane(),
                  bias[o]);
    }
  }
  conv_transposed_acc(out, in, k);
  return out;
}

ConvGrads conv_backward(const MapStack& input, const Kernel4& k, const MapStack& grad_out) {
  ConvGrads g;
  g.input = MapStack(input.maps, input.height, input.width);
  conv_transposed_acc(g.input, grad_out, k);
  g.kernel = Kernel4(k.out_maps, k.in_maps, k.kh, k.kw, k.stride_y, k.stride_x);
  conv_kernel_grad_acc(g.kernel, input, grad_out);
  g.bias.assign(k.out_maps, 0.0);
  for (int o = 0; o < grad_out.maps; ++o) {
    const double* gp = &grad_out.data[static_cast<std::size_t>(o) * grad_out.plane()];
    double acc = 0.0;
    for (int j = 0; j < grad_out.plane(); ++j) acc += gp[j];
    g.bias[o] = acc;
  }
  return g;
}

MapStack zero_pad(const MapStack& in, int top, int bottom, int left, int right) {
  MapStack out(in.maps, in.height + top + bottom, in.width + left + right);
  for (int m = 0; m < in.maps; ++m) {
    for (int y = 0; y < in.height; ++y) {
      const double* src = &in.data[(static_cast<std::size_t>(m) * in.height + y) * in.width];
      double* dst = &out.data[(static_cast<std::size_t>(m) * out.height + y + top) * out.width + left];
      std::copy_n(src, in.width, dst);
    }
  }
  return out;
}

MapStack crop(const MapStack& in, int top, int bottom, int left, int right) {
  require(in.height > top + bottom && in.width > left + right, "crop: nothing left");
  MapStack out(in.maps, in.height - top - bottom, in.width - left - right);
  for (int m = 0; m < out.maps; ++m) {
    for (int y = 0; y < out.height; ++y) {
      const double* src = &in.data[(static_cast<std::size_t>(m) * in.height + y + top) * in.width + left];
      double* dst = &out.data[(static_cast<std::size_t>(m) * out.height + y) * out.width];
      std::copy_n(src, out.width, dst);
    }
  }
  return out;
}

void affine_acc(std::span<double> out, const DenseWeights& w, std::span<const double> x) {
  require(static_cast<int>(x.size()) == w.cols, "affine: input length != cols");
  require(static_cast<int>(out.size()) == w.rows, "affine: output length != rows");
  for (int r = 0; r < w.rows; ++r) {
    const double* wr = &w.data[static_cast<std::size_t>(r) * w.cols];
    double acc = 0.0;
    for (int c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
    out[r] += acc;
  }
}

void affine_transposed_acc(std::span<double> out, const DenseWeights& w,
                           std::span<const double> y) {
  require(static_cast<int>(y.size()) == w.rows, "affine_transposed: input length != rows");
  require(static_cast<int>(out.size()) == w.cols, "affine_transposed: output length != cols");
  for (int r = 0; r < w.rows; ++r) {
    const double* wr = &w.data[static_cast<std::size_t>(r) * w.cols];
    const double yr = y[r];
    if (yr == 0.0) continue;
    for (int c = 0; c < w.cols; ++c) out[c] += wr[c] * yr;
  }
}

void outer_acc(DenseWeights& gw, std::span<const double> gy, std::span<const double> x) {
  require(static_cast<int>(gy.size()) == gw.rows && static_cast<int>(x.size()) == gw.cols,
          "outer: shape mismatch");
  for (int r = 0; r < gw.rows; ++r) {
    double* wr = &gw.data[static_cast<std::size_t>(r) * gw.cols];
    const double g = gy[r];
    if (g == 0.0) continue;
    for (int c = 0; c < gw.cols; ++c) wr[c] += g * x[c];
  }
}

std::vector<double> affine(const DenseWeights& w, std::span<const double> x,
                           std::span<const double> bias) {
  require(bias.empty() || static_cast<int>(bias.size()) == w.rows,
          "affine: bias length != rows");
  std::vector<double> out(w.rows, 0.0);
  if (!bias.empty()) std::copy(bias.begin(), bias.end(), out.begin());
  affine_acc(out, w, x);
  return out;
}

AffineGrads affine_backward(const DenseWeights& w, std::span<const double> x,
                            std::span<const double> grad_out) {
  require(static_cast<int>(grad_out.size()) == w.rows, "affine_backward: grad length != rows");
  AffineGrads g;
  g.input.assign(w.cols, 0.0);
  affine_transposed_acc(g.input, w, grad_out);
  g.weights = DenseWeights(w.rows, w.cols);
  outer_acc(g.weights, grad_out, x);
  g.bias.assign(grad_out.begin(), grad_out.end());
  return g;
}

double scaled_tanh(double u) { return kTanhGain * std::tanh(kTanhSlope * u); }

double scaled_tanh_prime(double u) {
  const double t = std::tanh(kTanhSlope * u);
  return kTanhGain * kTanhSlope * (1.0 - t * t);
}

double out_tanh(double u) { return std::tanh(u); }

double out_tanh_prime(double u) {
  const double t = std::tanh(u);
  return 1.0 - t * t;
}

void map_scaled_tanh(std::span<const double> u, std::span<double> v) {
  require(u.size() == v.size(), "map_scaled_tanh: length mismatch");
  for (std::size_t i = 0; i < u.size(); ++i) v[i] = scaled_tanh(u[i]);
}

void softmax_groups(std::span<const double> u, int group_size, std::span<double> out) {
  require(group_size > 0, "softmax: empty group");
  require(!u.empty() && u.size() % static_cast<std::size_t>(group_size) == 0,
          "softmax: vector length is not a multiple of the group size");
  require(u.size() == out.size(), "softmax: output length mismatch");
  const std::size_t groups = u.size() / group_size;
  for (std::size_t g = 0; g < groups; ++g) {
    const double* ug = u.data() + g * group_size;
    double* og = out.data() + g * group_size;
    double mx = ug[0];
    for (int i = 1; i < group_size; ++i) mx = std::max(mx, ug[i]);
    double sum = 0.0;
    for (int i = 0; i < group_size; ++i) {
      og[i] = std::exp(ug[i] - mx);
      sum += og[i];
    }
    for (int i = 0; i < group_size; ++i) og[i] /= sum;
  }
}

std::vector<double> softmax_groups(std::span<const double> u, int group_size) {
  std::vector<double> out(u.size(), 0.0);
  softmax_groups(u, group_size, out);
  return out;
}

void softmax_groups_backward(std::span<const double> y, std::span<const double> dy,
                             int group_size, std::span<double> du) {
  require(y.size() == dy.size() && y.size() == du.size(), "softmax backward: length mismatch");
  require(group_size > 0 && y.size() % static_cast<std::size_t>(group_size) == 0,
          "softmax backward: bad group size");
  const std::size_t groups = y.size() / group_size;
  for (std::size_t g = 0; g < groups; ++g) {
    const double* yg = y.data() + g * group_size;
    const double* dg = dy.data() + g * group_size;
    double* og = du.data() + g * group_size;
    double dot = 0.0;
    for (int i = 0; i < group_size; ++i) dot += yg[i] * dg[i];
    for (int i = 0; i < group_size; ++i) og[i] = yg[i] * (dg[i] - dot);
  }
}

double sse_loss(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size(), "sse_loss: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = target[i] - pred[i];
    acc += d * d;
  }
  return acc;
}

void sse_grad_acc(std::span<double> g, std::span<const double> pred,
                  std::span<const double> target, double weight) {
  require(g.size() == pred.size() && pred.size() == target.size(), "sse_grad: length mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    g[i] += weight * 2.0 * (pred[i] - target[i]);
  }
}

KlResult kl_loss(std::span<const double> target, std::span<const double> pred) {
  require(pred.size() == target.size(), "kl_loss: length mismatch");
  KlResult r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double t = target[i];
    if (t <= 0.0) continue;  // 0 log(0/y) == 0
    double p = pred[i];
    if (p <= 0.0) {
      p = kKlProbFloor;
      r.clamped = true;
    }
    r.value += t * std::log(t / p);
  }
  return r;
}

void kl_grad_acc(std::span<double> g, std::span<const double> target,
                 std::span<const double> pred, double weight) {
  require(g.size() == pred.size() && pred.size() == target.size(), "kl_grad: length mismatch");
  // At an exact prediction-target match the divergence sits at its minimum;
  // the gradient is defined as zero there. (The raw formula would leave a
  // 1-ulp residue whenever the stored target's group mass is not exactly 1,
  // and scale-invariant optimizers amplify that residue.)
  bool equal = true;
  for (std::size_t i = 0; i < pred.size() && equal; ++i) equal = target[i] == pred[i];
  if (equal) return;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double t = target[i];
    if (t <= 0.0) continue;
    const double p = pred[i] <= 0.0 ? kKlProbFloor : pred[i];
    g[i] += weight * (-t / p);
  }
}

}  // namespace pvmdnn
