#pragma once

// Dense numeric kernels used by the network: valid and transposed 2-D
// convolution, affine maps, activations and losses. Every forward operation
// has an exact analytic backward counterpart; conv_transposed is the linear
// adjoint of conv_valid with the same kernel.

#include <cstddef>
#include <span>
#include <vector>

#include "pvmdnn/errors.hpp"

namespace pvmdnn {

// Stack of 2-D maps, row-major within each map, maps-then-rows order.
struct MapStack {
  int maps = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  MapStack() = default;
  MapStack(int maps_, int height_, int width_)
      : maps(maps_), height(height_), width(width_),
        data(static_cast<std::size_t>(maps_) * height_ * width_, 0.0) {}

  int plane() const { return height * width; }
  std::size_t size() const { return data.size(); }

  double& at(int m, int y, int x) {
    return data[(static_cast<std::size_t>(m) * height + y) * width + x];
  }
  double at(int m, int y, int x) const {
    return data[(static_cast<std::size_t>(m) * height + y) * width + x];
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
  bool same_shape(const MapStack& o) const {
    return maps == o.maps && height == o.height && width == o.width;
  }
};

// 4-D convolution kernel: out_maps x in_maps x kh x kw, with strides.
struct Kernel4 {
  int out_maps = 0;
  int in_maps = 0;
  int kh = 0;
  int kw = 0;
  int stride_y = 1;
  int stride_x = 1;
  std::vector<double> data;

  Kernel4() = default;
  Kernel4(int out, int in, int kh_, int kw_, int sy = 1, int sx = 1)
      : out_maps(out), in_maps(in), kh(kh_), kw(kw_), stride_y(sy), stride_x(sx),
        data(static_cast<std::size_t>(out) * in * kh_ * kw_, 0.0) {}

  std::size_t size() const { return data.size(); }
  double& at(int o, int i, int y, int x) {
    return data[((static_cast<std::size_t>(o) * in_maps + i) * kh + y) * kw + x];
  }
  double at(int o, int i, int y, int x) const {
    return data[((static_cast<std::size_t>(o) * in_maps + i) * kh + y) * kw + x];
  }
};

struct DenseWeights {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  DenseWeights() = default;
  DenseWeights(int rows_, int cols_)
      : rows(rows_), cols(cols_), data(static_cast<std::size_t>(rows_) * cols_, 0.0) {}

  std::size_t size() const { return data.size(); }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

// Output extent of a valid convolution: floor((in - k)/stride) + 1.
int conv_out_extent(int in, int k, int stride);
// Output extent of a transposed convolution: stride*(in - 1) + k.
int convt_out_extent(int in, int k, int stride);

// --- convolution ---------------------------------------------------------

// out += conv_valid(in, k). Shapes must already agree.
void conv_valid_acc(MapStack& out, const MapStack& in, const Kernel4& k);
// out += conv_transposed(in, k); `in` lives in the output space of conv_valid.
void conv_transposed_acc(MapStack& out, const MapStack& in, const Kernel4& k);
// gk += d<grad_out, conv_valid(input, .)>/dk.
void conv_kernel_grad_acc(Kernel4& gk, const MapStack& input, const MapStack& grad_out);

MapStack conv_valid(const MapStack& in, const Kernel4& k,
                    std::span<const double> bias = {});
MapStack conv_transposed(const MapStack& in, const Kernel4& k,
                         std::span<const double> bias = {});

struct ConvGrads {
  MapStack input;
  Kernel4 kernel;
  std::vector<double> bias;
};
// Gradients of <grad_out, conv_valid(input, k, b)> w.r.t. each argument.
ConvGrads conv_backward(const MapStack& input, const Kernel4& k, const MapStack& grad_out);

// Zero padding and its adjoint (cropping). Used to make stride-1 recurrent
// convolutions shape-preserving (pad at the bottom/right for even kernels).
MapStack zero_pad(const MapStack& in, int top, int bottom, int left, int right);
MapStack crop(const MapStack& in, int top, int bottom, int left, int right);

// --- affine --------------------------------------------------------------

void affine_acc(std::span<double> out, const DenseWeights& w, std::span<const double> x);
// out += w^T y (adjoint of affine_acc).
void affine_transposed_acc(std::span<double> out, const DenseWeights& w,
                           std::span<const double> y);
// gw += gy x^T.
void outer_acc(DenseWeights& gw, std::span<const double> gy, std::span<const double> x);

std::vector<double> affine(const DenseWeights& w, std::span<const double> x,
                           std::span<const double> bias = {});

struct AffineGrads {
  std::vector<double> input;
  DenseWeights weights;
  std::vector<double> bias;
};
AffineGrads affine_backward(const DenseWeights& w, std::span<const double> x,
                            std::span<const double> grad_out);

// --- activations ---------------------------------------------------------

inline constexpr double kTanhGain = 1.7159;
inline constexpr double kTanhSlope = 2.0 / 3.0;

// Hidden-unit activation 1.7159 * tanh(2u/3).
double scaled_tanh(double u);
double scaled_tanh_prime(double u);
// Derivative expressed through the activation value itself.
inline double scaled_tanh_prime_from_act(double v) {
  return kTanhSlope * (kTanhGain - v * v / kTanhGain);
}
// Visual-output activation: plain tanh.
double out_tanh(double u);
double out_tanh_prime(double u);

void map_scaled_tanh(std::span<const double> u, std::span<double> v);

// --- grouped softmax -----------------------------------------------------

// Softmax within each consecutive group of `group_size` entries,
// computed with max subtraction. Throws on empty or indivisible groups.
void softmax_groups(std::span<const double> u, int group_size, std::span<double> out);
std::vector<double> softmax_groups(std::span<const double> u, int group_size);
// du = J^T dy for the grouped softmax, given the forward outputs y.
void softmax_groups_backward(std::span<const double> y, std::span<const double> dy,
                             int group_size, std::span<double> du);

// --- losses --------------------------------------------------------------

// Sum of squared errors: sum_i (target_i - pred_i)^2.
double sse_loss(std::span<const double> pred, std::span<const double> target);
// g += weight * 2 (pred - target).
void sse_grad_acc(std::span<double> g, std::span<const double> pred,
                  std::span<const double> target, double weight);

inline constexpr double kKlProbFloor = 1e-15;

struct KlResult {
  double value = 0.0;
  bool clamped = false;  // some pred probability hit the floor where target > 0
};
// KL divergence sum_i target_i log(target_i / pred_i) with 0 log(0/y) == 0.
KlResult kl_loss(std::span<const double> target, std::span<const double> pred);
// g += weight * dKL/dpred (using the same probability floor as kl_loss).
void kl_grad_acc(std::span<double> g, std::span<const double> target,
                 std::span<const double> pred, double weight);

}  // namespace pvmdnn
