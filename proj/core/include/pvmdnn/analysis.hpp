#pragma once

// Quantitative analysis: PCA of initial states and dynamic activations,
// per-step error metrics, intent classification against the trained initial
// states, and frame export.

#include <span>
#include <string>
#include <vector>

#include "pvmdnn/dataset.hpp"
#include "pvmdnn/gesture.hpp"
#include "pvmdnn/network.hpp"

namespace pvmdnn {

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

struct PcaResult {
  Matrix components;            // k x d, orthonormal rows
  Matrix projections;           // n x k (centered data projected)
  std::vector<double> explained_ratio;  // k entries, non-increasing, sum <= 1
  std::vector<double> mean;     // column means used for centering
};

// PCA by singular decomposition of the mean-centered matrix (one-sided
// Jacobi on the thin side). Sign convention: the largest-magnitude entry of
// each component is positive.
PcaResult pca(const Matrix& data, int k);

// Projects a new row (same d) into an existing PCA basis.
std::vector<double> pca_project(const PcaResult& basis, std::span<const double> row);

struct InitialStatePca {
  PcaResult v_slow;
  PcaResult p_slow;
};
// PCA (k = 2) of the per-sequence slow-layer initial states.
InitialStatePca project_initial_states(const NetworkConfig& cfg, const Parameters& params,
                                       int k = 2);

// --- error metrics ---------------------------------------------------------

struct MetricsRow {
  int step = 0;
  double visual_mse = 0.0;   // mean squared pixel error
  double proprio_kl = 0.0;   // KL(target code || predicted code), summed
  std::vector<double> joint_abs_err;  // |decoded pred - decoded target| per joint
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
  MetricsRow mean;  // per-column mean over the rows
};

MetricsTable error_metrics(const SequencePair& predicted, const SequencePair& target,
                           const CodingConfig& coding);
void write_metrics_csv(const std::string& path, const MetricsTable& table);

// --- intent classification ---------------------------------------------------

// Nearest trained initial state (Euclidean distance over the concatenated
// slow-layer internal states); ties resolve to the lowest reference index.
std::vector<int> classify_inferred_intent(std::span<const HiddenState> inferred,
                                          std::span<const HiddenState> references);

// Fraction of steps t >= burn_in where labels[t] == schedule[t].
double schedule_accuracy(std::span<const int> labels, std::span<const int> schedule,
                         int burn_in);

// --- frame export ------------------------------------------------------------

// One binary PGM (P5, maxval 255) per frame, [-1,1] mapped to 0..255 by
// round-half-up of 127.5 (v + 1); files named <prefix><step, zero-padded>.pgm.
std::vector<std::string> dump_frames(std::span<const MapStack> frames,
                                     const std::string& directory,
                                     const std::string& prefix = "frame_");

MapStack read_pgm(const std::string& path);

}  // namespace pvmdnn
