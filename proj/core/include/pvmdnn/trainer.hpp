#pragma once

// Closed-loop BPTT training of all learnables (kernels, weights, biases and
// the per-sequence initial internal states) under the summed visual SSE and
// proprioceptive KL objective, with Adam and finite-difference verification.

#include <functional>
#include <span>
#include <vector>

#include "pvmdnn/dataset.hpp"
#include "pvmdnn/network.hpp"

namespace pvmdnn {

struct TrainConfig {
  int epochs = 3000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double w_visual = 1.0;    // loss weighting; the published objective is the raw sum
  double w_proprio = 1.0;
  int checkpoint_interval = 1000;  // epochs between periodic checkpoints; 0 disables
  int threads = 0;                 // 0 = one per sequence up to the hardware count
};

struct LossBreakdown {
  double total = 0.0;
  double visual = 0.0;
  double proprio = 0.0;
  std::vector<double> per_sequence;
  bool kl_clamped = false;
};

// Per-step loss targets aligned with Unroll::steps; null = no target there.
struct TargetsView {
  std::vector<const MapStack*> v_targets;
  std::vector<const std::vector<double>*> p_targets;
  double w_visual = 1.0;
  double w_proprio = 1.0;
};

struct LossValues {
  double total = 0.0;
  double visual = 0.0;
  double proprio = 0.0;
  bool kl_clamped = false;
};

LossValues eval_loss(const Unroll& roll, const TargetsView& targets);

// Exact reverse-mode gradients of eval_loss through the recorded unroll,
// including the closed-loop feedback paths between consecutive steps.
// param_grads (accumulated into) may be null when only the initial-state
// gradient is wanted (error regression); u0_grad likewise.
void backward(const NetworkConfig& cfg, const Parameters& p, const Unroll& roll,
              const TargetsView& targets, Parameters* param_grads, HiddenState* u0_grad);

// Rolls the network closed-loop from the sequence's learnable initial state,
// first input = the sequence's first observation, target at step t = the
// observation at t+1. Returns the loss; optionally keeps the unroll.
struct SequenceLoss {
  double total = 0.0;
  double visual = 0.0;
  double proprio = 0.0;
};
SequenceLoss sequence_loss(const NetworkConfig& cfg, const Parameters& p,
                           const SequencePair& seq, int seq_index, double w_visual = 1.0,
                           double w_proprio = 1.0, Unroll* keep = nullptr);

// Full-batch gradients of the summed loss over `data` for every learnable,
// including each sequence's initial state. Single-threaded, fixed order.
struct FullGradients {
  Parameters grads;  // initial_states[s] holds sequence s's u0 gradient
  LossBreakdown loss;
};
FullGradients full_gradients(const NetworkConfig& cfg, const Parameters& p,
                             std::span<const SequencePair> data, double w_visual = 1.0,
                             double w_proprio = 1.0);

// --- Adam ------------------------------------------------------------------

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;

  static AdamState like(const std::vector<TensorRef>& refs);
};

// Standard bias-corrected Adam update, applied tensorwise in fixed order.
void adam_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps);

// --- training loop ----------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double total = 0.0;
  double visual = 0.0;
  double proprio = 0.0;
  double wall_seconds = 0.0;
};

struct TrainSinks {
  std::function<void(const EpochRecord&)> on_epoch;                      // loss CSV row
  std::function<void(int epoch, const Parameters&)> on_checkpoint;      // periodic + final
};

struct TrainResult {
  Parameters params;
  std::vector<EpochRecord> history;
  bool diverged = false;
  int last_good_epoch = -1;
};

// Full-batch training: one update per epoch over all sequences. Sequences may
// be evaluated in parallel; gradients are reduced in sequence order so runs
// are bit-reproducible regardless of the thread count. On divergence the
// parameters roll back to the last finite epoch and that state is
// checkpointed before returning with diverged = true.
TrainResult train(const NetworkConfig& cfg, const TrainConfig& tc,
                  std::span<const SequencePair> data, const TrainSinks& sinks = {});

// --- gradient verification ---------------------------------------------------

// Central finite differences over every learnable scalar. O(#params) full
// loss evaluations; intended for miniature configs.
Parameters finite_diff_gradients(const NetworkConfig& cfg, const Parameters& p,
                                 std::span<const SequencePair> data, double epsilon,
                                 double w_visual = 1.0, double w_proprio = 1.0);

struct GradCheckEntry {
  std::string name;
  double rel_error = 0.0;  // ||analytic - fd||_2 / max(||fd||_2, 1e-12)
};
struct GradCheckReport {
  std::vector<GradCheckEntry> tensors;
  double max_rel_error = 0.0;
  bool pass = false;
};

// Per-tensor L2 relative disagreement between two gradient sets.
GradCheckReport compare_gradients(Parameters& analytic, Parameters& fd,
                                  const NetworkConfig& cfg, double tolerance);

// Builds a random miniature problem (parameters, biases and initial states
// all non-trivial; random finite targets), computes BPTT and central-
// difference gradients, and reports the per-tensor relative error.
GradCheckReport grad_check(const NetworkConfig& cfg, std::uint64_t seed, double epsilon,
                           double tolerance);

// The random miniature problem used by grad_check, exposed so tests can run
// the comparison with deliberately corrupted gradients.
struct GradCheckProblem {
  Parameters params;
  std::vector<SequencePair> data;
};
GradCheckProblem make_grad_check_problem(const NetworkConfig& cfg, std::uint64_t seed,
                                         int sequences = 2, int length = 5);

}  // namespace pvmdnn
