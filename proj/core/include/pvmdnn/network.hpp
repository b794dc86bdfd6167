#pragma once

// The two-pathway predictive network: learnable parameters, per-step state,
// the single-step forward dynamics, and open/closed-loop sequence generation.
//
// Per hidden layer the internal state follows the leaky-integrator update
//   u^t = (1 - 1/tau) u^{t-1} + (1/tau)(drive + b)
// with the drive assembled from bottom-up (valid conv / affine), top-down
// (transposed conv / affine), recurrent (shape-preserving conv / affine) and,
// at the slow levels, lateral cross-pathway terms. The output layers are
// memoryless (tau = 1): the visual output applies tanh to a transposed conv
// of the fast visual maps; the proprioceptive output applies a grouped
// softmax to an affine map of the fast proprioceptive units.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pvmdnn/config.hpp"
#include "pvmdnn/tensor.hpp"

namespace pvmdnn {

// Internal states u for the six hidden layers. Also serves as a per-sequence
// learnable initial state and as the optimizable window-start state during
// error regression.
struct HiddenState {
  MapStack vf, vm, vs;
  std::vector<double> pf, pm, ps;

  static HiddenState zeros(const NetworkConfig& cfg);
  void set_zero();
  std::size_t total_size() const;
};

// Named view into one tensor of a parameter set or state bundle.
struct TensorRef {
  std::string name;
  double tau = 0.0;              // owning layer's time constant; 0 when not tied to one
  std::vector<int> dims;
  double* data = nullptr;
  std::size_t size = 0;
};

// All learnables. Kernel roles (valid vs transposed application) follow the
// connection they implement; see forward_step.
struct Parameters {
  // visual pathway
  Kernel4 vf_from_input;  // valid, image -> fast maps
  Kernel4 vf_from_vm;     // transposed, mid -> fast
  Kernel4 vf_rec;         // shape-preserving recurrent
  std::vector<double> vf_bias;
  Kernel4 vm_from_vf;     // valid
  Kernel4 vm_from_vs;     // transposed
  Kernel4 vm_rec;
  std::vector<double> vm_bias;
  Kernel4 vs_from_vm;     // valid
  Kernel4 vs_rec;
  Kernel4 vs_from_ps;     // lateral, applied transposed to slow proprio activations
  std::vector<double> vs_bias;
  Kernel4 vo_from_vf;     // transposed, fast maps -> output image
  std::vector<double> vo_bias;

  // proprioceptive pathway
  DenseWeights pf_from_input, pf_from_pm, pf_rec;
  std::vector<double> pf_bias;
  DenseWeights pm_from_pf, pm_from_ps, pm_rec;
  std::vector<double> pm_bias;
  DenseWeights ps_from_pm, ps_rec;
  Kernel4 ps_from_vs;     // lateral, applied valid to slow visual activations
  std::vector<double> ps_bias;
  DenseWeights po_from_pf;
  std::vector<double> po_bias;

  // learnable initial internal states, one bundle per training sequence
  std::vector<HiddenState> initial_states;
};

// Zero-valued parameter set with shapes derived from the config.
Parameters zero_params(const NetworkConfig& cfg, int num_sequences);

// Biases and initial states start at zero; kernels and weights are drawn
// uniformly in +-1/sqrt(fan_in) from a SplitMix64 stream, so the same seed
// reproduces the same bits on any platform.
Parameters init_params(const NetworkConfig& cfg, std::uint64_t seed, int num_sequences);

// Fixed-order enumeration of every learnable tensor (checkpoint order).
std::vector<TensorRef> tensor_refs(Parameters& p, const NetworkConfig& cfg);
// Fixed-order enumeration of the six state tensors of one bundle.
std::vector<TensorRef> state_refs(HiddenState& s);

// Internal states plus their activations at one time step.
struct LayerState {
  HiddenState u;
  HiddenState act;  // scaled_tanh(u), same container layout

  static LayerState from_initial(const NetworkConfig& cfg, const HiddenState& u0);
};

// One step of the dynamics. Evaluation order: fast/mid/slow visual, visual
// output, then fast/mid/slow proprioceptive, proprioceptive output; the
// slow-visual drive uses the previous step's slow-proprio activations while
// the slow-proprio drive uses the current step's slow-visual activations.
// Throws NumericalError naming layer and step when a state turns non-finite.
void forward_step(const NetworkConfig& cfg, const Parameters& p, const LayerState& prev,
                  const MapStack& v_in, std::span<const double> p_in, LayerState& next,
                  MapStack& v_out, std::vector<double>& p_out, int step_index);

// One recorded step of an unrolled run.
struct StepRecord {
  LayerState state;
  MapStack v_in;
  std::vector<double> p_in;
  MapStack v_out;
  std::vector<double> p_out;
  bool v_fed_back = false;  // v_in was the previous step's own prediction
  bool p_fed_back = false;
};

struct Unroll {
  LayerState initial;
  std::vector<StepRecord> steps;
};

// Per-step input source; null pointers mean "feed back the previous output".
// raw_p marks a supplied code that is already a model output (a cached
// prediction) and must be injected verbatim, without group renormalization.
struct StepInput {
  const MapStack* v = nullptr;
  const std::vector<double>* p = nullptr;
  bool raw_p = false;
};

// Runs inputs.size() steps from u0 and records everything needed for an
// exact backward pass. The first step must have both inputs supplied.
// External softmax codes are renormalized per group on injection; fed-back
// outputs are passed through untouched.
void rollout(const NetworkConfig& cfg, const Parameters& p, const HiddenState& u0,
             std::span<const StepInput> inputs, Unroll& out);

struct GeneratedSeq {
  std::vector<MapStack> v_out;
  std::vector<std::vector<double>> p_out;
};

enum class Modality { visual, proprioceptive, both };

// T steps; step 1 consumes first_io, every later step consumes the previous
// step's own prediction (mental simulation).
GeneratedSeq generate_closed_loop(const NetworkConfig& cfg, const Parameters& p,
                                  const HiddenState& u0, const MapStack& first_v,
                                  std::span<const double> first_p, int steps);

// One-step-lookahead generation over an external stream of length T:
// runs T-1 steps; the entrained modality reads external[t-1] at step t, the
// other modality is closed-loop. Step 1 consumes external[0] on both.
GeneratedSeq generate_open_loop(const NetworkConfig& cfg, const Parameters& p,
                                const HiddenState& u0,
                                std::span<const MapStack> v_ext,
                                std::span<const std::vector<double>> p_ext,
                                Modality entrain);

// Renormalizes each softmax group to unit mass (used at data boundaries,
// where 32-bit storage may have perturbed the sums).
void renormalize_code(std::span<double> code, int group_size);

// TF-style split of the (k-1)-wide zero padding that keeps the stride-1
// recurrent convolutions shape-preserving (even kernels pad bottom/right).
void same_padding(const ConvSpec& s, int& top, int& bottom, int& left, int& right);

}  // namespace pvmdnn
