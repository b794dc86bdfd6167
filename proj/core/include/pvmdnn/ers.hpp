#pragma once

// Error regression scheme (ERS): online intention inference over an
// observation stream. A temporal window slides along the stream; inside the
// window the network re-forwards closed-loop and only the window-start
// internal states are optimized (Adam) to minimize the selected modality's
// prediction error. All trained parameters stay frozen.

#include <string>

#include "pvmdnn/dataset.hpp"
#include "pvmdnn/network.hpp"

namespace pvmdnn {

struct ErsConfig {
  int window = 30;          // temporal window W, steps
  int iterations = 50;      // update rounds per stream step; 0 = sensory
                            // entrainment baseline (no window, no updates)
  double learning_rate = 0.1;
  Modality modality = Modality::visual;  // which prediction error is minimized
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct ErsStepTrace {
  int t = 0;
  int window_len = 0;
  double loss_round0 = 0.0;  // windowed modality loss before any update round
  double loss_final = 0.0;   // same loss recomputed after the last round
  double e_v = 0.0;          // windowed visual SSE after the last round
  double e_p = 0.0;          // windowed proprioceptive KL after the last round
  double state_delta = 0.0;  // max-abs change of the window-start state this step
};

struct ErsRun {
  // predictions[t] is the model's prediction of observation t; slot 0 holds
  // the seed observation itself (no prediction exists for the first frame).
  std::vector<MapStack> v_pred;
  std::vector<std::vector<double>> p_pred;
  std::vector<ErsStepTrace> trace;       // one row per stream step
  std::vector<HiddenState> inferred;     // optimized window-start state per step
  int loss_increase_steps = 0;           // steps where loss_final > loss_round0
};

// Runs the scheme over the whole stream. Internal states start neutral
// (zeros) unless `start` is given. With iterations = 0 this degenerates, by
// definition, to open-loop sensory entrainment on the observed modality.
ErsRun run_ers(const NetworkConfig& cfg, const Parameters& p, const SequencePair& obs,
               const ErsConfig& ec, const HiddenState* start = nullptr);

// Trace CSV (t, window_len, loss_round0, loss_final, E_V, E_P, state_offset)
// plus a float32 sidecar holding each step's inferred window-start states;
// state_offset is the byte offset of the step's record in the sidecar.
void write_ers_trace(const std::string& csv_path, const std::string& sidecar_path,
                     const ErsRun& run);

}  // namespace pvmdnn
