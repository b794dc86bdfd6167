#include "pvmdnn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include "pvmdnn/rng.hpp"

namespace pvmdnn {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

double map_plane_sum(const MapStack& m, int map) {
  const double* p = &m.data[static_cast<std::size_t>(map) * m.plane()];
  double acc = 0.0;
  for (int j = 0; j < m.plane(); ++j) acc += p[j];
  return acc;
}

MapStack wrap_units(std::span<const double> v) {
  MapStack m(static_cast<int>(v.size()), 1, 1);
  std::copy(v.begin(), v.end(), m.data.begin());
  return m;
}

// lam <- phi'(act) .* dact + keep * lam  (the reverse leak recursion)
void lam_combine(std::span<double> lam, std::span<const double> dact,
                 std::span<const double> act, double keep) {
  for (std::size_t i = 0; i < lam.size(); ++i) {
    lam[i] = scaled_tanh_prime_from_act(act[i]) * dact[i] + keep * lam[i];
  }
}

void scale_into(std::span<double> dst, std::span<const double> src, double s) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = s * src[i];
}

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

bool all_zero(std::span<const double> v) {
  for (double x : v) {
    if (x != 0.0) return false;
  }
  return true;
}

// Backward of the shape-preserving recurrent conv: adds the cropped adjoint
// into dact_prev and (optionally) the kernel gradient from the padded input.
void recurrent_backward(MapStack& dact_prev, Kernel4* gk, const MapStack& g,
                        const MapStack& act_prev, const Kernel4& k, const ConvSpec& spec) {
  int t, b, l, r;
  same_padding(spec, t, b, l, r);
  if (t == 0 && b == 0 && l == 0 && r == 0) {
    conv_transposed_acc(dact_prev, g, k);
    if (gk != nullptr) conv_kernel_grad_acc(*gk, act_prev, g);
    return;
  }
  MapStack padded_adj(g.maps, g.height + t + b, g.width + l + r);
  conv_transposed_acc(padded_adj, g, k);
  for (int m = 0; m < dact_prev.maps; ++m) {
    for (int y = 0; y < dact_prev.height; ++y) {
      const double* src =
          &padded_adj.data[(static_cast<std::size_t>(m) * padded_adj.height + y + t) *
                               padded_adj.width + l];
      double* dst =
          &dact_prev.data[(static_cast<std::size_t>(m) * dact_prev.height + y) * dact_prev.width];
      for (int x = 0; x < dact_prev.width; ++x) dst[x] += src[x];
    }
  }
  if (gk != nullptr) conv_kernel_grad_acc(*gk, zero_pad(act_prev, t, b, l, r), g);
}

}  // namespace

LossValues eval_loss(const Unroll& roll, const TargetsView& targets) {
  require(targets.v_targets.size() == roll.steps.size() &&
              targets.p_targets.size() == roll.steps.size(),
          "eval_loss: targets are not aligned with the unroll");
  LossValues out;
  for (std::size_t t = 0; t < roll.steps.size(); ++t) {
    if (targets.v_targets[t] != nullptr) {
      out.visual += sse_loss(roll.steps[t].v_out.data, targets.v_targets[t]->data);
    }
    if (targets.p_targets[t] != nullptr) {
      const KlResult kl = kl_loss(*targets.p_targets[t], roll.steps[t].p_out);
      out.proprio += kl.value;
      out.kl_clamped = out.kl_clamped || kl.clamped;
    }
  }
  out.total = targets.w_visual * out.visual + targets.w_proprio * out.proprio;
  return out;
}

void backward(const NetworkConfig& cfg, const Parameters& p, const Unroll& roll,
              const TargetsView& targets, Parameters* pg, HiddenState* gu0) {
  const int S = static_cast<int>(roll.steps.size());
  require(static_cast<int>(targets.v_targets.size()) == S &&
              static_cast<int>(targets.p_targets.size()) == S,
          "backward: targets are not aligned with the unroll");
  if (S == 0) return;

  const double keep_vf = 1.0 - 1.0 / cfg.v_fast.tau;
  const double keep_vm = 1.0 - 1.0 / cfg.v_mid.tau;
  const double keep_vs = 1.0 - 1.0 / cfg.v_slow.tau;
  const double keep_pf = 1.0 - 1.0 / cfg.p_fast.tau;
  const double keep_pm = 1.0 - 1.0 / cfg.p_mid.tau;
  const double keep_ps = 1.0 - 1.0 / cfg.p_slow.tau;

  // lambda = dL/du at the record being processed; *_cur = dL/dact at that
  // record; *_prev accumulates dL/dact of the record below.
  HiddenState lam = HiddenState::zeros(cfg);
  HiddenState dact_cur = HiddenState::zeros(cfg);
  HiddenState dact_prev = HiddenState::zeros(cfg);
  HiddenState g = HiddenState::zeros(cfg);  // (1/tau) * lambda per layer

  MapStack dvout(1, cfg.image_height, cfg.image_width);
  MapStack dq_vo(1, cfg.image_height, cfg.image_width);
  MapStack dvin_pend(1, cfg.image_height, cfg.image_width);
  std::vector<double> dpout(cfg.code_len(), 0.0);
  std::vector<double> dq_po(cfg.code_len(), 0.0);
  std::vector<double> dpin_pend(cfg.code_len(), 0.0);
  MapStack lat_units(cfg.p_slow.neurons, 1, 1);

  for (int t = S - 1; t >= 0; --t) {
    const StepRecord& rec = roll.steps[t];
    const LayerState& prev = (t == 0) ? roll.initial : roll.steps[t - 1].state;

    // Output adjoints: loss gradient at this step plus the feedback path
    // from the next step's input, when that input was this step's output.
    dvout.fill(0.0);
    if (t + 1 < S && roll.steps[t + 1].v_fed_back) add_into(dvout.data, dvin_pend.data);
    if (targets.v_targets[t] != nullptr) {
      sse_grad_acc(dvout.data, rec.v_out.data, targets.v_targets[t]->data, targets.w_visual);
    }
    std::fill(dpout.begin(), dpout.end(), 0.0);
    if (t + 1 < S && roll.steps[t + 1].p_fed_back) add_into(dpout, dpin_pend);
    if (targets.p_targets[t] != nullptr) {
      kl_grad_acc(dpout, *targets.p_targets[t], rec.p_out, targets.w_proprio);
    }

    // Visual output layer: v_out = tanh(convT(act_vf, K) + b).
    if (!all_zero(dvout.data)) {
      for (std::size_t i = 0; i < dq_vo.data.size(); ++i) {
        const double o = rec.v_out.data[i];
        dq_vo.data[i] = (1.0 - o * o) * dvout.data[i];
      }
      if (pg != nullptr) {
        pg->vo_bias[0] += map_plane_sum(dq_vo, 0);
        conv_kernel_grad_acc(pg->vo_from_vf, dq_vo, rec.state.act.vf);
      }
      conv_valid_acc(dact_cur.vf, dq_vo, p.vo_from_vf);
    }

    // Proprioceptive output layer: p_out = softmax(W act_pf + b).
    if (!all_zero(dpout)) {
      softmax_groups_backward(rec.p_out, dpout, cfg.units_per_group, dq_po);
      if (pg != nullptr) {
        add_into(pg->po_bias, dq_po);
        outer_acc(pg->po_from_pf, dq_po, rec.state.act.pf);
      }
      affine_transposed_acc(dact_cur.pf, p.po_from_pf, dq_po);
    }

    // Proprioceptive lambdas at this record.
    lam_combine(lam.pf, dact_cur.pf, rec.state.act.pf, keep_pf);
    lam_combine(lam.pm, dact_cur.pm, rec.state.act.pm, keep_pm);
    lam_combine(lam.ps, dact_cur.ps, rec.state.act.ps, keep_ps);

    // Slow proprio drive; its lateral term reads the CURRENT slow visual
    // activations, so this must run before the visual lambdas are formed.
    scale_into(g.ps, lam.ps, 1.0 / cfg.p_slow.tau);
    affine_transposed_acc(dact_prev.pm, p.ps_from_pm, g.ps);
    affine_transposed_acc(dact_prev.ps, p.ps_rec, g.ps);
    {
      const MapStack g_units = wrap_units(g.ps);
      conv_transposed_acc(dact_cur.vs, g_units, p.ps_from_vs);
      if (pg != nullptr) {
        add_into(pg->ps_bias, g.ps);
        outer_acc(pg->ps_from_pm, g.ps, prev.act.pm);
        outer_acc(pg->ps_rec, g.ps, prev.act.ps);
        conv_kernel_grad_acc(pg->ps_from_vs, rec.state.act.vs, g_units);
      }
    }

    // Mid proprio drive.
    scale_into(g.pm, lam.pm, 1.0 / cfg.p_mid.tau);
    affine_transposed_acc(dact_prev.pf, p.pm_from_pf, g.pm);
    affine_transposed_acc(dact_prev.ps, p.pm_from_ps, g.pm);
    affine_transposed_acc(dact_prev.pm, p.pm_rec, g.pm);
    if (pg != nullptr) {
      add_into(pg->pm_bias, g.pm);
      outer_acc(pg->pm_from_pf, g.pm, prev.act.pf);
      outer_acc(pg->pm_from_ps, g.pm, prev.act.ps);
      outer_acc(pg->pm_rec, g.pm, prev.act.pm);
    }

    // Fast proprio drive (carries the proprio input connection).
    scale_into(g.pf, lam.pf, 1.0 / cfg.p_fast.tau);
    if (rec.p_fed_back) {
      std::fill(dpin_pend.begin(), dpin_pend.end(), 0.0);
      affine_transposed_acc(dpin_pend, p.pf_from_input, g.pf);
    }
    affine_transposed_acc(dact_prev.pm, p.pf_from_pm, g.pf);
    affine_transposed_acc(dact_prev.pf, p.pf_rec, g.pf);
    if (pg != nullptr) {
      add_into(pg->pf_bias, g.pf);
      outer_acc(pg->pf_from_input, g.pf, rec.p_in);
      outer_acc(pg->pf_from_pm, g.pf, prev.act.pm);
      outer_acc(pg->pf_rec, g.pf, prev.act.pf);
    }

    // Visual lambdas (dact_cur.vs is complete only after the slow proprio
    // drive above contributed its lateral adjoint).
    lam_combine(lam.vf.data, dact_cur.vf.data, rec.state.act.vf.data, keep_vf);
    lam_combine(lam.vm.data, dact_cur.vm.data, rec.state.act.vm.data, keep_vm);
    lam_combine(lam.vs.data, dact_cur.vs.data, rec.state.act.vs.data, keep_vs);

    // Slow visual drive.
    scale_into(g.vs.data, lam.vs.data, 1.0 / cfg.v_slow.tau);
    conv_transposed_acc(dact_prev.vm, g.vs, p.vs_from_vm);
    recurrent_backward(dact_prev.vs, pg != nullptr ? &pg->vs_rec : nullptr, g.vs, prev.act.vs,
                       p.vs_rec, cfg.v_slow.recurrent);
    lat_units.fill(0.0);
    conv_valid_acc(lat_units, g.vs, p.vs_from_ps);
    add_into(dact_prev.ps, lat_units.data);
    if (pg != nullptr) {
      for (int m = 0; m < g.vs.maps; ++m) pg->vs_bias[m] += map_plane_sum(g.vs, m);
      conv_kernel_grad_acc(pg->vs_from_vm, prev.act.vm, g.vs);
      conv_kernel_grad_acc(pg->vs_from_ps, g.vs, wrap_units(prev.act.ps));
    }

    // Mid visual drive.
    scale_into(g.vm.data, lam.vm.data, 1.0 / cfg.v_mid.tau);
    conv_transposed_acc(dact_prev.vf, g.vm, p.vm_from_vf);
    conv_valid_acc(dact_prev.vs, g.vm, p.vm_from_vs);
    recurrent_backward(dact_prev.vm, pg != nullptr ? &pg->vm_rec : nullptr, g.vm, prev.act.vm,
                       p.vm_rec, cfg.v_mid.recurrent);
    if (pg != nullptr) {
      for (int m = 0; m < g.vm.maps; ++m) pg->vm_bias[m] += map_plane_sum(g.vm, m);
      conv_kernel_grad_acc(pg->vm_from_vf, prev.act.vf, g.vm);
      conv_kernel_grad_acc(pg->vm_from_vs, g.vm, prev.act.vs);
    }

    // Fast visual drive (carries the visual input connection).
    scale_into(g.vf.data, lam.vf.data, 1.0 / cfg.v_fast.tau);
    if (rec.v_fed_back) {
      dvin_pend.fill(0.0);
      conv_transposed_acc(dvin_pend, g.vf, p.vf_from_input);
    }
    conv_valid_acc(dact_prev.vm, g.vf, p.vf_from_vm);
    recurrent_backward(dact_prev.vf, pg != nullptr ? &pg->vf_rec : nullptr, g.vf, prev.act.vf,
                       p.vf_rec, cfg.v_fast.recurrent);
    if (pg != nullptr) {
      for (int m = 0; m < g.vf.maps; ++m) pg->vf_bias[m] += map_plane_sum(g.vf, m);
      conv_kernel_grad_acc(pg->vf_from_input, rec.v_in, g.vf);
      conv_kernel_grad_acc(pg->vf_from_vm, g.vf, prev.act.vm);
    }

    std::swap(dact_cur, dact_prev);
    dact_prev.set_zero();
  }

  // Close the recursion at the initial state: u^1 depends on u^0 through the
  // leak term and on act^0 = scaled_tanh(u^0) through the drives.
  if (gu0 != nullptr) {
    auto fold = [](std::span<double> out, std::span<const double> dact,
                   std::span<const double> act0, std::span<const double> lam1, double keep) {
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += scaled_tanh_prime_from_act(act0[i]) * dact[i] + keep * lam1[i];
      }
    };
    fold(gu0->vf.data, dact_cur.vf.data, roll.initial.act.vf.data, lam.vf.data, keep_vf);
    fold(gu0->vm.data, dact_cur.vm.data, roll.initial.act.vm.data, lam.vm.data, keep_vm);
    fold(gu0->vs.data, dact_cur.vs.data, roll.initial.act.vs.data, lam.vs.data, keep_vs);
    fold(gu0->pf, dact_cur.pf, roll.initial.act.pf, lam.pf, keep_pf);
    fold(gu0->pm, dact_cur.pm, roll.initial.act.pm, lam.pm, keep_pm);
    fold(gu0->ps, dact_cur.ps, roll.initial.act.ps, lam.ps, keep_ps);
  }
}

namespace {

// Input plan and targets for closed-loop one-step-lookahead training.
void make_training_plan(const SequencePair& seq, const TargetsView*& tv_out,
                        std::vector<StepInput>& inputs, TargetsView& tv, double w_visual,
                        double w_proprio) {
  const int T = seq.length();
  const int S = T - 1;
  inputs.assign(S, StepInput{});
  inputs[0] = {&seq.frames[0], &seq.codes[0]};
  tv.v_targets.assign(S, nullptr);
  tv.p_targets.assign(S, nullptr);
  for (int t = 0; t < S; ++t) {
    tv.v_targets[t] = &seq.frames[t + 1];
    tv.p_targets[t] = &seq.codes[t + 1];
  }
  tv.w_visual = w_visual;
  tv.w_proprio = w_proprio;
  tv_out = &tv;
}

}  // namespace

SequenceLoss sequence_loss(const NetworkConfig& cfg, const Parameters& p,
                           const SequencePair& seq, int seq_index, double w_visual,
                           double w_proprio, Unroll* keep) {
  require(seq.length() >= 2, "sequence_loss: sequence must have at least two observations");
  require(seq_index >= 0 && seq_index < static_cast<int>(p.initial_states.size()),
          "sequence_loss: no initial state for sequence index " + std::to_string(seq_index));
  std::vector<StepInput> inputs;
  TargetsView tv;
  const TargetsView* tvp = nullptr;
  make_training_plan(seq, tvp, inputs, tv, w_visual, w_proprio);

  Unroll local;
  Unroll& roll = (keep != nullptr) ? *keep : local;
  rollout(cfg, p, p.initial_states[seq_index], inputs, roll);
  const LossValues lv = eval_loss(roll, *tvp);
  return {lv.total, lv.visual, lv.proprio};
}

FullGradients full_gradients(const NetworkConfig& cfg, const Parameters& p,
                             std::span<const SequencePair> data, double w_visual,
                             double w_proprio) {
  require(!data.empty(), "full_gradients: dataset is empty");
  require(data.size() == p.initial_states.size(),
          "full_gradients: one initial state per sequence required");
  FullGradients out;
  out.grads = zero_params(cfg, static_cast<int>(data.size()));
  out.loss.per_sequence.assign(data.size(), 0.0);

  Unroll roll;
  std::vector<StepInput> inputs;
  TargetsView tv;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const TargetsView* tvp = nullptr;
    make_training_plan(data[s], tvp, inputs, tv, w_visual, w_proprio);
    rollout(cfg, p, p.initial_states[s], inputs, roll);
    const LossValues lv = eval_loss(roll, *tvp);
    out.loss.visual += lv.visual;
    out.loss.proprio += lv.proprio;
    out.loss.per_sequence[s] = lv.total;
    out.loss.kl_clamped = out.loss.kl_clamped || lv.kl_clamped;
    backward(cfg, p, roll, *tvp, &out.grads, &out.grads.initial_states[s]);
  }
  out.loss.total = w_visual * out.loss.visual + w_proprio * out.loss.proprio;
  return out;
}

AdamState AdamState::like(const std::vector<TensorRef>& refs) {
  AdamState st;
  st.m.reserve(refs.size());
  st.v.reserve(refs.size());
  for (const auto& r : refs) {
    st.m.emplace_back(r.size, 0.0);
    st.v.emplace_back(r.size, 0.0);
  }
  return st;
}

void adam_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps) {
  require(params.size() == grads.size() && params.size() == state.m.size(),
          "adam_step: tensor lists disagree");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].size == grads[i].size, "adam_step: shape mismatch at " + params[i].name);
    double* w = params[i].data;
    const double* gr = grads[i].data;
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    for (std::size_t j = 0; j < params[i].size; ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * gr[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * gr[j] * gr[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

namespace {

// Copies every shared (non-initial-state) tensor gradient of src into dst.
void add_shared_grads(Parameters& dst, Parameters& src, const NetworkConfig& cfg) {
  auto dst_refs = tensor_refs(dst, cfg);
  auto src_refs = tensor_refs(src, cfg);
  // src carries no initial states; its refs are exactly the shared prefix.
  for (std::size_t i = 0; i < src_refs.size(); ++i) {
    add_into({dst_refs[i].data, dst_refs[i].size}, {src_refs[i].data, src_refs[i].size});
  }
}

void zero_refs(Parameters& p, const NetworkConfig& cfg) {
  for (auto& r : tensor_refs(p, cfg)) std::fill_n(r.data, r.size, 0.0);
}

struct SeqWork {
  std::vector<StepInput> inputs;
  TargetsView targets;
  Unroll roll;
  Parameters grads;       // shared tensors only (no initial states)
  HiddenState u0_grad;
  LossValues loss;
  bool numerical_fault = false;
};

}  // namespace

TrainResult train(const NetworkConfig& cfg, const TrainConfig& tc,
                  std::span<const SequencePair> data, const TrainSinks& sinks) {
  cfg.validate();
  require(!data.empty(), "train: dataset is empty");
  require(tc.learning_rate > 0.0, "train: learning rate must be positive");
  require(tc.beta1 >= 0.0 && tc.beta1 < 1.0 && tc.beta2 >= 0.0 && tc.beta2 < 1.0,
          "train: Adam betas must lie in [0, 1)");
  require(tc.epochs >= 0, "train: epochs must be non-negative");
  for (const auto& s : data) {
    require(s.length() >= 2, "train: every sequence needs at least two observations");
    require(s.frames[0].height == cfg.image_height && s.frames[0].width == cfg.image_width,
            "train: frame extents do not match the network config");
    require(static_cast<int>(s.codes[0].size()) == cfg.code_len(),
            "train: code length does not match the network config");
  }

  const int n = static_cast<int>(data.size());
  TrainResult result;
  result.params = init_params(cfg, derive_seed(tc.seed, "params"), n);
  Parameters last_good = result.params;

  std::vector<SeqWork> work(n);
  for (int s = 0; s < n; ++s) {
    const TargetsView* tvp = nullptr;
    make_training_plan(data[s], tvp, work[s].inputs, work[s].targets, tc.w_visual, tc.w_proprio);
    work[s].grads = zero_params(cfg, 0);
    work[s].u0_grad = HiddenState::zeros(cfg);
  }

  Parameters grads = zero_params(cfg, n);
  AdamState adam = AdamState::like(tensor_refs(result.params, cfg));

  int threads = tc.threads;
  if (threads <= 0) {
    threads = std::min<int>(n, std::max(1u, std::thread::hardware_concurrency()));
  }
  threads = std::min(threads, n);

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&t0] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  // Evaluates (and optionally differentiates) every sequence at the current
  // parameters. Each sequence is independent; reduction stays in index order.
  auto eval_all = [&](bool with_grads) -> LossBreakdown {
    std::vector<std::exception_ptr> errors(threads);
    auto run_slice = [&](int worker) {
      try {
        for (int s = worker; s < n; s += threads) {
          SeqWork& w = work[s];
          w.numerical_fault = false;
          try {
            rollout(cfg, result.params, result.params.initial_states[s], w.inputs, w.roll);
            w.loss = eval_loss(w.roll, w.targets);
            if (with_grads) {
              zero_refs(w.grads, cfg);
              w.u0_grad.set_zero();
              backward(cfg, result.params, w.roll, w.targets, &w.grads, &w.u0_grad);
            }
          } catch (const NumericalError&) {
            w.numerical_fault = true;
          }
        }
      } catch (...) {
        errors[worker] = std::current_exception();
      }
    };
    if (threads == 1) {
      run_slice(0);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(threads);
      for (int w = 0; w < threads; ++w) pool.emplace_back(run_slice, w);
      for (auto& th : pool) th.join();
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    LossBreakdown lb;
    lb.per_sequence.assign(n, 0.0);
    bool fault = false;
    for (int s = 0; s < n; ++s) {
      fault = fault || work[s].numerical_fault;
      lb.visual += work[s].loss.visual;
      lb.proprio += work[s].loss.proprio;
      lb.per_sequence[s] = work[s].loss.total;
      lb.kl_clamped = lb.kl_clamped || work[s].loss.kl_clamped;
    }
    lb.total = tc.w_visual * lb.visual + tc.w_proprio * lb.proprio;
    if (fault) lb.total = std::numeric_limits<double>::quiet_NaN();
    return lb;
  };

  auto record_epoch = [&](int epoch, const LossBreakdown& lb) {
    result.history.push_back({epoch, lb.total, lb.visual, lb.proprio, elapsed()});
    if (sinks.on_epoch) sinks.on_epoch(result.history.back());
  };

  for (int e = 0; e < tc.epochs; ++e) {
    const LossBreakdown lb = eval_all(true);
    if (!std::isfinite(lb.total)) {
      result.diverged = true;
      result.params = last_good;
      if (sinks.on_checkpoint) {
        sinks.on_checkpoint(std::max(result.last_good_epoch, 0), result.params);
      }
      return result;
    }
    record_epoch(e, lb);
    last_good = result.params;
    result.last_good_epoch = e;

    zero_refs(grads, cfg);
    for (int s = 0; s < n; ++s) {
      add_shared_grads(grads, work[s].grads, cfg);
      grads.initial_states[s] = work[s].u0_grad;
    }
    adam_step(tensor_refs(result.params, cfg), tensor_refs(grads, cfg), adam, tc.learning_rate,
              tc.beta1, tc.beta2, tc.adam_eps);

    if (tc.checkpoint_interval > 0 && (e + 1) % tc.checkpoint_interval == 0 &&
        e + 1 < tc.epochs && sinks.on_checkpoint) {
      sinks.on_checkpoint(e + 1, result.params);
    }
  }

  const LossBreakdown final_lb = eval_all(false);
  if (!std::isfinite(final_lb.total)) {
    result.diverged = true;
    result.params = last_good;
    if (sinks.on_checkpoint) {
      sinks.on_checkpoint(std::max(result.last_good_epoch, 0), result.params);
    }
    return result;
  }
  record_epoch(tc.epochs, final_lb);
  result.last_good_epoch = tc.epochs;
  if (sinks.on_checkpoint) sinks.on_checkpoint(tc.epochs, result.params);
  return result;
}

Parameters finite_diff_gradients(const NetworkConfig& cfg, const Parameters& p,
                                 std::span<const SequencePair> data, double epsilon,
                                 double w_visual, double w_proprio) {
  require(epsilon > 0.0, "finite_diff_gradients: epsilon must be positive");
  Parameters work = p;
  Parameters grads = zero_params(cfg, static_cast<int>(p.initial_states.size()));
  auto wrefs = tensor_refs(work, cfg);
  auto grefs = tensor_refs(grads, cfg);

  auto total_loss = [&]() {
    double acc = 0.0;
    for (std::size_t s = 0; s < data.size(); ++s) {
      acc += sequence_loss(cfg, work, data[s], static_cast<int>(s), w_visual, w_proprio).total;
    }
    return acc;
  };

  for (std::size_t i = 0; i < wrefs.size(); ++i) {
    for (std::size_t j = 0; j < wrefs[i].size; ++j) {
      const double saved = wrefs[i].data[j];
      wrefs[i].data[j] = saved + epsilon;
      const double up = total_loss();
      wrefs[i].data[j] = saved - epsilon;
      const double down = total_loss();
      wrefs[i].data[j] = saved;
      grefs[i].data[j] = (up - down) / (2.0 * epsilon);
    }
  }
  return grads;
}

GradCheckReport compare_gradients(Parameters& analytic, Parameters& fd,
                                  const NetworkConfig& cfg, double tolerance) {
  auto arefs = tensor_refs(analytic, cfg);
  auto frefs = tensor_refs(fd, cfg);
  require(arefs.size() == frefs.size(), "compare_gradients: tensor lists disagree");
  GradCheckReport report;
  for (std::size_t i = 0; i < arefs.size(); ++i) {
    double diff2 = 0.0, ref2 = 0.0;
    for (std::size_t j = 0; j < arefs[i].size; ++j) {
      const double d = arefs[i].data[j] - frefs[i].data[j];
      diff2 += d * d;
      ref2 += frefs[i].data[j] * frefs[i].data[j];
    }
    const double rel = std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12);
    report.tensors.push_back({arefs[i].name, rel});
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

GradCheckProblem make_grad_check_problem(const NetworkConfig& cfg, std::uint64_t seed,
                                         int sequences, int length) {
  require(sequences >= 1 && length >= 2, "make_grad_check_problem: bad problem size");
  GradCheckProblem prob;
  prob.params = init_params(cfg, derive_seed(seed, "params"), sequences);
  Rng rng(derive_seed(seed, "problem"));

  // Non-trivial biases and initial states so their gradients are exercised
  // away from zero.
  auto perturb = [&rng](std::vector<double>& v, double bound) {
    for (double& x : v) x = rng.next_uniform(-bound, bound);
  };
  perturb(prob.params.vf_bias, 0.3);
  perturb(prob.params.vm_bias, 0.3);
  perturb(prob.params.vs_bias, 0.3);
  perturb(prob.params.vo_bias, 0.3);
  perturb(prob.params.pf_bias, 0.3);
  perturb(prob.params.pm_bias, 0.3);
  perturb(prob.params.ps_bias, 0.3);
  perturb(prob.params.po_bias, 0.3);
  for (auto& st : prob.params.initial_states) {
    for (auto& r : state_refs(st)) {
      for (std::size_t j = 0; j < r.size; ++j) r.data[j] = rng.next_uniform(-0.8, 0.8);
    }
  }

  for (int s = 0; s < sequences; ++s) {
    SequencePair seq;
    seq.id = s;
    for (int t = 0; t < length; ++t) {
      MapStack frame(1, cfg.image_height, cfg.image_width);
      for (double& x : frame.data) x = rng.next_uniform(-1.0, 1.0);
      seq.frames.push_back(std::move(frame));
      std::vector<double> u(cfg.code_len(), 0.0);
      for (double& x : u) x = rng.next_uniform(-1.0, 1.0);
      seq.codes.push_back(softmax_groups(u, cfg.units_per_group));
      seq.joints.push_back(std::vector<double>(cfg.joint_groups, 0.0));
    }
    prob.data.push_back(std::move(seq));
  }
  return prob;
}

GradCheckReport grad_check(const NetworkConfig& cfg, std::uint64_t seed, double epsilon,
                           double tolerance) {
  GradCheckProblem prob = make_grad_check_problem(cfg, seed);
  FullGradients analytic = full_gradients(cfg, prob.params, prob.data);
  Parameters fd = finite_diff_gradients(cfg, prob.params, prob.data, epsilon);
  return compare_gradients(analytic.grads, fd, cfg, tolerance);
}

}  // namespace pvmdnn
