#include "pvmdnn/ers.hpp"

#include <cmath>
#include <cstdio>

#include "pvmdnn/trainer.hpp"

namespace pvmdnn {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

double modality_loss(const LossValues& lv, Modality m) {
  switch (m) {
    case Modality::visual:
      return lv.visual;
    case Modality::proprioceptive:
      return lv.proprio;
    case Modality::both:
      return lv.visual + lv.proprio;
  }
  return lv.total;
}

double max_abs_diff(const HiddenState& a, const HiddenState& b) {
  double mx = 0.0;
  auto scan = [&mx](std::span<const double> x, std::span<const double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) mx = std::max(mx, std::abs(x[i] - y[i]));
  };
  scan(a.vf.data, b.vf.data);
  scan(a.vm.data, b.vm.data);
  scan(a.vs.data, b.vs.data);
  scan(a.pf, b.pf);
  scan(a.pm, b.pm);
  scan(a.ps, b.ps);
  return mx;
}

// Entrainment baseline: the observed modality is driven by the external
// stream at every step, the other modality is closed-loop, and no state
// optimization happens. Identical, step for step, to generate_open_loop.
ErsRun run_entrainment(const NetworkConfig& cfg, const Parameters& p, const SequencePair& obs,
                       const ErsConfig& ec, const HiddenState& u0) {
  const int T = obs.length();
  const bool use_v = ec.modality == Modality::visual || ec.modality == Modality::both;
  const bool use_p = ec.modality == Modality::proprioceptive || ec.modality == Modality::both;

  std::vector<StepInput> inputs(static_cast<std::size_t>(T - 1));
  inputs[0] = {&obs.frames[0], &obs.codes[0]};
  for (int t = 1; t < T - 1; ++t) {
    if (use_v) inputs[t].v = &obs.frames[t];
    if (use_p) inputs[t].p = &obs.codes[t];
  }
  Unroll roll;
  rollout(cfg, p, u0, inputs, roll);

  ErsRun run;
  run.v_pred.push_back(obs.frames[0]);
  run.p_pred.push_back(obs.codes[0]);
  run.inferred.push_back(u0);
  run.trace.push_back({0, 0, 0.0, 0.0, 0.0, 0.0, 0.0});
  for (int t = 1; t < T; ++t) {
    const StepRecord& rec = roll.steps[t - 1];
    const double ev = sse_loss(rec.v_out.data, obs.frames[t].data);
    const double ep = kl_loss(obs.codes[t], rec.p_out).value;
    const double sel = (ec.modality == Modality::visual)          ? ev
                       : (ec.modality == Modality::proprioceptive) ? ep
                                                                    : ev + ep;
    run.v_pred.push_back(rec.v_out);
    run.p_pred.push_back(rec.p_out);
    run.inferred.push_back(rec.state.u);
    run.trace.push_back({t, 0, sel, sel, ev, ep, 0.0});
  }
  return run;
}

}  // namespace

ErsRun run_ers(const NetworkConfig& cfg, const Parameters& p, const SequencePair& obs,
               const ErsConfig& ec, const HiddenState* start) {
  cfg.validate();
  require(ec.window >= 1, "run_ers: window must be at least 1");
  require(ec.iterations >= 0, "run_ers: iterations must be non-negative");
  const int T = obs.length();
  require(T >= 2, "run_ers: the stream needs at least two observations");
  require(obs.frames[0].height == cfg.image_height && obs.frames[0].width == cfg.image_width,
          "run_ers: frame extents do not match the network config");
  require(static_cast<int>(obs.codes[0].size()) == cfg.code_len(),
          "run_ers: code length does not match the network config");

  const HiddenState u_init = (start != nullptr) ? *start : HiddenState::zeros(cfg);
  if (ec.iterations == 0) return run_entrainment(cfg, p, obs, ec, u_init);

  ErsRun run;
  run.v_pred.push_back(obs.frames[0]);
  run.p_pred.push_back(obs.codes[0]);
  run.inferred.push_back(u_init);
  run.trace.push_back({0, 0, 0.0, 0.0, 0.0, 0.0, 0.0});

  HiddenState u_start = u_init;
  int s0 = 0;  // window-start step index

  // Cached model predictions; pred at the window-start step feeds the first
  // window step after a slide. Refreshed from the final re-forward each step.
  std::vector<MapStack> pred_v(static_cast<std::size_t>(T));
  std::vector<std::vector<double>> pred_p(static_cast<std::size_t>(T));

  const bool want_v = ec.modality == Modality::visual || ec.modality == Modality::both;
  const bool want_p = ec.modality == Modality::proprioceptive || ec.modality == Modality::both;

  auto adam_refs = [](HiddenState& s) { return state_refs(s); };
  AdamState adam = AdamState::like(adam_refs(u_start));
  HiddenState grad = HiddenState::zeros(cfg);
  Unroll roll;
  std::vector<StepInput> inputs;
  TargetsView tv, tv_full;

  for (int t = 1; t < T; ++t) {
    const int len = t - s0;
    inputs.assign(static_cast<std::size_t>(len), StepInput{});
    // After a slide the first window step consumes the cached prediction
    // from the step before the window, verbatim (it is self-feedback).
    inputs[0] = (s0 == 0) ? StepInput{&obs.frames[0], &obs.codes[0], false}
                          : StepInput{&pred_v[s0], &pred_p[s0], true};
    tv.v_targets.assign(len, nullptr);
    tv.p_targets.assign(len, nullptr);
    tv_full.v_targets.assign(len, nullptr);
    tv_full.p_targets.assign(len, nullptr);
    for (int r = 0; r < len; ++r) {
      if (want_v) tv.v_targets[r] = &obs.frames[s0 + 1 + r];
      if (want_p) tv.p_targets[r] = &obs.codes[s0 + 1 + r];
      tv_full.v_targets[r] = &obs.frames[s0 + 1 + r];
      tv_full.p_targets[r] = &obs.codes[s0 + 1 + r];
    }

    const HiddenState before = u_start;
    double loss_round0 = 0.0;
    for (int round = 0; round < ec.iterations; ++round) {
      rollout(cfg, p, u_start, inputs, roll);
      const LossValues lv = eval_loss(roll, tv);
      const double sel = modality_loss(lv, ec.modality);
      if (!std::isfinite(sel)) {
        throw NumericalError("run_ers: non-finite window loss at stream step " +
                             std::to_string(t));
      }
      if (round == 0) loss_round0 = sel;
      grad.set_zero();
      backward(cfg, p, roll, tv, nullptr, &grad);
      adam_step(adam_refs(u_start), adam_refs(grad), adam, ec.learning_rate, ec.beta1, ec.beta2,
                ec.adam_eps);
    }

    // Final re-forward with the optimized start state: refreshes the cached
    // self-feedback inputs and yields this step's prediction and errors.
    rollout(cfg, p, u_start, inputs, roll);
    const LossValues lv_full = eval_loss(roll, tv_full);
    const double loss_final = modality_loss(
        {0.0, lv_full.visual, lv_full.proprio, lv_full.kl_clamped}, ec.modality);
    for (int r = 0; r < len; ++r) {
      pred_v[s0 + 1 + r] = roll.steps[r].v_out;
      pred_p[s0 + 1 + r] = roll.steps[r].p_out;
    }

    run.v_pred.push_back(roll.steps[len - 1].v_out);
    run.p_pred.push_back(roll.steps[len - 1].p_out);
    run.inferred.push_back(u_start);
    run.trace.push_back({t, len, loss_round0, loss_final, lv_full.visual, lv_full.proprio,
                         max_abs_diff(before, u_start)});
    if (loss_final > loss_round0) run.loss_increase_steps += 1;

    // Slide once the window is full: the next start state is one forward
    // step from the optimized one (the final re-forward's first record).
    const int s0_next = std::max(0, (t + 1) - ec.window);
    if (s0_next > s0) {
      u_start = roll.steps[0].state.u;
      s0 = s0_next;
      adam = AdamState::like(adam_refs(u_start));  // fresh moments per window target
    }
  }
  return run;
}

void write_ers_trace(const std::string& csv_path, const std::string& sidecar_path,
                     const ErsRun& run) {
  std::FILE* side = std::fopen(sidecar_path.c_str(), "wb");
  if (side == nullptr) throw IoError("cannot open '" + sidecar_path + "' for writing");
  std::FILE* csv = std::fopen(csv_path.c_str(), "w");
  if (csv == nullptr) {
    std::fclose(side);
    throw IoError("cannot open '" + csv_path + "' for writing");
  }
  std::fprintf(csv, "t,window_len,loss_round0,loss_final,E_V,E_P,state_offset\n");

  long offset = 0;
  std::vector<float> buf;
  for (std::size_t i = 0; i < run.trace.size(); ++i) {
    const auto& tr = run.trace[i];
    std::fprintf(csv, "%d,%d,%.12g,%.12g,%.12g,%.12g,%ld\n", tr.t, tr.window_len,
                 tr.loss_round0, tr.loss_final, tr.e_v, tr.e_p, offset);

    buf.clear();
    HiddenState& st = const_cast<HiddenState&>(run.inferred[i]);
    for (const auto& r : state_refs(st)) {
      for (std::size_t j = 0; j < r.size; ++j) buf.push_back(static_cast<float>(r.data[j]));
    }
    if (std::fwrite(buf.data(), sizeof(float), buf.size(), side) != buf.size()) {
      std::fclose(csv);
      std::fclose(side);
      throw IoError("write to '" + sidecar_path + "' failed");
    }
    offset += static_cast<long>(buf.size() * sizeof(float));
  }
  std::fclose(csv);
  if (std::fclose(side) != 0) throw IoError("write to '" + sidecar_path + "' failed");
}

}  // namespace pvmdnn
