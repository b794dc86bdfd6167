#include "pvmdnn/network.hpp"

#include <cmath>
#include <string>

#include "pvmdnn/rng.hpp"

namespace pvmdnn {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

// drive += shape-preserving recurrent conv of `act`.
void recurrent_acc(MapStack& drive, const MapStack& act, const Kernel4& k, const ConvSpec& spec) {
  int t, b, l, r;
  same_padding(spec, t, b, l, r);
  if (t == 0 && b == 0 && l == 0 && r == 0) {
    conv_valid_acc(drive, act, k);
  } else {
    conv_valid_acc(drive, zero_pad(act, t, b, l, r), k);
  }
}

void leak_update(std::span<double> u_next, std::span<const double> u_prev,
                 std::span<const double> drive, std::span<const double> bias_per_unit,
                 double tau) {
  const double keep = 1.0 - 1.0 / tau;
  const double gain = 1.0 / tau;
  for (std::size_t i = 0; i < u_next.size(); ++i) {
    u_next[i] = keep * u_prev[i] + gain * (drive[i] + bias_per_unit[i]);
  }
}

// Conv-layer variant: one shared bias per feature map.
void leak_update_maps(MapStack& u_next, const MapStack& u_prev, const MapStack& drive,
                      std::span<const double> bias_per_map, double tau) {
  const double keep = 1.0 - 1.0 / tau;
  const double gain = 1.0 / tau;
  const int plane = u_next.plane();
  for (int m = 0; m < u_next.maps; ++m) {
    const double b = bias_per_map[m];
    double* un = &u_next.data[static_cast<std::size_t>(m) * plane];
    const double* up = &u_prev.data[static_cast<std::size_t>(m) * plane];
    const double* d = &drive.data[static_cast<std::size_t>(m) * plane];
    for (int j = 0; j < plane; ++j) un[j] = keep * up[j] + gain * (d[j] + b);
  }
}

void check_finite(std::span<const double> v, const char* layer, int step) {
  double acc = 0.0;
  for (double x : v) acc += x;
  if (!std::isfinite(acc)) {
    throw NumericalError(std::string("non-finite internal state in layer ") + layer +
                         " at step " + std::to_string(step));
  }
}

void fill_uniform(Rng& rng, std::span<double> v, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& x : v) x = rng.next_uniform(-bound, bound);
}

MapStack wrap_units(std::span<const double> v) {
  MapStack m(static_cast<int>(v.size()), 1, 1);
  std::copy(v.begin(), v.end(), m.data.begin());
  return m;
}

}  // namespace

HiddenState HiddenState::zeros(const NetworkConfig& cfg) {
  HiddenState s;
  s.vf = MapStack(cfg.v_fast.maps, cfg.v_fast.height, cfg.v_fast.width);
  s.vm = MapStack(cfg.v_mid.maps, cfg.v_mid.height, cfg.v_mid.width);
  s.vs = MapStack(cfg.v_slow.maps, cfg.v_slow.height, cfg.v_slow.width);
  s.pf.assign(cfg.p_fast.neurons, 0.0);
  s.pm.assign(cfg.p_mid.neurons, 0.0);
  s.ps.assign(cfg.p_slow.neurons, 0.0);
  return s;
}

void HiddenState::set_zero() {
  vf.fill(0.0);
  vm.fill(0.0);
  vs.fill(0.0);
  std::fill(pf.begin(), pf.end(), 0.0);
  std::fill(pm.begin(), pm.end(), 0.0);
  std::fill(ps.begin(), ps.end(), 0.0);
}

std::size_t HiddenState::total_size() const {
  return vf.size() + vm.size() + vs.size() + pf.size() + pm.size() + ps.size();
}

Parameters zero_params(const NetworkConfig& cfg, int num_sequences) {
  cfg.validate();
  Parameters p;
  const auto& f = cfg.v_fast;
  const auto& m = cfg.v_mid;
  const auto& s = cfg.v_slow;
  const int ps_n = cfg.p_slow.neurons;

  p.vf_from_input = Kernel4(f.maps, 1, f.bottom_up.kh, f.bottom_up.kw, f.bottom_up.stride_y,
                            f.bottom_up.stride_x);
  p.vf_from_vm = Kernel4(m.maps, f.maps, f.top_down->kh, f.top_down->kw, f.top_down->stride_y,
                         f.top_down->stride_x);
  p.vf_rec = Kernel4(f.maps, f.maps, f.recurrent.kh, f.recurrent.kw, 1, 1);
  p.vf_bias.assign(f.maps, 0.0);

  p.vm_from_vf = Kernel4(m.maps, f.maps, m.bottom_up.kh, m.bottom_up.kw, m.bottom_up.stride_y,
                         m.bottom_up.stride_x);
  p.vm_from_vs = Kernel4(s.maps, m.maps, m.top_down->kh, m.top_down->kw, m.top_down->stride_y,
                         m.top_down->stride_x);
  p.vm_rec = Kernel4(m.maps, m.maps, m.recurrent.kh, m.recurrent.kw, 1, 1);
  p.vm_bias.assign(m.maps, 0.0);

  p.vs_from_vm = Kernel4(s.maps, m.maps, s.bottom_up.kh, s.bottom_up.kw, s.bottom_up.stride_y,
                         s.bottom_up.stride_x);
  p.vs_rec = Kernel4(s.maps, s.maps, s.recurrent.kh, s.recurrent.kw, 1, 1);
  p.vs_from_ps = Kernel4(ps_n, s.maps, cfg.lateral.kh, cfg.lateral.kw, 1, 1);
  p.vs_bias.assign(s.maps, 0.0);

  p.vo_from_vf = Kernel4(f.maps, 1, cfg.output_kernel.kh, cfg.output_kernel.kw,
                         cfg.output_kernel.stride_y, cfg.output_kernel.stride_x);
  p.vo_bias.assign(1, 0.0);

  const int code = cfg.code_len();
  const int pf_n = cfg.p_fast.neurons;
  const int pm_n = cfg.p_mid.neurons;
  p.pf_from_input = DenseWeights(pf_n, code);
  p.pf_from_pm = DenseWeights(pf_n, pm_n);
  p.pf_rec = DenseWeights(pf_n, pf_n);
  p.pf_bias.assign(pf_n, 0.0);
  p.pm_from_pf = DenseWeights(pm_n, pf_n);
  p.pm_from_ps = DenseWeights(pm_n, ps_n);
  p.pm_rec = DenseWeights(pm_n, pm_n);
  p.pm_bias.assign(pm_n, 0.0);
  p.ps_from_pm = DenseWeights(ps_n, pm_n);
  p.ps_rec = DenseWeights(ps_n, ps_n);
  p.ps_from_vs = Kernel4(ps_n, s.maps, cfg.lateral.kh, cfg.lateral.kw, 1, 1);
  p.ps_bias.assign(ps_n, 0.0);
  p.po_from_pf = DenseWeights(code, pf_n);
  p.po_bias.assign(code, 0.0);

  p.initial_states.assign(num_sequences, HiddenState::zeros(cfg));
  return p;
}

Parameters init_params(const NetworkConfig& cfg, std::uint64_t seed, int num_sequences) {
  Parameters p = zero_params(cfg, num_sequences);
  Rng rng(seed);

  const auto& f = cfg.v_fast;
  const auto& m = cfg.v_mid;
  const auto& s = cfg.v_slow;
  const int ps_n = cfg.p_slow.neurons;

  fill_uniform(rng, p.vf_from_input.data, 1 * f.bottom_up.kh * f.bottom_up.kw);
  fill_uniform(rng, p.vf_from_vm.data, m.maps * f.top_down->kh * f.top_down->kw);
  fill_uniform(rng, p.vf_rec.data, f.maps * f.recurrent.kh * f.recurrent.kw);
  fill_uniform(rng, p.vm_from_vf.data, f.maps * m.bottom_up.kh * m.bottom_up.kw);
  fill_uniform(rng, p.vm_from_vs.data, s.maps * m.top_down->kh * m.top_down->kw);
  fill_uniform(rng, p.vm_rec.data, m.maps * m.recurrent.kh * m.recurrent.kw);
  fill_uniform(rng, p.vs_from_vm.data, m.maps * s.bottom_up.kh * s.bottom_up.kw);
  fill_uniform(rng, p.vs_rec.data, s.maps * s.recurrent.kh * s.recurrent.kw);
  fill_uniform(rng, p.vs_from_ps.data, ps_n);
  fill_uniform(rng, p.vo_from_vf.data, f.maps * cfg.output_kernel.kh * cfg.output_kernel.kw);

  fill_uniform(rng, p.pf_from_input.data, p.pf_from_input.cols);
  fill_uniform(rng, p.pf_from_pm.data, p.pf_from_pm.cols);
  fill_uniform(rng, p.pf_rec.data, p.pf_rec.cols);
  fill_uniform(rng, p.pm_from_pf.data, p.pm_from_pf.cols);
  fill_uniform(rng, p.pm_from_ps.data, p.pm_from_ps.cols);
  fill_uniform(rng, p.pm_rec.data, p.pm_rec.cols);
  fill_uniform(rng, p.ps_from_pm.data, p.ps_from_pm.cols);
  fill_uniform(rng, p.ps_rec.data, p.ps_rec.cols);
  fill_uniform(rng, p.ps_from_vs.data, s.maps * cfg.lateral.kh * cfg.lateral.kw);
  fill_uniform(rng, p.po_from_pf.data, p.po_from_pf.cols);
  return p;
}

std::vector<TensorRef> tensor_refs(Parameters& p, const NetworkConfig& cfg) {
  std::vector<TensorRef> refs;
  auto add_k = [&refs](const char* name, double tau, Kernel4& k) {
    refs.push_back({name, tau, {k.out_maps, k.in_maps, k.kh, k.kw}, k.data.data(), k.size()});
  };
  auto add_w = [&refs](const char* name, double tau, DenseWeights& w) {
    refs.push_back({name, tau, {w.rows, w.cols}, w.data.data(), w.size()});
  };
  auto add_b = [&refs](const char* name, double tau, std::vector<double>& b) {
    refs.push_back({name, tau, {static_cast<int>(b.size())}, b.data(), b.size()});
  };

  add_k("vf.bottom_up", cfg.v_fast.tau, p.vf_from_input);
  add_k("vf.top_down", cfg.v_fast.tau, p.vf_from_vm);
  add_k("vf.recurrent", cfg.v_fast.tau, p.vf_rec);
  add_b("vf.bias", cfg.v_fast.tau, p.vf_bias);
  add_k("vm.bottom_up", cfg.v_mid.tau, p.vm_from_vf);
  add_k("vm.top_down", cfg.v_mid.tau, p.vm_from_vs);
  add_k("vm.recurrent", cfg.v_mid.tau, p.vm_rec);
  add_b("vm.bias", cfg.v_mid.tau, p.vm_bias);
  add_k("vs.bottom_up", cfg.v_slow.tau, p.vs_from_vm);
  add_k("vs.recurrent", cfg.v_slow.tau, p.vs_rec);
  add_k("vs.lateral", cfg.v_slow.tau, p.vs_from_ps);
  add_b("vs.bias", cfg.v_slow.tau, p.vs_bias);
  add_k("vo.kernel", cfg.tau_io, p.vo_from_vf);
  add_b("vo.bias", cfg.tau_io, p.vo_bias);

  add_w("pf.bottom_up", cfg.p_fast.tau, p.pf_from_input);
  add_w("pf.top_down", cfg.p_fast.tau, p.pf_from_pm);
  add_w("pf.recurrent", cfg.p_fast.tau, p.pf_rec);
  add_b("pf.bias", cfg.p_fast.tau, p.pf_bias);
  add_w("pm.bottom_up", cfg.p_mid.tau, p.pm_from_pf);
  add_w("pm.top_down", cfg.p_mid.tau, p.pm_from_ps);
  add_w("pm.recurrent", cfg.p_mid.tau, p.pm_rec);
  add_b("pm.bias", cfg.p_mid.tau, p.pm_bias);
  add_w("ps.bottom_up", cfg.p_slow.tau, p.ps_from_pm);
  add_w("ps.recurrent", cfg.p_slow.tau, p.ps_rec);
  add_k("ps.lateral", cfg.p_slow.tau, p.ps_from_vs);
  add_b("ps.bias", cfg.p_slow.tau, p.ps_bias);
  add_w("po.weights", cfg.tau_io, p.po_from_pf);
  add_b("po.bias", cfg.tau_io, p.po_bias);

  for (std::size_t i = 0; i < p.initial_states.size(); ++i) {
    const std::string tag = "init." + std::to_string(i) + ".";
    for (TensorRef r : state_refs(p.initial_states[i])) {
      r.name = tag + r.name;
      refs.push_back(std::move(r));
    }
  }
  return refs;
}

std::vector<TensorRef> state_refs(HiddenState& s) {
  std::vector<TensorRef> refs;
  auto add_m = [&refs](const char* name, MapStack& m) {
    refs.push_back({name, 0.0, {m.maps, m.height, m.width}, m.data.data(), m.size()});
  };
  auto add_v = [&refs](const char* name, std::vector<double>& v) {
    refs.push_back({name, 0.0, {static_cast<int>(v.size())}, v.data(), v.size()});
  };
  add_m("vf", s.vf);
  add_m("vm", s.vm);
  add_m("vs", s.vs);
  add_v("pf", s.pf);
  add_v("pm", s.pm);
  add_v("ps", s.ps);
  return refs;
}

LayerState LayerState::from_initial(const NetworkConfig& cfg, const HiddenState& u0) {
  LayerState st;
  st.u = u0;
  st.act = HiddenState::zeros(cfg);
  map_scaled_tanh(st.u.vf.data, st.act.vf.data);
  map_scaled_tanh(st.u.vm.data, st.act.vm.data);
  map_scaled_tanh(st.u.vs.data, st.act.vs.data);
  map_scaled_tanh(st.u.pf, st.act.pf);
  map_scaled_tanh(st.u.pm, st.act.pm);
  map_scaled_tanh(st.u.ps, st.act.ps);
  return st;
}

void forward_step(const NetworkConfig& cfg, const Parameters& p, const LayerState& prev,
                  const MapStack& v_in, std::span<const double> p_in, LayerState& next,
                  MapStack& v_out, std::vector<double>& p_out, int step_index) {
  require(v_in.maps == 1 && v_in.height == cfg.image_height && v_in.width == cfg.image_width,
          "forward_step: visual input does not match the configured image extents");
  require(static_cast<int>(p_in.size()) == cfg.code_len(),
          "forward_step: proprioceptive input length != code length");

  // --- visual pathway ---
  MapStack drive_f(cfg.v_fast.maps, cfg.v_fast.height, cfg.v_fast.width);
  conv_valid_acc(drive_f, v_in, p.vf_from_input);
  conv_transposed_acc(drive_f, prev.act.vm, p.vf_from_vm);
  recurrent_acc(drive_f, prev.act.vf, p.vf_rec, cfg.v_fast.recurrent);
  leak_update_maps(next.u.vf, prev.u.vf, drive_f, p.vf_bias, cfg.v_fast.tau);
  map_scaled_tanh(next.u.vf.data, next.act.vf.data);

  MapStack drive_m(cfg.v_mid.maps, cfg.v_mid.height, cfg.v_mid.width);
  conv_valid_acc(drive_m, prev.act.vf, p.vm_from_vf);
  conv_transposed_acc(drive_m, prev.act.vs, p.vm_from_vs);
  recurrent_acc(drive_m, prev.act.vm, p.vm_rec, cfg.v_mid.recurrent);
  leak_update_maps(next.u.vm, prev.u.vm, drive_m, p.vm_bias, cfg.v_mid.tau);
  map_scaled_tanh(next.u.vm.data, next.act.vm.data);

  MapStack drive_s(cfg.v_slow.maps, cfg.v_slow.height, cfg.v_slow.width);
  conv_valid_acc(drive_s, prev.act.vm, p.vs_from_vm);
  recurrent_acc(drive_s, prev.act.vs, p.vs_rec, cfg.v_slow.recurrent);
  conv_transposed_acc(drive_s, wrap_units(prev.act.ps), p.vs_from_ps);
  leak_update_maps(next.u.vs, prev.u.vs, drive_s, p.vs_bias, cfg.v_slow.tau);
  map_scaled_tanh(next.u.vs.data, next.act.vs.data);

  check_finite(next.u.vf.data, "vf", step_index);
  check_finite(next.u.vm.data, "vm", step_index);
  check_finite(next.u.vs.data, "vs", step_index);

  // Visual output: memoryless, reads the fast maps of the current step.
  v_out = conv_transposed(next.act.vf, p.vo_from_vf, p.vo_bias);
  for (double& x : v_out.data) x = out_tanh(x);

  // --- proprioceptive pathway ---
  std::vector<double> drive_pf(cfg.p_fast.neurons, 0.0);
  affine_acc(drive_pf, p.pf_from_input, p_in);
  affine_acc(drive_pf, p.pf_from_pm, prev.act.pm);
  affine_acc(drive_pf, p.pf_rec, prev.act.pf);
  leak_update(next.u.pf, prev.u.pf, drive_pf, p.pf_bias, cfg.p_fast.tau);
  map_scaled_tanh(next.u.pf, next.act.pf);

  std::vector<double> drive_pm(cfg.p_mid.neurons, 0.0);
  affine_acc(drive_pm, p.pm_from_pf, prev.act.pf);
  affine_acc(drive_pm, p.pm_from_ps, prev.act.ps);
  affine_acc(drive_pm, p.pm_rec, prev.act.pm);
  leak_update(next.u.pm, prev.u.pm, drive_pm, p.pm_bias, cfg.p_mid.tau);
  map_scaled_tanh(next.u.pm, next.act.pm);

  // The slow-proprio drive reads the CURRENT slow visual activations; the
  // reverse lateral above read the PREVIOUS slow proprio activations.
  std::vector<double> drive_ps(cfg.p_slow.neurons, 0.0);
  affine_acc(drive_ps, p.ps_from_pm, prev.act.pm);
  affine_acc(drive_ps, p.ps_rec, prev.act.ps);
  {
    MapStack lat(cfg.p_slow.neurons, 1, 1);
    conv_valid_acc(lat, next.act.vs, p.ps_from_vs);
    for (int i = 0; i < cfg.p_slow.neurons; ++i) drive_ps[i] += lat.data[i];
  }
  leak_update(next.u.ps, prev.u.ps, drive_ps, p.ps_bias, cfg.p_slow.tau);
  map_scaled_tanh(next.u.ps, next.act.ps);

  check_finite(next.u.pf, "pf", step_index);
  check_finite(next.u.pm, "pm", step_index);
  check_finite(next.u.ps, "ps", step_index);

  // Proprioceptive output: memoryless grouped softmax over an affine map of
  // the current fast proprio activations.
  p_out = affine(p.po_from_pf, next.act.pf, p.po_bias);
  softmax_groups(p_out, cfg.units_per_group, p_out);
}

void same_padding(const ConvSpec& s, int& top, int& bottom, int& left, int& right) {
  top = (s.kh - 1) / 2;
  bottom = (s.kh - 1) - top;
  left = (s.kw - 1) / 2;
  right = (s.kw - 1) - left;
}

void renormalize_code(std::span<double> code, int group_size) {
  require(group_size > 0 && code.size() % static_cast<std::size_t>(group_size) == 0,
          "renormalize_code: bad group size");
  for (std::size_t g = 0; g < code.size(); g += group_size) {
    double sum = 0.0;
    for (int i = 0; i < group_size; ++i) sum += code[g + i];
    if (!(std::abs(sum - 1.0) < 1e-3)) {
      throw ConfigError("softmax code group does not sum to 1 (got " + std::to_string(sum) + ")");
    }
    for (int i = 0; i < group_size; ++i) code[g + i] /= sum;
  }
}

void rollout(const NetworkConfig& cfg, const Parameters& p, const HiddenState& u0,
             std::span<const StepInput> inputs, Unroll& out) {
  require(!inputs.empty(), "rollout: need at least one step");
  require(inputs[0].v != nullptr && inputs[0].p != nullptr,
          "rollout: the first step requires external input on both modalities");
  out.initial = LayerState::from_initial(cfg, u0);
  out.steps.resize(inputs.size());

  const LayerState* prev = &out.initial;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    StepRecord& rec = out.steps[t];
    if (inputs[t].v != nullptr) {
      rec.v_in = *inputs[t].v;
      rec.v_fed_back = false;
    } else {
      rec.v_in = out.steps[t - 1].v_out;
      rec.v_fed_back = true;
    }
    if (inputs[t].p != nullptr) {
      rec.p_in = *inputs[t].p;
      if (!inputs[t].raw_p) renormalize_code(rec.p_in, cfg.units_per_group);
      rec.p_fed_back = false;
    } else {
      rec.p_in = out.steps[t - 1].p_out;
      rec.p_fed_back = true;
    }
    if (rec.state.u.vf.size() == 0) rec.state = LayerState::from_initial(cfg, u0);
    forward_step(cfg, p, *prev, rec.v_in, rec.p_in, rec.state, rec.v_out, rec.p_out,
                 static_cast<int>(t) + 1);
    prev = &rec.state;
  }
}

GeneratedSeq generate_closed_loop(const NetworkConfig& cfg, const Parameters& p,
                                  const HiddenState& u0, const MapStack& first_v,
                                  std::span<const double> first_p, int steps) {
  require(steps >= 1, "generate_closed_loop: need at least one step");
  std::vector<double> p0(first_p.begin(), first_p.end());
  std::vector<StepInput> inputs(static_cast<std::size_t>(steps));
  inputs[0] = {&first_v, &p0};
  Unroll roll;
  rollout(cfg, p, u0, inputs, roll);
  GeneratedSeq g;
  g.v_out.reserve(roll.steps.size());
  g.p_out.reserve(roll.steps.size());
  for (auto& s : roll.steps) {
    g.v_out.push_back(std::move(s.v_out));
    g.p_out.push_back(std::move(s.p_out));
  }
  return g;
}

GeneratedSeq generate_open_loop(const NetworkConfig& cfg, const Parameters& p,
                                const HiddenState& u0,
                                std::span<const MapStack> v_ext,
                                std::span<const std::vector<double>> p_ext,
                                Modality entrain) {
  const bool use_v = entrain == Modality::visual || entrain == Modality::both;
  const bool use_p = entrain == Modality::proprioceptive || entrain == Modality::both;
  const std::size_t stream_len = use_v ? v_ext.size() : p_ext.size();
  require(stream_len >= 2, "generate_open_loop: stream must have at least two steps");
  require(!use_v || v_ext.size() == stream_len, "generate_open_loop: missing visual frames");
  require(!use_p || p_ext.size() == stream_len, "generate_open_loop: missing proprio codes");
  require(!v_ext.empty() && !p_ext.empty(),
          "generate_open_loop: the first step needs both modalities");

  const std::size_t steps = stream_len - 1;
  std::vector<StepInput> inputs(steps);
  inputs[0] = {&v_ext[0], &p_ext[0]};
  for (std::size_t t = 1; t < steps; ++t) {
    if (use_v) inputs[t].v = &v_ext[t];
    if (use_p) inputs[t].p = &p_ext[t];
  }
  Unroll roll;
  rollout(cfg, p, u0, inputs, roll);
  GeneratedSeq g;
  for (auto& s : roll.steps) {
    g.v_out.push_back(std::move(s.v_out));
    g.p_out.push_back(std::move(s.p_out));
  }
  return g;
}

}  // namespace pvmdnn
