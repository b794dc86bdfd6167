#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "pvmdnn/config.hpp"
#include "pvmdnn/network.hpp"
#include "test_util.hpp"

using namespace pvmdnn;
using testutil::fill_random;

namespace {

// Random-but-finite parameters for dynamics tests.
Parameters random_params(const NetworkConfig& cfg, std::uint64_t seed, int nseq = 1) {
  Parameters p = init_params(cfg, seed, nseq);
  Rng rng(seed + 1);
  for (auto& st : p.initial_states) {
    for (auto& r : state_refs(st)) {
      for (std::size_t i = 0; i < r.size; ++i) r.data[i] = rng.next_uniform(-0.5, 0.5);
    }
  }
  return p;
}

}  // namespace

TEST_CASE("table1 preset matches the published topology exactly") {
  const NetworkConfig c = table1_config();
  CHECK(c.image_width == 64);
  CHECK(c.image_height == 48);
  CHECK(c.v_fast.maps == 4);
  CHECK(c.v_fast.width == 60);
  CHECK(c.v_fast.height == 44);
  CHECK(c.v_fast.tau == 2.0);
  CHECK(c.v_mid.maps == 8);
  CHECK(c.v_mid.width == 29);
  CHECK(c.v_mid.height == 21);
  CHECK(c.v_mid.tau == 4.0);
  CHECK(c.v_slow.maps == 12);
  CHECK(c.v_slow.width == 13);
  CHECK(c.v_slow.height == 9);
  CHECK(c.v_slow.tau == 8.0);
  CHECK(c.p_fast.neurons == 30);
  CHECK(c.p_fast.tau == 2.0);
  CHECK(c.p_mid.neurons == 20);
  CHECK(c.p_mid.tau == 4.0);
  CHECK(c.p_slow.neurons == 10);
  CHECK(c.p_slow.tau == 8.0);
  CHECK(c.tau_io == 1.0);
  CHECK(c.lateral.kw == 13);
  CHECK(c.lateral.kh == 9);
  CHECK(c.code_len() == 20);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("shipped preset files match the built-in presets") {
  for (const char* name : {"table1", "desk", "tiny"}) {
    const std::string path = std::string(PVMDNN_PRESETS_DIR) + "/" + name + ".json";
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(config_from_json(ss.str()) == preset_config(name));
  }
}

TEST_CASE("config JSON roundtrip and error paths") {
  for (const char* name : {"table1", "desk", "tiny"}) {
    const NetworkConfig c = preset_config(name);
    const NetworkConfig back = config_from_json(config_to_json(c));
    CHECK(back == c);
  }
  CHECK_THROWS_AS(preset_config("nope"), ConfigError);
  CHECK_THROWS_AS(config_from_json("{"), ConfigError);
  CHECK_THROWS_AS(config_from_json("{}"), ConfigError);

  NetworkConfig broken = table1_config();
  broken.v_mid.width = 28;  // violates the conv shape formula
  CHECK_THROWS_AS(broken.validate(), ConfigError);
}

TEST_CASE("init_params: determinism, neutral biases and states, lateral shape") {
  const NetworkConfig cfg = table1_config();
  Parameters a = init_params(cfg, 7, 16);
  Parameters b = init_params(cfg, 7, 16);
  auto ra = tensor_refs(a, cfg);
  auto rb = tensor_refs(b, cfg);
  REQUIRE(ra.size() == rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    REQUIRE(ra[i].size == rb[i].size);
    for (std::size_t j = 0; j < ra[i].size; ++j) CHECK(ra[i].data[j] == rb[i].data[j]);
  }
  Parameters c = init_params(cfg, 8, 16);
  bool differs = false;
  auto rc = tensor_refs(c, cfg);
  for (std::size_t j = 0; j < ra[0].size; ++j) differs = differs || ra[0].data[j] != rc[0].data[j];
  CHECK(differs);

  // lateral kernels have the slow-map spatial extents (13x9 as w x h)
  CHECK(a.vs_from_ps.kw == 13);
  CHECK(a.vs_from_ps.kh == 9);
  CHECK(a.ps_from_vs.kw == 13);
  CHECK(a.ps_from_vs.kh == 9);
  CHECK(a.vs_from_ps.out_maps == 10);
  CHECK(a.vs_from_ps.in_maps == 12);

  for (double v : a.vf_bias) CHECK(v == 0.0);
  for (double v : a.po_bias) CHECK(v == 0.0);
  for (const auto& st : a.initial_states) {
    for (double v : st.vf.data) CHECK(v == 0.0);
    for (double v : st.ps) CHECK(v == 0.0);
  }

  // bounded initialization: |w| <= 1/sqrt(fan_in) <= 1
  for (const auto& r : ra) {
    for (std::size_t j = 0; j < r.size; ++j) CHECK(std::abs(r.data[j]) <= 1.0);
  }
}

TEST_CASE("leak arithmetic: zero drive decays exactly, tau structure") {
  const NetworkConfig cfg = tiny_config();
  Parameters p = zero_params(cfg, 1);  // every kernel, weight and bias is zero

  HiddenState u0 = HiddenState::zeros(cfg);
  for (auto& r : state_refs(u0)) {
    for (std::size_t i = 0; i < r.size; ++i) r.data[i] = 1.0 + 0.25 * static_cast<double>(i % 3);
  }

  MapStack v_in(1, cfg.image_height, cfg.image_width);
  std::vector<double> p_in(cfg.code_len(), 1.0 / cfg.units_per_group);

  LayerState prev = LayerState::from_initial(cfg, u0);
  LayerState next = LayerState::from_initial(cfg, u0);
  MapStack v_out;
  std::vector<double> p_out;

  // expected: per layer, u multiplies by (1 - 1/tau) each step, exactly
  HiddenState expect = u0;
  const double keeps[6] = {1.0 - 1.0 / cfg.v_fast.tau, 1.0 - 1.0 / cfg.v_mid.tau,
                           1.0 - 1.0 / cfg.v_slow.tau, 1.0 - 1.0 / cfg.p_fast.tau,
                           1.0 - 1.0 / cfg.p_mid.tau,  1.0 - 1.0 / cfg.p_slow.tau};
  CHECK(keeps[0] == 0.5);
  CHECK(keeps[1] == 0.75);
  CHECK(keeps[2] == 0.875);

  for (int n = 1; n <= 6; ++n) {
    forward_step(cfg, p, prev, v_in, p_in, next, v_out, p_out, n);
    auto erefs = state_refs(expect);
    for (int layer = 0; layer < 6; ++layer) {
      for (std::size_t i = 0; i < erefs[layer].size; ++i) {
        erefs[layer].data[i] *= keeps[layer];
      }
    }
    auto nrefs = state_refs(next.u);
    for (int layer = 0; layer < 6; ++layer) {
      for (std::size_t i = 0; i < nrefs[layer].size; ++i) {
        CHECK(nrefs[layer].data[i] == erefs[layer].data[i]);  // exact
      }
    }
    std::swap(prev, next);
  }

  // single-step arithmetic: tau=2 halves a unit state under zero drive
  HiddenState ones = HiddenState::zeros(cfg);
  std::fill(ones.pf.begin(), ones.pf.end(), 1.0);
  LayerState s0 = LayerState::from_initial(cfg, ones);
  forward_step(cfg, p, s0, v_in, p_in, next, v_out, p_out, 1);
  for (double u : next.u.pf) CHECK(u == 0.5);

  // memoryless output layers: with zero parameters the outputs sit at the
  // activation of zero drive regardless of history
  for (double v : v_out.data) CHECK(v == 0.0);                    // tanh(0)
  for (double v : p_out) CHECK(v == doctest::Approx(1.0 / cfg.units_per_group));
}

TEST_CASE("hidden activations bounded; output groups sum to one") {
  const NetworkConfig cfg = tiny_config();
  Parameters p = random_params(cfg, 99);

  MapStack v_in(1, cfg.image_height, cfg.image_width);
  Rng rng(5);
  fill_random(rng, v_in.data);
  std::vector<double> u(cfg.code_len(), 0.0);
  fill_random(rng, u, 2.0);
  auto p_in = softmax_groups(u, cfg.units_per_group);

  LayerState prev = LayerState::from_initial(cfg, p.initial_states[0]);
  LayerState next = prev;
  MapStack v_out;
  std::vector<double> p_out;
  for (int t = 1; t <= 10; ++t) {
    forward_step(cfg, p, prev, v_in, p_in, next, v_out, p_out, t);
    for (const auto& r : state_refs(next.act)) {
      for (std::size_t i = 0; i < r.size; ++i) CHECK(std::abs(r.data[i]) <= 1.7159);
    }
    for (double v : v_out.data) CHECK(std::abs(v) < 1.0);
    for (int g = 0; g < cfg.joint_groups; ++g) {
      double sum = 0.0;
      for (int i = 0; i < cfg.units_per_group; ++i) sum += p_out[g * cfg.units_per_group + i];
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
    std::swap(prev, next);
  }
}

TEST_CASE("forward_step is a pure function of (params, state, io)") {
  const NetworkConfig cfg = tiny_config();
  Parameters p = random_params(cfg, 12);
  MapStack v_in(1, cfg.image_height, cfg.image_width);
  Rng rng(6);
  fill_random(rng, v_in.data);
  std::vector<double> p_in(cfg.code_len(), 1.0 / cfg.units_per_group);

  LayerState prev = LayerState::from_initial(cfg, p.initial_states[0]);
  LayerState n1 = prev, n2 = prev;
  MapStack v1, v2;
  std::vector<double> q1, q2;
  forward_step(cfg, p, prev, v_in, p_in, n1, v1, q1, 1);
  forward_step(cfg, p, prev, v_in, p_in, n2, v2, q2, 1);
  for (std::size_t i = 0; i < v1.data.size(); ++i) CHECK(v1.data[i] == v2.data[i]);
  for (std::size_t i = 0; i < q1.size(); ++i) CHECK(q1[i] == q2[i]);
  auto r1 = state_refs(n1.u);
  auto r2 = state_refs(n2.u);
  for (std::size_t k = 0; k < r1.size(); ++k) {
    for (std::size_t i = 0; i < r1[k].size; ++i) CHECK(r1[k].data[i] == r2[k].data[i]);
  }
}

TEST_CASE("lateral coupling is asymmetric in time") {
  const NetworkConfig cfg = tiny_config();

  // Only the slow-proprio <- slow-visual kernel is non-zero: the current
  // step's slow visual activations drive the slow proprio units.
  {
    Parameters p = zero_params(cfg, 1);
    for (double& w : p.ps_from_vs.data) w = 0.3;

    HiddenState u0 = HiddenState::zeros(cfg);
    for (double& v : u0.vs.data) v = 0.9;

    MapStack v_in(1, cfg.image_height, cfg.image_width);
    std::vector<double> p_in(cfg.code_len(), 1.0 / cfg.units_per_group);
    LayerState prev = LayerState::from_initial(cfg, u0);
    LayerState next = prev;
    MapStack v_out;
    std::vector<double> p_out;
    forward_step(cfg, p, prev, v_in, p_in, next, v_out, p_out, 1);

    // u_vs^1 = keep * u0 (zero drive); the lateral term must read THAT state.
    MapStack act_vs_now(cfg.v_slow.maps, cfg.v_slow.height, cfg.v_slow.width);
    for (std::size_t i = 0; i < act_vs_now.data.size(); ++i) {
      act_vs_now.data[i] = scaled_tanh((1.0 - 1.0 / cfg.v_slow.tau) * 0.9);
    }
    MapStack lat(cfg.p_slow.neurons, 1, 1);
    conv_valid_acc(lat, act_vs_now, p.ps_from_vs);
    for (int i = 0; i < cfg.p_slow.neurons; ++i) {
      CHECK(next.u.ps[i] == doctest::Approx(lat.data[i] / cfg.p_slow.tau).epsilon(1e-14));
      CHECK(next.u.ps[i] != 0.0);
    }

    // zeroing the current slow visual state removes the contribution
    HiddenState z = HiddenState::zeros(cfg);
    LayerState pz = LayerState::from_initial(cfg, z);
    forward_step(cfg, p, pz, v_in, p_in, next, v_out, p_out, 1);
    for (int i = 0; i < cfg.p_slow.neurons; ++i) CHECK(next.u.ps[i] == 0.0);
  }

  // Only the slow-visual <- slow-proprio kernel is non-zero: the PREVIOUS
  // step's slow proprio activations drive the slow visual maps.
  {
    Parameters p = zero_params(cfg, 1);
    for (double& w : p.vs_from_ps.data) w = 0.4;

    HiddenState u0 = HiddenState::zeros(cfg);
    for (double& v : u0.ps) v = 0.7;

    MapStack v_in(1, cfg.image_height, cfg.image_width);
    std::vector<double> p_in(cfg.code_len(), 1.0 / cfg.units_per_group);
    LayerState prev = LayerState::from_initial(cfg, u0);
    LayerState next = prev;
    MapStack v_out;
    std::vector<double> p_out;
    forward_step(cfg, p, prev, v_in, p_in, next, v_out, p_out, 1);

    bool any = false;
    for (double u : next.u.vs.data) any = any || u != 0.0;
    CHECK(any);

    HiddenState z = HiddenState::zeros(cfg);
    LayerState pz = LayerState::from_initial(cfg, z);
    forward_step(cfg, p, pz, v_in, p_in, next, v_out, p_out, 1);
    for (double u : next.u.vs.data) CHECK(u == 0.0);
  }
}

TEST_CASE("closed-loop generation: step count, determinism, feedback wiring") {
  const NetworkConfig cfg = tiny_config();
  Parameters p = random_params(cfg, 31);
  MapStack first_v(1, cfg.image_height, cfg.image_width);
  Rng rng(8);
  fill_random(rng, first_v.data);
  std::vector<double> first_p(cfg.code_len(), 1.0 / cfg.units_per_group);

  GeneratedSeq one = generate_closed_loop(cfg, p, p.initial_states[0], first_v, first_p, 1);
  CHECK(one.v_out.size() == 1);

  GeneratedSeq a = generate_closed_loop(cfg, p, p.initial_states[0], first_v, first_p, 7);
  GeneratedSeq b = generate_closed_loop(cfg, p, p.initial_states[0], first_v, first_p, 7);
  for (std::size_t t = 0; t < a.v_out.size(); ++t) {
    for (std::size_t i = 0; i < a.v_out[t].data.size(); ++i) {
      CHECK(a.v_out[t].data[i] == b.v_out[t].data[i]);
    }
  }

  // feedback wiring: step 2 must consume step 1's outputs
  LayerState s = LayerState::from_initial(cfg, p.initial_states[0]);
  LayerState n = s;
  MapStack vo;
  std::vector<double> po;
  std::vector<double> first_p_norm = first_p;
  renormalize_code(first_p_norm, cfg.units_per_group);
  forward_step(cfg, p, s, first_v, first_p_norm, n, vo, po, 1);
  LayerState n2 = n;
  MapStack vo2;
  std::vector<double> po2;
  forward_step(cfg, p, n, vo, po, n2, vo2, po2, 2);
  for (std::size_t i = 0; i < vo2.data.size(); ++i) CHECK(vo2.data[i] == a.v_out[1].data[i]);
}

TEST_CASE("open-loop entrainment drives one modality externally") {
  const NetworkConfig cfg = tiny_config();
  Parameters p = random_params(cfg, 77);
  Rng rng(13);

  const int T = 6;
  std::vector<MapStack> v_ext(T, MapStack(1, cfg.image_height, cfg.image_width));
  std::vector<std::vector<double>> p_ext(T);
  for (int t = 0; t < T; ++t) {
    fill_random(rng, v_ext[t].data);
    std::vector<double> u(cfg.code_len(), 0.0);
    fill_random(rng, u, 1.0);
    p_ext[t] = softmax_groups(u, cfg.units_per_group);
  }

  GeneratedSeq vis = generate_open_loop(cfg, p, p.initial_states[0], v_ext, p_ext,
                                        Modality::visual);
  CHECK(vis.v_out.size() == T - 1);

  // manual re-step: p_in at t equals p_out at t-1, v_in external
  LayerState prev = LayerState::from_initial(cfg, p.initial_states[0]);
  LayerState next = prev;
  MapStack vo;
  std::vector<double> po;
  std::vector<double> pin = p_ext[0];
  renormalize_code(pin, cfg.units_per_group);
  forward_step(cfg, p, prev, v_ext[0], pin, next, vo, po, 1);
  for (int t = 1; t < T - 1; ++t) {
    std::swap(prev, next);
    forward_step(cfg, p, prev, v_ext[t], po, next, vo, po, t + 1);
  }
  for (std::size_t i = 0; i < vo.data.size(); ++i) {
    CHECK(vo.data[i] == vis.v_out.back().data[i]);
  }

  // missing external frames for the entrained modality is an error
  std::vector<MapStack> short_v(v_ext.begin(), v_ext.begin() + 1);
  CHECK_THROWS_AS(generate_open_loop(cfg, p, p.initial_states[0], short_v, p_ext,
                                     Modality::visual),
                  ConfigError);
}

TEST_CASE("non-finite states fault with layer name and step index") {
  const NetworkConfig cfg = tiny_config();
  Parameters p = zero_params(cfg, 1);
  for (double& w : p.vf_from_input.data) w = 1e308;  // overflow on the first conv

  MapStack v_in(1, cfg.image_height, cfg.image_width);
  v_in.fill(1.0);
  std::vector<double> p_in(cfg.code_len(), 1.0 / cfg.units_per_group);
  LayerState prev = LayerState::from_initial(cfg, HiddenState::zeros(cfg));
  LayerState next = prev;
  MapStack vo;
  std::vector<double> po;
  try {
    forward_step(cfg, p, prev, v_in, p_in, next, vo, po, 3);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("vf") != std::string::npos);
    CHECK(msg.find("step 3") != std::string::npos);
  }
}
