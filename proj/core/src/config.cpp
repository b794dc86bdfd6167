#include "pvmdnn/config.hpp"

#ifdef PVMDNN_VENDORED_JSON
#include <json.hpp>
#else
#include <nlohmann/json.hpp>
#endif

#include <string>

namespace pvmdnn {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

// Recurrent convs keep the map shape: stride 1 with k-1 total zero padding
// (padded at the bottom/right, so even kernels stay legal).
void check_recurrent(const ConvSpec& s, const std::string& where) {
  check(s.stride_y == 1 && s.stride_x == 1, where + ": recurrent stride must be 1");
  check(s.kh >= 1 && s.kw >= 1, where + ": recurrent kernel must be at least 1x1");
}

void check_bottom_up(int in_h, int in_w, const ConvSpec& s, int out_h, int out_w,
                     const std::string& where) {
  check(in_h >= s.kh && in_w >= s.kw, where + ": kernel larger than input");
  const int oh = conv_out_extent(in_h, s.kh, s.stride_y);
  const int ow = conv_out_extent(in_w, s.kw, s.stride_x);
  check(oh == out_h && ow == out_w,
        where + ": valid conv yields " + std::to_string(ow) + "x" + std::to_string(oh) +
            " (w x h), declared " + std::to_string(out_w) + "x" + std::to_string(out_h));
}

void check_top_down(int in_h, int in_w, const ConvSpec& s, int out_h, int out_w,
                    const std::string& where) {
  const int oh = convt_out_extent(in_h, s.kh, s.stride_y);
  const int ow = convt_out_extent(in_w, s.kw, s.stride_x);
  check(oh == out_h && ow == out_w,
        where + ": transposed conv yields " + std::to_string(ow) + "x" + std::to_string(oh) +
            " (w x h), declared " + std::to_string(out_w) + "x" + std::to_string(out_h));
}

nlohmann::json conv_to_json(const ConvSpec& s) {
  return {{"kh", s.kh}, {"kw", s.kw}, {"stride_y", s.stride_y}, {"stride_x", s.stride_x}};
}

ConvSpec conv_from_json(const nlohmann::json& j) {
  ConvSpec s;
  s.kh = j.at("kh").get<int>();
  s.kw = j.at("kw").get<int>();
  s.stride_y = j.at("stride_y").get<int>();
  s.stride_x = j.at("stride_x").get<int>();
  return s;
}

nlohmann::json vlevel_to_json(const VisualLevelConfig& l) {
  nlohmann::json j{{"tau", l.tau},
                   {"maps", l.maps},
                   {"height", l.height},
                   {"width", l.width},
                   {"bottom_up", conv_to_json(l.bottom_up)},
                   {"recurrent", conv_to_json(l.recurrent)}};
  if (l.top_down) j["top_down"] = conv_to_json(*l.top_down);
  return j;
}

VisualLevelConfig vlevel_from_json(const nlohmann::json& j) {
  VisualLevelConfig l;
  l.tau = j.at("tau").get<double>();
  l.maps = j.at("maps").get<int>();
  l.height = j.at("height").get<int>();
  l.width = j.at("width").get<int>();
  l.bottom_up = conv_from_json(j.at("bottom_up"));
  l.recurrent = conv_from_json(j.at("recurrent"));
  if (j.contains("top_down")) l.top_down = conv_from_json(j.at("top_down"));
  return l;
}

}  // namespace

void NetworkConfig::validate() const {
  check(image_height > 0 && image_width > 0, "config: image extents must be positive");
  check(tau_io == 1.0, "config: input/output layers must have tau = 1");
  for (const auto* l : {&v_fast, &v_mid, &v_slow}) {
    check(l->tau >= 1.0, "config: visual tau must be >= 1");
    check(l->maps > 0 && l->height > 0 && l->width > 0, "config: visual level empty");
  }
  for (const auto* l : {&p_fast, &p_mid, &p_slow}) {
    check(l->tau >= 1.0, "config: proprioceptive tau must be >= 1");
    check(l->neurons > 0, "config: proprioceptive level empty");
  }
  check(joint_groups > 0 && units_per_group > 0, "config: softmax groups empty");

  check_bottom_up(image_height, image_width, v_fast.bottom_up, v_fast.height, v_fast.width,
                  "input->fast");
  check_bottom_up(v_fast.height, v_fast.width, v_mid.bottom_up, v_mid.height, v_mid.width,
                  "fast->mid");
  check_bottom_up(v_mid.height, v_mid.width, v_slow.bottom_up, v_slow.height, v_slow.width,
                  "mid->slow");
  check(v_fast.top_down.has_value() && v_mid.top_down.has_value(),
        "config: fast and mid levels need top-down kernels");
  check(!v_slow.top_down.has_value(), "config: slow level has no level above");
  check_top_down(v_mid.height, v_mid.width, *v_fast.top_down, v_fast.height, v_fast.width,
                 "mid->fast top-down");
  check_top_down(v_slow.height, v_slow.width, *v_mid.top_down, v_mid.height, v_mid.width,
                 "slow->mid top-down");
  check_top_down(v_fast.height, v_fast.width, output_kernel, image_height, image_width,
                 "fast->output");
  check_recurrent(v_fast.recurrent, "fast");
  check_recurrent(v_mid.recurrent, "mid");
  check_recurrent(v_slow.recurrent, "slow");

  // The lateral kernel reduces the slow visual maps to 1x1 per neuron, and
  // transposed it expands one value per neuron back to the slow map extents.
  check(lateral.kh == v_slow.height && lateral.kw == v_slow.width &&
            lateral.stride_y == 1 && lateral.stride_x == 1,
        "config: lateral kernel must match the slow visual extents at stride 1");
}

NetworkConfig table1_config() {
  NetworkConfig c;
  c.image_height = 48;
  c.image_width = 64;
  c.output_kernel = {5, 5, 1, 1};

  c.v_fast = {2.0, 4, 44, 60, {5, 5, 1, 1}, ConvSpec{4, 4, 2, 2}, {2, 2, 1, 1}};
  c.v_mid = {4.0, 8, 21, 29, {4, 4, 2, 2}, ConvSpec{5, 5, 2, 2}, {2, 2, 1, 1}};
  c.v_slow = {8.0, 12, 9, 13, {5, 5, 2, 2}, std::nullopt, {2, 2, 1, 1}};
  c.lateral = {9, 13, 1, 1};

  c.p_fast = {2.0, 30};
  c.p_mid = {4.0, 20};
  c.p_slow = {8.0, 10};
  c.joint_groups = 2;
  c.units_per_group = 10;
  c.validate();
  return c;
}

NetworkConfig desk_config() {
  NetworkConfig c = table1_config();
  c.v_fast.maps = 2;
  c.v_mid.maps = 4;
  c.v_slow.maps = 6;
  c.validate();
  return c;
}

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.image_height = 12;
  c.image_width = 16;
  c.output_kernel = {5, 5, 1, 1};

  c.v_fast = {2.0, 1, 8, 12, {5, 5, 1, 1}, ConvSpec{4, 4, 2, 2}, {2, 2, 1, 1}};
  c.v_mid = {4.0, 2, 3, 5, {4, 4, 2, 2}, ConvSpec{3, 3, 2, 2}, {2, 2, 1, 1}};
  c.v_slow = {8.0, 2, 1, 2, {3, 3, 2, 2}, std::nullopt, {2, 2, 1, 1}};
  c.lateral = {1, 2, 1, 1};

  c.p_fast = {2.0, 6};
  c.p_mid = {4.0, 4};
  c.p_slow = {8.0, 3};
  c.joint_groups = 2;
  c.units_per_group = 10;
  c.validate();
  return c;
}

NetworkConfig preset_config(const std::string& name) {
  if (name == "table1") return table1_config();
  if (name == "desk") return desk_config();
  if (name == "tiny") return tiny_config();
  throw ConfigError("unknown preset '" + name + "' (expected table1, desk, or tiny)");
}

std::string config_to_json(const NetworkConfig& cfg) {
  nlohmann::json j;
  j["image_height"] = cfg.image_height;
  j["image_width"] = cfg.image_width;
  j["output_kernel"] = conv_to_json(cfg.output_kernel);
  j["v_fast"] = vlevel_to_json(cfg.v_fast);
  j["v_mid"] = vlevel_to_json(cfg.v_mid);
  j["v_slow"] = vlevel_to_json(cfg.v_slow);
  j["lateral"] = conv_to_json(cfg.lateral);
  j["p_fast"] = {{"tau", cfg.p_fast.tau}, {"neurons", cfg.p_fast.neurons}};
  j["p_mid"] = {{"tau", cfg.p_mid.tau}, {"neurons", cfg.p_mid.neurons}};
  j["p_slow"] = {{"tau", cfg.p_slow.tau}, {"neurons", cfg.p_slow.neurons}};
  j["joint_groups"] = cfg.joint_groups;
  j["units_per_group"] = cfg.units_per_group;
  return j.dump(2);
}

NetworkConfig config_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  NetworkConfig c;
  try {
    c.image_height = j.at("image_height").get<int>();
    c.image_width = j.at("image_width").get<int>();
    c.output_kernel = conv_from_json(j.at("output_kernel"));
    c.v_fast = vlevel_from_json(j.at("v_fast"));
    c.v_mid = vlevel_from_json(j.at("v_mid"));
    c.v_slow = vlevel_from_json(j.at("v_slow"));
    c.lateral = conv_from_json(j.at("lateral"));
    c.p_fast = {j.at("p_fast").at("tau").get<double>(), j.at("p_fast").at("neurons").get<int>()};
    c.p_mid = {j.at("p_mid").at("tau").get<double>(), j.at("p_mid").at("neurons").get<int>()};
    c.p_slow = {j.at("p_slow").at("tau").get<double>(), j.at("p_slow").at("neurons").get<int>()};
    c.joint_groups = j.at("joint_groups").get<int>();
    c.units_per_group = j.at("units_per_group").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: missing or ill-typed field: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace pvmdnn
