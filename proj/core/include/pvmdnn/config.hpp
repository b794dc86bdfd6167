#pragma once

#include <optional>
#include <string>

#include "pvmdnn/tensor.hpp"

namespace pvmdnn {

// Kernel geometry for one connection.
struct ConvSpec {
  int kh = 1;
  int kw = 1;
  int stride_y = 1;
  int stride_x = 1;
  bool operator==(const ConvSpec&) const = default;
};

// One level of the visual hierarchy.
struct VisualLevelConfig {
  double tau = 1.0;
  int maps = 0;
  int height = 0;  // declared map extents; validate() checks them end-to-end
  int width = 0;
  ConvSpec bottom_up;                  // valid conv from the level below
  std::optional<ConvSpec> top_down;    // transposed conv from the level above
  ConvSpec recurrent;                  // stride-1, shape-preserving (zero-padded)
  bool operator==(const VisualLevelConfig&) const = default;
};

struct ProprioLevelConfig {
  double tau = 1.0;
  int neurons = 0;
  bool operator==(const ProprioLevelConfig&) const = default;
};

// Full topology of the two-pathway network. The default preset reproduces
// the published layer sizes exactly; all presets must pass validate().
struct NetworkConfig {
  int image_height = 48;
  int image_width = 64;
  ConvSpec output_kernel;  // fast level -> visual output (transposed)

  VisualLevelConfig v_fast, v_mid, v_slow;
  ConvSpec lateral;        // slow visual <-> slow proprioceptive coupling

  ProprioLevelConfig p_fast, p_mid, p_slow;
  int joint_groups = 2;
  int units_per_group = 10;

  double tau_io = 1.0;  // input/output layers are memoryless

  int code_len() const { return joint_groups * units_per_group; }

  // Verifies every conv shape formula end-to-end and all tau >= 1.
  // Throws ConfigError with the offending connection named.
  void validate() const;

  bool operator==(const NetworkConfig&) const = default;
};

// Published full-scale topology (maps 4/8/12, neurons 30/20/10, tau 1/2/4/8).
NetworkConfig table1_config();
// Same geometry with maps reduced to 2/4/6 for desk-scale runs.
NetworkConfig desk_config();
// Miniature topology (16x12 input, maps 1/2/2, neurons 6/4/3) small enough
// for exhaustive finite-difference checks.
NetworkConfig tiny_config();
// Resolves "table1" | "desk" | "tiny"; throws ConfigError on unknown names.
NetworkConfig preset_config(const std::string& name);

std::string config_to_json(const NetworkConfig& cfg);
NetworkConfig config_from_json(const std::string& json_text);

}  // namespace pvmdnn
