#pragma once

// Visuo-proprioceptive sequence data and its binary container:
// magic "PVMD-DS", version u16, global extents, per-sequence manifest
// (id, length, gesture descriptor), float32 blobs (frames, joints, codes)
// in manifest order, trailing CRC32.

#include <cstdint>
#include <string>
#include <vector>

#include "pvmdnn/tensor.hpp"

namespace pvmdnn {

enum class Lead : std::uint8_t { left = 0, right = 1, both = 2 };

// Descriptor of one synthetic two-arm gesture.
struct GestureSpec {
  Lead lead = Lead::both;
  double amp_left = 1.0;   // fraction of the full swing: 1.0, 0.5 or 0.0
  double amp_right = 1.0;
  int period = 20;         // steps per full wave
  int length = 100;        // sequence length T
  int phase_offset = 10;   // delay of the non-leading arm, steps

  bool operator==(const GestureSpec&) const = default;
};

// Aligned visual frame sequence and joint-angle sequence, raw and coded.
struct SequencePair {
  int id = 0;
  GestureSpec spec;
  std::vector<MapStack> frames;             // T x (1 x h x w), values in [-1, 1]
  std::vector<std::vector<double>> joints;  // T x 2, radians
  std::vector<std::vector<double>> codes;   // T x code_len, softmax groups

  int length() const { return static_cast<int>(frames.size()); }
};

struct Dataset {
  int image_height = 48;
  int image_width = 64;
  int num_joints = 2;
  int code_len = 20;
  std::vector<SequencePair> sequences;
};

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace pvmdnn
