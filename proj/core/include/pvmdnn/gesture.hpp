#pragma once

// Synthetic two-arm waving gestures: deterministic frame rendering, sinusoid
// joint trajectories, population (softmax) coding of joint angles, and the
// fixed 16-pattern taxonomy (lead arm x per-arm amplitude).

#include <cstdint>
#include <vector>

#include "pvmdnn/dataset.hpp"

namespace pvmdnn {

// Population-coding layout: per joint, `units` Gaussian-tuned channels with
// centers spanning [theta_min, theta_max], normalized to a softmax group.
struct CodingConfig {
  int groups = 2;
  int units = 10;
  double theta_min = -1.0;  // radians around the home position
  double theta_max = 1.0;
  // Tuning width, 1.1 x the center spacing: wide enough that the weighted-
  // mean decode interpolates linearly between centers (narrow tunings snap
  // to the nearest center), narrow enough that the inward bias near the
  // range edges stays ~1e-5 across the gesture working range. Swept
  // numerically; 1.5 x spacing already misses the peak-to-peak bound.
  double sigma = 1.1 * (2.0 / 9.0);

  double spacing() const { return (theta_max - theta_min) / (units - 1); }
  double center(int i) const { return theta_min + spacing() * i; }
};

inline constexpr double kFullSwing = 0.8;  // radians peak-to-peak at amplitude 1.0

// Population-codes two joint angles into groups x units probabilities.
std::vector<double> encode_joints(std::span<const double> angles, const CodingConfig& coding);
// Probability-weighted mean of the channel centers, one angle per group.
std::vector<double> decode_joints(std::span<const double> code, const CodingConfig& coding);

// Renders the fixed torso/head silhouette with two arm segments whose elbow
// angles are the inputs. Pure function of the angles; grayscale in [-1, 1].
// Out-of-range angles are clamped (reported through `clamped` if non-null).
// Swapping the two angles mirrors the frame horizontally, exactly.
MapStack render_frame(double left_angle, double right_angle, int height, int width,
                      const CodingConfig& coding, bool* clamped = nullptr);

// Joint trajectories for one gesture: the leading arm starts at t = 0, the
// other arm starts after the phase offset; both-lead moves both from t = 0;
// every sequence starts at the shared home position.
std::vector<std::vector<double>> gesture_joints(const GestureSpec& spec);

SequencePair synth_sequence(const GestureSpec& spec, const CodingConfig& coding,
                            int image_height, int image_width, int id = 0);

// The 16 gesture specs spanning the taxonomy, in a fixed order whose first
// four entries (both/full, left/full, right/full, both/half) form the
// desk-scale subset.
std::vector<GestureSpec> gesture_table(int length);

// Builds `subset` sequences (1..16) of length T. Synthesis itself is
// deterministic; the seed is part of the interface for stream-splitting
// consistency and reserved for future stochastic variants.
Dataset build_dataset(std::uint64_t seed, int length, int subset = 16,
                      const CodingConfig& coding = {}, int image_height = 48,
                      int image_width = 64);

struct HomeIo {
  MapStack frame;
  std::vector<double> code;
  std::vector<double> joints;
};
// The shared home-position observation every sequence starts from.
HomeIo make_home_io(const CodingConfig& coding, int image_height, int image_width);

// A test stream: chosen primitives concatenated in order, with seeded
// additive Gaussian jitter on the joint angles (codes re-encoded from the
// jittered joints; frames stay clean). Clean joints are kept as ground truth.
struct ConcatStream {
  SequencePair seq;                               // observed stream (jittered codes)
  std::vector<int> schedule;                      // primitive id per step
  std::vector<std::vector<double>> clean_joints;  // pre-jitter joints per step
};
ConcatStream concat_stream(const Dataset& ds, const std::vector<int>& ids,
                           double jitter_sigma, std::uint64_t seed,
                           const CodingConfig& coding = {});

}  // namespace pvmdnn
