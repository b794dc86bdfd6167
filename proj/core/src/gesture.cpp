#include "pvmdnn/gesture.hpp"

#include <algorithm>
#include <cmath>

#include "pvmdnn/rng.hpp"

namespace pvmdnn {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Distance from point (u, r) to the segment (ua, ra)-(ub, rb).
double segment_dist(double u, double r, double ua, double ra, double ub, double rb) {
  const double du = ub - ua;
  const double dr = rb - ra;
  const double len2 = du * du + dr * dr;
  double t = len2 > 0.0 ? ((u - ua) * du + (r - ra) * dr) / len2 : 0.0;
  t = clamp01(t);
  const double pu = ua + t * du;
  const double pr = ra + t * dr;
  return std::hypot(u - pu, r - pr);
}

// Smooth edge: full ink inside, ~5px falloff. The wide transition keeps the
// frames low-frequency enough for the narrow reduced-map configurations to
// reconstruct them.
double edge(double thickness, double d) { return clamp01((thickness + 2.5 - d) / 5.0); }

// Scene background sits at a mid-dark gray rather than full black: a target
// well inside the output tanh's linear range, not at its asymptote.
constexpr double kBackground = -0.55;

// Arm ink in arm-local coordinates: u grows outward from the body midline,
// r grows downward. The same function serves both arms, so a mirrored query
// with swapped angles reproduces the frame exactly.
double arm_ink(double u, double r, double angle) {
  // upper arm, fixed
  const double shoulder_u = 7.0, shoulder_r = 18.0;
  const double elbow_u = 13.0, elbow_r = 24.0;
  double ink = edge(2.8, segment_dist(u, r, shoulder_u, shoulder_r, elbow_u, elbow_r));
  // forearm, hinged at the elbow; joint angle 0 rests on an outward-up diagonal
  const double phi = 0.9 + angle;
  const double len = 13.0;
  const double tip_u = elbow_u + len * std::sin(phi);
  const double tip_r = elbow_r - len * std::cos(phi);
  ink = std::max(ink, edge(2.8, segment_dist(u, r, elbow_u, elbow_r, tip_u, tip_r)));
  return ink;
}

double body_ink(double adx, double r) {
  // head disc and torso capsule on the midline
  const double head = edge(5.5, std::hypot(adx, r - 9.0));
  const double torso = edge(7.0, segment_dist(adx, r, 0.0, 17.0, 0.0, 38.0));
  return std::max(head, torso);
}

}  // namespace

std::vector<double> encode_joints(std::span<const double> angles, const CodingConfig& coding) {
  if (static_cast<int>(angles.size()) != coding.groups) {
    throw ConfigError("encode_joints: expected one angle per group");
  }
  std::vector<double> code(static_cast<std::size_t>(coding.groups) * coding.units, 0.0);
  for (int g = 0; g < coding.groups; ++g) {
    double* cg = code.data() + static_cast<std::size_t>(g) * coding.units;
    double sum = 0.0;
    for (int i = 0; i < coding.units; ++i) {
      const double d = (angles[g] - coding.center(i)) / coding.sigma;
      cg[i] = std::exp(-d * d);
      sum += cg[i];
    }
    for (int i = 0; i < coding.units; ++i) cg[i] /= sum;
  }
  return code;
}

std::vector<double> decode_joints(std::span<const double> code, const CodingConfig& coding) {
  if (static_cast<int>(code.size()) != coding.groups * coding.units) {
    throw ConfigError("decode_joints: code length does not match the coding layout");
  }
  std::vector<double> angles(coding.groups, 0.0);
  for (int g = 0; g < coding.groups; ++g) {
    const double* cg = code.data() + static_cast<std::size_t>(g) * coding.units;
    double acc = 0.0, mass = 0.0;
    for (int i = 0; i < coding.units; ++i) {
      acc += cg[i] * coding.center(i);
      mass += cg[i];
    }
    angles[g] = acc / mass;
  }
  return angles;
}

MapStack render_frame(double left_angle, double right_angle, int height, int width,
                      const CodingConfig& coding, bool* clamped) {
  bool hit = false;
  auto clamp_angle = [&](double a) {
    if (a < coding.theta_min) {
      hit = true;
      return coding.theta_min;
    }
    if (a > coding.theta_max) {
      hit = true;
      return coding.theta_max;
    }
    return a;
  };
  const double la = clamp_angle(left_angle);
  const double ra = clamp_angle(right_angle);
  if (clamped != nullptr) *clamped = hit;

  const double mid = (width - 1) * 0.5;  // 31.5 for the 64-wide canvas
  MapStack frame(1, height, width);
  for (int y = 0; y < height; ++y) {
    const double r = static_cast<double>(y);
    for (int x = 0; x < width; ++x) {
      const double u_right = static_cast<double>(x) - mid;  // exact for half-integer mid
      const double u_left = mid - static_cast<double>(x);
      double ink = 0.8 * body_ink(std::fabs(u_right), r);
      ink = std::max(ink, arm_ink(u_left, r, la));
      ink = std::max(ink, arm_ink(u_right, r, ra));
      frame.at(0, y, x) = kBackground + (1.0 - kBackground) * ink;
    }
  }
  return frame;
}

std::vector<std::vector<double>> gesture_joints(const GestureSpec& spec) {
  if (spec.length < 1 || spec.period < 1) {
    throw ConfigError("gesture_joints: length and period must be positive");
  }
  const double amp_l = spec.amp_left * kFullSwing * 0.5;
  const double amp_r = spec.amp_right * kFullSwing * 0.5;
  const int off_l = (spec.lead == Lead::right) ? spec.phase_offset : 0;
  const int off_r = (spec.lead == Lead::left) ? spec.phase_offset : 0;
  const double omega = kTwoPi / spec.period;

  std::vector<std::vector<double>> joints(spec.length, std::vector<double>(2, 0.0));
  for (int t = 0; t < spec.length; ++t) {
    joints[t][0] = (t < off_l) ? 0.0 : amp_l * std::sin(omega * (t - off_l));
    joints[t][1] = (t < off_r) ? 0.0 : amp_r * std::sin(omega * (t - off_r));
  }
  return joints;
}

SequencePair synth_sequence(const GestureSpec& spec, const CodingConfig& coding,
                            int image_height, int image_width, int id) {
  SequencePair s;
  s.id = id;
  s.spec = spec;
  s.joints = gesture_joints(spec);
  s.frames.reserve(s.joints.size());
  s.codes.reserve(s.joints.size());
  for (const auto& j : s.joints) {
    s.frames.push_back(render_frame(j[0], j[1], image_height, image_width, coding));
    s.codes.push_back(encode_joints(j, coding));
  }
  return s;
}

std::vector<GestureSpec> gesture_table(int length) {
  auto spec = [length](Lead lead, double al, double ar) {
    GestureSpec g;
    g.lead = lead;
    g.amp_left = al;
    g.amp_right = ar;
    g.length = length;
    return g;
  };
  // Fixed enumeration of the lead x amplitude taxonomy. The first four rows
  // are the desk-scale subset; the null gesture (both arms still) is not a
  // member.
  return {
      spec(Lead::both, 1.0, 1.0),   spec(Lead::left, 1.0, 1.0),
      spec(Lead::right, 1.0, 1.0),  spec(Lead::both, 0.5, 0.5),
      spec(Lead::left, 1.0, 0.5),   spec(Lead::right, 1.0, 0.5),
      spec(Lead::both, 1.0, 0.5),   spec(Lead::both, 0.5, 1.0),
      spec(Lead::left, 0.5, 1.0),   spec(Lead::right, 0.5, 1.0),
      spec(Lead::both, 1.0, 0.0),   spec(Lead::both, 0.0, 1.0),
      spec(Lead::left, 0.5, 0.5),   spec(Lead::right, 0.5, 0.5),
      spec(Lead::both, 0.5, 0.0),   spec(Lead::both, 0.0, 0.5),
  };
}

Dataset build_dataset(std::uint64_t /*seed*/, int length, int subset,
                      const CodingConfig& coding, int image_height, int image_width) {
  if (subset < 1 || subset > 16) {
    throw ConfigError("build_dataset: subset must be between 1 and 16");
  }
  Dataset ds;
  ds.image_height = image_height;
  ds.image_width = image_width;
  ds.num_joints = coding.groups;
  ds.code_len = coding.groups * coding.units;
  const auto table = gesture_table(length);
  for (int i = 0; i < subset; ++i) {
    ds.sequences.push_back(synth_sequence(table[i], coding, image_height, image_width, i));
  }
  return ds;
}

HomeIo make_home_io(const CodingConfig& coding, int image_height, int image_width) {
  HomeIo io;
  io.joints.assign(coding.groups, 0.0);
  io.frame = render_frame(0.0, 0.0, image_height, image_width, coding);
  io.code = encode_joints(io.joints, coding);
  return io;
}

ConcatStream concat_stream(const Dataset& ds, const std::vector<int>& ids,
                           double jitter_sigma, std::uint64_t seed,
                           const CodingConfig& coding) {
  if (ids.empty()) throw ConfigError("concat_stream: need at least one primitive id");
  ConcatStream out;
  out.seq.id = 0;
  Rng rng(derive_seed(seed, "jitter"));
  for (int id : ids) {
    const SequencePair* src = nullptr;
    for (const auto& s : ds.sequences) {
      if (s.id == id) {
        src = &s;
        break;
      }
    }
    if (src == nullptr) {
      throw ConfigError("concat_stream: primitive " + std::to_string(id) + " not in dataset");
    }
    out.seq.spec = src->spec;
    for (int t = 0; t < src->length(); ++t) {
      out.seq.frames.push_back(src->frames[t]);
      out.clean_joints.push_back(src->joints[t]);
      std::vector<double> jj = src->joints[t];
      if (jitter_sigma > 0.0) {
        for (double& a : jj) {
          a = std::clamp(a + jitter_sigma * rng.next_gaussian(), coding.theta_min,
                         coding.theta_max);
        }
      }
      out.seq.joints.push_back(jj);
      out.seq.codes.push_back(encode_joints(jj, coding));
      out.schedule.push_back(id);
    }
  }
  return out;
}

}  // namespace pvmdnn
