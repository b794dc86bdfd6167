#include "pvmdnn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace pvmdnn {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

// One-sided Jacobi: rotates column pairs of M (and accumulates the rotations
// in V) until all columns are pairwise orthogonal. M ends as U * diag(sigma).
void one_sided_jacobi(Matrix& m, Matrix& v) {
  const int n = m.rows;
  const int c = m.cols;
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) v.at(i, j) = (i == j) ? 1.0 : 0.0;
  }
  const double eps = 1e-14;
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < c - 1; ++p) {
      for (int q = p + 1; q < c; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (int r = 0; r < n; ++r) {
          const double x = m.at(r, p);
          const double y = m.at(r, q);
          app += x * x;
          aqq += y * y;
          apq += x * y;
        }
        if (std::abs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) continue;
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (int r = 0; r < n; ++r) {
          const double x = m.at(r, p);
          const double y = m.at(r, q);
          m.at(r, p) = cs * x - sn * y;
          m.at(r, q) = sn * x + cs * y;
        }
        for (int r = 0; r < c; ++r) {
          const double x = v.at(r, p);
          const double y = v.at(r, q);
          v.at(r, p) = cs * x - sn * y;
          v.at(r, q) = sn * x + cs * y;
        }
      }
    }
    if (!rotated) break;
  }
}

}  // namespace

PcaResult pca(const Matrix& data, int k) {
  const int n = data.rows;
  const int d = data.cols;
  require(n >= 2, "pca: need at least two rows");
  require(k >= 1 && k <= std::min(n, d), "pca: k exceeds min(rows, cols)");

  PcaResult out;
  out.mean.assign(d, 0.0);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < d; ++c) out.mean[c] += data.at(r, c);
  }
  for (double& m : out.mean) m /= n;

  Matrix centered(n, d);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < d; ++c) centered.at(r, c) = data.at(r, c) - out.mean[c];
  }

  // Jacobi on the thin orientation: columns = min(n, d).
  const bool wide = d > n;
  Matrix work = wide ? Matrix(d, n) : centered;
  if (wide) {
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < d; ++c) work.at(c, r) = centered.at(r, c);
    }
  }
  const int m = work.cols;
  Matrix v(m, m);
  one_sided_jacobi(work, v);

  std::vector<double> sigma(m, 0.0);
  double total_var = 0.0;
  for (int j = 0; j < m; ++j) {
    double s2 = 0.0;
    for (int r = 0; r < work.rows; ++r) s2 += work.at(r, j) * work.at(r, j);
    sigma[j] = std::sqrt(s2);
    total_var += s2;
  }
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&sigma](int a, int b) { return sigma[a] > sigma[b]; });

  out.components = Matrix(k, d);
  out.projections = Matrix(n, k);
  out.explained_ratio.assign(k, 0.0);
  for (int j = 0; j < k; ++j) {
    const int col = order[j];
    const double s = sigma[col];
    out.explained_ratio[j] = total_var > 0.0 ? (s * s) / total_var : 0.0;
    // components: the d-dimensional singular directions; projections: the
    // n-dimensional side scaled by sigma.
    if (!wide) {
      // centered = Q V^T, columns of V are the directions.
      for (int c = 0; c < d; ++c) out.components.at(j, c) = v.at(c, col);
      for (int r = 0; r < n; ++r) {
        out.projections.at(r, j) = s > 0.0 ? work.at(r, col) : 0.0;
      }
    } else {
      // centered^T = Q V^T: Q's columns are the d-dim directions (once
      // normalized), V's columns give the projections scaled by sigma.
      for (int c = 0; c < d; ++c) {
        out.components.at(j, c) = s > 0.0 ? work.at(c, col) / s : 0.0;
      }
      for (int r = 0; r < n; ++r) out.projections.at(r, j) = s * v.at(r, col);
    }
  }

  // Sign convention: the largest-magnitude entry of each component is
  // positive; projections flip with their component.
  for (int j = 0; j < k; ++j) {
    int arg = 0;
    double best = 0.0;
    for (int c = 0; c < d; ++c) {
      const double a = std::abs(out.components.at(j, c));
      if (a > best) {
        best = a;
        arg = c;
      }
    }
    if (out.components.at(j, arg) < 0.0) {
      for (int c = 0; c < d; ++c) out.components.at(j, c) = -out.components.at(j, c);
      for (int r = 0; r < n; ++r) out.projections.at(r, j) = -out.projections.at(r, j);
    }
  }
  return out;
}

std::vector<double> pca_project(const PcaResult& basis, std::span<const double> row) {
  require(static_cast<int>(row.size()) == basis.components.cols,
          "pca_project: row length does not match the basis dimension");
  std::vector<double> out(basis.components.rows, 0.0);
  for (int j = 0; j < basis.components.rows; ++j) {
    double acc = 0.0;
    for (int c = 0; c < basis.components.cols; ++c) {
      acc += (row[c] - basis.mean[c]) * basis.components.at(j, c);
    }
    out[j] = acc;
  }
  return out;
}

InitialStatePca project_initial_states(const NetworkConfig& cfg, const Parameters& params,
                                       int k) {
  const int n = static_cast<int>(params.initial_states.size());
  require(n >= 2, "project_initial_states: need at least two sequences");

  const int d_vs = cfg.v_slow.maps * cfg.v_slow.height * cfg.v_slow.width;
  Matrix vs(n, d_vs);
  Matrix ps(n, cfg.p_slow.neurons);
  for (int s = 0; s < n; ++s) {
    const auto& st = params.initial_states[s];
    for (int c = 0; c < d_vs; ++c) vs.at(s, c) = st.vs.data[c];
    for (int c = 0; c < cfg.p_slow.neurons; ++c) ps.at(s, c) = st.ps[c];
  }
  InitialStatePca out;
  out.v_slow = pca(vs, k);
  out.p_slow = pca(ps, k);
  return out;
}

MetricsTable error_metrics(const SequencePair& predicted, const SequencePair& target,
                           const CodingConfig& coding) {
  require(predicted.length() == target.length(), "error_metrics: sequence lengths differ");
  const int T = predicted.length();
  require(T > 0, "error_metrics: empty sequences");

  MetricsTable table;
  table.mean.joint_abs_err.assign(coding.groups, 0.0);
  for (int t = 0; t < T; ++t) {
    MetricsRow row;
    row.step = t;
    row.visual_mse = sse_loss(predicted.frames[t].data, target.frames[t].data) /
                     static_cast<double>(predicted.frames[t].size());
    row.proprio_kl = kl_loss(target.codes[t], predicted.codes[t]).value;
    const auto jp = decode_joints(predicted.codes[t], coding);
    const auto jt = decode_joints(target.codes[t], coding);
    row.joint_abs_err.resize(coding.groups);
    for (int j = 0; j < coding.groups; ++j) row.joint_abs_err[j] = std::abs(jp[j] - jt[j]);

    table.mean.visual_mse += row.visual_mse;
    table.mean.proprio_kl += row.proprio_kl;
    for (int j = 0; j < coding.groups; ++j) table.mean.joint_abs_err[j] += row.joint_abs_err[j];
    table.rows.push_back(std::move(row));
  }
  table.mean.step = T;
  table.mean.visual_mse /= T;
  table.mean.proprio_kl /= T;
  for (double& j : table.mean.joint_abs_err) j /= T;
  return table;
}

void write_metrics_csv(const std::string& path, const MetricsTable& table) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw IoError("cannot open '" + path + "' for writing");
  std::fprintf(f, "step,visual_mse,proprio_kl");
  const int joints = static_cast<int>(table.mean.joint_abs_err.size());
  for (int j = 0; j < joints; ++j) std::fprintf(f, ",joint%d_abs_err", j);
  std::fprintf(f, "\n");
  auto row_out = [&f, joints](const char* tag, const MetricsRow& r) {
    if (tag != nullptr) {
      std::fprintf(f, "%s", tag);
    } else {
      std::fprintf(f, "%d", r.step);
    }
    std::fprintf(f, ",%.12g,%.12g", r.visual_mse, r.proprio_kl);
    for (int j = 0; j < joints; ++j) std::fprintf(f, ",%.12g", r.joint_abs_err[j]);
    std::fprintf(f, "\n");
  };
  for (const auto& r : table.rows) row_out(nullptr, r);
  row_out("mean", table.mean);
  if (std::fclose(f) != 0) throw IoError("write to '" + path + "' failed");
}

std::vector<int> classify_inferred_intent(std::span<const HiddenState> inferred,
                                          std::span<const HiddenState> references) {
  require(!references.empty(), "classify_inferred_intent: no reference states");
  std::vector<int> labels;
  labels.reserve(inferred.size());
  for (const auto& st : inferred) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < references.size(); ++r) {
      double d = 0.0;
      for (std::size_t i = 0; i < st.vs.data.size(); ++i) {
        const double diff = st.vs.data[i] - references[r].vs.data[i];
        d += diff * diff;
      }
      for (std::size_t i = 0; i < st.ps.size(); ++i) {
        const double diff = st.ps[i] - references[r].ps[i];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(r);
      }
    }
    labels.push_back(best);
  }
  return labels;
}

double schedule_accuracy(std::span<const int> labels, std::span<const int> schedule,
                         int burn_in) {
  require(labels.size() == schedule.size(), "schedule_accuracy: length mismatch");
  require(burn_in >= 0 && burn_in < static_cast<int>(labels.size()),
          "schedule_accuracy: burn-in out of range");
  int hits = 0, count = 0;
  for (std::size_t t = static_cast<std::size_t>(burn_in); t < labels.size(); ++t) {
    count += 1;
    hits += (labels[t] == schedule[t]) ? 1 : 0;
  }
  return static_cast<double>(hits) / count;
}

std::vector<std::string> dump_frames(std::span<const MapStack> frames,
                                     const std::string& directory, const std::string& prefix) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  std::vector<std::string> paths;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const MapStack& fr = frames[t];
    require(fr.maps == 1, "dump_frames: expected single-map frames");
    char name[64];
    std::snprintf(name, sizeof(name), "%s%05zu.pgm", prefix.c_str(), t);
    const std::string path = (std::filesystem::path(directory) / name).string();
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw IoError("cannot open '" + path + "' for writing");
    std::fprintf(f, "P5\n%d %d\n255\n", fr.width, fr.height);
    std::vector<unsigned char> bytes(fr.data.size());
    for (std::size_t i = 0; i < fr.data.size(); ++i) {
      const double v = std::floor(127.5 * (fr.data[i] + 1.0) + 0.5);  // round half up
      bytes[i] = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
    }
    if (std::fwrite(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
      std::fclose(f);
      throw IoError("write to '" + path + "' failed");
    }
    if (std::fclose(f) != 0) throw IoError("write to '" + path + "' failed");
    paths.push_back(path);
  }
  return paths;
}

MapStack read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) {
    throw IoError("'" + path + "' is not an 8-bit P5 PGM");
  }
  in.get();  // single whitespace after the header
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw IoError("'" + path + "' is truncated");
  MapStack fr(1, h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    fr.data[i] = bytes[i] / 127.5 - 1.0;
  }
  return fr;
}

}  // namespace pvmdnn
