// Command-line front end: dataset synthesis, training, closed-loop
// simulation, sensory entrainment, error regression, gradient checking and
// analysis over the shared binary containers.
//
// Exit codes: 0 success, 2 usage/config error, 3 numerical failure,
// 4 I/O error.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "pvmdnn/analysis.hpp"
#include "pvmdnn/checkpoint.hpp"
#include "pvmdnn/ers.hpp"
#include "pvmdnn/gesture.hpp"
#include "pvmdnn/rng.hpp"
#include "pvmdnn/trainer.hpp"

namespace fs = std::filesystem;
using namespace pvmdnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

std::string out_base(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("PVMDNN_OUT_DIR")) return env;
  return ".";
}

int env_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("PVMDNN_THREADS")) return std::atoi(env);
  return 0;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

NetworkConfig resolve_config(const std::string& preset, const std::string& config_path) {
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config '" + config_path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
  }
  return preset_config(preset);
}

Modality parse_modality(const std::string& s) {
  if (s == "visual" || s == "vision") return Modality::visual;
  if (s == "proprioceptive" || s == "proprio") return Modality::proprioceptive;
  if (s == "both") return Modality::both;
  throw ConfigError("unknown modality '" + s + "' (visual | proprioceptive | both)");
}

std::vector<int> parse_id_list(const std::string& s) {
  std::vector<int> ids;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) ids.push_back(std::stoi(tok));
  }
  return ids;
}

// The shared home-position observation used as the first input for
// closed-loop generation (same for every primitive).
HomeIo home_for(const NetworkConfig& cfg) {
  CodingConfig coding;
  return make_home_io(coding, cfg.image_height, cfg.image_width);
}

void write_joints_csv(const std::string& path, const GeneratedSeq& gen,
                      const CodingConfig& coding) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw IoError("cannot open '" + path + "' for writing");
  std::fprintf(f, "step");
  for (int j = 0; j < coding.groups; ++j) std::fprintf(f, ",joint%d", j);
  std::fprintf(f, "\n");
  for (std::size_t t = 0; t < gen.p_out.size(); ++t) {
    const auto joints = decode_joints(gen.p_out[t], coding);
    std::fprintf(f, "%zu", t + 1);
    for (double a : joints) std::fprintf(f, ",%.12g", a);
    std::fprintf(f, "\n");
  }
  if (std::fclose(f) != 0) throw IoError("write to '" + path + "' failed");
}

// Predictions share the dataset container: frames = visual predictions,
// codes = proprioceptive predictions, joints = their decoded angles.
// Slot 0 carries the stream's seed observation, so indices align with the
// observed stream.
Dataset predictions_as_dataset(const NetworkConfig& cfg, const SequencePair& obs,
                               const std::vector<MapStack>& v_pred,
                               const std::vector<std::vector<double>>& p_pred) {
  CodingConfig coding;
  Dataset out;
  out.image_height = cfg.image_height;
  out.image_width = cfg.image_width;
  out.num_joints = coding.groups;
  out.code_len = cfg.code_len();
  SequencePair seq;
  seq.id = obs.id;
  seq.spec = obs.spec;
  for (std::size_t t = 0; t < v_pred.size(); ++t) {
    seq.frames.push_back(v_pred[t]);
    seq.codes.push_back(p_pred[t]);
    seq.joints.push_back(decode_joints(p_pred[t], coding));
  }
  out.sequences.push_back(std::move(seq));
  return out;
}

SequencePair concatenate_stream_file(const Dataset& ds, std::vector<int>* schedule) {
  SequencePair stream;
  stream.id = 0;
  for (const auto& s : ds.sequences) {
    for (int t = 0; t < s.length(); ++t) {
      stream.frames.push_back(s.frames[t]);
      stream.codes.push_back(s.codes[t]);
      stream.joints.push_back(s.joints[t]);
      if (schedule != nullptr) schedule->push_back(s.id);
    }
  }
  return stream;
}

// --- subcommand bodies -----------------------------------------------------

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 0;
  int steps = 100;
  int subset = 16;
  std::string concat;   // e.g. "0,1,2,3": emit a concatenated test stream
  double jitter = 0.0;  // proprioceptive jitter, radians
};

int cmd_synth(const SynthArgs& a) {
  const std::string base = out_base(a.out);
  ensure_dir(base);
  Dataset ds = build_dataset(a.seed, a.steps, a.subset);

  if (a.concat.empty()) {
    const std::string path = (fs::path(base) / "dataset.pvmdds").string();
    save_dataset(path, ds);
    std::printf("wrote %s: %zu sequences of %d steps (%dx%d frames, %d-unit codes)\n",
                path.c_str(), ds.sequences.size(), a.steps, ds.image_width, ds.image_height,
                ds.code_len);
    for (const auto& s : ds.sequences) {
      std::printf("  primitive %2d: lead=%d amp=(%.1f, %.1f)\n", s.id,
                  static_cast<int>(s.spec.lead), s.spec.amp_left, s.spec.amp_right);
    }
    return kExitOk;
  }

  // Concatenated test stream with seeded proprioceptive jitter; stored as
  // per-segment sequences so consumers can recover the schedule.
  const std::vector<int> ids = parse_id_list(a.concat);
  ConcatStream stream = concat_stream(ds, ids, a.jitter, a.seed);
  Dataset out;
  out.image_height = ds.image_height;
  out.image_width = ds.image_width;
  out.num_joints = ds.num_joints;
  out.code_len = ds.code_len;
  int offset = 0;
  for (int id : ids) {
    const SequencePair& src = ds.sequences[id];
    SequencePair seg;
    seg.id = id;
    seg.spec = src.spec;
    for (int t = 0; t < src.length(); ++t, ++offset) {
      seg.frames.push_back(stream.seq.frames[offset]);
      seg.joints.push_back(stream.seq.joints[offset]);
      seg.codes.push_back(stream.seq.codes[offset]);
    }
    out.sequences.push_back(std::move(seg));
  }
  const std::string path = (fs::path(base) / "stream.pvmdds").string();
  save_dataset(path, out);
  std::printf("wrote %s: %zu concatenated segments, %zu steps, jitter sigma %.4g rad\n",
              path.c_str(), out.sequences.size(), stream.seq.frames.size(), a.jitter);
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string preset = "table1";
  std::string config_path;
  std::string out;
  int epochs = 3000;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int ckpt_interval = 1000;
  int threads = 0;
  double w_visual = 1.0;
  double w_proprio = 1.0;
};

int cmd_train(const TrainArgs& a) {
  const NetworkConfig cfg = resolve_config(a.preset, a.config_path);
  const std::string base = out_base(a.out);
  ensure_dir(base);

  Dataset ds = load_dataset(a.data);
  if (ds.sequences.empty()) throw ConfigError("dataset '" + a.data + "' has no sequences");

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.learning_rate = a.lr;
  tc.seed = a.seed;
  tc.checkpoint_interval = a.ckpt_interval;
  tc.threads = env_threads(a.threads);
  tc.w_visual = a.w_visual;
  tc.w_proprio = a.w_proprio;

  const std::string loss_path = (fs::path(base) / "loss.csv").string();
  std::FILE* loss_csv = std::fopen(loss_path.c_str(), "w");
  if (loss_csv == nullptr) throw IoError("cannot open '" + loss_path + "' for writing");
  std::fprintf(loss_csv, "epoch,E,E_V,E_P,wall_seconds\n");

  TrainSinks sinks;
  sinks.on_epoch = [loss_csv](const EpochRecord& r) {
    std::fprintf(loss_csv, "%d,%.12g,%.12g,%.12g,%.3f\n", r.epoch, r.total, r.visual, r.proprio,
                 r.wall_seconds);
  };
  sinks.on_checkpoint = [&](int epoch, const Parameters& p) {
    char name[64];
    std::snprintf(name, sizeof(name), "ckpt_%06d.pvmd", epoch);
    save_checkpoint((fs::path(base) / name).string(), cfg, p);
  };

  TrainResult result = train(cfg, tc, ds.sequences, sinks);
  std::fclose(loss_csv);

  if (result.diverged) {
    save_checkpoint((fs::path(base) / "last_good.pvmd").string(), cfg, result.params);
    std::fprintf(stderr, "training diverged after epoch %d; last good checkpoint kept\n",
                 result.last_good_epoch);
    return kExitNumerical;
  }
  save_checkpoint((fs::path(base) / "final.pvmd").string(), cfg, result.params);
  std::printf("trained %d epochs: E %.6g -> %.6g (loss curve: %s)\n", a.epochs,
              result.history.front().total, result.history.back().total, loss_path.c_str());
  return kExitOk;
}

struct SimulateArgs {
  std::string ckpt;
  std::string out;
  int primitive = -1;  // -1 = all
  int steps = 99;
};

int cmd_simulate(const SimulateArgs& a) {
  Checkpoint ck = load_checkpoint(a.ckpt);
  const std::string base = out_base(a.out);
  ensure_dir(base);
  const HomeIo home = home_for(ck.config);
  CodingConfig coding;

  const int n = static_cast<int>(ck.params.initial_states.size());
  if (a.primitive >= n) throw ConfigError("checkpoint has no primitive " +
                                          std::to_string(a.primitive));
  for (int i = (a.primitive < 0 ? 0 : a.primitive); i < n; ++i) {
    GeneratedSeq gen = generate_closed_loop(ck.config, ck.params, ck.params.initial_states[i],
                                            home.frame, home.code, a.steps);
    char dirname[64];
    std::snprintf(dirname, sizeof(dirname), "primitive_%02d", i);
    const std::string dir = (fs::path(base) / dirname).string();
    dump_frames(gen.v_out, dir);
    write_joints_csv((fs::path(dir) / "joints.csv").string(), gen, coding);
    std::printf("primitive %d: %d closed-loop steps -> %s\n", i, a.steps, dir.c_str());
    if (a.primitive >= 0) break;
  }
  return kExitOk;
}

struct EntrainArgs {
  std::string ckpt;
  std::string data;
  std::string modality = "visual";
  std::string out;
};

int cmd_entrain(const EntrainArgs& a) {
  Checkpoint ck = load_checkpoint(a.ckpt);
  const std::string base = out_base(a.out);
  ensure_dir(base);

  Dataset ds = load_dataset(a.data);
  SequencePair stream = concatenate_stream_file(ds, nullptr);

  ErsConfig ec;
  ec.iterations = 0;  // entrainment baseline
  ec.modality = parse_modality(a.modality);
  ErsRun run = run_ers(ck.config, ck.params, stream, ec);

  const std::string pred_path = (fs::path(base) / "predictions.pvmdds").string();
  save_dataset(pred_path, predictions_as_dataset(ck.config, stream, run.v_pred, run.p_pred));
  write_ers_trace((fs::path(base) / "trace.csv").string(),
                  (fs::path(base) / "states.f32").string(), run);
  std::printf("entrained %zu steps (%s) -> %s\n", stream.frames.size(), a.modality.c_str(),
              pred_path.c_str());
  return kExitOk;
}

struct ErsArgs {
  std::string ckpt;
  std::string stream;
  std::string modality = "visual";
  std::string out;
  int window = 30;
  int iters = 50;
  double lr = 0.1;
  int start_primitive = -1;  // -1 = neutral start
};

int cmd_ers(const ErsArgs& a) {
  Checkpoint ck = load_checkpoint(a.ckpt);
  const std::string base = out_base(a.out);
  ensure_dir(base);

  Dataset ds = load_dataset(a.stream);
  SequencePair stream = concatenate_stream_file(ds, nullptr);

  ErsConfig ec;
  ec.window = a.window;
  ec.iterations = a.iters;
  ec.learning_rate = a.lr;
  ec.modality = parse_modality(a.modality);

  const HiddenState* start = nullptr;
  if (a.start_primitive >= 0) {
    if (a.start_primitive >= static_cast<int>(ck.params.initial_states.size())) {
      throw ConfigError("checkpoint has no primitive " + std::to_string(a.start_primitive));
    }
    start = &ck.params.initial_states[a.start_primitive];
  }

  ErsRun run = run_ers(ck.config, ck.params, stream, ec, start);
  write_ers_trace((fs::path(base) / "trace.csv").string(),
                  (fs::path(base) / "states.f32").string(), run);
  const std::string pred_path = (fs::path(base) / "predictions.pvmdds").string();
  save_dataset(pred_path, predictions_as_dataset(ck.config, stream, run.v_pred, run.p_pred));
  std::printf("ers over %zu steps (W=%d, %d rounds/step, lr %.3g, %s): "
              "%d steps saw a non-decreasing window loss\n",
              stream.frames.size(), a.window, a.iters, a.lr, a.modality.c_str(),
              run.loss_increase_steps);
  return kExitOk;
}

struct GradcheckArgs {
  std::string preset = "tiny";
  std::string config_path;
  double eps = 1e-5;
  double tol = 1e-3;
  std::uint64_t seed = 7;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const NetworkConfig cfg = resolve_config(a.preset, a.config_path);
  GradCheckReport report = grad_check(cfg, a.seed, a.eps, a.tol);
  for (const auto& e : report.tensors) {
    std::printf("%-18s rel_error %.3e\n", e.name.c_str(), e.rel_error);
  }
  std::printf("max relative error %.3e (tolerance %.1e): %s\n", report.max_rel_error, a.tol,
              report.pass ? "PASS" : "FAIL");
  return report.pass ? kExitOk : kExitNumerical;
}

struct AnalyzeArgs {
  std::string mode;
  std::string ckpt;
  std::string trace;     // trace CSV; sidecar expected next to it as states.f32
  std::string pred;      // predictions dataset (metrics)
  std::string data;      // reference dataset (metrics) / training data (pca)
  std::string stream;    // stream dataset (intent: schedule source)
  std::string out;
  std::string pca_fit = "train";  // train | joint
  int burn_in = 0;
};

std::vector<HiddenState> read_sidecar(const std::string& trace_csv, const NetworkConfig& cfg) {
  const fs::path sidecar = fs::path(trace_csv).parent_path() / "states.f32";
  std::ifstream in(sidecar, std::ios::binary);
  if (!in) throw IoError("cannot open sidecar '" + sidecar.string() + "'");
  std::vector<HiddenState> states;
  while (true) {
    HiddenState st = HiddenState::zeros(cfg);
    std::vector<float> buf(st.total_size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() == 0) break;
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float))) {
      throw IoError("sidecar '" + sidecar.string() + "' is truncated");
    }
    std::size_t k = 0;
    for (auto& r : state_refs(st)) {
      for (std::size_t i = 0; i < r.size; ++i) r.data[i] = buf[k++];
    }
    states.push_back(std::move(st));
  }
  return states;
}

void write_projection_csv(const std::string& path, const PcaResult& res,
                          const std::vector<int>& labels) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw IoError("cannot open '" + path + "' for writing");
  std::fprintf(f, "primitive,pc1,pc2\n");
  for (int r = 0; r < res.projections.rows; ++r) {
    std::fprintf(f, "%d,%.12g,%.12g\n", labels[r], res.projections.at(r, 0),
                 res.projections.at(r, 1));
  }
  if (std::fclose(f) != 0) throw IoError("write to '" + path + "' failed");
}

int cmd_analyze(const AnalyzeArgs& a) {
  const std::string base = out_base(a.out);
  ensure_dir(base);

  if (a.mode == "pca") {
    if (a.ckpt.empty()) throw ConfigError("analyze pca needs --ckpt");
    Checkpoint ck = load_checkpoint(a.ckpt);
    InitialStatePca res = project_initial_states(ck.config, ck.params, 2);
    std::vector<int> labels(ck.params.initial_states.size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i);
    write_projection_csv((fs::path(base) / "pca_vs.csv").string(), res.v_slow, labels);
    write_projection_csv((fs::path(base) / "pca_ps.csv").string(), res.p_slow, labels);
    std::printf("initial-state PCA: %zu primitives; explained (vs) %.3f/%.3f, (ps) %.3f/%.3f\n",
                labels.size(), res.v_slow.explained_ratio[0], res.v_slow.explained_ratio[1],
                res.p_slow.explained_ratio[0], res.p_slow.explained_ratio[1]);

    // Dynamic-activation PCA (training trajectories vs. inferred ERS states)
    // when a trace and the training data are also given.
    if (!a.trace.empty() && !a.data.empty()) {
      Dataset train_ds = load_dataset(a.data);
      const HomeIo home = home_for(ck.config);
      // collect slow-layer activations of closed-loop regenerations
      struct LayerRows {
        std::vector<std::vector<double>> rows;
        std::vector<int> labels;
      };
      LayerRows vs_rows, ps_rows, pf_rows;
      for (std::size_t i = 0; i < train_ds.sequences.size(); ++i) {
        std::vector<StepInput> inputs(train_ds.sequences[i].length() - 1);
        inputs[0] = {&home.frame, &home.code};
        Unroll roll;
        rollout(ck.config, ck.params, ck.params.initial_states[i], inputs, roll);
        for (const auto& rec : roll.steps) {
          vs_rows.rows.emplace_back(rec.state.act.vs.data.begin(), rec.state.act.vs.data.end());
          vs_rows.labels.push_back(train_ds.sequences[i].id);
          ps_rows.rows.emplace_back(rec.state.act.ps.begin(), rec.state.act.ps.end());
          ps_rows.labels.push_back(train_ds.sequences[i].id);
          pf_rows.rows.emplace_back(rec.state.act.pf.begin(), rec.state.act.pf.end());
          pf_rows.labels.push_back(train_ds.sequences[i].id);
        }
      }
      std::vector<HiddenState> inferred = read_sidecar(a.trace, ck.config);

      auto emit = [&](const char* name, LayerRows& lr,
                      const std::function<std::vector<double>(const HiddenState&)>& pick) {
        const int d = static_cast<int>(lr.rows[0].size());
        std::vector<std::vector<double>> test_rows;
        for (const auto& st : inferred) {
          // inferred states are internal states; compare activations
          std::vector<double> u = pick(st);
          for (double& x : u) x = scaled_tanh(x);
          test_rows.push_back(std::move(u));
        }
        const bool joint = a.pca_fit == "joint";
        const int n_train = static_cast<int>(lr.rows.size());
        const int n_fit = joint ? n_train + static_cast<int>(test_rows.size()) : n_train;
        Matrix m(n_fit, d);
        for (int r = 0; r < n_train; ++r) {
          for (int c = 0; c < d; ++c) m.at(r, c) = lr.rows[r][c];
        }
        if (joint) {
          for (std::size_t r = 0; r < test_rows.size(); ++r) {
            for (int c = 0; c < d; ++c) m.at(n_train + static_cast<int>(r), c) = test_rows[r][c];
          }
        }
        PcaResult basis = pca(m, 2);
        const std::string path = (fs::path(base) / (std::string("dyn_") + name + ".csv")).string();
        std::FILE* f = std::fopen(path.c_str(), "w");
        if (f == nullptr) throw IoError("cannot open '" + path + "' for writing");
        std::fprintf(f, "source,label,step,pc1,pc2\n");
        for (int r = 0; r < n_train; ++r) {
          auto pr = pca_project(basis, lr.rows[r]);
          std::fprintf(f, "train,%d,%d,%.12g,%.12g\n", lr.labels[r], r, pr[0], pr[1]);
        }
        for (std::size_t r = 0; r < test_rows.size(); ++r) {
          auto pr = pca_project(basis, test_rows[r]);
          std::fprintf(f, "test,-1,%zu,%.12g,%.12g\n", r, pr[0], pr[1]);
        }
        if (std::fclose(f) != 0) throw IoError("write to '" + path + "' failed");
      };
      emit("vs", vs_rows, [](const HiddenState& s) {
        return std::vector<double>(s.vs.data.begin(), s.vs.data.end());
      });
      emit("ps", ps_rows, [](const HiddenState& s) { return s.ps; });
      emit("pf", pf_rows, [](const HiddenState& s) { return s.pf; });
      std::printf("dynamic-activation PCA (fit=%s) written for vs/ps/pf\n", a.pca_fit.c_str());
    }
    return kExitOk;
  }

  if (a.mode == "metrics") {
    if (a.pred.empty() || a.data.empty()) throw ConfigError("analyze metrics needs --pred and --data");
    Dataset pred = load_dataset(a.pred);
    Dataset ref = load_dataset(a.data);
    SequencePair pred_seq = concatenate_stream_file(pred, nullptr);
    SequencePair ref_seq = concatenate_stream_file(ref, nullptr);
    CodingConfig coding;
    MetricsTable table = error_metrics(pred_seq, ref_seq, coding);
    const std::string path = (fs::path(base) / "metrics.csv").string();
    write_metrics_csv(path, table);
    std::printf("metrics over %zu steps -> %s (mean visual MSE %.6g, mean KL %.6g)\n",
                table.rows.size(), path.c_str(), table.mean.visual_mse, table.mean.proprio_kl);
    return kExitOk;
  }

  if (a.mode == "intent") {
    if (a.ckpt.empty() || a.trace.empty() || a.stream.empty()) {
      throw ConfigError("analyze intent needs --ckpt, --trace and --stream");
    }
    Checkpoint ck = load_checkpoint(a.ckpt);
    Dataset ds = load_dataset(a.stream);
    std::vector<int> schedule;
    concatenate_stream_file(ds, &schedule);
    std::vector<HiddenState> inferred = read_sidecar(a.trace, ck.config);
    if (inferred.size() != schedule.size()) {
      throw ConfigError("trace covers " + std::to_string(inferred.size()) +
                        " steps, stream has " + std::to_string(schedule.size()));
    }
    auto labels = classify_inferred_intent(inferred, ck.params.initial_states);
    // the inferred state at stream step t is the window-start state; align
    // the ground truth with the window start
    std::vector<int> truth(schedule.size());
    const int W = a.burn_in > 0 ? a.burn_in : 30;
    for (std::size_t t = 0; t < schedule.size(); ++t) {
      const int s0 = std::max(0, static_cast<int>(t) - W);
      truth[t] = schedule[s0];
    }
    const int burn = std::min<int>(W, static_cast<int>(schedule.size()) - 1);
    const double acc = schedule_accuracy(labels, truth, burn);

    const std::string path = (fs::path(base) / "intent.csv").string();
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (f == nullptr) throw IoError("cannot open '" + path + "' for writing");
    std::fprintf(f, "t,label,truth,correct\n");
    for (std::size_t t = 0; t < labels.size(); ++t) {
      std::fprintf(f, "%zu,%d,%d,%d\n", t, labels[t], truth[t],
                   labels[t] == truth[t] ? 1 : 0);
    }
    std::fprintf(f, "accuracy,%.6g,,\n", acc);
    if (std::fclose(f) != 0) throw IoError("write to '" + path + "' failed");
    std::printf("intent classification: post-burn-in accuracy %.3f -> %s\n", acc, path.c_str());
    return kExitOk;
  }

  throw ConfigError("unknown analyze mode '" + a.mode + "' (pca | metrics | intent)");
}

struct ConfigArgs {
  std::string preset = "table1";
  std::string out;  // file path; stdout when empty
};

int cmd_config(const ConfigArgs& a) {
  const std::string json = config_to_json(preset_config(a.preset));
  if (a.out.empty()) {
    std::printf("%s\n", json.c_str());
  } else {
    std::ofstream out(a.out);
    if (!out) throw IoError("cannot open '" + a.out + "' for writing");
    out << json << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"P-VMDNN: hierarchical visuo-proprioceptive prediction engine"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate the synthetic gesture dataset");
  s->add_option("--out", synth.out, "Output directory");
  s->add_option("--seed", synth.seed, "Seed for the jitter stream");
  s->add_option("--steps", synth.steps, "Sequence length T")->check(CLI::PositiveNumber);
  s->add_option("--subset", synth.subset, "First N primitives only")->check(CLI::Range(1, 16));
  s->add_option("--concat", synth.concat, "Comma-separated primitive ids: emit a test stream");
  s->add_option("--jitter", synth.jitter, "Gaussian joint jitter sigma (radians)");

  TrainArgs train_args;
  auto* t = app.add_subcommand("train", "Closed-loop BPTT training");
  t->add_option("--data", train_args.data, "Dataset file")->required();
  t->add_option("--preset", train_args.preset, "Config preset (table1 | desk | tiny)");
  t->add_option("--config", train_args.config_path, "Config JSON file (overrides preset)");
  t->add_option("--epochs", train_args.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  t->add_option("--lr", train_args.lr, "Learning rate");
  t->add_option("--seed", train_args.seed, "Master seed");
  t->add_option("--out", train_args.out, "Output directory");
  t->add_option("--ckpt-interval", train_args.ckpt_interval, "Epochs between checkpoints");
  t->add_option("--threads", train_args.threads, "Worker threads (0 = auto)");
  t->add_option("--w-visual", train_args.w_visual, "Visual loss weight");
  t->add_option("--w-proprio", train_args.w_proprio, "Proprioceptive loss weight");

  SimulateArgs sim;
  auto* si = app.add_subcommand("simulate", "Closed-loop mental simulation from a checkpoint");
  si->add_option("--ckpt", sim.ckpt, "Checkpoint file")->required();
  si->add_option("--primitive", sim.primitive, "Primitive id (-1 = all)");
  si->add_option("--steps", sim.steps, "Steps to generate")->check(CLI::PositiveNumber);
  si->add_option("--out", sim.out, "Output directory");

  EntrainArgs ent;
  auto* en = app.add_subcommand("entrain", "Open-loop sensory entrainment baseline");
  en->add_option("--ckpt", ent.ckpt, "Checkpoint file")->required();
  en->add_option("--data", ent.data, "Observation stream dataset")->required();
  en->add_option("--modality", ent.modality, "Entrained modality");
  en->add_option("--out", ent.out, "Output directory");

  ErsArgs ers;
  auto* e = app.add_subcommand("ers", "Online intention inference (error regression)");
  e->add_option("--ckpt", ers.ckpt, "Checkpoint file")->required();
  e->add_option("--stream", ers.stream, "Observation stream dataset")->required();
  e->add_option("--modality", ers.modality, "Minimized prediction error");
  e->add_option("--window", ers.window, "Temporal window W")->check(CLI::PositiveNumber);
  e->add_option("--iters", ers.iters, "Update rounds per step")->check(CLI::NonNegativeNumber);
  e->add_option("--lr", ers.lr, "Window-state learning rate");
  e->add_option("--start-primitive", ers.start_primitive,
                "Start from this primitive's trained initial state (-1 = neutral)");
  e->add_option("--out", ers.out, "Output directory");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  g->add_option("--preset", gc.preset, "Config preset (tiny recommended)");
  g->add_option("--config", gc.config_path, "Config JSON file (overrides preset)");
  g->add_option("--eps", gc.eps, "Central-difference step");
  g->add_option("--tol", gc.tol, "Per-tensor relative tolerance");
  g->add_option("--seed", gc.seed, "Problem seed");

  AnalyzeArgs an;
  auto* az = app.add_subcommand("analyze", "PCA, error metrics, intent classification");
  az->add_option("--mode", an.mode, "pca | metrics | intent")->required();
  az->add_option("--ckpt", an.ckpt, "Checkpoint file");
  az->add_option("--trace", an.trace, "ERS trace CSV (sidecar expected next to it)");
  az->add_option("--pred", an.pred, "Predictions dataset");
  az->add_option("--data", an.data, "Reference / training dataset");
  az->add_option("--stream", an.stream, "Stream dataset (intent schedule)");
  az->add_option("--pca-fit", an.pca_fit, "Dynamic PCA basis: train | joint");
  az->add_option("--burn-in", an.burn_in, "Window length for intent alignment");
  az->add_option("--out", an.out, "Output directory");

  ConfigArgs cfg_args;
  auto* c = app.add_subcommand("config", "Print or dump a preset configuration");
  c->add_option("--preset", cfg_args.preset, "Preset name");
  c->add_option("--out", cfg_args.out, "Write JSON here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return ex.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(train_args);
    if (*si) return cmd_simulate(sim);
    if (*en) return cmd_entrain(ent);
    if (*e) return cmd_ers(ers);
    if (*g) return cmd_gradcheck(gc);
    if (*az) return cmd_analyze(an);
    if (*c) return cmd_config(cfg_args);
  } catch (const ConfigError& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return kExitUsage;
  } catch (const NumericalError& ex) {
    std::fprintf(stderr, "numerical error: %s\n", ex.what());
    return kExitNumerical;
  } catch (const IoError& ex) {
    std::fprintf(stderr, "i/o error: %s\n", ex.what());
    return kExitIo;
  }
  return kExitUsage;
}
