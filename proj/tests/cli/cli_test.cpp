#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

// Exercises the command-line surface through real subprocesses: flag
// parsing, exit codes, file outputs, and small end-to-end flows.

namespace fs = std::filesystem;

namespace {

std::string cli_bin() {
  const char* env = std::getenv("PVMDNN_CLI_BIN");
  REQUIRE(env != nullptr);
  return env;
}

int run(const std::string& args) {
  const std::string cmd = cli_bin() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) {
    path = fs::temp_directory_path() / (std::string("pvmdnn_cli_") + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("analyze --mode nonsense --out /tmp") == 2);
  CHECK(run("definitely-not-a-subcommand") == 2);
  CHECK(run("train") == 2);                       // missing required --data
  CHECK(run("config --preset nope") == 2);        // unknown preset
  CHECK(run("synth --subset 40 --out /tmp") == 2);
}

TEST_CASE("missing input files exit with code 4") {
  TempDir dir("io");
  CHECK(run("train --data /nonexistent.pvmdds --preset tiny --epochs 0 --out " + dir.str()) == 4);
  CHECK(run("simulate --ckpt /nonexistent.pvmd --out " + dir.str()) == 4);
}

TEST_CASE("synth writes the manifest-declared dataset deterministically") {
  TempDir a("synth_a"), b("synth_b");
  REQUIRE(run("synth --out " + a.str() + " --seed 5 --steps 20 --subset 4") == 0);
  REQUIRE(run("synth --out " + b.str() + " --seed 5 --steps 20 --subset 4") == 0);
  CHECK(slurp(a.path / "dataset.pvmdds") == slurp(b.path / "dataset.pvmdds"));

  REQUIRE(run("synth --out " + a.str() + " --seed 5 --steps 20 --subset 4 "
              "--concat 0,1 --jitter 0.04") == 0);
  REQUIRE(run("synth --out " + b.str() + " --seed 5 --steps 20 --subset 4 "
              "--concat 0,1 --jitter 0.04") == 0);
  CHECK(slurp(a.path / "stream.pvmdds") == slurp(b.path / "stream.pvmdds"));
}

TEST_CASE("zero-epoch training writes one loss row and a final checkpoint") {
  TempDir dir("train0");
  REQUIRE(run("synth --out " + dir.str() + " --steps 8 --subset 1") == 0);
  REQUIRE(run("train --data " + (dir.path / "dataset.pvmdds").string() +
              " --preset tiny --epochs 0 --out " + dir.str()) == 2);
  // tiny expects 16x12 frames; the dataset is 64x48 -> config error above.
  // Use the desk preset for a real (if brief) run instead.
  REQUIRE(run("train --data " + (dir.path / "dataset.pvmdds").string() +
              " --preset desk --epochs 0 --out " + dir.str()) == 0);
  CHECK(fs::exists(dir.path / "final.pvmd"));
  std::ifstream csv(dir.path / "loss.csv");
  std::string header, row, extra;
  REQUIRE(std::getline(csv, header).good());
  CHECK(header == "epoch,E,E_V,E_P,wall_seconds");
  REQUIRE(std::getline(csv, row).good());
  CHECK(row.rfind("0,", 0) == 0);
  CHECK_FALSE(std::getline(csv, extra).good());
}

TEST_CASE("simulate, entrain, ers and analyze compose over the file formats") {
  TempDir dir("flow");
  const std::string data = (dir.path / "dataset.pvmdds").string();
  REQUIRE(run("synth --out " + dir.str() + " --steps 10 --subset 2") == 0);
  REQUIRE(run("train --data " + data + " --preset desk --epochs 2 --ckpt-interval 0 "
              "--threads 2 --out " + dir.str()) == 0);
  const std::string ckpt = (dir.path / "final.pvmd").string();

  REQUIRE(run("simulate --ckpt " + ckpt + " --primitive 0 --steps 3 --out " + dir.str()) == 0);
  CHECK(fs::exists(dir.path / "primitive_00" / "frame_00000.pgm"));
  CHECK(fs::exists(dir.path / "primitive_00" / "joints.csv"));

  REQUIRE(run("synth --out " + dir.str() + " --steps 10 --subset 2 --concat 0,1 "
              "--jitter 0.02 --seed 3") == 0);
  const std::string stream = (dir.path / "stream.pvmdds").string();

  const std::string ent_out = (dir.path / "ent").string();
  REQUIRE(run("entrain --ckpt " + ckpt + " --data " + stream + " --modality visual --out " +
              ent_out) == 0);
  CHECK(fs::exists(fs::path(ent_out) / "predictions.pvmdds"));

  const std::string ers_out = (dir.path / "ers").string();
  REQUIRE(run("ers --ckpt " + ckpt + " --stream " + stream + " --modality visual "
              "--window 4 --iters 2 --lr 0.1 --out " + ers_out) == 0);
  CHECK(fs::exists(fs::path(ers_out) / "trace.csv"));
  CHECK(fs::exists(fs::path(ers_out) / "states.f32"));

  // iters = 0 equals the entrainment output on the same stream
  const std::string ers0_out = (dir.path / "ers0").string();
  REQUIRE(run("ers --ckpt " + ckpt + " --stream " + stream + " --modality visual "
              "--window 4 --iters 0 --out " + ers0_out) == 0);
  CHECK(slurp(fs::path(ers0_out) / "predictions.pvmdds") ==
        slurp(fs::path(ent_out) / "predictions.pvmdds"));

  REQUIRE(run("analyze --mode metrics --pred " + (fs::path(ers_out) / "predictions.pvmdds").string() +
              " --data " + stream + " --out " + ers_out) == 0);
  CHECK(fs::exists(fs::path(ers_out) / "metrics.csv"));

  REQUIRE(run("analyze --mode pca --ckpt " + ckpt + " --out " + dir.str()) == 0);
  CHECK(fs::exists(dir.path / "pca_vs.csv"));
  CHECK(fs::exists(dir.path / "pca_ps.csv"));

  REQUIRE(run("analyze --mode intent --ckpt " + ckpt + " --trace " +
              (fs::path(ers_out) / "trace.csv").string() + " --stream " + stream +
              " --burn-in 4 --out " + ers_out) == 0);
  CHECK(fs::exists(fs::path(ers_out) / "intent.csv"));

  REQUIRE(run("gradcheck --preset tiny --eps 1e-5 --tol 1e-3") == 0);
}

TEST_CASE("config dumps presets as JSON") {
  TempDir dir("config");
  const std::string path = (dir.path / "table1.json").string();
  REQUIRE(run("config --preset table1 --out " + path) == 0);
  const std::string json = slurp(path);
  CHECK(json.find("\"image_width\": 64") != std::string::npos);
  CHECK(json.find("\"maps\": 12") != std::string::npos);
}
