#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using namespace std;
namespace fs = std::filesystem;

namespace {

string cli_path() {
  const char* p = std::getenv("DRMIM_CLI");
  REQUIRE(p != nullptr);
  return p;
}

struct RunResult {
  int exit_code;
  string output;
};

RunResult run(const string& args) {
  const string cmd = cli_path() + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  string out;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) out += buf;
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

fs::path work_dir() {
  fs::path p = fs::temp_directory_path() / "drmim_cli_test";
  fs::create_directories(p);
  return p;
}

string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("unknown subcommands and flags exit nonzero with usage text") {
  CHECK(run("bogus").exit_code != 0);
  CHECK(run("train --no-such-flag 1").exit_code != 0);
  RunResult help = run("--help");
  CHECK(help.exit_code == 0);
  CHECK(help.output.find("train") != string::npos);
  CHECK(help.output.find("prune-report") != string::npos);
}

TEST_CASE("prune-report lists halved channels at mu 0.5") {
  RunResult r = run("prune-report --mu 0.5");
  CHECK(r.exit_code == 0);
  // backbone.1: 64 -> 32 channels, input 16
  CHECK(r.output.find("backbone.1,16,32,3,") != string::npos);
  CHECK(r.output.find("backbone.2,32,48,3,") != string::npos);

  RunResult r0 = run("prune-report --mu 0");
  CHECK(r0.exit_code == 0);
  CHECK(r0.output.find("backbone.1,32,64,3,") != string::npos);

  // bad ratio is a one-line machine-parseable error
  RunResult bad = run("prune-report --mu 0.95");
  CHECK(bad.exit_code != 0);
  CHECK(bad.output.find("error: config:") != string::npos);
}

TEST_CASE("synth, train, track, eval pipeline on a tiny budget") {
  const fs::path dir = work_dir();
  fs::remove_all(dir);
  fs::create_directories(dir);
  const string data = (dir / "data").string();
  const string ckpt = (dir / "model.ckpt").string();
  const string results = (dir / "results").string();
  const string out = (dir / "eval").string();

  RunResult synth = run("synth --out " + data + " --count 2 --seed 5 --frames 6" +
                        " --canvas-w 120 --canvas-h 96");
  CHECK(synth.exit_code == 0);
  CHECK(fs::exists(fs::path(data) / "seq_001" / "groundtruth.txt"));
  CHECK(fs::exists(fs::path(data) / "seq_001" / "000001.ppm"));
  CHECK(fs::exists(fs::path(data) / "seq_002" / "000006.ppm"));

  // config file keys with a command-line override
  const string cfg_path = (dir / "train.cfg").string();
  {
    std::ofstream cfg(cfg_path);
    cfg << "template_size=80\nsearch_size=192\nsteps=2\nbatch=2\nmu=0.5\nlr=0.005\nseed=3\n";
  }
  RunResult train = run("train --config " + cfg_path + " --data " + data + " --out " + ckpt +
                        " --steps 3");
  CHECK(train.exit_code == 0);
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(ckpt + ".log.csv"));
  {
    std::ifstream log(ckpt + ".log.csv");
    string line;
    std::getline(log, line);
    CHECK(line == "step,total,cr,mi_global,mi_local,idsim,n_pos,ms");
    int rows = 0;
    while (std::getline(log, line)) rows += line.empty() ? 0 : 1;
    CHECK(rows == 3);  // --steps overrode the config file
  }

  fs::create_directories(results);
  RunResult track = run("track --checkpoint " + ckpt + " --seq " + data + "/seq_001 --out " +
                        results + "/seq_001.txt");
  CHECK(track.exit_code == 0);
  RunResult track2 = run("track --checkpoint " + ckpt + " --seq " + data + "/seq_002 --out " +
                         results + "/seq_002.txt");
  CHECK(track2.exit_code == 0);
  {
    std::ifstream rf(results + "/seq_001.txt");
    string line;
    int rows = 0;
    while (std::getline(rf, line)) rows += line.empty() ? 0 : 1;
    CHECK(rows == 6);
  }

  RunResult eval = run("eval --data " + data + " --results " + results + " --out " + out);
  CHECK(eval.exit_code == 0);
  CHECK(fs::exists(fs::path(out) / "report.csv"));
  CHECK(fs::exists(fs::path(out) / "precision_plot.svg"));
  CHECK(fs::exists(fs::path(out) / "success_plot.svg"));
  const string csv = read_file(fs::path(out) / "report.csv");
  CHECK(csv.find("sequence,frames,precision20,auc,fps") == 0);
  CHECK(csv.find("seq_001,6,") != string::npos);
  CHECK(csv.find("mean,12,") != string::npos);

  SUBCASE("eval on the ground truth itself reports precision 1.0") {
    const string gt_results = (dir / "gt_results").string();
    fs::create_directories(gt_results);
    for (const string name : {"seq_001", "seq_002"}) {
      string content;
      std::ifstream gt(fs::path(data) / name / "groundtruth.txt");
      string line;
      while (std::getline(gt, line)) content += line + "\n";
      std::ofstream rf(fs::path(gt_results) / (name + ".txt"));
      rf << content;
    }
    RunResult geval = run("eval --data " + data + " --results " + gt_results + " --out " + out + "_gt");
    CHECK(geval.exit_code == 0);
    const string gcsv = read_file(fs::path(out + "_gt") / "report.csv");
    CHECK(gcsv.find("seq_001,6,1.000000,") != string::npos);
    CHECK(gcsv.find("mean,12,1.000000,") != string::npos);
  }

}

TEST_CASE("missing inputs produce one-line errors") {
  RunResult r = run("track --checkpoint /nonexistent.ckpt --seq /nonexistent --out /dev/null");
  CHECK(r.exit_code != 0);
  CHECK(r.output.rfind("error:", 0) == 0);
}
