#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "drmim/data.hpp"
#include "drmim/errors.hpp"
#include "drmim/metrics.hpp"
#include "drmim/model.hpp"
#include "drmim/rng.hpp"
#include "drmim/selftest.hpp"
#include "drmim/tracker.hpp"
#include "drmim/trainer.hpp"

namespace fs = std::filesystem;
using namespace drmim;

namespace {

std::vector<std::string> sequence_dirs(const std::string& root) {
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "groundtruth.txt")) {
      dirs.push_back(entry.path().string());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw ConfigError("no sequence directories under '" + root + "'");
  return dirs;
}

std::vector<Sequence> load_dataset(const std::string& root) {
  std::vector<Sequence> seqs;
  for (const std::string& dir : sequence_dirs(root)) seqs.push_back(load_sequence(dir));
  return seqs;
}

std::vector<Sequence> synth_dataset(std::uint64_t seed, int count, int frames) {
  std::vector<Sequence> seqs;
  for (int i = 0; i < count; ++i) {
    SynthConfig cfg;
    cfg.seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    cfg.length = frames;
    seqs.push_back(generate_synthetic(cfg));
  }
  return seqs;
}

struct TrainCli {
  TrainConfig config;
  std::string data_dir;
  std::string out = "drmim.ckpt";
  std::string resume;
  int template_size = 96;
  int search_size = 256;
  int synth_count = 20;
  int synth_frames = 40;
};

void add_train_options(CLI::App* app, TrainCli& c) {
  app->set_config("--config")->description("flat key=value config file");
  app->add_option("--mu", c.config.mu, "global pruning ratio");
  app->add_option("--lr", c.config.lr, "learning rate");
  app->add_option("--momentum", c.config.momentum, "SGD momentum");
  app->add_option("--weight-decay", c.config.weight_decay, "weight decay");
  app->add_option("--batch", c.config.batch, "batch size (>= 2)");
  app->add_option("--steps", c.config.steps, "training steps");
  app->add_option("--rho", c.config.weights.rho, "global MI weight");
  app->add_option("--gamma", c.config.weights.gamma, "local MI weight");
  app->add_option("--omega", c.config.weights.omega, "identity similarity weight");
  app->add_option("--lambda1", c.config.weights.lambda1, "quality loss weight");
  app->add_option("--lambda2", c.config.weights.lambda2, "regression loss weight");
  app->add_option("--focal-alpha", c.config.weights.focal_alpha, "focal loss alpha");
  app->add_option("--focal-gamma", c.config.weights.focal_gamma, "focal loss gamma");
  app->add_option("--seed", c.config.seed, "master seed");
  app->add_option("--template_size", c.template_size, "template crop side");
  app->add_option("--search_size", c.search_size, "search crop side");
  app->add_option("--data", c.data_dir, "root directory of training sequences");
  app->add_option("--synth-count", c.synth_count, "synthetic sequences when --data is absent");
  app->add_option("--synth-frames", c.synth_frames, "frames per synthetic sequence");
  app->add_option("--out", c.out, "checkpoint output path");
  app->add_option("--log", c.config.log_path, "training log CSV path");
  app->add_option("--checkpoint-every", c.config.checkpoint_every, "periodic checkpoint interval");
  app->add_option("--resume", c.resume, "checkpoint to resume from");
}

int cmd_train(TrainCli& c) {
  ArchitectureSpec spec = default_architecture(c.template_size, c.search_size);
  c.config.checkpoint_path = c.out;
  if (c.config.log_path.empty()) c.config.log_path = c.out + ".log.csv";

  std::vector<Sequence> dataset = c.data_dir.empty()
                                      ? synth_dataset(c.config.seed, c.synth_count, c.synth_frames)
                                      : load_dataset(c.data_dir);
  ModelParams resumed;
  const ModelParams* resume = nullptr;
  if (!c.resume.empty()) {
    resumed = load_checkpoint(c.resume, &spec);
    resume = &resumed;
  }

  std::vector<TrainLogRecord> records;
  train(spec, c.config, dataset, &records, resume);
  std::printf("trained %d steps on %zu sequences; checkpoint '%s', log '%s'\n", c.config.steps,
              dataset.size(), c.out.c_str(), c.config.log_path.c_str());
  if (!records.empty()) {
    std::printf("final loss %.6f (cr %.6f)\n", records.back().total, records.back().cr);
  }
  return 0;
}

int cmd_track(const std::string& checkpoint, const std::string& seq_dir, const std::string& out) {
  ModelParams params = load_checkpoint(checkpoint);
  params.set_requires_grad(false);  // forward only, no graph
  Sequence seq = load_sequence(seq_dir);
  TrackResult result = track_sequence(params, seq);
  write_result_file(out, result.boxes);

  const double fps = fps_report(result.update_seconds);
  const fs::path fps_path = fs::path(out).replace_extension(".fps");
  std::ofstream f(fps_path);
  if (f) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f\n", fps);
    f << buf;
  }
  std::printf("%s: %zu frames, %.2f FPS -> %s\n", seq.name.c_str(), seq.size(), fps, out.c_str());
  return 0;
}

int cmd_eval(const std::string& data_root, const std::string& results_dir,
             const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<SequenceEval> rows;
  for (const std::string& dir : sequence_dirs(data_root)) {
    Sequence seq = load_sequence(dir);
    const fs::path result_path = fs::path(results_dir) / (seq.name + ".txt");
    if (!fs::exists(result_path)) {
      throw IoError("no result file '" + result_path.string() + "' for sequence " + seq.name);
    }
    std::vector<Box> pred = read_result_file(result_path.string());
    if (pred.size() != seq.size()) {
      throw DimensionError("result for '" + seq.name + "' has " + std::to_string(pred.size()) +
                           " boxes, sequence has " + std::to_string(seq.size()));
    }
    SequenceEval row;
    row.name = seq.name;
    row.frames = static_cast<int>(seq.size());
    row.precision = precision_curve(pred, seq.boxes);
    row.success = success_auc(pred, seq.boxes);
    row.precision20 = row.precision.precision20;
    row.auc = row.success.auc;
    const fs::path fps_path = fs::path(results_dir) / (seq.name + ".fps");
    if (fs::exists(fps_path)) {
      std::ifstream f(fps_path);
      f >> row.fps;
    }
    rows.push_back(std::move(row));
  }

  EvalReport report = summarize(std::move(rows));
  write_report_csv((fs::path(out_dir) / "report.csv").string(), report);
  write_precision_svg((fs::path(out_dir) / "precision_plot.svg").string(), report);
  write_success_svg((fs::path(out_dir) / "success_plot.svg").string(), report);
  std::printf("evaluated %zu sequences: precision@20 %.4f, AUC %.4f -> %s\n",
              report.sequences.size(), report.mean_precision20, report.mean_auc, out_dir.c_str());
  return 0;
}

int cmd_prune_report(double mu, const std::string& out_path, int template_size, int search_size) {
  ArchitectureSpec spec = default_architecture(template_size, search_size);
  const auto layers = resolve_layers(spec, PruneConfig{mu});
  const auto unpruned = resolve_layers(spec, PruneConfig{0.0});

  std::ostringstream os;
  os << "layer,in,out,kernel,stride,pad,params,unpruned_params\n";
  std::size_t total = 0, total_unpruned = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    total += l.param_count();
    total_unpruned += unpruned[i].param_count();
    os << l.block << "." << l.index << "," << l.in_channels << "," << l.out_channels << ","
       << l.kernel << "," << l.stride << "," << l.pad << "," << l.param_count() << ","
       << unpruned[i].param_count() << "\n";
  }
  char line[160];
  std::snprintf(line, sizeof(line), "total,,,,,,%zu,%zu\n", total, total_unpruned);
  os << line;
  std::snprintf(line, sizeof(line), "# mu=%.3f keeps %.1f%% of parameters\n", mu,
                100.0 * static_cast<double>(total) / static_cast<double>(total_unpruned));
  os << line;

  if (out_path.empty()) {
    std::fputs(os.str().c_str(), stdout);
  } else {
    std::ofstream f(out_path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + out_path + "'");
    f << os.str();
  }
  return 0;
}

int cmd_synth(const SynthConfig& base, const std::string& out_dir, int count) {
  fs::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    SynthConfig cfg = base;
    cfg.seed = count == 1 ? base.seed : mix_seed(base.seed, static_cast<std::uint64_t>(i));
    Sequence seq = generate_synthetic(cfg);
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%03d", i + 1);
    seq.name = name;
    save_sequence((fs::path(out_dir) / name).string(), seq);
  }
  std::printf("wrote %d sequence(s) under %s\n", count, out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DR-MIM tracker: train, track and evaluate"};
  app.require_subcommand(1);

  TrainCli train_cli;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  add_train_options(train_cmd, train_cli);

  std::string track_checkpoint, track_seq, track_out = "result.txt";
  CLI::App* track_cmd = app.add_subcommand("track", "run the tracker over a sequence");
  track_cmd->add_option("--checkpoint", track_checkpoint, "model checkpoint")->required();
  track_cmd->add_option("--seq", track_seq, "sequence directory")->required();
  track_cmd->add_option("--out", track_out, "result file (one x,y,w,h line per frame)");

  std::string eval_data, eval_results, eval_out = "eval_out";
  CLI::App* eval_cmd = app.add_subcommand("eval", "score result files against ground truth");
  eval_cmd->add_option("--data", eval_data, "root directory of sequences")->required();
  eval_cmd->add_option("--results", eval_results, "directory of <sequence>.txt results")->required();
  eval_cmd->add_option("--out", eval_out, "output directory for CSV and SVG plots");

  double report_mu = 0.5;
  std::string report_out;
  int report_template = 96, report_search = 256;
  CLI::App* report_cmd = app.add_subcommand("prune-report", "per-layer channel and parameter table");
  report_cmd->add_option("--mu", report_mu, "global pruning ratio");
  report_cmd->add_option("--out", report_out, "write CSV here instead of stdout");
  report_cmd->add_option("--template_size", report_template, "template crop side");
  report_cmd->add_option("--search_size", report_search, "search crop side");

  SynthConfig synth_cfg;
  std::string synth_out = "synth_data";
  int synth_count = 1;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate synthetic sequences");
  synth_cmd->add_option("--out", synth_out, "output root directory");
  synth_cmd->add_option("--seed", synth_cfg.seed, "generator seed");
  synth_cmd->add_option("--count", synth_count, "number of sequences");
  synth_cmd->add_option("--frames", synth_cfg.length, "frames per sequence");
  synth_cmd->add_option("--canvas-w", synth_cfg.canvas_w, "canvas width");
  synth_cmd->add_option("--canvas-h", synth_cfg.canvas_h, "canvas height");
  synth_cmd->add_option("--noise", synth_cfg.noise_sigma, "pixel noise sigma");
  synth_cmd->add_option("--clutter", synth_cfg.clutter, "background rectangles");
  synth_cmd->add_option("--occluder-prob", synth_cfg.occluder_prob, "occlusion probability");
  synth_cmd->add_option("--drift", synth_cfg.drift_rate, "appearance drift rate");

  CLI::App* selftest_cmd = app.add_subcommand("selftest", "gradient checks and invariants");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train_cmd)) return cmd_train(train_cli);
    if (app.got_subcommand(track_cmd)) return cmd_track(track_checkpoint, track_seq, track_out);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(eval_data, eval_results, eval_out);
    if (app.got_subcommand(report_cmd)) {
      return cmd_prune_report(report_mu, report_out, report_template, report_search);
    }
    if (app.got_subcommand(synth_cmd)) return cmd_synth(synth_cfg, synth_out, synth_count);
    if (app.got_subcommand(selftest_cmd)) return run_selftest(std::cout);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
