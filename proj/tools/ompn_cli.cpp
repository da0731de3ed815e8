// Command-line front end: dataset generation, training runs, segmentation,
// behavior-cloning evaluation, ablations, K sweeps and trace plots.

#include <CLI11.hpp>

#include "ompn/checkpoint.hpp"
#include "ompn/craft.hpp"
#include "ompn/experiment.hpp"
#include "ompn/segment.hpp"
#include "ompn/svg.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace ompn;

namespace {

// Options shared by train/ablate/sweep-k; a config file is applied first,
// then any explicitly passed flag overrides it.
struct ConfigFlags {
  std::string config_file;
  std::string mode, detection, variant, cell;
  bool sketch = false;
  int K = 0, episodes = 0, n_slots = 0, mem_dim = 0, epochs = 0, bptt = 0,
      batch = 0;
  double holdout = -1, lr = 0, clip = 0;
  std::string seeds;
  std::uint64_t data_seed = 0;
  std::string out;

  CLI::Option *mode_o, *det_o, *variant_o, *cell_o, *sketch_o, *k_o,
      *episodes_o, *n_slots_o, *mem_dim_o, *epochs_o, *bptt_o, *holdout_o,
      *lr_o, *clip_o, *batch_o, *seeds_o, *data_seed_o, *out_o;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "config file (key = value sections)");
    mode_o = app->add_option("--mode", mode, "full | partial");
    sketch_o = app->add_flag("--sketch", sketch, "weakly supervised setting");
    det_o = app->add_option("--detection", detection, "topk | threshold | auto");
    k_o = app->add_option("--k", K, "number of subtasks for detection");
    seeds_o = app->add_option("--seeds", seeds, "comma-separated run seeds");
    episodes_o = app->add_option("--episodes", episodes, "episodes per task");
    holdout_o = app->add_option("--holdout", holdout, "held-out fraction");
    data_seed_o = app->add_option("--data-seed", data_seed, "dataset seed");
    n_slots_o = app->add_option("--n-slots", n_slots, "memory depth");
    mem_dim_o = app->add_option("--mem-dim", mem_dim, "memory width");
    variant_o = app->add_option("--variant", variant,
                                "full | no_bottomup | no_topdown | "
                                "no_bottomup_recurr | no_done");
    cell_o = app->add_option("--cell", cell, "gated | om");
    lr_o = app->add_option("--lr", lr, "learning rate");
    epochs_o = app->add_option("--epochs", epochs, "training epochs");
    bptt_o = app->add_option("--bptt", bptt, "truncated BPTT window");
    batch_o = app->add_option("--batch", batch, "trajectories per update");
    clip_o = app->add_option("--clip", clip, "L2 gradient clip");
    out_o = app->add_option("--out", out, "run output directory");
  }

  exp::ExperimentConfig resolve() const {
    exp::ExperimentConfig cfg;
    if (!config_file.empty()) cfg = exp::load_config_file(config_file);
    if (mode_o->count()) cfg.mode = craft::mode_from_string(mode);
    if (sketch_o->count()) cfg.sketch = sketch;
    if (det_o->count()) cfg.detection = seg::detection_from_string(detection);
    if (k_o->count()) cfg.K = K;
    if (seeds_o->count()) {
      cfg.seeds.clear();
      std::stringstream ss(seeds);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) cfg.seeds.push_back(std::stoull(item));
    }
    if (episodes_o->count()) cfg.episodes_per_task = episodes;
    if (holdout_o->count()) cfg.holdout = holdout;
    if (data_seed_o->count()) cfg.data_seed = data_seed;
    if (n_slots_o->count()) cfg.n_slots = n_slots;
    if (mem_dim_o->count()) cfg.mem_dim = mem_dim;
    if (variant_o->count()) cfg.variant = variant_from_string(variant);
    if (cell_o->count()) cfg.cell = cell_kind_from_string(cell);
    if (lr_o->count()) cfg.train.learning_rate = lr;
    if (epochs_o->count()) cfg.train.epochs = epochs;
    if (bptt_o->count()) cfg.train.bptt_len = bptt;
    if (batch_o->count()) cfg.train.batch_size = batch;
    if (clip_o->count()) cfg.train.grad_clip_l2 = clip;
    if (out_o->count()) cfg.out_dir = out;
    return cfg;
  }
};

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  return out;
}

void print_summary(const exp::Summary& s) {
  std::cout << "seed,align,f1,precision,recall\n";
  for (const auto& m : s.per_seed)
    std::cout << m.seed << "," << m.align << "," << m.f1 << "," << m.precision
              << "," << m.recall << "\n";
  std::cout << "align " << s.cell(s.align) << "  f1 " << s.cell(s.f1)
            << "  precision " << s.cell(s.precision) << "  recall "
            << s.cell(s.recall) << "\n";
}

int segment_one(const std::string& trace_path, seg::Detection method, int K,
                double thres, const std::vector<int>& gt, std::ostream& os) {
  auto trace = read_trace_jsonl(trace_path);
  auto window = exp::detection_window(trace);
  auto result = seg::segment_trace(window, method, K, thres);
  os << trace_path;
  for (std::size_t i = 0; i < result.boundaries.size(); ++i)
    os << (i ? " " : ",") << result.boundaries[i];
  if (!gt.empty()) {
    auto f1 = seg::f1_tolerance(result.boundaries, gt, 1);
    double align = seg::alignment_accuracy(result.boundaries, gt,
                                           static_cast<int>(window.size()));
    os << "," << align << "," << f1.f1 << "," << f1.precision << ","
       << f1.recall;
  }
  os << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ordered-memory imitation learning toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate expert demonstrations");
  std::string gen_mode = "full", gen_out = "dataset.jsonl", gen_task = "all";
  int gen_episodes = 150;
  std::uint64_t gen_seed = 7;
  gen->add_option("--mode", gen_mode, "full | partial");
  gen->add_option("--episodes", gen_episodes, "episodes per task");
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--task", gen_task, "task name or 'all'");
  gen->add_option("--out", gen_out, "output JSONL path")->required();

  // train
  auto* train_cmd = app.add_subcommand(
      "train", "train, trace held-out demos, segment and score");
  ConfigFlags train_flags;
  train_flags.attach(train_cmd);
  int train_jobs = 1;
  train_cmd->add_option("--jobs", train_jobs, "parallel seed workers");

  // segment
  auto* seg_cmd = app.add_subcommand("segment", "boundaries from trace files");
  std::string seg_trace, seg_dir, seg_method = "topk", seg_out, seg_gt;
  int seg_k = 4;
  double seg_thres = 0.5;
  seg_cmd->add_option("--trace", seg_trace, "one trace JSONL file");
  seg_cmd->add_option("--traces-dir", seg_dir, "directory of trace_*.jsonl");
  seg_cmd->add_option("--method", seg_method, "topk | threshold | auto");
  seg_cmd->add_option("--k", seg_k, "number of subtasks");
  seg_cmd->add_option("--thres", seg_thres, "fixed threshold");
  seg_cmd->add_option("--gt", seg_gt, "comma-separated ground-truth boundaries");
  seg_cmd->add_option("--out", seg_out, "output CSV (default stdout)");

  // eval-bc
  auto* eval_cmd = app.add_subcommand("eval-bc", "success rate of a checkpoint");
  std::string eval_ckpt, eval_mode = "full";
  bool eval_sketch = false;
  int eval_eps = 100, eval_n = 3, eval_m = 64;
  std::uint64_t eval_seed = 1234;
  std::string eval_variant = "full";
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--mode", eval_mode, "full | partial");
  eval_cmd->add_flag("--sketch", eval_sketch, "sketch-conditioned model");
  eval_cmd->add_option("--episodes", eval_eps, "fresh worlds to attempt");
  eval_cmd->add_option("--n-slots", eval_n, "memory depth");
  eval_cmd->add_option("--mem-dim", eval_m, "memory width");
  eval_cmd->add_option("--variant", eval_variant, "model variant");
  eval_cmd->add_option("--seed", eval_seed, "world seed base");

  // ablate
  auto* abl_cmd = app.add_subcommand("ablate", "compare architecture variants");
  ConfigFlags abl_flags;
  abl_flags.attach(abl_cmd);
  int abl_jobs = 1;
  abl_cmd->add_option("--jobs", abl_jobs, "parallel seed workers");

  // sweep-k
  auto* sweep_cmd = app.add_subcommand("sweep-k", "detection quality across K");
  ConfigFlags sweep_flags;
  sweep_flags.attach(sweep_cmd);
  int sweep_jobs = 1, k_min = 2, k_max = 6;
  sweep_cmd->add_option("--jobs", sweep_jobs, "parallel seed workers");
  sweep_cmd->add_option("--kmin", k_min, "smallest K");
  sweep_cmd->add_option("--kmax", k_max, "largest K");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "render a trace to SVG");
  std::string plot_trace, plot_out = "trace.svg", plot_style = "pi", plot_gt,
              plot_pred;
  plot_cmd->add_option("--trace", plot_trace, "trace JSONL file")->required();
  plot_cmd->add_option("--out", plot_out, "output SVG path");
  plot_cmd->add_option("--style", plot_style, "pi | threshold");
  plot_cmd->add_option("--gt", plot_gt, "ground-truth boundary overlay");
  plot_cmd->add_option("--pred", plot_pred, "predicted boundary overlay");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      std::vector<craft::Task> tasks;
      if (gen_task == "all") {
        auto all = craft::training_tasks();
        tasks.assign(all.begin(), all.end());
      } else {
        tasks.push_back(craft::task_by_name(gen_task));
      }
      auto demos = craft::generate_dataset(
          tasks, gen_episodes, craft::mode_from_string(gen_mode), gen_seed);
      craft::save_dataset_jsonl(gen_out, demos);
      std::cout << "wrote " << demos.size() << " demos to " << gen_out << "\n";
    } else if (*train_cmd) {
      auto cfg = train_flags.resolve();
      auto summary = exp::run_experiment(cfg, train_jobs);
      print_summary(summary);
    } else if (*seg_cmd) {
      std::vector<int> gt = parse_int_list(seg_gt);
      auto method = seg::detection_from_string(seg_method);
      std::ofstream file;
      std::ostream* os = &std::cout;
      if (!seg_out.empty()) {
        file.open(seg_out, std::ios::trunc);
        os = &file;
      }
      *os << "trace,boundaries" << (gt.empty() ? "" : ",align,f1,precision,recall")
          << "\n";
      if (!seg_trace.empty())
        segment_one(seg_trace, method, seg_k, seg_thres, gt, *os);
      if (!seg_dir.empty()) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(seg_dir))
          if (e.path().extension() == ".jsonl") files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
          segment_one(f, method, seg_k, seg_thres, gt, *os);
      }
    } else if (*eval_cmd) {
      exp::ExperimentConfig cfg;
      cfg.mode = craft::mode_from_string(eval_mode);
      cfg.sketch = eval_sketch;
      cfg.n_slots = eval_n;
      cfg.mem_dim = eval_m;
      cfg.variant = variant_from_string(eval_variant);
      Ompn model(exp::model_config(cfg), 0);
      model.load_params(load_checkpoint(eval_ckpt));
      double rate = exp::eval_success_rate(model, cfg, eval_eps, eval_seed);
      std::cout << "success_rate," << rate << "\n";
    } else if (*abl_cmd) {
      auto cfg = abl_flags.resolve();
      auto rows = exp::ablation_suite(cfg, abl_jobs);
      const std::string out_csv =
          cfg.out_dir.empty() ? "ablation.csv"
                              : (fs::path(cfg.out_dir) / "ablation.csv").string();
      exp::write_ablation_csv(out_csv, rows);
      for (const auto& r : rows)
        std::cout << to_string(r.variant) << " align "
                  << r.summary.cell(r.summary.align) << "\n";
      std::cout << "wrote " << out_csv << "\n";
    } else if (*sweep_cmd) {
      auto cfg = sweep_flags.resolve();
      auto rows = exp::sweep_k(cfg, k_min, k_max, sweep_jobs);
      const std::string out_csv =
          cfg.out_dir.empty() ? "ksweep.csv"
                              : (fs::path(cfg.out_dir) / "ksweep.csv").string();
      if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
      exp::write_ksweep_csv(out_csv, rows);
      for (const auto& r : rows)
        std::cout << "K=" << r.K << " f1 " << r.f1.mean << " recall "
                  << r.recall.mean << "\n";
      std::cout << "wrote " << out_csv << "\n";
    } else if (*plot_cmd) {
      auto trace = read_trace_jsonl(plot_trace);
      TracePlotOptions opt;
      opt.style = plot_style == "threshold" ? TracePlotOptions::Style::threshold
                                            : TracePlotOptions::Style::pi_bands;
      opt.gt_boundaries = parse_int_list(plot_gt);
      opt.predicted = parse_int_list(plot_pred);
      if (opt.style == TracePlotOptions::Style::threshold) {
        auto window = exp::detection_window(trace);
        try {
          opt.thresholds = seg::auto_threshold(seg::standardize(window));
        } catch (const seg::DegenerateSignal&) {
          // plot without threshold lines
        }
      }
      write_trace_svg(plot_out, trace, opt);
      std::cout << "wrote " << plot_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
