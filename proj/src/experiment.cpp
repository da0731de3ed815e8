#include "ompn/experiment.hpp"

#include "ompn/checkpoint.hpp"
#include "ompn/svg.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace ompn::exp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string seeds_to_string(const std::vector<std::uint64_t>& seeds) {
  std::ostringstream os;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) os << ",";
    os << seeds[i];
  }
  return os.str();
}

std::vector<std::uint64_t> seeds_from_string(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoull(item));
  }
  return out;
}

std::string dbl(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Deterministic holdout split: shuffle by the run seed, reserve the
// requested fraction (at least one trajectory) for segmentation scoring.
void split_dataset(std::size_t size, double holdout, std::uint64_t seed,
                   std::vector<int>& train_idx, std::vector<int>& eval_idx) {
  std::vector<int> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(craft::mix_seed(seed, 0x5eedULL));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t n_eval = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(holdout * size)));
  eval_idx.assign(idx.begin(), idx.begin() + n_eval);
  train_idx.assign(idx.begin() + n_eval, idx.end());
}

struct SeedOutcome {
  SeedMetrics metrics;
  std::vector<std::vector<StepTrace>> traces;  // per held-out demo
  std::vector<std::vector<int>> gt_boundaries;
  NamedParams params;
  std::vector<EpochStats> train_log;
};

SeedOutcome run_seed(const ExperimentConfig& cfg,
                     const std::vector<craft::Demo>& demos,
                     std::uint64_t seed) {
  std::vector<int> train_idx, eval_idx;
  split_dataset(demos.size(), cfg.holdout, seed, train_idx, eval_idx);

  std::vector<Trajectory> train_set;
  train_set.reserve(train_idx.size());
  for (int i : train_idx)
    train_set.push_back(craft::to_trajectory(demos[i], cfg.sketch));

  Ompn model(model_config(cfg), seed);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  auto log = train(model, train_set, tc);

  SeedOutcome out;
  out.metrics.seed = seed;
  out.metrics.final_loss = log.empty() ? 0.0 : log.back().mean_loss;
  for (const EpochStats& e : log) out.metrics.train_seconds += e.wall_seconds;
  out.train_log = std::move(log);

  std::vector<double> aligns, f1s, precs, recs;
  for (int i : eval_idx) {
    const craft::Demo& demo = demos[i];
    Trajectory traj = craft::to_trajectory(demo, cfg.sketch);
    std::optional<Vector> env_info;
    if (cfg.sketch) env_info = *traj.sketch;
    auto trace = trace_demo(model, traj.observations, traj.actions, traj.sketch,
                            env_info);
    auto window = detection_window(trace);
    auto seg_result = seg::segment_trace(window, cfg.detection, cfg.K);
    const int T = static_cast<int>(window.size());
    auto f1 = seg::f1_tolerance(seg_result.boundaries, demo.gt_boundaries, 1);
    aligns.push_back(seg::alignment_accuracy(seg_result.boundaries,
                                             demo.gt_boundaries, T));
    f1s.push_back(f1.f1);
    precs.push_back(f1.precision);
    recs.push_back(f1.recall);
    out.traces.push_back(std::move(trace));
    out.gt_boundaries.push_back(demo.gt_boundaries);
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0
                     : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  };
  out.metrics.align = mean(aligns);
  out.metrics.f1 = mean(f1s);
  out.metrics.precision = mean(precs);
  out.metrics.recall = mean(recs);
  out.params = model.named_params();
  return out;
}

void refuse_existing_run(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty()) return;
  const fs::path manifest_path = fs::path(cfg.out_dir) / "manifest.json";
  if (fs::exists(manifest_path))
    throw std::runtime_error("refusing to overwrite existing run at " +
                             cfg.out_dir + " (manifest present)");
}

// One worker pool over seed indices; the first failure wins and is
// rethrown after the joins.
std::vector<SeedOutcome> run_seeds(const ExperimentConfig& cfg,
                                   const std::vector<craft::Demo>& demos,
                                   int jobs) {
  std::vector<SeedOutcome> outcomes(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  const int workers =
      std::max(1, std::min<int>(jobs, static_cast<int>(cfg.seeds.size())));
  std::vector<std::thread> pool;
  std::mutex error_mutex;
  std::string first_error;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= cfg.seeds.size()) return;
        try {
          outcomes[i] = run_seed(cfg, demos, cfg.seeds[i]);
        } catch (const std::exception& e) {
          std::scoped_lock lock(error_mutex);
          if (first_error.empty())
            first_error = "seed " + std::to_string(cfg.seeds[i]) +
                          " failed: " + e.what();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (!first_error.empty()) throw std::runtime_error(first_error);
  return outcomes;
}

void write_run_artifacts(const ExperimentConfig& cfg,
                         const std::vector<SeedOutcome>& outcomes,
                         const Summary& summary) {
  if (cfg.out_dir.empty()) return;
  const fs::path root(cfg.out_dir);
  const fs::path manifest_path = root / "manifest.json";
  if (fs::exists(manifest_path))
    throw std::runtime_error("refusing to overwrite existing run at " +
                             root.string() + " (manifest present)");
  fs::create_directories(root);

  nlohmann::json manifest;
  manifest["config"] = "config.cfg";
  manifest["files"] = nlohmann::json::array();
  auto track = [&manifest](const fs::path& p) {
    manifest["files"].push_back(p.string());
  };

  {
    std::ofstream os(root / "config.cfg", std::ios::trunc);
    os << serialize_config(cfg);
    track("config.cfg");
  }
  write_metrics_csv((root / "metrics.csv").string(), summary);
  track("metrics.csv");

  for (std::size_t si = 0; si < outcomes.size(); ++si) {
    const SeedOutcome& o = outcomes[si];
    const std::string seed_dir = "seed" + std::to_string(o.metrics.seed);
    fs::create_directories(root / seed_dir);
    save_checkpoint((root / seed_dir / "params.ckpt").string(), o.params);
    track(seed_dir + "/params.ckpt");
    write_train_log_csv((root / seed_dir / "train_log.csv").string(),
                        o.train_log);
    track(seed_dir + "/train_log.csv");
    for (std::size_t ti = 0; ti < o.traces.size(); ++ti) {
      const std::string name =
          seed_dir + "/trace_" + std::to_string(ti) + ".jsonl";
      write_trace_jsonl((root / name).string(), o.traces[ti]);
      track(name);
    }
    // a rendered example per seed, first held-out trajectory
    if (!o.traces.empty()) {
      TracePlotOptions opt;
      opt.gt_boundaries = o.gt_boundaries[0];
      auto window = detection_window(o.traces[0]);
      opt.predicted =
          seg::segment_trace(window, cfg.detection, cfg.K).boundaries;
      opt.title = "seed " + std::to_string(o.metrics.seed);
      const std::string name = seed_dir + "/trace_0.svg";
      write_trace_svg((root / name).string(), o.traces[0], opt);
      track(name);
    }
  }
  std::ofstream os(manifest_path, std::ios::trunc);
  os << manifest.dump(2) << "\n";
}

}  // namespace

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "[experiment]\n";
  os << "mode = " << craft::to_string(cfg.mode) << "\n";
  os << "sketch = " << (cfg.sketch ? "true" : "false") << "\n";
  os << "detection = " << seg::to_string(cfg.detection) << "\n";
  os << "k = " << cfg.K << "\n";
  os << "seeds = " << seeds_to_string(cfg.seeds) << "\n";
  os << "episodes_per_task = " << cfg.episodes_per_task << "\n";
  os << "holdout = " << dbl(cfg.holdout) << "\n";
  os << "data_seed = " << cfg.data_seed << "\n";
  os << "out = " << cfg.out_dir << "\n";
  os << "\n[model]\n";
  os << "n_slots = " << cfg.n_slots << "\n";
  os << "mem_dim = " << cfg.mem_dim << "\n";
  os << "variant = " << to_string(cfg.variant) << "\n";
  os << "cell = " << to_string(cfg.cell) << "\n";
  os << "\n[train]\n";
  os << "learning_rate = " << dbl(cfg.train.learning_rate) << "\n";
  os << "epochs = " << cfg.train.epochs << "\n";
  os << "bptt_len = " << cfg.train.bptt_len << "\n";
  os << "batch_size = " << cfg.train.batch_size << "\n";
  os << "grad_clip_l2 = " << dbl(cfg.train.grad_clip_l2) << "\n";
  return os.str();
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: malformed line: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section == "experiment") {
      if (key == "mode") cfg.mode = craft::mode_from_string(value);
      else if (key == "sketch") cfg.sketch = value == "true";
      else if (key == "detection") cfg.detection = seg::detection_from_string(value);
      else if (key == "k") cfg.K = std::stoi(value);
      else if (key == "seeds") cfg.seeds = seeds_from_string(value);
      else if (key == "episodes_per_task") cfg.episodes_per_task = std::stoi(value);
      else if (key == "holdout") cfg.holdout = std::stod(value);
      else if (key == "data_seed") cfg.data_seed = std::stoull(value);
      else if (key == "out") cfg.out_dir = value;
      else throw std::invalid_argument("config: unknown key " + key);
    } else if (section == "model") {
      if (key == "n_slots") cfg.n_slots = std::stoi(value);
      else if (key == "mem_dim") cfg.mem_dim = std::stoi(value);
      else if (key == "variant") cfg.variant = variant_from_string(value);
      else if (key == "cell") cfg.cell = cell_kind_from_string(value);
      else throw std::invalid_argument("config: unknown key " + key);
    } else if (section == "train") {
      if (key == "learning_rate") cfg.train.learning_rate = std::stod(value);
      else if (key == "epochs") cfg.train.epochs = std::stoi(value);
      else if (key == "bptt_len") cfg.train.bptt_len = std::stoi(value);
      else if (key == "batch_size") cfg.train.batch_size = std::stoi(value);
      else if (key == "grad_clip_l2") cfg.train.grad_clip_l2 = std::stod(value);
      else throw std::invalid_argument("config: unknown key " + key);
    } else {
      throw std::invalid_argument("config: key outside any section: " + key);
    }
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

OmpnConfig model_config(const ExperimentConfig& cfg) {
  OmpnConfig mc;
  mc.n_slots = cfg.n_slots;
  mc.mem_dim = cfg.mem_dim;
  mc.obs_dim = craft::observation_dim(cfg.mode);
  mc.act_dim = craft::kAugmentedActions;
  mc.sketch_dim = cfg.sketch ? craft::kSketchDim : 0;
  mc.variant = cfg.variant;
  mc.cell = cfg.cell;
  return mc;
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double sq = 0.0;
  for (double v : values) sq += (v - a.mean) * (v - a.mean);
  a.stddev = values.size() > 1 ? std::sqrt(sq / (values.size() - 1)) : 0.0;
  return a;
}

std::string Summary::cell(const Aggregate& a) const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f(%.1f)", a.mean * 100.0,
                a.stddev * 100.0);
  return buf;
}

std::vector<double> detection_window(const std::vector<StepTrace>& trace) {
  std::vector<double> out;
  out.reserve(trace.size() > 0 ? trace.size() - 1 : 0);
  for (std::size_t t = 1; t < trace.size(); ++t)
    out.push_back(trace[t].pi_avg);
  return out;
}

Summary run_experiment(const ExperimentConfig& cfg, int jobs) {
  if (cfg.seeds.empty())
    throw std::invalid_argument("run_experiment: no seeds configured");
  refuse_existing_run(cfg);
  auto demos = craft::generate_dataset(craft::training_tasks(),
                                       cfg.episodes_per_task, cfg.mode,
                                       cfg.data_seed);
  std::vector<SeedOutcome> outcomes = run_seeds(cfg, demos, jobs);

  Summary summary;
  std::vector<double> aligns, f1s, precs, recs;
  for (const SeedOutcome& o : outcomes) {
    summary.per_seed.push_back(o.metrics);
    aligns.push_back(o.metrics.align);
    f1s.push_back(o.metrics.f1);
    precs.push_back(o.metrics.precision);
    recs.push_back(o.metrics.recall);
  }
  summary.align = aggregate(aligns);
  summary.f1 = aggregate(f1s);
  summary.precision = aggregate(precs);
  summary.recall = aggregate(recs);
  write_run_artifacts(cfg, outcomes, summary);
  return summary;
}

double eval_success_rate(const Ompn& model, const ExperimentConfig& cfg,
                         int episodes, std::uint64_t eval_seed) {
  const auto tasks = craft::training_tasks();
  int successes = 0;
  for (int e = 0; e < episodes; ++e) {
    const craft::Task& task = tasks[e % tasks.size()];
    craft::Demo expert_demo = craft::generate_demo(
        task, craft::mix_seed(eval_seed, static_cast<std::uint64_t>(e)),
        cfg.mode);
    craft::World world = craft::generate_world(task, expert_demo.seed);
    const int budget = 8 * static_cast<int>(expert_demo.actions.size());

    std::optional<Vector> sketch;
    if (cfg.sketch) sketch = craft::encode_sketch(task);
    Matrix memory;
    {
      ad::Tape tape;
      auto b = model.bind(tape);
      memory = model.initial_memory(tape, b, sketch).value();
    }
    for (int t = 0; t < budget && !world.done(); ++t) {
      Vector obs = craft::observe(world, cfg.mode);
      ad::Tape tape;
      auto b = model.bind(tape);
      auto r = model.step(tape, b, obs, sketch, tape.constant(memory), t);
      memory = r.memory.value();
      // greedy over the real actions; done is a trainer construct
      Eigen::Index best = 0;
      r.logits.value().col(0).head(craft::kNumEnvActions).maxCoeff(&best);
      craft::env_step(world, static_cast<craft::Action>(best));
    }
    if (world.done()) ++successes;
  }
  return static_cast<double>(successes) / static_cast<double>(episodes);
}

std::vector<AblationRow> ablation_suite(const ExperimentConfig& base, int jobs) {
  const Variant variants[] = {Variant::full, Variant::no_bottomup,
                              Variant::no_topdown, Variant::no_bottomup_recurr,
                              Variant::no_done};
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    ExperimentConfig cfg = base;
    cfg.variant = v;
    if (!base.out_dir.empty())
      cfg.out_dir = (fs::path(base.out_dir) / to_string(v)).string();
    rows.push_back({v, run_experiment(cfg, jobs)});
  }
  return rows;
}

void write_ablation_csv(const std::string& path,
                        const std::vector<AblationRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "variant";
  if (!rows.empty())
    for (const SeedMetrics& m : rows[0].summary.per_seed)
      os << ",seed" << m.seed;
  os << ",mean,std\n";
  for (const AblationRow& r : rows) {
    os << to_string(r.variant);
    for (const SeedMetrics& m : r.summary.per_seed) os << "," << m.align;
    os << "," << r.summary.align.mean << "," << r.summary.align.stddev << "\n";
  }
}

std::vector<KSweepRow> sweep_k(const ExperimentConfig& base, int k_min,
                               int k_max, int jobs) {
  if (k_min < 1 || k_max < k_min)
    throw std::invalid_argument("sweep_k: bad K range");
  // Train once per seed, then rescore the cached traces at every K.
  auto demos = craft::generate_dataset(craft::training_tasks(),
                                       base.episodes_per_task, base.mode,
                                       base.data_seed);
  std::vector<SeedOutcome> outcomes = run_seeds(base, demos, jobs);

  std::vector<KSweepRow> rows;
  for (int K = k_min; K <= k_max; ++K) {
    KSweepRow row;
    row.K = K;
    std::vector<double> f1s, precs, recs, aligns;
    for (const SeedOutcome& o : outcomes) {
      double f1 = 0, prec = 0, rec = 0, align = 0;
      int count = 0;
      for (std::size_t ti = 0; ti < o.traces.size(); ++ti) {
        auto window = detection_window(o.traces[ti]);
        if (static_cast<int>(window.size()) < K) continue;
        auto seg_result = seg::segment_trace(window, base.detection, K);
        auto r = seg::f1_tolerance(seg_result.boundaries, o.gt_boundaries[ti], 1);
        f1 += r.f1;
        prec += r.precision;
        rec += r.recall;
        align += seg::alignment_accuracy(seg_result.boundaries,
                                         o.gt_boundaries[ti],
                                         static_cast<int>(window.size()));
        ++count;
      }
      if (count > 0) {
        SeedMetrics m;
        m.seed = o.metrics.seed;
        m.f1 = f1 / count;
        m.precision = prec / count;
        m.recall = rec / count;
        m.align = align / count;
        row.per_seed.push_back(m);
        f1s.push_back(m.f1);
        precs.push_back(m.precision);
        recs.push_back(m.recall);
        aligns.push_back(m.align);
      }
    }
    row.f1 = aggregate(f1s);
    row.precision = aggregate(precs);
    row.recall = aggregate(recs);
    row.align = aggregate(aligns);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ksweep_csv(const std::string& path,
                      const std::vector<KSweepRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "K,f1_mean,f1_std,precision_mean,precision_std,recall_mean,recall_std,"
        "align_mean,align_std\n";
  for (const KSweepRow& r : rows)
    os << r.K << "," << r.f1.mean << "," << r.f1.stddev << ","
       << r.precision.mean << "," << r.precision.stddev << "," << r.recall.mean
       << "," << r.recall.stddev << "," << r.align.mean << "," << r.align.stddev
       << "\n";
}

void write_metrics_csv(const std::string& path, const Summary& summary) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "seed,align,f1,precision,recall,final_loss,train_seconds\n";
  for (const SeedMetrics& m : summary.per_seed)
    os << m.seed << "," << m.align << "," << m.f1 << "," << m.precision << ","
       << m.recall << "," << m.final_loss << "," << m.train_seconds << "\n";
  os << "mean," << summary.align.mean << "," << summary.f1.mean << ","
     << summary.precision.mean << "," << summary.recall.mean << ",,\n";
  os << "std," << summary.align.stddev << "," << summary.f1.stddev << ","
     << summary.precision.stddev << "," << summary.recall.stddev << ",,\n";
}

}  // namespace ompn::exp
