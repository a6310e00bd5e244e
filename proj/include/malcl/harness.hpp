#pragma once

// Experiment orchestration: configuration, per-fold strategy runs with
// task-level checkpoints and resume, matrix export, summaries and reports.
//
// Run directory layout:
//   config.json                      sorted-key configuration snapshot
//   record.json                      strategy, site order, status, checkpoints
//   summary.csv                      aggregate over folds
//   matrix_<level>_<metric>_{mean,std}.csv
//   fold_<f>/splits/<site>.tsv       patient -> fold assignment
//   fold_<f>/task_<t>/               rbc.ckpt, infected.ckpt, buffer.csv,
//                                    fisher_*.bin, log.csv
//   fold_<f>/task_<t>.done           written after the task directory
//   fold_<f>/matrix_<level>_<metric>.csv
//   fold_<f>/confusions.csv, random_baseline.csv, fold.done

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "malcl/core.hpp"
#include "malcl/detector.hpp"
#include "malcl/eval.hpp"
#include "malcl/io.hpp"
#include "malcl/plot.hpp"
#include "malcl/splits.hpp"
#include "malcl/strategies.hpp"

namespace malcl::harness {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string data;
  std::string strategy = "baseline";
  int folds = 3;
  std::uint64_t seed = 0;
  int epochs = 50;
  int patience = 10;
  double learning_rate = 2e-3;
  int batch_size = 8;
  double obj_pos_weight = 4.0;
  double box_weight = 1.0;
  std::optional<double> lambda;  // unset: 10 for EWC, 1 for LWF
  int buffer_cap = 125;
  double buffer_pos_frac = 0.8;
  double buffer_site_frac = 0.5;
  double iou_tau = 0.5;
  double conf_threshold = 0.25;
  double nms_iou = 0.45;
  int fisher_samples = 256;
  int random_baseline_runs = 3;
  bool confidence_from_rbc_model = false;

  Strategy parsed_strategy() const {
    if (auto s = parse_strategy(strategy)) return *s;
    std::string names;
    for (Strategy s : kAllStrategies) names += (names.empty() ? "" : ", ") + to_string(s);
    throw Error("unknown strategy '" + strategy + "' (valid: " + names + ")");
  }

  void validate() const {
    parsed_strategy();
    if (folds < 2) throw Error("folds must be >= 2");
    if (random_baseline_runs < 1) throw Error("random_baseline_runs must be >= 1");
    if (fisher_samples < 1) throw Error("fisher_samples must be >= 1");
    if (buffer_cap < 0) throw Error("buffer_cap must be >= 0");
    if (buffer_pos_frac < 0 || buffer_pos_frac > 1) throw Error("buffer_pos_frac must lie in [0, 1]");
    if (buffer_site_frac < 0 || buffer_site_frac > 1) throw Error("buffer_site_frac must lie in [0, 1]");
    if (iou_tau <= 0 || iou_tau > 1) throw Error("iou_tau must lie in (0, 1]");
    if (conf_threshold < 0 || conf_threshold > 1) throw Error("conf_threshold must lie in [0, 1]");
    if (lambda && *lambda < 0) throw Error("lambda must be >= 0");
    train_config(0).validate();
  }

  TrainConfig train_config(std::uint64_t seed_) const {
    TrainConfig t;
    t.epochs = epochs;
    t.patience = patience;
    t.learning_rate = learning_rate;
    t.batch_size = batch_size;
    t.conf_threshold = conf_threshold;
    t.nms_iou = nms_iou;
    t.obj_pos_weight = obj_pos_weight;
    t.box_weight = box_weight;
    t.seed = seed_;
    return t;
  }

  PipelineConfig pipeline_config() const {
    PipelineConfig p;
    p.rbc_threshold = p.infected_threshold = conf_threshold;
    p.rbc_nms_iou = p.infected_nms_iou = nms_iou;
    p.merge_tau = iou_tau;
    return p;
  }

  StrategyConfig strategy_config(std::uint64_t fold_seed, int input_size) const {
    StrategyConfig c;
    c.train = train_config(fold_seed);
    c.pipeline = pipeline_config();
    c.buffer = {buffer_cap, buffer_pos_frac, buffer_site_frac};
    if (lambda) c.ewc_lambda = c.lwf_lambda = *lambda;
    c.fisher_samples = static_cast<std::size_t>(fisher_samples);
    c.confidence_from_rbc_model = confidence_from_rbc_model;
    c.seed = fold_seed;
    c.input_size = input_size;
    return c;
  }

  json to_json() const {
    json j;
    j["data"] = data;
    j["strategy"] = strategy;
    j["folds"] = folds;
    j["seed"] = seed;
    j["epochs"] = epochs;
    j["patience"] = patience;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["obj_pos_weight"] = obj_pos_weight;
    j["box_weight"] = box_weight;
    j["lambda"] = lambda ? json(*lambda) : json(nullptr);
    j["buffer_cap"] = buffer_cap;
    j["buffer_pos_frac"] = buffer_pos_frac;
    j["buffer_site_frac"] = buffer_site_frac;
    j["iou_tau"] = iou_tau;
    j["conf_threshold"] = conf_threshold;
    j["nms_iou"] = nms_iou;
    j["fisher_samples"] = fisher_samples;
    j["random_baseline_runs"] = random_baseline_runs;
    j["confidence_from_rbc_model"] = confidence_from_rbc_model;
    return j;
  }

  static ExperimentConfig from_json(const json& j) {
    ExperimentConfig c;
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("data", c.data);
    get("strategy", c.strategy);
    get("folds", c.folds);
    get("seed", c.seed);
    get("epochs", c.epochs);
    get("patience", c.patience);
    get("learning_rate", c.learning_rate);
    get("batch_size", c.batch_size);
    get("obj_pos_weight", c.obj_pos_weight);
    get("box_weight", c.box_weight);
    if (j.contains("lambda") && !j.at("lambda").is_null()) c.lambda = j.at("lambda").get<double>();
    get("buffer_cap", c.buffer_cap);
    get("buffer_pos_frac", c.buffer_pos_frac);
    get("buffer_site_frac", c.buffer_site_frac);
    get("iou_tau", c.iou_tau);
    get("conf_threshold", c.conf_threshold);
    get("nms_iou", c.nms_iou);
    get("fisher_samples", c.fisher_samples);
    get("random_baseline_runs", c.random_baseline_runs);
    get("confidence_from_rbc_model", c.confidence_from_rbc_model);
    return c;
  }
};

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Record
// ---------------------------------------------------------------------------

struct FoldRecord {
  std::vector<std::string> checkpoints;  // task directories, relative to the run
  PerformanceMatrix matrices[2][3];      // [level][metric]
  RandomBaseline baseline;

  const PerformanceMatrix& matrix(Level l, MetricKind m) const {
    return matrices[static_cast<int>(l)][static_cast<int>(m)];
  }
};

struct ExperimentRecord {
  ExperimentConfig config;
  Strategy strategy = Strategy::Baseline;
  std::vector<std::string> site_ids;
  std::vector<FoldRecord> folds;

  std::size_t tasks() const { return site_ids.size(); }
};

// ---------------------------------------------------------------------------
// Matrix and baseline CSV
// ---------------------------------------------------------------------------

inline std::string format_metric(const Metric& m) { return m ? io::format_exact(*m) : "UNDEFINED"; }

inline Metric parse_metric(const std::string& s, const std::string& where) {
  if (s == "UNDEFINED") return std::nullopt;
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw Error("");
    return v;
  } catch (...) {
    throw Error(where + ": cannot parse value '" + s + "'");
  }
}

// Header "model,<site ids>", one row per model f_t; unfilled cells are empty.
inline std::string matrix_csv(const PerformanceMatrix& P, const std::vector<std::string>& sites) {
  std::string out = "model";
  for (const auto& s : sites) out += "," + s;
  out += "\n";
  for (std::size_t t = 0; t < P.tasks(); ++t) {
    out += "f" + std::to_string(t + 1);
    for (std::size_t i = 0; i < P.tasks(); ++i) out += "," + (P.filled(t, i) ? format_metric(P.at(t, i)) : "");
    out += "\n";
  }
  return out;
}

inline PerformanceMatrix parse_matrix_csv(const std::string& text, std::size_t T, const std::string& where) {
  const auto rows = io::lines(text);
  if (rows.size() != T + 1) throw Error(where + ": expected " + std::to_string(T) + " matrix rows");
  PerformanceMatrix P(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto f = io::split(rows[t + 1], ',');
    if (f.size() != T + 1) throw Error(where + ": row " + std::to_string(t + 1) + " has wrong width");
    for (std::size_t i = 0; i < T; ++i)
      if (!f[i + 1].empty()) P.set(t, i, parse_metric(f[i + 1], where));
  }
  return P;
}

inline std::string baseline_csv(const RandomBaseline& b, const std::vector<std::string>& sites) {
  std::string out = "level,metric,task,site,value\n";
  for (Level l : kAllLevels)
    for (MetricKind m : kAllMetrics) {
      const auto v = b.get(l, m);
      for (std::size_t i = 0; i < v.size(); ++i)
        out += to_string(l) + "," + to_string(m) + "," + std::to_string(i + 1) + "," + sites.at(i) + "," +
               format_metric(v[i]) + "\n";
    }
  return out;
}

inline RandomBaseline parse_baseline_csv(const std::string& text, std::size_t T, const std::string& where) {
  RandomBaseline b;
  for (auto& lv : b.values)
    for (auto& v : lv) v.assign(T, std::nullopt);
  std::size_t seen = 0;
  for (const auto& line : io::lines(text)) {
    const auto f = io::split(line, ',');
    if (f.size() != 5) throw Error(where + ": malformed line '" + line + "'");
    if (f[0] == "level") continue;
    int li = -1, mi = -1;
    for (Level l : kAllLevels)
      if (to_string(l) == f[0]) li = static_cast<int>(l);
    for (MetricKind m : kAllMetrics)
      if (to_string(m) == f[1]) mi = static_cast<int>(m);
    const std::size_t task = std::stoul(f[2]);
    if (li < 0 || mi < 0 || task < 1 || task > T) throw Error(where + ": bad key in line '" + line + "'");
    b.values[li][mi][task - 1] = parse_metric(f[4], where);
    ++seen;
  }
  if (seen != 6 * T) throw Error(where + ": expected " + std::to_string(6 * T) + " entries");
  return b;
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

struct Stat {
  Metric mean, std;
  int folds = 0;    // folds contributing a defined value
  int skipped = 0;  // UNDEFINED entries skipped inside the folds
  bool applicable = true;
};

// Mean and population std over the folds whose value is defined.
inline Stat fold_stat(const std::vector<Averaged>& per_fold) {
  Stat s;
  std::vector<double> xs;
  for (const auto& a : per_fold) {
    s.skipped += a.skipped;
    if (a.value) xs.push_back(*a.value);
  }
  s.folds = static_cast<int>(xs.size());
  if (xs.empty()) return s;
  double sum = 0;
  for (double x : xs) sum += x;
  const double mean = sum / xs.size();
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  s.mean = mean;
  s.std = std::sqrt(ss / xs.size());
  return s;
}

enum class Quantity { Average, Bwt, Fwt };

inline std::string to_string(Quantity q) {
  switch (q) {
    case Quantity::Average: return "av";
    case Quantity::Bwt: return "bwt";
    case Quantity::Fwt: return "fwt";
  }
  return "?";
}

inline Stat summarize(const ExperimentRecord& r, Level l, MetricKind m, Quantity q) {
  const bool baseline = r.strategy == Strategy::Baseline;
  if (q != Quantity::Average && (baseline || r.tasks() < 2)) {
    Stat s;
    s.applicable = false;
    return s;
  }
  std::vector<Averaged> per_fold;
  for (const auto& f : r.folds) {
    const auto& P = f.matrix(l, m);
    switch (q) {
      case Quantity::Average:
        per_fold.push_back(average_performance(P, baseline ? std::optional<std::size_t>(0) : std::nullopt));
        break;
      case Quantity::Bwt: per_fold.push_back(backward_transfer(P)); break;
      case Quantity::Fwt: per_fold.push_back(forward_transfer(P, f.baseline.get(l, m))); break;
    }
  }
  return fold_stat(per_fold);
}

inline std::string format_stat_value(const Stat& s, const Metric& v) {
  if (!s.applicable) return "NA";
  return v ? io::format_exact(*v) : "UNDEFINED";
}

// Long format, one row per level x quantity x metric.
inline std::string summary_csv(const ExperimentRecord& r) {
  std::string out = "strategy,level,quantity,metric,mean,std,folds,skipped\n";
  for (Level l : kAllLevels)
    for (Quantity q : {Quantity::Average, Quantity::Bwt, Quantity::Fwt})
      for (MetricKind m : kAllMetrics) {
        const Stat s = summarize(r, l, m, q);
        out += to_string(r.strategy) + "," + to_string(l) + "," + to_string(q) + "," + to_string(m) + "," +
               format_stat_value(s, s.mean) + "," + format_stat_value(s, s.std) + "," + std::to_string(s.folds) +
               "," + std::to_string(s.skipped) + "\n";
      }
  return out;
}

// Cell-wise mean or population std across folds, over defined values.
inline PerformanceMatrix aggregate_matrix(const ExperimentRecord& r, Level l, MetricKind m, bool want_std) {
  const std::size_t T = r.tasks();
  PerformanceMatrix out(T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<Averaged> cell;
      bool any = false;
      for (const auto& f : r.folds) {
        const auto& P = f.matrix(l, m);
        if (!P.filled(t, i)) continue;
        any = true;
        cell.push_back({P.at(t, i), P.at(t, i) ? 0 : 1});
      }
      if (!any) continue;
      const Stat s = fold_stat(cell);
      out.set(t, i, want_std ? s.std : s.mean);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Task artifacts on disk
// ---------------------------------------------------------------------------

namespace detail {

inline fs::path fold_dir(const fs::path& out, int f) { return out / ("fold_" + std::to_string(f)); }
inline fs::path task_dir(const fs::path& fold, std::size_t t) { return fold / ("task_" + std::to_string(t + 1)); }
inline fs::path task_marker(const fs::path& fold, std::size_t t) {
  return fold / ("task_" + std::to_string(t + 1) + ".done");
}

inline std::string matrix_file(Level l, MetricKind m) { return "matrix_" + to_string(l) + "_" + to_string(m); }

inline void write_floats(const fs::path& p, const std::vector<float>& v) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot open " + p.string() + " for writing");
  const std::uint64_t n = v.size();
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!os) throw Error("failed writing " + p.string());
}

inline std::vector<float> read_floats(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot open " + p.string());
  std::uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof n);
  std::vector<float> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw Error(p.string() + " is truncated");
  return v;
}

inline std::string buffer_csv(const std::vector<BufferEntry>& entries) {
  std::string out = "site_id,image_id,positive,score\n";
  for (const auto& e : entries)
    out += e.site_id + "," + e.image_id + "," + (e.positive ? "1" : "0") + "," +
           (e.score ? io::format_exact(*e.score) : "NONE") + "\n";
  return out;
}

inline std::vector<BufferEntry> parse_buffer_csv(const std::string& text, const std::string& where) {
  std::vector<BufferEntry> out;
  for (const auto& line : io::lines(text)) {
    const auto f = io::split(line, ',');
    if (f.size() != 4) throw Error(where + ": malformed line '" + line + "'");
    if (f[0] == "site_id") continue;
    BufferEntry e;
    e.site_id = f[0];
    e.image_id = f[1];
    e.positive = f[2] == "1";
    if (f[3] != "NONE") e.score = std::stod(f[3]);
    out.push_back(e);
  }
  return out;
}

inline std::string train_log_csv(const TaskLog& log) {
  std::string out = "model,epoch,train_loss,val_f1,val_loss,improved\n";
  auto emit = [&](const char* name, const TrainLog& tl) {
    for (const auto& e : tl.epochs)
      out += std::string(name) + "," + std::to_string(e.epoch) + "," + io::format_exact(e.train_loss) + "," +
             (e.val_f1_defined ? io::format_exact(e.val_f1) : "UNDEFINED") + "," + io::format_exact(e.val_loss) +
             "," + (e.improved ? "1" : "0") + "\n";
  };
  emit("rbc", log.rbc);
  emit("infected", log.infected);
  return out;
}

inline void save_task(const fs::path& fold, std::size_t t, const TaskArtifacts& a, Strategy s) {
  const auto dir = task_dir(fold, t);
  fs::create_directories(dir);
  save_checkpoint((dir / "rbc.ckpt").string(), a.pipeline.rbc);
  save_checkpoint((dir / "infected.ckpt").string(), a.pipeline.infected);
  if (uses_buffer(s)) io::write_text(dir / "buffer.csv", buffer_csv(a.buffer_entries));
  if (s == Strategy::Ewc) {
    write_floats(dir / "fisher_rbc.bin", a.fisher_rbc);
    write_floats(dir / "fisher_infected.bin", a.fisher_infected);
  }
}

inline TaskArtifacts load_task(const fs::path& fold, std::size_t t, Strategy s) {
  const auto dir = task_dir(fold, t);
  TaskArtifacts a;
  a.pipeline.rbc = load_checkpoint((dir / "rbc.ckpt").string());
  a.pipeline.infected = load_checkpoint((dir / "infected.ckpt").string());
  if (uses_buffer(s))
    a.buffer_entries = parse_buffer_csv(io::read_text(dir / "buffer.csv"), (dir / "buffer.csv").string());
  if (s == Strategy::Ewc) {
    a.fisher_rbc = read_floats(dir / "fisher_rbc.bin");
    a.fisher_infected = read_floats(dir / "fisher_infected.bin");
  }
  return a;
}

inline bool directory_has_entries(const fs::path& p) {
  return fs::exists(p) && fs::is_directory(p) && fs::directory_iterator(p) != fs::directory_iterator();
}

inline int stream_input_size(const TaskStream& s) {
  int size = 0;
  for (const auto& task : s.tasks)
    for (const auto* list : {&task.train, &task.val, &task.test})
      for (const auto& r : *list) {
        if (r.pixels.width != r.pixels.height) throw Error("image " + r.image_id + " is not square");
        if (size == 0) size = r.pixels.width;
        if (r.pixels.width != size) throw Error("image " + r.image_id + " differs in size from the first image");
      }
  if (size == 0) throw Error("dataset holds no images");
  return size;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct RunOptions {
  bool resume = false;
  bool force = false;
  std::optional<std::size_t> stop_after_task;  // 1-based; stop once that task is trained
  std::function<void(const std::string&)> progress;
};

struct RunOutcome {
  bool complete = false;
  std::string message;
};

// Writes the record and every derived CSV from the persisted fold files.
inline void write_summaries(const fs::path& out);

inline RunOutcome run_experiment(const ExperimentConfig& cfg, const fs::path& out, const RunOptions& opt = {}) {
  cfg.validate();
  const Strategy strategy = cfg.parsed_strategy();
  const std::string config_text = dump(cfg.to_json());

  if (fs::exists(out / "config.json")) {
    if (opt.force) {
      fs::remove_all(out);
    } else if (!opt.resume) {
      throw Error("output directory " + out.string() + " already holds a run; pass --resume or --force");
    } else if (io::read_text(out / "config.json") != config_text) {
      throw Error("cannot resume: configuration differs from " + (out / "config.json").string());
    }
  } else if (detail::directory_has_entries(out) && !opt.force) {
    throw Error("output directory " + out.string() + " is not empty");
  }
  fs::create_directories(out);
  io::write_text(out / "config.json", config_text);

  auto say = [&](const std::string& s) {
    if (opt.progress) opt.progress(s);
  };
  say("loading dataset " + cfg.data);
  const TaskStream full = io::read_stream(cfg.data);
  const int input_size = detail::stream_input_size(full);
  const std::size_t T = full.size();
  const std::size_t T_run = contracted_tasks(strategy, T);
  std::vector<std::string> sites;
  for (const auto& t : full.tasks) sites.push_back(t.site_id);

  json record;
  record["strategy"] = to_string(strategy);
  record["sites"] = sites;
  record["folds"] = cfg.folds;
  record["status"] = "incomplete";
  record["checkpoints"] = json::array();
  for (int f = 0; f < cfg.folds; ++f) {
    json paths = json::array();
    for (std::size_t t = 0; t < T_run; ++t)
      paths.push_back(detail::task_dir(fs::path("fold_" + std::to_string(f)), t).string());
    record["checkpoints"].push_back(paths);
  }
  io::write_text(out / "record.json", dump(record));

  for (int f = 0; f < cfg.folds; ++f) {
    const fs::path fdir = detail::fold_dir(out, f);
    if (fs::exists(fdir / "fold.done")) {
      say("fold " + std::to_string(f + 1) + ": already complete");
      continue;
    }
    const std::uint64_t fold_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(f));
    TaskStream stream;
    for (const auto& site : full.tasks) {
      const auto kf = patient_grouped_kfold(site, cfg.folds, derive_seed(cfg.seed, "kfold:" + site.site_id));
      io::write_text(fdir / "splits" / (site.site_id + ".tsv"), kf.assignment.to_table());
      stream.tasks.push_back(fold_dataset(site, kf.folds[static_cast<std::size_t>(f)]));
    }

    bool stopped = false;
    std::vector<TaskLog> fresh_logs(T_run);
    RunHooks hooks;
    hooks.load = [&](std::size_t t) -> std::optional<TaskArtifacts> {
      if (!fs::exists(detail::task_marker(fdir, t))) return std::nullopt;
      return detail::load_task(fdir, t, strategy);
    };
    hooks.save = [&](std::size_t t, const TaskArtifacts& a) {
      detail::save_task(fdir, t, a, strategy);
      io::write_text(detail::task_marker(fdir, t), "");
      if (opt.stop_after_task && t + 1 == *opt.stop_after_task && t + 1 < T_run) {
        stopped = true;
        return false;
      }
      return true;
    };
    hooks.progress = [&](const std::string& s) { say("fold " + std::to_string(f + 1) + ": " + s); };

    const auto run = run_strategy(stream, strategy, cfg.strategy_config(fold_seed, input_size), hooks);
    for (std::size_t t = 0; t < run.logs.size(); ++t)
      if (!run.logs[t].resumed)
        io::write_text(detail::task_dir(fdir, t) / "log.csv", detail::train_log_csv(run.logs[t]));
    if (stopped || run.pipelines.size() < T_run) {
      return {false, "stopped after task " + std::to_string(run.pipelines.size()) + " of fold " +
                         std::to_string(f + 1) + "; rerun with --resume to continue"};
    }

    say("fold " + std::to_string(f + 1) + ": evaluating");
    const PipelineConfig pc = cfg.pipeline_config();
    const ConfusionGrid grid = evaluate_run(run, stream, pc);
    std::string conf = "model,task,level,tp,fp,tn,fn\n";
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < T; ++i)
        if (const auto& c = grid.at(t, i))
          for (Level l : kAllLevels) {
            const auto& x = c->at(l);
            conf += std::to_string(t + 1) + "," + std::to_string(i + 1) + "," + to_string(l) + "," +
                    std::to_string(x.tp) + "," + std::to_string(x.fp) + "," + std::to_string(x.tn) + "," +
                    std::to_string(x.fn) + "\n";
          }
    io::write_text(fdir / "confusions.csv", conf);
    for (Level l : kAllLevels)
      for (MetricKind m : kAllMetrics)
        io::write_text(fdir / (detail::matrix_file(l, m) + ".csv"), matrix_csv(to_matrix(grid, m, l), sites));

    std::vector<std::uint64_t> rb_seeds;
    for (int r = 0; r < cfg.random_baseline_runs; ++r)
      rb_seeds.push_back(derive_seed(fold_seed, "random:" + std::to_string(r)));
    const auto rb = random_baseline(stream, rb_seeds, pc, input_size);
    io::write_text(fdir / "random_baseline.csv", baseline_csv(rb, sites));
    io::write_text(fdir / "fold.done", "");
  }

  record["status"] = "complete";
  io::write_text(out / "record.json", dump(record));
  write_summaries(out);
  return {true, "run complete"};
}

inline ExperimentRecord load_record(const fs::path& out) {
  if (!fs::exists(out / "record.json")) throw Error(out.string() + " holds no run record");
  const json rec = json::parse(io::read_text(out / "record.json"));
  if (rec.at("status") != "complete")
    throw Error("run in " + out.string() + " is incomplete; rerun with --resume to finish it");
  ExperimentRecord r;
  r.config = ExperimentConfig::from_json(json::parse(io::read_text(out / "config.json")));
  r.strategy = r.config.parsed_strategy();
  r.site_ids = rec.at("sites").get<std::vector<std::string>>();
  const std::size_t T = r.tasks();
  const int k = rec.at("folds").get<int>();
  for (int f = 0; f < k; ++f) {
    const auto fdir = detail::fold_dir(out, f);
    FoldRecord fr;
    fr.checkpoints = rec.at("checkpoints").at(static_cast<std::size_t>(f)).get<std::vector<std::string>>();
    for (Level l : kAllLevels)
      for (MetricKind m : kAllMetrics) {
        const auto p = fdir / (detail::matrix_file(l, m) + ".csv");
        fr.matrices[static_cast<int>(l)][static_cast<int>(m)] = parse_matrix_csv(io::read_text(p), T, p.string());
      }
    const auto bp = fdir / "random_baseline.csv";
    fr.baseline = parse_baseline_csv(io::read_text(bp), T, bp.string());
    r.folds.push_back(std::move(fr));
  }
  return r;
}

inline void write_summaries(const fs::path& out) {
  const ExperimentRecord r = load_record(out);
  io::write_text(out / "summary.csv", summary_csv(r));
  for (Level l : kAllLevels)
    for (MetricKind m : kAllMetrics) {
      io::write_text(out / (detail::matrix_file(l, m) + "_mean.csv"), matrix_csv(aggregate_matrix(r, l, m, false), r.site_ids));
      io::write_text(out / (detail::matrix_file(l, m) + "_std.csv"), matrix_csv(aggregate_matrix(r, l, m, true), r.site_ids));
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

// Per-task in-domain score P(i,i), or P(1,i) for the baseline, over folds.
inline Stat curve_point(const ExperimentRecord& r, Level l, MetricKind m, std::size_t i) {
  std::vector<Averaged> per_fold;
  for (const auto& f : r.folds) {
    const auto& P = f.matrix(l, m);
    const std::size_t row = r.strategy == Strategy::Baseline ? 0 : i;
    per_fold.push_back({P.at(row, i), P.at(row, i) ? 0 : 1});
  }
  return fold_stat(per_fold);
}

inline std::vector<ExperimentRecord> order_records(std::vector<ExperimentRecord> records) {
  if (records.empty()) throw Error("report needs at least one run record");
  for (const auto& r : records)
    if (r.tasks() != records.front().tasks())
      throw Error("records disagree on task count: " + std::to_string(records.front().tasks()) + " vs " +
                  std::to_string(r.tasks()));
  auto rank = [](Strategy s) {
    return static_cast<int>(std::find(std::begin(kAllStrategies), std::end(kAllStrategies), s) -
                            std::begin(kAllStrategies));
  };
  std::stable_sort(records.begin(), records.end(),
                   [&](const auto& a, const auto& b) { return rank(a.strategy) < rank(b.strategy); });
  return records;
}

struct TableColumn {
  std::string name;
  Quantity q;
  MetricKind m;
};

inline const std::vector<TableColumn>& table_columns() {
  static const std::vector<TableColumn> cols{{"av_acc", Quantity::Average, MetricKind::Accuracy},
                                             {"av_sens", Quantity::Average, MetricKind::Sensitivity},
                                             {"av_spe", Quantity::Average, MetricKind::Specificity},
                                             {"bwt", Quantity::Bwt, MetricKind::Accuracy},
                                             {"fwt", Quantity::Fwt, MetricKind::Accuracy}};
  return cols;
}

inline std::string level_summary_csv(const std::vector<ExperimentRecord>& records, Level l) {
  std::string out = "approach";
  for (const auto& c : table_columns()) out += "," + c.name + "_mean," + c.name + "_std";
  out += ",skipped\n";
  for (const auto& r : records) {
    out += display_name(r.strategy);
    int skipped = 0;
    for (const auto& c : table_columns()) {
      const Stat s = summarize(r, l, c.m, c.q);
      skipped += s.skipped;
      out += "," + format_stat_value(s, s.mean) + "," + format_stat_value(s, s.std);
    }
    out += "," + std::to_string(skipped) + "\n";
  }
  return out;
}

inline std::string curves_csv(const std::vector<ExperimentRecord>& records) {
  std::string out = "strategy,level,metric,task,site,mean,std,folds\n";
  for (const auto& r : records)
    for (Level l : kAllLevels)
      for (MetricKind m : kAllMetrics)
        for (std::size_t i = 0; i < r.tasks(); ++i) {
          const Stat s = curve_point(r, l, m, i);
          out += to_string(r.strategy) + "," + to_string(l) + "," + to_string(m) + "," + std::to_string(i + 1) +
                 "," + r.site_ids[i] + "," + format_stat_value(s, s.mean) + "," + format_stat_value(s, s.std) + "," +
                 std::to_string(s.folds) + "\n";
        }
  return out;
}

// Fixed-width table; the best mean per column is starred.
inline std::string text_table(const std::vector<ExperimentRecord>& records) {
  std::string out;
  for (Level l : kAllLevels) {
    out += (l == Level::Rbc ? "RBC level" : "Image level");
    out += " (mean +- std over folds; Av. in %, BWT/FWT on accuracy; * best)\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-14s %-18s %-18s %-18s %-20s %-20s\n", "Approach", "Av. Acc", "Av. Sens",
                  "Av. Spe", "BWT", "FWT");
    out += buf;
    std::vector<double> best(table_columns().size(), -INFINITY);
    for (const auto& r : records)
      for (std::size_t c = 0; c < table_columns().size(); ++c) {
        const Stat s = summarize(r, l, table_columns()[c].m, table_columns()[c].q);
        if (s.mean) best[c] = std::max(best[c], *s.mean);
      }
    int skipped = 0;
    for (const auto& r : records) {
      std::snprintf(buf, sizeof buf, "%-14s", display_name(r.strategy).c_str());
      out += buf;
      for (std::size_t c = 0; c < table_columns().size(); ++c) {
        const auto& col = table_columns()[c];
        const Stat s = summarize(r, l, col.m, col.q);
        skipped += s.skipped;
        std::string cell;
        if (!s.applicable) {
          cell = "-";
        } else if (!s.mean) {
          cell = "undefined";
        } else {
          const bool pct = col.q == Quantity::Average;
          const double scale = pct ? 100.0 : 1.0;
          const int digits = pct ? 2 : 4;
          cell = io::format_fixed(*s.mean * scale, digits) + " +- " + io::format_fixed(*s.std * scale, digits);
          if (*s.mean == best[c]) cell += " *";
        }
        std::snprintf(buf, sizeof buf, " %-*s", c < 3 ? 18 : 20, cell.c_str());
        out += buf;
      }
      out += "\n";
    }
    if (skipped > 0) out += "(" + std::to_string(skipped) + " undefined entries skipped in averages)\n";
    out += "\n";
  }
  return out;
}

inline void write_report(const std::vector<fs::path>& runs, const fs::path& out) {
  std::vector<ExperimentRecord> loaded;
  for (const auto& p : runs) loaded.push_back(load_record(p));
  const auto records = order_records(std::move(loaded));
  fs::create_directories(out);
  for (Level l : kAllLevels) io::write_text(out / ("summary_" + to_string(l) + ".csv"), level_summary_csv(records, l));
  io::write_text(out / "curves.csv", curves_csv(records));
  io::write_text(out / "table.txt", text_table(records));
  const std::size_t T = records.front().tasks();
  for (Level l : kAllLevels)
    for (MetricKind m : kAllMetrics) {
      std::vector<plot::Series> series;
      for (const auto& r : records) {
        plot::Series s;
        s.label = to_string(r.strategy);
        for (std::size_t i = 0; i < T; ++i) {
          const Stat st = curve_point(r, l, m, i);
          s.mean.push_back(st.mean.value_or(NAN));
          s.std.push_back(st.std.value_or(NAN));
        }
        series.push_back(std::move(s));
      }
      io::write_png(out / ("curves_" + to_string(l) + "_" + to_string(m) + ".png"),
                    plot::line_chart(to_string(l) + " " + to_string(m), series, T));
    }
}

}  // namespace malcl::harness
