#pragma once

// RBC- and image-level confusion counts, accuracy/sensitivity/specificity,
// the train-test performance matrix and the continual-learning summaries
// (average performance, backward transfer, forward transfer).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "malcl/core.hpp"
#include "malcl/detector.hpp"
#include "malcl/strategies.hpp"

namespace malcl {

struct Confusion {
  long tp = 0, fp = 0, tn = 0, fn = 0;

  long total() const { return tp + fp + tn + fn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const Confusion&) const = default;
};

// nullopt stands for an undefined metric (empty denominator).
using Metric = std::optional<double>;

inline Metric accuracy(const Confusion& c) {
  if (c.total() == 0) return std::nullopt;
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}
inline Metric sensitivity(const Confusion& c) {
  if (c.tp + c.fn == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}
inline Metric specificity(const Confusion& c) {
  if (c.tn + c.fp == 0) return std::nullopt;
  return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

enum class MetricKind { Accuracy, Sensitivity, Specificity };
enum class Level { Rbc, Image };

inline constexpr MetricKind kAllMetrics[] = {MetricKind::Accuracy, MetricKind::Sensitivity, MetricKind::Specificity};
inline constexpr Level kAllLevels[] = {Level::Rbc, Level::Image};

inline std::string to_string(MetricKind m) {
  switch (m) {
    case MetricKind::Accuracy: return "accuracy";
    case MetricKind::Sensitivity: return "sensitivity";
    case MetricKind::Specificity: return "specificity";
  }
  return "?";
}
inline std::string to_string(Level l) { return l == Level::Rbc ? "rbc" : "image"; }

inline Metric compute(MetricKind m, const Confusion& c) {
  switch (m) {
    case MetricKind::Accuracy: return accuracy(c);
    case MetricKind::Sensitivity: return sensitivity(c);
    case MetricKind::Specificity: return specificity(c);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// RBC-level matching
// ---------------------------------------------------------------------------

struct TruthCell {
  BoundingBox box;
  bool infected = false;
};

// Ground-truth cells: every RBC_ANY box, flagged infected when an
// RBC_INFECTED box matches it (IoU >= tau, greedy by IoU then order);
// infected boxes without an RBC_ANY partner become infected cells.
inline std::vector<TruthCell> truth_cells(std::span<const Annotation> truth, double tau = 0.5) {
  std::vector<TruthCell> cells;
  std::vector<const Annotation*> infected;
  for (const auto& a : truth) {
    if (a.cls == CellClass::RbcAny)
      cells.push_back({a.box, false});
    else
      infected.push_back(&a);
  }
  const std::size_t n_any = cells.size();
  for (const auto* inf : infected) {
    int best = -1;
    double best_iou = 0;
    for (std::size_t i = 0; i < n_any; ++i) {
      if (cells[i].infected) continue;
      const double v = iou(cells[i].box, inf->box);
      if (v >= tau && (best < 0 || v > best_iou)) {
        best = static_cast<int>(i);
        best_iou = v;
      }
    }
    if (best >= 0)
      cells[best].infected = true;
    else
      cells.push_back({inf->box, true});
  }
  return cells;
}

// Verdicts claim truth cells greedily by descending confidence at IoU >= tau.
// Matched pairs give TP/TN/FP/FN; unmatched infected truth is FN; unmatched
// infected verdicts are FP; unmatched negative cells on either side are
// ignored.
inline Confusion match_rbc(std::span<const CellVerdict> verdicts, std::span<const Annotation> truth, double tau = 0.5) {
  const auto cells = truth_cells(truth, tau);
  std::vector<int> order(verdicts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return verdicts[a].confidence > verdicts[b].confidence; });
  std::vector<char> taken(cells.size(), 0);
  Confusion c;
  for (int vi : order) {
    const auto& v = verdicts[vi];
    int best = -1;
    double best_iou = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (taken[i]) continue;
      const double o = iou(v.box, cells[i].box);
      if (o >= tau && (best < 0 || o > best_iou)) {
        best = static_cast<int>(i);
        best_iou = o;
      }
    }
    if (best < 0) {
      if (v.infected) ++c.fp;
      continue;
    }
    taken[best] = 1;
    const bool t = cells[best].infected;
    if (v.infected && t) ++c.tp;
    else if (!v.infected && !t) ++c.tn;
    else if (v.infected) ++c.fp;
    else ++c.fn;
  }
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (!taken[i] && cells[i].infected) ++c.fn;
  return c;
}

inline Confusion image_confusion(const std::vector<bool>& predictions, const std::vector<bool>& truth) {
  if (predictions.size() != truth.size()) throw Error("image_confusion: prediction/truth length mismatch");
  Confusion c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predictions[i] && truth[i]) ++c.tp;
    else if (predictions[i]) ++c.fp;
    else if (truth[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Both levels for one pipeline on one test set.
struct LevelConfusions {
  Confusion rbc;
  Confusion image;

  const Confusion& at(Level l) const { return l == Level::Rbc ? rbc : image; }
  bool operator==(const LevelConfusions&) const = default;
};

inline LevelConfusions evaluate_pipeline(const Pipeline& p, std::span<const ImageRecord> test, const PipelineConfig& cfg) {
  LevelConfusions out;
  std::vector<bool> pred, truth;
  for (const auto& rec : test) {
    const auto verdicts = predict_cells(p, rec.pixels, cfg);
    out.rbc += match_rbc(verdicts, rec.annotations, cfg.merge_tau);
    pred.push_back(classify_image(verdicts));
    truth.push_back(rec.positive());
  }
  out.image = image_confusion(pred, truth);
  return out;
}

// ---------------------------------------------------------------------------
// Performance matrix
// ---------------------------------------------------------------------------

// P(t, i): metric of the model after task t on task i's test set (0-based).
// Cells never evaluated stay unfilled; filled cells may hold an undefined
// metric.
class PerformanceMatrix {
public:
  PerformanceMatrix() = default;
  explicit PerformanceMatrix(std::size_t T) : T_(T), v_(T * T), filled_(T * T, 0) {}

  std::size_t tasks() const { return T_; }
  const Metric& at(std::size_t t, std::size_t i) const { return v_.at(t * T_ + i); }
  bool filled(std::size_t t, std::size_t i) const { return filled_.at(t * T_ + i) != 0; }
  void set(std::size_t t, std::size_t i, Metric m) {
    v_.at(t * T_ + i) = m;
    filled_.at(t * T_ + i) = 1;
  }

private:
  std::size_t T_ = 0;
  std::vector<Metric> v_;
  std::vector<char> filled_;
};

// Mean over defined values with the number of undefined entries skipped.
struct Averaged {
  Metric value;
  int skipped = 0;
};

inline Averaged mean_defined(std::span<const Metric> xs) {
  double sum = 0;
  int n = 0, skipped = 0;
  for (const auto& x : xs) {
    if (x) {
      sum += *x;
      ++n;
    } else {
      ++skipped;
    }
  }
  if (n == 0) return {std::nullopt, skipped};
  return {sum / n, skipped};
}

// Mean of one row (default: the last): performance of the final model on
// every test set. A run that never adapts past task 1 passes row 0.
inline Averaged average_performance(const PerformanceMatrix& P, std::optional<std::size_t> row = std::nullopt) {
  if (P.tasks() == 0) return {};
  const std::size_t r = row.value_or(P.tasks() - 1);
  std::vector<Metric> xs;
  for (std::size_t i = 0; i < P.tasks(); ++i) xs.push_back(P.at(r, i));
  return mean_defined(xs);
}

// mean_{i<T} (P(T,i) - P(i,i)); terms with an undefined side are skipped.
inline Averaged backward_transfer(const PerformanceMatrix& P) {
  const std::size_t T = P.tasks();
  if (T < 2) return {};
  std::vector<Metric> terms;
  for (std::size_t i = 0; i + 1 < T; ++i) {
    const auto& a = P.at(T - 1, i);
    const auto& b = P.at(i, i);
    terms.push_back(a && b ? Metric(*a - *b) : std::nullopt);
  }
  return mean_defined(terms);
}

// mean_{i>=2} (P(i-1,i) - b(i)) with b the random-weights baseline per task.
inline Averaged forward_transfer(const PerformanceMatrix& P, std::span<const Metric> random_baseline) {
  const std::size_t T = P.tasks();
  if (T < 2) return {};
  if (random_baseline.size() != T) throw Error("forward_transfer: baseline length must equal task count");
  std::vector<Metric> terms;
  for (std::size_t i = 1; i < T; ++i) {
    const auto& a = P.at(i - 1, i);
    const auto& b = random_baseline[i];
    terms.push_back(a && b ? Metric(*a - *b) : std::nullopt);
  }
  return mean_defined(terms);
}

// Confusions for every (t, i) cell that exists in a run.
struct ConfusionGrid {
  std::size_t T = 0;
  std::vector<std::optional<LevelConfusions>> cells;

  explicit ConfusionGrid(std::size_t tasks = 0) : T(tasks), cells(tasks * tasks) {}
  std::optional<LevelConfusions>& at(std::size_t t, std::size_t i) { return cells.at(t * T + i); }
  const std::optional<LevelConfusions>& at(std::size_t t, std::size_t i) const { return cells.at(t * T + i); }
};

inline PerformanceMatrix to_matrix(const ConfusionGrid& g, MetricKind m, Level l) {
  PerformanceMatrix P(g.T);
  for (std::size_t t = 0; t < g.T; ++t)
    for (std::size_t i = 0; i < g.T; ++i)
      if (g.at(t, i)) P.set(t, i, compute(m, g.at(t, i)->at(l)));
  return P;
}

// Scores every pipeline of a run on every task's test set. A baseline run
// holds only f_1, so only row 0 is filled.
inline ConfusionGrid evaluate_run(const StrategyRun& run, const TaskStream& stream, const PipelineConfig& cfg) {
  ConfusionGrid g(stream.size());
  for (std::size_t t = 0; t < run.pipelines.size(); ++t)
    for (std::size_t i = 0; i < stream.size(); ++i)
      g.at(t, i) = evaluate_pipeline(run.pipelines[t], stream.tasks[i].test, cfg);
  return g;
}

inline PerformanceMatrix build_matrix(const StrategyRun& run, const TaskStream& stream, MetricKind m, Level l,
                                      const PipelineConfig& cfg) {
  const std::size_t expected = contracted_tasks(run.strategy, stream.size());
  if (run.pipelines.size() < expected)
    throw Error("build_matrix: missing checkpoint for (t=" + std::to_string(run.pipelines.size() + 1) + ", i=1)");
  return to_matrix(evaluate_run(run, stream, cfg), m, l);
}

struct RandomBaseline {
  // values[level][metric][task]
  std::vector<Metric> values[2][3];

  std::span<const Metric> get(Level l, MetricKind m) const {
    return values[static_cast<int>(l)][static_cast<int>(m)];
  }
};

// Each task's test set scored by R randomly initialized pipelines; metric
// values are averaged over the seeds that define them.
inline RandomBaseline random_baseline(const TaskStream& stream, std::span<const std::uint64_t> seeds,
                                      const PipelineConfig& cfg, int input_size = 256) {
  RandomBaseline b;
  std::vector<Pipeline> pipes;
  for (auto s : seeds) pipes.push_back(build_reference_pipeline(derive_seed(s, "random-baseline"), input_size));
  for (const auto& task : stream.tasks) {
    std::vector<LevelConfusions> per_seed;
    for (const auto& p : pipes) per_seed.push_back(evaluate_pipeline(p, task.test, cfg));
    for (Level l : kAllLevels)
      for (MetricKind m : kAllMetrics) {
        std::vector<Metric> xs;
        for (const auto& c : per_seed) xs.push_back(compute(m, c.at(l)));
        b.values[static_cast<int>(l)][static_cast<int>(m)].push_back(mean_defined(xs).value);
      }
  }
  return b;
}

}  // namespace malcl
