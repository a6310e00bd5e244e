#pragma once

// The six training strategies over a task stream: baseline, incremental
// joint training, EWC, LWF, naive replay and confidence replay.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "malcl/core.hpp"
#include "malcl/detector.hpp"

namespace malcl {

// ---------------------------------------------------------------------------
// Memory buffer
// ---------------------------------------------------------------------------

struct BufferConfig {
  int cap = 125;
  double positive_fraction = 0.8;
  double site_fraction = 0.5;
};

struct BufferQuota {
  int total = 0;
  int positives = 0;
  int negatives = 0;
  bool operator==(const BufferQuota&) const = default;
};

inline int buffer_site_quota(int train_size, const BufferConfig& cfg = {}) {
  const int by_size = static_cast<int>(std::floor(cfg.site_fraction * train_size + 1e-9));
  return std::max(0, std::min(cfg.cap, by_size));
}

// Positives take round(positive_fraction * quota) slots when available and
// negatives fill the rest. A positive shortfall is filled with negatives; a
// negative shortfall leaves the slots empty so the positive count stays fixed.
inline BufferQuota buffer_quota(int train_size, int n_positive, const BufferConfig& cfg = {}) {
  BufferQuota q;
  q.total = buffer_site_quota(train_size, cfg);
  const int n_negative = train_size - n_positive;
  const int want_pos = static_cast<int>(std::lround(cfg.positive_fraction * q.total));
  q.positives = std::min(want_pos, n_positive);
  q.negatives = std::min(q.total - q.positives, n_negative);
  return q;
}

struct BufferEntry {
  std::string site_id;
  std::string image_id;
  bool positive = false;
  std::optional<double> score;
  const ImageRecord* image = nullptr;
};

class MemoryBuffer {
public:
  explicit MemoryBuffer(BufferConfig cfg = {}) : cfg_(cfg) {}

  const BufferConfig& config() const { return cfg_; }

  void add_site(const std::string& site_id, std::vector<BufferEntry> entries) {
    if (sites_.count(site_id)) throw Error("memory buffer already holds site " + site_id);
    order_.push_back(site_id);
    sites_[site_id] = std::move(entries);
  }

  const std::vector<BufferEntry>& site(const std::string& site_id) const { return sites_.at(site_id); }
  bool has_site(const std::string& site_id) const { return sites_.count(site_id) != 0; }
  const std::vector<std::string>& site_order() const { return order_; }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [k, v] : sites_) n += v.size();
    return n;
  }

  ImageRefs images() const {
    ImageRefs out;
    for (const auto& s : order_)
      for (const auto& e : sites_.at(s)) out.push_back(e.image);
    return out;
  }

private:
  BufferConfig cfg_;
  std::vector<std::string> order_;
  std::map<std::string, std::vector<BufferEntry>> sites_;
};

namespace detail {

inline void split_by_positivity(const SiteDataset& site, std::vector<const ImageRecord*>& pos,
                                std::vector<const ImageRecord*>& neg) {
  for (const auto& r : site.train) (r.positive() ? pos : neg).push_back(&r);
}

inline BufferEntry entry_of(const ImageRecord& r, std::optional<double> score = std::nullopt) {
  return {r.site_id, r.image_id, r.positive(), score, &r};
}

}  // namespace detail

inline MemoryBuffer build_buffer_naive(MemoryBuffer buffer, const SiteDataset& site, std::uint64_t seed) {
  if (site.train.empty()) throw Error("build_buffer_naive: site " + site.site_id + " has no training images");
  std::vector<const ImageRecord*> pos, neg;
  detail::split_by_positivity(site, pos, neg);
  const auto q = buffer_quota(static_cast<int>(site.train.size()), static_cast<int>(pos.size()), buffer.config());
  std::mt19937_64 rng(derive_seed(seed, "buffer:" + site.site_id));
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::vector<BufferEntry> entries;
  for (int i = 0; i < q.positives; ++i) entries.push_back(detail::entry_of(*pos[i]));
  for (int i = 0; i < q.negatives; ++i) entries.push_back(detail::entry_of(*neg[i]));
  buffer.add_site(site.site_id, std::move(entries));
  return buffer;
}

struct ScoredImage {
  std::string image_id;
  std::optional<double> score;
};

// Indices of the `k` lowest-scored items: ascending score, unscored items
// last, ties by image_id.
inline std::vector<std::size_t> select_lowest_confidence(std::span<const ScoredImage> items, std::size_t k) {
  std::vector<std::size_t> idx(items.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = items[a];
    const auto& y = items[b];
    if (x.score.has_value() != y.score.has_value()) return x.score.has_value();
    if (x.score && *x.score != *y.score) return *x.score < *y.score;
    return x.image_id < y.image_id;
  });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

// Scores images with `scorer` (the infected-RBC detector of the pipeline
// trained through this task, by default) and keeps the lowest-confidence
// ones within each positivity class.
inline MemoryBuffer build_buffer_confidence(MemoryBuffer buffer, const SiteDataset& site, const DetectorModel& scorer,
                                            double threshold, double nms_iou = 0.45) {
  if (site.train.empty()) throw Error("build_buffer_confidence: site " + site.site_id + " has no training images");
  std::vector<const ImageRecord*> pos, neg;
  detail::split_by_positivity(site, pos, neg);
  const auto q = buffer_quota(static_cast<int>(site.train.size()), static_cast<int>(pos.size()), buffer.config());
  std::vector<BufferEntry> entries;
  for (auto [group, quota] : {std::pair{&pos, q.positives}, std::pair{&neg, q.negatives}}) {
    std::vector<ScoredImage> scored;
    for (const auto* r : *group)
      scored.push_back({r->image_id, image_confidence_score(scorer, r->pixels, threshold, nms_iou)});
    for (auto i : select_lowest_confidence(scored, static_cast<std::size_t>(quota)))
      entries.push_back(detail::entry_of(*(*group)[i], scored[i].score));
  }
  buffer.add_site(site.site_id, std::move(entries));
  return buffer;
}

// ---------------------------------------------------------------------------
// EWC
// ---------------------------------------------------------------------------

struct Anchor {
  std::vector<float> theta_star;
  std::vector<float> fisher;
};

struct AnchorSet {
  std::vector<Anchor> anchors;
  double lambda = 10.0;
};

// Mean squared per-sample gradient. `sample_gradient(i, grad)` writes the
// loss gradient of sample i into a zeroed `grad`.
template <class T>
std::vector<T> fisher_from_gradients(std::size_t n_params, std::size_t n_samples,
                                     const std::function<void(std::size_t, std::span<T>)>& sample_gradient) {
  std::vector<T> f(n_params, T(0)), g(n_params);
  if (n_samples == 0) return f;
  for (std::size_t s = 0; s < n_samples; ++s) {
    std::fill(g.begin(), g.end(), T(0));
    sample_gradient(s, g);
    for (std::size_t k = 0; k < n_params; ++k) f[k] += g[k] * g[k];
  }
  for (auto& v : f) v /= static_cast<T>(n_samples);
  return f;
}

// Diagonal Fisher of the detection loss over `n_samples` images (clamped to
// the dataset size) drawn by a seeded shuffle.
template <class T>
std::vector<T> fisher_diagonal(const Detector<T>& model, const ImageRefs& images, std::size_t n_samples,
                               const TrainConfig& cfg, std::uint64_t seed = 0) {
  if (images.empty()) throw Error("fisher_diagonal: empty dataset");
  n_samples = std::min(n_samples, images.size());
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, "fisher"));
  std::shuffle(order.begin(), order.end(), rng);
  return fisher_from_gradients<T>(model.params.size(), n_samples, [&](std::size_t s, std::span<T> g) {
    image_loss(model, *images[order[s]], cfg, g);
  });
}

// (lambda/2) sum_anchors sum_k F_k (theta_k - theta*_k)^2; adds its gradient
// lambda * sum_anchors F (theta - theta*) into `grad` when non-empty.
template <class T, class A>
T ewc_penalty(std::span<const T> theta, const std::vector<A>& anchors, double lambda, std::span<T> grad = {}) {
  double total = 0;
  for (const auto& a : anchors) {
    if (a.theta_star.size() != theta.size() || a.fisher.size() != theta.size())
      throw Error("ewc_penalty: anchor length " + std::to_string(a.theta_star.size()) + " does not match " +
                  std::to_string(theta.size()) + " parameters");
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double d = static_cast<double>(theta[k]) - static_cast<double>(a.theta_star[k]);
      total += static_cast<double>(a.fisher[k]) * d * d;
      if (!grad.empty()) grad[k] += static_cast<T>(lambda * static_cast<double>(a.fisher[k]) * d);
    }
  }
  if (!grad.empty() && grad.size() != theta.size()) throw Error("ewc_penalty: gradient length mismatch");
  return static_cast<T>(0.5 * lambda * total);
}

template <class T>
T ewc_penalty(std::span<const T> theta, const AnchorSet& set, std::span<T> grad = {}) {
  return ewc_penalty<T>(theta, set.anchors, set.lambda, grad);
}

// ---------------------------------------------------------------------------
// LWF
// ---------------------------------------------------------------------------

// lambda * mean squared difference over every element of the two maps;
// writes d/d(student) into `dstudent` when given.
template <class T>
T lwf_loss(const OutputMap<T>& student, const OutputMap<T>& teacher, double lambda = 1.0,
           OutputMap<T>* dstudent = nullptr) {
  if (student.grid != teacher.grid || student.data.size() != teacher.data.size())
    throw Error("lwf_loss: output map geometry mismatch");
  const std::size_t n = student.data.size();
  double sum = 0;
  if (dstudent && dstudent->data.size() != n) *dstudent = OutputMap<T>(student.grid);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(student.data[i]) - static_cast<double>(teacher.data[i]);
    sum += d * d;
    if (dstudent) dstudent->data[i] = static_cast<T>(2.0 * lambda * d / static_cast<double>(n));
  }
  return static_cast<T>(lambda * sum / static_cast<double>(n));
}

// Frozen previous-task model whose output maps are distilled into the
// student; teacher maps are cached per image.
class TeacherSnapshot {
public:
  TeacherSnapshot(DetectorModel teacher, double lambda) : teacher_(std::move(teacher)), lambda_(lambda) {}

  const DetectorModel& model() const { return teacher_; }
  double lambda() const { return lambda_; }

  const OutputMap<float>& teacher_map(const ImageRecord& rec) {
    auto it = cache_.find(&rec);
    if (it == cache_.end()) it = cache_.emplace(&rec, forward_map(teacher_, rec.pixels)).first;
    return it->second;
  }

  ExtraLoss<float> as_extra_loss() {
    ExtraLoss<float> e;
    e.map_penalty = [this](const ImageRecord& rec, const OutputMap<float>& student, OutputMap<float>& d) {
      return lwf_loss(student, teacher_map(rec), lambda_, &d);
    };
    return e;
  }

private:
  DetectorModel teacher_;
  double lambda_;
  std::unordered_map<const ImageRecord*, OutputMap<float>> cache_;
};

// ---------------------------------------------------------------------------
// Strategy runs
// ---------------------------------------------------------------------------

enum class Strategy { Baseline, Joint, Ewc, Lwf, ReplayNaive, ReplayConf };

inline constexpr Strategy kAllStrategies[] = {Strategy::Baseline, Strategy::Ewc,        Strategy::Lwf,
                                              Strategy::ReplayNaive, Strategy::ReplayConf, Strategy::Joint};

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Baseline: return "baseline";
    case Strategy::Joint: return "joint";
    case Strategy::Ewc: return "ewc";
    case Strategy::Lwf: return "lwf";
    case Strategy::ReplayNaive: return "replay-naive";
    case Strategy::ReplayConf: return "replay-conf";
  }
  return "?";
}

inline std::string display_name(Strategy s) {
  switch (s) {
    case Strategy::Baseline: return "Baseline";
    case Strategy::Joint: return "Joint incr";
    case Strategy::Ewc: return "EWC";
    case Strategy::Lwf: return "LWF";
    case Strategy::ReplayNaive: return "Replay naive";
    case Strategy::ReplayConf: return "Replay conf";
  }
  return "?";
}

inline std::optional<Strategy> parse_strategy(std::string_view name) {
  for (Strategy s : kAllStrategies)
    if (to_string(s) == name) return s;
  return std::nullopt;
}

inline bool uses_lambda(Strategy s) { return s == Strategy::Ewc || s == Strategy::Lwf; }
inline bool uses_buffer(Strategy s) { return s == Strategy::ReplayNaive || s == Strategy::ReplayConf; }

struct StrategyConfig {
  TrainConfig train;
  PipelineConfig pipeline;
  BufferConfig buffer;
  double ewc_lambda = 10.0;
  double lwf_lambda = 1.0;
  std::size_t fisher_samples = 256;
  // score replay candidates with the all-RBC model instead of the infected one
  bool confidence_from_rbc_model = false;
  std::uint64_t seed = 0;
  int input_size = 256;
};

struct TaskLog {
  std::string site_id;
  std::size_t train_images = 0;
  std::size_t val_images = 0;
  TrainLog rbc, infected;
  bool resumed = false;
};

// Everything a later task needs from a finished task.
struct TaskArtifacts {
  Pipeline pipeline;
  std::vector<BufferEntry> buffer_entries;        // replay: this site's additions
  std::vector<float> fisher_rbc, fisher_infected;  // EWC: Fisher on this task
};

struct StrategyRun {
  Strategy strategy = Strategy::Baseline;
  std::vector<Pipeline> pipelines;  // f_1..f_T, or only f_1 for baseline
  std::vector<TaskLog> logs;
  std::vector<std::vector<BufferEntry>> buffer_manifests;
};

// Persistence hooks: `load(t)` returns artifacts of an already completed
// task, `save(t, artifacts)` is called after each completed task. Returning
// false from `save` stops the run after that task.
struct RunHooks {
  std::function<std::optional<TaskArtifacts>(std::size_t)> load;
  std::function<bool(std::size_t, const TaskArtifacts&)> save;
  std::function<void(const std::string&)> progress;
};

inline std::size_t contracted_tasks(Strategy s, std::size_t T) { return s == Strategy::Baseline ? 1 : T; }

namespace detail {

inline std::vector<BufferEntry> resolve_entries(std::vector<BufferEntry> entries, const SiteDataset& site) {
  for (auto& e : entries) {
    if (e.image) continue;
    e.image = nullptr;
    for (const auto& r : site.train)
      if (r.image_id == e.image_id) e.image = &r;
    if (!e.image) throw Error("buffer entry " + e.image_id + " not found in training split of " + site.site_id);
  }
  return entries;
}

}  // namespace detail

inline StrategyRun run_strategy(const TaskStream& stream, Strategy strategy, const StrategyConfig& cfg,
                                const RunHooks& hooks = {}) {
  stream.validate();
  cfg.train.validate();
  StrategyRun run;
  run.strategy = strategy;
  const std::size_t T = contracted_tasks(strategy, stream.size());

  Pipeline current = build_reference_pipeline(cfg.seed, cfg.input_size);
  MemoryBuffer buffer(cfg.buffer);
  AnchorSet anchors_rbc{{}, cfg.ewc_lambda}, anchors_inf{{}, cfg.ewc_lambda};

  auto absorb = [&](std::size_t t, const TaskArtifacts& a) {
    const auto& site = stream.tasks[t];
    if (strategy == Strategy::Ewc) {
      anchors_rbc.anchors.push_back({a.pipeline.rbc.params, a.fisher_rbc});
      anchors_inf.anchors.push_back({a.pipeline.infected.params, a.fisher_infected});
    }
    if (uses_buffer(strategy)) {
      auto entries = detail::resolve_entries(a.buffer_entries, site);
      run.buffer_manifests.push_back(entries);
      buffer.add_site(site.site_id, std::move(entries));
    }
    run.pipelines.push_back(a.pipeline);
  };

  for (std::size_t t = 0; t < T; ++t) {
    const auto& site = stream.tasks[t];
    if (hooks.load) {
      if (auto done = hooks.load(t)) {
        current = done->pipeline;
        absorb(t, *done);
        TaskLog log;
        log.site_id = site.site_id;
        log.resumed = true;
        run.logs.push_back(log);
        continue;
      }
    }
    if (hooks.progress) hooks.progress(to_string(strategy) + ": task " + std::to_string(t + 1) + " (" + site.site_id + ")");

    ImageRefs train_set = refs_of(site.train), val_set = refs_of(site.val);
    if (strategy == Strategy::Joint) {
      train_set.clear();
      val_set.clear();
      for (std::size_t j = 0; j <= t; ++j) {
        for (const auto& r : stream.tasks[j].train) train_set.push_back(&r);
        for (const auto& r : stream.tasks[j].val) val_set.push_back(&r);
      }
    }
    if (uses_buffer(strategy)) {
      const auto extra = buffer.images();
      train_set.insert(train_set.end(), extra.begin(), extra.end());
    }

    TaskLog log;
    log.site_id = site.site_id;
    log.train_images = train_set.size();
    log.val_images = val_set.size();

    auto train_one = [&](const DetectorModel& model, const char* tag, AnchorSet& anchors, TrainLog& tlog) {
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(cfg.seed, "train:" + std::to_string(t) + ":" + tag);
      if (model.target == CellClass::RbcAny) {
        tc.conf_threshold = cfg.pipeline.rbc_threshold;
        tc.nms_iou = cfg.pipeline.rbc_nms_iou;
      } else {
        tc.conf_threshold = cfg.pipeline.infected_threshold;
        tc.nms_iou = cfg.pipeline.infected_nms_iou;
      }
      if (strategy == Strategy::Ewc && t > 0) {
        ExtraLoss<float> e;
        e.parameter_penalty = [&anchors](std::span<const float> theta, std::span<float> grad) {
          return ewc_penalty<float>(theta, anchors, grad);
        };
        return train(model, train_set, val_set, tc, &e, &tlog);
      }
      if (strategy == Strategy::Lwf && t > 0) {
        TeacherSnapshot teacher(model, cfg.lwf_lambda);
        auto e = teacher.as_extra_loss();
        return train(model, train_set, val_set, tc, &e, &tlog);
      }
      return train(model, train_set, val_set, tc, nullptr, &tlog);
    };

    TaskArtifacts art;
    art.pipeline.rbc = train_one(current.rbc, "rbc", anchors_rbc, log.rbc);
    art.pipeline.infected = train_one(current.infected, "infected", anchors_inf, log.infected);

    if (strategy == Strategy::Ewc) {
      const auto refs = refs_of(site.train);
      TrainConfig fc = cfg.train;
      art.fisher_rbc = fisher_diagonal(art.pipeline.rbc, refs, cfg.fisher_samples, fc, derive_seed(cfg.seed, t));
      art.fisher_infected =
          fisher_diagonal(art.pipeline.infected, refs, cfg.fisher_samples, fc, derive_seed(cfg.seed, t));
    }
    if (uses_buffer(strategy)) {
      MemoryBuffer fresh(cfg.buffer);
      if (strategy == Strategy::ReplayNaive) {
        fresh = build_buffer_naive(std::move(fresh), site, derive_seed(cfg.seed, "replay"));
      } else {
        const auto& scorer = cfg.confidence_from_rbc_model ? art.pipeline.rbc : art.pipeline.infected;
        const double thr = cfg.confidence_from_rbc_model ? cfg.pipeline.rbc_threshold : cfg.pipeline.infected_threshold;
        const double nms = cfg.confidence_from_rbc_model ? cfg.pipeline.rbc_nms_iou : cfg.pipeline.infected_nms_iou;
        fresh = build_buffer_confidence(std::move(fresh), site, scorer, thr, nms);
      }
      art.buffer_entries = fresh.site(site.site_id);
    }
    current = art.pipeline;
    absorb(t, art);
    run.logs.push_back(log);
    if (hooks.save && !hooks.save(t, art)) break;
  }
  return run;
}

inline StrategyRun run_baseline(const TaskStream& s, const StrategyConfig& c, const RunHooks& h = {}) {
  return run_strategy(s, Strategy::Baseline, c, h);
}
inline StrategyRun run_joint_incremental(const TaskStream& s, const StrategyConfig& c, const RunHooks& h = {}) {
  return run_strategy(s, Strategy::Joint, c, h);
}
inline StrategyRun run_ewc(const TaskStream& s, const StrategyConfig& c, const RunHooks& h = {}) {
  return run_strategy(s, Strategy::Ewc, c, h);
}
inline StrategyRun run_lwf(const TaskStream& s, const StrategyConfig& c, const RunHooks& h = {}) {
  return run_strategy(s, Strategy::Lwf, c, h);
}
inline StrategyRun run_replay(const TaskStream& s, const StrategyConfig& c, bool confidence, const RunHooks& h = {}) {
  return run_strategy(s, confidence ? Strategy::ReplayConf : Strategy::ReplayNaive, c, h);
}

}  // namespace malcl
