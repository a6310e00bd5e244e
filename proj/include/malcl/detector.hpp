#pragma once

// Grid-based anchor-free single-stage detector, its training loop, and the
// two-model predict-and-merge pipeline (all-RBC detector + infected-RBC
// detector).

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "malcl/core.hpp"
#include "malcl/nn.hpp"

namespace malcl {

using ImageRefs = std::vector<const ImageRecord*>;

inline ImageRefs refs_of(std::span<const ImageRecord> images) {
  ImageRefs out;
  out.reserve(images.size());
  for (const auto& r : images) out.push_back(&r);
  return out;
}

struct TrainConfig {
  int epochs = 50;
  int patience = 10;
  double learning_rate = 2e-3;
  int batch_size = 8;
  double conf_threshold = 0.25;
  double nms_iou = 0.45;
  std::uint64_t seed = 0;
  // objectness BCE weight on cells that contain a target center
  double obj_pos_weight = 4.0;
  double box_weight = 1.0;

  void validate() const {
    if (epochs < 1) throw Error("TrainConfig: epochs must be >= 1");
    if (patience < 0) throw Error("TrainConfig: patience must be >= 0");
    if (batch_size < 1) throw Error("TrainConfig: batch_size must be >= 1");
    if (!(conf_threshold > 0.0 && conf_threshold < 1.0)) throw Error("TrainConfig: threshold must lie in (0, 1)");
    if (!(learning_rate > 0.0)) throw Error("TrainConfig: learning_rate must be positive");
  }
};

// ---------------------------------------------------------------------------
// Output map
// ---------------------------------------------------------------------------

// Six planes over the grid: objectness logit, x/y offset logits, log w/h,
// and the objectness confidence sigmoid(logit).
template <class T>
struct OutputMap {
  enum Channel { Obj = 0, Tx, Ty, Tw, Th, Conf, kChannels };

  int grid = 0;
  std::vector<T> data;

  OutputMap() = default;
  explicit OutputMap(int g) : grid(g), data(static_cast<std::size_t>(kChannels) * g * g, T(0)) {}

  std::size_t cells() const { return static_cast<std::size_t>(grid) * grid; }
  T* plane(int ch) { return data.data() + ch * cells(); }
  const T* plane(int ch) const { return data.data() + ch * cells(); }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-std::clamp(x, -30.0, 30.0))); }

template <class T>
OutputMap<T> to_output_map(const nn::Tensor<T>& head) {
  if (head.c != 5 || head.h != head.w) throw Error("detector head must emit 5 square planes");
  OutputMap<T> m(head.h);
  std::copy(head.data.begin(), head.data.end(), m.data.begin());
  const T* obj = m.plane(OutputMap<T>::Obj);
  T* conf = m.plane(OutputMap<T>::Conf);
  for (std::size_t i = 0; i < m.cells(); ++i) conf[i] = static_cast<T>(sigmoid(static_cast<double>(obj[i])));
  return m;
}

// Gradient with respect to the six planes -> gradient with respect to the
// five raw head planes (confidence flows into the objectness logit).
template <class T>
nn::Tensor<T> fold_map_gradient(const OutputMap<T>& map, const OutputMap<T>& dmap) {
  nn::Tensor<T> d(5, map.grid, map.grid);
  std::copy(dmap.data.begin(), dmap.data.begin() + 5 * dmap.cells(), d.data.begin());
  const T* conf = map.plane(OutputMap<T>::Conf);
  const T* dconf = dmap.plane(OutputMap<T>::Conf);
  for (std::size_t i = 0; i < map.cells(); ++i) d.data[i] += dconf[i] * conf[i] * (T(1) - conf[i]);
  return d;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct TrainingState {
  int epochs_run = 0;
  int best_epoch = 0;
};

template <class T>
struct Detector {
  nn::Architecture arch;
  CellClass target = CellClass::RbcAny;
  std::uint64_t seed = 0;
  std::vector<T> params;
  TrainingState state;

  std::span<const T> theta() const { return params; }
  int grid() const { return arch.output_size(); }
};

using DetectorModel = Detector<float>;

constexpr double kInitialObjectnessBias = -4.0;

template <class T = float>
Detector<T> build_reference_detector(CellClass cls, std::uint64_t seed, int input_size = 256) {
  Detector<T> d;
  d.arch = nn::Architecture::reference(input_size);
  d.arch.validate();
  d.target = cls;
  d.seed = seed;
  d.params = nn::init_params<T>(d.arch, seed, static_cast<T>(kInitialObjectnessBias));
  return d;
}

template <class To, class From>
Detector<To> convert(const Detector<From>& src) {
  Detector<To> d;
  d.arch = src.arch;
  d.target = src.target;
  d.seed = src.seed;
  d.state = src.state;
  d.params.assign(src.params.begin(), src.params.end());
  return d;
}

template <class T>
OutputMap<T> forward_map(const Detector<T>& model, const Image& image, nn::ForwardCache<T>* cache = nullptr) {
  if (image.width != model.arch.input_size || image.height != model.arch.input_size)
    throw Error("image size " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                " does not match detector input " + std::to_string(model.arch.input_size));
  const auto x = nn::image_tensor<T>(image);
  return to_output_map(nn::forward<T>(model.arch, model.theta(), x, cache));
}

// ---------------------------------------------------------------------------
// Detection loss
// ---------------------------------------------------------------------------

template <class T>
struct GridTargets {
  std::vector<char> positive;
  std::vector<T> ox, oy, lw, lh;
  int n_positive = 0;
};

// One target per grid cell, owned by the annotation whose center falls in
// it (the first such annotation wins).
template <class T>
GridTargets<T> grid_targets(std::span<const Annotation> annotations, CellClass cls, int grid) {
  GridTargets<T> t;
  const std::size_t n = static_cast<std::size_t>(grid) * grid;
  t.positive.assign(n, 0);
  t.ox.assign(n, T(0));
  t.oy.assign(n, T(0));
  t.lw.assign(n, T(0));
  t.lh.assign(n, T(0));
  for (const auto& a : annotations) {
    if (a.cls != cls) continue;
    const double gx = a.box.cx() * grid, gy = a.box.cy() * grid;
    const int ix = std::clamp(static_cast<int>(gx), 0, grid - 1);
    const int iy = std::clamp(static_cast<int>(gy), 0, grid - 1);
    const std::size_t i = static_cast<std::size_t>(iy) * grid + ix;
    if (t.positive[i]) continue;
    t.positive[i] = 1;
    t.ox[i] = static_cast<T>(std::clamp(gx - ix, 1e-3, 1.0 - 1e-3));
    t.oy[i] = static_cast<T>(std::clamp(gy - iy, 1e-3, 1.0 - 1e-3));
    t.lw[i] = static_cast<T>(std::log(a.box.w() * grid));
    t.lh[i] = static_cast<T>(std::log(a.box.h() * grid));
    ++t.n_positive;
  }
  return t;
}

// Objectness BCE averaged over grid cells (positives weighted), plus squared
// error on offsets and log-sizes averaged over positive cells. Writes
// d(loss)/d(raw head) when `draw` is given.
template <class T>
T detection_loss(const OutputMap<T>& map, const GridTargets<T>& tg, const TrainConfig& cfg,
                 nn::Tensor<T>* draw = nullptr) {
  using M = OutputMap<T>;
  const std::size_t n = map.cells();
  const T* obj = map.plane(M::Obj);
  const T* conf = map.plane(M::Conf);
  const T* tx = map.plane(M::Tx);
  const T* ty = map.plane(M::Ty);
  const T* tw = map.plane(M::Tw);
  const T* th = map.plane(M::Th);
  if (draw) *draw = nn::Tensor<T>(5, map.grid, map.grid);
  const T pos_w = static_cast<T>(cfg.obj_pos_weight);
  const T box_w = static_cast<T>(cfg.box_weight) / static_cast<T>(std::max(1, tg.n_positive));
  const T inv_n = T(1) / static_cast<T>(n);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T z = obj[i];
    // numerically stable BCE with logits
    const T softplus = std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
    const T y = tg.positive[i] ? T(1) : T(0);
    const T w = tg.positive[i] ? pos_w : T(1);
    loss += w * (softplus - y * z) * inv_n;
    if (draw) draw->data[i] = w * (conf[i] - y) * inv_n;
    if (!tg.positive[i]) continue;
    const T sx = static_cast<T>(sigmoid(tx[i])), sy = static_cast<T>(sigmoid(ty[i]));
    const T ex = sx - tg.ox[i], ey = sy - tg.oy[i], ew = tw[i] - tg.lw[i], eh = th[i] - tg.lh[i];
    loss += box_w * (ex * ex + ey * ey + ew * ew + eh * eh);
    if (draw) {
      draw->data[n * 1 + i] = box_w * T(2) * ex * sx * (T(1) - sx);
      draw->data[n * 2 + i] = box_w * T(2) * ey * sy * (T(1) - sy);
      draw->data[n * 3 + i] = box_w * T(2) * ew;
      draw->data[n * 4 + i] = box_w * T(2) * eh;
    }
  }
  return loss;
}

// Loss of one image at the model's current parameters; accumulates the
// parameter gradient into `grad` when given.
template <class T>
T image_loss(const Detector<T>& model, const ImageRecord& rec, const TrainConfig& cfg, std::span<T> grad = {}) {
  nn::ForwardCache<T> cache;
  const bool want_grad = !grad.empty();
  const auto map = forward_map(model, rec.pixels, want_grad ? &cache : nullptr);
  const auto tg = grid_targets<T>(rec.annotations, model.target, map.grid);
  nn::Tensor<T> draw;
  const T loss = detection_loss(map, tg, cfg, want_grad ? &draw : nullptr);
  if (want_grad) nn::backward<T>(model.arch, model.theta(), cache, std::move(draw), grad);
  return loss;
}

// ---------------------------------------------------------------------------
// Decoding and inference
// ---------------------------------------------------------------------------

template <class T>
std::vector<Detection> decode(const OutputMap<T>& map, CellClass cls, double threshold) {
  using M = OutputMap<T>;
  std::vector<Detection> out;
  const int g = map.grid;
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      const std::size_t i = static_cast<std::size_t>(gy) * g + gx;
      const double conf = sigmoid(static_cast<double>(map.plane(M::Obj)[i]));
      if (!(conf >= threshold)) continue;
      const double cx = (gx + sigmoid(map.plane(M::Tx)[i])) / g;
      const double cy = (gy + sigmoid(map.plane(M::Ty)[i])) / g;
      const double w = std::min(1.0, std::exp(std::clamp(static_cast<double>(map.plane(M::Tw)[i]), -6.0, 3.0)) / g);
      const double h = std::min(1.0, std::exp(std::clamp(static_cast<double>(map.plane(M::Th)[i]), -6.0, 3.0)) / g);
      out.emplace_back(BoundingBox(cx, cy, w, h), cls, conf);
    }
  return out;
}

// Greedy NMS: highest confidence first (ties by input order); a box is
// dropped when its IoU with a kept box exceeds `iou_threshold`.
inline std::vector<Detection> non_max_suppression(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(),
                                        [&](const Detection& k) { return iou(k.box, d.box) > iou_threshold; });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

template <class T>
std::vector<Detection> detect(const Detector<T>& model, const Image& image, double threshold,
                              double nms_iou = 0.45) {
  return non_max_suppression(decode(forward_map(model, image), model.target, threshold), nms_iou);
}

inline std::optional<double> min_confidence(std::span<const Detection> dets) {
  if (dets.empty()) return std::nullopt;
  double m = dets.front().confidence;
  for (const auto& d : dets) m = std::min(m, d.confidence);
  return m;
}

// Lowest confidence among the image's detections; nullopt when there are
// none (such images rank after every scored image).
template <class T>
std::optional<double> image_confidence_score(const Detector<T>& model, const Image& image, double threshold,
                                             double nms_iou = 0.45) {
  return min_confidence(detect(model, image, threshold, nms_iou));
}

// ---------------------------------------------------------------------------
// Merge
// ---------------------------------------------------------------------------

struct CellVerdict {
  BoundingBox box;
  bool infected = false;
  double confidence = 0.0;
  int rbc_index = -1;       // supporting all-RBC detection, -1 for standalone
  int infected_index = -1;  // supporting infected detection, -1 for negative cells
};

// Index order in which infected detections claim RBC boxes.
inline std::vector<int> greedy_order(std::span<const Detection> dets) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].confidence > dets[b].confidence; });
  return order;
}

inline std::vector<CellVerdict> merge_detections(std::span<const Detection> all_rbc, std::span<const Detection> infected,
                                                 double tau = 0.5) {
  std::vector<int> owner(all_rbc.size(), -1);
  std::vector<int> match(infected.size(), -1);
  for (int d : greedy_order(infected)) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t r = 0; r < all_rbc.size(); ++r) {
      if (owner[r] >= 0) continue;
      const double v = iou(infected[d].box, all_rbc[r].box);
      if (v >= tau && (best < 0 || v > best_iou)) {
        best = static_cast<int>(r);
        best_iou = v;
      }
    }
    if (best >= 0) {
      owner[best] = d;
      match[d] = best;
    }
  }
  std::vector<CellVerdict> out;
  out.reserve(all_rbc.size() + infected.size());
  for (std::size_t r = 0; r < all_rbc.size(); ++r) {
    if (owner[r] >= 0)
      out.push_back({all_rbc[r].box, true, infected[owner[r]].confidence, static_cast<int>(r), owner[r]});
    else
      out.push_back({all_rbc[r].box, false, all_rbc[r].confidence, static_cast<int>(r), -1});
  }
  for (int d : greedy_order(infected))
    if (match[d] < 0) out.push_back({infected[d].box, true, infected[d].confidence, -1, d});
  return out;
}

inline bool classify_image(std::span<const CellVerdict> verdicts) {
  return std::any_of(verdicts.begin(), verdicts.end(), [](const CellVerdict& v) { return v.infected; });
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct PipelineConfig {
  double rbc_threshold = 0.25;
  double infected_threshold = 0.25;
  double rbc_nms_iou = 0.45;
  double infected_nms_iou = 0.45;
  double merge_tau = 0.5;
};

struct Pipeline {
  DetectorModel rbc;
  DetectorModel infected;
};

inline Pipeline build_reference_pipeline(std::uint64_t seed, int input_size = 256) {
  return {build_reference_detector(CellClass::RbcAny, derive_seed(seed, "rbc"), input_size),
          build_reference_detector(CellClass::RbcInfected, derive_seed(seed, "infected"), input_size)};
}

inline std::vector<CellVerdict> predict_cells(const Pipeline& p, const Image& image, const PipelineConfig& cfg) {
  const auto rbc = detect(p.rbc, image, cfg.rbc_threshold, cfg.rbc_nms_iou);
  const auto inf = detect(p.infected, image, cfg.infected_threshold, cfg.infected_nms_iou);
  return merge_detections(rbc, inf, cfg.merge_tau);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Optional penalty added to the detection loss. `parameter_penalty` sees the
// current parameters and accumulates its gradient; `map_penalty` sees each
// training image's output map and writes d(penalty)/d(map). Per-image map
// penalties are averaged over the batch like the detection loss.
template <class T>
struct ExtraLoss {
  std::function<T(std::span<const T> theta, std::span<T> grad)> parameter_penalty;
  std::function<T(const ImageRecord& image, const OutputMap<T>& student, OutputMap<T>& dstudent)> map_penalty;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_f1 = 0;
  bool val_f1_defined = false;
  double val_loss = 0;
  bool improved = false;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
};

struct Fitness {
  bool f1_defined = false;
  double f1 = 0;
  double neg_loss = 0;

  // Image-level F1 first (when defined), negated validation loss second.
  bool better_than(const Fitness& o) const {
    if (f1_defined && o.f1_defined && f1 != o.f1) return f1 > o.f1;
    return neg_loss > o.neg_loss;
  }
};

template <class T>
Fitness validation_fitness(const Detector<T>& model, const ImageRefs& val, const TrainConfig& cfg) {
  Fitness f;
  int tp = 0, fp = 0, fn = 0, pos = 0;
  double loss = 0;
  for (const auto* rec : val) {
    const auto map = forward_map(model, rec->pixels);
    const auto tg = grid_targets<T>(rec->annotations, model.target, map.grid);
    loss += static_cast<double>(detection_loss(map, tg, cfg));
    const bool truth = std::any_of(rec->annotations.begin(), rec->annotations.end(),
                                   [&](const Annotation& a) { return a.cls == model.target; });
    const bool pred = !non_max_suppression(decode(map, model.target, cfg.conf_threshold), cfg.nms_iou).empty();
    pos += truth;
    tp += truth && pred;
    fp += !truth && pred;
    fn += truth && !pred;
  }
  f.neg_loss = val.empty() ? 0.0 : -loss / static_cast<double>(val.size());
  f.f1_defined = pos > 0;
  if (f.f1_defined) f.f1 = 2.0 * tp / (2.0 * tp + fp + fn);
  return f;
}

// Adam on the mean batch loss. Returns the parameters of the epoch with the
// best validation fitness; stops once `patience` consecutive epochs fail to
// improve on it. Without validation images, the epoch's mean training loss
// stands in for the validation loss.
template <class T>
Detector<T> train(Detector<T> model, const ImageRefs& train_set, const ImageRefs& val_set, const TrainConfig& cfg,
                  const std::type_identity_t<ExtraLoss<T>>* extra = nullptr, TrainLog* log = nullptr) {
  cfg.validate();
  if (train_set.empty()) throw Error("train: empty training set");
  const std::size_t n_params = model.params.size();
  std::vector<T> m(n_params, T(0)), v(n_params, T(0)), grad(n_params);
  const T b1 = T(0.9), b2 = T(0.999), eps = T(1e-8), lr = static_cast<T>(cfg.learning_rate);
  std::uint64_t step = 0;

  Detector<T> best = model;
  Fitness best_fit;
  bool have_best = false;
  int since_improvement = 0;
  std::vector<std::size_t> order(train_set.size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const T inv_b = T(1) / static_cast<T>(end - start);
      std::fill(grad.begin(), grad.end(), T(0));
      std::vector<T> g_img(n_params);
      T batch_loss = 0;
      for (std::size_t j = start; j < end; ++j) {
        const ImageRecord& rec = *train_set[order[j]];
        nn::ForwardCache<T> cache;
        const auto map = forward_map(model, rec.pixels, &cache);
        const auto tg = grid_targets<T>(rec.annotations, model.target, map.grid);
        nn::Tensor<T> draw;
        T loss = detection_loss(map, tg, cfg, &draw);
        if (extra && extra->map_penalty) {
          OutputMap<T> dmap(map.grid);
          loss += extra->map_penalty(rec, map, dmap);
          const auto dextra = fold_map_gradient(map, dmap);
          for (std::size_t i = 0; i < draw.data.size(); ++i) draw.data[i] += dextra.data[i];
        }
        std::fill(g_img.begin(), g_img.end(), T(0));
        nn::backward<T>(model.arch, model.theta(), cache, std::move(draw), g_img);
        for (std::size_t i = 0; i < n_params; ++i) grad[i] += g_img[i] * inv_b;
        batch_loss += loss * inv_b;
      }
      if (extra && extra->parameter_penalty) batch_loss += extra->parameter_penalty(model.theta(), grad);
      if (!std::isfinite(static_cast<double>(batch_loss)))
        throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index));
      ++step;
      const T c1 = T(1) - static_cast<T>(std::pow(static_cast<double>(b1), static_cast<double>(step)));
      const T c2 = T(1) - static_cast<T>(std::pow(static_cast<double>(b2), static_cast<double>(step)));
      for (std::size_t i = 0; i < n_params; ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
        v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
        model.params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
      epoch_loss += static_cast<double>(batch_loss) * static_cast<double>(end - start);
    }
    epoch_loss /= static_cast<double>(order.size());
    model.state.epochs_run += 1;

    Fitness fit = validation_fitness(model, val_set, cfg);
    if (val_set.empty()) fit.neg_loss = -epoch_loss;
    const bool improved = !have_best || fit.better_than(best_fit);
    if (log) log->epochs.push_back({epoch, epoch_loss, fit.f1, fit.f1_defined, -fit.neg_loss, improved});
    if (improved) {
      best_fit = fit;
      have_best = true;
      best = model;
      best.state.best_epoch = epoch;
      since_improvement = 0;
    } else if (++since_improvement > cfg.patience) {
      break;
    }
  }
  best.state.epochs_run = model.state.epochs_run;
  if (log) log->best_epoch = best.state.best_epoch;
  return best;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCheckpointMagic[8] = {'M', 'A', 'L', 'C', 'L', 'D', 'E', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class V>
void put(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw Error("checkpoint truncated");
  return v;
}

}  // namespace detail

// Layout (little-endian): magic, version, descriptor string, input size,
// layer specs, target class, seed, epochs run, parameter count, float32
// parameters.
inline void write_checkpoint(std::ostream& os, const DetectorModel& m) {
  using namespace detail;
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put(os, kCheckpointVersion);
  const std::string desc = m.arch.descriptor();
  put(os, static_cast<std::uint32_t>(desc.size()));
  os.write(desc.data(), static_cast<std::streamsize>(desc.size()));
  put(os, static_cast<std::int32_t>(m.arch.input_size));
  put(os, static_cast<std::uint32_t>(m.arch.layers.size()));
  for (const auto& l : m.arch.layers) {
    put(os, static_cast<std::int32_t>(l.in_ch));
    put(os, static_cast<std::int32_t>(l.out_ch));
    put(os, static_cast<std::int32_t>(l.kernel));
    put(os, static_cast<std::int32_t>(l.stride));
    put(os, static_cast<std::uint8_t>(l.activation));
  }
  put(os, static_cast<std::uint8_t>(m.target));
  put(os, m.seed);
  put(os, static_cast<std::int32_t>(m.state.epochs_run));
  put(os, static_cast<std::int32_t>(m.state.best_epoch));
  put(os, static_cast<std::uint64_t>(m.params.size()));
  os.write(reinterpret_cast<const char*>(m.params.data()), static_cast<std::streamsize>(m.params.size() * sizeof(float)));
  if (!os) throw Error("failed writing checkpoint");
}

inline DetectorModel read_checkpoint(std::istream& is) {
  using namespace detail;
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw Error("not a detector checkpoint");
  if (get<std::uint32_t>(is) != kCheckpointVersion) throw Error("unsupported checkpoint version");
  const auto dlen = get<std::uint32_t>(is);
  std::string desc(dlen, '\0');
  is.read(desc.data(), dlen);
  DetectorModel m;
  m.arch.input_size = get<std::int32_t>(is);
  const auto nl = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < nl; ++i) {
    nn::ConvSpec s;
    s.in_ch = get<std::int32_t>(is);
    s.out_ch = get<std::int32_t>(is);
    s.kernel = get<std::int32_t>(is);
    s.stride = get<std::int32_t>(is);
    s.activation = get<std::uint8_t>(is) != 0;
    m.arch.layers.push_back(s);
  }
  m.arch.validate();
  if (m.arch.descriptor() != desc) throw Error("checkpoint descriptor does not match layer specs");
  const auto cls = get<std::uint8_t>(is);
  if (cls > 1) throw Error("checkpoint has unknown target class");
  m.target = static_cast<CellClass>(cls);
  m.seed = get<std::uint64_t>(is);
  m.state.epochs_run = get<std::int32_t>(is);
  m.state.best_epoch = get<std::int32_t>(is);
  const auto np = get<std::uint64_t>(is);
  if (np != m.arch.param_count()) throw Error("checkpoint parameter count does not match architecture");
  m.params.resize(np);
  is.read(reinterpret_cast<char*>(m.params.data()), static_cast<std::streamsize>(np * sizeof(float)));
  if (!is) throw Error("checkpoint truncated");
  return m;
}

inline void save_checkpoint(const std::string& path, const DetectorModel& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_checkpoint(os, m);
}

inline DetectorModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

}  // namespace malcl
