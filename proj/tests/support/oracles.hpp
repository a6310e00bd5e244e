#pragma once

// Independent reference implementations used by unit and acceptance tests.
// They favour exhaustive search and closed forms over efficiency.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "malcl/core.hpp"
#include "malcl/detector.hpp"
#include "malcl/eval.hpp"
#include "malcl/strategies.hpp"

namespace oracle {

using namespace malcl;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline double average(const std::vector<std::vector<double>>& P) {
  const std::size_t T = P.size();
  double s = 0;
  for (std::size_t i = 0; i < T; ++i) s += P[T - 1][i];
  return s / static_cast<double>(T);
}

inline double bwt(const std::vector<std::vector<double>>& P) {
  const std::size_t T = P.size();
  double s = 0;
  for (std::size_t i = 0; i + 1 < T; ++i) s += P[T - 1][i] - P[i][i];
  return s / static_cast<double>(T - 1);
}

inline double fwt(const std::vector<std::vector<double>>& P, const std::vector<double>& b) {
  const std::size_t T = P.size();
  double s = 0;
  for (std::size_t i = 1; i < T; ++i) s += P[i - 1][i] - b[i];
  return s / static_cast<double>(T - 1);
}

inline PerformanceMatrix to_matrix(const std::vector<std::vector<double>>& P) {
  PerformanceMatrix M(P.size());
  for (std::size_t t = 0; t < P.size(); ++t)
    for (std::size_t i = 0; i < P.size(); ++i) M.set(t, i, P[t][i]);
  return M;
}

// ---------------------------------------------------------------------------
// Buffer
// ---------------------------------------------------------------------------

inline BufferQuota quota(int size, int positives) {
  const int total = std::min(125, size / 2);
  const int pos = std::min(static_cast<int>(std::lround(0.8 * total)), positives);
  const int neg = std::min(total - pos, size - positives);
  return {total, pos, neg};
}

// Full sort on (unscored, score, image_id), then take the first k.
inline std::vector<std::string> lowest_confidence(std::vector<ScoredImage> items, std::size_t k) {
  std::vector<std::tuple<int, double, std::string>> keys;
  for (const auto& it : items) keys.emplace_back(it.score ? 0 : 1, it.score.value_or(0.0), it.image_id);
  std::sort(keys.begin(), keys.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, keys.size()); ++i) out.push_back(std::get<2>(keys[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Exhaustive assignment
// ---------------------------------------------------------------------------

// Every partial injective assignment of `order.size()` claimants to
// `n_targets` targets with IoU >= tau is enumerated. The winner maximizes,
// claimant by claimant in `order`, first the IoU of its pair (unmatched
// counts as -1) and then the negated target index. Returns target per
// claimant (indexed like `order`'s values), -1 when unmatched.
inline std::vector<int> exhaustive_assignment(const std::vector<int>& order, std::size_t n_claimants,
                                              std::size_t n_targets,
                                              const std::function<double(int, int)>& overlap, double tau) {
  std::vector<int> cur(n_claimants, -1), best;
  std::vector<double> best_key;
  std::vector<char> used(n_targets, 0);
  std::function<void(std::size_t)> rec = [&](std::size_t pos) {
    if (pos == order.size()) {
      std::vector<double> key;
      for (int c : order) {
        key.push_back(cur[c] < 0 ? -1.0 : overlap(c, cur[c]));
        key.push_back(cur[c] < 0 ? 0.0 : -static_cast<double>(cur[c]));
      }
      if (best.empty() || key > best_key) {
        best = cur;
        best_key = key;
      }
      return;
    }
    const int c = order[pos];
    cur[c] = -1;
    rec(pos + 1);
    for (std::size_t t = 0; t < n_targets; ++t) {
      if (used[t] || !(overlap(c, static_cast<int>(t)) >= tau)) continue;
      used[t] = 1;
      cur[c] = static_cast<int>(t);
      rec(pos + 1);
      used[t] = 0;
      cur[c] = -1;
    }
  };
  rec(0);
  return best;
}

inline std::vector<int> by_confidence(const std::vector<double>& conf) {
  std::vector<int> order(conf.size());
  for (std::size_t i = 0; i < conf.size(); ++i) order[i] = static_cast<int>(i);
  // insertion sort keeps equal confidences in input order
  for (std::size_t i = 1; i < order.size(); ++i)
    for (std::size_t j = i; j > 0 && conf[order[j]] > conf[order[j - 1]]; --j) std::swap(order[j], order[j - 1]);
  return order;
}

inline std::vector<CellVerdict> merge(const std::vector<Detection>& rbc, const std::vector<Detection>& inf,
                                      double tau) {
  std::vector<double> conf;
  for (const auto& d : inf) conf.push_back(d.confidence);
  const auto order = by_confidence(conf);
  const auto match = exhaustive_assignment(order, inf.size(), rbc.size(),
                                           [&](int c, int t) { return iou(inf[c].box, rbc[t].box); }, tau);
  std::vector<CellVerdict> out;
  for (std::size_t r = 0; r < rbc.size(); ++r) {
    int owner = -1;
    for (std::size_t d = 0; d < inf.size(); ++d)
      if (match[d] == static_cast<int>(r)) owner = static_cast<int>(d);
    if (owner >= 0)
      out.push_back({rbc[r].box, true, inf[owner].confidence, static_cast<int>(r), owner});
    else
      out.push_back({rbc[r].box, false, rbc[r].confidence, static_cast<int>(r), -1});
  }
  for (int d : order)
    if (match[d] < 0) out.push_back({inf[d].box, true, inf[d].confidence, -1, d});
  return out;
}

inline Confusion match(const std::vector<CellVerdict>& verdicts, const std::vector<Annotation>& truth, double tau) {
  // truth cells: infected boxes (in annotation order) claim RBC_ANY boxes
  std::vector<BoundingBox> any_boxes, inf_boxes;
  for (const auto& a : truth) (a.cls == CellClass::RbcAny ? any_boxes : inf_boxes).push_back(a.box);
  std::vector<int> inf_order(inf_boxes.size());
  for (std::size_t i = 0; i < inf_order.size(); ++i) inf_order[i] = static_cast<int>(i);
  const auto cell_of = exhaustive_assignment(inf_order, inf_boxes.size(), any_boxes.size(),
                                             [&](int c, int t) { return iou(inf_boxes[c], any_boxes[t]); }, tau);
  std::vector<std::pair<BoundingBox, bool>> cells;
  for (std::size_t i = 0; i < any_boxes.size(); ++i) {
    bool infected = false;
    for (int m : cell_of) infected = infected || m == static_cast<int>(i);
    cells.emplace_back(any_boxes[i], infected);
  }
  for (std::size_t d = 0; d < inf_boxes.size(); ++d)
    if (cell_of[d] < 0) cells.emplace_back(inf_boxes[d], true);

  std::vector<double> conf;
  for (const auto& v : verdicts) conf.push_back(v.confidence);
  const auto order = by_confidence(conf);
  const auto m = exhaustive_assignment(order, verdicts.size(), cells.size(),
                                       [&](int c, int t) { return iou(verdicts[c].box, cells[t].first); }, tau);
  Confusion c;
  std::vector<char> taken(cells.size(), 0);
  for (std::size_t v = 0; v < verdicts.size(); ++v) {
    if (m[v] < 0) {
      c.fp += verdicts[v].infected;
      continue;
    }
    taken[m[v]] = 1;
    const bool truth_inf = cells[m[v]].second, pred = verdicts[v].infected;
    c.tp += pred && truth_inf;
    c.tn += !pred && !truth_inf;
    c.fp += pred && !truth_inf;
    c.fn += !pred && truth_inf;
  }
  for (std::size_t i = 0; i < cells.size(); ++i) c.fn += !taken[i] && cells[i].second;
  return c;
}

// NMS output is the unique set K such that, walking boxes by descending
// confidence, a box is in K exactly when no earlier member of K overlaps it
// by more than the threshold. Checks that characterization.
inline bool nms_consistent(const std::vector<Detection>& input, const std::vector<Detection>& kept, double thr) {
  std::vector<double> conf;
  for (const auto& d : input) conf.push_back(d.confidence);
  const auto order = by_confidence(conf);
  std::vector<const Detection*> K;
  for (int i : order) {
    bool covered = false;
    for (const auto* k : K) covered = covered || iou(k->box, input[i].box) > thr;
    if (!covered) K.push_back(&input[i]);
  }
  if (K.size() != kept.size()) return false;
  for (std::size_t i = 0; i < K.size(); ++i)
    if (!(K[i]->box == kept[i].box) || K[i]->confidence != kept[i].confidence) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Random instances
// ---------------------------------------------------------------------------

// Boxes drawn around a few anchors so that overlaps above and below 0.5 are
// common. Confidences come from a small set to exercise ties.
inline BoundingBox random_box(std::mt19937_64& rng, const std::vector<BoundingBox>& anchors) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto& a = anchors[static_cast<std::size_t>(u(rng) * anchors.size()) % anchors.size()];
  const double cx = std::clamp(a.cx() + (u(rng) - 0.5) * 0.06, 0.0, 1.0);
  const double cy = std::clamp(a.cy() + (u(rng) - 0.5) * 0.06, 0.0, 1.0);
  const double w = std::clamp(a.w() * (0.8 + 0.4 * u(rng)), 0.01, 1.0);
  const double h = std::clamp(a.h() * (0.8 + 0.4 * u(rng)), 0.01, 1.0);
  return BoundingBox(cx, cy, w, h);
}

inline double random_confidence(std::mt19937_64& rng) {
  static const double levels[] = {0.3, 0.5, 0.5, 0.7, 0.9, 0.9};
  return levels[rng() % 6];
}

}  // namespace oracle
