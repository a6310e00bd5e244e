#pragma once

// Patient-grouped k-fold cross-validation. All images of one patient land in
// exactly one of train, val or test for every fold.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "malcl/core.hpp"

namespace malcl {

struct FoldAssignment {
  int k = 0;
  std::map<std::string, int> fold_of_patient;

  std::vector<int> fold_sizes() const {
    std::vector<int> out(k, 0);
    for (const auto& [p, f] : fold_of_patient) ++out[f];
    return out;
  }

  std::string to_table() const {
    std::ostringstream os;
    os << "patient_id\tfold\n";
    for (const auto& [p, f] : fold_of_patient) os << p << '\t' << f << '\n';
    return os.str();
  }

  bool operator==(const FoldAssignment&) const = default;
};

struct FoldSplit {
  ImageList train, val, test;
};

struct KFoldResult {
  FoldAssignment assignment;
  std::vector<FoldSplit> folds;
};

namespace detail {

inline std::vector<ImageRecord> all_images(const SiteDataset& d) {
  std::vector<ImageRecord> out = d.train;
  out.insert(out.end(), d.val.begin(), d.val.end());
  out.insert(out.end(), d.test.begin(), d.test.end());
  return out;
}

}  // namespace detail

// Patients with at least one positive image are shuffled and dealt
// round-robin first, all-negative patients continue the same deal, so fold
// sizes differ by at most one and positives spread across folds.
inline FoldAssignment assign_patient_folds(std::span<const ImageRecord> images, int k, std::uint64_t seed) {
  if (k < 2) throw Error("patient_grouped_kfold: k must be >= 2");
  std::map<std::string, bool> positive;
  for (const auto& r : images) positive[r.patient_id] = positive[r.patient_id] || r.positive();
  if (static_cast<int>(positive.size()) < k)
    throw Error("insufficient patients: " + std::to_string(positive.size()) + " patients for k=" +
                std::to_string(k));
  std::vector<std::string> pos, neg;
  for (const auto& [p, is_pos] : positive) (is_pos ? pos : neg).push_back(p);
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);

  FoldAssignment fa;
  fa.k = k;
  int next = 0;
  for (const auto* group : {&pos, &neg})
    for (const auto& p : *group) {
      fa.fold_of_patient[p] = next;
      next = (next + 1) % k;
    }
  return fa;
}

// Number of validation patients carved out of `n` training-side patients.
inline int validation_patient_count(int n) {
  if (n < 2) return 0;
  return std::clamp(static_cast<int>(std::lround(0.1 * n)), 1, n - 1);
}

inline KFoldResult patient_grouped_kfold(const SiteDataset& dataset, int k = 3, std::uint64_t seed = 0) {
  const auto images = detail::all_images(dataset);
  KFoldResult res;
  res.assignment = assign_patient_folds(images, k, seed);
  const auto& fold_of = res.assignment.fold_of_patient;

  for (int f = 0; f < k; ++f) {
    std::vector<std::string> rest;
    for (const auto& [p, pf] : fold_of)
      if (pf != f) rest.push_back(p);
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(f) + 1));
    std::shuffle(rest.begin(), rest.end(), rng);
    const int n_val = validation_patient_count(static_cast<int>(rest.size()));
    std::set<std::string> val_pat(rest.begin(), rest.begin() + n_val);

    FoldSplit split;
    for (const auto& r : images) {
      if (fold_of.at(r.patient_id) == f)
        split.test.push_back(r);
      else if (val_pat.count(r.patient_id))
        split.val.push_back(r);
      else
        split.train.push_back(r);
    }
    res.folds.push_back(std::move(split));
  }
  return res;
}

inline SiteDataset fold_dataset(const SiteDataset& src, const FoldSplit& split) {
  SiteDataset d;
  d.site_id = src.site_id;
  d.train = split.train;
  d.val = split.val;
  d.test = split.test;
  return d;
}

}  // namespace malcl
