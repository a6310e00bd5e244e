#include <gtest/gtest.h>

#include <random>
#include <set>

#include "../support/fixtures.hpp"
#include "malcl/splits.hpp"

using namespace malcl;

namespace {

ImageList images_for_patients(int n_patients, int positives, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ImageList out;
  for (int p = 0; p < n_patients; ++p) {
    const int k = 1 + static_cast<int>(rng() % 3);
    for (int i = 0; i < k; ++i) {
      ImageRecord r;
      r.patient_id = "p" + std::to_string(p);
      r.image_id = r.patient_id + "_" + std::to_string(i);
      if (p < positives && i == 0) r.annotations.push_back({BoundingBox(0.5, 0.5, 0.1, 0.1), CellClass::RbcInfected});
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace

TEST(Splits, ThreePatientsThreeFolds) {
  const auto imgs = images_for_patients(3, 1, 1);
  const auto fa = assign_patient_folds(imgs, 3, 5);
  EXPECT_EQ(fa.fold_sizes(), (std::vector<int>{1, 1, 1}));
}

TEST(Splits, NinetyTwoPatients) {
  const auto imgs = images_for_patients(92, 70, 2);
  auto sizes = assign_patient_folds(imgs, 3, 0).fold_sizes();
  std::sort(sizes.rbegin(), sizes.rend());
  EXPECT_EQ(sizes, (std::vector<int>{31, 31, 30}));
}

TEST(Splits, InsufficientPatients) {
  const auto imgs = images_for_patients(2, 1, 1);
  try {
    assign_patient_folds(imgs, 3, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("insufficient patients"), std::string::npos);
  }
}

TEST(Splits, DeterministicAndSeedSensitive) {
  const auto imgs = images_for_patients(30, 10, 3);
  EXPECT_EQ(assign_patient_folds(imgs, 3, 1), assign_patient_folds(imgs, 3, 1));
  EXPECT_NE(assign_patient_folds(imgs, 3, 1), assign_patient_folds(imgs, 3, 2));
}

TEST(Splits, PositivesSpreadAcrossFolds) {
  const auto imgs = images_for_patients(20, 6, 4);
  const auto fa = assign_patient_folds(imgs, 3, 9);
  std::vector<int> pos(3, 0);
  for (int p = 0; p < 6; ++p) ++pos[fa.fold_of_patient.at("p" + std::to_string(p))];
  EXPECT_EQ(pos, (std::vector<int>{2, 2, 2}));
}

TEST(Splits, ValidationCount) {
  EXPECT_EQ(validation_patient_count(1), 0);
  EXPECT_EQ(validation_patient_count(2), 1);
  EXPECT_EQ(validation_patient_count(12), 1);
  EXPECT_EQ(validation_patient_count(15), 2);
  EXPECT_EQ(validation_patient_count(61), 6);
}

TEST(Splits, KFoldPropertiesOnRandomDatasets) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 3 + static_cast<int>(rng() % 40);
    const int k = 2 + static_cast<int>(rng() % std::min(4, n - 1));
    SiteDataset d;
    d.site_id = "S";
    d.train = images_for_patients(n, static_cast<int>(rng() % (n + 1)), rng());
    const auto res = patient_grouped_kfold(d, k, rng());
    std::set<std::string> covered;
    std::size_t images = 0;
    for (const auto& f : res.folds) {
      const auto te = patients_of(f.test), tr = patients_of(f.train), va = patients_of(f.val);
      EXPECT_TRUE(disjoint(te, tr));
      EXPECT_TRUE(disjoint(te, va));
      EXPECT_TRUE(disjoint(tr, va));
      for (const auto& p : te) EXPECT_TRUE(covered.insert(p).second);
      EXPECT_EQ(f.train.size() + f.val.size() + f.test.size(), d.train.size());
      images += f.test.size();
    }
    EXPECT_EQ(covered.size(), static_cast<std::size_t>(n));
    EXPECT_EQ(images, d.train.size());
    const auto sizes = res.assignment.fold_sizes();
    EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1);
  }
}

TEST(Splits, FoldDatasetPoolsAllSplits) {
  const auto s = fixture::tiny_stream(1);
  const auto& site = s.tasks[0];
  const auto res = patient_grouped_kfold(site, 3, 1);
  const auto d = fold_dataset(site, res.folds[0]);
  EXPECT_TRUE(d.patient_disjoint());
  EXPECT_EQ(d.train.size() + d.val.size() + d.test.size(), site.train.size() + site.test.size());
}
