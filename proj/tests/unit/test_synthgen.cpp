#include <gtest/gtest.h>

#include <set>

#include "../support/fixtures.hpp"
#include "malcl/synthgen.hpp"

using namespace malcl;

namespace {

std::vector<std::vector<Annotation>> annotations_of(const SiteDataset& d) {
  std::vector<std::vector<Annotation>> out;
  for (const auto* l : {&d.train, &d.test})
    for (const auto& r : *l) out.push_back(r.annotations);
  return out;
}

}  // namespace

TEST(Synthgen, DeterministicForSameProfile) {
  auto p = fixture::tiny_profile("S", 7);
  GenerationReport r1, r2;
  const auto a = generate_site(p, &r1);
  const auto b = generate_site(p, &r2);
  EXPECT_EQ(r1, r2);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].pixels, b.train[i].pixels);
    EXPECT_EQ(a.train[i].annotations, b.train[i].annotations);
  }
}

TEST(Synthgen, HueShiftChangesPixelsButNotAnnotations) {
  auto p = fixture::tiny_profile("S", 3);
  auto q = p;
  q.stain_hue_shift = 120;
  const auto a = generate_site(p), b = generate_site(q);
  EXPECT_EQ(annotations_of(a), annotations_of(b));
  EXPECT_NE(a.train.front().pixels, b.train.front().pixels);
}

TEST(Synthgen, ZeroPrevalenceHasNoInfectedCells) {
  auto p = fixture::tiny_profile("S", 3);
  p.positive_image_fraction = 0.0;
  for (const auto& a : annotations_of(generate_site(p)))
    for (const auto& x : a) EXPECT_EQ(x.cls, CellClass::RbcAny);
}

TEST(Synthgen, TenPatientsGiveTwoTestPatients) {
  auto p = fixture::tiny_profile("S", 5);
  p.n_patients = 10;
  p.test_fraction = 0.2;
  const auto d = generate_site(p);
  EXPECT_EQ(patients_of(d.test).size(), 2u);
  EXPECT_EQ(patients_of(d.train).size(), 8u);
  EXPECT_TRUE(d.patient_disjoint());
}

TEST(Synthgen, RejectsInconsistentProfile) {
  auto p = fixture::tiny_profile("S");
  p.parasite_per_positive = {0, 2};
  EXPECT_THROW(generate_site(p), Error);
  p = fixture::tiny_profile("S");
  p.image_size = 32;
  EXPECT_THROW(generate_site(p), Error);
}

TEST(Synthgen, AnnotationsInsideImageAndCellsRarelyOverlap) {
  auto p = fixture::tiny_profile("S", 9, 256);
  p.cell_density = {28, 40};
  const auto d = generate_site(p);
  for (const auto& r : d.train) {
    std::vector<BoundingBox> cells;
    for (const auto& a : r.annotations) {
      const auto c = a.box.corners();
      EXPECT_GE(c.x0, 0.0);
      EXPECT_GE(c.y0, 0.0);
      EXPECT_LE(c.x1, 1.0);
      EXPECT_LE(c.y1, 1.0);
      if (a.cls == CellClass::RbcAny) cells.push_back(a.box);
    }
    for (std::size_t i = 0; i < cells.size(); ++i)
      for (std::size_t j = i + 1; j < cells.size(); ++j) EXPECT_LE(iou(cells[i], cells[j]), 0.3);
    // every infected box coincides with an RBC_ANY box
    for (const auto& a : r.annotations)
      if (a.cls == CellClass::RbcInfected)
        EXPECT_TRUE(std::count(r.annotations.begin(), r.annotations.end(), Annotation{a.box, CellClass::RbcAny}) == 1);
  }
}

TEST(Synthgen, PositivityMatchesFractionPerSplit) {
  auto p = fixture::tiny_profile("S", 2);
  p.n_patients = 12;
  p.positive_image_fraction = 0.5;
  const auto d = generate_site(p);
  for (const auto* l : {&d.train, &d.test}) {
    const auto pos = std::count_if(l->begin(), l->end(), [](const auto& r) { return r.positive(); });
    EXPECT_EQ(pos, std::lround(0.5 * static_cast<double>(l->size())));
  }
}

TEST(Synthgen, DefaultProfilesFollowReferenceCounts) {
  const auto ps = default_profiles(4, 0);
  ASSERT_EQ(ps.size(), 5u);
  EXPECT_EQ(ps[0].site_id, "D1");
  EXPECT_NEAR(ps[0].positive_image_fraction, 0.83, 0.005);
  EXPECT_NEAR(ps[4].positive_image_fraction, 0.11, 0.005);
  EXPECT_EQ(ps[2].train_images, 40);
  std::set<double> hues;
  for (const auto& p : ps) hues.insert(p.stain_hue_shift);
  EXPECT_EQ(hues.size(), 5u);
}

TEST(Synthgen, DefaultSmallSitesKeepPositiveTestImages) {
  auto ps = default_profiles(4, 0);
  GenerationReport rep;
  const auto d5 = generate_site(ps[4], &rep);
  EXPECT_GE(rep.sites.at(0).test_positive, 1);
  EXPECT_EQ(rep.sites.at(0).train_images, static_cast<int>(d5.train.size()));
}

TEST(Synthgen, DescribeProducesSixRowsPerSite) {
  const auto s = fixture::tiny_stream(3);
  const auto rep = describe(s);
  ASSERT_EQ(rep.sites.size(), 3u);
  const auto csv = rep.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "row,T1,T2,T3");
  SiteDataset empty;
  empty.site_id = "E";
  const auto c = count_site(empty);
  EXPECT_EQ(c.train_images + c.test_images + c.train_patients + c.test_positive, 0);
}
