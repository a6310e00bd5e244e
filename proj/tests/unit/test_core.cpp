#include <gtest/gtest.h>

#include <random>

#include "malcl/core.hpp"

using namespace malcl;

TEST(BoundingBox, RejectsDegenerateAndOutsideBoxes) {
  EXPECT_THROW(BoundingBox(0.5, 0.5, 0.0, 0.1), Error);
  EXPECT_THROW(BoundingBox(0.5, 0.5, 0.1, -0.1), Error);
  EXPECT_THROW(BoundingBox(1.2, 0.5, 0.1, 0.1), Error);
  EXPECT_THROW(BoundingBox(0.5, 0.5, 1.5, 0.1), Error);
  EXPECT_NO_THROW(BoundingBox(0.0, 1.0, 0.2, 0.2));
}

TEST(BoundingBox, CornerRoundTrip) {
  const auto b = BoundingBox::from_corners(0.1, 0.2, 0.3, 0.6);
  EXPECT_DOUBLE_EQ(b.cx(), 0.2);
  EXPECT_DOUBLE_EQ(b.cy(), 0.4);
  EXPECT_DOUBLE_EQ(b.w(), 0.2);
  EXPECT_DOUBLE_EQ(b.h(), 0.4);
  const auto c = b.corners();
  EXPECT_DOUBLE_EQ(c.x0, 0.1);
  EXPECT_DOUBLE_EQ(c.y1, 0.6);
}

TEST(Iou, WorkedExamples) {
  const auto a = BoundingBox::from_corners(0.0, 0.0, 0.2, 0.2);
  const auto b = BoundingBox::from_corners(0.1, 0.1, 0.3, 0.3);
  EXPECT_NEAR(iou(a, b), 0.01 / 0.07, 1e-12);
  EXPECT_NEAR(iou(a, b), 0.142857, 1e-6);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, BoundingBox::from_corners(0.5, 0.5, 0.7, 0.7)), 0.0);
}

TEST(Iou, SymmetricBoundedAndScaleInvariant) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.05, 0.95), s(0.02, 0.3);
  for (int n = 0; n < 2000; ++n) {
    const BoundingBox a(u(rng), u(rng), s(rng), s(rng)), b(u(rng), u(rng), s(rng), s(rng));
    const double v = iou(a, b);
    EXPECT_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_EQ(iou(a, a), 1.0);
    // axis-aligned scaling of the unit square about the origin
    const double kx = 0.5, ky = 0.25;
    const BoundingBox as(a.cx() * kx, a.cy() * ky, a.w() * kx, a.h() * ky);
    const BoundingBox bs(b.cx() * kx, b.cy() * ky, b.w() * kx, b.h() * ky);
    EXPECT_NEAR(iou(as, bs), v, 1e-9);
  }
}

TEST(Annotations, ImagePositivity) {
  const BoundingBox b(0.5, 0.5, 0.1, 0.1);
  EXPECT_FALSE(image_is_positive(std::vector<Annotation>{}));
  EXPECT_TRUE(image_is_positive(std::vector<Annotation>{{b, CellClass::RbcInfected}}));
  EXPECT_FALSE(image_is_positive(std::vector<Annotation>(5, {b, CellClass::RbcAny})));
}

TEST(Detection, ConfidenceRange) {
  const BoundingBox b(0.5, 0.5, 0.1, 0.1);
  EXPECT_THROW(Detection(b, CellClass::RbcAny, 1.5), Error);
  EXPECT_THROW(Detection(b, CellClass::RbcAny, -0.1), Error);
  EXPECT_NO_THROW(Detection(b, CellClass::RbcAny, 1.0));
}

TEST(SiteDataset, PatientDisjointness) {
  auto rec = [](std::string id, std::string patient) {
    ImageRecord r;
    r.image_id = std::move(id);
    r.patient_id = std::move(patient);
    return r;
  };
  SiteDataset d;
  d.train = {rec("a", "p1"), rec("b", "p2")};
  d.test = {rec("c", "p3")};
  EXPECT_TRUE(d.patient_disjoint());
  d.val = {rec("d", "p2")};
  EXPECT_FALSE(d.patient_disjoint());
  EXPECT_EQ(d.find("c")->patient_id, "p3");
  EXPECT_EQ(d.find("zz"), nullptr);
  ImageRecord bad = rec("e", "");
  EXPECT_THROW(validate(bad), Error);
}

TEST(TaskStream, Validation) {
  TaskStream s;
  EXPECT_THROW(s.validate(), Error);
  s.tasks.resize(2);
  s.tasks[0].site_id = "A";
  s.tasks[1].site_id = "A";
  EXPECT_THROW(s.validate(), Error);
  s.tasks[1].site_id = "B";
  EXPECT_NO_THROW(s.validate());
}

TEST(Seeds, DeriveSeedIsDeterministicAndSpreads) {
  EXPECT_EQ(derive_seed(7, "x"), derive_seed(7, "x"));
  EXPECT_NE(derive_seed(7, "x"), derive_seed(7, "y"));
  EXPECT_NE(derive_seed(7, 1), derive_seed(8, 1));
  EXPECT_NE(derive_seed(7, 1), derive_seed(7, 2));
}
