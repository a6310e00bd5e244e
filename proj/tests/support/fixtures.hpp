#pragma once

// Small synthetic inputs shared by the test binaries.

#include <string>

#include "malcl/synthgen.hpp"

namespace fixture {

using namespace malcl;

// Few patients, small images: fast enough for plumbing tests.
inline SiteProfile tiny_profile(const std::string& id, std::uint64_t seed = 1, int size = 64) {
  SiteProfile p;
  p.site_id = id;
  p.n_patients = 6;
  p.test_fraction = 0.34;
  p.images_per_patient = {2, 3};
  p.positive_image_fraction = 0.6;
  p.cell_density = {6, 10};
  p.image_size = size;
  p.seed = seed;
  return p;
}

inline TaskStream tiny_stream(int sites, std::uint64_t seed = 1, int size = 64) {
  std::vector<SiteProfile> ps;
  for (int i = 0; i < sites; ++i) {
    auto p = tiny_profile("T" + std::to_string(i + 1), seed, size);
    p.stain_hue_shift = 60.0 * i;
    ps.push_back(p);
  }
  return generate_stream(ps);
}

// Moves the last training patient of each site into val.
inline TaskStream with_val(TaskStream s) {
  for (auto& t : s.tasks) {
    if (t.train.size() < 3) continue;
    const std::string patient = t.train.back().patient_id;
    ImageList keep;
    for (auto& r : t.train) (r.patient_id == patient ? t.val : keep).push_back(std::move(r));
    t.train = std::move(keep);
  }
  return s;
}

}  // namespace fixture

namespace fixture {

// Three sites with strong stain and artifact shift; site 3 carries frequent
// parasite-like stain blobs.
inline std::vector<SiteProfile> shift_profiles(std::uint64_t seed) {
  const double hues[3] = {0, 150, 190};
  const double artifacts[3] = {0.05, 0.1, 0.5};
  const double blur[3] = {0.6, 1.2, 1.0};
  const Rgb tints[3] = {{236, 226, 232}, {215, 232, 242}, {242, 238, 212}};
  std::vector<SiteProfile> out(3);
  for (int i = 0; i < 3; ++i) {
    auto& p = out[i];
    p.site_id = "S" + std::to_string(i + 1);
    p.n_patients = 18;
    p.images_per_patient = {3, 5};
    p.test_fraction = 0.33;
    p.positive_image_fraction = 0.7;
    p.stain_hue_shift = hues[i];
    p.artifact_rate = artifacts[i];
    p.blur_sigma = blur[i];
    p.background_tint = tints[i];
    p.seed = seed;
  }
  return out;
}

}  // namespace fixture
