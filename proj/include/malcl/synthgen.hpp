#pragma once

// Deterministic synthetic thin-smear generator. Each site renders elliptical
// red cells on a tinted background; infected cells carry a small dark
// inclusion. Site-level stain, tint, blur, noise and artifact parameters
// induce the domain shift between tasks.

#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "malcl/core.hpp"

namespace malcl {

struct CountRange {
  int min = 1;
  int max = 1;
};

struct Rgb {
  double r = 0, g = 0, b = 0;
};

struct SiteProfile {
  std::string site_id;
  int n_patients = 10;
  double test_fraction = 0.2;
  CountRange images_per_patient{3, 6};
  // Exact image counts per split; 0 means "draw images_per_patient per patient".
  int train_images = 0;
  int test_images = 0;
  double positive_image_fraction = 0.5;
  CountRange cell_density{28, 40};
  CountRange parasite_per_positive{1, 3};
  double stain_hue_shift = 0.0;  // degrees
  Rgb background_tint{236, 226, 232};
  double blur_sigma = 0.6;  // pixels
  double noise_std = 3.0;   // 8-bit units
  double artifact_rate = 0.05;
  std::uint64_t seed = 0;
  int image_size = 256;
};

struct SiteCounts {
  std::string site_id;
  int train_patients = 0, train_images = 0, train_positive = 0;
  int test_patients = 0, test_images = 0, test_positive = 0;
  bool operator==(const SiteCounts&) const = default;
};

struct GenerationReport {
  std::vector<SiteCounts> sites;
  bool operator==(const GenerationReport&) const = default;

  // Table with one column per site and six count rows (train block, test block).
  std::string to_csv() const {
    std::ostringstream os;
    os << "row";
    for (const auto& s : sites) os << ',' << s.site_id;
    os << '\n';
    auto row = [&](const char* name, int SiteCounts::*field) {
      os << name;
      for (const auto& s : sites) os << ',' << s.*field;
      os << '\n';
    };
    row("train_patients", &SiteCounts::train_patients);
    row("train_images", &SiteCounts::train_images);
    row("train_positive_images", &SiteCounts::train_positive);
    row("test_patients", &SiteCounts::test_patients);
    row("test_images", &SiteCounts::test_images);
    row("test_positive_images", &SiteCounts::test_positive);
    return os.str();
  }
};

inline SiteCounts count_site(const SiteDataset& d) {
  SiteCounts c;
  c.site_id = d.site_id;
  auto fill = [](const ImageList& l, int& patients, int& images, int& positive) {
    patients = static_cast<int>(patients_of(l).size());
    images = static_cast<int>(l.size());
    positive = static_cast<int>(std::count_if(l.begin(), l.end(), [](const auto& r) { return r.positive(); }));
  };
  // val belongs to the training side of the split
  ImageList train_side = d.train;
  train_side.insert(train_side.end(), d.val.begin(), d.val.end());
  fill(train_side, c.train_patients, c.train_images, c.train_positive);
  fill(d.test, c.test_patients, c.test_images, c.test_positive);
  return c;
}

inline GenerationReport describe(const TaskStream& stream) {
  GenerationReport rep;
  for (const auto& t : stream.tasks) rep.sites.push_back(count_site(t));
  return rep;
}

inline void validate(const SiteProfile& p) {
  auto bad = [&](const std::string& what) { throw Error("site profile " + p.site_id + ": " + what); };
  if (p.site_id.empty()) bad("empty site_id");
  if (p.n_patients < 1) bad("n_patients must be >= 1");
  if (p.images_per_patient.min < 1 || p.images_per_patient.max < p.images_per_patient.min)
    bad("invalid images_per_patient range");
  if (p.cell_density.min < 1 || p.cell_density.max < p.cell_density.min) bad("invalid cell_density range");
  if (p.parasite_per_positive.max < p.parasite_per_positive.min || p.parasite_per_positive.min < 0)
    bad("invalid parasite_per_positive range");
  if (p.positive_image_fraction > 0 && p.parasite_per_positive.min < 1)
    bad("positive images requested but parasite_per_positive allows zero parasites");
  for (double f : {p.positive_image_fraction, p.test_fraction, p.artifact_rate})
    if (!(f >= 0.0 && f <= 1.0)) bad("fractions must lie in [0, 1]");
  if (p.train_images < 0 || p.test_images < 0) bad("image counts must be non-negative");
  if (p.blur_sigma < 0 || p.noise_std < 0) bad("blur_sigma and noise_std must be non-negative");
  if (p.image_size < 64) bad("image_size must be >= 64");
}

namespace detail {

inline double clamp255(double v) { return std::clamp(v, 0.0, 255.0); }

// Rotation about the gray axis of RGB space.
inline Rgb rotate_hue(Rgb c, double degrees) {
  const double a = degrees * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(a), sn = std::sin(a);
  const double k = 1.0 / 3.0, s3 = std::sqrt(1.0 / 3.0);
  const double m00 = cs + (1 - cs) * k, m01 = k * (1 - cs) - s3 * sn, m02 = k * (1 - cs) + s3 * sn;
  const double m10 = k * (1 - cs) + s3 * sn, m11 = cs + k * (1 - cs), m12 = k * (1 - cs) - s3 * sn;
  const double m20 = k * (1 - cs) - s3 * sn, m21 = k * (1 - cs) + s3 * sn, m22 = cs + k * (1 - cs);
  return {clamp255(m00 * c.r + m01 * c.g + m02 * c.b), clamp255(m10 * c.r + m11 * c.g + m12 * c.b),
          clamp255(m20 * c.r + m21 * c.g + m22 * c.b)};
}

inline Rgb scale(Rgb c, double f) { return {clamp255(c.r * f), clamp255(c.g * f), clamp255(c.b * f)}; }

inline double smooth_edge(double d, double edge) {
  // 1 inside, 0 outside, linear ramp of width `edge` around d == 1
  return std::clamp(0.5 - (d - 1.0) / edge, 0.0, 1.0);
}

struct Canvas {
  int n;
  std::vector<double> r, g, b;
  explicit Canvas(int size, Rgb fill)
      : n(size), r(static_cast<std::size_t>(size) * size, fill.r), g(r.size(), fill.g), b(r.size(), fill.b) {}

  void blend(int x, int y, Rgb c, double alpha) {
    if (x < 0 || y < 0 || x >= n || y >= n || alpha <= 0) return;
    const std::size_t i = static_cast<std::size_t>(y) * n + x;
    r[i] += (c.r - r[i]) * alpha;
    g[i] += (c.g - g[i]) * alpha;
    b[i] += (c.b - b[i]) * alpha;
  }

  void disc(double cx, double cy, double radius, Rgb c, double strength = 1.0) {
    const int x0 = static_cast<int>(std::floor(cx - radius - 1)), x1 = static_cast<int>(std::ceil(cx + radius + 1));
    const int y0 = static_cast<int>(std::floor(cy - radius - 1)), y1 = static_cast<int>(std::ceil(cy + radius + 1));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy) / radius;
        blend(x, y, c, strength * smooth_edge(d, 1.0 / radius));
      }
  }

  void blur(double sigma) {
    if (sigma <= 0.05) return;
    const int rad = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<double> k(2 * rad + 1);
    double sum = 0;
    for (int i = -rad; i <= rad; ++i) sum += k[i + rad] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= sum;
    for (auto* ch : {&r, &g, &b}) {
      std::vector<double> tmp(ch->size());
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          double acc = 0;
          for (int i = -rad; i <= rad; ++i) acc += k[i + rad] * (*ch)[y * n + std::clamp(x + i, 0, n - 1)];
          tmp[y * n + x] = acc;
        }
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          double acc = 0;
          for (int i = -rad; i <= rad; ++i) acc += k[i + rad] * tmp[std::clamp(y + i, 0, n - 1) * n + x];
          (*ch)[y * n + x] = acc;
        }
    }
  }
};

struct CellLayout {
  double cx, cy, rx, ry;      // pixels
  bool infected = false;
  double inc_dx = 0, inc_dy = 0, inc_r = 0;  // inclusion offset/radius, pixels
};

// Cell geometry depends only on the layout seed and the cell count range.
inline std::vector<CellLayout> layout_cells(std::mt19937_64& rng, int size, CountRange density) {
  std::uniform_int_distribution<int> count(density.min, density.max);
  const int n = count(rng);
  const double s = size / 256.0;
  std::uniform_real_distribution<double> radius(9.0 * s, 12.5 * s);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int grid = 16;
  const double cell_px = static_cast<double>(size) / grid;
  std::vector<CellLayout> cells;
  std::vector<int> occupied(grid * grid, 0);
  auto box_of = [&](const CellLayout& c) {
    return BoundingBox(c.cx / size, c.cy / size, 2 * c.rx / size, 2 * c.ry / size);
  };
  for (int attempt = 0; attempt < 60 * n && static_cast<int>(cells.size()) < n; ++attempt) {
    CellLayout c;
    c.rx = radius(rng);
    c.ry = std::clamp(c.rx * (0.85 + 0.3 * unit(rng)), 8.0 * s, 13.0 * s);
    c.cx = c.rx + 1 + unit(rng) * (size - 2 * c.rx - 2);
    c.cy = c.ry + 1 + unit(rng) * (size - 2 * c.ry - 2);
    const int gx = std::min(grid - 1, static_cast<int>(c.cx / cell_px));
    const int gy = std::min(grid - 1, static_cast<int>(c.cy / cell_px));
    if (occupied[gy * grid + gx]) continue;
    const auto b = box_of(c);
    bool ok = true;
    for (const auto& o : cells)
      if (iou(b, box_of(o)) > 0.3 || std::hypot(c.cx - o.cx, c.cy - o.cy) < 0.75 * (c.rx + o.rx)) {
        ok = false;
        break;
      }
    if (!ok) continue;
    occupied[gy * grid + gx] = 1;
    cells.push_back(c);
  }
  return cells;
}

struct PatientLook {
  double hue_jitter = 0;
  double brightness = 1;
};

inline Image render(const SiteProfile& p, const std::vector<CellLayout>& cells, const PatientLook& look,
                    std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = p.image_size;
  const double s = n / 256.0;
  const double hue = p.stain_hue_shift + look.hue_jitter;
  const Rgb bg = scale(p.background_tint, look.brightness);
  const Rgb cell = scale(rotate_hue({214, 148, 164}, hue), look.brightness);
  const Rgb rim = scale(rotate_hue({188, 116, 138}, hue), look.brightness);
  const Rgb pallor = scale(rotate_hue({232, 186, 196}, hue), look.brightness);
  const Rgb inclusion = scale(rotate_hue({92, 36, 128}, hue), look.brightness);

  Canvas cv(n, bg);
  for (const auto& c : cells) {
    const int x0 = static_cast<int>(c.cx - c.rx - 2), x1 = static_cast<int>(c.cx + c.rx + 2);
    const int y0 = static_cast<int>(c.cy - c.ry - 2), y1 = static_cast<int>(c.cy + c.ry + 2);
    const double edge = 1.2 / std::min(c.rx, c.ry);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = (x + 0.5 - c.cx) / c.rx, dy = (y + 0.5 - c.cy) / c.ry;
        const double d = std::sqrt(dx * dx + dy * dy);
        const double a = smooth_edge(d, edge);
        if (a <= 0) continue;
        // darker rim, pale biconcave center
        Rgb col = cell;
        if (d > 0.8) {
          const double t = std::min(1.0, (d - 0.8) / 0.2);
          col = {cell.r + (rim.r - cell.r) * t, cell.g + (rim.g - cell.g) * t, cell.b + (rim.b - cell.b) * t};
        } else if (d < 0.4) {
          const double t = 1.0 - d / 0.4;
          col = {cell.r + (pallor.r - cell.r) * t, cell.g + (pallor.g - cell.g) * t,
                 cell.b + (pallor.b - cell.b) * t};
        }
        cv.blend(x, y, col, a);
      }
    if (c.infected) {
      cv.disc(c.cx + c.inc_dx, c.cy + c.inc_dy, c.inc_r, inclusion);
      // faint ring around the chromatin dot
      cv.disc(c.cx + c.inc_dx * 0.3, c.cy + c.inc_dy * 0.3, c.inc_r * 2.2, inclusion, 0.25);
    }
  }
  if (unit(rng) < p.artifact_rate) {
    std::uniform_int_distribution<int> count(1, 4);
    const int k = count(rng);
    for (int i = 0; i < k; ++i) {
      const double r = (2.2 + 2.5 * unit(rng)) * s;
      const double x = r + unit(rng) * (n - 2 * r), y = r + unit(rng) * (n - 2 * r);
      cv.disc(x, y, r, scale(inclusion, 0.95 + 0.2 * unit(rng)));
    }
  }
  cv.blur(p.blur_sigma);
  std::normal_distribution<double> noise(0.0, std::max(p.noise_std, 1e-9));
  Image img(n, n);
  for (int i = 0; i < n * n; ++i) {
    const double nr = p.noise_std > 0 ? noise(rng) : 0.0;
    const double ng = p.noise_std > 0 ? noise(rng) : 0.0;
    const double nb = p.noise_std > 0 ? noise(rng) : 0.0;
    img.rgb[3 * i + 0] = static_cast<std::uint8_t>(std::lround(clamp255(cv.r[i] + nr)));
    img.rgb[3 * i + 1] = static_cast<std::uint8_t>(std::lround(clamp255(cv.g[i] + ng)));
    img.rgb[3 * i + 2] = static_cast<std::uint8_t>(std::lround(clamp255(cv.b[i] + nb)));
  }
  return img;
}

inline std::string zero_pad(int v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*d", width, v);
  return buf;
}

inline int round_count(double v) { return static_cast<int>(std::lround(v)); }

// Splits `total` items across `bins` bins: every bin gets at least one, the
// remainder is dealt uniformly at random.
inline std::vector<int> distribute(int total, int bins, std::mt19937_64& rng) {
  std::vector<int> out(bins, 1);
  std::uniform_int_distribution<int> pick(0, bins - 1);
  for (int i = bins; i < total; ++i) ++out[pick(rng)];
  return out;
}

}  // namespace detail

inline std::uint64_t site_seed(const SiteProfile& p) { return derive_seed(p.seed, p.site_id); }

// Renders one site. Layout (cell geometry, infection status, patient
// membership) is drawn from streams seeded only by seed, site_id and counts,
// so visual parameters never change the annotation set.
inline SiteDataset generate_site(const SiteProfile& p, GenerationReport* report = nullptr) {
  validate(p);
  const std::uint64_t base = site_seed(p);
  std::mt19937_64 split_rng(derive_seed(base, "split"));

  const int n_pat = p.n_patients;
  int n_test = n_pat >= 2 ? std::clamp(detail::round_count(p.test_fraction * n_pat), 1, n_pat - 1) : 0;
  if (p.test_fraction == 0.0) n_test = 0;
  std::vector<int> order(n_pat);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), split_rng);
  std::vector<int> test_pat(order.begin(), order.begin() + n_test);
  std::vector<int> train_pat(order.begin() + n_test, order.end());
  std::sort(test_pat.begin(), test_pat.end());
  std::sort(train_pat.begin(), train_pat.end());

  auto images_for = [&](const std::vector<int>& pats, int target) {
    std::vector<int> per(pats.size());
    if (pats.empty()) return per;
    if (target > 0) {
      if (target < static_cast<int>(pats.size()))
        throw Error("site profile " + p.site_id + ": fewer images than patients in a split");
      return detail::distribute(target, static_cast<int>(pats.size()), split_rng);
    }
    std::uniform_int_distribution<int> k(p.images_per_patient.min, p.images_per_patient.max);
    for (auto& v : per) v = k(split_rng);
    return per;
  };
  const auto train_counts = images_for(train_pat, p.train_images);
  const auto test_counts = images_for(test_pat, p.test_images);

  struct Slot {
    int patient;
    bool test;
  };
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < train_pat.size(); ++i)
    for (int k = 0; k < train_counts[i]; ++k) slots.push_back({train_pat[i], false});
  for (std::size_t i = 0; i < test_pat.size(); ++i)
    for (int k = 0; k < test_counts[i]; ++k) slots.push_back({test_pat[i], true});
  std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) { return a.patient < b.patient; });

  // choose positive images inside each split
  std::vector<char> positive(slots.size(), 0);
  for (bool test : {false, true}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (slots[i].test == test) idx.push_back(i);
    if (idx.empty()) continue;
    int n_pos = detail::round_count(p.positive_image_fraction * static_cast<double>(idx.size()));
    if (p.positive_image_fraction > 0) n_pos = std::max(n_pos, 1);
    n_pos = std::min<int>(n_pos, static_cast<int>(idx.size()));
    std::shuffle(idx.begin(), idx.end(), split_rng);
    for (int i = 0; i < n_pos; ++i) positive[idx[i]] = 1;
  }

  SiteDataset out;
  out.site_id = p.site_id;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    ImageRecord rec;
    rec.site_id = p.site_id;
    rec.patient_id = p.site_id + "_p" + detail::zero_pad(slots[i].patient, 3);
    rec.image_id = p.site_id + "_" + detail::zero_pad(static_cast<int>(i), 4);

    std::mt19937_64 layout_rng(derive_seed(base, "layout:" + rec.image_id));
    auto cells = detail::layout_cells(layout_rng, p.image_size, p.cell_density);
    if (positive[i] && !cells.empty()) {
      std::uniform_int_distribution<int> k(p.parasite_per_positive.min, p.parasite_per_positive.max);
      const int n_inf = std::min<int>(k(layout_rng), static_cast<int>(cells.size()));
      std::vector<std::size_t> pick(cells.size());
      std::iota(pick.begin(), pick.end(), 0);
      std::shuffle(pick.begin(), pick.end(), layout_rng);
      for (int j = 0; j < n_inf; ++j) {
        auto& c = cells[pick[j]];
        c.infected = true;
        const double s = p.image_size / 256.0;
        c.inc_r = (2.2 + 1.3 * unit(layout_rng)) * s;
        const double ang = unit(layout_rng) * 6.283185307179586;
        const double rad = unit(layout_rng) * 0.45 * std::min(c.rx, c.ry);
        c.inc_dx = rad * std::cos(ang);
        c.inc_dy = rad * std::sin(ang);
      }
    }
    const double n = p.image_size;
    for (const auto& c : cells) {
      BoundingBox b(c.cx / n, c.cy / n, 2 * c.rx / n, 2 * c.ry / n);
      rec.annotations.push_back({b, CellClass::RbcAny});
      if (c.infected) rec.annotations.push_back({b, CellClass::RbcInfected});
    }

    std::mt19937_64 look_rng(derive_seed(base, "patient:" + rec.patient_id));
    detail::PatientLook look;
    look.hue_jitter = (unit(look_rng) - 0.5) * 12.0;
    look.brightness = 0.96 + 0.08 * unit(look_rng);
    std::mt19937_64 appearance_rng(derive_seed(base, "appearance:" + rec.image_id));
    rec.pixels = detail::render(p, cells, look, appearance_rng);

    (slots[i].test ? out.test : out.train).push_back(std::move(rec));
  }
  if (report) report->sites.push_back(count_site(out));
  return out;
}

inline TaskStream generate_stream(const std::vector<SiteProfile>& profiles, GenerationReport* report = nullptr) {
  TaskStream s;
  for (const auto& p : profiles) s.tasks.push_back(generate_site(p, report));
  s.validate();
  return s;
}

// Five sites whose counts and positive-image ratios follow the multi-site
// clinical study (train counts 1316/775/160/95/151 images), divided by
// `scale`. Site 3 carries many stain artifacts.
inline std::vector<SiteProfile> default_profiles(int scale = 4, std::uint64_t seed = 0) {
  if (scale < 1) throw Error("default_profiles: scale must be >= 1");
  struct Row {
    int train_pat, test_pat, train_img, test_img, train_pos;
  };
  const std::array<Row, 5> rows{{{92, 28, 1316, 323, 1087},
                                 {155, 38, 775, 190, 488},
                                 {40, 10, 160, 40, 70},
                                 {21, 4, 95, 26, 48},
                                 {22, 5, 151, 32, 16}}};
  struct Look {
    double hue;
    Rgb tint;
    double blur, noise, artifacts;
  };
  const std::array<Look, 5> looks{{{0.0, {236, 226, 232}, 0.6, 3.0, 0.05},
                                   {140.0, {222, 232, 240}, 1.2, 5.0, 0.05},
                                   {-70.0, {240, 236, 218}, 0.8, 4.0, 0.45},
                                   {60.0, {228, 228, 228}, 1.6, 6.0, 0.10},
                                   {200.0, {244, 230, 222}, 1.0, 8.0, 0.10}}};
  std::vector<SiteProfile> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    SiteProfile p;
    p.site_id = "D" + std::to_string(i + 1);
    const int total_pat = r.train_pat + r.test_pat;
    p.n_patients = std::max(2, detail::round_count(static_cast<double>(total_pat) / scale));
    p.test_fraction = static_cast<double>(r.test_pat) / total_pat;
    const int n_test = std::clamp(detail::round_count(p.test_fraction * p.n_patients), 1, p.n_patients - 1);
    p.train_images = std::max(p.n_patients - n_test, detail::round_count(static_cast<double>(r.train_img) / scale));
    p.test_images = std::max(n_test, detail::round_count(static_cast<double>(r.test_img) / scale));
    p.positive_image_fraction = static_cast<double>(r.train_pos) / r.train_img;
    p.stain_hue_shift = looks[i].hue;
    p.background_tint = looks[i].tint;
    p.blur_sigma = looks[i].blur;
    p.noise_std = looks[i].noise;
    p.artifact_rate = looks[i].artifacts;
    p.seed = seed;
    out.push_back(p);
  }
  return out;
}

}  // namespace malcl
