#pragma once

// Domain types shared by every module: boxes, detections, annotated images,
// per-site datasets and the ordered task stream.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace malcl {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Seeds
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Child seed for an independent random stream identified by (seed, tag).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag + 0x632BE59BD9B4E019ull));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return derive_seed(seed, fnv1a(tag));
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

struct CornerBox {
  double x0, y0, x1, y1;
};

// Axis-aligned box in normalized center/size form.
class BoundingBox {
public:
  BoundingBox(double cx, double cy, double w, double h) : cx_(cx), cy_(cy), w_(w), h_(h) {
    if (!(cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0))
      throw Error("BoundingBox: center outside the unit square");
    if (!(w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0))
      throw Error("BoundingBox: width/height must lie in (0, 1]");
    const auto c = corners();
    const double iw = std::min(c.x1, 1.0) - std::max(c.x0, 0.0);
    const double ih = std::min(c.y1, 1.0) - std::max(c.y0, 0.0);
    if (!(iw > 0.0 && ih > 0.0))
      throw Error("BoundingBox: box does not intersect the unit square");
  }

  static BoundingBox from_corners(double x0, double y0, double x1, double y1) {
    return BoundingBox((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0);
  }

  double cx() const { return cx_; }
  double cy() const { return cy_; }
  double w() const { return w_; }
  double h() const { return h_; }
  double area() const { return w_ * h_; }

  CornerBox corners() const {
    return {cx_ - w_ / 2, cy_ - h_ / 2, cx_ + w_ / 2, cy_ + h_ / 2};
  }

  bool operator==(const BoundingBox&) const = default;

private:
  double cx_, cy_, w_, h_;
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  if (a == b) return 1.0;
  const auto ca = a.corners();
  const auto cb = b.corners();
  const double iw = std::min(ca.x1, cb.x1) - std::max(ca.x0, cb.x0);
  const double ih = std::min(ca.y1, cb.y1) - std::max(ca.y0, cb.y0);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Cells and images
// ---------------------------------------------------------------------------

enum class CellClass : std::uint8_t { RbcAny = 0, RbcInfected = 1 };

inline std::string_view to_string(CellClass c) {
  return c == CellClass::RbcAny ? "rbc_any" : "rbc_infected";
}

struct Detection {
  BoundingBox box;
  CellClass cls;
  double confidence;

  Detection(BoundingBox b, CellClass c, double conf) : box(b), cls(c), confidence(conf) {
    if (!(conf >= 0.0 && conf <= 1.0)) throw Error("Detection: confidence outside [0, 1]");
  }
};

struct Annotation {
  BoundingBox box;
  CellClass cls;
  bool operator==(const Annotation&) const = default;
};

inline bool image_is_positive(std::span<const Annotation> annotations) {
  return std::any_of(annotations.begin(), annotations.end(),
                     [](const Annotation& a) { return a.cls == CellClass::RbcInfected; });
}

// Interleaved 8-bit RGB, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  bool operator==(const Image&) const = default;
};

struct ImageRecord {
  std::string image_id;
  std::string patient_id;
  std::string site_id;
  Image pixels;
  std::vector<Annotation> annotations;

  bool positive() const { return image_is_positive(annotations); }
};

inline void validate(const ImageRecord& r) {
  if (r.patient_id.empty()) throw Error("image " + r.image_id + ": empty patient_id");
  // Annotation boxes are valid by construction; "within the image" means the
  // normalized box intersects the unit square, which BoundingBox enforces.
}

using ImageList = std::vector<ImageRecord>;

inline std::set<std::string> patients_of(std::span<const ImageRecord> images) {
  std::set<std::string> out;
  for (const auto& r : images) out.insert(r.patient_id);
  return out;
}

inline bool disjoint(const std::set<std::string>& a, const std::set<std::string>& b) {
  for (const auto& x : a)
    if (b.count(x)) return false;
  return true;
}

struct SiteDataset {
  std::string site_id;
  ImageList train;
  ImageList test;
  ImageList val;

  // No patient appears in more than one of train/val/test.
  bool patient_disjoint() const {
    const auto tr = patients_of(train), te = patients_of(test), va = patients_of(val);
    return disjoint(tr, te) && disjoint(tr, va) && disjoint(te, va);
  }

  const ImageRecord* find(std::string_view image_id) const {
    for (const auto* list : {&train, &val, &test})
      for (const auto& r : *list)
        if (r.image_id == image_id) return &r;
    return nullptr;
  }
};

struct TaskStream {
  std::vector<SiteDataset> tasks;

  std::size_t size() const { return tasks.size(); }

  void validate() const {
    if (tasks.empty()) throw Error("task stream must contain at least one task");
    std::set<std::string> ids;
    for (const auto& t : tasks)
      if (!ids.insert(t.site_id).second) throw Error("duplicate site_id in task stream: " + t.site_id);
  }
};

}  // namespace malcl
