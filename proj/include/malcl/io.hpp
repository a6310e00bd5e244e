#pragma once

// On-disk formats: PNG images, detector-style label files, the per-site
// dataset layout and small CSV helpers.
//
//   <root>/site_<id>/images/<image_id>.png
//   <root>/site_<id>/labels/<image_id>.txt   "class cx cy w h", 6 decimals
//   <root>/site_<id>/patients.csv            image_id,patient_id
//   <root>/site_<id>/split.csv               image_id,split

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "malcl/core.hpp"

namespace malcl::io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

inline void write_png(const fs::path& path, const Image& img) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw Error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng: cannot allocate write structures");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng: failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) png_write_row(png, const_cast<png_bytep>(img.at(0, y)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline Image read_png(const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw Error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng: cannot allocate read structures");
  }
  Image img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng: failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img = Image(w, h);
  for (int y = 0; y < h; ++y) png_read_row(png, img.at(0, y), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

inline std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot open " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Writes through a temporary file and a rename so readers never observe a
// half-written file.
inline void write_text(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot open " + tmp.string() + " for writing");
    os << content;
    if (!os) throw Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, p);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

// Shortest text that parses back to the same double.
inline std::string format_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

inline std::string format_labels(const std::vector<Annotation>& anns) {
  std::string out;
  char buf[128];
  for (const auto& a : anns) {
    std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f\n", static_cast<int>(a.cls), a.box.cx(), a.box.cy(),
                  a.box.w(), a.box.h());
    out += buf;
  }
  return out;
}

inline std::vector<Annotation> parse_labels(const std::string& text, const std::string& where = "labels") {
  std::vector<Annotation> out;
  int line_no = 0;
  for (const auto& line : lines(text)) {
    ++line_no;
    std::istringstream is(line);
    int cls = -1;
    double cx, cy, w, h;
    std::string extra;
    if (!(is >> cls >> cx >> cy >> w >> h) || (is >> extra))
      throw Error(where + ":" + std::to_string(line_no) + ": expected 'class cx cy w h'");
    if (cls != 0 && cls != 1) throw Error(where + ":" + std::to_string(line_no) + ": class must be 0 or 1");
    try {
      out.push_back({BoundingBox(cx, cy, w, h), static_cast<CellClass>(cls)});
    } catch (const Error& e) {
      throw Error(where + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset layout
// ---------------------------------------------------------------------------

inline fs::path site_dir(const fs::path& root, const std::string& site_id) { return root / ("site_" + site_id); }

inline void write_site(const fs::path& root, const SiteDataset& site) {
  const auto dir = site_dir(root, site.site_id);
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  std::string patients = "image_id,patient_id\n", splits = "image_id,split\n";
  auto emit = [&](const ImageList& list, const char* split_name) {
    for (const auto& r : list) {
      write_png(dir / "images" / (r.image_id + ".png"), r.pixels);
      write_text(dir / "labels" / (r.image_id + ".txt"), format_labels(r.annotations));
      patients += r.image_id + "," + r.patient_id + "\n";
      splits += r.image_id + "," + split_name + "\n";
    }
  };
  emit(site.train, "train");
  emit(site.val, "val");
  emit(site.test, "test");
  write_text(dir / "patients.csv", patients);
  write_text(dir / "split.csv", splits);
}

inline SiteDataset read_site(const fs::path& root, const std::string& site_id) {
  const auto dir = site_dir(root, site_id);
  if (!fs::is_directory(dir)) throw Error("missing site directory " + dir.string());
  std::map<std::string, std::string> patient_of, split_of;
  for (const auto& line : lines(read_text(dir / "patients.csv"))) {
    const auto f = split(line, ',');
    if (f.size() != 2) throw Error(dir.string() + "/patients.csv: malformed line '" + line + "'");
    if (f[0] == "image_id") continue;
    patient_of[f[0]] = f[1];
  }
  if (fs::exists(dir / "split.csv"))
    for (const auto& line : lines(read_text(dir / "split.csv"))) {
      const auto f = split(line, ',');
      if (f.size() != 2) throw Error(dir.string() + "/split.csv: malformed line '" + line + "'");
      if (f[0] == "image_id") continue;
      split_of[f[0]] = f[1];
    }
  SiteDataset site;
  site.site_id = site_id;
  for (const auto& [image_id, patient] : patient_of) {
    ImageRecord r;
    r.image_id = image_id;
    r.patient_id = patient;
    r.site_id = site_id;
    r.pixels = read_png(dir / "images" / (image_id + ".png"));
    const auto label_path = dir / "labels" / (image_id + ".txt");
    if (fs::exists(label_path)) r.annotations = parse_labels(read_text(label_path), label_path.string());
    validate(r);
    const auto it = split_of.find(image_id);
    const std::string sp = it == split_of.end() ? "train" : it->second;
    if (sp == "test")
      site.test.push_back(std::move(r));
    else if (sp == "val")
      site.val.push_back(std::move(r));
    else
      site.train.push_back(std::move(r));
  }
  if (!site.patient_disjoint()) throw Error("site " + site_id + ": a patient appears in more than one split");
  return site;
}

// Stream order is listed in <root>/sites.txt, one site id per line.
inline void write_stream(const fs::path& root, const TaskStream& stream) {
  std::string order;
  for (const auto& t : stream.tasks) {
    write_site(root, t);
    order += t.site_id + "\n";
  }
  write_text(root / "sites.txt", order);
}

inline TaskStream read_stream(const fs::path& root) {
  if (!fs::exists(root / "sites.txt")) throw Error("dataset " + root.string() + " has no sites.txt");
  TaskStream s;
  for (const auto& id : lines(read_text(root / "sites.txt"))) s.tasks.push_back(read_site(root, id));
  s.validate();
  return s;
}

}  // namespace malcl::io
