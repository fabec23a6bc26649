// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#include "svdseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "svdseg/png_io.hpp"

namespace svdseg {

namespace fs = std::filesystem;

std::string domain_name(Domain d) { return d == Domain::kSource ? "source" : "target"; }

// ---------------------------------------------------------------------------
// LabelMap
// ---------------------------------------------------------------------------

bool LabelMap::contains(const std::string& name) const {
  return std::any_of(entries.begin(), entries.end(),
                     [&](const auto& e) { return e.first == name; });
}

std::vector<std::string> LabelMap::names() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.first);
  return out;
}

LabelMap LabelMap::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open label map: " + file.string());
  LabelMap map;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("malformed label map line (expected name<TAB>id) in " + file.string());
    }
    map.entries.emplace_back(line.substr(0, tab), std::stoi(line.substr(tab + 1)));
  }
  if (map.entries.empty()) throw DataError("empty label map: " + file.string());
  return map;
}

void LabelMap::save(const fs::path& file) const {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write label map: " + file.string());
  for (const auto& [name, id] : entries) out << name << '\t' << id << '\n';
}

LabelMap shapes_label_map() {
  return LabelMap{{{"circle", 0}, {"square", 1}, {"triangle", 2}, {"ring", 3}}};
}

GenSpec GenSpec::source_default() {
  GenSpec s;
  s.domain = Domain::kSource;
  s.shift = DomainShiftSpec{false, 0.02, 0.08, 0.0};
  return s;
}

GenSpec GenSpec::target_default() {
  GenSpec s;
  s.domain = Domain::kTarget;
  s.shift = DomainShiftSpec{true, 0.06, 0.15, 0.3};
  return s;
}

// ---------------------------------------------------------------------------
// Shape rasterization
// ---------------------------------------------------------------------------

namespace {

struct Shape {
  int cls = 0;       // index into the label map
  double cx = 0, cy = 0, r = 0;
  double angle = 0;  // rotation
  double ax = 1, ay = 1;   // ellipse axis scales (circle/ring)
  double inner = 0.55;     // ring inner radius fraction
  double intensity = 0.8;
};

// Class-specific intensity bands (disjoint under the default jitter/noise),
// the desk-scale analog of tissue types with characteristic appearance.
// Geometry still varies per shape; the domain shift may invert or skew the
// bands, which is exactly what adaptation has to absorb.
constexpr double kClassIntensity[4] = {0.80, 0.62, 0.45, 0.97};

bool inside_shape(const Shape& s, double px, double py) {
  const double dx = px - s.cx;
  const double dy = py - s.cy;
  const double ca = std::cos(-s.angle), sa = std::sin(-s.angle);
  const double x = dx * ca - dy * sa;
  const double y = dx * sa + dy * ca;
  switch (s.cls) {
    case 0: {  // circle (possibly squashed into an ellipse)
      const double a = s.r * s.ax, b = s.r * s.ay;
      return (x * x) / (a * a) + (y * y) / (b * b) <= 1.0;
    }
    case 1: {  // square with half-diagonal r
      const double h = s.r / std::sqrt(2.0);
      return std::abs(x) <= h && std::abs(y) <= h;
    }
    case 2: {  // equilateral triangle inscribed in radius r, apex up
      double vx[3], vy[3];
      for (int i = 0; i < 3; ++i) {
        const double a = -M_PI / 2 + i * 2.0 * M_PI / 3.0;
        vx[i] = s.r * std::cos(a);
        vy[i] = s.r * std::sin(a);
      }
      double sign = 0;
      for (int i = 0; i < 3; ++i) {
        const int j = (i + 1) % 3;
        const double cross = (vx[j] - vx[i]) * (y - vy[i]) - (vy[j] - vy[i]) * (x - vx[i]);
        if (cross != 0) {
          if (sign == 0) {
            sign = cross > 0 ? 1 : -1;
          } else if ((cross > 0 ? 1 : -1) != sign) {
            return false;
          }
        }
      }
      return true;
    }
    case 3: {  // ring
      const double a = s.r * s.ax, b = s.r * s.ay;
      const double outer = (x * x) / (a * a) + (y * y) / (b * b);
      const double ia = a * s.inner, ib = b * s.inner;
      const double inner = (x * x) / (ia * ia) + (y * y) / (ib * ib);
      return outer <= 1.0 && inner > 1.0;
    }
    default:
      return false;
  }
}

double bounding_radius(const Shape& s) { return s.r * std::max(s.ax, s.ay); }

}  // namespace

void apply_shift(SegSample& sample, const DomainShiftSpec& shift, std::mt19937_64& rng) {
  Image& img = sample.image;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  if (shift.invert) {
    for (double& v : img.v) v = 1.0 - v;
  }

  if (shift.grad_amp > 0) {
    const double theta = unit(rng) * 2.0 * M_PI;
    const double gx = std::cos(theta), gy = std::sin(theta);
    double lo = 0, hi = 0;
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        const double v = gx * x + gy * y;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    const double span = (hi > lo) ? hi - lo : 1.0;
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        const double plane = (gx * x + gy * y - lo) / span;
        const double delta = shift.grad_amp * plane;
        for (int ch = 0; ch < img.c; ++ch) img.at(y, x, ch) += delta;
      }
    }
  }

  if (shift.noise_amp > 0) {
    std::uniform_real_distribution<double> noise(-shift.noise_amp, shift.noise_amp);
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        const double delta = noise(rng);  // same draw for every channel
        for (int ch = 0; ch < img.c; ++ch) img.at(y, x, ch) += delta;
      }
    }
  }

  for (double& v : img.v) v = std::clamp(v, 0.0, 1.0);
}

Dataset generate(const GenSpec& spec, int n_images, std::uint64_t seed) {
  if (n_images < 1) throw DataError("generate: n_images must be >= 1");
  if (spec.min_shapes < 1 || spec.max_shapes < spec.min_shapes) {
    throw DataError("generate: invalid shape count range");
  }

  Dataset ds;
  ds.labels = shapes_label_map();
  const int n_classes = static_cast<int>(ds.labels.entries.size());
  if (spec.max_shapes > n_classes) throw DataError("generate: max_shapes exceeds class count");

  const int size = spec.image_size;
  const double deform = spec.domain == Domain::kTarget ? spec.shift.deform : 0.0;

  for (int i = 0; i < n_images; ++i) {
    std::mt19937_64 rng = make_rng(seed, "sample", static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Pick how many / which classes appear.
    std::uniform_int_distribution<int> count_dist(spec.min_shapes, spec.max_shapes);
    const int n_shapes = count_dist(rng);
    std::vector<int> classes(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) classes[static_cast<std::size_t>(c)] = c;
    std::shuffle(classes.begin(), classes.end(), rng);
    classes.resize(static_cast<std::size_t>(n_shapes));

    // Place non-overlapping shapes with bounded retries. A failed shape
    // scraps the whole layout and tries again, so earlier placements cannot
    // paint the sampler into a corner; both loops stay bounded.
    constexpr int kLayoutAttempts = 20;
    std::vector<Shape> shapes;
    bool layout_ok = false;
    for (int layout = 0; layout < kLayoutAttempts && !layout_ok; ++layout) {
      shapes.clear();
      layout_ok = true;
      for (int cls : classes) {
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_retries; ++attempt) {
          Shape s;
          s.cls = cls;
          s.r = (spec.min_radius_frac + unit(rng) * (spec.max_radius_frac - spec.min_radius_frac)) *
                size;
          if (deform > 0) {
            s.ax = 1.0 + 0.3 * deform * (2.0 * unit(rng) - 1.0);
            s.ay = 1.0 + 0.3 * deform * (2.0 * unit(rng) - 1.0);
            s.angle = deform * unit(rng) * M_PI;
            s.inner = std::clamp(0.55 + 0.15 * deform * (2.0 * unit(rng) - 1.0), 0.3, 0.8);
          }
          const double rb = bounding_radius(s) + 2.0;
          if (2 * rb >= size) continue;
          s.cx = rb + unit(rng) * (size - 2 * rb);
          s.cy = rb + unit(rng) * (size - 2 * rb);
          s.intensity = kClassIntensity[cls] + 0.05 * (2.0 * unit(rng) - 1.0);
          bool collides = false;
          for (const Shape& other : shapes) {
            const double dx = s.cx - other.cx, dy = s.cy - other.cy;
            const double min_dist = bounding_radius(s) + bounding_radius(other) + 3.0;
            if (dx * dx + dy * dy < min_dist * min_dist) {
              collides = true;
              break;
            }
          }
          if (!collides) {
            shapes.push_back(s);
            placed = true;
            break;
          }
        }
        if (!placed) {
          layout_ok = false;
          break;
        }
      }
    }
    if (!layout_ok) {
      throw DataError("generate: shape placement infeasible after " +
                      std::to_string(spec.max_retries) + " retries (image " + std::to_string(i) +
                      ")");
    }

    // Rasterize image and per-class masks.
    Image base(size, size, spec.channels);
    for (double& v : base.v) v = 0.12;
    std::vector<Mask> class_masks(static_cast<std::size_t>(n_classes), Mask(size, size));
    for (const Shape& s : shapes) {
      const double rb = bounding_radius(s) + 1.0;
      const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - rb)));
      const int y1 = std::min(size - 1, static_cast<int>(std::ceil(s.cy + rb)));
      const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - rb)));
      const int x1 = std::min(size - 1, static_cast<int>(std::ceil(s.cx + rb)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          if (inside_shape(s, x + 0.5, y + 0.5)) {
            class_masks[static_cast<std::size_t>(s.cls)].at(y, x) = 1;
            for (int ch = 0; ch < spec.channels; ++ch) base.at(y, x, ch) = s.intensity;
          }
        }
      }
    }

    char id[16];
    std::snprintf(id, sizeof(id), "img%04d", i);

    SegSample proto;
    proto.image = std::move(base);
    proto.sample_id = id;
    proto.domain = spec.domain;
    apply_shift(proto, spec.shift, rng);

    // One sample per label; absent classes keep their blank mask.
    for (int c = 0; c < n_classes; ++c) {
      SegSample s;
      s.image = proto.image;
      s.sample_id = proto.sample_id;
      s.domain = proto.domain;
      s.prompt = ds.labels.entries[static_cast<std::size_t>(c)].first;
      s.mask = class_masks[static_cast<std::size_t>(c)];
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk round trip
// ---------------------------------------------------------------------------

void write_dataset(const Dataset& ds, const fs::path& root) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  ds.labels.save(root / "labels.tsv");

  for (const SegSample& s : ds.samples) {
    const fs::path img_file = root / "images" / (s.sample_id + ".png");
    if (!fs::exists(img_file)) {
      Gray8 g;
      g.h = s.image.h;
      g.w = s.image.w;
      g.v.resize(static_cast<std::size_t>(g.h) * g.w);
      for (int y = 0; y < g.h; ++y) {
        for (int x = 0; x < g.w; ++x) {
          g.v[static_cast<std::size_t>(y) * g.w + x] =
              static_cast<std::uint8_t>(std::lround(std::clamp(s.image.at(y, x, 0), 0.0, 1.0) * 255.0));
        }
      }
      write_gray8_png(img_file, g);
    }
    fs::create_directories(root / "masks" / s.sample_id);
    if (!s.mask.blank()) {
      Gray8 g;
      g.h = s.mask.h;
      g.w = s.mask.w;
      g.v.resize(static_cast<std::size_t>(g.h) * g.w);
      for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] = s.mask.v[i] ? 255 : 0;
      write_gray8_png(root / "masks" / s.sample_id / (s.prompt + ".png"), g);
    }
  }
}

Dataset ingest(const fs::path& root) {
  const fs::path images_dir = root / "images";
  if (!fs::is_directory(images_dir)) {
    throw DataError("ingest: missing images directory under " + root.string());
  }
  Dataset ds;
  ds.labels = LabelMap::load(root / "labels.tsv");

  std::vector<fs::path> image_files;
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    if (entry.path().extension() == ".png") image_files.push_back(entry.path());
  }
  std::sort(image_files.begin(), image_files.end());
  if (image_files.empty()) throw DataError("ingest: no images under " + images_dir.string());

  for (const fs::path& img_file : image_files) {
    const std::string id = img_file.stem().string();
    const fs::path mask_dir = root / "masks" / id;
    if (!fs::is_directory(mask_dir)) {
      throw DataError("ingest: image " + id + " has no mask directory " + mask_dir.string());
    }
    const Gray8 g = read_gray8_png(img_file);
    Image img(g.h, g.w, 3);
    for (int y = 0; y < g.h; ++y) {
      for (int x = 0; x < g.w; ++x) {
        const double v = g.v[static_cast<std::size_t>(y) * g.w + x] / 255.0;
        for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = v;
      }
    }

    for (const auto& [name, cls_id] : ds.labels.entries) {
      SegSample s;
      s.image = img;
      s.sample_id = id;
      s.prompt = name;
      s.domain = Domain::kSource;
      const fs::path mask_file = mask_dir / (name + ".png");
      if (fs::exists(mask_file)) {
        const Gray8 mg = read_gray8_png(mask_file);
        if (mg.h != g.h || mg.w != g.w) {
          throw DataError("ingest: mask size mismatch for " + mask_file.string());
        }
        s.mask = Mask(mg.h, mg.w);
        for (std::size_t i = 0; i < mg.v.size(); ++i) s.mask.v[i] = mg.v[i] >= 128 ? 1 : 0;
      } else {
        s.mask = Mask(g.h, g.w);  // blank: documented convention for absent classes
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace svdseg
