#include "dforge/world.hpp"

#include "dforge/image_io.hpp"
#include "dforge/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace dforge::world {

using ad::fail;
using ad::Tensor;
using ordered_json = nlohmann::ordered_json;

namespace {
std::atomic<long> g_underfill_warnings{0};

double& pix(Tensor& img, int c, int y, int x) {
  const int h = img.dim(1), w = img.dim(2);
  return img.data()[(static_cast<size_t>(c) * h + y) * w + x];
}
}  // namespace

const char* class_name(int class_id) {
  switch (class_id) {
    case kLongitudinalCrack: return "longitudinal_crack";
    case kTransverseCrack: return "transverse_crack";
    case kAlligatorCrack: return "alligator_crack";
    case kPothole: return "pothole";
    default: fail("class_name: unknown class id " + std::to_string(class_id));
  }
}

double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return w > 0 && h > 0 ? w * h : 0.0;
}

bool point_in_polygon(const Polygon& poly, double x, double y) {
  if (poly.size() < 3) return false;
  int sign = 0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    const double cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    if (std::fabs(cross) <= 1e-9) continue;  // on the edge counts as inside
    const int s = cross > 0 ? 1 : -1;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return true;
}

bool box_in_polygon(const Polygon& poly, const BoundingBox& box) {
  return point_in_polygon(poly, box.x_min, box.y_min) &&
         point_in_polygon(poly, box.x_max, box.y_min) &&
         point_in_polygon(poly, box.x_min, box.y_max) &&
         point_in_polygon(poly, box.x_max, box.y_max);
}

long underfill_warning_count() { return g_underfill_warnings.load(); }
void reset_underfill_warnings() { g_underfill_warnings.store(0); }

Tensor channels_from_boxes(const std::vector<Annotation>& boxes, int height, int width) {
  Tensor ch = Tensor::zeros({kNumClasses, height, width});
  for (const Annotation& a : boxes) {
    for (int y = std::max(0, static_cast<int>(std::floor(a.box.y_min))); y < height; ++y) {
      const double cy = y + 0.5;
      if (cy < a.box.y_min) continue;
      if (cy >= a.box.y_max) break;
      for (int x = std::max(0, static_cast<int>(std::floor(a.box.x_min))); x < width; ++x) {
        const double cx = x + 0.5;
        if (cx < a.box.x_min) continue;
        if (cx >= a.box.x_max) break;
        ch.data()[(static_cast<size_t>(a.class_id) * height + y) * width + x] = 1.0;
      }
    }
  }
  return ch;
}

namespace {

// Rejection-samples k pairwise-disjoint class-labelled boxes inside the
// polygon; an unplaceable box increments the under-fill counter.
std::vector<Annotation> place_boxes(Rng& rng, const Polygon& poly, const WorldParams& p,
                                    int k) {
  double min_x = 1e9, max_x = -1e9, min_y = 1e9, max_y = -1e9;
  for (const auto& v : poly) {
    min_x = std::min(min_x, v[0]);
    max_x = std::max(max_x, v[0]);
    min_y = std::min(min_y, v[1]);
    max_y = std::max(max_y, v[1]);
  }
  std::vector<Annotation> placed;
  for (int i = 0; i < k; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < p.max_place_attempts && !ok; ++attempt) {
      const double s = rng.uniform(p.size_min, p.size_max);
      const double aspect = rng.uniform(p.aspect_min, p.aspect_max);
      const double w = s * std::sqrt(aspect);
      const double h = s / std::sqrt(aspect);
      if (max_x - min_x < w || max_y - min_y < h) {
        rng.uniform();  // keep the draw count per attempt fixed
        rng.uniform();
        continue;
      }
      const double cx = rng.uniform(min_x + w / 2, max_x - w / 2);
      const double cy = rng.uniform(min_y + h / 2, max_y - h / 2);
      BoundingBox box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
      if (!box_in_polygon(poly, box)) continue;
      bool clash = false;
      for (const Annotation& other : placed) {
        // require a 1px gap so neighbouring defects render separably
        BoundingBox inflated{box.x_min - 1, box.y_min - 1, box.x_max + 1, box.y_max + 1};
        if (intersection_area(inflated, other.box) > 0.0) {
          clash = true;
          break;
        }
      }
      if (clash) continue;
      placed.push_back({box, rng.uniform_int(0, kNumClasses - 1)});
      ok = true;
    }
    if (!ok) ++g_underfill_warnings;
  }
  return placed;
}

void darken(Tensor& img, int x, int y, double amount) {
  const int h = img.dim(1), w = img.dim(2);
  if (x < 0 || x >= w || y < 0 || y >= h) return;
  for (int c = 0; c < 3; ++c) pix(img, c, y, x) -= amount;
}

void lighten(Tensor& img, int x, int y, double amount) { darken(img, x, y, -amount); }

void render_long_crack(Tensor& img, const BoundingBox& b, Rng& rng, double depth) {
  const double w = b.width(), h = b.height();
  const double freq = rng.uniform(1.0, 2.0);
  const double phase = rng.uniform(0.0, 1.0);
  for (int y = static_cast<int>(std::floor(b.y_min)); y + 0.5 < b.y_max; ++y) {
    if (y + 0.5 < b.y_min) continue;
    const double t = (y + 0.5 - b.y_min) / h;
    const double cx = b.x_min + 0.5 + (w - 1.0) *
                          (0.5 + 0.5 * std::sin(6.283185307179586 * (freq * t + phase)));
    for (int x = static_cast<int>(std::floor(cx - 1.5)); x <= cx + 1.5; ++x) {
      const double d = std::fabs(x + 0.5 - cx);
      const double wgt = std::max(0.0, 1.0 - d / 1.5);
      if (x + 0.5 >= b.x_min && x + 0.5 < b.x_max) darken(img, x, y, depth * wgt);
    }
  }
}

void render_trans_crack(Tensor& img, const BoundingBox& b, Rng& rng, double depth) {
  const double w = b.width(), h = b.height();
  const double freq = rng.uniform(1.0, 2.0);
  const double phase = rng.uniform(0.0, 1.0);
  for (int x = static_cast<int>(std::floor(b.x_min)); x + 0.5 < b.x_max; ++x) {
    if (x + 0.5 < b.x_min) continue;
    const double t = (x + 0.5 - b.x_min) / w;
    const double cy = b.y_min + 0.5 + (h - 1.0) *
                          (0.5 + 0.5 * std::sin(6.283185307179586 * (freq * t + phase)));
    for (int y = static_cast<int>(std::floor(cy - 1.5)); y <= cy + 1.5; ++y) {
      const double d = std::fabs(y + 0.5 - cy);
      const double wgt = std::max(0.0, 1.0 - d / 1.5);
      if (y + 0.5 >= b.y_min && y + 0.5 < b.y_max) darken(img, x, y, depth * wgt);
    }
  }
}

void render_alligator(Tensor& img, const BoundingBox& b, Rng& rng, double depth) {
  const double spacing = rng.uniform(3.0, 4.5);
  const double offset = rng.uniform(0.0, spacing);
  for (int y = static_cast<int>(std::floor(b.y_min)); y + 0.5 < b.y_max; ++y) {
    if (y + 0.5 < b.y_min) continue;
    for (int x = static_cast<int>(std::floor(b.x_min)); x + 0.5 < b.x_max; ++x) {
      if (x + 0.5 < b.x_min) continue;
      const double u = x + 0.5 - b.x_min, v = y + 0.5 - b.y_min;
      const double d1 = std::fmod(u + v + offset, spacing);
      const double d2 = std::fmod(u - v + offset + 64.0 * spacing, spacing);
      double wgt = 0.3;  // base darkening over the fatigued region
      if (d1 < 1.3 || d2 < 1.3) wgt = 1.0;
      darken(img, x, y, depth * wgt * 0.8);
    }
  }
}

void render_pothole(Tensor& img, const BoundingBox& b, Rng& rng, double depth) {
  const double rx = std::max(1.0, b.width() / 2 - 0.5);
  const double ry = std::max(1.0, b.height() / 2 - 0.5);
  const double ecc = rng.uniform(0.9, 1.0);  // slight irregularity
  for (int y = static_cast<int>(std::floor(b.y_min)); y + 0.5 < b.y_max; ++y) {
    if (y + 0.5 < b.y_min) continue;
    for (int x = static_cast<int>(std::floor(b.x_min)); x + 0.5 < b.x_max; ++x) {
      if (x + 0.5 < b.x_min) continue;
      const double dx = (x + 0.5 - b.cx()) / (rx * ecc);
      const double dy = (y + 0.5 - b.cy()) / ry;
      const double r2 = dx * dx + dy * dy;
      if (r2 <= 1.0) darken(img, x, y, depth * (1.1 - 0.35 * r2));
      const double r = std::sqrt(r2);
      if (r >= 0.8 && r <= 1.05 && y + 0.5 < b.cy())
        lighten(img, x, y, 0.10 * (1.0 - std::fabs(r - 0.92) / 0.13));
    }
  }
}

void render_defect(Tensor& img, const Annotation& a, Rng& rng, double depth,
                   double road_shade) {
  // paint (lane markings) is worn away where the surface is damaged
  for (int y = static_cast<int>(std::floor(a.box.y_min)); y + 0.5 < a.box.y_max; ++y) {
    if (y + 0.5 < a.box.y_min) continue;
    for (int x = static_cast<int>(std::floor(a.box.x_min)); x + 0.5 < a.box.x_max; ++x) {
      if (x + 0.5 < a.box.x_min) continue;
      for (int c = 0; c < 3; ++c)
        pix(img, c, y, x) = std::min(pix(img, c, y, x), road_shade + 0.03);
    }
  }
  switch (a.class_id) {
    case kLongitudinalCrack: render_long_crack(img, a.box, rng, depth); break;
    case kTransverseCrack: render_trans_crack(img, a.box, rng, depth); break;
    case kAlligatorCrack: render_alligator(img, a.box, rng, depth); break;
    case kPothole: render_pothole(img, a.box, rng, depth); break;
    default: fail("render_defect: unknown class " + std::to_string(a.class_id));
  }
}

}  // namespace

SceneSample render_scene(uint64_t seed, bool with_defects, const WorldParams& params) {
  if (params.image_size < 32)
    fail("render_scene: image_size must be >= 32, got " + std::to_string(params.image_size));
  const int hw = params.image_size;
  Rng rng(Rng::mix(seed, 0x5ce9e));

  SceneSample s;
  s.seed = seed;

  // perspective trapezoid road
  const double top_y = hw * rng.uniform(0.26, 0.40);
  const double bl = hw * rng.uniform(0.02, 0.10);
  const double br = hw * rng.uniform(0.90, 0.98);
  const double tl = hw * rng.uniform(0.26, 0.36);
  const double tr = hw * rng.uniform(0.64, 0.74);
  s.drivable = {{bl, static_cast<double>(hw)},
                {br, static_cast<double>(hw)},
                {tr, top_y},
                {tl, top_y}};

  const double road = rng.uniform(0.46, 0.60);
  const double sh_r = rng.uniform(0.26, 0.34);
  const double sh_g = sh_r + rng.uniform(0.02, 0.08);
  const double sh_b = sh_r - rng.uniform(0.02, 0.06);
  const double band_freq = rng.uniform(0.5, 2.0) / hw;
  const double band_phase = rng.uniform(0.0, 6.283);

  s.image = Tensor::zeros({3, hw, hw});
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      const bool on_road = point_in_polygon(s.drivable, x + 0.5, y + 0.5);
      const double grain = rng.uniform(-params.noise_amp, params.noise_amp);
      const double band = 0.015 * std::sin(6.283 * band_freq * (x + 2.0 * y) + band_phase);
      if (on_road) {
        const double shade = road - 0.05 * (1.0 - static_cast<double>(y) / hw);
        for (int c = 0; c < 3; ++c) pix(s.image, c, y, x) = shade + grain + band;
      } else {
        pix(s.image, 0, y, x) = sh_r + grain;
        pix(s.image, 1, y, x) = sh_g + grain + band;
        pix(s.image, 2, y, x) = sh_b + grain;
      }
    }
  }

  // dashed center lane marking
  const double dash = rng.uniform(5.0, 9.0);
  const double lane_tone = rng.uniform(0.72, 0.82);
  for (int y = static_cast<int>(top_y); y < hw; ++y) {
    const double t = (y - top_y) / (hw - top_y);
    const double lx = tl + (bl - tl) * t;
    const double rx = tr + (br - tr) * t;
    const double cx = 0.5 * (lx + rx);
    if (std::fmod(static_cast<double>(y), dash * 2.0) >= dash) continue;
    for (int x = static_cast<int>(cx - 1.0); x <= cx + 1.0; ++x) {
      if (x < 0 || x >= hw) continue;
      pix(s.image, 0, y, x) = lane_tone;
      pix(s.image, 1, y, x) = lane_tone - 0.04;
      pix(s.image, 2, y, x) = lane_tone - 0.25;
    }
  }

  if (with_defects) {
    const int k = rng.uniform_int(params.min_defects, params.max_defects);
    s.annotations = place_boxes(rng, s.drivable, params, k);
    for (const Annotation& a : s.annotations)
      render_defect(s.image, a, rng, rng.uniform(params.contrast_min, params.contrast_max),
                    road);
  }

  // keep pixel values strictly inside (0,1); downstream logit-space skips
  // rely on this head-room
  for (int i = 0; i < s.image.numel(); ++i)
    s.image.data()[i] = std::clamp(s.image.data()[i], 0.02, 0.98);
  return s;
}

DefectMask sample_mask(const Polygon& drivable, const WorldParams& params, uint64_t seed) {
  if (drivable.size() < 3) fail("sample_mask: degenerate drivable polygon");
  Rng rng(Rng::mix(seed, 0x3a5c));
  const int k = rng.uniform_int(params.min_defects, params.max_defects);
  DefectMask m;
  m.boxes = place_boxes(rng, drivable, params, k);
  m.channels = channels_from_boxes(m.boxes, params.image_size, params.image_size);
  return m;
}

Tensor crop_patches(const Tensor& image, const std::vector<BoundingBox>& boxes, int patch) {
  if (image.shape().size() != 3)
    fail("crop_patches: expected [C,H,W] image, got " + ad::shape_str(image.shape()));
  if (patch < 8) fail("crop_patches: patch size must be >= 8, got " + std::to_string(patch));
  const int ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int k = static_cast<int>(boxes.size());
  for (const BoundingBox& b : boxes)
    if (b.x_min < 0 || b.y_min < 0 || b.x_max > w || b.y_max > h || b.x_min >= b.x_max ||
        b.y_min >= b.y_max)
      fail("crop_patches: box outside image bounds");

  const bool rec = ad::Tape::active() && image.requires_grad();
  Tensor out = rec ? ad::make_interior({k, ch, patch, patch})
                   : Tensor::zeros({k, ch, patch, patch});

  // bilinear sample positions and weights, reused by the backward pass
  struct Tap {
    int x0, x1, y0, y1;
    double fx, fy;
  };
  auto taps = std::make_shared<std::vector<Tap>>(static_cast<size_t>(k) * patch * patch);
  for (int i = 0; i < k; ++i) {
    const BoundingBox& b = boxes[static_cast<size_t>(i)];
    for (int py = 0; py < patch; ++py)
      for (int px = 0; px < patch; ++px) {
        const double u = b.x_min + (px + 0.5) * b.width() / patch - 0.5;
        const double v = b.y_min + (py + 0.5) * b.height() / patch - 0.5;
        const int xf = static_cast<int>(std::floor(u));
        const int yf = static_cast<int>(std::floor(v));
        Tap& t = (*taps)[(static_cast<size_t>(i) * patch + py) * patch + px];
        t.fx = u - xf;
        t.fy = v - yf;
        t.x0 = std::clamp(xf, 0, w - 1);
        t.x1 = std::clamp(xf + 1, 0, w - 1);
        t.y0 = std::clamp(yf, 0, h - 1);
        t.y1 = std::clamp(yf + 1, 0, h - 1);
      }
  }

  const double* src = image.data();
  for (int i = 0; i < k; ++i)
    for (int c = 0; c < ch; ++c)
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px) {
          const Tap& t = (*taps)[(static_cast<size_t>(i) * patch + py) * patch + px];
          const double* plane = src + static_cast<size_t>(c) * h * w;
          const double v00 = plane[t.y0 * w + t.x0], v01 = plane[t.y0 * w + t.x1];
          const double v10 = plane[t.y1 * w + t.x0], v11 = plane[t.y1 * w + t.x1];
          out.data()[((static_cast<size_t>(i) * ch + c) * patch + py) * patch + px] =
              (1 - t.fy) * ((1 - t.fx) * v00 + t.fx * v01) +
              t.fy * ((1 - t.fx) * v10 + t.fx * v11);
        }

  if (rec) {
    ad::Tape::active()->record([=]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& gi = const_cast<Tensor&>(image).grad();
      for (int i = 0; i < k; ++i)
        for (int c = 0; c < ch; ++c)
          for (int py = 0; py < patch; ++py)
            for (int px = 0; px < patch; ++px) {
              const Tap& t = (*taps)[(static_cast<size_t>(i) * patch + py) * patch + px];
              const double g =
                  go[((static_cast<size_t>(i) * ch + c) * patch + py) * patch + px];
              double* plane = gi.data() + static_cast<size_t>(c) * h * w;
              plane[t.y0 * w + t.x0] += g * (1 - t.fy) * (1 - t.fx);
              plane[t.y0 * w + t.x1] += g * (1 - t.fy) * t.fx;
              plane[t.y1 * w + t.x0] += g * t.fy * (1 - t.fx);
              plane[t.y1 * w + t.x1] += g * t.fy * t.fx;
            }
    });
  }
  return out;
}

namespace {

ordered_json params_to_json(const WorldParams& p) {
  return ordered_json{{"image_size", p.image_size},
                      {"min_defects", p.min_defects},
                      {"max_defects", p.max_defects},
                      {"size_min", p.size_min},
                      {"size_max", p.size_max},
                      {"aspect_min", p.aspect_min},
                      {"aspect_max", p.aspect_max},
                      {"noise_amp", p.noise_amp},
                      {"contrast_min", p.contrast_min},
                      {"contrast_max", p.contrast_max},
                      {"max_place_attempts", p.max_place_attempts}};
}

WorldParams params_from_json(const ordered_json& j) {
  WorldParams p;
  p.image_size = j.at("image_size");
  p.min_defects = j.at("min_defects");
  p.max_defects = j.at("max_defects");
  p.size_min = j.at("size_min");
  p.size_max = j.at("size_max");
  p.aspect_min = j.at("aspect_min");
  p.aspect_max = j.at("aspect_max");
  p.noise_amp = j.at("noise_amp");
  p.contrast_min = j.at("contrast_min");
  p.contrast_max = j.at("contrast_max");
  p.max_place_attempts = j.at("max_place_attempts");
  return p;
}

}  // namespace

void write_dataset(const std::string& dir, const WorldParams& params,
                   const std::vector<SceneSample>& samples) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir + "/images", ec);
  if (ec) fail("write_dataset: cannot create '" + dir + "': " + ec.message());

  ordered_json manifest;
  manifest["version"] = 1;
  manifest["world"] = params_to_json(params);
  manifest["samples"] = ordered_json::array();
  for (const SceneSample& s : samples) {
    write_png(dir + "/images/" + s.id + ".png", s.image);
    ordered_json js;
    js["id"] = s.id;
    js["split"] = s.split;
    js["seed"] = s.seed;
    js["provenance"] = s.provenance;
    js["drivable"] = ordered_json::array();
    for (const auto& v : s.drivable) js["drivable"].push_back({v[0], v[1]});
    js["annotations"] = ordered_json::array();
    for (const Annotation& a : s.annotations)
      js["annotations"].push_back(ordered_json{{"class_id", a.class_id},
                                               {"x_min", a.box.x_min},
                                               {"y_min", a.box.y_min},
                                               {"x_max", a.box.x_max},
                                               {"y_max", a.box.y_max}});
    manifest["samples"].push_back(std::move(js));
  }
  std::ofstream os(dir + "/manifest.json");
  if (!os) fail("write_dataset: cannot write manifest in '" + dir + "'");
  os << manifest.dump(2) << "\n";
}

void make_dataset(const std::string& dir, int n_clean, int n_defected, uint64_t seed,
                  const WorldParams& params) {
  if (n_clean < 0 || n_defected < 0) fail("make_dataset: negative sample count");
  std::vector<SceneSample> samples;
  samples.reserve(static_cast<size_t>(n_clean + n_defected));
  for (int i = 0; i < n_clean + n_defected; ++i) {
    const uint64_t sample_seed = Rng::mix(seed, static_cast<uint64_t>(i));
    SceneSample s = render_scene(sample_seed, i >= n_clean, params);
    char id[16];
    std::snprintf(id, sizeof(id), "%06d", i);
    s.id = id;
    const uint64_t h = Rng::mix(sample_seed, 0xdeed) % 100;
    s.split = h < 80 ? "train" : (h < 90 ? "val" : "test");
    samples.push_back(std::move(s));
  }
  write_dataset(dir, params, samples);
}

Dataset Dataset::load(const std::string& dir, bool load_images) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) fail("dataset: cannot open '" + dir + "/manifest.json'");
  ordered_json manifest = ordered_json::parse(is);

  Dataset d;
  d.params = params_from_json(manifest.at("world"));
  for (const auto& js : manifest.at("samples")) {
    SceneSample s;
    s.id = js.at("id");
    s.split = js.at("split");
    s.seed = js.at("seed");
    s.provenance = js.value("provenance", "real");
    for (const auto& v : js.at("drivable"))
      s.drivable.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
    for (const auto& a : js.at("annotations")) {
      Annotation ann;
      ann.class_id = a.at("class_id");
      ann.box = {a.at("x_min"), a.at("y_min"), a.at("x_max"), a.at("y_max")};
      s.annotations.push_back(ann);
    }
    if (load_images) s.image = read_png(dir + "/images/" + s.id + ".png");
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::vector<int> Dataset::indices(const std::string& split, bool defected) const {
  std::vector<int> out;
  for (size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split && samples[i].is_clean() != defected)
      out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace dforge::world
