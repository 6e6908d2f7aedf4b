#pragma once

#include "dforge/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace dforge::world {

// The four defect classes, in id order.
enum DefectClassId : int {
  kLongitudinalCrack = 0,
  kTransverseCrack = 1,
  kAlligatorCrack = 2,
  kPothole = 3,
};
constexpr int kNumClasses = 4;
const char* class_name(int class_id);

struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x_min + x_max); }
  double cy() const { return 0.5 * (y_min + y_max); }
};

double intersection_area(const BoundingBox& a, const BoundingBox& b);

struct Annotation {
  BoundingBox box;
  int class_id = 0;
};

// Convex polygon, vertices in order.
using Polygon = std::vector<std::array<double, 2>>;

bool point_in_polygon(const Polygon& poly, double x, double y);
// All four corners inside (convexity makes this exact containment).
bool box_in_polygon(const Polygon& poly, const BoundingBox& box);

struct WorldParams {
  int image_size = 64;
  int min_defects = 1;
  int max_defects = 4;
  double size_min = 8.0;   // sqrt of box area, pixels
  double size_max = 18.0;
  double aspect_min = 0.5;
  double aspect_max = 2.0;
  double noise_amp = 0.02;
  double contrast_min = 0.18;  // defect darkening depth
  double contrast_max = 0.38;
  int max_place_attempts = 100;
};

struct SceneSample {
  ad::Tensor image;  // [3,H,W] in [0,1]
  std::vector<Annotation> annotations;
  Polygon drivable;
  uint64_t seed = 0;
  std::string id;
  std::string split = "train";
  std::string provenance = "real";

  bool is_clean() const { return annotations.empty(); }
};

struct DefectMask {
  ad::Tensor channels;  // [4,H,W], 1 inside boxes of that class
  std::vector<Annotation> boxes;
};

// Rebuilds the per-class channel tensor from a box list (pixel centers).
ad::Tensor channels_from_boxes(const std::vector<Annotation>& boxes, int height, int width);

// Count of placements that returned fewer boxes than requested (rejection
// sampling ran out of attempts). Reset between experiments if needed.
long underfill_warning_count();
void reset_underfill_warnings();

// Deterministic function of (seed, params). Defects are class-specific dark
// parametric patches whose bounding boxes become the annotations.
SceneSample render_scene(uint64_t seed, bool with_defects, const WorldParams& params);

// Places up to k ~ uniform(min,max) pairwise-disjoint boxes inside the
// polygon, each with a uniformly random class; under-fills after
// max_place_attempts rejected draws per box.
DefectMask sample_mask(const Polygon& drivable, const WorldParams& params, uint64_t seed);

// Crops each box from a [3,H,W] image and bilinearly resizes it to
// [patch,patch]; differentiable back into the source image. k=0 boxes give
// an empty [0,3,P,P] tensor.
ad::Tensor crop_patches(const ad::Tensor& image, const std::vector<BoundingBox>& boxes,
                        int patch);

// Dataset directory: images/{id}.png + manifest.json.
void make_dataset(const std::string& dir, int n_clean, int n_defected, uint64_t seed,
                  const WorldParams& params);

struct Dataset {
  WorldParams params;
  std::vector<SceneSample> samples;

  static Dataset load(const std::string& dir, bool load_images = true);

  std::vector<int> indices(const std::string& split, bool defected) const;
};

// Writes samples (with already-rendered images) in the dataset layout.
void write_dataset(const std::string& dir, const WorldParams& params,
                   const std::vector<SceneSample>& samples);

}  // namespace dforge::world
