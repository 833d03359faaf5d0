#pragma once

#include <optional>
#include <vector>

#include "wnet/error.hpp"

namespace wnet {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// An image's head-point annotations, origin top-left, pixel units.
struct HeadAnnotations {
  int image_w = 0;
  int image_h = 0;
  std::vector<Point2> points;
};

/// Dense single-channel raster, row-major doubles.
struct Raster {
  int h = 0;
  int w = 0;
  std::vector<double> values;

  Raster() = default;
  Raster(int h_, int w_, double fill = 0.0)
      : h(h_), w(w_), values(static_cast<std::size_t>(h_) * w_, fill) {}

  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * w + c]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * w + c]; }
  double sum() const;
};

struct MapMeta {
  double sigma = 0.0;
  int window = 0;
  bool adaptive = false;
  double threshold = 0.0;  // reinforcement maps only
};

/// Continuous count density; integrates to the head count.
struct DensityMap : Raster {
  MapMeta meta;
};

/// Binary {0,1} foreground mask.
struct ReinforcementMap : Raster {
  MapMeta meta;
};

/// Gaussian stamp parameters. window must be odd and >= 3.
struct KernelParams {
  double sigma = 4.0;
  int window = 15;
  bool adaptive = false;
  double beta_adapt = 0.3;
  int k_neighbors = 3;

  void validate() const;
};

/// One normalized Gaussian per head, each stamp renormalized so its
/// in-bounds mass is exactly 1 (count conservation at borders).
DensityMap gen_density_fixed(const HeadAnnotations& ann, const KernelParams& params);

/// Mean Euclidean distance from points[i] to its k nearest other points
/// (all others if fewer than k exist). nullopt when there is no other
/// point, which signals the fall-back-to-fixed-sigma condition.
std::optional<double> knn_mean_distance(const std::vector<Point2>& points,
                                        std::size_t i, int k);

/// Per-head sigma_i = beta_adapt * mean kNN distance, clamped to
/// [0.5, 25]; window grows as 2*ceil(3*sigma_i)+1. Single-point images
/// fall back to the fixed params.sigma / params.window.
DensityMap gen_density_adaptive(const HeadAnnotations& ann, const KernelParams& params);

/// Wide un-renormalized Gaussian blur (amplitude 1/(2*pi*sigma^2)),
/// binarized at th: 1 where blur >= th.
ReinforcementMap gen_reinforcement(const HeadAnnotations& ann,
                                   const KernelParams& params_r, double th);

/// 2x2 sum-pooling: preserves total count. Requires even dims.
DensityMap downsample_target_2x(const DensityMap& map);

/// 2x2 max-pooling: preserves the binary value set. Requires even dims.
ReinforcementMap downsample_target_2x(const ReinforcementMap& map);

/// Predicted or ground-truth count: the sum of all values.
double count_from_density(const Raster& map);

}  // namespace wnet
