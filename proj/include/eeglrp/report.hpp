#pragma once

#include <string>
#include <vector>

#include "eeglrp/lrp.hpp"
#include "eeglrp/signal.hpp"

namespace eeglrp {

/// Dataset-level aggregate of relevance maps in the shape of one input window.
struct AggregatePattern {
  Tensor signed_map;    // elementwise mean of maps
  Tensor absolute_map;  // elementwise mean of |maps|
  int n_contributing_maps = 0;
  Montage montage;
  std::string task, configuration;
  uint64_t seed = 0;
};

struct SpatialAggregate {
  std::vector<double> signed_values;    // length n_channels
  std::vector<double> absolute_values;
};

struct TemporalAggregate {
  std::vector<double> signed_values;    // length t_in
  std::vector<double> absolute_values;
};

/// Elementwise mean across every stored relevance map (and of their absolute
/// values) over all attribution results.
AggregatePattern aggregate(const std::vector<AttributionResult>& results, const Montage& montage);

SpatialAggregate spatial_aggregate(const AggregatePattern& p);   // mean across time
TemporalAggregate temporal_aggregate(const AggregatePattern& p); // mean across channels

/// Fraction of absolute spatial relevance on the planted channels; in [0,1].
/// Uniform relevance gives planted/n_channels. `degenerate` is set when the
/// aggregate is identically zero (score defined as 0).
double shortcut_score(const SpatialAggregate& sa, const std::vector<int>& planted_channels,
                      bool* degenerate = nullptr);

// ---- rendering --------------------------------------------------------------

struct RenderOptions {
  bool electrode_labels = true;
  bool channel_labels = true;  // heatmap row labels
  int scalp_grid = 256;        // rasterization grid for the Voronoi cells
};

/// Index of the electrode whose Voronoi cell contains (x, y) on the unit disc.
int scalp_cell_index(double x, double y, const Montage& montage);

/// Head-outline disc with one flat-colored Voronoi cell per electrode.
/// Diverging scale about 0 for signed input, sequential scale otherwise.
std::string render_scalp(const std::vector<double>& values, const Montage& montage,
                         bool signed_scale, const RenderOptions& opts = {});

/// Polyline of a temporal aggregate with a seconds axis.
std::string render_temporal(const std::vector<double>& values, double sample_rate,
                            const RenderOptions& opts = {});

/// Channels x time heatmap in montage order.
std::string render_heatmap(const Tensor& map, const Montage& montage, bool signed_scale,
                           const RenderOptions& opts = {});

}  // namespace eeglrp
