#include "eeglrp/report.hpp"

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <set>

namespace eeglrp {

namespace {

void appendf(std::string& s, const char* fmt, ...) {
  char buf[256];
  va_list args;
  va_start(args, fmt);
  vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  s += buf;
}

struct Rgb {
  double r, g, b;
};

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

std::string to_hex(const Rgb& c) {
  char buf[8];
  snprintf(buf, sizeof(buf), "#%02x%02x%02x",
           static_cast<int>(std::lround(std::clamp(c.r, 0.0, 255.0))),
           static_cast<int>(std::lround(std::clamp(c.g, 0.0, 255.0))),
           static_cast<int>(std::lround(std::clamp(c.b, 0.0, 255.0))));
  return buf;
}

const Rgb kNeg{33, 102, 172};
const Rgb kMid{247, 247, 247};
const Rgb kPos{178, 24, 43};

// diverging about 0 for signed scales, sequential from 0 otherwise
std::string color_of(double v, double vmax, bool signed_scale) {
  if (vmax <= 0.0) return to_hex(kMid);
  if (signed_scale) {
    const double t = std::clamp(v / vmax, -1.0, 1.0);
    return to_hex(t < 0.0 ? lerp(kMid, kNeg, -t) : lerp(kMid, kPos, t));
  }
  const double t = std::clamp(v / vmax, 0.0, 1.0);
  return to_hex(lerp({255, 255, 255}, kPos, t));
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

AggregatePattern aggregate(const std::vector<AttributionResult>& results, const Montage& montage) {
  int n = 0;
  for (const auto& r : results) n += static_cast<int>(r.maps.size());
  if (n == 0) throw InputError("aggregate needs at least one relevance map");
  const Tensor* first = nullptr;
  for (const auto& r : results)
    if (!r.maps.empty()) {
      first = &r.maps.front();
      break;
    }
  AggregatePattern p;
  p.signed_map = Tensor(first->shape());
  p.absolute_map = Tensor(first->shape());
  for (const auto& r : results)
    for (const auto& m : r.maps) {
      if (!m.same_shape(*first)) throw ShapeError("relevance maps of mixed shapes");
      for (int64_t i = 0; i < m.numel(); ++i) {
        p.signed_map[i] += m[i];
        p.absolute_map[i] += std::abs(m[i]);
      }
    }
  for (int64_t i = 0; i < p.signed_map.numel(); ++i) {
    p.signed_map[i] /= n;
    p.absolute_map[i] /= n;
  }
  p.n_contributing_maps = n;
  p.montage = montage;
  return p;
}

SpatialAggregate spatial_aggregate(const AggregatePattern& p) {
  const int c = p.signed_map.dim(0), t = p.signed_map.dim(1);
  SpatialAggregate sa;
  sa.signed_values.resize(static_cast<size_t>(c));
  sa.absolute_values.resize(static_cast<size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0, a = 0.0;
    for (int i = 0; i < t; ++i) {
      s += p.signed_map.at(ch, i);
      a += p.absolute_map.at(ch, i);
    }
    sa.signed_values[static_cast<size_t>(ch)] = s / t;
    sa.absolute_values[static_cast<size_t>(ch)] = a / t;
  }
  return sa;
}

TemporalAggregate temporal_aggregate(const AggregatePattern& p) {
  const int c = p.signed_map.dim(0), t = p.signed_map.dim(1);
  TemporalAggregate ta;
  ta.signed_values.resize(static_cast<size_t>(t));
  ta.absolute_values.resize(static_cast<size_t>(t));
  for (int i = 0; i < t; ++i) {
    double s = 0.0, a = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      s += p.signed_map.at(ch, i);
      a += p.absolute_map.at(ch, i);
    }
    ta.signed_values[static_cast<size_t>(i)] = s / c;
    ta.absolute_values[static_cast<size_t>(i)] = a / c;
  }
  return ta;
}

double shortcut_score(const SpatialAggregate& sa, const std::vector<int>& planted_channels,
                      bool* degenerate) {
  if (planted_channels.empty()) throw InputError("planted channel set must be nonempty");
  const int c = static_cast<int>(sa.absolute_values.size());
  double total = 0.0, planted = 0.0;
  for (double v : sa.absolute_values) total += std::abs(v);
  for (int ch : planted_channels) {
    if (ch < 0 || ch >= c) throw InputError("planted channel index out of montage");
    planted += std::abs(sa.absolute_values[static_cast<size_t>(ch)]);
  }
  if (degenerate) *degenerate = (total == 0.0);
  return total == 0.0 ? 0.0 : planted / total;
}

int scalp_cell_index(double x, double y, const Montage& montage) {
  int best = 0;
  double best_d = 1e300;
  for (int e = 0; e < montage.size(); ++e) {
    const double dx = x - montage.coords[static_cast<size_t>(e)].first;
    const double dy = y - montage.coords[static_cast<size_t>(e)].second;
    const double d = dx * dx + dy * dy;
    if (d < best_d) {
      best_d = d;
      best = e;
    }
  }
  return best;
}

std::string render_scalp(const std::vector<double>& values, const Montage& montage,
                         bool signed_scale, const RenderOptions& opts) {
  montage.validate();
  if (static_cast<int>(values.size()) != montage.size())
    throw InputError("value count does not match montage");
  std::set<std::pair<double, double>> unique(montage.coords.begin(), montage.coords.end());
  if (static_cast<int>(unique.size()) != montage.size())
    throw InputError("duplicate electrode coordinates");

  const double size = 400.0, cx = 200.0, cy = 200.0, radius = 170.0;
  const int n = opts.scalp_grid;
  const double cell = 2.0 * radius / n;
  const double vmax = max_abs(values);

  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  appendf(svg, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
               "viewBox=\"0 0 %.0f %.0f\">\n", size, size, size, size);

  // one path per electrode built from horizontal pixel runs of its cell
  std::vector<int> row(static_cast<size_t>(n));
  std::vector<std::string> paths(static_cast<size_t>(montage.size()));
  for (int j = 0; j < n; ++j) {
    const double uy = 1.0 - (2.0 * j + 1.0) / n;  // +1 at top
    for (int i = 0; i < n; ++i) {
      const double ux = (2.0 * i + 1.0) / n - 1.0;
      row[static_cast<size_t>(i)] =
          (ux * ux + uy * uy <= 1.0) ? scalp_cell_index(ux, uy, montage) : -1;
    }
    int i = 0;
    while (i < n) {
      if (row[static_cast<size_t>(i)] < 0) {
        ++i;
        continue;
      }
      int e = row[static_cast<size_t>(i)];
      int i2 = i;
      while (i2 + 1 < n && row[static_cast<size_t>(i2 + 1)] == e) ++i2;
      appendf(paths[static_cast<size_t>(e)], "M%.3f %.3f h%.3f v%.3f h-%.3f z",
              cx - radius + i * cell, cy - radius + j * cell, (i2 - i + 1) * cell, cell,
              (i2 - i + 1) * cell);
      i = i2 + 1;
    }
  }
  for (int e = 0; e < montage.size(); ++e) {
    appendf(svg, "<path class=\"cell\" fill=\"%s\" stroke=\"none\" d=\"",
            color_of(values[static_cast<size_t>(e)], vmax, signed_scale).c_str());
    svg += paths[static_cast<size_t>(e)];
    svg += "\"/>\n";
  }

  // head outline and nose marker
  appendf(svg, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"%.1f\" fill=\"none\" stroke=\"black\" "
               "stroke-width=\"2\"/>\n", cx, cy, radius);
  appendf(svg, "<polygon points=\"%.1f,%.1f %.1f,%.1f %.1f,%.1f\" fill=\"none\" "
               "stroke=\"black\" stroke-width=\"2\"/>\n",
          cx - 0.09 * radius, cy - radius + 2.0, cx, cy - 1.10 * radius,
          cx + 0.09 * radius, cy - radius + 2.0);

  for (int e = 0; e < montage.size(); ++e) {
    const double ex = cx + montage.coords[static_cast<size_t>(e)].first * radius;
    const double ey = cy - montage.coords[static_cast<size_t>(e)].second * radius;
    appendf(svg, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"black\"/>\n", ex, ey);
    if (opts.electrode_labels)
      appendf(svg, "<text x=\"%.2f\" y=\"%.2f\" font-size=\"11\" text-anchor=\"middle\" "
                   "font-family=\"sans-serif\">%s</text>\n",
              ex, ey - 5.0, montage.names[static_cast<size_t>(e)].c_str());
  }
  svg += "</svg>\n";
  return svg;
}

std::string render_temporal(const std::vector<double>& values, double sample_rate,
                            const RenderOptions&) {
  if (values.empty()) throw InputError("render_temporal on empty series");
  if (sample_rate <= 0.0) throw InputError("sample rate must be positive");
  const double w = 640.0, h = 240.0, ml = 50.0, mr = 15.0, mt = 15.0, mb = 35.0;
  const double pw = w - ml - mr, ph = h - mt - mb;
  double vmin = values[0], vmax_ = values[0];
  for (double v : values) {
    vmin = std::min(vmin, v);
    vmax_ = std::max(vmax_, v);
  }
  double range = vmax_ - vmin;
  if (range <= 0.0) range = 1.0;

  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  appendf(svg, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
               "viewBox=\"0 0 %.0f %.0f\">\n", w, h, w, h);
  appendf(svg, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" "
               "stroke=\"black\"/>\n", ml, mt, pw, ph);

  svg += "<polyline fill=\"none\" stroke=\"#b2182b\" stroke-width=\"1.2\" points=\"";
  const size_t n = values.size();
  for (size_t i = 0; i < n; ++i) {
    const double x = ml + pw * static_cast<double>(i) / static_cast<double>(n - 1 ? n - 1 : 1);
    const double y = mt + ph * (1.0 - (values[i] - vmin) / range);
    appendf(svg, i ? " %.2f,%.2f" : "%.2f,%.2f", x, y);
  }
  svg += "\"/>\n";

  // seconds axis
  const double dur = static_cast<double>(n) / sample_rate;
  const int ticks = static_cast<int>(std::floor(dur + 1e-9));
  for (int t = 0; t <= ticks; ++t) {
    const double x = ml + pw * (static_cast<double>(t) / dur);
    appendf(svg, "<line x1=\"%.2f\" y1=\"%.1f\" x2=\"%.2f\" y2=\"%.1f\" stroke=\"black\"/>\n",
            x, mt + ph, x, mt + ph + 5.0);
    appendf(svg, "<text x=\"%.2f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\" "
                 "font-family=\"sans-serif\">%d</text>\n", x, mt + ph + 18.0, t);
  }
  appendf(svg, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\" "
               "font-family=\"sans-serif\">s</text>\n", ml + pw / 2.0, h - 5.0);
  svg += "</svg>\n";
  return svg;
}

std::string render_heatmap(const Tensor& map, const Montage& montage, bool signed_scale,
                           const RenderOptions& opts) {
  if (map.rank() != 2) throw ShapeError("heatmap expects a [channels, time] map");
  if (map.dim(0) != montage.size()) throw InputError("map channel count does not match montage");
  const int c = map.dim(0), t = map.dim(1);
  const double ml = opts.channel_labels ? 46.0 : 8.0;
  const double cw = std::max(1.0, 760.0 / t), chh = 22.0;
  const double w = ml + cw * t + 8.0, h = 8.0 + chh * c + 8.0;
  double vmax = 0.0;
  for (int64_t i = 0; i < map.numel(); ++i) vmax = std::max(vmax, std::abs(map[i]));

  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  appendf(svg, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
               "viewBox=\"0 0 %.0f %.0f\">\n", w, h, w, h);
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < t; ++i) {
      appendf(svg, "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\"/>\n",
              ml + cw * i, 8.0 + chh * ch, cw, chh,
              color_of(map.at(ch, i), vmax, signed_scale).c_str());
    }
    if (opts.channel_labels)
      appendf(svg, "<text x=\"%.1f\" y=\"%.2f\" font-size=\"11\" text-anchor=\"end\" "
                   "font-family=\"sans-serif\">%s</text>\n",
              ml - 4.0, 8.0 + chh * ch + chh * 0.7, montage.names[static_cast<size_t>(ch)].c_str());
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace eeglrp
