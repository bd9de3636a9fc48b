#include "unpairseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "unpairseg/orientation.hpp"

namespace unpairseg {
namespace {

// World position of continuous array index (k, r, c) on grid g.
template <typename T>
std::array<double, 3> world_at(const Grid<T>& g, const std::array<double, 3>& idx) {
  std::array<double, 3> w = g.origin_mm;
  for (int a = 0; a < 3; ++a) {
    const auto dir = letter_direction(g.orientation[static_cast<std::size_t>(2 - a)]);
    for (int x = 0; x < 3; ++x) w[x] += idx[a] * g.spacing_mm[a] * dir[x];
  }
  return w;
}

double source_index(std::int64_t o, double out_spacing, double in_spacing) {
  return (static_cast<double>(o) + 0.5) * out_spacing / in_spacing - 0.5;
}

struct AxisSample {
  std::int64_t i0 = 0;
  std::int64_t i1 = 0;
  double frac = 0.0;
  std::int64_t nearest = 0;
};

std::vector<AxisSample> axis_samples(std::int64_t n_in, std::int64_t n_out, double in_sp, double out_sp) {
  std::vector<AxisSample> out(static_cast<std::size_t>(n_out));
  for (std::int64_t o = 0; o < n_out; ++o) {
    const double x = std::clamp(source_index(o, out_sp, in_sp), 0.0, static_cast<double>(n_in - 1));
    AxisSample s;
    s.i0 = static_cast<std::int64_t>(std::floor(x));
    s.i1 = std::min(s.i0 + 1, n_in - 1);
    s.frac = x - static_cast<double>(s.i0);
    s.nearest = std::min(static_cast<std::int64_t>(std::floor(x + 0.5)), n_in - 1);
    out[static_cast<std::size_t>(o)] = s;
  }
  return out;
}

}  // namespace

void PreprocessConfig::validate() const {
  for (double s : target_spacing_mm) {
    if (!(s > 0.0)) throw InvalidConfigError("target spacing must be positive");
  }
  if (!is_valid_orientation(target_orientation)) throw InvalidOrientationError(target_orientation);
  for (auto c : crop_hw) {
    if (c <= 0 || c % 2 != 0) throw InvalidConfigError("crop size must be positive and even");
  }
  if (!(percentile > 0.0 && percentile < 100.0)) throw InvalidConfigError("percentile must lie in (0, 100)");
  if (!(intensity_range[0] < intensity_range[1])) throw InvalidConfigError("intensity range must be increasing");
}

Shape3 resampled_shape(const Shape3& shape, const Spacing& spacing, const Spacing& target) {
  Shape3 out;
  for (int a = 0; a < 3; ++a) {
    const double n = std::round(static_cast<double>(shape[a]) * spacing[a] / target[a]);
    out[a] = std::max<std::int64_t>(1, static_cast<std::int64_t>(n));
  }
  return out;
}

template <typename T>
Grid<T> resample_to_shape(const Grid<T>& g, const Shape3& out_shape, const Spacing& out_spacing, Interp mode) {
  validate(g);
  Grid<T> out = g.template like<T>();
  out.shape = out_shape;
  out.spacing_mm = out_spacing;
  out.data.assign(out_shape.numel(), T{});
  out.origin_mm = world_at(g, {source_index(0, out_spacing[0], g.spacing_mm[0]),
                               source_index(0, out_spacing[1], g.spacing_mm[1]),
                               source_index(0, out_spacing[2], g.spacing_mm[2])});

  const auto sk = axis_samples(g.shape.slices, out_shape.slices, g.spacing_mm[0], out_spacing[0]);
  const auto sr = axis_samples(g.shape.rows, out_shape.rows, g.spacing_mm[1], out_spacing[1]);
  const auto sc = axis_samples(g.shape.cols, out_shape.cols, g.spacing_mm[2], out_spacing[2]);

  for (std::int64_t k = 0; k < out_shape.slices; ++k) {
    const AxisSample& a = sk[static_cast<std::size_t>(k)];
    for (std::int64_t r = 0; r < out_shape.rows; ++r) {
      const AxisSample& b = sr[static_cast<std::size_t>(r)];
      for (std::int64_t c = 0; c < out_shape.cols; ++c) {
        const AxisSample& d = sc[static_cast<std::size_t>(c)];
        if (mode == Interp::kNearest) {
          out.at(k, r, c) = g.at(a.nearest, b.nearest, d.nearest);
          continue;
        }
        auto lerp = [](double x, double y, double t) { return x + (y - x) * t; };
        const double c00 = lerp(g.at(a.i0, b.i0, d.i0), g.at(a.i0, b.i0, d.i1), d.frac);
        const double c01 = lerp(g.at(a.i0, b.i1, d.i0), g.at(a.i0, b.i1, d.i1), d.frac);
        const double c10 = lerp(g.at(a.i1, b.i0, d.i0), g.at(a.i1, b.i0, d.i1), d.frac);
        const double c11 = lerp(g.at(a.i1, b.i1, d.i0), g.at(a.i1, b.i1, d.i1), d.frac);
        const double v = lerp(lerp(c00, c01, b.frac), lerp(c10, c11, b.frac), a.frac);
        if constexpr (std::is_floating_point_v<T>) {
          out.at(k, r, c) = static_cast<T>(v);
        } else {
          out.at(k, r, c) = static_cast<T>(std::lround(v));
        }
      }
    }
  }
  return out;
}

template Grid<float> resample_to_shape(const Grid<float>&, const Shape3&, const Spacing&, Interp);
template Grid<std::uint8_t> resample_to_shape(const Grid<std::uint8_t>&, const Shape3&, const Spacing&, Interp);

ScaledVolume minmax_scale(const Volume& v, const std::array<double, 2>& range) {
  ScaledVolume out{v, false};
  if (v.data.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(v.data.begin(), v.data.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) {
    std::fill(out.volume.data.begin(), out.volume.data.end(), 0.0f);
    out.constant_input = true;
    return out;
  }
  const double scale = (range[1] - range[0]) / (hi - lo);
  for (float& x : out.volume.data) {
    const double y = range[0] + (static_cast<double>(x) - lo) * scale;
    x = static_cast<float>(std::clamp(y, range[0], range[1]));
  }
  return out;
}

double percentile_of(std::vector<float> values, double p) {
  if (values.empty()) throw InvalidConfigError("percentile of an empty set");
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  double b = a;
  if (hi != lo) b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(hi), values.end());
  return a + (b - a) * (pos - static_cast<double>(lo));
}

PlaneSize percentile_center(const Volume& v, double percentile) {
  const double threshold = percentile_of(v.data, percentile);
  double sum_r = 0.0;
  double sum_c = 0.0;
  std::size_t count = 0;
  for (std::int64_t k = 0; k < v.shape.slices; ++k) {
    for (std::int64_t r = 0; r < v.shape.rows; ++r) {
      for (std::int64_t c = 0; c < v.shape.cols; ++c) {
        if (v.at(k, r, c) > threshold) {
          sum_r += static_cast<double>(r);
          sum_c += static_cast<double>(c);
          ++count;
        }
      }
    }
  }
  if (count == 0) return {v.shape.rows / 2, v.shape.cols / 2};
  return {std::llround(sum_r / static_cast<double>(count)), std::llround(sum_c / static_cast<double>(count))};
}

template <typename T>
Grid<T> center_crop_pad(const Grid<T>& g, const PlaneSize& center, const PlaneSize& crop_hw, T fill) {
  const std::int64_t row0 = center[0] - crop_hw[0] / 2;
  const std::int64_t col0 = center[1] - crop_hw[1] / 2;
  Grid<T> out = g.template like<T>(fill);
  out.shape = {g.shape.slices, crop_hw[0], crop_hw[1]};
  out.data.assign(out.shape.numel(), fill);
  out.origin_mm = world_at(g, {0.0, static_cast<double>(row0), static_cast<double>(col0)});
  const std::int64_t r_lo = std::max<std::int64_t>(0, -row0);
  const std::int64_t r_hi = std::min(crop_hw[0], g.shape.rows - row0);
  const std::int64_t c_lo = std::max<std::int64_t>(0, -col0);
  const std::int64_t c_hi = std::min(crop_hw[1], g.shape.cols - col0);
  for (std::int64_t k = 0; k < g.shape.slices; ++k) {
    for (std::int64_t r = r_lo; r < r_hi; ++r) {
      for (std::int64_t c = c_lo; c < c_hi; ++c) out.at(k, r, c) = g.at(k, r + row0, c + col0);
    }
  }
  return out;
}

template Grid<float> center_crop_pad(const Grid<float>&, const PlaneSize&, const PlaneSize&, float);
template Grid<std::uint8_t> center_crop_pad(const Grid<std::uint8_t>&, const PlaneSize&, const PlaneSize&,
                                            std::uint8_t);

namespace {

nlohmann::json shape_json(const Shape3& s) { return {s.slices, s.rows, s.cols}; }
Shape3 shape_from(const nlohmann::json& j) {
  return {j.at(0).get<std::int64_t>(), j.at(1).get<std::int64_t>(), j.at(2).get<std::int64_t>()};
}

}  // namespace

void to_json(nlohmann::json& j, const CropRecord& r) {
  j = nlohmann::json{
      {"original_shape", shape_json(r.original_shape)},
      {"original_spacing_mm", r.original_spacing},
      {"original_orientation", r.original_orientation},
      {"original_origin_mm", r.original_origin},
      {"working_orientation", r.working_orientation},
      {"reoriented_shape", shape_json(r.reoriented_shape)},
      {"reoriented_spacing_mm", r.reoriented_spacing},
      {"resampled_shape", shape_json(r.resampled_shape)},
      {"working_spacing_mm", r.working_spacing},
      {"crop_origin", {r.row0, r.col0}},
      {"crop_hw", r.crop_hw},
      {"intensity_min", r.intensity_min},
      {"intensity_max", r.intensity_max},
  };
}

void from_json(const nlohmann::json& j, CropRecord& r) {
  r.original_shape = shape_from(j.at("original_shape"));
  j.at("original_spacing_mm").get_to(r.original_spacing);
  j.at("original_orientation").get_to(r.original_orientation);
  j.at("original_origin_mm").get_to(r.original_origin);
  j.at("working_orientation").get_to(r.working_orientation);
  r.reoriented_shape = shape_from(j.at("reoriented_shape"));
  j.at("reoriented_spacing_mm").get_to(r.reoriented_spacing);
  r.resampled_shape = shape_from(j.at("resampled_shape"));
  j.at("working_spacing_mm").get_to(r.working_spacing);
  r.row0 = j.at("crop_origin").at(0).get<std::int64_t>();
  r.col0 = j.at("crop_origin").at(1).get<std::int64_t>();
  j.at("crop_hw").get_to(r.crop_hw);
  j.at("intensity_min").get_to(r.intensity_min);
  j.at("intensity_max").get_to(r.intensity_max);
}

void save_crop_record(const CropRecord& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw UnwritablePathError(path.string());
  out << nlohmann::json(r).dump(2) << '\n';
}

CropRecord load_crop_record(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingCropRecordError("crop record not found: " + path.string());
  try {
    return nlohmann::json::parse(in).get<CropRecord>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeaderError("malformed crop record " + path.string() + ": " + e.what());
  }
}

PreprocessedCase preprocess_case(const Volume& v, const std::optional<LabelMap>& labels,
                                 const PreprocessConfig& cfg) {
  cfg.validate();
  validate(v);
  if (labels) {
    validate_labels(*labels);
    if (!same_geometry(v, *labels, 1e-4)) throw ShapeMismatchError("label map is not aligned with its volume");
  }

  PreprocessedCase out;
  CropRecord& rec = out.record;
  rec.original_shape = v.shape;
  rec.original_spacing = v.spacing_mm;
  rec.original_orientation = v.orientation;
  rec.original_origin = v.origin_mm;
  rec.working_orientation = cfg.target_orientation;
  rec.working_spacing = cfg.target_spacing_mm;
  rec.crop_hw = cfg.crop_hw;

  const Volume oriented = reorient(v, cfg.target_orientation);
  rec.reoriented_shape = oriented.shape;
  rec.reoriented_spacing = oriented.spacing_mm;
  const Volume resampled = resample(oriented, cfg.target_spacing_mm, Interp::kLinear);
  rec.resampled_shape = resampled.shape;

  const auto [lo, hi] = std::minmax_element(resampled.data.begin(), resampled.data.end());
  rec.intensity_min = *lo;
  rec.intensity_max = *hi;
  ScaledVolume scaled = minmax_scale(resampled, cfg.intensity_range);
  out.constant_input = scaled.constant_input;

  const PlaneSize center = scaled.constant_input
                               ? PlaneSize{scaled.volume.shape.rows / 2, scaled.volume.shape.cols / 2}
                               : percentile_center(scaled.volume, cfg.percentile);
  rec.row0 = center[0] - cfg.crop_hw[0] / 2;
  rec.col0 = center[1] - cfg.crop_hw[1] / 2;
  out.volume = center_crop_pad(scaled.volume, center, cfg.crop_hw, static_cast<float>(cfg.intensity_range[0]));

  if (labels) {
    const LabelMap l = resample(reorient(*labels, cfg.target_orientation), cfg.target_spacing_mm, Interp::kNearest);
    out.labels = center_crop_pad(l, center, cfg.crop_hw, std::uint8_t{0});
  }
  return out;
}

LabelMap invert_labels(const LabelMap& preprocessed, const CropRecord& rec) {
  if (preprocessed.shape.rows != rec.crop_hw[0] || preprocessed.shape.cols != rec.crop_hw[1] ||
      preprocessed.shape.slices != rec.resampled_shape.slices) {
    throw ShapeMismatchError("label map does not match the crop record's working geometry");
  }
  LabelMap uncropped = preprocessed.like<std::uint8_t>();
  uncropped.shape = rec.resampled_shape;
  uncropped.spacing_mm = rec.working_spacing;
  uncropped.orientation = rec.working_orientation;
  uncropped.data.assign(uncropped.shape.numel(), 0);
  for (std::int64_t k = 0; k < uncropped.shape.slices; ++k) {
    for (std::int64_t r = 0; r < rec.crop_hw[0]; ++r) {
      const std::int64_t rr = r + rec.row0;
      if (rr < 0 || rr >= uncropped.shape.rows) continue;
      for (std::int64_t c = 0; c < rec.crop_hw[1]; ++c) {
        const std::int64_t cc = c + rec.col0;
        if (cc < 0 || cc >= uncropped.shape.cols) continue;
        uncropped.at(k, rr, cc) = preprocessed.at(k, r, c);
      }
    }
  }
  const LabelMap back = resample_to_shape(uncropped, rec.reoriented_shape, rec.reoriented_spacing, Interp::kNearest);
  LabelMap out = reorient(back, rec.original_orientation);
  out.spacing_mm = rec.original_spacing;
  out.origin_mm = rec.original_origin;
  return out;
}

}  // namespace unpairseg
