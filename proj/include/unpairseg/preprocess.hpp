#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unpairseg/volume.hpp"

namespace unpairseg {

enum class Interp { kLinear, kNearest };

/// In-plane extent as (rows, cols).
using PlaneSize = std::array<std::int64_t, 2>;

struct PreprocessConfig {
  Spacing target_spacing_mm{1.5, 0.41, 0.41};
  std::string target_orientation = "LPS";
  PlaneSize crop_hw{256, 256};
  double percentile = 75.0;
  std::array<double, 2> intensity_range{-1.0, 1.0};

  void validate() const;
};

/// round(n * spacing / target) per axis, at least 1.
Shape3 resampled_shape(const Shape3& shape, const Spacing& spacing, const Spacing& target);

/// Resamples onto an arbitrary grid covering the same physical extent,
/// mapping output voxel centres to input continuous indices
/// `(o + 0.5) * out_spacing / in_spacing - 0.5` with edge clamping.
template <typename T>
Grid<T> resample_to_shape(const Grid<T>& g, const Shape3& out_shape, const Spacing& out_spacing, Interp mode);

template <typename T>
Grid<T> resample(const Grid<T>& g, const Spacing& target_spacing, Interp mode) {
  return resample_to_shape(g, resampled_shape(g.shape, g.spacing_mm, target_spacing), target_spacing, mode);
}

struct ScaledVolume {
  Volume volume;
  /// Set when the input was constant; the payload is then all zeros.
  bool constant_input = false;
};

ScaledVolume minmax_scale(const Volume& v, const std::array<double, 2>& range);

/// Linear-interpolation percentile (p in [0, 100]) of `values`.
double percentile_of(std::vector<float> values, double p);

/// Rounded (row, col) centroid of voxels strictly above the given intensity
/// percentile, pooled over all slices. Falls back to (rows/2, cols/2) when no
/// voxel exceeds the threshold.
PlaneSize percentile_center(const Volume& v, double percentile);

/// Crops or pads every slice to `crop_hw`, with the window starting at
/// `center - crop_hw / 2`. Out-of-bounds voxels take `fill`.
template <typename T>
Grid<T> center_crop_pad(const Grid<T>& g, const PlaneSize& center, const PlaneSize& crop_hw, T fill);

/// Geometry needed to map a preprocessed case back to its original grid.
struct CropRecord {
  Shape3 original_shape;
  Spacing original_spacing{1, 1, 1};
  std::string original_orientation = "LPS";
  std::array<double, 3> original_origin{0, 0, 0};

  std::string working_orientation = "LPS";
  Shape3 reoriented_shape;
  Spacing reoriented_spacing{1, 1, 1};
  Shape3 resampled_shape;
  Spacing working_spacing{1, 1, 1};

  std::int64_t row0 = 0;
  std::int64_t col0 = 0;
  PlaneSize crop_hw{0, 0};

  double intensity_min = 0.0;
  double intensity_max = 0.0;

  /// A record whose inversion is a no-op on a grid of this geometry.
  template <typename T>
  static CropRecord identity(const Grid<T>& g) {
    CropRecord r;
    r.original_shape = r.reoriented_shape = r.resampled_shape = g.shape;
    r.original_spacing = r.reoriented_spacing = r.working_spacing = g.spacing_mm;
    r.original_orientation = r.working_orientation = g.orientation;
    r.original_origin = g.origin_mm;
    r.crop_hw = {g.shape.rows, g.shape.cols};
    return r;
  }

  friend bool operator==(const CropRecord&, const CropRecord&) = default;
};

void to_json(nlohmann::json& j, const CropRecord& r);
void from_json(const nlohmann::json& j, CropRecord& r);

void save_crop_record(const CropRecord& r, const std::filesystem::path& path);
CropRecord load_crop_record(const std::filesystem::path& path);

struct PreprocessedCase {
  Volume volume;
  std::optional<LabelMap> labels;
  CropRecord record;
  bool constant_input = false;
};

/// reorient -> resample -> min-max scale -> percentile centre -> crop/pad,
/// with labels following the same geometry via nearest-neighbour sampling.
PreprocessedCase preprocess_case(const Volume& v, const std::optional<LabelMap>& labels,
                                 const PreprocessConfig& cfg);

/// Maps a label map on the preprocessed grid back to the original grid.
LabelMap invert_labels(const LabelMap& preprocessed, const CropRecord& record);

}  // namespace unpairseg
