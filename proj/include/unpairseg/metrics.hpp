#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "unpairseg/volume.hpp"

namespace unpairseg {

/// 2|P∩G| / (|P|+|G|) over nonzero voxels; 1.0 when both are empty.
double dsc(const Mask& pred, const Mask& gt);

/// Voxels of `mask` with at least one 6-neighbour outside the mask. The array
/// border counts as outside.
Mask surface_of(const Mask& mask);

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// nonzero voxel of `features`, honouring anisotropic spacing. Voxels with no
/// reachable feature get +inf.
std::vector<double> squared_distance_transform(const Mask& features, const Spacing& spacing_mm);

/// Average symmetric surface distance in mm; nullopt when either mask is empty.
std::optional<double> assd(const Mask& pred, const Mask& gt, const Spacing& spacing_mm);

enum class Region { kIntraMeatal = 0, kExtraMeatal = 1, kVsUnion = 2, kCochlea = 3 };
inline constexpr std::array<Region, 4> kAllRegions{Region::kIntraMeatal, Region::kExtraMeatal, Region::kVsUnion,
                                                   Region::kCochlea};

std::string region_name(Region r);

/// Binary mask of the classes making up `region` (VS is classes 1 and 2).
Mask region_mask(const LabelMap& labels, Region region);

struct RegionScore {
  double dsc = 0.0;
  std::optional<double> assd_mm;
};

struct RegionReport {
  std::string case_id;
  std::array<RegionScore, 4> regions{};

  [[nodiscard]] const RegionScore& operator[](Region r) const { return regions[static_cast<std::size_t>(r)]; }
  /// Mean DSC over intra, extra and cochlea.
  [[nodiscard]] double mean_foreground_dsc() const;
};

RegionReport evaluate_case(const LabelMap& pred, const LabelMap& gt);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

struct ReportSummary {
  std::array<MeanStd, 4> dsc{};
  std::array<MeanStd, 4> assd{};
};

/// Means and population standard deviations; undefined ASSD values are skipped.
ReportSummary summarize(const std::vector<RegionReport>& reports);

/// Plain-text table: one row per case, then a mean±std row.
std::string format_report(const std::vector<RegionReport>& reports);

}  // namespace unpairseg
