#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "unpairseg/volume.hpp"

namespace unpairseg {

/// On-disk datatype codes used by the single-file NIfTI-1 format.
enum class NiftiType : short {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
};

/// Decoded header fields that the toolkit consumes.
struct NiftiInfo {
  NiftiType datatype = NiftiType::kFloat32;
  Shape3 shape;
  Spacing spacing_mm{};
  std::string orientation;
  std::array<double, 3> origin_mm{};
};

/// 3x4 voxel-to-world (RAS) affine, rows x, y, z.
using Affine = std::array<std::array<double, 4>, 3>;

/// Builds the affine for a grid's spacing/orientation/origin. Column `a` maps
/// the NIfTI voxel axis a (0 = col, 1 = row, 2 = slice).
Affine affine_for(const Spacing& spacing_mm, const std::string& orientation,
                  const std::array<double, 3>& origin_mm);

/// Reads only the header. Raises FileNotFoundError, CorruptHeaderError,
/// NotA3DVolumeError or ObliqueAffineError.
NiftiInfo read_nifti_info(const std::filesystem::path& path);

Volume load_volume(const std::filesystem::path& path);
LabelMap load_label_map(const std::filesystem::path& path);

/// Volumes are written as float32, label maps as uint8. A `.gz` extension
/// selects gzip compression.
void save_volume(const Volume& v, const std::filesystem::path& path);
void save_label_map(const LabelMap& l, const std::filesystem::path& path);

}  // namespace unpairseg
