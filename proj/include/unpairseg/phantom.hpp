#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unpairseg/volume.hpp"

namespace unpairseg {

enum class Domain { kSource, kTarget };

/// Synthetic two-domain cases: a tumour ellipsoid split into two touching
/// lobes (intra/extra) plus a small cochlea ellipsoid. The source domain shows
/// bright structures on a dark background; the target domain is the
/// contrast-inverted image with stronger noise and a mild bias field.
struct PhantomConfig {
  Shape3 shape{32, 64, 64};
  int n_cases = 1;
  std::uint64_t seed = 0;
  Domain domain = Domain::kSource;
  Spacing spacing_mm{1.5, 0.41, 0.41};
  std::string orientation = "LPS";
};

struct PhantomCase {
  std::string case_id;
  Volume volume;
  LabelMap labels;
};

/// Noise-free intensity for a class in the given domain.
float phantom_intensity(Domain domain, LabelClass cls);

/// The monotone (decreasing) map taking clean source intensities to clean
/// target intensities.
float source_to_target_intensity(float source);

std::vector<PhantomCase> generate_phantoms(const PhantomConfig& cfg);

}  // namespace unpairseg
