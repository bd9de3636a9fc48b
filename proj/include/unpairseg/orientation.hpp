#pragma once

#include <array>
#include <string>
#include <string_view>

#include "unpairseg/volume.hpp"

namespace unpairseg {

/// True for the 48 codes formed by one letter from each of {L,R}, {A,P},
/// {S,I} in any order.
bool is_valid_orientation(std::string_view code);

/// Unit RAS world direction for an orientation letter ('R' -> +x, 'L' -> -x,
/// 'A' -> +y, 'P' -> -y, 'S' -> +z, 'I' -> -z).
std::array<double, 3> letter_direction(char letter);

/// How to produce a target-oriented array from a source-oriented one.
/// Axis numbers are array axes (0 = slice, 1 = row, 2 = col); output axis `a`
/// reads source axis `source_axis[a]`, reversed when `flip[a]` is set.
struct ReorientPlan {
  std::array<int, 3> source_axis{0, 1, 2};
  std::array<bool, 3> flip{false, false, false};
};

ReorientPlan plan_reorientation(std::string_view from, std::string_view to);

/// Permutes and flips the array so its voxel order matches `target`. Spacing
/// is permuted alongside and the origin is moved to the new first voxel so
/// world coordinates are unchanged.
template <typename T>
Grid<T> reorient(const Grid<T>& g, std::string_view target);

}  // namespace unpairseg
