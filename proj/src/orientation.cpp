#include "unpairseg/orientation.hpp"

#include <algorithm>

namespace unpairseg {
namespace {

int pair_of(char letter) {
  switch (letter) {
    case 'L':
    case 'R':
      return 0;
    case 'A':
    case 'P':
      return 1;
    case 'S':
    case 'I':
      return 2;
    default:
      return -1;
  }
}

// Array axis a is described by letter code[2 - a].
char letter_for_axis(std::string_view code, int axis) { return code[static_cast<std::size_t>(2 - axis)]; }

}  // namespace

bool is_valid_orientation(std::string_view code) {
  if (code.size() != 3) return false;
  std::array<bool, 3> seen{};
  for (char c : code) {
    const int p = pair_of(c);
    if (p < 0 || seen[p]) return false;
    seen[p] = true;
  }
  return true;
}

std::array<double, 3> letter_direction(char letter) {
  switch (letter) {
    case 'R': return {1, 0, 0};
    case 'L': return {-1, 0, 0};
    case 'A': return {0, 1, 0};
    case 'P': return {0, -1, 0};
    case 'S': return {0, 0, 1};
    case 'I': return {0, 0, -1};
    default: throw InvalidOrientationError(std::string(1, letter));
  }
}

ReorientPlan plan_reorientation(std::string_view from, std::string_view to) {
  if (!is_valid_orientation(from)) throw InvalidOrientationError(std::string(from));
  if (!is_valid_orientation(to)) throw InvalidOrientationError(std::string(to));
  ReorientPlan plan;
  for (int out = 0; out < 3; ++out) {
    const char want = letter_for_axis(to, out);
    for (int src = 0; src < 3; ++src) {
      const char have = letter_for_axis(from, src);
      if (pair_of(have) == pair_of(want)) {
        plan.source_axis[out] = src;
        plan.flip[out] = have != want;
      }
    }
  }
  return plan;
}

template <typename T>
Grid<T> reorient(const Grid<T>& g, std::string_view target) {
  const ReorientPlan plan = plan_reorientation(g.orientation, target);

  Grid<T> out;
  out.orientation = std::string(target);
  out.source_id = g.source_id;
  for (int a = 0; a < 3; ++a) {
    out.shape[a] = g.shape[plan.source_axis[a]];
    out.spacing_mm[a] = g.spacing_mm[plan.source_axis[a]];
  }
  out.data.resize(out.shape.numel());

  // World position of the new first voxel.
  std::array<std::int64_t, 3> first{0, 0, 0};
  for (int a = 0; a < 3; ++a) {
    if (plan.flip[a]) first[plan.source_axis[a]] = g.shape[plan.source_axis[a]] - 1;
  }
  out.origin_mm = g.origin_mm;
  for (int src = 0; src < 3; ++src) {
    const auto dir = letter_direction(g.orientation[static_cast<std::size_t>(2 - src)]);
    for (int w = 0; w < 3; ++w) {
      out.origin_mm[w] += static_cast<double>(first[src]) * g.spacing_mm[src] * dir[w];
    }
  }

  std::array<std::int64_t, 3> o{};
  std::array<std::int64_t, 3> s{};
  for (o[0] = 0; o[0] < out.shape.slices; ++o[0]) {
    for (o[1] = 0; o[1] < out.shape.rows; ++o[1]) {
      for (o[2] = 0; o[2] < out.shape.cols; ++o[2]) {
        for (int a = 0; a < 3; ++a) {
          const int src = plan.source_axis[a];
          s[src] = plan.flip[a] ? g.shape[src] - 1 - o[a] : o[a];
        }
        out.at(o[0], o[1], o[2]) = g.at(s[0], s[1], s[2]);
      }
    }
  }
  return out;
}

template Grid<float> reorient(const Grid<float>&, std::string_view);
template Grid<std::uint8_t> reorient(const Grid<std::uint8_t>&, std::string_view);

template <typename T>
void validate(const Grid<T>& g) {
  for (double s : g.spacing_mm) {
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidConfigError("voxel spacing must be positive");
  }
  if (!is_valid_orientation(g.orientation)) throw InvalidOrientationError(g.orientation);
  if (g.data.size() != g.shape.numel()) throw ShapeMismatchError("payload size does not match shape");
}

template void validate(const Grid<float>&);
template void validate(const Grid<std::uint8_t>&);

void validate_labels(const LabelMap& l) {
  validate(l);
  if (std::any_of(l.data.begin(), l.data.end(), [](std::uint8_t v) { return v >= kNumClasses; })) {
    throw ClassOutOfRangeError("label map contains a class outside {0,1,2,3}");
  }
}

}  // namespace unpairseg
