#include "unpairseg/phantom.hpp"

#include <cmath>
#include <random>

namespace unpairseg {
namespace {

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> radii;

  [[nodiscard]] double level(double k, double r, double c) const {
    const double a = (k - center[0]) / radii[0];
    const double b = (r - center[1]) / radii[1];
    const double d = (c - center[2]) / radii[2];
    return a * a + b * b + d * d;
  }
};

constexpr float kSourceBackground = 0.0f;
constexpr float kSourceIntra = 0.9f;
constexpr float kSourceExtra = 0.7f;
constexpr float kSourceCochlea = 1.0f;

}  // namespace

float source_to_target_intensity(float source) { return 1.0f - source; }

float phantom_intensity(Domain domain, LabelClass cls) {
  float s = kSourceBackground;
  switch (cls) {
    case kBackground: s = kSourceBackground; break;
    case kIntraMeatal: s = kSourceIntra; break;
    case kExtraMeatal: s = kSourceExtra; break;
    case kCochlea: s = kSourceCochlea; break;
  }
  return domain == Domain::kSource ? s : source_to_target_intensity(s);
}

std::vector<PhantomCase> generate_phantoms(const PhantomConfig& cfg) {
  if (cfg.n_cases < 1) throw InvalidConfigError("phantom count must be at least 1");
  const Shape3 s = cfg.shape;
  if (s.slices < 8 || s.rows < 24 || s.cols < 24) {
    throw InvalidConfigError("phantom shape too small to place all structures");
  }
  const double S = static_cast<double>(s.slices);
  const double R = static_cast<double>(s.rows);
  const double C = static_cast<double>(s.cols);

  std::vector<PhantomCase> cases;
  cases.reserve(static_cast<std::size_t>(cfg.n_cases));
  for (int n = 0; n < cfg.n_cases; ++n) {
    std::mt19937_64 rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(n) * 7919ULL +
                        (cfg.domain == Domain::kTarget ? 17ULL : 0ULL));
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    Ellipsoid tumour{{uni(0.4, 0.6) * S, uni(0.35, 0.65) * R, uni(0.28, 0.4) * C},
                     {uni(0.18, 0.24) * S, uni(0.13, 0.18) * R, uni(0.15, 0.2) * C}};
    const double split = tumour.center[2] + uni(-0.25, 0.25) * tumour.radii[2];
    Ellipsoid cochlea{{uni(0.35, 0.65) * S, uni(0.3, 0.7) * R, uni(0.78, 0.84) * C},
                      {std::max(1.6, 0.09 * S), std::max(2.0, 0.08 * R), std::max(2.0, 0.08 * C)}};

    PhantomCase pc;
    pc.case_id = (cfg.domain == Domain::kSource ? "src_" : "tgt_") + std::to_string(n);
    pc.labels = LabelMap(s, cfg.spacing_mm, cfg.orientation, 0);
    pc.volume = Volume(s, cfg.spacing_mm, cfg.orientation, 0.0f);
    pc.labels.source_id = pc.volume.source_id = pc.case_id;

    const double noise_sigma = cfg.domain == Domain::kSource ? 0.03 : 0.05;
    std::normal_distribution<double> noise(0.0, noise_sigma);
    // Smooth field centred in-plane, so the bright-voxel centroid used for cropping stays put.
    const double bias_amp = cfg.domain == Domain::kTarget ? uni(-0.1, 0.1) : 0.0;

    std::array<std::size_t, kNumClasses> counts{};
    for (std::int64_t k = 0; k < s.slices; ++k) {
      for (std::int64_t r = 0; r < s.rows; ++r) {
        for (std::int64_t c = 0; c < s.cols; ++c) {
          const double kc = static_cast<double>(k);
          const double rc = static_cast<double>(r);
          const double cc = static_cast<double>(c);
          LabelClass cls = kBackground;
          const bool in_tumour = tumour.level(kc, rc, cc) <= 1.0;
          const bool in_cochlea = cochlea.level(kc, rc, cc) <= 1.0;
          if (in_tumour && in_cochlea) throw Error("phantom structures overlap");
          if (in_tumour) cls = cc < split ? kIntraMeatal : kExtraMeatal;
          if (in_cochlea) cls = kCochlea;
          ++counts[cls];
          pc.labels.at(k, r, c) = cls;
          const double u = 2.0 * rc / (R - 1.0) - 1.0;
          const double w = 2.0 * cc / (C - 1.0) - 1.0;
          const double bias = 1.0 + bias_amp * (u * u + w * w - 2.0 / 3.0);
          const double value = phantom_intensity(cfg.domain, cls) * bias + noise(rng);
          pc.volume.at(k, r, c) = static_cast<float>(value);
        }
      }
    }
    for (int cls = 1; cls < kNumClasses; ++cls) {
      if (counts[static_cast<std::size_t>(cls)] == 0) throw Error("phantom is missing a foreground class");
    }
    cases.push_back(std::move(pc));
  }
  return cases;
}

}  // namespace unpairseg
