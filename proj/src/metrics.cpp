#include "unpairseg/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace unpairseg {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_shape(const Mask& a, const Mask& b) {
  if (!(a.shape == b.shape) || a.data.size() != b.data.size()) {
    throw ShapeMismatchError("masks have different shapes");
  }
}

// Lower envelope of parabolas along one line, with sample spacing `h`.
void distance_1d(const double* f, double* d, std::int64_t n, double h, std::vector<std::int64_t>& v,
                 std::vector<double>& z) {
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n) + 1);
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    const double xq = h * static_cast<double>(q);
    double s = -kInf;
    while (k >= 0) {
      const std::int64_t p = v[static_cast<std::size_t>(k)];
      const double xp = h * static_cast<double>(p);
      s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = k == 0 ? -kInf : s;
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  if (k < 0) {
    for (std::int64_t q = 0; q < n; ++q) d[q] = kInf;
    return;
  }
  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    const double x = h * static_cast<double>(q);
    while (z[static_cast<std::size_t>(j) + 1] < x) ++j;
    const std::int64_t p = v[static_cast<std::size_t>(j)];
    const double dx = h * static_cast<double>(q - p);
    d[q] = dx * dx + f[p];
  }
}

double dsc_raw(const Mask& pred, const Mask& gt) {
  std::size_t inter = 0;
  std::size_t np = 0;
  std::size_t ng = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool g = gt.data[i] != 0;
    np += p;
    ng += g;
    inter += p && g;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

}  // namespace

double dsc(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt);
  return dsc_raw(pred, gt);
}

Mask surface_of(const Mask& mask) {
  Mask out = mask.like<std::uint8_t>();
  const Shape3& s = mask.shape;
  auto inside = [&](std::int64_t k, std::int64_t r, std::int64_t c) {
    return k >= 0 && r >= 0 && c >= 0 && k < s.slices && r < s.rows && c < s.cols && mask.at(k, r, c) != 0;
  };
  for (std::int64_t k = 0; k < s.slices; ++k) {
    for (std::int64_t r = 0; r < s.rows; ++r) {
      for (std::int64_t c = 0; c < s.cols; ++c) {
        if (mask.at(k, r, c) == 0) continue;
        const bool border = !inside(k - 1, r, c) || !inside(k + 1, r, c) || !inside(k, r - 1, c) ||
                            !inside(k, r + 1, c) || !inside(k, r, c - 1) || !inside(k, r, c + 1);
        out.at(k, r, c) = border ? 1 : 0;
      }
    }
  }
  return out;
}

std::vector<double> squared_distance_transform(const Mask& features, const Spacing& spacing_mm) {
  const Shape3& s = features.shape;
  std::vector<double> dist(features.data.size());
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = features.data[i] != 0 ? 0.0 : kInf;

  std::vector<double> line_in;
  std::vector<double> line_out;
  std::vector<std::int64_t> v;
  std::vector<double> z;
  const std::array<std::int64_t, 3> extent{s.slices, s.rows, s.cols};
  const std::array<std::int64_t, 3> stride{s.rows * s.cols, s.cols, 1};

  for (int axis = 0; axis < 3; ++axis) {
    const std::int64_t n = extent[axis];
    line_in.resize(static_cast<std::size_t>(n));
    line_out.resize(static_cast<std::size_t>(n));
    const int a1 = (axis + 1) % 3;
    const int a2 = (axis + 2) % 3;
    for (std::int64_t i = 0; i < extent[a1]; ++i) {
      for (std::int64_t j = 0; j < extent[a2]; ++j) {
        const std::int64_t base = i * stride[a1] + j * stride[a2];
        for (std::int64_t q = 0; q < n; ++q) line_in[static_cast<std::size_t>(q)] = dist[static_cast<std::size_t>(base + q * stride[axis])];
        distance_1d(line_in.data(), line_out.data(), n, spacing_mm[axis], v, z);
        for (std::int64_t q = 0; q < n; ++q) dist[static_cast<std::size_t>(base + q * stride[axis])] = line_out[static_cast<std::size_t>(q)];
      }
    }
  }
  return dist;
}

std::optional<double> assd(const Mask& pred, const Mask& gt, const Spacing& spacing_mm) {
  require_same_shape(pred, gt);
  const Mask sp = surface_of(pred);
  const Mask sg = surface_of(gt);
  const auto count = [](const Mask& m) {
    std::size_t n = 0;
    for (auto x : m.data) n += x != 0;
    return n;
  };
  const std::size_t np = count(sp);
  const std::size_t ng = count(sg);
  if (np == 0 || ng == 0) return std::nullopt;

  const std::vector<double> to_g = squared_distance_transform(sg, spacing_mm);
  const std::vector<double> to_p = squared_distance_transform(sp, spacing_mm);
  double total = 0.0;
  for (std::size_t i = 0; i < sp.data.size(); ++i) {
    if (sp.data[i] != 0) total += std::sqrt(to_g[i]);
    if (sg.data[i] != 0) total += std::sqrt(to_p[i]);
  }
  return total / static_cast<double>(np + ng);
}

std::string region_name(Region r) {
  switch (r) {
    case Region::kIntraMeatal: return "intra";
    case Region::kExtraMeatal: return "extra";
    case Region::kVsUnion: return "vs";
    case Region::kCochlea: return "cochlea";
  }
  return "?";
}

Mask region_mask(const LabelMap& labels, Region region) {
  Mask m = labels.like<std::uint8_t>();
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const std::uint8_t v = labels.data[i];
    bool in = false;
    switch (region) {
      case Region::kIntraMeatal: in = v == kIntraMeatal; break;
      case Region::kExtraMeatal: in = v == kExtraMeatal; break;
      case Region::kVsUnion: in = v == kIntraMeatal || v == kExtraMeatal; break;
      case Region::kCochlea: in = v == kCochlea; break;
    }
    m.data[i] = in ? 1 : 0;
  }
  return m;
}

double RegionReport::mean_foreground_dsc() const {
  return ((*this)[Region::kIntraMeatal].dsc + (*this)[Region::kExtraMeatal].dsc + (*this)[Region::kCochlea].dsc) /
         3.0;
}

RegionReport evaluate_case(const LabelMap& pred, const LabelMap& gt) {
  if (!same_geometry(pred, gt, 1e-4)) throw ShapeMismatchError("prediction and ground truth are not aligned");
  RegionReport report;
  report.case_id = gt.source_id;
  for (Region r : kAllRegions) {
    const Mask p = region_mask(pred, r);
    const Mask g = region_mask(gt, r);
    RegionScore& score = report.regions[static_cast<std::size_t>(r)];
    score.dsc = dsc_raw(p, g);
    score.assd_mm = assd(p, g, gt.spacing_mm);
  }
  return report;
}

ReportSummary summarize(const std::vector<RegionReport>& reports) {
  ReportSummary out;
  auto finish = [](std::vector<double> const& xs) {
    MeanStd m;
    m.count = xs.size();
    if (xs.empty()) return m;
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    for (double x : xs) m.std += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(m.std / static_cast<double>(xs.size()));
    return m;
  };
  for (std::size_t r = 0; r < 4; ++r) {
    std::vector<double> d;
    std::vector<double> a;
    for (const auto& rep : reports) {
      d.push_back(rep.regions[r].dsc);
      if (rep.regions[r].assd_mm) a.push_back(*rep.regions[r].assd_mm);
    }
    out.dsc[r] = finish(d);
    out.assd[r] = finish(a);
  }
  return out;
}

std::string format_report(const std::vector<RegionReport>& reports) {
  std::ostringstream os;
  os << std::fixed;
  os << std::left << std::setw(24) << "case";
  for (Region r : kAllRegions) os << std::setw(18) << ("DSC(%) " + region_name(r));
  for (Region r : kAllRegions) os << std::setw(18) << ("ASSD(mm) " + region_name(r));
  os << '\n';
  for (const auto& rep : reports) {
    os << std::setw(24) << rep.case_id;
    for (const auto& s : rep.regions) os << std::setw(18) << std::setprecision(2) << 100.0 * s.dsc;
    for (const auto& s : rep.regions) {
      if (s.assd_mm) {
        os << std::setw(18) << std::setprecision(2) << *s.assd_mm;
      } else {
        os << std::setw(18) << "n/a";
      }
    }
    os << '\n';
  }
  const ReportSummary sum = summarize(reports);
  os << std::setw(24) << "mean±std";
  for (const auto& m : sum.dsc) {
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(2) << 100.0 * m.mean << "±" << 100.0 * m.std;
    os << std::setw(19) << cell.str();
  }
  for (const auto& m : sum.assd) {
    std::ostringstream cell;
    if (m.count == 0) {
      cell << "n/a";
    } else {
      cell << std::fixed << std::setprecision(2) << m.mean << "±" << m.std;
    }
    os << std::setw(19) << cell.str();
  }
  os << '\n';
  return os.str();
}

}  // namespace unpairseg
