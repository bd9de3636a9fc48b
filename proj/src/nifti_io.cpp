#include "unpairseg/nifti_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "unpairseg/orientation.hpp"

namespace unpairseg {
namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348);

struct GzCloser {
  void operator()(gzFile_s* f) const {
    if (f != nullptr) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

GzHandle open_for_read(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw FileNotFoundError(path.string());
  GzHandle f(gzopen(path.c_str(), "rb"));
  if (!f) throw FileNotFoundError(path.string());
  return f;
}

void read_exact(gzFile_s* f, void* dst, std::size_t n, const std::string& what) {
  auto* out = static_cast<char*>(dst);
  while (n > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
    const int got = gzread(f, out, chunk);
    if (got <= 0) throw CorruptHeaderError("truncated file while reading " + what);
    out += got;
    n -= static_cast<std::size_t>(got);
  }
}

int bytes_per_voxel(NiftiType t) {
  switch (t) {
    case NiftiType::kUInt8:
    case NiftiType::kInt8: return 1;
    case NiftiType::kInt16:
    case NiftiType::kUInt16: return 2;
    case NiftiType::kInt32:
    case NiftiType::kUInt32:
    case NiftiType::kFloat32: return 4;
    case NiftiType::kFloat64: return 8;
  }
  return 0;
}

bool known_type(std::int16_t code) {
  switch (static_cast<NiftiType>(code)) {
    case NiftiType::kUInt8:
    case NiftiType::kInt8:
    case NiftiType::kInt16:
    case NiftiType::kUInt16:
    case NiftiType::kInt32:
    case NiftiType::kUInt32:
    case NiftiType::kFloat32:
    case NiftiType::kFloat64: return true;
  }
  return false;
}

Affine quatern_to_affine(const Nifti1Header& h) {
  double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    a = 1.0 / std::sqrt(b * b + c * c + d * d);
    b *= a;
    c *= a;
    d *= a;
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  const double xd = h.pixdim[1] > 0 ? h.pixdim[1] : 1.0;
  const double yd = h.pixdim[2] > 0 ? h.pixdim[2] : 1.0;
  double zd = h.pixdim[3] > 0 ? h.pixdim[3] : 1.0;
  if (h.pixdim[0] < 0) zd = -zd;
  Affine m{};
  m[0] = {(a * a + b * b - c * c - d * d) * xd, 2 * (b * c - a * d) * yd, 2 * (b * d + a * c) * zd, h.qoffset_x};
  m[1] = {2 * (b * c + a * d) * xd, (a * a + c * c - b * b - d * d) * yd, 2 * (c * d - a * b) * zd, h.qoffset_y};
  m[2] = {2 * (b * d - a * c) * xd, 2 * (c * d + a * b) * yd, (a * a + d * d - c * c - b * b) * zd, h.qoffset_z};
  return m;
}

// Rotation part of a permutation/flip affine as a quaternion (qfac absorbs a
// negative determinant).
void affine_to_quatern(const Affine& m, const Spacing& nifti_spacing, Nifti1Header& h) {
  double r[3][3];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r[i][j] = m[i][j] / nifti_spacing[j];
  }
  const double det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
                     r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
                     r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
  double qfac = 1.0;
  if (det < 0) {
    qfac = -1.0;
    for (auto& row : r) row[2] = -row[2];
  }
  double a = r[0][0] + r[1][1] + r[2][2] + 1.0;
  double b, c, d;
  if (a > 0.5) {
    a = 0.5 * std::sqrt(a);
    b = 0.25 * (r[2][1] - r[1][2]) / a;
    c = 0.25 * (r[0][2] - r[2][0]) / a;
    d = 0.25 * (r[1][0] - r[0][1]) / a;
  } else {
    const double xd = 1.0 + r[0][0] - (r[1][1] + r[2][2]);
    const double yd = 1.0 + r[1][1] - (r[0][0] + r[2][2]);
    const double zd = 1.0 + r[2][2] - (r[0][0] + r[1][1]);
    if (xd > 1.0) {
      b = 0.5 * std::sqrt(xd);
      c = 0.25 * (r[0][1] + r[1][0]) / b;
      d = 0.25 * (r[0][2] + r[2][0]) / b;
      a = 0.25 * (r[2][1] - r[1][2]) / b;
    } else if (yd > 1.0) {
      c = 0.5 * std::sqrt(yd);
      b = 0.25 * (r[0][1] + r[1][0]) / c;
      d = 0.25 * (r[1][2] + r[2][1]) / c;
      a = 0.25 * (r[0][2] - r[2][0]) / c;
    } else {
      d = 0.5 * std::sqrt(zd);
      b = 0.25 * (r[0][2] + r[2][0]) / d;
      c = 0.25 * (r[1][2] + r[2][1]) / d;
      a = 0.25 * (r[1][0] - r[0][1]) / d;
    }
    if (a < 0.0) {
      b = -b;
      c = -c;
      d = -d;
    }
  }
  h.quatern_b = static_cast<float>(b);
  h.quatern_c = static_cast<float>(c);
  h.quatern_d = static_cast<float>(d);
  h.pixdim[0] = static_cast<float>(qfac);
}

NiftiInfo decode(const Nifti1Header& h, const std::string& path) {
  if (h.sizeof_hdr != 348) throw CorruptHeaderError("bad header size in " + path);
  if (std::memcmp(h.magic, "n+1\0", 4) != 0) throw CorruptHeaderError("bad magic in " + path);
  if (!known_type(h.datatype)) throw CorruptHeaderError("unsupported datatype in " + path);
  const int ndim = h.dim[0];
  if (ndim < 1 || ndim > 7) throw CorruptHeaderError("bad dimension count in " + path);
  if (ndim < 3) throw NotA3DVolumeError(std::to_string(ndim) + " dimensions in " + path);
  for (int d = 4; d <= ndim; ++d) {
    if (h.dim[d] > 1) throw NotA3DVolumeError("extent " + std::to_string(h.dim[d]) + " along axis " + std::to_string(d));
  }
  for (int d = 1; d <= 3; ++d) {
    if (h.dim[d] < 1) throw CorruptHeaderError("non-positive extent in " + path);
  }

  Affine m{};
  if (h.sform_code > 0) {
    for (int j = 0; j < 4; ++j) {
      m[0][j] = h.srow_x[j];
      m[1][j] = h.srow_y[j];
      m[2][j] = h.srow_z[j];
    }
  } else if (h.qform_code > 0) {
    m = quatern_to_affine(h);
  } else {
    for (int i = 0; i < 3; ++i) m[i][i] = h.pixdim[i + 1] > 0 ? h.pixdim[i + 1] : 1.0;
  }

  NiftiInfo info;
  info.datatype = static_cast<NiftiType>(h.datatype);
  info.shape = {h.dim[3], h.dim[2], h.dim[1]};
  info.orientation.resize(3);
  std::array<bool, 3> used{};
  for (int axis = 0; axis < 3; ++axis) {
    const double norm = std::sqrt(m[0][axis] * m[0][axis] + m[1][axis] * m[1][axis] + m[2][axis] * m[2][axis]);
    if (!(norm > 0.0)) throw CorruptHeaderError("degenerate affine in " + path);
    int dominant = 0;
    for (int w = 1; w < 3; ++w) {
      if (std::abs(m[w][axis]) > std::abs(m[dominant][axis])) dominant = w;
    }
    for (int w = 0; w < 3; ++w) {
      if (w != dominant && std::abs(m[w][axis]) > 1e-4 * norm) {
        throw ObliqueAffineError("oblique affine not supported: " + path);
      }
    }
    if (used[dominant]) throw CorruptHeaderError("singular affine in " + path);
    used[dominant] = true;
    const bool positive = m[dominant][axis] > 0;
    static constexpr char kPos[3] = {'R', 'A', 'S'};
    static constexpr char kNeg[3] = {'L', 'P', 'I'};
    info.orientation[static_cast<std::size_t>(axis)] = positive ? kPos[dominant] : kNeg[dominant];
    info.spacing_mm[2 - axis] = norm;
  }
  info.origin_mm = {m[0][3], m[1][3], m[2][3]};
  return info;
}

struct RawImage {
  NiftiInfo info;
  double slope = 1.0;
  double inter = 0.0;
  std::vector<char> bytes;
};

RawImage read_raw(const std::filesystem::path& path) {
  GzHandle f = open_for_read(path);
  Nifti1Header h{};
  const int got = gzread(f.get(), &h, sizeof h);
  if (got != static_cast<int>(sizeof h)) throw CorruptHeaderError("short header in " + path.string());
  RawImage raw;
  raw.info = decode(h, path.string());
  if (h.scl_slope != 0.0f && std::isfinite(h.scl_slope)) {
    raw.slope = h.scl_slope;
    raw.inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
  }
  const auto offset = static_cast<long>(h.vox_offset);
  if (offset < static_cast<long>(sizeof h)) throw CorruptHeaderError("bad vox_offset in " + path.string());
  std::vector<char> skip(static_cast<std::size_t>(offset) - sizeof h);
  if (!skip.empty()) read_exact(f.get(), skip.data(), skip.size(), "extension");
  raw.bytes.resize(raw.info.shape.numel() * static_cast<std::size_t>(bytes_per_voxel(raw.info.datatype)));
  read_exact(f.get(), raw.bytes.data(), raw.bytes.size(), "voxel data");
  return raw;
}

template <typename Src>
void convert_into(const std::vector<char>& bytes, std::vector<double>& out) {
  const std::size_t n = bytes.size() / sizeof(Src);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Src v;
    std::memcpy(&v, bytes.data() + i * sizeof(Src), sizeof(Src));
    out[i] = static_cast<double>(v);
  }
}

std::vector<double> to_doubles(const RawImage& raw) {
  std::vector<double> out;
  switch (raw.info.datatype) {
    case NiftiType::kUInt8: convert_into<std::uint8_t>(raw.bytes, out); break;
    case NiftiType::kInt8: convert_into<std::int8_t>(raw.bytes, out); break;
    case NiftiType::kInt16: convert_into<std::int16_t>(raw.bytes, out); break;
    case NiftiType::kUInt16: convert_into<std::uint16_t>(raw.bytes, out); break;
    case NiftiType::kInt32: convert_into<std::int32_t>(raw.bytes, out); break;
    case NiftiType::kUInt32: convert_into<std::uint32_t>(raw.bytes, out); break;
    case NiftiType::kFloat32: convert_into<float>(raw.bytes, out); break;
    case NiftiType::kFloat64: convert_into<double>(raw.bytes, out); break;
  }
  return out;
}

template <typename T>
void apply_info(Grid<T>& g, const NiftiInfo& info, const std::filesystem::path& path) {
  g.shape = info.shape;
  g.spacing_mm = info.spacing_mm;
  g.orientation = info.orientation;
  g.origin_mm = info.origin_mm;
  g.source_id = path.filename().string();
}

template <typename T>
void write_grid(const Grid<T>& g, NiftiType type, const std::filesystem::path& path) {
  validate(g);
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(g.shape.cols);
  h.dim[2] = static_cast<std::int16_t>(g.shape.rows);
  h.dim[3] = static_cast<std::int16_t>(g.shape.slices);
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  h.datatype = static_cast<std::int16_t>(type);
  h.bitpix = static_cast<std::int16_t>(8 * sizeof(T));
  const Spacing nifti_spacing{g.spacing_mm[2], g.spacing_mm[1], g.spacing_mm[0]};
  for (int d = 0; d < 3; ++d) h.pixdim[d + 1] = static_cast<float>(nifti_spacing[d]);
  for (int d = 4; d < 8; ++d) h.pixdim[d] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // millimetres
  const Affine m = affine_for(g.spacing_mm, g.orientation, g.origin_mm);
  h.qform_code = 1;
  h.sform_code = 1;
  affine_to_quatern(m, nifti_spacing, h);
  h.qoffset_x = static_cast<float>(m[0][3]);
  h.qoffset_y = static_cast<float>(m[1][3]);
  h.qoffset_z = static_cast<float>(m[2][3]);
  for (int j = 0; j < 4; ++j) {
    h.srow_x[j] = static_cast<float>(m[0][j]);
    h.srow_y[j] = static_cast<float>(m[1][j]);
    h.srow_z[j] = static_cast<float>(m[2][j]);
  }
  std::memcpy(h.magic, "n+1\0", 4);

  for (int d = 1; d <= 3; ++d) {
    if (h.dim[d] != (d == 1 ? g.shape.cols : d == 2 ? g.shape.rows : g.shape.slices)) {
      throw ShapeMismatchError("extent exceeds the format's 16-bit limit");
    }
  }

  const bool gz = path.extension() == ".gz";
  GzHandle f(gzopen(path.c_str(), gz ? "wb6" : "wbT"));
  if (!f) throw UnwritablePathError(path.string());
  const char extension[4] = {0, 0, 0, 0};
  bool ok = gzwrite(f.get(), &h, sizeof h) == static_cast<int>(sizeof h) &&
            gzwrite(f.get(), extension, 4) == 4;
  const auto* bytes = reinterpret_cast<const char*>(g.data.data());
  std::size_t remaining = g.data.size() * sizeof(T);
  while (ok && remaining > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(remaining, 1u << 30));
    ok = gzwrite(f.get(), bytes, chunk) == static_cast<int>(chunk);
    bytes += chunk;
    remaining -= chunk;
  }
  if (gzclose(f.release()) != Z_OK) ok = false;
  if (!ok) throw UnwritablePathError(path.string());
}

}  // namespace

Affine affine_for(const Spacing& spacing_mm, const std::string& orientation,
                  const std::array<double, 3>& origin_mm) {
  if (!is_valid_orientation(orientation)) throw InvalidOrientationError(orientation);
  Affine m{};
  for (int axis = 0; axis < 3; ++axis) {
    const auto dir = letter_direction(orientation[static_cast<std::size_t>(axis)]);
    for (int w = 0; w < 3; ++w) m[w][axis] = dir[w] * spacing_mm[2 - axis];
  }
  for (int w = 0; w < 3; ++w) m[w][3] = origin_mm[w];
  return m;
}

NiftiInfo read_nifti_info(const std::filesystem::path& path) {
  GzHandle f = open_for_read(path);
  Nifti1Header h{};
  if (gzread(f.get(), &h, sizeof h) != static_cast<int>(sizeof h)) {
    throw CorruptHeaderError("short header in " + path.string());
  }
  return decode(h, path.string());
}

Volume load_volume(const std::filesystem::path& path) {
  const RawImage raw = read_raw(path);
  const std::vector<double> values = to_doubles(raw);
  Volume v;
  apply_info(v, raw.info, path);
  v.data.resize(values.size());
  const bool scaled = raw.slope != 1.0 || raw.inter != 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = scaled ? values[i] * raw.slope + raw.inter : values[i];
    if (!std::isfinite(x)) throw NonFiniteDataError("non-finite voxel in " + path.string());
    v.data[i] = static_cast<float>(x);
  }
  return v;
}

LabelMap load_label_map(const std::filesystem::path& path) {
  const RawImage raw = read_raw(path);
  const std::vector<double> values = to_doubles(raw);
  LabelMap l;
  apply_info(l, raw.info, path);
  l.data.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = values[i] * raw.slope + raw.inter;
    if (!(x >= 0.0 && x < kNumClasses) || x != std::floor(x)) {
      throw ClassOutOfRangeError("label value outside {0,1,2,3} in " + path.string());
    }
    l.data[i] = static_cast<std::uint8_t>(x);
  }
  return l;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  write_grid(v, NiftiType::kFloat32, path);
}

void save_label_map(const LabelMap& l, const std::filesystem::path& path) {
  write_grid(l, NiftiType::kUInt8, path);
}

}  // namespace unpairseg
