#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <zlib.h>

#include "test_util.hpp"
#include "unpairseg/errors.hpp"
#include "unpairseg/nifti_io.hpp"
#include "unpairseg/orientation.hpp"
#include "unpairseg/volume.hpp"

using namespace unpairseg;

namespace {

Volume random_volume(Shape3 s, std::uint32_t seed, Spacing sp = {1.5, 0.41, 0.41}, std::string orient = "LPS") {
  Volume v(s, sp, orient);
  std::mt19937 rng(seed);
  std::normal_distribution<float> d(0.0f, 3.0f);
  for (auto& x : v.data) x = d(rng);
  return v;
}

// ---------------------------------------------------------------------------
// Hand-rolled NIfTI-1 writer working from byte offsets, independent of the
// library's header struct.

struct RawHeader {
  std::vector<std::int16_t> dims;  // dim[1..]
  std::int16_t datatype = 16;
  std::int16_t bitpix = 32;
  std::array<float, 3> pixdim{1, 1, 1};
  std::array<std::array<float, 4>, 3> srow{};
  std::int16_t sform_code = 1;
  std::int16_t qform_code = 0;
  std::int32_t sizeof_hdr = 348;
};

template <typename T>
void put(std::vector<char>& buf, std::size_t offset, T value) {
  std::memcpy(buf.data() + offset, &value, sizeof(T));
}

void write_raw_nifti(const std::filesystem::path& path, const RawHeader& h, const std::vector<char>& payload) {
  std::vector<char> buf(352, 0);
  put<std::int32_t>(buf, 0, h.sizeof_hdr);
  put<std::int16_t>(buf, 40, static_cast<std::int16_t>(h.dims.size()));
  for (std::size_t i = 0; i < 7; ++i) {
    put<std::int16_t>(buf, 42 + 2 * i, i < h.dims.size() ? h.dims[i] : std::int16_t{1});
  }
  put<std::int16_t>(buf, 70, h.datatype);
  put<std::int16_t>(buf, 72, h.bitpix);
  put<float>(buf, 76, 1.0f);
  for (int i = 0; i < 3; ++i) put<float>(buf, 80 + 4 * i, h.pixdim[i]);
  put<float>(buf, 108, 352.0f);
  put<float>(buf, 112, 1.0f);
  put<std::int16_t>(buf, 252, h.qform_code);
  put<std::int16_t>(buf, 254, h.sform_code);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) put<float>(buf, 280 + 16 * r + 4 * c, h.srow[r][c]);
  }
  std::memcpy(buf.data() + 344, "n+1\0", 4);
  buf.insert(buf.end(), payload.begin(), payload.end());
  std::ofstream out(path, std::ios::binary);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::vector<char> float_payload(const std::vector<float>& v) {
  std::vector<char> out(v.size() * 4);
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

std::vector<char> read_gz(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  std::vector<char> out;
  char tmp[4096];
  int n = 0;
  while ((n = gzread(f, tmp, sizeof tmp)) > 0) out.insert(out.end(), tmp, tmp + n);
  gzclose(f);
  return out;
}

// Independent decoding of an orientation code from sform rows: for each
// voxel axis pick the dominant world component and its sign.
std::string code_from_srow(const std::vector<char>& hdr) {
  const char pos[3] = {'R', 'A', 'S'};
  const char neg[3] = {'L', 'P', 'I'};
  std::string code;
  for (int axis = 0; axis < 3; ++axis) {
    int best = 0;
    float best_abs = -1.0f;
    float sign = 1.0f;
    for (int row = 0; row < 3; ++row) {
      float v = 0;
      std::memcpy(&v, hdr.data() + 280 + 16 * row + 4 * axis, 4);
      if (std::abs(v) > best_abs) {
        best_abs = std::abs(v);
        best = row;
        sign = v;
      }
    }
    code += sign > 0 ? pos[best] : neg[best];
  }
  return code;
}

}  // namespace

TEST(NiftiIo, RoundTripCompressedIsBitwise) {
  testutil::TempDir dir;
  Volume v = random_volume({5, 6, 7}, 1);
  v.origin_mm = {3.5, -2.0, 10.25};
  save_volume(v, dir / "a.nii.gz");
  const Volume w = load_volume(dir / "a.nii.gz");
  EXPECT_EQ(w.data, v.data);
  EXPECT_EQ(w.shape, v.shape);
  EXPECT_EQ(w.orientation, v.orientation);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(w.spacing_mm[i], v.spacing_mm[i], 1e-6);
    EXPECT_NEAR(w.origin_mm[i], v.origin_mm[i], 1e-4);
  }
}

TEST(NiftiIo, RoundTripUncompressed) {
  testutil::TempDir dir;
  const Volume v = random_volume({3, 4, 2}, 2, {2.0, 1.0, 0.5}, "RAS");
  save_volume(v, dir / "a.nii");
  const Volume w = load_volume(dir / "a.nii");
  EXPECT_EQ(w.data, v.data);
  EXPECT_EQ(w.orientation, "RAS");
}

TEST(NiftiIo, EveryOrientationCodeRoundTrips) {
  testutil::TempDir dir;
  const std::string groups[3] = {"LR", "AP", "SI"};
  const std::array<std::array<int, 3>, 6> perms{{{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  int count = 0;
  for (const auto& p : perms) {
    for (int bits = 0; bits < 8; ++bits) {
      std::string code;
      for (int a = 0; a < 3; ++a) code += groups[p[a]][(bits >> a) & 1];
      const Volume v = random_volume({2, 3, 4}, 3, {1.0, 2.0, 3.0}, code);
      save_volume(v, dir / "o.nii.gz");
      const Volume w = load_volume(dir / "o.nii.gz");
      EXPECT_EQ(w.orientation, code);
      EXPECT_EQ(w.data, v.data);
      ++count;
    }
  }
  EXPECT_EQ(count, 48);
}

TEST(NiftiIo, IndependentlyWrittenPhantomSpacingIsDecoded) {
  testutil::TempDir dir;
  RawHeader h;
  h.dims = {4, 3, 2};  // cols, rows, slices
  h.pixdim = {0.41f, 0.41f, 1.5f};
  // LPS: col -> -x, row -> -y, slice -> +z.
  h.srow = {{{-0.41f, 0, 0, 0}, {0, -0.41f, 0, 0}, {0, 0, 1.5f, 0}}};
  std::vector<float> data(24);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i);
  write_raw_nifti(dir / "p.nii", h, float_payload(data));
  const Volume v = load_volume(dir / "p.nii");
  EXPECT_EQ(v.shape, (Shape3{2, 3, 4}));
  EXPECT_NEAR(v.spacing_mm[0], 1.5, 1e-6);
  EXPECT_NEAR(v.spacing_mm[1], 0.41, 1e-6);
  EXPECT_NEAR(v.spacing_mm[2], 0.41, 1e-6);
  EXPECT_EQ(v.orientation, "LPS");
  EXPECT_EQ(v.at(1, 2, 3), 23.0f);
  EXPECT_EQ(v.at(0, 1, 0), 4.0f);
}

TEST(NiftiIo, FourDimensionalPayloadIsRejected) {
  testutil::TempDir dir;
  RawHeader h;
  h.dims = {2, 2, 2, 3};
  h.srow = {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}};
  write_raw_nifti(dir / "4d.nii", h, float_payload(std::vector<float>(24, 1.0f)));
  try {
    load_volume(dir / "4d.nii");
    FAIL() << "expected NotA3DVolumeError";
  } catch (const NotA3DVolumeError& e) {
    EXPECT_NE(std::string(e.what()).find("not a 3D volume"), std::string::npos);
  }
}

TEST(NiftiIo, FourDimensionalHeaderWithUnitTimeAxisLoads) {
  testutil::TempDir dir;
  RawHeader h;
  h.dims = {2, 2, 2, 1};
  h.srow = {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}};
  write_raw_nifti(dir / "4d1.nii", h, float_payload(std::vector<float>(8, 1.0f)));
  EXPECT_EQ(load_volume(dir / "4d1.nii").shape, (Shape3{2, 2, 2}));
}

TEST(NiftiIo, DistinctErrorsForMissingCorruptObliqueAndNonFinite) {
  testutil::TempDir dir;
  EXPECT_THROW(load_volume(dir / "missing.nii.gz"), FileNotFoundError);

  RawHeader bad;
  bad.dims = {2, 2, 2};
  bad.sizeof_hdr = 123;
  bad.srow = {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}};
  write_raw_nifti(dir / "bad.nii", bad, float_payload(std::vector<float>(8)));
  EXPECT_THROW(load_volume(dir / "bad.nii"), CorruptHeaderError);

  {
    std::ofstream(dir / "short.nii", std::ios::binary) << "abc";
  }
  EXPECT_THROW(load_volume(dir / "short.nii"), CorruptHeaderError);

  RawHeader oblique;
  oblique.dims = {2, 2, 2};
  const float c = std::cos(0.3f), s = std::sin(0.3f);
  oblique.srow = {{{c, -s, 0, 0}, {s, c, 0, 0}, {0, 0, 1, 0}}};
  write_raw_nifti(dir / "obl.nii", oblique, float_payload(std::vector<float>(8)));
  EXPECT_THROW(load_volume(dir / "obl.nii"), ObliqueAffineError);

  RawHeader nan_h;
  nan_h.dims = {2, 2, 2};
  nan_h.srow = {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}};
  std::vector<float> data(8, 0.0f);
  data[3] = std::nanf("");
  write_raw_nifti(dir / "nan.nii", nan_h, float_payload(data));
  EXPECT_THROW(load_volume(dir / "nan.nii"), NonFiniteDataError);
}

TEST(NiftiIo, UnwritablePathRaises) {
  const Volume v = random_volume({2, 2, 2}, 4);
  EXPECT_THROW(save_volume(v, "/nonexistent_dir_xyz/a.nii.gz"), UnwritablePathError);
}

TEST(NiftiIo, LabelMapKeepsIntegerType) {
  testutil::TempDir dir;
  LabelMap l({3, 4, 5}, {1.5, 0.41, 0.41});
  for (std::size_t i = 0; i < l.data.size(); ++i) l.data[i] = static_cast<std::uint8_t>(i % 4);
  save_label_map(l, dir / "l_seg.nii.gz");
  EXPECT_EQ(read_nifti_info(dir / "l_seg.nii.gz").datatype, NiftiType::kUInt8);
  EXPECT_EQ(load_label_map(dir / "l_seg.nii.gz").data, l.data);
}

TEST(NiftiIo, LabelValuesOutsideClassesAreRejected) {
  testutil::TempDir dir;
  RawHeader h;
  h.dims = {2, 1, 1};
  h.datatype = 2;
  h.bitpix = 8;
  h.srow = {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}};
  write_raw_nifti(dir / "l.nii", h, {0, 7});
  EXPECT_THROW(load_label_map(dir / "l.nii"), ClassOutOfRangeError);
}

TEST(NiftiIo, RasOrientationSurvivesIndependentAffineDecoding) {
  testutil::TempDir dir;
  const Volume v = random_volume({2, 3, 4}, 5, {1.5, 0.41, 0.41}, "RAS");
  save_volume(v, dir / "ras.nii.gz");
  const auto bytes = read_gz(dir / "ras.nii.gz");
  ASSERT_GE(bytes.size(), 348u);
  EXPECT_EQ(code_from_srow(bytes), "RAS");
  EXPECT_EQ(load_volume(dir / "ras.nii.gz").orientation, "RAS");
}

// ---------------------------------------------------------------------------
// Orientation

namespace {

std::array<double, 3> dir_of(char letter) {
  static const std::map<char, std::array<double, 3>> table{{'R', {1, 0, 0}},  {'L', {-1, 0, 0}}, {'A', {0, 1, 0}},
                                                           {'P', {0, -1, 0}}, {'S', {0, 0, 1}},  {'I', {0, 0, -1}}};
  return table.at(letter);
}

// World position of voxel (k, r, c): letters describe col, row, slice.
std::array<double, 3> world(const Volume& v, std::int64_t k, std::int64_t r, std::int64_t c) {
  const std::int64_t idx[3] = {c, r, k};
  const double sp[3] = {v.spacing_mm[2], v.spacing_mm[1], v.spacing_mm[0]};
  std::array<double, 3> w = v.origin_mm;
  for (int a = 0; a < 3; ++a) {
    const auto d = dir_of(v.orientation[static_cast<std::size_t>(a)]);
    for (int x = 0; x < 3; ++x) w[static_cast<std::size_t>(x)] += static_cast<double>(idx[a]) * sp[a] * d[static_cast<std::size_t>(x)];
  }
  return w;
}

}  // namespace

TEST(Orientation, ValidCodesNumber48) {
  int n = 0;
  const std::string letters = "LRAPSI";
  for (char a : letters) {
    for (char b : letters) {
      for (char c : letters) n += is_valid_orientation(std::string{a, b, c}) ? 1 : 0;
    }
  }
  EXPECT_EQ(n, 48);
  EXPECT_FALSE(is_valid_orientation("LLS"));
  EXPECT_FALSE(is_valid_orientation("LP"));
}

TEST(Orientation, ReorientToSameCodeIsIdentity) {
  const Volume v = random_volume({3, 4, 5}, 6, {1.0, 2.0, 3.0}, "RPI");
  EXPECT_EQ(reorient(v, "RPI"), v);
}

TEST(Orientation, InvalidCodeRaises) {
  const Volume v = random_volume({2, 2, 2}, 7);
  EXPECT_THROW(reorient(v, "XYZ"), InvalidOrientationError);
}

TEST(Orientation, MarkerVolumeRasToLpsMatchesWorldRemap) {
  Volume v({2, 3, 4}, {3.0, 2.0, 1.0}, "RAS");
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i);
  v.origin_mm = {10, 20, 30};
  const Volume w = reorient(v, "LPS");
  ASSERT_EQ(w.shape, v.shape);
  EXPECT_EQ(w.spacing_mm, v.spacing_mm);
  // Col and row directions reverse, slices stay.
  for (std::int64_t k = 0; k < 2; ++k) {
    for (std::int64_t r = 0; r < 3; ++r) {
      for (std::int64_t c = 0; c < 4; ++c) EXPECT_EQ(w.at(k, r, c), v.at(k, 2 - r, 3 - c));
    }
  }
  // Every voxel keeps its world position.
  for (std::int64_t k = 0; k < 2; ++k) {
    for (std::int64_t r = 0; r < 3; ++r) {
      for (std::int64_t c = 0; c < 4; ++c) {
        const auto a = world(w, k, r, c);
        const auto b = world(v, k, 2 - r, 3 - c);
        for (int x = 0; x < 3; ++x) EXPECT_NEAR(a[static_cast<std::size_t>(x)], b[static_cast<std::size_t>(x)], 1e-9);
      }
    }
  }
}

TEST(Orientation, BruteForceWorldRemapForRandomCodePairs) {
  const std::vector<std::string> codes{"LPS", "RAS", "ASL", "IRP", "PIR", "SLA", "LAI", "RSA"};
  std::mt19937 rng(8);
  for (const auto& from : codes) {
    for (const auto& to : codes) {
      Volume v = random_volume({2, 3, 4}, rng(), {1.1, 2.3, 0.7}, from);
      v.origin_mm = {1.0, -2.0, 3.0};
      const Volume w = reorient(v, to);
      EXPECT_EQ(w.orientation, to);
      // For each output voxel, find the input voxel at the same world point.
      for (std::int64_t k = 0; k < w.shape.slices; ++k) {
        for (std::int64_t r = 0; r < w.shape.rows; ++r) {
          for (std::int64_t c = 0; c < w.shape.cols; ++c) {
            const auto target = world(w, k, r, c);
            bool found = false;
            for (std::int64_t kk = 0; kk < v.shape.slices && !found; ++kk) {
              for (std::int64_t rr = 0; rr < v.shape.rows && !found; ++rr) {
                for (std::int64_t cc = 0; cc < v.shape.cols && !found; ++cc) {
                  const auto p = world(v, kk, rr, cc);
                  if (std::abs(p[0] - target[0]) < 1e-9 && std::abs(p[1] - target[1]) < 1e-9 &&
                      std::abs(p[2] - target[2]) < 1e-9) {
                    EXPECT_EQ(w.at(k, r, c), v.at(kk, rr, cc));
                    found = true;
                  }
                }
              }
            }
            EXPECT_TRUE(found) << from << "->" << to;
          }
        }
      }
    }
  }
}

TEST(Orientation, InverseRestoresDataAndMetadataAndMultiset) {
  std::mt19937 rng(9);
  const std::vector<std::string> codes{"LPS", "RAS", "ASL", "IRP", "PIR", "SLA"};
  for (const auto& from : codes) {
    for (const auto& to : codes) {
      Volume v = random_volume({3, 5, 4}, rng(), {1.5, 0.41, 0.8}, from);
      v.origin_mm = {5.0, 6.0, -7.0};
      const Volume w = reorient(v, to);
      auto a = v.data, b = w.data;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      EXPECT_EQ(a, b);
      const Volume back = reorient(w, from);
      EXPECT_EQ(back.data, v.data);
      EXPECT_EQ(back.shape, v.shape);
      EXPECT_EQ(back.orientation, v.orientation);
      for (int i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(back.spacing_mm[i], v.spacing_mm[i]);
        EXPECT_NEAR(back.origin_mm[i], v.origin_mm[i], 1e-9);
      }
    }
  }
}

TEST(VolumeCore, ValidateRejectsBadGeometry) {
  Volume v({2, 2, 2}, {1, 1, 1});
  EXPECT_NO_THROW(validate(v));
  v.spacing_mm[1] = 0.0;
  EXPECT_THROW(validate(v), InvalidConfigError);
  Volume o({2, 2, 2}, {1, 1, 1}, "LPX");
  EXPECT_THROW(validate(o), InvalidOrientationError);
  LabelMap l({1, 1, 2}, {1, 1, 1});
  l.data[1] = 4;
  EXPECT_THROW(validate_labels(l), ClassOutOfRangeError);
}
