#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#include "rehrseg/volume_io.hpp"

namespace rehrseg {

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
  float intent_p1;
  float intent_p2;
  float intent_p3;
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
  float cal_max;
  float cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax;
  std::int32_t glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b;
  float quatern_c;
  float quatern_d;
  float qoffset_x;
  float qoffset_y;
  float qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348);

enum NiftiType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
};

struct GzCloser {
  void operator()(gzFile_s* f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

template <typename T>
void swap_bytes(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  std::reverse(p, p + sizeof(T));
}

void swap_header(Nifti1Header& h) {
  swap_bytes(h.sizeof_hdr);
  for (auto& d : h.dim) swap_bytes(d);
  swap_bytes(h.datatype);
  swap_bytes(h.bitpix);
  for (auto& p : h.pixdim) swap_bytes(p);
  swap_bytes(h.vox_offset);
  swap_bytes(h.scl_slope);
  swap_bytes(h.scl_inter);
}

void read_exact(gzFile_s* f, void* dst, std::size_t n, const std::filesystem::path& path) {
  auto* out = static_cast<char*>(dst);
  while (n > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
    const int got = gzread(f, out, chunk);
    if (got <= 0) throw IoError("truncated NIfTI file: " + path.string());
    out += got;
    n -= static_cast<std::size_t>(got);
  }
}

struct RawImage {
  Shape3 shape;
  Spacing spacing;
  std::vector<double> values;
};

RawImage read_nifti(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  GzHandle f(gzopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());

  Nifti1Header h{};
  read_exact(f.get(), &h, sizeof(h), path);
  bool swapped = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swapped = true;
    if (h.sizeof_hdr != 348) throw IoError("not a NIfTI-1 file: " + path.string());
  }
  if (std::memcmp(h.magic, "n+1", 3) != 0) throw IoError("unsupported NIfTI magic (need single-file n+1): " + path.string());

  const int ndim = h.dim[0];
  if (ndim < 3 || ndim > 7) throw IoError("expected a 3D payload, got dim[0]=" + std::to_string(ndim) + ": " + path.string());
  for (int k = 4; k <= ndim; ++k) {
    if (h.dim[k] > 1) throw IoError("expected a 3D payload, got a " + std::to_string(ndim) + "D image: " + path.string());
  }

  RawImage img;
  img.shape = {h.dim[3], h.dim[2], h.dim[1]};
  if (img.shape.voxels() <= 0) throw IoError("empty image: " + path.string());
  img.spacing = {std::fabs(h.pixdim[3]), std::fabs(h.pixdim[2]), std::fabs(h.pixdim[1])};
  for (int a = 0; a < 3; ++a) {
    if (!(img.spacing[a] > 0.0)) img.spacing[a] = 1.0;
  }

  const auto skip = static_cast<long>(h.vox_offset) - static_cast<long>(sizeof(h));
  if (skip > 0 && gzseek(f.get(), static_cast<long>(h.vox_offset), SEEK_SET) < 0) {
    throw IoError("cannot seek to voxel data: " + path.string());
  }

  const auto n = static_cast<std::size_t>(img.shape.voxels());
  img.values.resize(n);
  auto decode = [&]<typename T>(T) {
    std::vector<T> buf(n);
    read_exact(f.get(), buf.data(), n * sizeof(T), path);
    for (std::size_t i = 0; i < n; ++i) {
      if (swapped) swap_bytes(buf[i]);
      img.values[i] = static_cast<double>(buf[i]);
    }
  };
  switch (h.datatype) {
    case kUInt8: decode(std::uint8_t{}); break;
    case kInt8: decode(std::int8_t{}); break;
    case kInt16: decode(std::int16_t{}); break;
    case kUInt16: decode(std::uint16_t{}); break;
    case kInt32: decode(std::int32_t{}); break;
    case kUInt32: decode(std::uint32_t{}); break;
    case kFloat32: decode(float{}); break;
    case kFloat64: decode(double{}); break;
    default: throw IoError("unsupported NIfTI datatype " + std::to_string(h.datatype) + ": " + path.string());
  }

  if (h.scl_slope != 0.0f && std::isfinite(h.scl_slope) && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f)) {
    for (auto& v : img.values) v = v * h.scl_slope + h.scl_inter;
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(img.values[i])) {
      const auto w = static_cast<std::size_t>(img.shape.w);
      const auto hw = static_cast<std::size_t>(img.shape.h) * w;
      throw IoError("non-finite voxel at (z,y,x)=(" + std::to_string(i / hw) + "," + std::to_string((i % hw) / w) + "," +
                    std::to_string(i % w) + ") in " + path.string());
    }
  }
  return img;
}

bool is_gz(const std::filesystem::path& path) { return path.extension() == ".gz"; }

template <typename T>
void write_nifti(const std::filesystem::path& path, const Shape3& shape, const Spacing& spacing, std::int16_t datatype,
                 const std::vector<T>& values, float cal_min, float cal_max) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(shape.w);
  h.dim[2] = static_cast<std::int16_t>(shape.h);
  h.dim[3] = static_cast<std::int16_t>(shape.d);
  for (int k = 4; k < 8; ++k) h.dim[k] = 1;
  h.datatype = datatype;
  h.bitpix = static_cast<std::int16_t>(8 * sizeof(T));
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(spacing.x);
  h.pixdim[2] = static_cast<float>(spacing.y);
  h.pixdim[3] = static_cast<float>(spacing.z);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.cal_min = cal_min;
  h.cal_max = cal_max;
  h.xyzt_units = 2;  // millimetres
  h.sform_code = 1;
  h.srow_x[0] = h.pixdim[1];
  h.srow_y[1] = h.pixdim[2];
  h.srow_z[2] = h.pixdim[3];
  std::memcpy(h.magic, "n+1\0", 4);

  for (std::int64_t d : {shape.d, shape.h, shape.w}) {
    if (d > std::numeric_limits<std::int16_t>::max()) throw IoError("extent too large for NIfTI-1: " + path.string());
  }

  GzHandle f(gzopen(path.c_str(), is_gz(path) ? "wb6" : "wbT"));
  if (!f) throw IoError("cannot open for writing: " + path.string());
  const char extension[4] = {0, 0, 0, 0};
  auto put = [&](const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    while (n > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      if (gzwrite(f.get(), c, chunk) != static_cast<int>(chunk)) throw IoError("write failed: " + path.string());
      c += chunk;
      n -= chunk;
    }
  };
  put(&h, sizeof(h));
  put(extension, sizeof(extension));
  put(values.data(), values.size() * sizeof(T));
  if (gzclose(f.release()) != Z_OK) throw IoError("write failed: " + path.string());
}

}  // namespace

Volume load_volume_raw(const std::filesystem::path& path) {
  RawImage img = read_nifti(path);
  Volume v(img.shape, img.spacing);
  std::transform(img.values.begin(), img.values.end(), v.data.begin(), [](double x) { return static_cast<float>(x); });
  return v;
}

Volume load_volume(const std::filesystem::path& path) {
  RawImage img = read_nifti(path);
  const auto [lo, hi] = std::minmax_element(img.values.begin(), img.values.end());
  const double min = *lo;
  const double range = *hi - *lo;
  Volume v(img.shape, img.spacing);
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    v.data[i] = range > 0.0 ? static_cast<float>((img.values[i] - min) / range) : 0.0f;
  }
  return v;
}

LabelVolume load_labels(const std::filesystem::path& path, int num_classes) {
  RawImage img = read_nifti(path);
  std::int32_t max_label = 0;
  LabelVolume l(img.shape, img.spacing, 2);
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    const double v = img.values[i];
    if (v < 0 || v != std::round(v)) throw IoError("label volume holds a non-integer or negative value: " + path.string());
    l.data[i] = static_cast<std::int32_t>(v);
    max_label = std::max(max_label, l.data[i]);
  }
  l.num_classes = num_classes > 0 ? num_classes : std::max(2, max_label + 1);
  validate(l);
  return l;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  validate(v);
  float lo = 0.0f;
  float hi = 0.0f;
  if (!v.data.empty()) {
    const auto [a, b] = std::minmax_element(v.data.begin(), v.data.end());
    lo = *a;
    hi = *b;
  }
  write_nifti(path, v.shape, v.spacing, kFloat32, v.data, lo, hi);
}

void save_labels(const LabelVolume& l, const std::filesystem::path& path) {
  validate(l);
  if (l.num_classes > std::numeric_limits<std::int16_t>::max()) throw IoError("too many classes for int16 storage");
  std::vector<std::int16_t> out(l.data.begin(), l.data.end());
  write_nifti(path, l.shape, l.spacing, kInt16, out, 0.0f, static_cast<float>(l.num_classes - 1));
}

}  // namespace rehrseg
