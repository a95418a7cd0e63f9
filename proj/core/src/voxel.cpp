#include "ssc/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ssc/tensor_io.hpp"

namespace ssc {

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("camera: focal lengths must be > 0");
  if (width == 0 || height == 0) throw std::invalid_argument("camera: image size must be nonzero");
  if (!(cx >= 0 && cx < static_cast<double>(width)) || !(cy >= 0 && cy < static_cast<double>(height))) {
    throw std::invalid_argument("camera: principal point outside the image");
  }
}

Vec3 CameraIntrinsics::pixel_ray(std::size_t u, std::size_t v) const {
  return {(static_cast<double>(u) + 0.5 - cx) / fx, (static_cast<double>(v) + 0.5 - cy) / fy, 1.0};
}

bool CameraIntrinsics::project(const Vec3& p, std::size_t& u, std::size_t& v) const {
  if (!(p[2] > 0)) return false;
  const double pu = fx * p[0] / p[2] + cx;
  const double pv = fy * p[1] / p[2] + cy;
  if (!(pu >= 0 && pv >= 0)) return false;
  const double fu = std::floor(pu), fv = std::floor(pv);
  if (fu >= static_cast<double>(width) || fv >= static_cast<double>(height)) return false;
  u = static_cast<std::size_t>(fu);
  v = static_cast<std::size_t>(fv);
  return true;
}

void VoxelGridSpec::validate() const {
  for (auto d : dims)
    if (d < 1) throw std::invalid_argument("grid: every dimension must be >= 1");
  if (!(voxel_size > 0)) throw std::invalid_argument("grid: voxel_size must be > 0");
  if (!(truncation > 0)) throw std::invalid_argument("grid: truncation must be > 0");
}

KeyValues VoxelGridSpec::to_keyvalues() const {
  KeyValues kv;
  std::ostringstream os;
  os.precision(17);
  kv.set("dims", join_sizes({dims[0], dims[1], dims[2]}, 'x'));
  os << voxel_size;
  kv.set("voxel_size", os.str());
  os.str("");
  os << origin[0] << ',' << origin[1] << ',' << origin[2];
  kv.set("origin", os.str());
  os.str("");
  os << truncation;
  kv.set("truncation", os.str());
  return kv;
}

VoxelGridSpec VoxelGridSpec::from_keyvalues(const KeyValues& kv) {
  VoxelGridSpec g;
  if (kv.has("dims")) {
    auto d = parse_sizes(kv.get("dims"), "dims");
    if (d.size() != 3) throw std::invalid_argument("dims: expected 3 extents");
    g.dims = {d[0], d[1], d[2]};
  }
  g.voxel_size = kv.get_double("voxel_size", g.voxel_size);
  g.truncation = kv.get_double("truncation", g.truncation);
  if (kv.has("origin")) {
    std::string s = kv.get("origin");
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream is(s);
    Vec3 o{};
    if (!(is >> o[0] >> o[1] >> o[2])) throw std::invalid_argument("origin: expected x,y,z");
    g.origin = o;
  }
  g.validate();
  return g;
}

namespace {

void check_inputs(const DepthImage& depth, const CameraIntrinsics& cam, const VoxelGridSpec& grid) {
  cam.validate();
  grid.validate();
  if (!depth.matches(cam)) {
    throw std::invalid_argument("depth image is " + std::to_string(depth.width) + "x" +
                                std::to_string(depth.height) + ", camera expects " +
                                std::to_string(cam.width) + "x" + std::to_string(cam.height));
  }
}

// Pixel depth in metres for the pixel a voxel centre projects to; false when
// outside the frustum or the reading is missing.
bool voxel_pixel_depth(const DepthImage& depth, const CameraIntrinsics& cam, const Vec3& c,
                       double& out) {
  std::size_t u = 0, v = 0;
  if (!cam.project(c, u, v)) return false;
  const std::uint16_t mm = depth.at(u, v);
  if (mm == 0) return false;
  out = static_cast<double>(mm) / 1000.0;
  return true;
}

float flip_value(float v) {
  const float s = v >= 0.0f ? 1.0f : -1.0f;
  return s * (1.0f - std::abs(v));
}

}  // namespace

TsdfVolume depth_to_tsdf(const DepthImage& depth, const CameraIntrinsics& cam,
                         const VoxelGridSpec& grid, TsdfMode mode) {
  check_inputs(depth, cam, grid);
  TsdfVolume t{grid, TsdfMode::Standard, TensorF(grid.shape())};
  std::vector<std::size_t> outside;
  std::size_t idx = 0;
  for (std::size_t i = 0; i < grid.dims[0]; ++i)
    for (std::size_t j = 0; j < grid.dims[1]; ++j)
      for (std::size_t k = 0; k < grid.dims[2]; ++k, ++idx) {
        const Vec3 c = grid.voxel_center(i, j, k);
        double d = 0;
        if (!voxel_pixel_depth(depth, cam, c, d)) {
          outside.push_back(idx);
          continue;
        }
        const double sdf = std::clamp((d - c[2]) / grid.truncation, -1.0, 1.0);
        t.values[idx] = static_cast<float>(sdf);
      }
  if (mode == TsdfMode::Standard) return t;
  // Unobserved voxels carry no surface evidence: 0 in both modes (flip(0) would give 1).
  TsdfVolume f = flip_tsdf(t);
  for (std::size_t v : outside) f.values[v] = 0.0f;
  return f;
}

TsdfVolume flip_tsdf(const TsdfVolume& standard) {
  if (standard.mode == TsdfMode::Flipped) {
    throw std::logic_error("flip_tsdf: volume is already flipped");
  }
  TsdfVolume f{standard.grid, TsdfMode::Flipped, TensorF(standard.values.shape())};
  for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = flip_value(standard.values[i]);
  return f;
}

VisibilityVolume compute_visibility(const DepthImage& depth, const CameraIntrinsics& cam,
                                    const VoxelGridSpec& grid) {
  check_inputs(depth, cam, grid);
  VisibilityVolume vis{grid, TensorU8(grid.shape())};
  std::size_t idx = 0;
  for (std::size_t i = 0; i < grid.dims[0]; ++i)
    for (std::size_t j = 0; j < grid.dims[1]; ++j)
      for (std::size_t k = 0; k < grid.dims[2]; ++k, ++idx) {
        const Vec3 c = grid.voxel_center(i, j, k);
        double d = 0;
        VoxelState s = VoxelState::OutsideFrustum;
        if (voxel_pixel_depth(depth, cam, c, d)) {
          if (c[2] < d - grid.truncation) s = VoxelState::ObservedFree;
          else if (c[2] > d + grid.truncation) s = VoxelState::Occluded;
          else s = VoxelState::ObservedSurface;
        }
        vis.states[idx] = static_cast<std::uint8_t>(s);
      }
  return vis;
}

TensorU8 binary_occupancy_labels(const TensorU8& labels) {
  TensorU8 out(labels.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::uint8_t c = labels[i];
    out[i] = c == kUnlabeled ? kUnlabeled : (c == 0 ? 0 : 1);
  }
  return out;
}

LabelVolume binary_occupancy_labels(const LabelVolume& labels) {
  return {labels.grid, binary_occupancy_labels(labels.labels)};
}

TensorF tsdf_input(const TsdfVolume& tsdf) {
  const auto& d = tsdf.grid.dims;
  return tsdf.values.reshaped({1, d[0], d[1], d[2]});
}

// ---- files -------------------------------------------------------------------

void save_depth_pgm(const std::filesystem::path& path, const DepthImage& depth) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "P5\n" << depth.width << ' ' << depth.height << "\n65535\n";
  std::vector<char> buf(depth.mm.size() * 2);
  for (std::size_t i = 0; i < depth.mm.size(); ++i) {
    buf[2 * i] = static_cast<char>(depth.mm[i] >> 8);
    buf[2 * i + 1] = static_cast<char>(depth.mm[i] & 0xff);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

namespace {

// Next whitespace-delimited PGM header token, skipping '#' comments.
std::string pgm_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok += static_cast<char>(ch);
  }
  return tok;
}

}  // namespace

DepthImage load_depth_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  const std::string where = path.string() + ": ";
  if (pgm_token(is) != "P5") throw std::runtime_error(where + "not a binary PGM (P5)");
  const long long w = parse_int(pgm_token(is), where + "width");
  const long long h = parse_int(pgm_token(is), where + "height");
  const long long maxval = parse_int(pgm_token(is), where + "maxval");
  if (w <= 0 || h <= 0) throw std::runtime_error(where + "bad image size");
  if (maxval < 256 || maxval > 65535) throw std::runtime_error(where + "expected a 16-bit PGM");
  DepthImage d(static_cast<std::size_t>(w), static_cast<std::size_t>(h));
  std::vector<unsigned char> buf(d.mm.size() * 2);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) {
    throw std::runtime_error(where + "truncated pixel data");
  }
  for (std::size_t i = 0; i < d.mm.size(); ++i) {
    d.mm[i] = static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
  }
  return d;
}

void save_camera(const std::filesystem::path& path, const CameraIntrinsics& cam) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.precision(17);
  os << "fx=" << cam.fx << "\nfy=" << cam.fy << "\ncx=" << cam.cx << "\ncy=" << cam.cy
     << "\nsize=" << cam.width << 'x' << cam.height << '\n';
}

CameraIntrinsics camera_from_keyvalues(const KeyValues& kv) {
  kv.reject_unknown({"fx", "fy", "cx", "cy", "size"}, "camera");
  CameraIntrinsics cam;
  cam.fx = parse_double(kv.get("fx"), "fx");
  cam.fy = parse_double(kv.get("fy"), "fy");
  cam.cx = parse_double(kv.get("cx"), "cx");
  cam.cy = parse_double(kv.get("cy"), "cy");
  const auto size = parse_sizes(kv.get("size"), "size");
  if (size.size() != 2) throw std::invalid_argument("size: expected WxH");
  cam.width = size[0];
  cam.height = size[1];
  cam.validate();
  return cam;
}

CameraIntrinsics load_camera(const std::filesystem::path& path) {
  try {
    return camera_from_keyvalues(KeyValues::load(path));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void save_sample(const std::filesystem::path& dir, const SceneSample& s) {
  std::filesystem::create_directories(dir);
  save_depth_pgm(dir / "depth.pgm", s.depth);
  save_camera(dir / "camera.txt", s.camera);
  KeyValues meta = s.labels.grid.to_keyvalues();
  meta.set("tsdf_mode", s.tsdf.mode == TsdfMode::Flipped ? "flipped" : "standard");
  {
    std::ofstream os(dir / "sample.txt");
    if (!os) throw std::runtime_error("cannot write " + (dir / "sample.txt").string());
    os << meta.to_text();
  }
  save_vxt(dir / "labels.vxt", s.labels.labels);
  save_vxt(dir / "tsdf.vxt", s.tsdf.values);
  save_vxt(dir / "visibility.vxt", s.visibility.states);
}

SceneSample load_sample(const std::filesystem::path& dir) {
  SceneSample s;
  KeyValues meta = KeyValues::load(dir / "sample.txt");
  meta.reject_unknown({"dims", "voxel_size", "origin", "truncation", "tsdf_mode"},
                      (dir / "sample.txt").string());
  const VoxelGridSpec grid = VoxelGridSpec::from_keyvalues(meta);
  const std::string mode = meta.get_or("tsdf_mode", "flipped");
  if (mode != "flipped" && mode != "standard") {
    throw std::invalid_argument((dir / "sample.txt").string() + ": bad tsdf_mode '" + mode + "'");
  }
  s.depth = load_depth_pgm(dir / "depth.pgm");
  s.camera = load_camera(dir / "camera.txt");
  s.labels = {grid, load_vxt<std::uint8_t>(dir / "labels.vxt")};
  s.tsdf = {grid, mode == "flipped" ? TsdfMode::Flipped : TsdfMode::Standard,
            load_vxt<float>(dir / "tsdf.vxt")};
  s.visibility = {grid, load_vxt<std::uint8_t>(dir / "visibility.vxt")};
  const Shape expect = grid.shape();
  for (const auto* shape : {&s.labels.labels.shape(), &s.tsdf.values.shape(), &s.visibility.states.shape()}) {
    if (*shape != expect) {
      throw std::runtime_error(dir.string() + ": volume shape " + shape_to_string(*shape) +
                               " differs from grid " + shape_to_string(expect));
    }
  }
  return s;
}

void export_points(std::ostream& os, const LabelVolume& labels) {
  const auto& d = labels.grid.dims;
  std::size_t idx = 0;
  for (std::size_t i = 0; i < d[0]; ++i)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t k = 0; k < d[2]; ++k, ++idx) {
        const std::uint8_t c = labels.labels[idx];
        if (c == 0 || c == kUnlabeled) continue;
        os << i << ' ' << j << ' ' << k << ' ' << static_cast<int>(c) << '\n';
      }
}

}  // namespace ssc
