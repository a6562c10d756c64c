#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "est/core.hpp"
#include "est/geometry.hpp"

namespace est::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace detail {

inline std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return tok;
  }
  throw IoError("unexpected end of header");
}

inline int parse_int(const std::string& s) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw IoError("bad integer: " + s);
    return v;
  } catch (const std::logic_error&) {
    throw IoError("bad integer: " + s);
  }
}

inline std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xFF00u) | ((v << 8) & 0xFF0000u) | (v << 24);
}

inline void put_le_f32(std::ostream& out, float f) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  if constexpr (std::endian::native == std::endian::big) bits = byteswap32(bits);
  out.write(reinterpret_cast<const char*>(&bits), 4);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PGM (binary P5). Written with maxval 65535 so synthetic intensities survive
// the round trip at 16-bit precision; 8-bit files are accepted on read.

inline void write_pgm(const fs::path& path, const Image<float>& img) {
  auto out = detail::open_out(path);
  out << "P5\n" << img.width() << ' ' << img.height() << "\n65535\n";
  for (float v : img.data()) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 65535.0));
    const char bytes[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xFF)};
    out.write(bytes, 2);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline Image<float> read_pgm(const fs::path& path) {
  auto in = detail::open_in(path);
  if (detail::next_token(in) != "P5") throw IoError(path.string() + ": not a binary PGM");
  const int w = detail::parse_int(detail::next_token(in));
  const int h = detail::parse_int(detail::next_token(in));
  const int maxval = detail::parse_int(detail::next_token(in));
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw IoError(path.string() + ": bad PGM header");
  in.get();
  Image<float> img(h, w);
  const bool wide = maxval > 255;
  for (auto& px : img.data()) {
    unsigned char b[2] = {0, 0};
    in.read(reinterpret_cast<char*>(b), wide ? 2 : 1);
    const unsigned q = wide ? (static_cast<unsigned>(b[0]) << 8) | b[1] : b[0];
    px = static_cast<float>(static_cast<double>(q) / maxval);
  }
  if (!in) throw IoError(path.string() + ": truncated PGM");
  return img;
}

// ---------------------------------------------------------------------------
// PFM, single channel ("Pf"). Negative scale = little-endian; rows are stored
// bottom-to-top.

inline void write_pfm(const fs::path& path, const Image<float>& img) {
  auto out = detail::open_out(path);
  out << "Pf\n" << img.width() << ' ' << img.height() << "\n-1.0\n";
  for (int y = img.height() - 1; y >= 0; --y)
    for (int x = 0; x < img.width(); ++x) detail::put_le_f32(out, img(y, x));
  if (!out) throw IoError("write failed: " + path.string());
}

inline Image<float> read_pfm(const fs::path& path) {
  auto in = detail::open_in(path);
  if (detail::next_token(in) != "Pf") throw IoError(path.string() + ": not a grayscale PFM");
  const int w = detail::parse_int(detail::next_token(in));
  const int h = detail::parse_int(detail::next_token(in));
  double scale = 0.0;
  try {
    scale = std::stod(detail::next_token(in));
  } catch (const std::logic_error&) {
    throw IoError(path.string() + ": bad PFM scale");
  }
  if (w <= 0 || h <= 0 || scale == 0.0) throw IoError(path.string() + ": bad PFM header");
  in.get();
  const bool little = scale < 0.0;
  const bool swap = little != (std::endian::native == std::endian::little);
  Image<float> img(h, w);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      std::uint32_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), 4);
      if (swap) bits = detail::byteswap32(bits);
      img(y, x) = std::bit_cast<float>(bits);
    }
  }
  if (!in) throw IoError(path.string() + ": truncated PFM");
  return img;
}

// ---------------------------------------------------------------------------
// Camera text formats: one pose per line as the row-major 3x4 [R|t]
// (camera-from-world); intrinsics as "fx fy cx cy width height".

inline std::string format_pose(const geometry::Pose& p) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) os << p.rotation(r, c) << ' ';
    os << p.translation(r) << (r < 2 ? " " : "");
  }
  return os.str();
}

inline geometry::Pose parse_pose(const std::string& line) {
  std::istringstream is(line);
  double v[12];
  for (double& x : v)
    if (!(is >> x)) throw IoError("pose line needs 12 numbers");
  std::string extra;
  if (is >> extra) throw IoError("pose line has trailing data");
  geometry::Pose p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = v[r * 4 + c];
    p.translation(r) = v[r * 4 + 3];
  }
  return p;
}

inline void write_poses(const fs::path& path, const std::vector<geometry::Pose>& poses) {
  auto out = detail::open_out(path);
  for (const auto& p : poses) out << format_pose(p) << '\n';
}

inline std::vector<geometry::Pose> read_poses(const fs::path& path) {
  auto in = detail::open_in(path);
  std::vector<geometry::Pose> poses;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    poses.push_back(parse_pose(line));
  }
  return poses;
}

inline void write_intrinsics(const fs::path& path, const geometry::Intrinsics& k) {
  auto out = detail::open_out(path);
  out << std::setprecision(17) << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy << ' ' << k.width << ' '
      << k.height << '\n';
}

inline geometry::Intrinsics read_intrinsics(const fs::path& path) {
  auto in = detail::open_in(path);
  geometry::Intrinsics k;
  if (!(in >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) throw IoError(path.string() + ": bad intrinsics");
  return k;
}

// ---------------------------------------------------------------------------
// Raw float32 blobs with a JSON sidecar describing the shape.

inline void write_raw_f32(const fs::path& path, std::span<const float> values) {
  auto out = detail::open_out(path);
  for (float f : values) detail::put_le_f32(out, f);
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<float> read_raw_f32(const fs::path& path, std::size_t count) {
  auto in = detail::open_in(path);
  std::vector<float> v(count);
  const bool swap = std::endian::native != std::endian::little;
  for (auto& f : v) {
    std::uint32_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), 4);
    if (swap) bits = detail::byteswap32(bits);
    f = std::bit_cast<float>(bits);
  }
  if (!in) throw IoError(path.string() + ": blob shorter than declared shape");
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": blob longer than declared shape");
  return v;
}

inline json camera_json(const geometry::Camera& cam) {
  const auto& k = cam.intrinsics;
  return {{"intrinsics", {k.fx, k.fy, k.cx, k.cy, k.width, k.height}}, {"pose", format_pose(cam.pose)}};
}

/// Dumps a volume as `<stem>.f32` plus `<stem>.json`.
inline void dump_volume(const fs::path& stem, const Volume<float>& vol, const json& extra = json::object()) {
  fs::path blob = stem;
  blob += ".f32";
  fs::path meta = stem;
  meta += ".json";
  write_raw_f32(blob, vol.data());
  json j = extra;
  j["shape"] = {vol.channels(), vol.depth(), vol.height(), vol.width()};
  j["layout"] = "channel,depth,row,column";
  j["dtype"] = "float32le";
  j["blob"] = blob.filename().string();
  auto out = detail::open_out(meta);
  out << j.dump(2) << '\n';
}

inline Volume<float> load_volume(const fs::path& sidecar) {
  auto in = detail::open_in(sidecar);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(sidecar.string() + ": " + e.what());
  }
  const auto shape = j.at("shape").get<std::array<int, 4>>();
  Volume<float> vol(shape[0], shape[1], shape[2], shape[3]);
  const auto data = read_raw_f32(sidecar.parent_path() / j.at("blob").get<std::string>(), vol.size());
  std::copy(data.begin(), data.end(), vol.data().begin());
  return vol;
}

}  // namespace est::io
