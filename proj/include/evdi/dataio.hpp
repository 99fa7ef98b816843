// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <png.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "evdi/common.hpp"
#include "evdi/event_model.hpp"
#include "evdi/geometry.hpp"
#include "evdi/imaging.hpp"

namespace evdi {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string lower_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

inline std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(detail::concat("cannot open '", path.string(), "' for reading"));
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(detail::concat("cannot open '", path.string(), "' for writing"));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(detail::concat("write failed for '", path.string(), "'"));
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(detail::concat("cannot open '", path.string(), "' for writing"));
  out << text;
  if (!out) throw FormatError(detail::concat("write failed for '", path.string(), "'"));
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

// Shortest decimal text that parses back to the same double.
inline std::string exact_number(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
    text.remove_suffix(1);
  }
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

// prefix + zero-padded 4-digit index + ext, e.g. "blur_0007.png".
inline std::string numbered_name(std::string_view prefix, std::size_t index, std::string_view ext) {
  std::string digits = std::to_string(index);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return std::string(prefix) + digits + std::string(ext);
}

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Events: EVT1 binary and CSV
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kEvt1Magic{'E', 'V', 'T', '1'};
inline constexpr std::uint16_t kEvt1Version = 1;
inline constexpr std::size_t kEvt1HeaderBytes = 4 + 2 + 2 + 2 + 8;
inline constexpr std::size_t kEvt1RecordBytes = 8 + 2 + 2 + 1;
inline constexpr std::string_view kEventsCsvHeader = "t_us,x,y,p";

inline std::vector<std::uint8_t> encode_evt1(const EventStream& stream) {
  std::vector<std::uint8_t> out;
  out.reserve(kEvt1HeaderBytes + stream.size() * kEvt1RecordBytes);
  out.insert(out.end(), kEvt1Magic.begin(), kEvt1Magic.end());
  detail::put_le<std::uint16_t>(out, kEvt1Version);
  detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(stream.width()));
  detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(stream.height()));
  detail::put_le<std::uint64_t>(out, stream.size());
  for (const Event& e : stream.events()) {
    detail::put_le<std::uint64_t>(out, e.t);
    detail::put_le<std::uint16_t>(out, e.x);
    detail::put_le<std::uint16_t>(out, e.y);
    out.push_back(e.p > 0 ? 1 : 0);
  }
  return out;
}

/// Parses EVT1 bytes. Records must already be in stream order.
inline EventStream decode_evt1(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  if (bytes.size() < kEvt1HeaderBytes) {
    throw FormatError(detail::concat(name, ": truncated EVT1 header at byte offset ", bytes.size(),
                                     " (need ", kEvt1HeaderBytes, " bytes)"));
  }
  if (std::memcmp(bytes.data(), kEvt1Magic.data(), 4) != 0) {
    throw FormatError(detail::concat(name, ": bad magic at byte offset 0, expected 'EVT1'"));
  }
  const auto version = detail::get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kEvt1Version) {
    throw FormatError(detail::concat(name, ": unsupported EVT1 version ", version,
                                     " at byte offset 4"));
  }
  const int width = detail::get_le<std::uint16_t>(bytes.data() + 6);
  const int height = detail::get_le<std::uint16_t>(bytes.data() + 8);
  const auto count = detail::get_le<std::uint64_t>(bytes.data() + 10);
  const std::size_t payload = bytes.size() - kEvt1HeaderBytes;
  if (count > payload / kEvt1RecordBytes) {
    const std::size_t complete = payload / kEvt1RecordBytes;
    throw FormatError(detail::concat(name, ": truncated record ", complete, " at byte offset ",
                                     kEvt1HeaderBytes + complete * kEvt1RecordBytes, " (header declares ",
                                     count, " events)"));
  }
  if (payload != count * kEvt1RecordBytes) {
    throw FormatError(detail::concat(name, ": unexpected trailing bytes at byte offset ",
                                     kEvt1HeaderBytes + count * kEvt1RecordBytes));
  }
  std::vector<Event> events(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t offset = kEvt1HeaderBytes + i * kEvt1RecordBytes;
    const std::uint8_t* rec = bytes.data() + offset;
    Event& e = events[i];
    e.t = detail::get_le<std::uint64_t>(rec);
    e.x = detail::get_le<std::uint16_t>(rec + 8);
    e.y = detail::get_le<std::uint16_t>(rec + 10);
    const std::uint8_t p = rec[12];
    if (p > 1) {
      throw FormatError(detail::concat(name, ": invalid polarity byte ", int(p),
                                       " at byte offset ", offset + 12));
    }
    e.p = p == 1 ? 1 : -1;
    if (e.x >= width || e.y >= height) {
      throw FormatError(detail::concat(name, ": event ", i, " at byte offset ", offset,
                                       " lies outside ", width, "x", height));
    }
    if (i > 0) {
      const Event& prev = events[i - 1];
      const bool ordered = prev.t < e.t || (prev.t == e.t && (prev.y < e.y || (prev.y == e.y && prev.x <= e.x)));
      if (!ordered) {
        throw FormatError(detail::concat(name, ": event ", i, " at byte offset ", offset,
                                         " breaks (t, y, x) ordering"));
      }
    }
  }
  return build_stream(std::move(events), width, height);
}

struct StreamSize {
  int width = 0;
  int height = 0;
};

inline void write_events_csv(const fs::path& path, const EventStream& stream) {
  std::string text(kEventsCsvHeader);
  text += '\n';
  for (const Event& e : stream.events()) {
    text += detail::concat(e.t, ',', e.x, ',', e.y, ',', int(e.p), '\n');
  }
  detail::write_text(path, text);
}

inline EventStream read_events_csv(const fs::path& path, StreamSize size) {
  std::ifstream in(path);
  if (!in) throw FormatError(detail::concat("cannot open '", path.string(), "' for reading"));
  std::string line;
  if (!std::getline(in, line) || detail::strip_cr(line) != kEventsCsvHeader) {
    throw FormatError(detail::concat(path.string(), ": line 1: expected header '",
                                     kEventsCsvHeader, "'"));
  }
  std::vector<Event> events;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    std::uint64_t t = 0;
    unsigned x = 0, y = 0;
    int p = 0;
    if (f.size() != 4 || !detail::parse_number(f[0], t) || !detail::parse_number(f[1], x) ||
        !detail::parse_number(f[2], y) || !detail::parse_number(f[3], p)) {
      throw FormatError(detail::concat(path.string(), ": line ", line_no, ": malformed event row"));
    }
    if (p != 1 && p != -1) {
      throw FormatError(detail::concat(path.string(), ": line ", line_no, ": polarity ", p,
                                       " not in {-1, 1}"));
    }
    if (x >= static_cast<unsigned>(size.width) || y >= static_cast<unsigned>(size.height)) {
      throw FormatError(detail::concat(path.string(), ": line ", line_no, ": pixel (", x, ", ", y,
                                       ") outside ", size.width, "x", size.height));
    }
    events.push_back({t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                      static_cast<std::int8_t>(p)});
  }
  return build_stream(std::move(events), size.width, size.height);
}

/// Writes EVT1 binary, or CSV when the extension is ".csv".
inline void write_events(const fs::path& path, const EventStream& stream) {
  if (detail::lower_extension(path) == ".csv") {
    write_events_csv(path, stream);
  } else {
    detail::write_bytes(path, encode_evt1(stream));
  }
}

/// Reads EVT1 or CSV (by extension). CSV carries no sensor size, so `size`
/// is required there; for EVT1 it is checked against the header when given.
inline EventStream read_events(const fs::path& path, std::optional<StreamSize> size = std::nullopt) {
  if (detail::lower_extension(path) == ".csv") {
    if (!size) {
      throw FormatError(detail::concat(path.string(), ": CSV events need an explicit sensor size"));
    }
    return read_events_csv(path, *size);
  }
  EventStream stream = decode_evt1(detail::read_bytes(path), path.string());
  if (size && (size->width != stream.width() || size->height != stream.height())) {
    throw FormatError(detail::concat(path.string(), ": header size ", stream.width(), "x",
                                     stream.height(), " differs from expected ", size->width, "x",
                                     size->height));
  }
  return stream;
}

// ---------------------------------------------------------------------------
// Images: PFM (linear float) and PNG (8/16-bit, display encoded)
// ---------------------------------------------------------------------------

inline void write_pfm(const fs::path& path, const ImageBuffer& img) {
  const std::string header = detail::concat(img.channels() == 3 ? "PF" : "Pf", '\n', img.width(),
                                            ' ', img.height(), '\n', "-1.0", '\n');
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + img.data().size() * 4);
  for (int y = img.height() - 1; y >= 0; --y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        const float v = static_cast<float>(img(x, y, c));
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        detail::put_le<std::uint32_t>(bytes, bits);
      }
    }
  }
  detail::write_bytes(path, bytes);
}

inline ImageBuffer read_pfm(const fs::path& path) {
  const auto bytes = detail::read_bytes(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
    if (start == pos) {
      throw FormatError(detail::concat(path.string(), ": truncated PFM header at byte offset ", pos));
    }
    return std::string(bytes.begin() + start, bytes.begin() + pos);
  };
  const std::string kind = token();
  if (kind != "PF" && kind != "Pf") {
    throw FormatError(detail::concat(path.string(), ": bad PFM magic '", kind, "' at byte offset 0"));
  }
  int width = 0, height = 0;
  double scale = 0.0;
  if (!detail::parse_number(token(), width) || !detail::parse_number(token(), height) ||
      !detail::parse_number(token(), scale) || width <= 0 || height <= 0 || scale == 0.0) {
    throw FormatError(detail::concat(path.string(), ": malformed PFM header"));
  }
  ++pos;  // single whitespace byte ends the header
  const int channels = kind == "PF" ? 3 : 1;
  const bool little = scale < 0.0;
  const std::size_t need = static_cast<std::size_t>(width) * height * channels * 4;
  if (bytes.size() < pos + need) {
    throw FormatError(detail::concat(path.string(), ": truncated PFM pixel data at byte offset ",
                                     bytes.size(), " (need ", pos + need, ")"));
  }
  ImageBuffer img(width, height, channels, Domain::Linear);
  const std::uint8_t* p = bytes.data() + pos;
  for (int y = height - 1; y >= 0; --y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        std::uint32_t bits = little ? detail::get_le<std::uint32_t>(p)
                                    : (std::uint32_t(p[0]) << 24 | std::uint32_t(p[1]) << 16 |
                                       std::uint32_t(p[2]) << 8 | std::uint32_t(p[3]));
        float v;
        std::memcpy(&v, &bits, 4);
        img(x, y, c) = v;
        p += 4;
      }
    }
  }
  img.validate();
  return img;
}

namespace detail {

inline void png_warning_sink(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads 8- or 16-bit gray/RGB PNG into [0, 1]. Values are tagged
/// gamma-encoded unless the caller declares the file linear.
inline ImageBuffer read_png(const fs::path& path, bool declared_linear = false) {
  FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw FormatError(detail::concat("cannot open '", path.string(), "' for reading"));
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                           detail::png_warning_sink);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError(detail::concat(path.string(), ": corrupt or unreadable PNG"));
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_get_IHDR(png, info, &width, &height, &bit_depth, &color_type, nullptr, nullptr, nullptr);
  if (bit_depth != 8 && bit_depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError(detail::concat(path.string(), ": unsupported PNG bit depth ", bit_depth,
                                     " (expected 8 or 16)"));
  }
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int channels = png_get_channels(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  pixels.resize(row_bytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  if (channels != 1 && channels != 3) {
    throw FormatError(detail::concat(path.string(), ": unsupported PNG channel count ", channels));
  }
  ImageBuffer img(static_cast<int>(width), static_cast<int>(height), channels,
                  declared_linear ? Domain::Linear : Domain::Gamma);
  auto out = img.data();
  const double scale = bit_depth == 16 ? 65535.0 : 255.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = bit_depth == 16 ? double(pixels[2 * i] << 8 | pixels[2 * i + 1])
                                     : double(pixels[i]);
    out[i] = v / scale;
  }
  return img;
}

/// Writes values clamped to [0, 1] and quantized to `bit_depth` bits. No
/// transfer function is applied; encode linear data before calling.
inline void write_png(const fs::path& path, const ImageBuffer& img, int bit_depth = 16) {
  if (bit_depth != 8 && bit_depth != 16) {
    throw FormatError(detail::concat("unsupported PNG bit depth ", bit_depth));
  }
  const std::size_t bytes_per = bit_depth / 8;
  const std::size_t row_bytes = static_cast<std::size_t>(img.width()) * img.channels() * bytes_per;
  std::vector<std::uint8_t> pixels(row_bytes * img.height());
  auto src = img.data();
  const double scale = bit_depth == 16 ? 65535.0 : 255.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto q = static_cast<unsigned>(std::lround(std::clamp(src[i], 0.0, 1.0) * scale));
    if (bit_depth == 16) {
      pixels[2 * i] = static_cast<std::uint8_t>(q >> 8);
      pixels[2 * i + 1] = static_cast<std::uint8_t>(q & 0xFF);
    } else {
      pixels[i] = static_cast<std::uint8_t>(q);
    }
  }
  std::vector<png_bytep> rows(img.height());
  for (int y = 0; y < img.height(); ++y) rows[y] = pixels.data() + y * row_bytes;

  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw FormatError(detail::concat("cannot open '", path.string(), "' for writing"));
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                            detail::png_warning_sink);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw FormatError(detail::concat("failed writing PNG '", path.string(), "'"));
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.width(), img.height(), bit_depth,
               img.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) {
    throw FormatError(detail::concat("failed closing PNG '", path.string(), "'"));
  }
}

struct ImageReadOptions {
  bool png_is_linear = false;
};

/// Dispatches on extension: .pfm (linear float) or .png.
inline ImageBuffer read_image(const fs::path& path, const ImageReadOptions& opts = {}) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".pfm") return read_pfm(path);
  if (ext == ".png") return read_png(path, opts.png_is_linear);
  throw FormatError(detail::concat(path.string(), ": unsupported image extension '", ext, "'"));
}

inline void write_image(const fs::path& path, const ImageBuffer& img, int png_bit_depth = 16) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".pfm") return write_pfm(path, img);
  if (ext == ".png") return write_png(path, img, png_bit_depth);
  throw FormatError(detail::concat(path.string(), ": unsupported image extension '", ext, "'"));
}

/// Reads any supported image and returns it in the linear domain.
inline ImageBuffer read_linear_image(const fs::path& path, const GammaCurve& curve,
                                     const ImageReadOptions& opts = {}) {
  ImageBuffer img = read_image(path, opts);
  return img.domain() == Domain::Linear ? img : to_linear(img, curve);
}

// ---------------------------------------------------------------------------
// Poses CSV
// ---------------------------------------------------------------------------

inline constexpr std::string_view kPosesCsvHeader = "t_us,tx,ty,tz,qw,qx,qy,qz";

inline PoseTrack read_poses(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(detail::concat("cannot open '", path.string(), "' for reading"));
  std::string line;
  if (!std::getline(in, line) || detail::strip_cr(line) != kPosesCsvHeader) {
    throw FormatError(detail::concat(path.string(), ": line 1: expected header '", kPosesCsvHeader, "'"));
  }
  std::vector<Pose> poses;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    Pose pose;
    std::array<double, 7> v{};
    bool ok = f.size() == 8 && detail::parse_number(f[0], pose.t);
    for (std::size_t i = 0; ok && i < 7; ++i) ok = detail::parse_number(f[i + 1], v[i]);
    if (!ok) throw FormatError(detail::concat(path.string(), ": row ", line_no, ": malformed pose row"));
    pose.translation = {v[0], v[1], v[2]};
    Quaternion q{v[3], v[4], v[5], v[6]};
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw FormatError(detail::concat(path.string(), ": row ", line_no, ": degenerate quaternion"));
    }
    if (std::abs(n - 1.0) > 1e-3) {
      spdlog::warn("{}: row {}: quaternion norm {} normalized", path.string(), line_no, n);
    }
    pose.rotation = std::abs(n - 1.0) > 1e-12 ? q.normalized() : q;
    if (!poses.empty() && pose.t <= poses.back().t) {
      throw FormatError(detail::concat(path.string(), ": row ", line_no, ": timestamp ", pose.t,
                                       " does not increase (previous ", poses.back().t, ")"));
    }
    poses.push_back(pose);
  }
  return PoseTrack(std::move(poses));
}

inline void write_poses(const fs::path& path, const PoseTrack& track) {
  std::string text(kPosesCsvHeader);
  text += '\n';
  for (const Pose& p : track.poses()) {
    text += std::to_string(p.t);
    for (double v : {p.translation[0], p.translation[1], p.translation[2], p.rotation.w,
                     p.rotation.x, p.rotation.y, p.rotation.z}) {
      text += ',' + detail::exact_number(v);
    }
    text += '\n';
  }
  detail::write_text(path, text);
}

// ---------------------------------------------------------------------------
// Dataset manifest (JSON)
// ---------------------------------------------------------------------------

using Json = nlohmann::ordered_json;

struct ManifestView {
  Timestamp t_mid_us = 0;
  std::string blur;
  std::optional<std::string> sharp;
  Json extra = Json::object();
};

/// Paths are stored relative to the manifest's directory.
struct DatasetManifest {
  fs::path base_dir;
  std::string events;
  std::optional<std::string> poses;
  std::optional<int> width;
  std::optional<int> height;
  std::optional<TimeSpan> events_span;
  Timestamp exposure_us = 0;
  double theta = 0.2;
  std::optional<double> theta_neg;
  std::optional<BayerPattern> bayer;
  GammaCurve gamma = GammaCurve::power(2.2);
  bool frames_linear = false;
  std::vector<ManifestView> views;
  Json extra = Json::object();

  fs::path resolve(const std::string& rel) const { return base_dir / rel; }
  ThresholdConfig thresholds() const { return {theta, theta_neg.value_or(theta)}; }
  bool has_ground_truth() const {
    return !views.empty() &&
           std::all_of(views.begin(), views.end(), [](const ManifestView& v) { return v.sharp.has_value(); });
  }
};

inline std::string gamma_to_string(const GammaCurve& g) {
  return g.mode == GammaCurve::Mode::Srgb ? std::string("srgb") : "power:" + detail::exact_number(g.gamma);
}

inline GammaCurve parse_gamma(std::string_view text) {
  if (text == "srgb") return GammaCurve::srgb();
  if (text.starts_with("power:")) {
    double g = 0.0;
    if (detail::parse_number(text.substr(6), g)) return GammaCurve::power(g);
  }
  throw ArgumentError(detail::concat("unknown gamma '", text, "' (expected 'srgb' or 'power:G')"));
}

inline Json manifest_to_json(const DatasetManifest& m) {
  Json j = Json::object();
  j["format"] = "evdi-dataset";
  j["version"] = 1;
  j["events"] = m.events;
  if (m.events_span) {
    j["events_begin_us"] = m.events_span->begin;
    j["events_end_us"] = m.events_span->end;
  }
  if (m.width) j["width"] = *m.width;
  if (m.height) j["height"] = *m.height;
  if (m.poses) j["poses"] = *m.poses;
  j["exposure_us"] = m.exposure_us;
  j["theta"] = m.theta;
  if (m.theta_neg) j["theta_neg"] = *m.theta_neg;
  if (m.bayer) j["bayer_pattern"] = std::string(to_string(*m.bayer));
  j["gamma"] = gamma_to_string(m.gamma);
  j["frames_linear"] = m.frames_linear;
  Json views = Json::array();
  for (const ManifestView& v : m.views) {
    Json jv = Json::object();
    jv["t_mid_us"] = v.t_mid_us;
    jv["blur"] = v.blur;
    if (v.sharp) jv["sharp"] = *v.sharp;
    for (auto& [k, val] : v.extra.items()) jv[k] = val;
    views.push_back(std::move(jv));
  }
  j["views"] = std::move(views);
  for (auto& [k, val] : m.extra.items()) j[k] = val;
  return j;
}

namespace detail {

inline const Json& require_key(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(concat(where, ": missing required key '", key, "'"));
  return j.at(key);
}

template <typename T>
T get_as(const Json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(concat(where, ": key '", key, "' has the wrong type"));
  }
}

}  // namespace detail

/// Parses a manifest document. Paths are checked only by read_manifest.
inline DatasetManifest manifest_from_json(const Json& j, const fs::path& base_dir,
                                          const std::string& where) {
  static const std::vector<std::string> kKnown{
      "format", "version", "events", "events_begin_us", "events_end_us", "width", "height", "poses",
      "exposure_us", "theta", "theta_neg", "bayer_pattern", "gamma", "frames_linear", "views"};
  if (!j.is_object()) throw FormatError(where + ": manifest must be a JSON object");
  DatasetManifest m;
  m.base_dir = base_dir;
  for (const char* key : {"events", "exposure_us", "theta", "views"}) detail::require_key(j, key, where);
  m.events = detail::get_as<std::string>(j, "events", where);
  m.exposure_us = detail::get_as<Timestamp>(j, "exposure_us", where);
  if (m.exposure_us == 0) throw FormatError(where + ": 'exposure_us' must be positive");
  m.theta = detail::get_as<double>(j, "theta", where);
  if (j.contains("theta_neg")) m.theta_neg = detail::get_as<double>(j, "theta_neg", where);
  try {
    (void)m.thresholds();
  } catch (const ArgumentError& e) {
    throw FormatError(where + ": " + e.what());
  }
  if (j.contains("events_begin_us") != j.contains("events_end_us")) {
    throw FormatError(where + ": 'events_begin_us' and 'events_end_us' must appear together");
  }
  if (j.contains("events_begin_us")) {
    m.events_span = TimeSpan{detail::get_as<Timestamp>(j, "events_begin_us", where),
                             detail::get_as<Timestamp>(j, "events_end_us", where)};
  }
  if (j.contains("width")) m.width = detail::get_as<int>(j, "width", where);
  if (j.contains("height")) m.height = detail::get_as<int>(j, "height", where);
  if (j.contains("poses")) m.poses = detail::get_as<std::string>(j, "poses", where);
  try {
    if (j.contains("bayer_pattern")) {
      m.bayer = parse_bayer_pattern(detail::get_as<std::string>(j, "bayer_pattern", where));
    }
    if (j.contains("gamma")) m.gamma = parse_gamma(detail::get_as<std::string>(j, "gamma", where));
  } catch (const ArgumentError& e) {
    throw FormatError(where + ": " + e.what());
  }
  if (j.contains("frames_linear")) m.frames_linear = detail::get_as<bool>(j, "frames_linear", where);

  const Json& views = j.at("views");
  if (!views.is_array() || views.empty()) throw FormatError(where + ": 'views' must be a non-empty array");
  for (std::size_t i = 0; i < views.size(); ++i) {
    const Json& jv = views[i];
    const std::string vwhere = detail::concat(where, ": views[", i, "]");
    if (!jv.is_object()) throw FormatError(vwhere + ": must be an object");
    detail::require_key(jv, "t_mid_us", vwhere);
    detail::require_key(jv, "blur", vwhere);
    ManifestView v;
    v.t_mid_us = detail::get_as<Timestamp>(jv, "t_mid_us", vwhere);
    v.blur = detail::get_as<std::string>(jv, "blur", vwhere);
    if (jv.contains("sharp")) v.sharp = detail::get_as<std::string>(jv, "sharp", vwhere);
    for (auto& [k, val] : jv.items()) {
      if (k != "t_mid_us" && k != "blur" && k != "sharp") v.extra[k] = val;
    }
    if (!m.views.empty() && v.t_mid_us <= m.views.back().t_mid_us) {
      throw FormatError(detail::concat(vwhere, ": t_mid_us ", v.t_mid_us, " does not increase"));
    }
    m.views.push_back(std::move(v));
  }
  for (auto& [k, val] : j.items()) {
    if (std::find(kKnown.begin(), kKnown.end(), k) == kKnown.end()) m.extra[k] = val;
  }
  return m;
}

/// Every path the manifest references, relative form.
inline std::vector<std::string> manifest_paths(const DatasetManifest& m) {
  std::vector<std::string> paths{m.events};
  if (m.poses) paths.push_back(*m.poses);
  for (const auto& v : m.views) {
    paths.push_back(v.blur);
    if (v.sharp) paths.push_back(*v.sharp);
  }
  return paths;
}

inline DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(detail::concat("cannot open manifest '", path.string(), "'"));
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(detail::concat(path.string(), ": invalid JSON at byte ", e.byte));
  }
  DatasetManifest m = manifest_from_json(j, path.parent_path(), path.string());
  for (const auto& rel : manifest_paths(m)) {
    if (!fs::exists(m.resolve(rel))) {
      throw FormatError(detail::concat(path.string(), ": referenced path '", rel, "' does not exist"));
    }
  }
  return m;
}

inline void write_manifest(const fs::path& path, const DatasetManifest& m) {
  detail::write_text(path, manifest_to_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Loading a manifest's data into memory
// ---------------------------------------------------------------------------

struct LoadedView {
  Timestamp t_mid = 0;
  ImageBuffer blur;  // linear
  std::optional<ImageBuffer> sharp;
};

/// Event stream of a dataset, with the manifest's coverage span applied.
inline EventStream load_events(const DatasetManifest& m) {
  std::optional<StreamSize> size;
  if (m.width && m.height) size = StreamSize{*m.width, *m.height};
  EventStream stream = read_events(m.resolve(m.events), size);
  if (m.events_span) {
    try {
      stream = stream.with_coverage(*m.events_span);
    } catch (const ArgumentError& e) {
      throw FormatError(detail::concat(m.resolve(m.events).string(), ": ", e.what()));
    }
  }
  return stream;
}

inline LoadedView load_view(const DatasetManifest& m, std::size_t index, bool with_sharp = false) {
  if (index >= m.views.size()) {
    throw ArgumentError(detail::concat("view ", index, " out of range (", m.views.size(), " views)"));
  }
  const ManifestView& v = m.views[index];
  const ImageReadOptions opts{m.frames_linear};
  LoadedView out;
  out.t_mid = v.t_mid_us;
  out.blur = read_linear_image(m.resolve(v.blur), m.gamma, opts);
  if (with_sharp && v.sharp) out.sharp = read_linear_image(m.resolve(*v.sharp), m.gamma, opts);
  return out;
}

}  // namespace evdi
