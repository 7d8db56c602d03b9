#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbttbf/density.hpp"
#include "mbttbf/grid.hpp"

namespace mbttbf::io {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- annotations

struct LoadedAnnotations {
  density::AnnotationSet annotations;
  int clamped = 0;  // points pulled back inside the image
};

inline LoadedAnnotations parse_annotations(const json& doc, const std::string& origin = "annotations") {
  if (!doc.is_object()) throw FormatError(origin + ": expected a JSON object");
  const auto size_it = doc.find("image_size");
  if (size_it == doc.end() || !size_it->is_array() || size_it->size() != 2 ||
      !(*size_it)[0].is_number() || !(*size_it)[1].is_number())
    throw FormatError(origin + ": \"image_size\" must be [H, W]");
  LoadedAnnotations out;
  auto& set = out.annotations;
  set.height = (*size_it)[0].get<int>();
  set.width = (*size_it)[1].get<int>();
  if (set.height <= 0 || set.width <= 0) throw FormatError(origin + ": image_size must be positive");
  const auto pts = doc.find("points");
  if (pts == doc.end() || !pts->is_array()) throw FormatError(origin + ": \"points\" must be a list");
  for (std::size_t i = 0; i < pts->size(); ++i) {
    const json& p = (*pts)[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw FormatError(origin + ": points[" + std::to_string(i) + "] is not an [x, y] pair");
    double x = p[0].get<double>();
    double y = p[1].get<double>();
    const double cx = std::clamp(x, 0.0, static_cast<double>(set.width - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(set.height - 1));
    if (cx != x || cy != y) ++out.clamped;
    set.points.push_back({cx, cy});
  }
  return out;
}

inline LoadedAnnotations load_annotations(const fs::path& path) {
  return parse_annotations(read_json(path), path.string());
}

inline json annotations_to_json(const density::AnnotationSet& set) {
  json pts = json::array();
  for (const auto& p : set.points) pts.push_back({p.x, p.y});
  return {{"image_size", {set.height, set.width}}, {"points", pts}};
}

inline void save_annotations(const fs::path& path, const density::AnnotationSet& set) {
  write_text(path, annotations_to_json(set).dump());
}

// ---------------------------------------------------------------- sigmas

inline void save_sigmas(const fs::path& path, const density::SigmaAssignment& sa) {
  write_text(path, json{{"method", density::to_string(sa.method)}, {"sigmas", sa.sigmas}}.dump());
}

inline density::SigmaAssignment load_sigmas(const fs::path& path) {
  const json doc = read_json(path);
  density::SigmaAssignment sa;
  try {
    sa.method = density::sigma_method_from_string(doc.at("method").get<std::string>());
    sa.sigmas = doc.at("sigmas").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return sa;
}

/// Sigma file that sits next to an annotation file: foo.json -> foo.sigmas.json.
inline fs::path sigma_path_for(const fs::path& annotation_path) {
  fs::path p = annotation_path;
  p.replace_extension(".sigmas.json");
  return p;
}

// ---------------------------------------------------------------- density maps

/// Payload path is `path` itself; the sidecar is `path` + ".json".
inline fs::path sidecar_path(const fs::path& path) { return fs::path(path.string() + ".json"); }

inline void save_density(const fs::path& path, const density::DensityMap& map) {
  static_assert(std::endian::native == std::endian::little, "payload is written in native order");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  for (double v : map.grid.values()) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
  write_text(sidecar_path(path),
             json{{"height", map.height()}, {"width", map.width()}, {"stride", map.stride}}.dump());
}

inline density::DensityMap load_density(const fs::path& path) {
  const json side = read_json(sidecar_path(path));
  int h = 0, w = 0, s = 0;
  try {
    h = side.at("height").get<int>();
    w = side.at("width").get<int>();
    s = side.at("stride").get<int>();
  } catch (const json::exception& e) {
    throw FormatError(sidecar_path(path).string() + ": " + e.what());
  }
  if (h < 0 || w < 0 || s <= 0) throw FormatError(sidecar_path(path).string() + ": bad dimensions");
  const std::string payload = read_text(path);
  const std::size_t expected = static_cast<std::size_t>(h) * w * sizeof(float);
  if (payload.size() != expected)
    throw FormatError(path.string() + ": payload has " + std::to_string(payload.size()) +
                      " bytes, sidecar implies " + std::to_string(expected));
  density::DensityMap map(h, w, s);
  auto values = map.grid.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    float f;
    std::memcpy(&f, payload.data() + i * sizeof f, sizeof f);
    values[i] = f;
  }
  return map;
}

// ---------------------------------------------------------------- images

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline RgbImage load_png(const fs::path& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw FormatError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw FormatError("libpng init failed");
  RgbImage img;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": not a readable PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_expand(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  buffer.resize(static_cast<std::size_t>(h) * w * 3);
  rows.resize(h);
  for (int r = 0; r < h; ++r) rows[r] = buffer.data() + static_cast<std::size_t>(r) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  img = RgbImage(h, w);
  for (std::size_t i = 0; i < buffer.size(); ++i) img.data[i] = buffer[i] / 255.0f;
  return img;
}

inline void save_png(const fs::path& path, const RgbImage& img) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw FormatError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw FormatError("libpng init failed");
  std::vector<unsigned char> buffer(img.data.size());
  for (std::size_t i = 0; i < buffer.size(); ++i)
    buffer[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0f, 1.0f) * 255.0f));
  std::vector<png_bytep> rows(img.height);
  for (int r = 0; r < img.height; ++r)
    rows[r] = buffer.data() + static_cast<std::size_t>(r) * img.width * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Binary PPM (P6), 8-bit.
inline RgbImage load_ppm(const fs::path& path) {
  const std::string bytes = read_text(path);
  std::istringstream in(bytes);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic;
  auto skip_comments = [&] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  skip_comments();
  in >> w;
  skip_comments();
  in >> h;
  skip_comments();
  in >> maxval;
  in.get();
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw FormatError(path.string() + ": unsupported PPM");
  const auto offset = static_cast<std::size_t>(in.tellg());
  if (bytes.size() < offset + static_cast<std::size_t>(w) * h * 3) throw FormatError(path.string() + ": truncated PPM");
  RgbImage img(h, w);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = static_cast<unsigned char>(bytes[offset + i]) / 255.0f;
  return img;
}

inline void save_ppm(const fs::path& path, const RgbImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  for (float v : img.data)
    out.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  write_text(path, out);
}

inline RgbImage load_image(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".ppm") return load_ppm(path);
  return load_png(path);
}

inline void save_image(const fs::path& path, const RgbImage& img) {
  if (path.extension() == ".ppm") return save_ppm(path, img);
  save_png(path, img);
}

/// Round-trips a float image through 8-bit quantization, the precision of any
/// image that went through disk.
inline RgbImage quantize_8bit(RgbImage img) {
  for (float& v : img.data) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return img;
}

// ---------------------------------------------------------------- manifests

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw FormatError("unknown split '" + s + "'");
}

struct ManifestEntry {
  fs::path image;
  fs::path annotations;

  friend auto operator<=>(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  Split split = Split::train;
  std::vector<ManifestEntry> entries;  // sorted lexicographically by image path
};

/// Relative paths in the manifest resolve against the manifest's directory.
inline DatasetManifest load_manifest(const fs::path& path, bool check_files = true) {
  const json doc = read_json(path);
  DatasetManifest m;
  const fs::path base = path.parent_path();
  try {
    m.split = split_from_string(doc.at("split").get<std::string>());
    for (const auto& e : doc.at("entries")) {
      ManifestEntry entry{e.at("image").get<std::string>(), e.at("annotations").get<std::string>()};
      if (entry.image.is_relative()) entry.image = base / entry.image;
      if (entry.annotations.is_relative()) entry.annotations = base / entry.annotations;
      m.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (check_files) {
    for (const auto& e : m.entries) {
      if (!fs::exists(e.image)) throw FormatError("missing image " + e.image.string());
      if (!fs::exists(e.annotations)) throw FormatError("missing annotations " + e.annotations.string());
    }
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) {
              return std::pair(a.image.generic_string(), a.annotations.generic_string()) <
                     std::pair(b.image.generic_string(), b.annotations.generic_string());
            });
  return m;
}

inline void save_manifest(const fs::path& path, const DatasetManifest& m) {
  json entries = json::array();
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const fs::path& p) { return fs::absolute(p).lexically_normal().lexically_relative(base).generic_string(); };
  for (const auto& e : m.entries) entries.push_back({{"image", rel(e.image)}, {"annotations", rel(e.annotations)}});
  write_text(path, json{{"split", to_string(m.split)}, {"entries", entries}}.dump(2));
}

}  // namespace mbttbf::io
