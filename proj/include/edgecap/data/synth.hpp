#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "edgecap/edge/image.hpp"

namespace edgecap::data {

inline constexpr std::size_t kCanvas = 64;

const std::vector<std::string>& class_names();

enum class ShapeKind { Square, Circle };

struct Placement {
  ShapeKind kind = ShapeKind::Square;
  std::size_t x = 0, y = 0;  // top-left corner of the bounding box
  std::size_t size = 0;
  std::size_t color = 0;     // index into the palette
};

struct SceneSpec {
  std::size_t label = 0;     // index into class_names()
  std::vector<Placement> objects;
  std::uint64_t seed = 0;    // drives background layout and texture
};

const std::vector<std::string>& color_names();

// 2 to 5 non-overlapping objects sharing one shape kind and one color.
SceneSpec sample_scene(std::size_t label, std::uint64_t seed);
edge::RgbImage render_scene(const SceneSpec& scene);
// Five captions naming the class, object count, color, shape and where
// the objects sit.
std::vector<std::string> scene_captions(const SceneSpec& scene);

struct Split {
  std::vector<std::string> train, val, test;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  Split split;
  std::map<std::string, std::string> classes;  // image id -> class name
  std::map<std::string, std::string> sha256;   // relative file -> digest
};

std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text);
Manifest load_manifest(const std::filesystem::path& dir);

// Writes images/<i>.ppm, annotations.jsonl and manifest.json under out_dir.
// Image i has class i mod 7; the split is a seeded permutation cut 80/10/10.
// Returns the SHA-256 of manifest.json, which covers every written file.
std::string generate_dataset(std::size_t n, std::uint64_t seed, const std::filesystem::path& out_dir);

std::string sha256_hex(const std::string& bytes);

inline constexpr const char* kAnnotationsFile = "annotations.jsonl";
inline constexpr const char* kManifestFile = "manifest.json";

}  // namespace edgecap::data
