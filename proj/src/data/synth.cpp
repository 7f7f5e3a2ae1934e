#include "edgecap/data/synth.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "edgecap/data/annotations.hpp"
#include "edgecap/error.hpp"
#include "edgecap/tensor/rng.hpp"

namespace edgecap::data {

namespace {

using Rgb = std::array<double, 3>;

const std::vector<Rgb> kPalette = {
    {0.85, 0.10, 0.10}, {0.10, 0.20, 0.90}, {0.95, 0.90, 0.10},
    {0.97, 0.97, 0.97}, {0.05, 0.05, 0.05}, {0.95, 0.55, 0.10},
};

const char* const kCountWords[] = {"zero", "one", "two", "three", "four", "five"};

const char* const kClassSentence[] = {
    "houses line the gray streets of a residential area",
    "a river crosses the green land",
    "a wide green meadow covers the ground",
    "a long runway with white marks crosses the scene",
    "large industrial buildings stand on gray ground",
    "a sandy beach meets the blue sea",
    "farmland fields form parallel strips",
};

void fill_rect(edge::RgbImage& img, long x0, long y0, long x1, long y1, const Rgb& c) {
  x0 = std::max(x0, 0L);
  y0 = std::max(y0, 0L);
  x1 = std::min(x1, static_cast<long>(img.width));
  y1 = std::min(y1, static_cast<long>(img.height));
  for (long y = y0; y < y1; ++y) {
    for (long x = x0; x < x1; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) img.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = c[ch];
    }
  }
}

void background(edge::RgbImage& img, std::size_t label, Rng& rng) {
  const long n = static_cast<long>(kCanvas);
  switch (label) {
    case 0: {  // residential: light blocks separated by a street grid
      fill_rect(img, 0, 0, n, n, {0.75, 0.74, 0.70});
      const long off = rng.range(0, 15);
      for (long s = off; s < n; s += 16) {
        fill_rect(img, s, 0, s + 2, n, {0.42, 0.42, 0.45});
        fill_rect(img, 0, s, n, s + 2, {0.42, 0.42, 0.45});
      }
      break;
    }
    case 1: {  // river: a blue band across green land
      fill_rect(img, 0, 0, n, n, {0.35, 0.55, 0.30});
      const long c = rng.range(16, 48), half = rng.range(4, 6);
      if (rng.below(2) == 0) fill_rect(img, 0, c - half, n, c + half, {0.15, 0.35, 0.70});
      else fill_rect(img, c - half, 0, c + half, n, {0.15, 0.35, 0.70});
      break;
    }
    case 2:  // meadow: plain grass, textured below
      fill_rect(img, 0, 0, n, n, {0.40, 0.65, 0.30});
      break;
    case 3: {  // runway: dark strip with white centre dashes
      fill_rect(img, 0, 0, n, n, {0.55, 0.56, 0.50});
      const long c = rng.range(20, 44);
      const bool horizontal = rng.below(2) == 0;
      for (long s = 0; s < n; ++s) {
        const bool dash = (s / 4) % 2 == 0;
        if (horizontal) {
          fill_rect(img, s, c - 6, s + 1, c + 6, {0.20, 0.20, 0.22});
          if (dash) fill_rect(img, s, c - 1, s + 1, c + 1, {0.95, 0.95, 0.95});
        } else {
          fill_rect(img, c - 6, s, c + 6, s + 1, {0.20, 0.20, 0.22});
          if (dash) fill_rect(img, c - 1, s, c + 1, s + 1, {0.95, 0.95, 0.95});
        }
      }
      break;
    }
    case 4: {  // industrial: large dim halls on gray ground
      fill_rect(img, 0, 0, n, n, {0.50, 0.50, 0.52});
      for (int i = 0; i < 3; ++i) {
        const long x = rng.range(0, 40), y = rng.range(0, 40);
        fill_rect(img, x, y, x + rng.range(14, 24), y + rng.range(10, 20), {0.62, 0.62, 0.64});
      }
      break;
    }
    case 5: {  // beach: sand meeting sea
      const long edge = rng.range(24, 40);
      fill_rect(img, 0, 0, edge, n, {0.90, 0.82, 0.55});
      fill_rect(img, edge, 0, n, n, {0.20, 0.45, 0.75});
      break;
    }
    default: {  // farmland: parallel strips of two crops
      const long w = rng.range(6, 10);
      for (long s = 0; s < n; s += w) {
        fill_rect(img, s, 0, s + w, n, (s / w) % 2 == 0 ? Rgb{0.45, 0.60, 0.25} : Rgb{0.60, 0.50, 0.30});
      }
      break;
    }
  }
  const double amp = label == 2 ? 0.08 : 0.04;
  for (double& v : img.data) v = std::clamp(v + rng.uniform(-amp, amp), 0.0, 1.0);
}

bool overlaps(const Placement& a, const Placement& b) {
  const std::size_t gap = 1;
  return a.x < b.x + b.size + gap && b.x < a.x + a.size + gap && a.y < b.y + b.size + gap && b.y < a.y + a.size + gap;
}

std::string position_phrase(const SceneSpec& s) {
  double cx = 0, cy = 0;
  for (const auto& o : s.objects) {
    cx += static_cast<double>(o.x) + o.size / 2.0;
    cy += static_cast<double>(o.y) + o.size / 2.0;
  }
  cx = cx / static_cast<double>(s.objects.size()) - kCanvas / 2.0;
  cy = cy / static_cast<double>(s.objects.size()) - kCanvas / 2.0;
  if (std::abs(cx) < 8 && std::abs(cy) < 8) return "in the middle";
  if (std::abs(cx) >= std::abs(cy)) return cx < 0 ? "in the left part" : "in the right part";
  return cy < 0 ? "in the upper part" : "in the lower part";
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + p.string());
}

std::string image_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "images/%05zu.ppm", i);
  return buf;
}

}  // namespace

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names = {"residential", "river",  "meadow",  "runway",
                                                 "industrial",  "beach", "farmland"};
  return names;
}

const std::vector<std::string>& color_names() {
  static const std::vector<std::string> names = {"red", "blue", "yellow", "white", "black", "orange"};
  return names;
}

SceneSpec sample_scene(std::size_t label, std::uint64_t seed) {
  if (label >= class_names().size()) throw ConfigError("sample_scene: unknown class index " + std::to_string(label));
  Rng rng(seed);
  SceneSpec s;
  s.label = label;
  s.seed = rng.next();
  const auto kind = rng.below(2) == 0 ? ShapeKind::Square : ShapeKind::Circle;
  const std::size_t color = rng.below(kPalette.size());
  const std::size_t count = static_cast<std::size_t>(rng.range(2, 5));
  for (int attempt = 0; s.objects.size() < count && attempt < 1000; ++attempt) {
    Placement p;
    p.kind = kind;
    p.color = color;
    p.size = static_cast<std::size_t>(rng.range(6, 11));
    p.x = rng.below(kCanvas - p.size + 1);
    p.y = rng.below(kCanvas - p.size + 1);
    if (std::none_of(s.objects.begin(), s.objects.end(), [&](const Placement& o) { return overlaps(o, p); })) {
      s.objects.push_back(p);
    }
  }
  return s;
}

edge::RgbImage render_scene(const SceneSpec& scene) {
  edge::RgbImage img(kCanvas, kCanvas);
  Rng rng(scene.seed);
  background(img, scene.label, rng);
  for (const auto& o : scene.objects) {
    const Rgb& c = kPalette[o.color];
    const double r = o.size / 2.0, cx = static_cast<double>(o.x) + r, cy = static_cast<double>(o.y) + r;
    for (std::size_t y = o.y; y < o.y + o.size; ++y) {
      for (std::size_t x = o.x; x < o.x + o.size; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        if (o.kind == ShapeKind::Circle && dx * dx + dy * dy > r * r) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) img.at(ch, y, x) = c[ch];
      }
    }
  }
  return img;
}

std::vector<std::string> scene_captions(const SceneSpec& s) {
  const std::string label = class_names()[s.label];
  const std::string n = kCountWords[s.objects.size()];
  const std::string color = color_names()[s.objects.front().color];
  const std::string shapes = s.objects.front().kind == ShapeKind::Square ? "squares" : "circles";
  const std::string where = position_phrase(s);
  const std::string article = label.find_first_of("aeiou") == 0 ? "an" : "a";
  return {
      "an aerial view of " + article + " " + label + " scene with " + n + " " + color + " " + shapes,
      n + " " + color + " " + shapes + " are " + where + " of the " + label + " scene",
      "there are " + n + " " + shapes + " in this " + label + " image",
      std::string(kClassSentence[s.label]) + " with " + n + " " + color + " " + shapes,
      "the " + label + " image shows " + color + " " + shapes + " " + where,
  };
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string manifest_to_json(const Manifest& m) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["n"] = m.n;
  j["split"]["train"] = m.split.train;
  j["split"]["val"] = m.split.val;
  j["split"]["test"] = m.split.test;
  j["classes"] = m.classes;
  j["sha256"] = m.sha256;
  return j.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  try {
    Manifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n = j.at("n").get<std::size_t>();
    m.split.train = j.at("split").at("train").get<std::vector<std::string>>();
    m.split.val = j.at("split").at("val").get<std::vector<std::string>>();
    m.split.test = j.at("split").at("test").get<std::vector<std::string>>();
    m.classes = j.at("classes").get<std::map<std::string, std::string>>();
    if (j.contains("sha256")) m.sha256 = j.at("sha256").get<std::map<std::string, std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  }
}

Manifest load_manifest(const std::filesystem::path& dir) { return manifest_from_json(read_file(dir / kManifestFile)); }

std::string generate_dataset(std::size_t n, std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (n == 0) throw ConfigError("synth: n must be positive");
  std::filesystem::create_directories(out_dir / "images");
  Manifest m;
  m.seed = seed;
  m.n = n;
  std::vector<AnnotationRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    const SceneSpec scene = sample_scene(i % class_names().size(), derive_seed(seed, i));
    const std::string id = image_id(i);
    const std::string bytes = edge::encode_ppm(render_scene(scene));
    write_file(out_dir / id, bytes);
    m.sha256[id] = sha256_hex(bytes);
    m.classes[id] = class_names()[scene.label];
    records.push_back({id, scene_captions(scene)});
  }
  const std::string ann = format_annotations(records);
  write_file(out_dir / kAnnotationsFile, ann);
  m.sha256[kAnnotationsFile] = sha256_hex(ann);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, ~std::uint64_t{0}));
  rng.shuffle(order.begin(), order.end());
  const std::size_t n_train = n * 8 / 10, n_val = n / 10;
  for (std::size_t k = 0; k < n; ++k) {
    auto& dst = k < n_train ? m.split.train : k < n_train + n_val ? m.split.val : m.split.test;
    dst.push_back(image_id(order[k]));
  }
  const std::string manifest = manifest_to_json(m);
  write_file(out_dir / kManifestFile, manifest);
  return sha256_hex(manifest);
}

}  // namespace edgecap::data
