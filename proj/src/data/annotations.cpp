#include "edgecap/data/annotations.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "edgecap/error.hpp"

namespace edgecap::data {

std::vector<AnnotationRecord> parse_annotations(const std::string& text, CaptionCount count) {
  std::vector<AnnotationRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = "annotations line " + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + e.what());
    }
    if (!j.is_object()) throw SchemaError(where + "expected an object");
    if (!j.contains("image") || !j["image"].is_string()) throw SchemaError(where + "missing string field \"image\"");
    if (!j.contains("captions") || !j["captions"].is_array()) {
      throw SchemaError(where + "missing array field \"captions\"");
    }
    AnnotationRecord r;
    r.image = j["image"].get<std::string>();
    if (r.image.empty()) throw SchemaError(where + "empty image id");
    for (const auto& c : j["captions"]) {
      if (!c.is_string() || c.get<std::string>().empty()) throw SchemaError(where + "captions must be nonempty strings");
      r.captions.push_back(c.get<std::string>());
    }
    if (r.captions.size() < count.min || r.captions.size() > count.max) {
      const std::string want = count.min == count.max ? std::to_string(count.min)
                                                      : std::to_string(count.min) + ".." + std::to_string(count.max);
      throw SchemaError(where + "expected " + want + " captions, found " + std::to_string(r.captions.size()));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path, CaptionCount count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_annotations(ss.str(), count);
}

std::string format_annotations(const std::vector<AnnotationRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["image"] = r.image;
    j["captions"] = r.captions;
    out += j.dump() + "\n";
  }
  return out;
}

void save_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_annotations(records);
}

}  // namespace edgecap::data
