#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace edgecap::data {

// One JSON-lines record: {"image": "<id>", "captions": ["...", ...]}.
struct AnnotationRecord {
  std::string image;
  std::vector<std::string> captions;
  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

inline constexpr std::size_t kCaptionsPerImage = 5;

// Caption-count bounds a file must respect.
struct CaptionCount {
  std::size_t min = kCaptionsPerImage;
  std::size_t max = kCaptionsPerImage;
};

// Blank lines are skipped and a trailing CR is ignored. Errors name the
// 1-based line: ParseError for bad JSON, SchemaError for a wrong shape,
// a caption count outside `count` or an empty caption.
std::vector<AnnotationRecord> parse_annotations(const std::string& text, CaptionCount count = {});
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path, CaptionCount count = {});

std::string format_annotations(const std::vector<AnnotationRecord>& records);
void save_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records);

}  // namespace edgecap::data
