#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace capgen::cli {

/// Dataset description read from JSON:
///   {"captions": path, "features": {source: path}, "images": {image_id: ppm path},
///    "splits": {"train": [ids], "val": [ids], "test": [ids]}}
/// Relative paths resolve against the manifest's directory. "images" is only needed for the
/// tinycnn source.
struct Manifest {
  std::filesystem::path captions_path;
  std::map<std::string, std::filesystem::path> features_paths;
  std::map<std::string, std::filesystem::path> image_paths;
  std::map<std::string, std::vector<std::string>> splits;

  static Manifest load(const std::filesystem::path& path);
  const std::vector<std::string>& split(const std::string& name) const;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;

/// Entry point shared by the executable and the tests. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace capgen::cli
