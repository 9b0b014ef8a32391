#pragma once

#include "json.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tribench {

std::string sha1_hex(std::string_view data);
// Hash git assigns to the file's contents as a blob object.
std::string git_blob_sha1(const std::filesystem::path& file);
std::string utc_timestamp();

// JSON record of one command invocation. Written with status "running"
// before any work and rewritten with artifact hashes when the command ends.
class RunManifest {
 public:
  RunManifest(std::filesystem::path path, std::string command, std::vector<std::string> argv,
              std::uint64_t seed, double scale, const std::string& config_text, bool dry_run);

  nlohmann::json& data() { return doc_; }
  const std::filesystem::path& path() const { return path_; }

  void write_initial();
  // Hashes every regular file under each root (manifests excluded).
  void finalize(const std::vector<std::filesystem::path>& artifact_roots, const std::string& status);

 private:
  void write() const;

  std::filesystem::path path_;
  nlohmann::json doc_;
};

nlohmann::json read_manifest(const std::filesystem::path& path);

}  // namespace tribench
