#include "tribench/manifest.hpp"

#include "tribench/core.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

namespace tribench {

namespace fs = std::filesystem;

namespace {

std::string hex(const unsigned char* d, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    out += digits[d[i] >> 4];
    out += digits[d[i] & 15];
  }
  return out;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string sha1_hex(std::string_view data) {
  unsigned char d[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  if (EVP_Digest(data.data(), data.size(), d, &n, EVP_sha1(), nullptr) != 1)
    throw IoError("sha1 digest failed");
  return hex(d, n);
}

std::string git_blob_sha1(const fs::path& file) {
  const std::string body = read_all(file);
  std::string obj = "blob " + std::to_string(body.size());
  obj.push_back('\0');
  obj += body;
  return sha1_hex(obj);
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunManifest::RunManifest(fs::path path, std::string command, std::vector<std::string> argv,
                         std::uint64_t seed, double scale, const std::string& config_text,
                         bool dry_run)
    : path_(std::move(path)) {
  doc_["command"] = std::move(command);
  doc_["argv"] = std::move(argv);
  doc_["master_seed"] = seed;
  doc_["scale"] = scale;
  doc_["dry_run"] = dry_run;
  doc_["config_sha1"] = sha1_hex(config_text);
  doc_["config"] = config_text;
  doc_["started"] = utc_timestamp();
  doc_["status"] = "running";
}

void RunManifest::write() const {
  fs::create_directories(path_.parent_path().empty() ? fs::path(".") : path_.parent_path());
  const fs::path tmp = path_.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << doc_.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path_);
}

void RunManifest::write_initial() { write(); }

void RunManifest::finalize(const std::vector<fs::path>& roots, const std::string& status) {
  nlohmann::json arts = nlohmann::json::array();
  const fs::path base = path_.parent_path();
  for (const fs::path& root : roots) {
    if (!fs::exists(root)) continue;
    std::vector<fs::path> files;
    if (fs::is_regular_file(root)) {
      files.push_back(root);
    } else {
      for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& p : files) {
      const std::string name = p.filename().string();
      if (name.rfind("manifest", 0) == 0) continue;
      arts.push_back({{"path", fs::relative(p, base).generic_string()},
                      {"bytes", fs::file_size(p)},
                      {"git_sha1", git_blob_sha1(p)}});
    }
  }
  doc_["artifacts"] = std::move(arts);
  doc_["finished"] = utc_timestamp();
  doc_["status"] = status;
  write();
}

nlohmann::json read_manifest(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_all(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace tribench
