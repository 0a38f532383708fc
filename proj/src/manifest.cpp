#include "seqant/manifest.hpp"

#include <cstdio>
#include <ctime>
#include <fstream>
#include <stdexcept>

namespace seqant {

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t basis) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = basis;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path + " for checksum");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return to_hex(fnv1a64(bytes.data(), bytes.size()));
}

std::string iso8601_utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << text;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
  }
}

std::string manifest_path_for(const std::string& artifact_path) {
  return artifact_path + ".manifest.json";
}

void write_manifest(const RunManifest& m, const std::string& artifact_path) {
  nlohmann::json j;
  j["command"] = m.command;
  j["config"] = m.config;
  j["seed"] = m.seed;
  j["dataset_checksum"] = m.dataset_checksum;
  j["tool_version"] = kToolVersion;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  write_text_atomic(manifest_path_for(artifact_path), j.dump(2) + "\n");
}

}  // namespace seqant
