#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace seqant {

inline constexpr const char* kToolVersion = "1.0.0";

std::uint64_t fnv1a64(const void* data, std::size_t n,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);
std::string to_hex(std::uint64_t v);

/// FNV-1a of the raw file bytes, as a hex string.
std::string file_checksum(const std::string& path);

std::string iso8601_utc_now();

/// Write-then-rename so readers never observe a partial file.
void write_text_atomic(const std::string& path, const std::string& text);

/// Provenance record written next to every output artifact as
/// "<artifact>.manifest.json". Re-running the recorded command with the
/// recorded config reproduces the artifact byte-for-byte.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string dataset_checksum;  // empty when the command takes no dataset
  std::string started_at;
  std::string finished_at;
};

std::string manifest_path_for(const std::string& artifact_path);
void write_manifest(const RunManifest& m, const std::string& artifact_path);

}  // namespace seqant
