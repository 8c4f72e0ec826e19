#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace mess3::io {

// Round-trip exact double formatting (17 significant digits), C locale.
std::string format_double(double v);

std::string base64_encode(const unsigned char* data, std::size_t len);
std::vector<unsigned char> base64_decode(const std::string& text);

std::string doubles_to_base64(const std::vector<double>& values);
std::vector<double> doubles_from_base64(const std::string& text);

std::string sha256_hex(const std::string& bytes);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// Manifest written by every CLI command: command, config echo, seeds, tool
// version, timestamp, and a digest per output file.
nlohmann::json make_manifest(const std::string& command, const nlohmann::json& config);
void add_output_digest(nlohmann::json& manifest, const std::filesystem::path& file);
void write_manifest(const nlohmann::json& manifest, const std::filesystem::path& dir);

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace mess3::io
