#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace morph::fsio {

bool file_exists(const std::string& path);

// Throws MissingArtifactError when the file cannot be opened.
std::vector<uint8_t> read_file(const std::string& path);
std::string read_text(const std::string& path);

// Write to a sibling temp file, then rename over the target. Creates parent
// directories as needed.
void write_file_atomic(const std::string& path, const void* data, size_t n);
void write_text_atomic(const std::string& path, const std::string& text);

std::string sha256_hex(const void* data, size_t n);
std::string sha256_hex(const std::vector<uint8_t>& bytes);
std::string sha256_hex_file(const std::string& path);

}  // namespace morph::fsio
