#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace medcritical {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

// SHA-256 of a file's bytes. Throws IoError when unreadable.
std::string sha256_file(const std::filesystem::path& path);

// Reads a whole file; throws IoError.
std::string read_file(const std::filesystem::path& path);

// Writes via a sibling temp file and rename(2), so readers never observe a
// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

}  // namespace medcritical
