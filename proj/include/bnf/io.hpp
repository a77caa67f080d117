#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace bnf::io {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

// 64-bit FNV-1a, rendered as 16 hex digits. Used for config fingerprints.
std::string fnv1a_hex(std::string_view data);

}  // namespace bnf::io
