#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ct::io {

std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::vector<std::string> split(std::string_view s, char sep);

// Tweets on disk carry embedded newlines as the two characters `\n`.
std::string unescape_line(std::string_view line);
std::string escape_line(std::string_view text);

}  // namespace ct::io
