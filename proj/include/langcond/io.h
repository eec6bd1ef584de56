#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace langcond {

/// Writes to `path.tmp` and renames over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);
std::vector<std::string> split_ws(std::string_view line);

}  // namespace langcond
