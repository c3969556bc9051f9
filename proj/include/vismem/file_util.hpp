#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace vismem {

// Whole-file helpers; failures throw Error{Errc::io}.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace vismem
