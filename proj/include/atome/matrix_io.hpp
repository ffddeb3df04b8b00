#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "atome/linalg.hpp"

namespace atome {

// ATMX layout: "ATMX", u32 rows, u32 cols, u32 reserved (0), then rows*cols
// binary32 values row-major. All integers and floats little-endian.
inline constexpr char kAtmxMagic[4] = {'A', 'T', 'M', 'X'};
inline constexpr std::size_t kAtmxHeaderBytes = 16;

void write_atmx(std::ostream& out, const Matrix& m);
Matrix read_atmx(std::istream& in);

void write_atmx(const std::filesystem::path& path, const Matrix& m);
Matrix read_atmx(const std::filesystem::path& path);

// Flat "key=value" text. Blank lines and lines starting with '#' are ignored.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(std::istream& in, const std::string& source);
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);

}  // namespace atome
