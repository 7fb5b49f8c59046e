#pragma once
// SHA-256 digests (lowercase hex) for manifests and config fingerprints.

#include <filesystem>
#include <string>
#include <string_view>

namespace ichseg {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace ichseg
