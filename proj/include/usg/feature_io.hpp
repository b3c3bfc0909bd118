#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "usg/matrix.hpp"

namespace usg {

/// Binary matrix container: magic "USGF", u32 version (currently 1), u64 row
/// and column counts, then row-major float64 payload, all little-endian.
/// Malformed content raises ValidationError; filesystem trouble IoError.
Matrix read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const Matrix& m);

/// Writes manifest.json plus one feature file per named matrix into dir
/// (created if missing). load returns exactly what save stored.
void save_param_manifest(const std::filesystem::path& dir,
                         const std::map<std::string, Matrix>& named);
std::map<std::string, Matrix> load_param_manifest(
    const std::filesystem::path& manifest_path);

}  // namespace usg
