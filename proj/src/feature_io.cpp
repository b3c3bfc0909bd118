#include "usg/feature_io.hpp"

#include <bit>
#include <cstdint>
#include <limits>

#include "json.hpp"
#include "usg/graph.hpp"
#include "usg/graph_json.hpp"

namespace usg {

namespace {

constexpr char kMagic[4] = {'U', 'S', 'G', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::string safe_file_name(const std::string& name) {
  std::string out;
  out.reserve(name.size());
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '.' || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  return out;
}

}  // namespace

Matrix read_feature_file(const std::filesystem::path& path) {
  const std::string raw = read_text_file(path);
  const std::string where = path.string();
  if (raw.size() < 24 || raw.compare(0, 4, kMagic, 4) != 0) {
    throw ValidationError({where + ": not a feature file (bad magic)"});
  }
  const std::uint32_t version = get_u32(raw, 4);
  if (version != kVersion) {
    throw ValidationError({where + ": unsupported feature file version " +
                           std::to_string(version)});
  }
  const std::uint64_t rows = get_u64(raw, 8);
  const std::uint64_t cols = get_u64(raw, 16);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / 8;
  if (cols != 0 && rows > limit / cols) {
    throw ValidationError({where + ": implausible shape " + std::to_string(rows) + "x" +
                           std::to_string(cols)});
  }
  const std::uint64_t payload = rows * cols * 8;
  if (raw.size() != 24 + payload) {
    throw ValidationError({where + ": payload holds " + std::to_string(raw.size() - 24) +
                           " bytes, shape " + std::to_string(rows) + "x" +
                           std::to_string(cols) + " needs " + std::to_string(payload)});
  }
  Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < m.size(); ++i) {
    m.data()[i] = std::bit_cast<double>(get_u64(raw, 24 + 8 * i));
  }
  return m;
}

void write_feature_file(const std::filesystem::path& path, const Matrix& m) {
  std::string out;
  out.reserve(24 + 8 * m.size());
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, m.rows());
  put_u64(out, m.cols());
  for (double v : m.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  write_text_file(path, out);
}

void save_param_manifest(const std::filesystem::path& dir,
                         const std::map<std::string, Matrix>& named) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json files;
  std::set<std::string> taken;
  for (const auto& [name, matrix] : named) {
    std::string file = safe_file_name(name) + ".usgf";
    if (!taken.insert(file).second) {
      throw ValidationError({"parameter names '" + name +
                             "' collide after filename sanitization"});
    }
    write_feature_file(dir / file, matrix);
    files[name] = file;
  }
  nlohmann::json manifest;
  manifest["format"] = "usg-params";
  manifest["version"] = 1;
  manifest["matrices"] = files.is_null() ? nlohmann::json::object() : std::move(files);
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::map<std::string, Matrix> load_param_manifest(
    const std::filesystem::path& manifest_path) {
  const std::string text = read_text_file(manifest_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError({manifest_path.string() + ": invalid JSON: " + e.what()});
  }
  if (!j.is_object() || j.value("format", "") != "usg-params" ||
      j.value("version", 0) != 1) {
    throw ValidationError({manifest_path.string() + ": not a version-1 usg-params manifest"});
  }
  auto it = j.find("matrices");
  if (it == j.end() || !it->is_object()) {
    throw ValidationError({manifest_path.string() + ": missing 'matrices' object"});
  }
  const std::filesystem::path base = manifest_path.parent_path();
  std::map<std::string, Matrix> out;
  for (auto entry = it->begin(); entry != it->end(); ++entry) {
    if (!entry.value().is_string()) {
      throw ValidationError({manifest_path.string() + ": matrix path for '" + entry.key() +
                             "' must be a string"});
    }
    out[entry.key()] = read_feature_file(base / entry.value().get<std::string>());
  }
  return out;
}

}  // namespace usg
