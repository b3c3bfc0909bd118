#pragma once

// JSON helpers shared by the serialization units. Internal to src/; the
// public headers never expose nlohmann types.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "usg/graph.hpp"

namespace usg::detail {

[[noreturn]] void fail(std::vector<std::string> violations);

nlohmann::json must_parse(const std::string& text);

const nlohmann::json* get_field(const nlohmann::json& j, const char* key);

std::string req_string(const nlohmann::json& j, const char* key, const std::string& ctx,
                       std::vector<std::string>& out);

std::size_t req_uint(const nlohmann::json& j, const char* key, const std::string& ctx,
                     std::vector<std::string>& out);

double req_number(const nlohmann::json& j, const char* key, const std::string& ctx,
                  std::vector<std::string>& out);

Modality req_modality(const nlohmann::json& j, const char* key, const std::string& ctx,
                      std::vector<std::string>& out);

std::optional<NodeRef> ref_from_json(const nlohmann::json& j, const std::string& ctx,
                                     std::vector<std::string>& out);

std::optional<MaskRegion> mask_from_json(const nlohmann::json& j, const std::string& ctx,
                                         std::vector<std::string>& out);

nlohmann::json mask_to_json(const MaskRegion& region);

}  // namespace usg::detail
