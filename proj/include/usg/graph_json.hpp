#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "usg/graph.hpp"

namespace usg {

/// Parsers throw ValidationError listing every problem found; serializers
/// emit canonical JSON (sorted object keys, two-space indent) so equal values
/// always produce identical bytes.

SceneGraph parse_scene_graph_json(const std::string& text);
std::string serialize_scene_graph(const SceneGraph& graph);

std::vector<AssociationLink> parse_links_json(const std::string& text);
std::string serialize_links(const std::vector<AssociationLink>& links);

UniversalSceneGraph parse_usg_json(const std::string& text);
std::string serialize_usg(const UniversalSceneGraph& usg);

/// Whole-file helpers; filesystem failures raise IoError.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace usg
