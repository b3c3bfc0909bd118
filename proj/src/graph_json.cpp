#include "usg/graph_json.hpp"

#include <fstream>
#include <sstream>

#include "json_detail.hpp"

namespace usg {

namespace detail {

using nlohmann::json;

void fail(std::vector<std::string> violations) {
  throw ValidationError(std::move(violations));
}

json must_parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail({std::string("invalid JSON: ") + e.what()});
  }
}

const json* get_field(const json& j, const char* key) {
  if (!j.is_object()) return nullptr;
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

std::string req_string(const json& j, const char* key, const std::string& ctx,
                       std::vector<std::string>& out) {
  const json* f = get_field(j, key);
  if (!f || !f->is_string()) {
    out.push_back(ctx + ": missing or non-string '" + key + "'");
    return {};
  }
  return f->get<std::string>();
}

std::size_t req_uint(const json& j, const char* key, const std::string& ctx,
                     std::vector<std::string>& out) {
  const json* f = get_field(j, key);
  if (!f || !f->is_number_unsigned()) {
    out.push_back(ctx + ": missing or non-integer '" + key + "'");
    return 0;
  }
  return f->get<std::size_t>();
}

double req_number(const json& j, const char* key, const std::string& ctx,
                  std::vector<std::string>& out) {
  const json* f = get_field(j, key);
  if (!f || !f->is_number()) {
    out.push_back(ctx + ": missing or non-numeric '" + key + "'");
    return 0.0;
  }
  return f->get<double>();
}

Modality req_modality(const json& j, const char* key, const std::string& ctx,
                      std::vector<std::string>& out) {
  const std::string s = req_string(j, key, ctx, out);
  auto m = modality_from_string(s);
  if (!m) {
    out.push_back(ctx + ": unknown modality '" + s + "'");
    return Modality::text;
  }
  return *m;
}

std::optional<NodeRef> ref_from_json(const json& j, const std::string& ctx,
                                     std::vector<std::string>& out) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_string() || !j[1].is_string()) {
    out.push_back(ctx + ": node reference must be [\"modality\", \"id\"]");
    return std::nullopt;
  }
  auto m = modality_from_string(j[0].get<std::string>());
  if (!m) {
    out.push_back(ctx + ": unknown modality '" + j[0].get<std::string>() + "'");
    return std::nullopt;
  }
  return NodeRef{*m, j[1].get<std::string>()};
}

namespace {

std::vector<std::uint8_t> bits_from_string(const std::string& s, const std::string& ctx,
                                           std::vector<std::string>& out) {
  std::vector<std::uint8_t> bits;
  bits.reserve(s.size());
  for (char c : s) {
    if (c != '0' && c != '1') {
      out.push_back(ctx + ": mask strings may contain only '0' and '1'");
      return {};
    }
    bits.push_back(c == '1');
  }
  return bits;
}

std::string bits_to_string(const std::vector<std::uint8_t>& bits) {
  std::string s;
  s.reserve(bits.size());
  for (auto b : bits) s.push_back(b ? '1' : '0');
  return s;
}

}  // namespace

std::optional<MaskRegion> mask_from_json(const json& j, const std::string& ctx,
                                         std::vector<std::string>& out) {
  if (!j.is_object()) {
    out.push_back(ctx + ": mask must be an object");
    return std::nullopt;
  }
  const std::string kind = req_string(j, "kind", ctx, out);
  try {
    if (kind == "grid2d") {
      const std::size_t h = req_uint(j, "height", ctx, out);
      const std::size_t w = req_uint(j, "width", ctx, out);
      const json* rows = get_field(j, "rows");
      if (!rows || !rows->is_array()) {
        out.push_back(ctx + ": grid2d mask needs a 'rows' array");
        return std::nullopt;
      }
      std::vector<std::uint8_t> cells;
      for (const auto& row : *rows) {
        if (!row.is_string()) {
          out.push_back(ctx + ": grid2d rows must be strings");
          return std::nullopt;
        }
        auto bits = bits_from_string(row.get<std::string>(), ctx, out);
        cells.insert(cells.end(), bits.begin(), bits.end());
      }
      if (rows->size() != h || cells.size() != h * w) {
        out.push_back(ctx + ": grid2d rows do not match height " + std::to_string(h) +
                      " and width " + std::to_string(w));
        return std::nullopt;
      }
      return make_grid_mask(h, w, std::move(cells));
    }
    if (kind == "pointset") {
      const std::string points = req_string(j, "points", ctx, out);
      return make_pointset_mask(bits_from_string(points, ctx, out));
    }
    if (kind == "textspan") {
      const std::size_t start = req_uint(j, "start", ctx, out);
      const std::size_t end = req_uint(j, "end", ctx, out);
      return make_textspan_mask(start, end);
    }
  } catch (const ValidationError& e) {
    for (const auto& v : e.violations()) out.push_back(ctx + ": " + v);
    return std::nullopt;
  }
  out.push_back(ctx + ": unknown mask kind '" + kind + "'");
  return std::nullopt;
}

json mask_to_json(const MaskRegion& region) {
  json j;
  if (const auto* g = std::get_if<Grid2dMask>(&region)) {
    j["kind"] = "grid2d";
    j["height"] = g->height;
    j["width"] = g->width;
    json rows = json::array();
    for (std::size_t r = 0; r < g->height; ++r) {
      std::string row;
      for (std::size_t c = 0; c < g->width; ++c)
        row.push_back(g->cells[r * g->width + c] ? '1' : '0');
      rows.push_back(row);
    }
    j["rows"] = std::move(rows);
  } else if (const auto* p = std::get_if<PointSetMask>(&region)) {
    j["kind"] = "pointset";
    j["points"] = bits_to_string(p->points);
  } else {
    const auto& t = std::get<TextSpanMask>(region);
    j["kind"] = "textspan";
    j["start"] = t.start;
    j["end"] = t.end;
  }
  return j;
}

}  // namespace detail

using nlohmann::json;
using namespace detail;

namespace {

std::vector<RelationEdge> relations_from_json(const json& j,
                                              std::vector<std::string>& out) {
  std::vector<RelationEdge> relations;
  if (const json* rels = get_field(j, "relations")) {
    if (!rels->is_array()) {
      out.push_back("'relations' must be an array");
      return relations;
    }
    for (std::size_t i = 0; i < rels->size(); ++i) {
      const std::string ctx = "relations[" + std::to_string(i) + "]";
      const json& r = (*rels)[i];
      if (!r.is_object()) {
        out.push_back(ctx + ": must be an object");
        continue;
      }
      RelationEdge edge;
      edge.subject = req_string(r, "subject", ctx, out);
      edge.predicate = req_string(r, "predicate", ctx, out);
      edge.object = req_string(r, "object", ctx, out);
      if (const json* f = get_field(r, "frame")) {
        if (!f->is_number_unsigned()) {
          out.push_back(ctx + ": non-integer 'frame'");
        } else {
          edge.frame = f->get<std::size_t>();
        }
      }
      relations.push_back(std::move(edge));
    }
  }
  return relations;
}

json relation_to_json(const RelationEdge& e) {
  json j;
  j["subject"] = e.subject;
  j["predicate"] = e.predicate;
  j["object"] = e.object;
  if (e.frame) j["frame"] = *e.frame;
  return j;
}

}  // namespace

SceneGraph parse_scene_graph_json(const std::string& text) {
  const json j = must_parse(text);
  std::vector<std::string> out;
  if (!j.is_object()) fail({"top level must be an object"});

  const Modality modality = req_modality(j, "modality", "graph", out);
  std::size_t frame_count = 1;
  if (get_field(j, "frame_count")) frame_count = req_uint(j, "frame_count", "graph", out);

  std::vector<ObjectNode> objects;
  if (const json* objs = get_field(j, "objects")) {
    if (!objs->is_array()) {
      out.push_back("'objects' must be an array");
    } else {
      for (std::size_t i = 0; i < objs->size(); ++i) {
        const std::string ctx = "objects[" + std::to_string(i) + "]";
        const json& o = (*objs)[i];
        if (!o.is_object()) {
          out.push_back(ctx + ": must be an object");
          continue;
        }
        ObjectNode node;
        node.id = req_string(o, "id", ctx, out);
        node.label = req_string(o, "label", ctx, out);
        const json* single = get_field(o, "mask");
        const json* many = get_field(o, "masks");
        if (single && many) {
          out.push_back(ctx + ": give 'mask' or 'masks', not both");
        } else if (single) {
          if (auto region = mask_from_json(*single, ctx, out))
            node.masks.emplace(MaskKey{modality, 0}, std::move(*region));
        } else if (many) {
          if (!many->is_array()) {
            out.push_back(ctx + ": 'masks' must be an array");
          } else {
            for (std::size_t k = 0; k < many->size(); ++k) {
              const std::string mctx = ctx + ".masks[" + std::to_string(k) + "]";
              const json& m = (*many)[k];
              if (!m.is_object()) {
                out.push_back(mctx + ": must be an object");
                continue;
              }
              const std::size_t frame = req_uint(m, "frame", mctx, out);
              if (auto region = mask_from_json(m, mctx, out)) {
                if (!node.masks.emplace(MaskKey{modality, frame}, std::move(*region))
                         .second) {
                  out.push_back(mctx + ": duplicate frame " + std::to_string(frame));
                }
              }
            }
          }
        } else {
          out.push_back(ctx + ": missing 'mask'");
        }
        objects.push_back(std::move(node));
      }
    }
  }

  std::vector<RelationEdge> relations = relations_from_json(j, out);
  if (!out.empty()) fail(std::move(out));
  return build_scene_graph(modality, std::move(objects), std::move(relations),
                           frame_count);
}

std::string serialize_scene_graph(const SceneGraph& graph) {
  json j;
  j["modality"] = to_string(graph.modality);
  j["frame_count"] = graph.frame_count;
  json objs = json::array();
  for (const auto& node : graph.objects) {
    json o;
    o["id"] = node.id;
    o["label"] = node.label;
    if (node.masks.size() == 1 && node.masks.begin()->first.second == 0) {
      o["mask"] = mask_to_json(node.masks.begin()->second);
    } else {
      json masks = json::array();
      for (const auto& [key, region] : node.masks) {
        json m = mask_to_json(region);
        m["frame"] = key.second;
        masks.push_back(std::move(m));
      }
      o["masks"] = std::move(masks);
    }
    objs.push_back(std::move(o));
  }
  j["objects"] = std::move(objs);
  json rels = json::array();
  for (const auto& e : graph.relations) rels.push_back(relation_to_json(e));
  j["relations"] = std::move(rels);
  return j.dump(2) + "\n";
}

std::vector<AssociationLink> parse_links_json(const std::string& text) {
  const json j = must_parse(text);
  std::vector<std::string> out;
  std::vector<AssociationLink> links;
  const json* arr = j.is_object() ? get_field(j, "links") : nullptr;
  if (!arr || !arr->is_array()) fail({"top level must be {\"links\": [...]}"});
  for (std::size_t i = 0; i < arr->size(); ++i) {
    const std::string ctx = "links[" + std::to_string(i) + "]";
    const json& l = (*arr)[i];
    if (!l.is_object()) {
      out.push_back(ctx + ": must be an object");
      continue;
    }
    AssociationLink link;
    bool ok = true;
    if (const json* a = get_field(l, "a")) {
      if (auto ref = ref_from_json(*a, ctx + ".a", out))
        link.a = *ref;
      else
        ok = false;
    } else {
      out.push_back(ctx + ": missing 'a'");
      ok = false;
    }
    if (const json* b = get_field(l, "b")) {
      if (auto ref = ref_from_json(*b, ctx + ".b", out))
        link.b = *ref;
      else
        ok = false;
    } else {
      out.push_back(ctx + ": missing 'b'");
      ok = false;
    }
    link.score = 1.0;
    if (get_field(l, "score")) link.score = req_number(l, "score", ctx, out);
    if (ok) links.push_back(std::move(link));
  }
  if (!out.empty()) fail(std::move(out));
  return links;
}

std::string serialize_links(const std::vector<AssociationLink>& links) {
  json arr = json::array();
  for (const auto& link : links) {
    json l;
    l["a"] = json::array({to_string(link.a.first), link.a.second});
    l["b"] = json::array({to_string(link.b.first), link.b.second});
    l["score"] = link.score;
    arr.push_back(std::move(l));
  }
  json j;
  j["links"] = std::move(arr);
  return j.dump(2) + "\n";
}

UniversalSceneGraph parse_usg_json(const std::string& text) {
  const json j = must_parse(text);
  std::vector<std::string> out;
  if (!j.is_object()) fail({"top level must be an object"});

  UniversalSceneGraph usg;
  usg.frame_count = 1;
  if (get_field(j, "frame_count")) usg.frame_count = req_uint(j, "frame_count", "graph", out);

  std::set<std::string> ids;
  if (const json* objs = get_field(j, "objects")) {
    if (!objs->is_array()) {
      out.push_back("'objects' must be an array");
    } else {
      for (std::size_t i = 0; i < objs->size(); ++i) {
        const std::string ctx = "objects[" + std::to_string(i) + "]";
        const json& o = (*objs)[i];
        if (!o.is_object()) {
          out.push_back(ctx + ": must be an object");
          continue;
        }
        ObjectNode node;
        node.id = req_string(o, "id", ctx, out);
        node.label = req_string(o, "label", ctx, out);
        if (node.id.empty()) {
          out.push_back(ctx + ": empty id");
        } else if (!ids.insert(node.id).second) {
          out.push_back("duplicate object id '" + node.id + "'");
        }
        const json* masks = get_field(o, "masks");
        if (!masks || !masks->is_array()) {
          out.push_back(ctx + ": missing 'masks' array");
        } else {
          for (std::size_t k = 0; k < masks->size(); ++k) {
            const std::string mctx = ctx + ".masks[" + std::to_string(k) + "]";
            const json& m = (*masks)[k];
            if (!m.is_object()) {
              out.push_back(mctx + ": must be an object");
              continue;
            }
            const Modality mod = req_modality(m, "modality", mctx, out);
            const std::size_t frame = req_uint(m, "frame", mctx, out);
            if (frame >= usg.frame_count) {
              out.push_back(mctx + ": frame " + std::to_string(frame) +
                            " outside frame_count " + std::to_string(usg.frame_count));
            }
            if (auto region = mask_from_json(m, mctx, out)) {
              if (!node.masks.emplace(MaskKey{mod, frame}, std::move(*region)).second) {
                out.push_back(mctx + ": duplicate (modality, frame) slot");
              }
            }
          }
        }
        if (const json* mods = get_field(o, "source_modalities")) {
          if (!mods->is_array()) {
            out.push_back(ctx + ": 'source_modalities' must be an array");
          } else {
            for (const auto& m : *mods) {
              if (!m.is_string()) {
                out.push_back(ctx + ": modalities must be strings");
                continue;
              }
              auto mod = modality_from_string(m.get<std::string>());
              if (!mod) {
                out.push_back(ctx + ": unknown modality '" + m.get<std::string>() + "'");
              } else {
                node.source_modalities.insert(*mod);
              }
            }
          }
        } else {
          out.push_back(ctx + ": missing 'source_modalities'");
        }
        usg.objects.push_back(std::move(node));
      }
    }
  }

  usg.relations = relations_from_json(j, out);
  for (std::size_t i = 0; i < usg.relations.size(); ++i) {
    const auto& e = usg.relations[i];
    if (!ids.count(e.subject)) {
      out.push_back("relations[" + std::to_string(i) + "]: subject '" + e.subject +
                    "' names no object");
    }
    if (!ids.count(e.object)) {
      out.push_back("relations[" + std::to_string(i) + "]: object '" + e.object +
                    "' names no object");
    }
    if (e.frame && *e.frame >= usg.frame_count) {
      out.push_back("relations[" + std::to_string(i) + "]: frame " +
                    std::to_string(*e.frame) + " outside frame_count " +
                    std::to_string(usg.frame_count));
    }
  }

  if (const json* prov = get_field(j, "provenance")) {
    if (!prov->is_object()) {
      out.push_back("'provenance' must be an object");
    } else {
      std::set<NodeRef> seen;
      for (auto it = prov->begin(); it != prov->end(); ++it) {
        const std::string ctx = "provenance['" + it.key() + "']";
        if (!ids.count(it.key())) {
          out.push_back(ctx + ": names no object");
        }
        if (!it.value().is_array()) {
          out.push_back(ctx + ": must be an array of node references");
          continue;
        }
        for (const auto& r : it.value()) {
          if (auto ref = ref_from_json(r, ctx, out)) {
            if (!seen.insert(*ref).second) {
              out.push_back(ctx + ": source " + to_string(ref->first) + ":" +
                            ref->second + " appears in two merged nodes");
            }
            usg.provenance[it.key()].insert(*ref);
          }
        }
      }
    }
  } else {
    out.push_back("missing 'provenance'");
  }

  if (!out.empty()) fail(std::move(out));
  return usg;
}

std::string serialize_usg(const UniversalSceneGraph& usg) {
  json j;
  j["frame_count"] = usg.frame_count;
  json objs = json::array();
  for (const auto& node : usg.objects) {
    json o;
    o["id"] = node.id;
    o["label"] = node.label;
    json masks = json::array();
    for (const auto& [key, region] : node.masks) {
      json m = mask_to_json(region);
      m["modality"] = to_string(key.first);
      m["frame"] = key.second;
      masks.push_back(std::move(m));
    }
    o["masks"] = std::move(masks);
    json mods = json::array();
    for (Modality m : node.source_modalities) mods.push_back(to_string(m));
    o["source_modalities"] = std::move(mods);
    objs.push_back(std::move(o));
  }
  j["objects"] = std::move(objs);
  json rels = json::array();
  for (const auto& e : usg.relations) rels.push_back(relation_to_json(e));
  j["relations"] = std::move(rels);
  json prov = json::object();
  for (const auto& [id, refs] : usg.provenance) {
    json arr = json::array();
    for (const auto& ref : refs)
      arr.push_back(json::array({to_string(ref.first), ref.second}));
    prov[id] = std::move(arr);
  }
  j["provenance"] = std::move(prov);
  return j.dump(2) + "\n";
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) throw IoError("read failed on " + path.string());
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream outf(path, std::ios::binary);
  if (!outf) throw IoError("cannot open " + path.string() + " for writing");
  outf << text;
  outf.flush();
  if (!outf) throw IoError("write failed on " + path.string());
}

}  // namespace usg
