#include "usg/graph.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace usg {

namespace {

std::string join_violations(const std::vector<std::string>& violations) {
  std::ostringstream os;
  os << violations.size() << " validation error(s)";
  for (const auto& v : violations) os << "\n  - " << v;
  return os.str();
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> violations)
    : std::runtime_error(join_violations(violations)),
      violations_(std::move(violations)) {}

int label_priority(Modality m) {
  switch (m) {
    case Modality::text: return 0;
    case Modality::image: return 1;
    case Modality::video: return 2;
    case Modality::point3d: return 3;
  }
  return 4;
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::text: return "text";
    case Modality::image: return "image";
    case Modality::video: return "video";
    case Modality::point3d: return "point3d";
  }
  return "unknown";
}

std::optional<Modality> modality_from_string(const std::string& s) {
  if (s == "text") return Modality::text;
  if (s == "image") return Modality::image;
  if (s == "video") return Modality::video;
  if (s == "point3d") return Modality::point3d;
  return std::nullopt;
}

MaskRegion make_grid_mask(std::size_t height, std::size_t width,
                          std::vector<std::uint8_t> cells) {
  if (height == 0 || width == 0) {
    throw ValidationError({"grid mask: dimensions must be positive, got " +
                           std::to_string(height) + "x" + std::to_string(width)});
  }
  if (cells.size() != height * width) {
    throw ValidationError({"grid mask: " + std::to_string(cells.size()) +
                           " cells for a " + std::to_string(height) + "x" +
                           std::to_string(width) + " grid"});
  }
  for (auto& c : cells) c = c ? 1 : 0;
  return Grid2dMask{height, width, std::move(cells)};
}

MaskRegion make_pointset_mask(std::vector<std::uint8_t> points) {
  for (auto& p : points) p = p ? 1 : 0;
  return PointSetMask{std::move(points)};
}

MaskRegion make_textspan_mask(std::size_t start, std::size_t end) {
  if (start > end) {
    throw ValidationError({"text span: start " + std::to_string(start) +
                           " exceeds end " + std::to_string(end)});
  }
  return TextSpanMask{start, end};
}

double mask_iou(const MaskRegion& a, const MaskRegion& b) {
  if (a.index() != b.index()) return 0.0;  // different kinds never overlap
  if (const auto* ga = std::get_if<Grid2dMask>(&a)) {
    const auto& gb = std::get<Grid2dMask>(b);
    std::size_t inter = 0, ca = 0, cb = 0;
    for (std::size_t r = 0; r < std::max(ga->height, gb.height); ++r) {
      for (std::size_t c = 0; c < std::max(ga->width, gb.width); ++c) {
        const bool ia = r < ga->height && c < ga->width && ga->cells[r * ga->width + c];
        const bool ib = r < gb.height && c < gb.width && gb.cells[r * gb.width + c];
        ca += ia;
        cb += ib;
        inter += ia && ib;
      }
    }
    const std::size_t uni = ca + cb - inter;
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
  }
  if (const auto* pa = std::get_if<PointSetMask>(&a)) {
    const auto& pb = std::get<PointSetMask>(b);
    std::size_t inter = 0, ca = 0, cb = 0;
    const std::size_t n = std::max(pa->points.size(), pb.points.size());
    for (std::size_t i = 0; i < n; ++i) {
      const bool ia = i < pa->points.size() && pa->points[i];
      const bool ib = i < pb.points.size() && pb.points[i];
      ca += ia;
      cb += ib;
      inter += ia && ib;
    }
    const std::size_t uni = ca + cb - inter;
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
  }
  const auto& ta = std::get<TextSpanMask>(a);
  const auto& tb = std::get<TextSpanMask>(b);
  const std::size_t lo = std::max(ta.start, tb.start);
  const std::size_t hi = std::min(ta.end, tb.end);
  const std::size_t inter = hi > lo ? hi - lo : 0;
  const std::size_t uni = (ta.end - ta.start) + (tb.end - tb.start) - inter;
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

const ObjectNode* SceneGraph::find(const std::string& id) const {
  for (const auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

const ObjectNode* UniversalSceneGraph::find(const std::string& id) const {
  for (const auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

std::vector<std::string> validate_scene_graph(Modality modality,
                                              const std::vector<ObjectNode>& objects,
                                              const std::vector<RelationEdge>& relations,
                                              std::size_t frame_count,
                                              const GraphBuildOptions& options) {
  std::vector<std::string> out;
  if (modality != Modality::video && frame_count != 1) {
    out.push_back("frame_count " + std::to_string(frame_count) +
                  " on static modality " + to_string(modality));
  }
  std::set<std::string> ids;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& node = objects[i];
    if (node.id.empty()) {
      out.push_back("object " + std::to_string(i) + ": empty id");
      continue;
    }
    if (!ids.insert(node.id).second) {
      out.push_back("duplicate object id '" + node.id + "'");
    }
    if (node.masks.empty()) {
      out.push_back("object '" + node.id + "': no masks");
    }
    for (const auto& [key, region] : node.masks) {
      (void)region;
      if (key.first != modality) {
        out.push_back("object '" + node.id + "': mask modality " + to_string(key.first) +
                      " does not match graph modality " + to_string(modality));
      }
      if (key.second >= frame_count) {
        out.push_back("object '" + node.id + "': mask frame " + std::to_string(key.second) +
                      " outside frame_count " + std::to_string(frame_count));
      }
    }
  }
  for (std::size_t i = 0; i < relations.size(); ++i) {
    const auto& rel = relations[i];
    if (!ids.count(rel.subject)) {
      out.push_back("relation " + std::to_string(i) + ": subject '" + rel.subject +
                    "' names no object");
    }
    if (!ids.count(rel.object)) {
      out.push_back("relation " + std::to_string(i) + ": object '" + rel.object +
                    "' names no object");
    }
    if (rel.subject == rel.object && !options.allow_self_relations) {
      out.push_back("relation " + std::to_string(i) + ": subject equals object ('" +
                    rel.subject + "')");
    }
    if (rel.frame) {
      if (modality != Modality::video) {
        out.push_back("relation " + std::to_string(i) + ": frame set on " +
                      to_string(modality) + " graph");
      } else if (*rel.frame >= frame_count) {
        out.push_back("relation " + std::to_string(i) + ": frame " +
                      std::to_string(*rel.frame) + " outside frame_count " +
                      std::to_string(frame_count));
      }
    }
  }
  return out;
}

SceneGraph build_scene_graph(Modality modality, std::vector<ObjectNode> objects,
                             std::vector<RelationEdge> relations,
                             std::size_t frame_count,
                             const GraphBuildOptions& options) {
  auto violations =
      validate_scene_graph(modality, objects, relations, frame_count, options);
  if (!violations.empty()) throw ValidationError(std::move(violations));
  SceneGraph g;
  g.modality = modality;
  g.objects = std::move(objects);
  g.relations = std::move(relations);
  g.frame_count = frame_count;
  for (auto& node : g.objects) node.source_modalities = {modality};
  return g;
}

std::vector<std::string> validate_links(const std::vector<SceneGraph>& graphs,
                                        const std::vector<AssociationLink>& links) {
  std::vector<std::string> out;
  std::set<NodeRef> known;
  for (const auto& g : graphs)
    for (const auto& node : g.objects) known.insert({g.modality, node.id});
  for (std::size_t i = 0; i < links.size(); ++i) {
    const auto& link = links[i];
    if (link.a.first == link.b.first) {
      out.push_back("link " + std::to_string(i) + ": endpoints share modality " +
                    to_string(link.a.first));
    }
    for (const NodeRef* ref : {&link.a, &link.b}) {
      if (!known.count(*ref)) {
        out.push_back("link " + std::to_string(i) + ": endpoint " +
                      to_string(ref->first) + ":" + ref->second + " names no node");
      }
    }
    if (!(link.score >= 0.0 && link.score <= 1.0)) {
      std::ostringstream os;
      os << "link " << i << ": score " << link.score << " outside [0, 1]";
      out.push_back(os.str());
    }
  }
  return out;
}

namespace {

// Union-find over dense indices.
class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) { parent_[find(a)] = find(b); }

 private:
  std::vector<std::size_t> parent_;
};

// One pre-merge unit: either a single source node (merge_usg) or an
// already-merged static node being aligned against a video (align_video_usg).
struct MergeUnit {
  std::string merged_id;  // id this unit contributes if it wins its component
  std::string label;
  int priority = 4;        // label priority class of the unit's label donor
  std::string donor_id;    // original id of the donor, for tie-breaking
  std::map<MaskKey, MaskRegion> masks;
  std::set<Modality> source_modalities;
  std::set<NodeRef> provenance;
};

struct PendingEdge {
  std::size_t subject_unit = 0;
  std::size_t object_unit = 0;
  std::string predicate;
  std::optional<std::size_t> frame;
  bool text_sourced = false;
};

bool frame_less(const std::optional<std::size_t>& a, const std::optional<std::size_t>& b) {
  if (a.has_value() != b.has_value()) return !a.has_value();  // unframed first
  return a.has_value() && *a < *b;
}

bool edge_less(const RelationEdge& x, const RelationEdge& y) {
  if (x.subject != y.subject) return x.subject < y.subject;
  if (x.object != y.object) return x.object < y.object;
  if (x.frame != y.frame) return frame_less(x.frame, y.frame);
  return x.predicate < y.predicate;
}

// Shared collapse step: components over units become merged nodes; pending
// edges are rewritten, then text-sourced predicates displace others that
// landed on the same (subject, object, frame) slot.
UniversalSceneGraph collapse_units(std::vector<MergeUnit> units,
                                   const std::vector<std::pair<std::size_t, std::size_t>>& unions,
                                   const std::vector<PendingEdge>& edges,
                                   std::size_t frame_count) {
  DisjointSet ds(units.size());
  for (const auto& [a, b] : unions) ds.unite(a, b);

  std::map<std::size_t, std::vector<std::size_t>> components;
  for (std::size_t i = 0; i < units.size(); ++i) components[ds.find(i)].push_back(i);

  UniversalSceneGraph out;
  out.frame_count = frame_count;
  std::vector<std::string> unit_to_node(units.size());
  for (auto& [root, members] : components) {
    (void)root;
    // Donor order: strongest modality first, then smallest source id.
    std::sort(members.begin(), members.end(), [&](std::size_t x, std::size_t y) {
      const auto& ux = units[x];
      const auto& uy = units[y];
      if (ux.priority != uy.priority) return ux.priority < uy.priority;
      if (ux.donor_id != uy.donor_id) return ux.donor_id < uy.donor_id;
      return ux.merged_id < uy.merged_id;
    });
    ObjectNode node;
    node.id = units[members.front()].merged_id;
    node.label = units[members.front()].label;
    for (std::size_t idx : members) {
      auto& unit = units[idx];
      unit_to_node[idx] = node.id;
      // insert() keeps the donor's region when two sources collide on a key.
      for (auto& [key, region] : unit.masks) node.masks.insert({key, std::move(region)});
      node.source_modalities.insert(unit.source_modalities.begin(),
                                    unit.source_modalities.end());
      out.provenance[node.id].insert(unit.provenance.begin(), unit.provenance.end());
    }
    out.objects.push_back(std::move(node));
  }
  std::sort(out.objects.begin(), out.objects.end(),
            [](const ObjectNode& a, const ObjectNode& b) { return a.id < b.id; });

  // Rewrite edges onto merged ids and group by (subject, object, frame).
  struct Slot {
    std::vector<std::pair<std::string, bool>> predicates;  // (predicate, text?)
  };
  std::map<std::tuple<std::string, std::string, std::optional<std::size_t>>, Slot> slots;
  for (const auto& e : edges) {
    auto key = std::make_tuple(unit_to_node[e.subject_unit], unit_to_node[e.object_unit],
                               e.frame);
    slots[key].predicates.push_back({e.predicate, e.text_sourced});
  }
  for (const auto& [key, slot] : slots) {
    const bool any_text = std::any_of(slot.predicates.begin(), slot.predicates.end(),
                                      [](const auto& p) { return p.second; });
    std::set<std::string> kept;
    for (const auto& [pred, is_text] : slot.predicates) {
      if (any_text && !is_text) continue;  // text predicate displaces the rest
      kept.insert(pred);
    }
    for (const auto& pred : kept) {
      out.relations.push_back(
          {std::get<0>(key), pred, std::get<1>(key), std::get<2>(key)});
    }
  }
  std::sort(out.relations.begin(), out.relations.end(), edge_less);
  return out;
}

std::string namespaced(Modality m, const std::string& id) {
  return to_string(m) + ":" + id;
}

}  // namespace

std::vector<std::vector<NodeRef>> merge_components(
    const std::vector<SceneGraph>& graphs, const std::vector<AssociationLink>& links) {
  auto violations = validate_links(graphs, links);
  if (!violations.empty()) throw ValidationError(std::move(violations));

  std::vector<NodeRef> refs;
  std::map<NodeRef, std::size_t> index;
  for (const auto& g : graphs) {
    for (const auto& node : g.objects) {
      NodeRef ref{g.modality, node.id};
      index.emplace(ref, refs.size());
      refs.push_back(ref);
    }
  }
  DisjointSet ds(refs.size());
  for (const auto& link : links) ds.unite(index.at(link.a), index.at(link.b));

  std::map<std::size_t, std::vector<NodeRef>> by_root;
  for (std::size_t i = 0; i < refs.size(); ++i) by_root[ds.find(i)].push_back(refs[i]);

  auto ref_less = [](const NodeRef& a, const NodeRef& b) {
    const int pa = label_priority(a.first), pb = label_priority(b.first);
    if (pa != pb) return pa < pb;
    return a.second < b.second;
  };
  std::vector<std::vector<NodeRef>> out;
  for (auto& [root, members] : by_root) {
    (void)root;
    std::sort(members.begin(), members.end(), ref_less);
    out.push_back(std::move(members));
  }
  std::sort(out.begin(), out.end(),
            [&](const auto& a, const auto& b) { return ref_less(a.front(), b.front()); });
  return out;
}

UniversalSceneGraph merge_usg(const std::vector<SceneGraph>& graphs,
                              const std::vector<AssociationLink>& links) {
  std::vector<std::string> violations;
  std::set<Modality> seen;
  for (const auto& g : graphs) {
    if (!seen.insert(g.modality).second) {
      violations.push_back("two graphs share modality " + to_string(g.modality));
    }
  }
  auto link_violations = validate_links(graphs, links);
  violations.insert(violations.end(), link_violations.begin(), link_violations.end());
  if (!violations.empty()) throw ValidationError(std::move(violations));

  std::vector<MergeUnit> units;
  std::map<NodeRef, std::size_t> index;
  std::size_t frame_count = 1;
  for (const auto& g : graphs) {
    frame_count = std::max(frame_count, g.frame_count);
    for (const auto& node : g.objects) {
      MergeUnit u;
      u.merged_id = namespaced(g.modality, node.id);
      u.label = node.label;
      u.priority = label_priority(g.modality);
      u.donor_id = node.id;
      u.masks = node.masks;
      u.source_modalities = {g.modality};
      u.provenance = {{g.modality, node.id}};
      index.emplace(NodeRef{g.modality, node.id}, units.size());
      units.push_back(std::move(u));
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> unions;
  for (const auto& link : links) unions.push_back({index.at(link.a), index.at(link.b)});

  std::vector<PendingEdge> edges;
  for (const auto& g : graphs) {
    const bool is_text = g.modality == Modality::text;
    for (const auto& rel : g.relations) {
      edges.push_back({index.at({g.modality, rel.subject}),
                       index.at({g.modality, rel.object}), rel.predicate, rel.frame,
                       is_text});
    }
  }
  return collapse_units(std::move(units), unions, edges, frame_count);
}

UniversalSceneGraph align_video_usg(const UniversalSceneGraph& static_graph,
                                    const SceneGraph& video,
                                    const std::vector<AssociationLink>& links) {
  std::vector<std::string> violations;
  if (static_graph.frame_count != 1) {
    violations.push_back("static graph spans " + std::to_string(static_graph.frame_count) +
                         " frames, expected 1");
  }
  if (video.modality != Modality::video) {
    violations.push_back("video graph has modality " + to_string(video.modality));
  }
  // Source refs in the static graph, for resolving link endpoints.
  std::map<NodeRef, std::size_t> static_index;   // source ref -> unit
  std::map<std::string, std::size_t> node_index;  // merged id -> unit

  std::vector<MergeUnit> units;
  for (const auto& node : static_graph.objects) {
    MergeUnit u;
    u.merged_id = node.id;
    u.label = node.label;
    auto prov_it = static_graph.provenance.find(node.id);
    const std::set<NodeRef> prov = prov_it != static_graph.provenance.end()
                                       ? prov_it->second
                                       : std::set<NodeRef>{};
    // Recover the label donor: strongest modality present, smallest id in it.
    for (const auto& ref : prov) {
      if (ref.first == Modality::video) {
        violations.push_back("static graph already carries video source " + ref.second);
      }
      const int p = label_priority(ref.first);
      if (p < u.priority || (p == u.priority && ref.second < u.donor_id)) {
        u.priority = p;
        u.donor_id = ref.second;
      }
    }
    u.masks = node.masks;
    u.source_modalities = node.source_modalities;
    u.provenance = prov;
    node_index.emplace(node.id, units.size());
    for (const auto& ref : prov) static_index.emplace(ref, units.size());
    units.push_back(std::move(u));
  }

  if (video.objects.empty() && video.relations.empty() && video.frame_count == 0) {
    if (!violations.empty()) throw ValidationError(std::move(violations));
    return static_graph;  // nothing to align against
  }

  std::map<std::string, std::size_t> video_index;
  for (const auto& node : video.objects) {
    MergeUnit u;
    u.merged_id = namespaced(Modality::video, node.id);
    u.label = node.label;
    u.priority = label_priority(Modality::video);
    u.donor_id = node.id;
    for (const auto& [key, region] : node.masks) {
      // The static scene occupies frame 0; video frames shift up by one.
      u.masks.emplace(MaskKey{key.first, key.second + 1}, region);
    }
    u.source_modalities = {Modality::video};
    u.provenance = {{Modality::video, node.id}};
    video_index.emplace(node.id, units.size());
    units.push_back(std::move(u));
  }

  auto resolve = [&](const NodeRef& ref, std::size_t link_idx,
                     std::optional<std::size_t>& slot) {
    if (ref.first == Modality::video) {
      auto it = video_index.find(ref.second);
      if (it == video_index.end()) {
        violations.push_back("link " + std::to_string(link_idx) + ": endpoint video:" +
                             ref.second + " names no node");
      } else {
        slot = it->second;
      }
    } else {
      auto it = static_index.find(ref);
      if (it == static_index.end()) {
        violations.push_back("link " + std::to_string(link_idx) + ": endpoint " +
                             to_string(ref.first) + ":" + ref.second + " names no node");
      } else {
        slot = it->second;
      }
    }
  };

  std::vector<std::pair<std::size_t, std::size_t>> unions;
  for (std::size_t i = 0; i < links.size(); ++i) {
    const auto& link = links[i];
    if ((link.a.first == Modality::video) == (link.b.first == Modality::video)) {
      violations.push_back("link " + std::to_string(i) +
                           ": alignment links join one video and one static endpoint");
      continue;
    }
    std::optional<std::size_t> a, b;
    resolve(link.a, i, a);
    resolve(link.b, i, b);
    if (!(link.score >= 0.0 && link.score <= 1.0)) {
      std::ostringstream os;
      os << "link " << i << ": score " << link.score << " outside [0, 1]";
      violations.push_back(os.str());
    }
    if (a && b) unions.push_back({*a, *b});
  }
  if (!violations.empty()) throw ValidationError(std::move(violations));

  std::vector<PendingEdge> edges;
  for (const auto& rel : static_graph.relations) {
    // Static relations stay unframed: they describe the scene as a whole.
    edges.push_back({node_index.at(rel.subject), node_index.at(rel.object), rel.predicate,
                     rel.frame, false});
  }
  for (const auto& rel : video.relations) {
    std::optional<std::size_t> frame;
    if (rel.frame) frame = *rel.frame + 1;
    edges.push_back({video_index.at(rel.subject), video_index.at(rel.object),
                     rel.predicate, frame, false});
  }

  // Text predicates inside the static graph already won their slots during
  // merge_usg; here text-priority only matters if a static edge and a video
  // edge collapse together, which framing prevents (static edges are
  // unframed, video edges are framed).
  return collapse_units(std::move(units), unions, edges, video.frame_count + 1);
}

std::string export_dot(const UniversalSceneGraph& usg) {
  auto escape = [](const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
      if (c == '"' || c == '\\') out.push_back('\\');
      out.push_back(c);
    }
    return out;
  };
  auto shape_for = [](const std::set<Modality>& mods) -> std::string {
    if (mods.size() != 1) return "doubleoctagon";
    switch (*mods.begin()) {
      case Modality::text: return "box";
      case Modality::image: return "ellipse";
      case Modality::video: return "hexagon";
      case Modality::point3d: return "diamond";
    }
    return "plaintext";
  };

  std::vector<const ObjectNode*> nodes;
  for (const auto& n : usg.objects) nodes.push_back(&n);
  std::sort(nodes.begin(), nodes.end(),
            [](const ObjectNode* a, const ObjectNode* b) { return a->id < b->id; });
  std::vector<RelationEdge> edges = usg.relations;
  std::sort(edges.begin(), edges.end(), [](const RelationEdge& a, const RelationEdge& b) {
    if (a.subject != b.subject) return a.subject < b.subject;
    if (a.object != b.object) return a.object < b.object;
    if (a.predicate != b.predicate) return a.predicate < b.predicate;
    return frame_less(a.frame, b.frame);
  });

  std::ostringstream os;
  os << "digraph usg {\n";
  os << "  rankdir=LR;\n";
  for (const ObjectNode* n : nodes) {
    os << "  \"" << escape(n->id) << "\" [label=\"" << escape(n->label) << "\", shape="
       << shape_for(n->source_modalities) << "];\n";
  }
  for (const auto& e : edges) {
    os << "  \"" << escape(e.subject) << "\" -> \"" << escape(e.object) << "\" [label=\""
       << escape(e.predicate);
    if (e.frame) os << " [f=" << *e.frame << "]";
    os << "\"];\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace usg
