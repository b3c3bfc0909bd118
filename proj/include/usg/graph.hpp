#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace usg {

/// Input validation failure. Carries every violation found, not just the
/// first, so callers can report them all at once.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// Filesystem-level failure (missing file, unwritable path, short read).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Modality { text, image, video, point3d };

/// Lower value wins when choosing a merged node's label.
int label_priority(Modality m);
std::string to_string(Modality m);
std::optional<Modality> modality_from_string(const std::string& s);

struct Grid2dMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> cells;  // row-major, height*width, 0/1
};

struct PointSetMask {
  std::vector<std::uint8_t> points;  // one flag per scene point, 0/1
};

struct TextSpanMask {
  std::size_t start = 0;  // token offsets, half-open [start, end)
  std::size_t end = 0;
};

using MaskRegion = std::variant<Grid2dMask, PointSetMask, TextSpanMask>;

MaskRegion make_grid_mask(std::size_t height, std::size_t width,
                          std::vector<std::uint8_t> cells);
MaskRegion make_pointset_mask(std::vector<std::uint8_t> points);
MaskRegion make_textspan_mask(std::size_t start, std::size_t end);

/// Intersection-over-union between two regions of the same kind; regions of
/// different kinds do not overlap and score 0. Two empty regions score 0.
double mask_iou(const MaskRegion& a, const MaskRegion& b);

/// (modality, frame) key for a node's mask. Single-frame modalities use
/// frame 0; video tracks carry one entry per frame they appear in.
using MaskKey = std::pair<Modality, std::size_t>;

struct ObjectNode {
  std::string id;
  std::string label;
  std::map<MaskKey, MaskRegion> masks;
  std::set<Modality> source_modalities;
};

struct RelationEdge {
  std::string subject;  // node id
  std::string predicate;
  std::string object;  // node id
  std::optional<std::size_t> frame;  // video relations only
};

struct SceneGraph {
  Modality modality = Modality::text;
  std::vector<ObjectNode> objects;
  std::vector<RelationEdge> relations;
  std::size_t frame_count = 1;

  const ObjectNode* find(const std::string& id) const;
};

/// (modality, original node id): how association links address nodes.
using NodeRef = std::pair<Modality, std::string>;

struct AssociationLink {
  NodeRef a;
  NodeRef b;
  double score = 0.0;  // in [0, 1]
};

struct UniversalSceneGraph {
  std::vector<ObjectNode> objects;   // sorted by id
  std::vector<RelationEdge> relations;
  /// merged node id -> every source (modality, original id) folded into it.
  /// The value sets partition all source node refs.
  std::map<std::string, std::set<NodeRef>> provenance;
  std::size_t frame_count = 1;

  const ObjectNode* find(const std::string& id) const;
};

struct GraphBuildOptions {
  bool allow_self_relations = false;
};

/// All violations in the proposed graph, empty when valid: duplicate or empty
/// ids, relation endpoints that name no node, frame indices outside
/// [0, frame_count), masks keyed to foreign modalities, nodes without masks.
std::vector<std::string> validate_scene_graph(Modality modality,
                                              const std::vector<ObjectNode>& objects,
                                              const std::vector<RelationEdge>& relations,
                                              std::size_t frame_count,
                                              const GraphBuildOptions& options = {});

/// Validates and assembles; throws ValidationError carrying every violation.
SceneGraph build_scene_graph(Modality modality, std::vector<ObjectNode> objects,
                             std::vector<RelationEdge> relations,
                             std::size_t frame_count = 1,
                             const GraphBuildOptions& options = {});

/// Violations for a link set against its source graphs: endpoints that
/// resolve to no node, same-modality links, scores outside [0, 1].
std::vector<std::string> validate_links(const std::vector<SceneGraph>& graphs,
                                        const std::vector<AssociationLink>& links);

/// Connected components of the association relation over all graph nodes.
/// Unlinked nodes form singletons. Components are ordered by their smallest
/// member, members by (modality priority, id).
std::vector<std::vector<NodeRef>> merge_components(
    const std::vector<SceneGraph>& graphs, const std::vector<AssociationLink>& links);

/// Folds per-modality graphs into one universal graph. Linked nodes collapse
/// transitively into single nodes that keep every source mask; labels follow
/// modality priority (then smallest source id); edges are rewritten onto
/// merged ids, and when several collapse onto one (subject, object, frame)
/// slot, text-sourced predicates displace the rest.
UniversalSceneGraph merge_usg(const std::vector<SceneGraph>& graphs,
                              const std::vector<AssociationLink>& links);

/// Places a static universal graph as frame 0 of a video timeline: video
/// frames shift to 1..F, linked static/video nodes merge into tracked nodes,
/// and the result spans frame_count = F + 1. Static relations stay unframed
/// (they hold over the whole timeline). An empty zero-frame video returns the
/// static graph unchanged.
UniversalSceneGraph align_video_usg(const UniversalSceneGraph& static_graph,
                                    const SceneGraph& video,
                                    const std::vector<AssociationLink>& links);

/// Graphviz rendering with one shape per source-modality set. Deterministic:
/// nodes sorted by id, edges by (subject, object, predicate, frame).
std::string export_dot(const UniversalSceneGraph& usg);

}  // namespace usg
