#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "usg/graph.hpp"
#include "usg/matrix.hpp"

namespace usg {

/// Three 3x3 kernels that pass an association grid through unchanged.
std::array<Matrix, 3> default_filter_kernels();

struct ModelConfig {
  std::size_t embed_dim = 256;
  std::size_t num_queries = 100;
  std::size_t mask_decoder_layers = 9;  // three per feature scale
  std::size_t rpc_layers = 4;
  std::size_t relation_decoder_layers = 6;
  double mask_threshold = 0.5;          // attention-mask binarization
  std::size_t top_k_pairs = 20;         // relation proposals kept per graph
  double association_threshold = 0.5;   // cross-modal link acceptance
  std::array<Matrix, 3> associator_filter = default_filter_kernels();
};

/// Object queries for one modality stream.
struct QuerySet {
  Modality modality = Modality::image;
  Matrix queries;  // num_queries x embed_dim
};

/// Additive attention mask: 0 admits a key, -inf silences it. Construction
/// rejects any other entry.
class AttentionMask {
 public:
  explicit AttentionMask(Matrix values);
  static AttentionMask open(std::size_t rows, std::size_t cols) {
    return AttentionMask(Matrix(rows, cols, 0.0));
  }
  const Matrix& values() const noexcept { return values_; }

 private:
  Matrix values_;
};

struct AffineParams {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out

  static AffineParams identity(std::size_t d);
  static AffineParams zero(std::size_t in, std::size_t out);
};

struct AttentionParams {
  AffineParams query, key, value;
};

/// Two affine layers with a ReLU between them.
struct MlpParams {
  AffineParams first, second;
};

struct MaskDecoderParams {
  std::vector<AttentionParams> layers;
  MlpParams mask_mlp;  // queries -> mask embeddings dotted with pixel features
};

struct AssociatorParams {
  AffineParams forward_map;   // a-queries into b-space
  AffineParams backward_map;  // b-queries into a-space
};

struct FilterParams {
  std::array<double, 3> biases{0.0, 0.0, 0.0};
};

struct ProjectionParams {
  MlpParams subject, object;
};

struct RpcLayerParams {
  AttentionParams cross_subject;  // subject stream reading the object stream
  AttentionParams cross_object;   // object stream reading the subject stream
  AttentionParams self_subject;
  AttentionParams self_object;
};

struct RpcParams {
  std::vector<RpcLayerParams> layers;
};

/// Learned role markers added to selected pair rows.
struct RoleEmbeddings {
  Matrix subject_role;  // 1 x embed_dim
  Matrix object_role;   // 1 x embed_dim
};

struct RelationDecoderLayerParams {
  AttentionParams cross;      // tokens reading scene context
  AttentionParams self_attn;  // tokens reading each other
  MlpParams ffn;
};

struct RelationDecoderParams {
  std::vector<RelationDecoderLayerParams> layers;
};

struct ModelParams {
  MaskDecoderParams mask_decoder;
  AttentionParams temporal;
  AssociatorParams associator;
  FilterParams filter;
  ProjectionParams projection;
  RpcParams rpc;
  RoleEmbeddings roles;
  RelationDecoderParams relation_decoder;

  /// All weights drawn from labeled substreams of `seed`: the same seed
  /// always rebuilds bitwise-identical parameters, and each matrix has its
  /// own stream so layouts can grow without shifting neighbours.
  static ModelParams seeded(const ModelConfig& config, RngSeed seed);

  /// Flat name -> matrix view of every parameter (scalars as 1x1).
  std::map<std::string, Matrix> to_named() const;
  static ModelParams from_named(const ModelConfig& config,
                                const std::map<std::string, Matrix>& named);
};

struct DetectionOutput {
  Matrix class_logits;  // num_queries x (labels + 1), last column = "no object"
  Matrix mask_probs;    // num_queries x pixels
};

struct AssociationMatrix {
  Matrix raw;      // bidirectional cosine agreement, in [-1, 1]
  Matrix refined;  // filtered scores, in (0, 1)
};

struct AssociationMatch {
  std::size_t a = 0;
  std::size_t b = 0;
  double score = 0.0;
};

/// Confidence that query i (as subject) and query j (as object) form a
/// related pair; entries in [-1, 1].
using PairConfidenceMatrix = Matrix;

struct RelationQuerySet {
  /// 2k x d: row t is the subject token of pair t, row k+t its object token.
  Matrix tokens;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

// --- ops --------------------------------------------------------------------

/// Deterministic learned queries; depends only on (config, seed). The
/// modality tags the stream so downstream stages know their provenance.
QuerySet init_queries(const ModelConfig& config, Modality modality, RngSeed seed);

/// mask_probs in [0, 1] -> additive mask: prob >= threshold admits (0), below
/// silences (-inf). Threshold must lie strictly inside (0, 1).
AttentionMask binarize_attention_mask(const Matrix& mask_probs, double threshold);

/// One masked cross-attention layer:
///   softmax(mask + Q K^T) V + x_prev
/// with Q from x_prev and K, V from features. A silenced key has exactly zero
/// influence on the output.
Matrix mask_decoder_step(const Matrix& x_prev, const Matrix& features,
                         const AttentionMask& mask, const AttentionParams& params);

/// Full decoder stack: per layer, predict masks from the current queries,
/// binarize at config.mask_threshold, then one masked step against the scale
/// for that layer (scales are cycled round-robin).
QuerySet run_mask_decoder(const QuerySet& x0, const std::vector<Matrix>& multiscale_features,
                          const ModelConfig& config, const MaskDecoderParams& params);

/// Self-attention per query index across frames, with residual. Input and
/// output are per-frame query matrices of identical shape.
std::vector<Matrix> temporal_encode(const std::vector<Matrix>& frame_queries,
                                    const AttentionParams& params);

/// Raw association scores between two query streams: the average of the two
/// directional cosine agreements (Na x Nb).
Matrix associate_objects(const QuerySet& qa, const QuerySet& qb,
                         const AssociatorParams& params);

/// Smooths a raw association grid with three stacked 3x3 convolutions (ReLU
/// between, logistic after the last); output entries in (0, 1).
Matrix filter_associations(const Matrix& raw, const ModelConfig& config,
                           const FilterParams& params);

/// One-to-one matches maximizing total refined score; matches scoring below
/// threshold are dropped. Results sorted by row index.
std::vector<AssociationMatch> infer_associations(const Matrix& refined, double threshold);

/// q_i += sum_j assoc[p](i, j) * partners[p].row(j), for every partner stream.
Matrix fuse_queries(const Matrix& queries, const std::vector<Matrix>& partner_queries,
                    const std::vector<Matrix>& assoc_matrices);

/// Per-query label logits against the given embeddings (one row per label,
/// the designated last row meaning "no object").
Matrix classify_objects(const Matrix& queries, const Matrix& label_embeddings);

/// Per-query, per-pixel mask probabilities: logistic(MLP(q) . pixel_feats^T).
Matrix predict_masks(const Matrix& queries, const Matrix& pixel_features,
                     const MlpParams& params);

/// Splits fused queries into subject and object streams via two MLPs.
std::pair<Matrix, Matrix> project_subject_object(const Matrix& queries,
                                                 const ProjectionParams& params);

/// Alternating two-way cross-attention between the streams (both directions
/// read the previous layer), each followed by self-attention; residuals
/// throughout.
std::pair<Matrix, Matrix> rpc_refine(const Matrix& x_sub, const Matrix& x_obj,
                                     const ModelConfig& config, const RpcParams& params);

/// Pairwise cosine between refined subject and object streams.
PairConfidenceMatrix pair_confidence(const Matrix& x_sub, const Matrix& x_obj);

/// The k highest-confidence (subject, object) index pairs, ordered by
/// (score desc, row asc, col asc). k must not exceed the pair count.
std::vector<std::pair<std::size_t, std::size_t>> select_top_k_pairs(
    const PairConfidenceMatrix& confidence, std::size_t k);

/// Stacks the selected subject rows (plus the subject role marker) over the
/// selected object rows (plus the object role marker).
RelationQuerySet build_relation_queries(
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs, const Matrix& x_sub,
    const Matrix& x_obj, const RoleEmbeddings& roles);

/// Refines relation tokens against scene context: per layer cross-attention,
/// self-attention, and a feed-forward block, each with a residual.
Matrix relation_decode(const RelationQuerySet& queries, const Matrix& context,
                       const ModelConfig& config, const RelationDecoderParams& params);

/// Predicate logits per pair: the subject and object tokens of each pair are
/// mean-pooled, then dotted with every predicate embedding.
Matrix classify_relations(const Matrix& tokens, const Matrix& predicate_embeddings);

/// Chosen label per query row by maximum cosine; ties resolve to the smaller
/// label index. names.size() must equal label_embeddings.rows().
std::vector<std::string> open_vocab_label(const Matrix& queries,
                                          const Matrix& label_embeddings,
                                          const std::vector<std::string>& names);

}  // namespace usg
