#include "usg/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "usg/losses.hpp"

namespace usg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_cols(const Matrix& m, std::size_t d, const char* what) {
  if (m.cols() != d) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(d) +
                         " columns, got " + m.shape_str());
  }
}

// softmax(Fq(x) Fk(y)^T + mask) Fv(y); pass an empty mask for none.
Matrix attend(const Matrix& x, const Matrix& y, const Matrix* mask,
              const AttentionParams& p) {
  const Matrix q = affine(x, p.query.weight, p.query.bias);
  const Matrix k = affine(y, p.key.weight, p.key.bias);
  const Matrix v = affine(y, p.value.weight, p.value.bias);
  Matrix logits = matmul(q, transpose(k));
  if (mask) {
    if (!mask->same_shape(logits)) {
      throw DimensionError("attention mask (" + mask->shape_str() +
                           ") does not cover scores (" + logits.shape_str() + ")");
    }
    logits = add(logits, *mask);
  }
  return matmul(row_softmax(logits), v);
}

Matrix mlp(const Matrix& x, const MlpParams& p) {
  return affine(relu(affine(x, p.first.weight, p.first.bias)), p.second.weight,
                p.second.bias);
}

}  // namespace

std::array<Matrix, 3> default_filter_kernels() {
  std::array<Matrix, 3> kernels;
  for (auto& k : kernels) {
    k = Matrix(3, 3);
    k(1, 1) = 1.0;
  }
  return kernels;
}

AttentionMask::AttentionMask(Matrix values) : values_(std::move(values)) {
  for (std::size_t r = 0; r < values_.rows(); ++r) {
    for (std::size_t c = 0; c < values_.cols(); ++c) {
      const double v = values_(r, c);
      if (v != 0.0 && v != kNegInf) {
        throw NumericError("attention mask entries must be 0 or -inf, got " +
                           std::to_string(v) + " at (" + std::to_string(r) + "," +
                           std::to_string(c) + ")");
      }
    }
  }
}

AffineParams AffineParams::identity(std::size_t d) {
  return {Matrix::identity(d), Matrix(1, d)};
}

AffineParams AffineParams::zero(std::size_t in, std::size_t out) {
  return {Matrix(in, out), Matrix(1, out)};
}

namespace {

AffineParams seeded_affine(const WeightRng& rng, const std::string& name, std::size_t in,
                           std::size_t out) {
  AffineParams p;
  p.weight = rng.stream(name + ".weight").fan_in_matrix(in, out, in);
  p.bias = rng.stream(name + ".bias").fan_in_matrix(1, out, in);
  return p;
}

AttentionParams seeded_attention(const WeightRng& rng, const std::string& name,
                                 std::size_t d) {
  return {seeded_affine(rng, name + ".query", d, d), seeded_affine(rng, name + ".key", d, d),
          seeded_affine(rng, name + ".value", d, d)};
}

MlpParams seeded_mlp(const WeightRng& rng, const std::string& name, std::size_t d) {
  return {seeded_affine(rng, name + ".first", d, d),
          seeded_affine(rng, name + ".second", d, d)};
}

void name_affine(std::map<std::string, Matrix>& out, const std::string& name,
                 const AffineParams& p) {
  out[name + ".weight"] = p.weight;
  out[name + ".bias"] = p.bias;
}

void name_attention(std::map<std::string, Matrix>& out, const std::string& name,
                    const AttentionParams& p) {
  name_affine(out, name + ".query", p.query);
  name_affine(out, name + ".key", p.key);
  name_affine(out, name + ".value", p.value);
}

void name_mlp(std::map<std::string, Matrix>& out, const std::string& name,
              const MlpParams& p) {
  name_affine(out, name + ".first", p.first);
  name_affine(out, name + ".second", p.second);
}

const Matrix& named_at(const std::map<std::string, Matrix>& named, const std::string& key) {
  auto it = named.find(key);
  if (it == named.end()) throw ValidationError({"missing parameter '" + key + "'"});
  return it->second;
}

AffineParams affine_from(const std::map<std::string, Matrix>& named,
                         const std::string& name) {
  return {named_at(named, name + ".weight"), named_at(named, name + ".bias")};
}

AttentionParams attention_from(const std::map<std::string, Matrix>& named,
                               const std::string& name) {
  return {affine_from(named, name + ".query"), affine_from(named, name + ".key"),
          affine_from(named, name + ".value")};
}

MlpParams mlp_from(const std::map<std::string, Matrix>& named, const std::string& name) {
  return {affine_from(named, name + ".first"), affine_from(named, name + ".second")};
}

}  // namespace

ModelParams ModelParams::seeded(const ModelConfig& config, RngSeed seed) {
  const WeightRng rng(seed);
  const std::size_t d = config.embed_dim;
  ModelParams p;
  for (std::size_t l = 0; l < config.mask_decoder_layers; ++l) {
    p.mask_decoder.layers.push_back(
        seeded_attention(rng, "mask_decoder.layer" + std::to_string(l), d));
  }
  p.mask_decoder.mask_mlp = seeded_mlp(rng, "mask_decoder.mask_mlp", d);
  p.temporal = seeded_attention(rng, "temporal", d);
  p.associator.forward_map = seeded_affine(rng, "associator.forward", d, d);
  p.associator.backward_map = seeded_affine(rng, "associator.backward", d, d);
  for (std::size_t i = 0; i < 3; ++i) {
    p.filter.biases[i] =
        rng.stream("associator.filter.bias" + std::to_string(i)).fan_in_matrix(1, 1, 9)(0, 0);
  }
  p.projection.subject = seeded_mlp(rng, "projection.subject", d);
  p.projection.object = seeded_mlp(rng, "projection.object", d);
  for (std::size_t l = 0; l < config.rpc_layers; ++l) {
    const std::string base = "rpc.layer" + std::to_string(l);
    p.rpc.layers.push_back({seeded_attention(rng, base + ".cross_subject", d),
                            seeded_attention(rng, base + ".cross_object", d),
                            seeded_attention(rng, base + ".self_subject", d),
                            seeded_attention(rng, base + ".self_object", d)});
  }
  p.roles.subject_role = rng.stream("roles.subject").fan_in_matrix(1, d, d);
  p.roles.object_role = rng.stream("roles.object").fan_in_matrix(1, d, d);
  for (std::size_t l = 0; l < config.relation_decoder_layers; ++l) {
    const std::string base = "relation_decoder.layer" + std::to_string(l);
    p.relation_decoder.layers.push_back({seeded_attention(rng, base + ".cross", d),
                                         seeded_attention(rng, base + ".self", d),
                                         seeded_mlp(rng, base + ".ffn", d)});
  }
  return p;
}

std::map<std::string, Matrix> ModelParams::to_named() const {
  std::map<std::string, Matrix> out;
  for (std::size_t l = 0; l < mask_decoder.layers.size(); ++l) {
    name_attention(out, "mask_decoder.layer" + std::to_string(l), mask_decoder.layers[l]);
  }
  name_mlp(out, "mask_decoder.mask_mlp", mask_decoder.mask_mlp);
  name_attention(out, "temporal", temporal);
  name_affine(out, "associator.forward", associator.forward_map);
  name_affine(out, "associator.backward", associator.backward_map);
  for (std::size_t i = 0; i < 3; ++i) {
    out["associator.filter.bias" + std::to_string(i)] = Matrix(1, 1, filter.biases[i]);
  }
  name_mlp(out, "projection.subject", projection.subject);
  name_mlp(out, "projection.object", projection.object);
  for (std::size_t l = 0; l < rpc.layers.size(); ++l) {
    const std::string base = "rpc.layer" + std::to_string(l);
    name_attention(out, base + ".cross_subject", rpc.layers[l].cross_subject);
    name_attention(out, base + ".cross_object", rpc.layers[l].cross_object);
    name_attention(out, base + ".self_subject", rpc.layers[l].self_subject);
    name_attention(out, base + ".self_object", rpc.layers[l].self_object);
  }
  out["roles.subject"] = roles.subject_role;
  out["roles.object"] = roles.object_role;
  for (std::size_t l = 0; l < relation_decoder.layers.size(); ++l) {
    const std::string base = "relation_decoder.layer" + std::to_string(l);
    name_attention(out, base + ".cross", relation_decoder.layers[l].cross);
    name_attention(out, base + ".self", relation_decoder.layers[l].self_attn);
    name_mlp(out, base + ".ffn", relation_decoder.layers[l].ffn);
  }
  return out;
}

ModelParams ModelParams::from_named(const ModelConfig& config,
                                    const std::map<std::string, Matrix>& named) {
  ModelParams p;
  for (std::size_t l = 0; l < config.mask_decoder_layers; ++l) {
    p.mask_decoder.layers.push_back(
        attention_from(named, "mask_decoder.layer" + std::to_string(l)));
  }
  p.mask_decoder.mask_mlp = mlp_from(named, "mask_decoder.mask_mlp");
  p.temporal = attention_from(named, "temporal");
  p.associator.forward_map = affine_from(named, "associator.forward");
  p.associator.backward_map = affine_from(named, "associator.backward");
  for (std::size_t i = 0; i < 3; ++i) {
    p.filter.biases[i] = named_at(named, "associator.filter.bias" + std::to_string(i))(0, 0);
  }
  p.projection.subject = mlp_from(named, "projection.subject");
  p.projection.object = mlp_from(named, "projection.object");
  for (std::size_t l = 0; l < config.rpc_layers; ++l) {
    const std::string base = "rpc.layer" + std::to_string(l);
    p.rpc.layers.push_back({attention_from(named, base + ".cross_subject"),
                            attention_from(named, base + ".cross_object"),
                            attention_from(named, base + ".self_subject"),
                            attention_from(named, base + ".self_object")});
  }
  p.roles.subject_role = named_at(named, "roles.subject");
  p.roles.object_role = named_at(named, "roles.object");
  for (std::size_t l = 0; l < config.relation_decoder_layers; ++l) {
    const std::string base = "relation_decoder.layer" + std::to_string(l);
    p.relation_decoder.layers.push_back({attention_from(named, base + ".cross"),
                                         attention_from(named, base + ".self"),
                                         mlp_from(named, base + ".ffn")});
  }
  return p;
}

QuerySet init_queries(const ModelConfig& config, Modality modality, RngSeed seed) {
  const double bound =
      config.embed_dim ? 1.0 / std::sqrt(static_cast<double>(config.embed_dim)) : 1.0;
  // One stream regardless of modality: every stream starts from the same
  // learned queries, so identical evidence refines them identically.
  Matrix q = WeightRng(seed).stream("queries").uniform_matrix(config.num_queries,
                                                              config.embed_dim, bound);
  return {modality, std::move(q)};
}

AttentionMask binarize_attention_mask(const Matrix& mask_probs, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw NumericError("binarize_attention_mask: threshold " + std::to_string(threshold) +
                       " outside (0, 1)");
  }
  Matrix m(mask_probs.rows(), mask_probs.cols());
  for (std::size_t i = 0; i < m.size(); ++i) {
    m.data()[i] = mask_probs.data()[i] >= threshold ? 0.0 : kNegInf;
  }
  return AttentionMask(std::move(m));
}

Matrix mask_decoder_step(const Matrix& x_prev, const Matrix& features,
                         const AttentionMask& mask, const AttentionParams& params) {
  check_cols(features, x_prev.cols(), "mask_decoder_step features");
  return add(attend(x_prev, features, &mask.values(), params), x_prev);
}

QuerySet run_mask_decoder(const QuerySet& x0, const std::vector<Matrix>& multiscale_features,
                          const ModelConfig& config, const MaskDecoderParams& params) {
  if (params.layers.size() != config.mask_decoder_layers) {
    throw DimensionError("run_mask_decoder: " + std::to_string(params.layers.size()) +
                         " layer params for " + std::to_string(config.mask_decoder_layers) +
                         " configured layers");
  }
  if (config.mask_decoder_layers > 0 && multiscale_features.empty()) {
    throw DimensionError("run_mask_decoder: no feature scales given");
  }
  QuerySet out = x0;
  for (std::size_t l = 0; l < config.mask_decoder_layers; ++l) {
    const Matrix& feats = multiscale_features[l % multiscale_features.size()];
    const Matrix probs = predict_masks(out.queries, feats, params.mask_mlp);
    const AttentionMask mask = binarize_attention_mask(probs, config.mask_threshold);
    out.queries = mask_decoder_step(out.queries, feats, mask, params.layers[l]);
  }
  return out;
}

std::vector<Matrix> temporal_encode(const std::vector<Matrix>& frame_queries,
                                    const AttentionParams& params) {
  if (frame_queries.empty()) return {};
  const std::size_t n = frame_queries.front().rows();
  const std::size_t d = frame_queries.front().cols();
  for (const auto& f : frame_queries) {
    if (f.rows() != n || f.cols() != d) {
      throw DimensionError("temporal_encode: ragged frame list (" +
                           frame_queries.front().shape_str() + " vs " + f.shape_str() + ")");
    }
  }
  const std::size_t frames = frame_queries.size();
  std::vector<Matrix> out(frames, Matrix(n, d));
  for (std::size_t q = 0; q < n; ++q) {
    Matrix track(frames, d);
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t c = 0; c < d; ++c) track(f, c) = frame_queries[f](q, c);
    const Matrix refined = add(attend(track, track, nullptr, params), track);
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t c = 0; c < d; ++c) out[f](q, c) = refined(f, c);
  }
  return out;
}

Matrix associate_objects(const QuerySet& qa, const QuerySet& qb,
                         const AssociatorParams& params) {
  check_cols(qb.queries, qa.queries.cols(), "associate_objects");
  const Matrix fwd =
      affine(qa.queries, params.forward_map.weight, params.forward_map.bias);
  const Matrix bwd =
      affine(qb.queries, params.backward_map.weight, params.backward_map.bias);
  const Matrix ab = cosine_matrix(fwd, qb.queries);            // Na x Nb
  const Matrix ba = transpose(cosine_matrix(bwd, qa.queries));  // Na x Nb
  Matrix raw(ab.rows(), ab.cols());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw.data()[i] = (ab.data()[i] + ba.data()[i]) / 2.0;
  }
  return raw;
}

Matrix filter_associations(const Matrix& raw, const ModelConfig& config,
                           const FilterParams& params) {
  Matrix h = raw;
  for (std::size_t stage = 0; stage < 3; ++stage) {
    h = conv2d(h, config.associator_filter[stage]);
    const double b = params.biases[stage];
    if (b != 0.0) {
      for (double& v : h.data()) v += b;
    }
    h = stage + 1 < 3 ? relu(h) : logistic(h);
  }
  return h;
}

std::vector<AssociationMatch> infer_associations(const Matrix& refined, double threshold) {
  if (refined.rows() == 0 || refined.cols() == 0) return {};
  Matrix cost(refined.rows(), refined.cols());
  for (std::size_t i = 0; i < cost.size(); ++i) cost.data()[i] = -refined.data()[i];
  const MatchAssignment assignment = hungarian_match(cost);
  std::vector<AssociationMatch> out;
  for (const auto& [i, j] : assignment.pairs) {
    const double score = refined(i, j);
    if (score < threshold) continue;
    out.push_back({i, j, score});
  }
  std::sort(out.begin(), out.end(),
            [](const AssociationMatch& x, const AssociationMatch& y) { return x.a < y.a; });
  return out;
}

Matrix fuse_queries(const Matrix& queries, const std::vector<Matrix>& partner_queries,
                    const std::vector<Matrix>& assoc_matrices) {
  if (partner_queries.size() != assoc_matrices.size()) {
    throw DimensionError("fuse_queries: " + std::to_string(partner_queries.size()) +
                         " partner streams but " + std::to_string(assoc_matrices.size()) +
                         " association matrices");
  }
  Matrix out = queries;
  for (std::size_t p = 0; p < partner_queries.size(); ++p) {
    const Matrix& a = assoc_matrices[p];
    const Matrix& partner = partner_queries[p];
    if (a.rows() != queries.rows() || a.cols() != partner.rows()) {
      throw DimensionError("fuse_queries: association (" + a.shape_str() +
                           ") does not pair queries (" + queries.shape_str() +
                           ") with partners (" + partner.shape_str() + ")");
    }
    check_cols(partner, queries.cols(), "fuse_queries partners");
    out = add(out, matmul(a, partner));
  }
  return out;
}

Matrix classify_objects(const Matrix& queries, const Matrix& label_embeddings) {
  check_cols(label_embeddings, queries.cols(), "classify_objects embeddings");
  return matmul(queries, transpose(label_embeddings));
}

Matrix predict_masks(const Matrix& queries, const Matrix& pixel_features,
                     const MlpParams& params) {
  const Matrix emb = mlp(queries, params);
  check_cols(pixel_features, emb.cols(), "predict_masks pixel features");
  return logistic(matmul(emb, transpose(pixel_features)));
}

std::pair<Matrix, Matrix> project_subject_object(const Matrix& queries,
                                                 const ProjectionParams& params) {
  return {mlp(queries, params.subject), mlp(queries, params.object)};
}

std::pair<Matrix, Matrix> rpc_refine(const Matrix& x_sub, const Matrix& x_obj,
                                     const ModelConfig& config, const RpcParams& params) {
  if (params.layers.size() != config.rpc_layers) {
    throw DimensionError("rpc_refine: " + std::to_string(params.layers.size()) +
                         " layer params for " + std::to_string(config.rpc_layers) +
                         " configured layers");
  }
  Matrix xs = x_sub;
  Matrix xo = x_obj;
  for (const auto& layer : params.layers) {
    // Both directions read the previous layer's streams.
    const Matrix as = add(attend(xs, xo, nullptr, layer.cross_subject), xs);
    const Matrix ao = add(attend(xo, xs, nullptr, layer.cross_object), xo);
    xs = add(attend(as, as, nullptr, layer.self_subject), as);
    xo = add(attend(ao, ao, nullptr, layer.self_object), ao);
  }
  return {xs, xo};
}

PairConfidenceMatrix pair_confidence(const Matrix& x_sub, const Matrix& x_obj) {
  return cosine_matrix(x_sub, x_obj);
}

std::vector<std::pair<std::size_t, std::size_t>> select_top_k_pairs(
    const PairConfidenceMatrix& confidence, std::size_t k) {
  const std::size_t total = confidence.rows() * confidence.cols();
  if (k > total) {
    throw DimensionError("select_top_k_pairs: k=" + std::to_string(k) + " exceeds " +
                         std::to_string(total) + " pairs");
  }
  struct Entry {
    double score;
    std::size_t i, j;
  };
  std::vector<Entry> entries;
  entries.reserve(total);
  for (std::size_t i = 0; i < confidence.rows(); ++i)
    for (std::size_t j = 0; j < confidence.cols(); ++j)
      entries.push_back({confidence(i, j), i, j});
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(k);
  for (std::size_t t = 0; t < k; ++t) out.push_back({entries[t].i, entries[t].j});
  return out;
}

RelationQuerySet build_relation_queries(
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs, const Matrix& x_sub,
    const Matrix& x_obj, const RoleEmbeddings& roles) {
  const std::size_t d = x_sub.cols();
  check_cols(x_obj, d, "build_relation_queries object stream");
  check_cols(roles.subject_role, d, "build_relation_queries subject role");
  check_cols(roles.object_role, d, "build_relation_queries object role");
  const std::size_t k = pairs.size();
  RelationQuerySet out;
  out.pairs = pairs;
  out.tokens = Matrix(2 * k, d);
  for (std::size_t t = 0; t < k; ++t) {
    const auto& [i, j] = pairs[t];
    if (i >= x_sub.rows() || j >= x_obj.rows()) {
      throw DimensionError("build_relation_queries: pair (" + std::to_string(i) + "," +
                           std::to_string(j) + ") outside streams " + x_sub.shape_str() +
                           " / " + x_obj.shape_str());
    }
    for (std::size_t c = 0; c < d; ++c) {
      out.tokens(t, c) = x_sub(i, c) + roles.subject_role(0, c);
      out.tokens(k + t, c) = x_obj(j, c) + roles.object_role(0, c);
    }
  }
  return out;
}

Matrix relation_decode(const RelationQuerySet& queries, const Matrix& context,
                       const ModelConfig& config, const RelationDecoderParams& params) {
  if (params.layers.size() != config.relation_decoder_layers) {
    throw DimensionError("relation_decode: " + std::to_string(params.layers.size()) +
                         " layer params for " +
                         std::to_string(config.relation_decoder_layers) +
                         " configured layers");
  }
  if (config.relation_decoder_layers > 0 && context.rows() == 0) {
    throw DimensionError("relation_decode: empty context");
  }
  Matrix x = queries.tokens;
  for (const auto& layer : params.layers) {
    x = add(attend(x, context, nullptr, layer.cross), x);
    x = add(attend(x, x, nullptr, layer.self_attn), x);
    x = add(mlp(x, layer.ffn), x);
  }
  return x;
}

Matrix classify_relations(const Matrix& tokens, const Matrix& predicate_embeddings) {
  if (tokens.rows() % 2 != 0) {
    throw DimensionError("classify_relations: odd token count " +
                         std::to_string(tokens.rows()));
  }
  check_cols(predicate_embeddings, tokens.cols(), "classify_relations embeddings");
  const std::size_t k = tokens.rows() / 2;
  Matrix pooled(k, tokens.cols());
  for (std::size_t t = 0; t < k; ++t)
    for (std::size_t c = 0; c < tokens.cols(); ++c)
      pooled(t, c) = (tokens(t, c) + tokens(k + t, c)) / 2.0;
  return matmul(pooled, transpose(predicate_embeddings));
}

std::vector<std::string> open_vocab_label(const Matrix& queries,
                                          const Matrix& label_embeddings,
                                          const std::vector<std::string>& names) {
  if (names.size() != label_embeddings.rows()) {
    throw DimensionError("open_vocab_label: " + std::to_string(names.size()) +
                         " names for " + std::to_string(label_embeddings.rows()) +
                         " embeddings");
  }
  if (queries.rows() > 0 && label_embeddings.rows() == 0) {
    throw DimensionError("open_vocab_label: no label embeddings");
  }
  const Matrix cos = cosine_matrix(queries, label_embeddings);
  std::vector<std::string> out;
  out.reserve(queries.rows());
  for (std::size_t i = 0; i < cos.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cos.cols(); ++j) {
      if (cos(i, j) > cos(i, best)) best = j;  // ties keep the smaller index
    }
    out.push_back(names[best]);
  }
  return out;
}

}  // namespace usg
