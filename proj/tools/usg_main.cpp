// usg: command-line front end for building, merging, scoring, and rendering
// universal scene graphs.
//
// Exit codes: 0 success, 2 invalid input, 3 filesystem trouble.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "usg/eval.hpp"
#include "usg/feature_io.hpp"
#include "usg/graph.hpp"
#include "usg/graph_json.hpp"
#include "usg/losses.hpp"
#include "usg/matrix.hpp"
#include "usg/model.hpp"

namespace {

using namespace usg;

bool log_enabled() {
  const char* v = std::getenv("USG_LOG");
  return v && *v && std::string(v) != "0";
}

void log_debug(const std::string& msg) {
  if (log_enabled()) std::cerr << "usg: " << msg << "\n";
}

void emit(const std::optional<std::string>& out_path, const std::string& text) {
  if (out_path) {
    write_text_file(*out_path, text);
    log_debug("wrote " + *out_path);
  } else {
    std::cout << text;
  }
}

// --- merge orchestration ------------------------------------------------------

bool involves_video(const AssociationLink& link) {
  return link.a.first == Modality::video || link.b.first == Modality::video;
}

/// Folds the graphs into one universal graph. When a video stream arrives
/// together with static modalities, the static graphs merge first and the
/// result is laid onto the video timeline as frame 0.
UniversalSceneGraph merge_all(const std::vector<SceneGraph>& graphs,
                              const std::vector<AssociationLink>& links) {
  const SceneGraph* video = nullptr;
  std::vector<SceneGraph> statics;
  for (const auto& g : graphs) {
    if (g.modality == Modality::video && !video) {
      video = &g;
    } else {
      statics.push_back(g);
    }
  }
  if (!video || statics.empty()) return merge_usg(graphs, links);

  std::vector<AssociationLink> static_links, video_links;
  for (const auto& link : links) {
    (involves_video(link) ? video_links : static_links).push_back(link);
  }
  const UniversalSceneGraph base = merge_usg(statics, static_links);
  return align_video_usg(base, *video, video_links);
}

// --- merge --------------------------------------------------------------------

struct MergeArgs {
  std::vector<std::string> graph_paths;
  std::optional<std::string> links_path;
  std::optional<std::string> out_path;
};

void run_merge(const MergeArgs& args) {
  std::vector<SceneGraph> graphs;
  for (const auto& path : args.graph_paths) {
    graphs.push_back(parse_scene_graph_json(read_text_file(path)));
    log_debug("loaded " + to_string(graphs.back().modality) + " graph from " + path +
              " (" + std::to_string(graphs.back().objects.size()) + " objects)");
  }
  std::vector<AssociationLink> links;
  if (args.links_path) links = parse_links_json(read_text_file(*args.links_path));
  const UniversalSceneGraph usg = merge_all(graphs, links);
  log_debug("merged graph has " + std::to_string(usg.objects.size()) + " objects, " +
            std::to_string(usg.relations.size()) + " relations");
  emit(args.out_path, serialize_usg(usg));
}

// --- export-dot ---------------------------------------------------------------

struct ExportArgs {
  std::string usg_path;
  std::optional<std::string> out_path;
};

void run_export_dot(const ExportArgs& args) {
  const UniversalSceneGraph usg = parse_usg_json(read_text_file(args.usg_path));
  emit(args.out_path, export_dot(usg));
}

// --- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string pred_path;
  std::string gt_path;
  std::string ks = "20,50,100";
  double iou = 0.5;
  bool labels_only = false;
};

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::string token;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i < text.size() && text[i] != ',') {
      token.push_back(text[i]);
      continue;
    }
    if (token.empty()) throw ValidationError({"--k: empty entry in '" + text + "'"});
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(token, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != token.size() || v == 0) {
      throw ValidationError({"--k: '" + token + "' is not a positive integer"});
    }
    ks.push_back(static_cast<std::size_t>(v));
    token.clear();
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  return ks;
}

void run_eval(const EvalArgs& args) {
  const auto preds = parse_triplet_file(read_text_file(args.pred_path));
  const auto gts = parse_triplet_file(read_text_file(args.gt_path));
  const std::vector<EvalSample> samples = pair_samples(preds, gts);
  log_debug("evaluating " + std::to_string(samples.size()) + " samples");

  EvalOptions options;
  options.iou_threshold = args.iou;
  options.labels_only = args.labels_only;
  const std::vector<std::size_t> ks = parse_ks(args.ks);

  std::vector<MetricReport> reports;
  for (std::size_t k : ks) reports.push_back(split_recall_at_k(samples, k, options));
  for (std::size_t k : ks) reports.push_back(mean_recall_at_k(samples, k, options));
  reports.push_back(split_set_match(samples));
  reports.push_back(split_triple_f1(samples));
  std::cout << render_metric_reports(reports);
}

// --- demo ---------------------------------------------------------------------

struct DemoArgs {
  std::optional<std::string> text_path, image_path, video_path, point3d_path;
  std::size_t video_frames = 1;
  std::uint64_t seed = 0;
  std::optional<std::string> labels_path;
  std::optional<std::string> config_path;
  std::optional<std::string> params_path;      // load weights instead of seeding
  std::optional<std::string> params_out_path;  // save the weights actually used
  std::optional<std::size_t> top_pairs;
  std::optional<double> assoc_threshold;
  std::optional<std::string> out_path;
};

struct LabelVocabulary {
  std::vector<std::string> classes;
  std::vector<std::string> predicates;
};

LabelVocabulary default_vocabulary() {
  LabelVocabulary v;
  for (int i = 0; i < 8; ++i) v.classes.push_back("entity-" + std::to_string(i));
  v.predicates = {"related-to", "near", "part-of", "interacts-with"};
  return v;
}

LabelVocabulary parse_vocabulary(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError({std::string("labels file: invalid JSON: ") + e.what()});
  }
  LabelVocabulary v;
  std::vector<std::string> out;
  for (auto [key, target] : {std::pair<const char*, std::vector<std::string>*>{
                                 "classes", &v.classes},
                             {"predicates", &v.predicates}}) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_array() || it->empty()) {
      out.push_back(std::string("labels file: '") + key +
                    "' must be a non-empty string array");
      continue;
    }
    for (const auto& name : *it) {
      if (!name.is_string()) {
        out.push_back(std::string("labels file: '") + key + "' entries must be strings");
        break;
      }
      target->push_back(name.get<std::string>());
    }
  }
  if (!out.empty()) throw ValidationError(std::move(out));
  return v;
}

ModelConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError({std::string("config file: invalid JSON: ") + e.what()});
  }
  if (!j.is_object()) throw ValidationError({"config file: top level must be an object"});
  ModelConfig c;
  std::vector<std::string> out;
  auto load_uint = [&](const char* key, std::size_t& slot) {
    auto it = j.find(key);
    if (it == j.end()) return;
    if (!it->is_number_unsigned()) {
      out.push_back(std::string("config file: '") + key + "' must be a non-negative integer");
      return;
    }
    slot = it->get<std::size_t>();
  };
  auto load_double = [&](const char* key, double& slot) {
    auto it = j.find(key);
    if (it == j.end()) return;
    if (!it->is_number()) {
      out.push_back(std::string("config file: '") + key + "' must be a number");
      return;
    }
    slot = it->get<double>();
  };
  load_uint("embed_dim", c.embed_dim);
  load_uint("num_queries", c.num_queries);
  load_uint("mask_decoder_layers", c.mask_decoder_layers);
  load_uint("rpc_layers", c.rpc_layers);
  load_uint("relation_decoder_layers", c.relation_decoder_layers);
  load_uint("top_k_pairs", c.top_k_pairs);
  load_double("mask_threshold", c.mask_threshold);
  load_double("association_threshold", c.association_threshold);
  if (auto it = j.find("associator_filter"); it != j.end()) {
    if (!it->is_array() || it->size() != 3) {
      out.push_back("config file: 'associator_filter' must be an array of 3 kernels");
    } else {
      for (std::size_t k = 0; k < 3; ++k) {
        const auto& kj = (*it)[k];
        Matrix kernel(3, 3);
        bool ok = kj.is_array() && kj.size() == 3;
        for (std::size_t r = 0; ok && r < 3; ++r) {
          ok = kj[r].is_array() && kj[r].size() == 3;
          for (std::size_t cidx = 0; ok && cidx < 3; ++cidx) {
            if (!kj[r][cidx].is_number()) {
              ok = false;
            } else {
              kernel(r, cidx) = kj[r][cidx].get<double>();
            }
          }
        }
        if (!ok) {
          out.push_back("config file: associator_filter[" + std::to_string(k) +
                        "] must be a 3x3 number grid");
        } else {
          c.associator_filter[k] = std::move(kernel);
        }
      }
    }
  }
  if (!out.empty()) throw ValidationError(std::move(out));
  return c;
}

Matrix name_embeddings(const std::vector<std::string>& names, const std::string& prefix,
                       std::size_t dim, RngSeed seed) {
  const double bound = dim ? 1.0 / std::sqrt(static_cast<double>(dim)) : 1.0;
  Matrix out(names.size(), dim);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Matrix row =
        WeightRng(seed).stream(prefix + names[i]).uniform_matrix(1, dim, bound);
    for (std::size_t c = 0; c < dim; ++c) out(i, c) = row(0, c);
  }
  return out;
}

MaskRegion pointset_from_row(const Matrix& probs, std::size_t row) {
  std::vector<std::uint8_t> bits(probs.cols());
  for (std::size_t c = 0; c < probs.cols(); ++c) bits[c] = probs(row, c) >= 0.5;
  return make_pointset_mask(std::move(bits));
}

struct ModalityStream {
  Modality modality;
  Matrix features;               // whole file
  std::vector<Matrix> frames;    // features split per frame (one entry if static)
  Matrix queries;                // refined track/object queries
  std::vector<Matrix> frame_queries;  // per-frame refined queries
};

void run_demo(const DemoArgs& args) {
  ModelConfig config;
  if (args.config_path) config = parse_config(read_text_file(*args.config_path));
  if (args.top_pairs) config.top_k_pairs = *args.top_pairs;
  if (args.assoc_threshold) config.association_threshold = *args.assoc_threshold;

  const RngSeed seed{args.seed};
  LabelVocabulary vocab = default_vocabulary();
  if (args.labels_path) vocab = parse_vocabulary(read_text_file(*args.labels_path));

  ModelParams params;
  if (args.params_path) {
    params = ModelParams::from_named(config, load_param_manifest(*args.params_path));
  } else {
    params = ModelParams::seeded(config, seed);
    // Untrained projections would garble cross-modal agreement, so the demo
    // associates through identity maps: matching evidence scores high as-is.
    params.associator.forward_map = AffineParams::identity(config.embed_dim);
    params.associator.backward_map = AffineParams::identity(config.embed_dim);
    params.filter = FilterParams{};
  }

  const std::vector<std::pair<Modality, const std::optional<std::string>*>> wanted = {
      {Modality::text, &args.text_path},
      {Modality::image, &args.image_path},
      {Modality::video, &args.video_path},
      {Modality::point3d, &args.point3d_path},
  };
  std::vector<ModalityStream> streams;
  for (const auto& [modality, path] : wanted) {
    if (!path->has_value()) continue;
    ModalityStream s;
    s.modality = modality;
    s.features = read_feature_file(**path);
    if (s.features.cols() != config.embed_dim) {
      throw ValidationError({**path + ": features have " +
                             std::to_string(s.features.cols()) + " columns, config needs " +
                             std::to_string(config.embed_dim)});
    }
    log_debug("loaded " + to_string(modality) + " features " + s.features.shape_str());
    streams.push_back(std::move(s));
  }
  if (streams.empty()) {
    throw ValidationError({"demo needs at least one of --text/--image/--video/--point3d"});
  }
  if (args.video_frames == 0) throw ValidationError({"--video-frames must be positive"});

  // Stage 1: refine queries against each stream's evidence.
  for (auto& s : streams) {
    const QuerySet x0 = init_queries(config, s.modality, seed);
    if (s.modality == Modality::video && args.video_frames > 1) {
      if (s.features.rows() % args.video_frames != 0) {
        throw ValidationError({"video features: " + std::to_string(s.features.rows()) +
                               " rows do not split into " +
                               std::to_string(args.video_frames) + " frames"});
      }
      const std::size_t per = s.features.rows() / args.video_frames;
      for (std::size_t f = 0; f < args.video_frames; ++f) {
        Matrix block(per, s.features.cols());
        for (std::size_t r = 0; r < per; ++r)
          for (std::size_t c = 0; c < s.features.cols(); ++c)
            block(r, c) = s.features(f * per + r, c);
        s.frames.push_back(std::move(block));
      }
      std::vector<Matrix> per_frame;
      for (const auto& frame : s.frames) {
        per_frame.push_back(run_mask_decoder(x0, {frame}, config, params.mask_decoder).queries);
      }
      s.frame_queries = temporal_encode(per_frame, params.temporal);
      s.queries = s.frame_queries.front();
    } else {
      s.frames.push_back(s.features);
      s.queries = run_mask_decoder(x0, {s.features}, config, params.mask_decoder).queries;
      s.frame_queries = temporal_encode({s.queries}, params.temporal);
      s.queries = s.frame_queries.front();
    }
  }

  // Stage 2: pairwise association between streams.
  std::vector<AssociationLink> links;
  std::map<std::pair<std::size_t, std::size_t>, Matrix> refined_between;
  for (std::size_t a = 0; a < streams.size(); ++a) {
    for (std::size_t b = a + 1; b < streams.size(); ++b) {
      const Matrix raw = associate_objects({streams[a].modality, streams[a].queries},
                                           {streams[b].modality, streams[b].queries},
                                           params.associator);
      Matrix refined = filter_associations(raw, config, params.filter);
      for (const auto& match :
           infer_associations(refined, config.association_threshold)) {
        links.push_back({{streams[a].modality, "q" + std::to_string(match.a)},
                         {streams[b].modality, "q" + std::to_string(match.b)},
                         match.score});
      }
      refined_between[{a, b}] = std::move(refined);
    }
  }
  log_debug("inferred " + std::to_string(links.size()) + " cross-modal links");

  // Stage 3: cross-modal query fusion.
  std::vector<Matrix> fused(streams.size());
  for (std::size_t a = 0; a < streams.size(); ++a) {
    std::vector<Matrix> partners;
    std::vector<Matrix> assoc;
    for (std::size_t b = 0; b < streams.size(); ++b) {
      if (a == b) continue;
      partners.push_back(streams[b].queries);
      assoc.push_back(a < b ? refined_between.at({a, b})
                            : transpose(refined_between.at({b, a})));
    }
    fused[a] = fuse_queries(streams[a].queries, partners, assoc);
  }

  // Shared relation-decoding context: every stream's evidence stacked.
  std::size_t context_rows = 0;
  for (const auto& s : streams) context_rows += s.features.rows();
  Matrix context(context_rows, config.embed_dim);
  std::size_t at = 0;
  for (const auto& s : streams) {
    for (std::size_t r = 0; r < s.features.rows(); ++r, ++at)
      for (std::size_t c = 0; c < s.features.cols(); ++c)
        context(at, c) = s.features(r, c);
  }

  const Matrix class_emb = name_embeddings(vocab.classes, "class-embedding:",
                                           config.embed_dim, seed);
  const Matrix pred_emb = name_embeddings(vocab.predicates, "predicate-embedding:",
                                          config.embed_dim, seed);

  // Stage 4: per-stream detection and relation proposals -> scene graphs.
  std::vector<SceneGraph> graphs;
  for (std::size_t idx = 0; idx < streams.size(); ++idx) {
    auto& s = streams[idx];
    const std::vector<std::string> labels =
        open_vocab_label(fused[idx], class_emb, vocab.classes);

    std::vector<ObjectNode> objects;
    for (std::size_t q = 0; q < config.num_queries; ++q) {
      ObjectNode node;
      node.id = "q" + std::to_string(q);
      node.label = labels[q];
      for (std::size_t f = 0; f < s.frames.size(); ++f) {
        const Matrix probs = predict_masks(s.frame_queries[f], s.frames[f],
                                           params.mask_decoder.mask_mlp);
        node.masks.emplace(MaskKey{s.modality, f}, pointset_from_row(probs, q));
      }
      objects.push_back(std::move(node));
    }

    std::vector<RelationEdge> relations;
    const auto [sub0, obj0] = project_subject_object(fused[idx], params.projection);
    const auto [sub, obj] = rpc_refine(sub0, obj0, config, params.rpc);
    const PairConfidenceMatrix confidence = pair_confidence(sub, obj);
    const std::size_t k =
        std::min(config.top_k_pairs, confidence.rows() * confidence.cols());
    if (k > 0 && !vocab.predicates.empty()) {
      const auto pairs = select_top_k_pairs(confidence, k);
      const RelationQuerySet rq = build_relation_queries(pairs, sub, obj, params.roles);
      const Matrix tokens = relation_decode(rq, context, config, params.relation_decoder);
      const Matrix logits = classify_relations(tokens, pred_emb);
      for (std::size_t t = 0; t < pairs.size(); ++t) {
        const auto& [i, j] = pairs[t];
        if (i == j) continue;  // a node does not relate to itself
        std::size_t best = 0;
        for (std::size_t r = 1; r < logits.cols(); ++r) {
          if (logits(t, r) > logits(t, best)) best = r;
        }
        relations.push_back({"q" + std::to_string(i), vocab.predicates[best],
                             "q" + std::to_string(j), std::nullopt});
      }
    }

    graphs.push_back(build_scene_graph(s.modality, std::move(objects),
                                       std::move(relations), s.frames.size()));
  }

  const UniversalSceneGraph usg = merge_all(graphs, links);
  log_debug("demo graph has " + std::to_string(usg.objects.size()) + " objects, " +
            std::to_string(usg.relations.size()) + " relations");

  if (args.params_out_path) {
    save_param_manifest(*args.params_out_path, params.to_named());
    log_debug("saved parameters under " + *args.params_out_path);
  }
  emit(args.out_path, serialize_usg(usg));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"universal scene graph toolkit"};
  app.require_subcommand(1);

  MergeArgs merge_args;
  auto* merge = app.add_subcommand(
      "merge", "fold per-modality scene graphs and links into one universal graph");
  merge->add_option("graphs", merge_args.graph_paths, "scene graph JSON files")
      ->required()
      ->expected(1, -1);
  std::string merge_links, merge_out;
  merge->add_option("--links", merge_links, "association links JSON");
  merge->add_option("-o,--out", merge_out, "output path (default: stdout)");

  ExportArgs export_args;
  auto* export_dot_cmd =
      app.add_subcommand("export-dot", "render a universal graph as Graphviz DOT");
  export_dot_cmd->add_option("usg", export_args.usg_path, "universal graph JSON")
      ->required();
  std::string export_out;
  export_dot_cmd->add_option("-o,--out", export_out, "output path (default: stdout)");

  EvalArgs eval_args;
  auto* eval_cmd =
      app.add_subcommand("eval", "score predicted triplets against ground truth");
  eval_cmd->add_option("predictions", eval_args.pred_path, "predicted triplets JSON")
      ->required();
  eval_cmd->add_option("ground_truth", eval_args.gt_path, "ground-truth triplets JSON")
      ->required();
  eval_cmd->add_option("--k", eval_args.ks, "comma-separated recall cutoffs");
  eval_cmd->add_option("--iou", eval_args.iou, "mask IoU threshold for grounded hits");
  eval_cmd->add_flag("--labels-only", eval_args.labels_only,
                     "match on labels even when masks are present");

  DemoArgs demo_args;
  auto* demo = app.add_subcommand(
      "demo", "run the full pipeline on feature files and emit a universal graph");
  std::string demo_text, demo_image, demo_video, demo_point3d, demo_labels, demo_config,
      demo_params, demo_params_out, demo_out;
  std::size_t demo_top_pairs = 0;
  double demo_assoc_threshold = 0.0;
  demo->add_option("--text", demo_text, "text feature file");
  demo->add_option("--image", demo_image, "image feature file");
  demo->add_option("--video", demo_video, "video feature file");
  demo->add_option("--point3d", demo_point3d, "point-cloud feature file");
  demo->add_option("--video-frames", demo_args.video_frames,
                   "split the video features into this many frames");
  demo->add_option("--seed", demo_args.seed, "weight/query seed");
  demo->add_option("--labels", demo_labels, "label vocabulary JSON");
  demo->add_option("--config", demo_config, "model configuration JSON");
  demo->add_option("--params", demo_params, "parameter manifest to load");
  demo->add_option("--params-out", demo_params_out, "directory to save parameters");
  auto* top_pairs_opt =
      demo->add_option("--top-pairs", demo_top_pairs, "relation proposals per stream");
  auto* assoc_opt = demo->add_option("--assoc-threshold", demo_assoc_threshold,
                                     "association acceptance threshold");
  demo->add_option("-o,--out", demo_out, "output path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*merge) {
      if (!merge_links.empty()) merge_args.links_path = merge_links;
      if (!merge_out.empty()) merge_args.out_path = merge_out;
      run_merge(merge_args);
    } else if (*export_dot_cmd) {
      if (!export_out.empty()) export_args.out_path = export_out;
      run_export_dot(export_args);
    } else if (*eval_cmd) {
      run_eval(eval_args);
    } else if (*demo) {
      if (!demo_text.empty()) demo_args.text_path = demo_text;
      if (!demo_image.empty()) demo_args.image_path = demo_image;
      if (!demo_video.empty()) demo_args.video_path = demo_video;
      if (!demo_point3d.empty()) demo_args.point3d_path = demo_point3d;
      if (!demo_labels.empty()) demo_args.labels_path = demo_labels;
      if (!demo_config.empty()) demo_args.config_path = demo_config;
      if (!demo_params.empty()) demo_args.params_path = demo_params;
      if (!demo_params_out.empty()) demo_args.params_out_path = demo_params_out;
      if (!demo_out.empty()) demo_args.out_path = demo_out;
      if (top_pairs_opt->count()) demo_args.top_pairs = demo_top_pairs;
      if (assoc_opt->count()) demo_args.assoc_threshold = demo_assoc_threshold;
      run_demo(demo_args);
    }
  } catch (const ValidationError& e) {
    std::cerr << "usg: invalid input: " << e.violations().size() << " problem(s)\n";
    for (const auto& v : e.violations()) std::cerr << "  - " << v << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "usg: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "usg: invalid input: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
