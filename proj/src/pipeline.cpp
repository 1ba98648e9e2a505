#include "reid/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "reid/camera.hpp"

namespace reid {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_if(const json& obj, const char* key, T& dst) {
  if (obj.contains(key)) dst = obj.at(key).get<T>();
}

void apply_rerank_json(RerankParams& p, bool& enabled, const json& obj) {
  check_keys(obj, {"enabled", "k1", "k2", "lambda"}, "rerank");
  read_if(obj, "enabled", enabled);
  read_if(obj, "k1", p.k1);
  read_if(obj, "k2", p.k2);
  read_if(obj, "lambda", p.lambda);
}

void apply_stage_json(StageParams& s, const json& obj) {
  check_keys(obj, {"normalize", "metric", "camera_mean", "neighbor_k", "cam_dist_rate", "topology_alpha", "rerank"},
             "stages");
  read_if(obj, "normalize", s.normalize);
  if (obj.contains("metric")) s.metric = parse_metric(obj.at("metric").get<std::string>());
  read_if(obj, "camera_mean", s.camera_mean);
  read_if(obj, "neighbor_k", s.neighbor_k);
  read_if(obj, "cam_dist_rate", s.cam_dist_rate);
  read_if(obj, "topology_alpha", s.topology_alpha);
  if (obj.contains("rerank")) apply_rerank_json(s.rerank_params, s.rerank, obj.at("rerank"));
  if (s.cam_dist_rate < 0.0) throw std::invalid_argument("config: cam_dist_rate must be >= 0");
}

SynthSplitMode parse_split_mode(const std::string& text) {
  if (text == "query_gallery") return SynthSplitMode::query_gallery;
  if (text == "train") return SynthSplitMode::train;
  if (text == "val") return SynthSplitMode::val;
  throw std::invalid_argument("config: unknown split_mode '" + text + "'");
}

std::string_view split_mode_name(SynthSplitMode m) {
  switch (m) {
    case SynthSplitMode::query_gallery: return "query_gallery";
    case SynthSplitMode::train: return "train";
    case SynthSplitMode::val: return "val";
  }
  return "query_gallery";
}

ClusterConfig parse_cluster_config(const json& obj, std::uint64_t seed) {
  check_keys(obj,
             {"bundle", "synthetic", "normalize", "distance", "rerank", "eps", "min_samples", "top", "singletons",
              "include_discarded", "recluster_every", "out"},
             "cluster");
  ClusterConfig c;
  if (obj.contains("bundle")) c.bundle = obj.at("bundle").get<std::string>();
  if (obj.contains("synthetic")) c.synthetic = parse_synth_config(obj.at("synthetic"), seed);
  if (c.bundle && c.synthetic) throw std::invalid_argument("config: cluster takes either bundle or synthetic");
  read_if(obj, "normalize", c.normalize);
  if (obj.contains("distance")) {
    const auto d = obj.at("distance").get<std::string>();
    if (d == "rerank") c.distance = ClusterDistance::rerank;
    else if (d == "euclidean") c.distance = ClusterDistance::euclidean;
    else throw std::invalid_argument("config: unknown cluster distance '" + d + "'");
  }
  if (obj.contains("rerank")) {
    bool unused = true;
    apply_rerank_json(c.rerank_params, unused, obj.at("rerank"));
  }
  read_if(obj, "eps", c.dbscan.eps);
  read_if(obj, "min_samples", c.dbscan.min_samples);
  read_if(obj, "top", c.top);
  read_if(obj, "singletons", c.singletons);
  if (obj.value("include_discarded", false)) c.singleton_source = SingletonSource::outliers_and_discarded;
  read_if(obj, "recluster_every", c.recluster_every);
  if (obj.contains("out")) c.out = obj.at("out").get<std::string>();
  return c;
}

// Writes one stage directory; remembers it for the failure path.
class StageWriter {
 public:
  explicit StageWriter(fs::path root) : root_(std::move(root)) {}

  fs::path dir(const std::string& name) const { return root_ / name; }

  void write(const StageResult& stage) {
    const fs::path d = dir(stage.name);
    save_distance(stage.dist, d);
    std::ofstream(d / "report.json") << to_json(stage.report).dump(2) << '\n';
  }

 private:
  fs::path root_;
};

struct ModelRun {
  std::vector<StageResult> stages;
  DistanceMatrix final_block;
};

struct TestSplit {
  EmbeddingSet query;
  EmbeddingSet gallery;
  EmbeddingSet all;  // query rows first, then gallery rows
};

TestSplit split_test_set(const EmbeddingSet& set) {
  TestSplit t;
  t.query = select_split(set, Split::query);
  t.gallery = select_split(set, Split::gallery);
  if (t.query.size() == 0 || t.gallery.size() == 0) {
    throw std::invalid_argument("test bundle needs both query and gallery rows");
  }
  t.all = concat(t.query, t.gallery);
  return t;
}

template <typename F>
auto in_stage(const std::string& name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

ModelRun run_model(const TestSplit& split, const StageParams& sp, const PipelineConfig& cfg,
                   const std::optional<DistanceMatrix>& cam_dist,
                   const std::optional<CameraTopology>& topo, StageWriter& writer) {
  const std::size_t nq = split.query.size();
  const std::size_t n = split.all.size();
  std::vector<std::size_t> qpos(nq), gpos(n - nq);
  std::iota(qpos.begin(), qpos.end(), std::size_t{0});
  std::iota(gpos.begin(), gpos.end(), nq);

  ModelRun run;
  auto record = [&](const std::string& name, DistanceMatrix block) {
    StageResult stage{name, std::move(block), {}};
    stage.report = evaluate(stage.dist, split.query.meta, split.gallery.meta, cfg.max_rank);
    writer.write(stage);
    run.stages.push_back(std::move(stage));
  };

  EmbeddingSet features = split.all;
  DistanceMatrix all = in_stage("00_raw", [&] {
    auto d = pairwise_distance(features, features, sp.metric);
    record("00_raw", submatrix(d, qpos, gpos));
    return d;
  });

  if (sp.normalize) {
    in_stage("01_normalize", [&] {
      features = l2_normalize(features).set;
      all = pairwise_distance(features, features, sp.metric);
      record("01_normalize", submatrix(all, qpos, gpos));
    });
  }
  if (sp.camera_mean) {
    in_stage("02_camera_mean", [&] {
      features = subtract_camera_mean(features);
      all = pairwise_distance(features, features, sp.metric);
      record("02_camera_mean", submatrix(all, qpos, gpos));
    });
  }
  if (sp.neighbor_k > 0) {
    in_stage("03_neighbor_smooth", [&] {
      features = neighbor_smooth(features, sp.neighbor_k);
      all = pairwise_distance(features, features, sp.metric);
      record("03_neighbor_smooth", submatrix(all, qpos, gpos));
    });
  }
  in_stage("04_distance", [&] {
    record("04_distance", submatrix(all, qpos, gpos));
    save_distance(all, writer.dir("04_distance") / "union");
  });
  if (sp.cam_dist_rate > 0.0) {
    in_stage("05_camera_distance", [&] {
      if (!cam_dist) throw std::invalid_argument("cam_dist_rate > 0 but no camera distance matrices given");
      if (!cam_dist->same_layout(all)) {
        throw std::invalid_argument("camera distance matrix must cover query ∪ gallery in query-first order");
      }
      all = subtract_camera_distance(all, *cam_dist, sp.cam_dist_rate);
      record("05_camera_distance", submatrix(all, qpos, gpos));
    });
  }
  if (sp.topology_alpha != 0.0) {
    in_stage("06_topology", [&] {
      if (!topo) throw std::invalid_argument("topology_alpha != 0 but no validation bundle given");
      const auto cams = cameras_of(split.all.meta);
      all = apply_topology(all, *topo, cams, cams, sp.topology_alpha);
      record("06_topology", submatrix(all, qpos, gpos));
    });
  }
  DistanceMatrix block = submatrix(all, qpos, gpos);
  if (sp.rerank) {
    block = in_stage("07_rerank", [&] {
      auto reranked = rerank(all, nq, sp.rerank_params);
      record("07_rerank", reranked);
      return reranked;
    });
  }
  run.final_block = std::move(block);
  return run;
}

EmbeddingSet load_input(const std::optional<fs::path>& bundle, const std::optional<SynthConfig>& synth) {
  if (bundle) return load_bundle(*bundle);
  if (synth) return generate_synthetic(*synth);
  throw std::invalid_argument("no input bundle configured");
}

ordered_json stage_summary(const StageResult& s) {
  return {{"stage", s.name},       {"map", s.report.map},     {"rank1", s.report.rank(1)},
          {"rank5", s.report.rank(5)}, {"rank10", s.report.rank(10)}};
}

}  // namespace

SynthConfig parse_synth_config(const json& obj, std::uint64_t default_seed) {
  check_keys(obj,
             {"n_ids", "samples_per_id", "dim", "n_cameras", "intra_sigma", "camera_offset", "seed", "split_mode",
              "domain"},
             "synthetic");
  SynthConfig c;
  c.seed = default_seed;
  read_if(obj, "n_ids", c.n_ids);
  read_if(obj, "samples_per_id", c.samples_per_id);
  read_if(obj, "dim", c.dim);
  read_if(obj, "n_cameras", c.n_cameras);
  read_if(obj, "intra_sigma", c.intra_sigma);
  read_if(obj, "camera_offset", c.camera_offset);
  read_if(obj, "seed", c.seed);
  if (obj.contains("split_mode")) c.split_mode = parse_split_mode(obj.at("split_mode").get<std::string>());
  if (obj.contains("domain")) c.domain = parse_domain(obj.at("domain").get<std::string>());
  validate(c);
  return c;
}

ordered_json to_json(const SynthConfig& c) {
  return {{"n_ids", c.n_ids},
          {"samples_per_id", c.samples_per_id},
          {"dim", c.dim},
          {"n_cameras", c.n_cameras},
          {"intra_sigma", c.intra_sigma},
          {"camera_offset", c.camera_offset},
          {"seed", c.seed},
          {"split_mode", split_mode_name(c.split_mode)},
          {"domain", to_string(c.domain)}};
}

PipelineConfig parse_pipeline_config(const json& doc) {
  check_keys(doc,
             {"bundle", "synthetic", "models", "fusion", "camera_distances", "validation", "stages", "max_rank",
              "out", "seed", "cluster"},
             "config");
  PipelineConfig cfg;
  try {
    read_if(doc, "seed", cfg.seed);
    if (doc.contains("bundle")) cfg.bundle = doc.at("bundle").get<std::string>();
    if (doc.contains("synthetic")) cfg.synthetic = parse_synth_config(doc.at("synthetic"), cfg.seed);
    if (cfg.bundle && cfg.synthetic) throw std::invalid_argument("config: give either bundle or synthetic");
    if (doc.contains("stages")) apply_stage_json(cfg.stages, doc.at("stages"));
    if (doc.contains("fusion")) {
      const auto& f = doc.at("fusion");
      check_keys(f, {"primary_weight", "normalize"}, "fusion");
      read_if(f, "primary_weight", cfg.primary_weight);
      if (f.contains("normalize")) cfg.fusion_normalize = parse_fusion_norm(f.at("normalize").get<std::string>());
    }
    if (doc.contains("models")) {
      for (const auto& m : doc.at("models")) {
        check_keys(m, {"bundle", "weight", "overrides"}, "models[]");
        ModelInput model;
        model.bundle = m.at("bundle").get<std::string>();
        read_if(m, "weight", model.weight);
        model.stages = cfg.stages;
        if (m.contains("overrides")) apply_stage_json(model.stages, m.at("overrides"));
        cfg.models.push_back(std::move(model));
      }
    }
    if (doc.contains("camera_distances")) {
      for (const auto& p : doc.at("camera_distances")) cfg.camera_distances.emplace_back(p.get<std::string>());
    }
    if (doc.contains("validation")) cfg.validation = doc.at("validation").get<std::string>();
    read_if(doc, "max_rank", cfg.max_rank);
    if (doc.contains("out")) cfg.out = doc.at("out").get<std::string>();
    if (doc.contains("cluster")) cfg.cluster = parse_cluster_config(doc.at("cluster"), cfg.seed);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!cfg.has_eval_input() && !cfg.cluster) {
    throw std::invalid_argument("config: needs an input bundle, a synthetic fixture or a cluster section");
  }
  if (cfg.max_rank < 1) throw std::invalid_argument("config: max_rank must be >= 1");
  return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open config " + file.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: " + std::string(e.what()));
  }
  return parse_pipeline_config(doc);
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  const fs::path stages_dir = cfg.out / "stages";
  fs::remove_all(cfg.out / "failed");
  fs::remove_all(stages_dir);
  fs::remove_all(cfg.out / "models");
  fs::create_directories(cfg.out);

  PipelineResult result;
  try {
    const TestSplit primary = in_stage("input", [&] { return split_test_set(load_input(cfg.bundle, cfg.synthetic)); });

    std::optional<DistanceMatrix> cam_dist;
    if (!cfg.camera_distances.empty()) {
      cam_dist = in_stage("05_camera_distance", [&] {
        std::vector<DistanceMatrix> mats;
        for (const auto& p : cfg.camera_distances) mats.push_back(load_distance(p));
        return mean_camera_distance(mats);
      });
    }
    std::optional<CameraTopology> topo;
    if (cfg.validation) {
      topo = in_stage("06_topology", [&] {
        const auto val = load_bundle(*cfg.validation);
        std::vector<SampleMeta> labeled;
        for (const auto& m : val.meta) {
          if (m.pid >= 0) labeled.push_back(m);
        }
        return build_topology(labeled);
      });
    }

    StageWriter writer(stages_dir);
    ModelRun main_run = run_model(primary, cfg.stages, cfg, cam_dist, topo, writer);
    result.stages = main_run.stages;
    DistanceMatrix final_block = main_run.final_block;

    if (!cfg.models.empty()) {
      std::vector<DistanceMatrix> blocks{main_run.final_block};
      FusionSpec spec{{cfg.primary_weight}, cfg.fusion_normalize};
      for (std::size_t m = 0; m < cfg.models.size(); ++m) {
        const auto& model = cfg.models[m];
        const std::string tag = "model" + std::to_string(m + 1);
        const TestSplit split = in_stage("08_fusion", [&] { return split_test_set(load_bundle(model.bundle)); });
        if (split.query.meta != primary.query.meta || split.gallery.meta != primary.gallery.meta) {
          throw StageError("08_fusion", tag + " metadata differs from the primary bundle");
        }
        StageWriter model_writer(cfg.out / "models" / tag);
        blocks.push_back(run_model(split, model.stages, cfg, cam_dist, topo, model_writer).final_block);
        spec.weights.push_back(model.weight);
      }
      final_block = in_stage("08_fusion", [&] {
        StageResult fused{"08_fusion", fuse_distances(blocks, spec), {}};
        fused.report = evaluate(fused.dist, primary.query.meta, primary.gallery.meta, cfg.max_rank);
        writer.write(fused);
        result.stages.push_back(fused);
        return fused.dist;
      });
    }

    result.final_report = result.stages.back().report;
    ordered_json summary;
    auto& stage_list = summary["stages"] = ordered_json::array();
    for (const auto& s : result.stages) stage_list.push_back(stage_summary(s));
    summary["final"] = to_json(result.final_report);
    std::ofstream(cfg.out / "report.json") << summary.dump(2) << '\n';
  } catch (const StageError& e) {
    const fs::path failed = cfg.out / "failed";
    fs::create_directories(failed);
    if (fs::exists(stages_dir)) fs::rename(stages_dir, failed / "stages");
    if (fs::exists(cfg.out / "models")) fs::rename(cfg.out / "models", failed / "models");
    std::ofstream(failed / "error.txt") << e.stage() << '\n' << e.what() << '\n';
    throw;
  }
  return result;
}

void write_pseudo_labels(const fs::path& file, std::span<const std::int64_t> indices,
                         const PseudoLabeling& labeling) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + file.string() + " for writing");
  out << "index,class,negatives_only\n";
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int c = labeling.assignment[i];
    const bool neg = c != kNoClass && labeling.negatives_only[static_cast<std::size_t>(c)];
    out << indices[i] << ',' << c << ',' << (neg ? 1 : 0) << '\n';
  }
}

ClusterResult run_cluster_stage(const ClusterConfig& cfg) {
  const EmbeddingSet full = load_input(cfg.bundle, cfg.synthetic);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (full.meta[i].domain == Domain::target && full.meta[i].split == Split::train) rows.push_back(i);
  }
  if (rows.empty()) throw std::invalid_argument("empty target train split");
  EmbeddingSet train = select_rows(full, rows);
  if (cfg.normalize) train = l2_normalize(train).set;

  DistanceMatrix dist = pairwise_distance(train, train, Metric::euclidean);
  if (cfg.distance == ClusterDistance::rerank) dist = rerank_self(dist, cfg.rerank_params);

  ClusterResult result;
  result.indices = indices_of(train.meta);
  for (const auto& m : train.meta) result.pids.push_back(m.pid);
  result.dbscan_labels = dbscan(dist, cfg.dbscan);
  result.labeling = select_top_classes(result.dbscan_labels, cfg.top);
  result.labeling = add_singletons(result.labeling, result.dbscan_labels, dist, cfg.singletons, cfg.singleton_source);
  validate(result.labeling);
  if (!cfg.out.empty()) write_pseudo_labels(cfg.out, result.indices, result.labeling);
  return result;
}

}  // namespace reid
