#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "reid/metrics.hpp"
#include "reid/pseudo.hpp"
#include "reid/rerank.hpp"
#include "reid/store.hpp"

namespace reid {

/// Post-processing switches applied to one model's test embeddings.
struct StageParams {
  bool normalize = false;
  Metric metric = Metric::euclidean;
  bool camera_mean = true;
  std::size_t neighbor_k = 0;
  double cam_dist_rate = 0.0;
  double topology_alpha = 0.0;
  bool rerank = true;
  RerankParams rerank_params;
};

struct ModelInput {
  std::filesystem::path bundle;
  double weight = 1.0;
  StageParams stages;  // primary stages with the model's overrides applied
};

enum class ClusterDistance { euclidean, rerank };

struct ClusterConfig {
  std::optional<std::filesystem::path> bundle;
  std::optional<SynthConfig> synthetic;
  bool normalize = false;
  ClusterDistance distance = ClusterDistance::rerank;
  RerankParams rerank_params;
  DbscanParams dbscan;
  std::size_t top = 500;
  std::size_t singletons = 200;
  SingletonSource singleton_source = SingletonSource::outliers;
  std::size_t recluster_every = 6;  // carried for external trainers; one pass per invocation
  std::filesystem::path out;        // labels.csv destination
};

struct PipelineConfig {
  std::optional<std::filesystem::path> bundle;
  std::optional<SynthConfig> synthetic;
  std::vector<ModelInput> models;
  double primary_weight = 1.0;
  FusionNorm fusion_normalize = FusionNorm::none;
  std::vector<std::filesystem::path> camera_distances;
  std::optional<std::filesystem::path> validation;
  StageParams stages;
  std::size_t max_rank = 50;
  std::filesystem::path out = "reid_out";
  std::uint64_t seed = 0;
  std::optional<ClusterConfig> cluster;

  bool has_eval_input() const { return bundle.has_value() || synthetic.has_value(); }
};

/// Parses a config document. Unknown keys anywhere are rejected.
PipelineConfig parse_pipeline_config(const nlohmann::json& doc);
PipelineConfig load_pipeline_config(const std::filesystem::path& file);

SynthConfig parse_synth_config(const nlohmann::json& doc, std::uint64_t default_seed = 0);
nlohmann::ordered_json to_json(const SynthConfig& cfg);

/// Failure inside a named pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause)
      : std::runtime_error("stage " + stage + ": " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct StageResult {
  std::string name;
  DistanceMatrix dist;  // query x gallery block that was evaluated
  EvalReport report;
};

struct PipelineResult {
  std::vector<StageResult> stages;
  EvalReport final_report;
};

/// Runs the post-processing ladder and evaluates after every enabled stage:
/// raw, L2 normalisation, camera-mean subtraction, neighbour smoothing,
/// distance computation, camera-distance subtraction, topology weighting,
/// re-ranking, fusion across models.
///
/// Each stage writes `<out>/stages/<NN_name>/` holding the evaluated block and
/// `report.json`; `04_distance/union/` also holds the full query ∪ gallery
/// matrix. On failure the written stages move to `<out>/failed/` and a
/// StageError naming the stage is thrown.
PipelineResult run_pipeline(const PipelineConfig& cfg);

struct ClusterResult {
  std::vector<std::int64_t> indices;  // sample index values, in clustering order
  std::vector<std::int64_t> pids;     // ground-truth identities where known
  std::vector<int> dbscan_labels;
  PseudoLabeling labeling;
};

/// Target-domain train rows -> distance -> dbscan -> top classes -> singletons.
/// Writes `index,class,negatives_only` to cfg.out when it is non-empty.
ClusterResult run_cluster_stage(const ClusterConfig& cfg);

void write_pseudo_labels(const std::filesystem::path& file, std::span<const std::int64_t> indices,
                         const PseudoLabeling& labeling);

}  // namespace reid
