#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "reid/store.hpp"

namespace reid {

enum class Metric { euclidean, cosine };
Metric parse_metric(std::string_view text);

struct NormalizeResult {
  EmbeddingSet set;
  std::size_t zero_rows = 0;  // rows left untouched because their norm was zero
};

NormalizeResult l2_normalize(const EmbeddingSet& set);

/// Euclidean: ||a - b||. Cosine: 1 - a.b / (|a||b|), and 1 when either side is zero.
/// Every entry is reduced in a fixed lane order, so the output is bitwise
/// independent of the thread count.
DistanceMatrix pairwise_distance(const EmbeddingSet& a, const EmbeddingSet& b,
                                 Metric metric = Metric::euclidean);

struct QueryAp {
  std::int64_t query_index = 0;
  double ap = 0.0;
  bool excluded = false;  // no valid gallery match after junk removal
};

struct EvalReport {
  double map = 0.0;
  std::vector<double> cmc;  // cmc[k - 1] = Rank-k
  std::vector<QueryAp> per_query;

  std::size_t excluded_queries() const;
  double rank(std::size_t k) const { return k >= 1 && k <= cmc.size() ? cmc[k - 1] : 0.0; }
};

/// Cross-camera retrieval evaluation. Gallery items sharing both pid and camid
/// with the query are dropped before ranking; ties are ranked by gallery
/// position. Queries without any remaining relevant item are excluded from the
/// mAP and CMC denominators.
EvalReport evaluate(const DistanceMatrix& dist, std::span<const SampleMeta> query_meta,
                    std::span<const SampleMeta> gallery_meta, std::size_t max_rank = 50);

nlohmann::ordered_json to_json(const EvalReport& report);

enum class FusionNorm { none, minmax };
FusionNorm parse_fusion_norm(std::string_view text);

struct FusionSpec {
  std::vector<double> weights;
  FusionNorm normalize = FusionNorm::none;
};

/// sum_i w_i * norm(m_i) / sum_i w_i.
DistanceMatrix fuse_distances(std::span<const DistanceMatrix> mats, const FusionSpec& spec);

/// Maps the matrix onto [0, 1] by its global min and max; constant input gives zeros.
DistanceMatrix minmax_normalize(const DistanceMatrix& dist);

}  // namespace reid
