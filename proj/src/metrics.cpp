#include "reid/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace reid {

Metric parse_metric(std::string_view text) {
  if (text == "euclidean") return Metric::euclidean;
  if (text == "cosine") return Metric::cosine;
  throw std::invalid_argument("unknown metric '" + std::string(text) + "'");
}

FusionNorm parse_fusion_norm(std::string_view text) {
  if (text == "none") return FusionNorm::none;
  if (text == "minmax") return FusionNorm::minmax;
  throw std::invalid_argument("unknown fusion normalization '" + std::string(text) + "'");
}

NormalizeResult l2_normalize(const EmbeddingSet& set) {
  NormalizeResult result{set, 0};
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto r = result.set.row(i);
    double norm2 = 0.0;
    for (float v : r) norm2 += static_cast<double>(v) * v;
    if (norm2 == 0.0) {
      ++result.zero_rows;
      continue;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& v : r) v = static_cast<float>(v * inv);
  }
  return result;
}

namespace {

constexpr std::size_t kLanes = 16;

// Fixed-shape reductions: the lane layout and combine order depend only on the
// vector length, never on scheduling.
inline float combine_lanes(const float (&acc)[kLanes]) {
  float s8[8], s4[4];
  for (std::size_t l = 0; l < 8; ++l) s8[l] = acc[l] + acc[l + 8];
  for (std::size_t l = 0; l < 4; ++l) s4[l] = s8[l] + s8[l + 4];
  return (s4[0] + s4[2]) + (s4[1] + s4[3]);
}

inline float squared_l2(const float* __restrict a, const float* __restrict b, std::size_t n) {
  float acc[kLanes] = {};
  std::size_t k = 0;
  for (; k + kLanes <= n; k += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) {
      const float d = a[k + l] - b[k + l];
      acc[l] += d * d;
    }
  }
  float sum = combine_lanes(acc);
  for (; k < n; ++k) {
    const float d = a[k] - b[k];
    sum += d * d;
  }
  return sum;
}

inline float dot(const float* __restrict a, const float* __restrict b, std::size_t n) {
  float acc[kLanes] = {};
  std::size_t k = 0;
  for (; k + kLanes <= n; k += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[k + l] * b[k + l];
  }
  float sum = combine_lanes(acc);
  for (; k < n; ++k) sum += a[k] * b[k];
  return sum;
}

// Tiles keep a block of b rows resident in cache while a block of a rows sweeps it.
constexpr std::size_t kRowTile = 16;
constexpr std::size_t kColTile = 64;

template <typename Kernel>
void tiled_fill(DistanceMatrix& out, Kernel&& kernel) {
  const auto n_tiles = static_cast<std::int64_t>((out.rows + kRowTile - 1) / kRowTile);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t t = 0; t < n_tiles; ++t) {
    const std::size_t i0 = static_cast<std::size_t>(t) * kRowTile;
    const std::size_t i1 = std::min(out.rows, i0 + kRowTile);
    for (std::size_t j0 = 0; j0 < out.cols; j0 += kColTile) {
      const std::size_t j1 = std::min(out.cols, j0 + kColTile);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) out.at(i, j) = kernel(i, j);
      }
    }
  }
}

}  // namespace

DistanceMatrix pairwise_distance(const EmbeddingSet& a, const EmbeddingSet& b, Metric metric) {
  if (a.dim != b.dim) {
    throw std::invalid_argument("dimension mismatch: " + std::to_string(a.dim) + " vs " +
                                std::to_string(b.dim));
  }
  if (a.features.size() != a.size() * a.dim || b.features.size() != b.size() * b.dim) {
    throw std::invalid_argument("inconsistent bundle");
  }
  DistanceMatrix out = make_distance_matrix(indices_of(a.meta), indices_of(b.meta));
  const std::size_t dim = a.dim;
  const float* fa = a.features.data();
  const float* fb = b.features.data();

  if (metric == Metric::euclidean) {
    tiled_fill(out, [&](std::size_t i, std::size_t j) {
      return std::sqrt(squared_l2(fa + i * dim, fb + j * dim, dim));
    });
    return out;
  }

  std::vector<double> na(a.size()), nb(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) na[i] = std::sqrt(dot(fa + i * dim, fa + i * dim, dim));
  for (std::size_t j = 0; j < b.size(); ++j) nb[j] = std::sqrt(dot(fb + j * dim, fb + j * dim, dim));
  tiled_fill(out, [&](std::size_t i, std::size_t j) {
    if (na[i] == 0.0 || nb[j] == 0.0) return 1.0f;
    if (fa + i * dim == fb + j * dim) return 0.0f;  // same row; rounding would leave ~1e-8 on the diagonal
    const double cosine = dot(fa + i * dim, fb + j * dim, dim) / (na[i] * nb[j]);
    return static_cast<float>(std::clamp(1.0 - cosine, 0.0, 2.0));
  });
  return out;
}

std::size_t EvalReport::excluded_queries() const {
  return static_cast<std::size_t>(
      std::count_if(per_query.begin(), per_query.end(), [](const QueryAp& q) { return q.excluded; }));
}

EvalReport evaluate(const DistanceMatrix& dist, std::span<const SampleMeta> query_meta,
                    std::span<const SampleMeta> gallery_meta, std::size_t max_rank) {
  if (dist.rows != query_meta.size() || dist.cols != gallery_meta.size() ||
      dist.values.size() != dist.rows * dist.cols) {
    throw std::invalid_argument("shape mismatch between distance matrix and metadata");
  }
  for (std::size_t i = 0; i < query_meta.size(); ++i) {
    if (dist.row_ids.at(i) != query_meta[i].index) {
      throw std::invalid_argument("distance row ids do not match query metadata");
    }
  }
  for (std::size_t j = 0; j < gallery_meta.size(); ++j) {
    if (dist.col_ids.at(j) != gallery_meta[j].index) {
      throw std::invalid_argument("distance column ids do not match gallery metadata");
    }
  }
  auto check_labels = [](const SampleMeta& m) {
    if (m.pid < 0) throw std::invalid_argument("evaluation requires known identities (pid = -1 found)");
    if (m.camid < 0) throw std::invalid_argument("invalid camera id");
  };
  for (const auto& m : query_meta) check_labels(m);
  for (const auto& m : gallery_meta) check_labels(m);

  const std::size_t nq = dist.rows;
  const std::size_t ng = dist.cols;
  EvalReport report;
  report.per_query.resize(nq);
  // first_hit[q] = 1-based rank of the first relevant item, 0 when excluded.
  std::vector<std::size_t> first_hit(nq, 0);

#pragma omp parallel
  {
    std::vector<std::size_t> order(ng);
#pragma omp for schedule(dynamic, 8)
    for (std::int64_t qi = 0; qi < static_cast<std::int64_t>(nq); ++qi) {
      const auto q = static_cast<std::size_t>(qi);
      const auto& qm = query_meta[q];
      const auto drow = dist.row(q);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return drow[x] < drow[y] || (drow[x] == drow[y] && x < y);
      });
      std::size_t rank = 0, hits = 0;
      double precision_sum = 0.0;
      for (auto g : order) {
        const auto& gm = gallery_meta[g];
        const bool same_pid = gm.pid == qm.pid;
        if (same_pid && gm.camid == qm.camid) continue;
        ++rank;
        if (same_pid) {
          ++hits;
          if (hits == 1) first_hit[q] = rank;
          precision_sum += static_cast<double>(hits) / static_cast<double>(rank);
        }
      }
      auto& entry = report.per_query[q];
      entry.query_index = qm.index;
      entry.excluded = hits == 0;
      entry.ap = hits == 0 ? 0.0 : precision_sum / static_cast<double>(hits);
    }
  }

  std::size_t included = 0;
  double ap_sum = 0.0;
  report.cmc.assign(max_rank, 0.0);
  std::vector<std::size_t> hit_counts(max_rank + 1, 0);
  for (std::size_t q = 0; q < nq; ++q) {
    if (report.per_query[q].excluded) continue;
    ++included;
    ap_sum += report.per_query[q].ap;
    if (first_hit[q] <= max_rank) ++hit_counts[first_hit[q]];
  }
  if (included > 0) {
    report.map = ap_sum / static_cast<double>(included);
    std::size_t cumulative = 0;
    for (std::size_t k = 1; k <= max_rank; ++k) {
      cumulative += hit_counts[k];
      report.cmc[k - 1] = static_cast<double>(cumulative) / static_cast<double>(included);
    }
  }
  return report;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["map"] = report.map;
  j["cmc"] = report.cmc;
  j["excluded_queries"] = report.excluded_queries();
  auto& per_query = j["per_query_ap"] = nlohmann::ordered_json::array();
  for (const auto& q : report.per_query) {
    per_query.push_back({{"query", q.query_index}, {"ap", q.ap}, {"excluded", q.excluded}});
  }
  return j;
}

DistanceMatrix minmax_normalize(const DistanceMatrix& dist) {
  DistanceMatrix out = dist;
  if (dist.values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(dist.values.begin(), dist.values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    std::fill(out.values.begin(), out.values.end(), 0.0f);
    return out;
  }
  const double span = hi - lo;
  for (auto& v : out.values) v = static_cast<float>((v - lo) / span);
  return out;
}

DistanceMatrix fuse_distances(std::span<const DistanceMatrix> mats, const FusionSpec& spec) {
  if (mats.empty()) throw std::invalid_argument("fusion needs at least one matrix");
  if (spec.weights.size() != mats.size()) {
    throw std::invalid_argument("fusion needs one weight per matrix");
  }
  double weight_sum = 0.0;
  for (double w : spec.weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("fusion weights must be finite and >= 0");
    weight_sum += w;
  }
  if (weight_sum <= 0.0) throw std::invalid_argument("all fusion weights are zero");
  for (const auto& m : mats) {
    if (!m.same_layout(mats[0])) throw std::invalid_argument("shape mismatch between fused matrices");
  }

  std::vector<DistanceMatrix> normalized;
  if (spec.normalize == FusionNorm::minmax) {
    for (const auto& m : mats) normalized.push_back(minmax_normalize(m));
    mats = normalized;
  }

  DistanceMatrix out = mats[0];
  const std::size_t n = out.values.size();
  for (std::size_t e = 0; e < n; ++e) {
    double acc = 0.0;
    for (std::size_t m = 0; m < mats.size(); ++m) acc += spec.weights[m] * mats[m].values[e];
    out.values[e] = static_cast<float>(acc / weight_sum);
  }
  return out;
}

}  // namespace reid
