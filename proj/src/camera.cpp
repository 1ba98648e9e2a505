#include "reid/camera.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

#include "reid/metrics.hpp"

namespace reid {

EmbeddingSet subtract_camera_mean(const EmbeddingSet& set) {
  const std::size_t dim = set.dim;
  std::map<int, std::vector<double>> sums;
  std::map<int, std::size_t> counts;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto& acc = sums[set.meta[i].camid];
    acc.resize(dim, 0.0);
    const auto r = set.row(i);
    for (std::size_t k = 0; k < dim; ++k) acc[k] += r[k];
    ++counts[set.meta[i].camid];
  }
  for (auto& [cam, acc] : sums) {
    const double n = static_cast<double>(counts[cam]);
    for (auto& v : acc) v /= n;
  }

  EmbeddingSet out = set;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& mean = sums[out.meta[i].camid];
    auto r = out.row(i);
    for (std::size_t k = 0; k < dim; ++k) r[k] = static_cast<float>(r[k] - mean[k]);
  }
  return out;
}

EmbeddingSet neighbor_smooth(const EmbeddingSet& set, std::size_t k) {
  const std::size_t n = set.size();
  if (k == 0) return set;
  if (k >= n) {
    throw std::invalid_argument("neighbor_smooth: k = " + std::to_string(k) +
                                " must be smaller than the number of rows " + std::to_string(n));
  }
  const DistanceMatrix dist = pairwise_distance(set, set, Metric::euclidean);
  EmbeddingSet out = set;
  const std::size_t dim = set.dim;

#pragma omp parallel
  {
    std::vector<std::size_t> order;
    std::vector<double> acc(dim);
#pragma omp for schedule(dynamic, 16)
    for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(n); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      const auto row = dist.row(i);
      order.clear();
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) order.push_back(j);
      }
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](std::size_t a, std::size_t b) {
                          return row[a] < row[b] || (row[a] == row[b] && a < b);
                        });
      const auto self = set.row(i);
      for (std::size_t d = 0; d < dim; ++d) acc[d] = self[d];
      for (std::size_t r = 0; r < k; ++r) {
        const auto nb = set.row(order[r]);
        for (std::size_t d = 0; d < dim; ++d) acc[d] += nb[d];
      }
      const double denom = static_cast<double>(k + 1);
      auto dst = out.row(i);
      for (std::size_t d = 0; d < dim; ++d) dst[d] = static_cast<float>(acc[d] / denom);
    }
  }
  return out;
}

DistanceMatrix mean_camera_distance(std::span<const DistanceMatrix> mats) {
  if (mats.empty()) throw std::invalid_argument("mean_camera_distance: empty list");
  for (const auto& m : mats) {
    if (!m.same_layout(mats[0])) throw std::invalid_argument("mean_camera_distance: shape mismatch");
  }
  DistanceMatrix out = mats[0];
  const double count = static_cast<double>(mats.size());
  for (std::size_t e = 0; e < out.values.size(); ++e) {
    double acc = 0.0;
    for (const auto& m : mats) acc += m.values[e];
    out.values[e] = static_cast<float>(acc / count);
  }
  return out;
}

DistanceMatrix subtract_camera_distance(const DistanceMatrix& dist, const DistanceMatrix& cam_dist,
                                        double rate) {
  if (!dist.same_layout(cam_dist)) {
    throw std::invalid_argument("subtract_camera_distance: shape mismatch");
  }
  if (!(rate >= 0.0)) throw std::invalid_argument("subtract_camera_distance: rate must be >= 0");
  DistanceMatrix out = dist;
  if (rate == 0.0) return out;
  for (std::size_t e = 0; e < out.values.size(); ++e) {
    const double v = static_cast<double>(dist.values[e]) - rate * cam_dist.values[e];
    out.values[e] = static_cast<float>(std::max(0.0, v));
  }
  return out;
}

CameraTopology build_topology(std::span<const SampleMeta> val_meta) {
  if (val_meta.empty()) throw std::invalid_argument("build_topology: empty metadata");
  int max_cam = 0;
  for (const auto& m : val_meta) {
    if (m.pid < 0 || m.camid < 0) {
      throw std::invalid_argument("build_topology: requires pid >= 0 and camid >= 0");
    }
    max_cam = std::max(max_cam, m.camid);
  }
  const auto cams = static_cast<std::size_t>(max_cam) + 1;

  // cameras seen per identity
  std::map<std::int64_t, std::set<int>> seen;
  for (const auto& m : val_meta) seen[m.pid].insert(m.camid);

  std::vector<double> both(cams * cams, 0.0);
  for (const auto& [pid, cam_set] : seen) {
    for (int a : cam_set) {
      for (int b : cam_set) both[static_cast<std::size_t>(a) * cams + static_cast<std::size_t>(b)] += 1.0;
    }
  }
  CameraTopology topo;
  topo.cameras = cams;
  topo.prob.assign(cams * cams, 0.0);
  for (std::size_t a = 0; a < cams; ++a) {
    const double under_a = both[a * cams + a];
    if (under_a == 0.0) continue;
    for (std::size_t b = 0; b < cams; ++b) topo.prob[a * cams + b] = both[a * cams + b] / under_a;
  }
  return topo;
}

DistanceMatrix apply_topology(const DistanceMatrix& dist, const CameraTopology& topo,
                              std::span<const int> row_cams, std::span<const int> col_cams,
                              double alpha) {
  if (row_cams.size() != dist.rows || col_cams.size() != dist.cols) {
    throw std::invalid_argument("apply_topology: camera lists do not match the matrix shape");
  }
  auto check = [&](int c) {
    if (c < 0 || static_cast<std::size_t>(c) >= topo.cameras) {
      throw std::invalid_argument("apply_topology: camera id " + std::to_string(c) + " out of range");
    }
  };
  for (int c : row_cams) check(c);
  for (int c : col_cams) check(c);

  DistanceMatrix out = dist;
  if (alpha == 0.0) return out;
  for (std::size_t i = 0; i < dist.rows; ++i) {
    const auto a = static_cast<std::size_t>(row_cams[i]);
    for (std::size_t j = 0; j < dist.cols; ++j) {
      const double factor = 1.0 + alpha * topo.at(a, static_cast<std::size_t>(col_cams[j]));
      out.at(i, j) = static_cast<float>(std::max(0.0, dist.at(i, j) * factor));
    }
  }
  return out;
}

std::vector<int> cameras_of(std::span<const SampleMeta> meta) {
  std::vector<int> cams;
  cams.reserve(meta.size());
  for (const auto& m : meta) cams.push_back(m.camid);
  return cams;
}

}  // namespace reid
