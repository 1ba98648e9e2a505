#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "reid/store.hpp"

namespace reid {

/// prob[a][b]: fraction of identities seen under camera a that are also seen
/// under camera b.
struct CameraTopology {
  std::size_t cameras = 0;
  std::vector<double> prob;  // cameras x cameras, row-major

  double at(std::size_t a, std::size_t b) const { return prob[a * cameras + b]; }
};

struct CameraFixParams {
  std::size_t neighbor_k = 0;   // 0 disables smoothing
  double cam_dist_rate = 0.0;
  double topology_alpha = 0.0;  // signed; 0 disables topology weighting
};

/// Subtracts from every row the mean feature of its camera, the mean taken over
/// all rows of the set.
EmbeddingSet subtract_camera_mean(const EmbeddingSet& set);

/// Row i becomes the mean of itself and its k nearest rows (Euclidean, self
/// excluded, ties by position). Neighbours are always read from the input.
EmbeddingSet neighbor_smooth(const EmbeddingSet& set, std::size_t k);

DistanceMatrix mean_camera_distance(std::span<const DistanceMatrix> mats);

/// max(0, dist - rate * cam_dist), entrywise.
DistanceMatrix subtract_camera_distance(const DistanceMatrix& dist, const DistanceMatrix& cam_dist,
                                        double rate);

CameraTopology build_topology(std::span<const SampleMeta> val_meta);

/// dist[i][j] * (1 + alpha * prob[row_cams[i]][col_cams[j]]), clamped at 0.
DistanceMatrix apply_topology(const DistanceMatrix& dist, const CameraTopology& topo,
                              std::span<const int> row_cams, std::span<const int> col_cams,
                              double alpha);

std::vector<int> cameras_of(std::span<const SampleMeta> meta);

}  // namespace reid
