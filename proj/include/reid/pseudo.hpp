#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "reid/store.hpp"

namespace reid {

inline constexpr int kOutlier = -1;  // dbscan label for noise
inline constexpr int kNoClass = -1;  // pseudo-label for unassigned samples

struct DbscanParams {
  double eps = 0.6;              // neighbourhood radius, inclusive
  std::size_t min_samples = 4;   // core threshold, counting the point itself
};

/// DBSCAN over a precomputed self-distance matrix.
///
/// Points are scanned in ascending position. An unlabeled core point opens a
/// new cluster which is grown breadth-first through core points; border points
/// join the first cluster that reaches them. Cluster ids follow discovery order.
std::vector<int> dbscan(const DistanceMatrix& dist, const DbscanParams& params);

struct PseudoLabeling {
  std::vector<int> assignment;        // class id per sample, or kNoClass
  std::vector<bool> negatives_only;   // per class
  int n_classes = 0;

  bool operator==(const PseudoLabeling&) const = default;
};

/// Throws std::logic_error when class ids are not contiguous, a class is empty,
/// or a negatives-only class holds more than one sample.
void validate(const PseudoLabeling& labeling);

/// Keeps the n_keep largest clusters (ties by smaller cluster id) and renumbers
/// them by descending size. Everything else becomes kNoClass.
PseudoLabeling select_top_classes(std::span<const int> labels, std::size_t n_keep);

enum class SingletonSource {
  outliers,                // dbscan noise only
  outliers_and_discarded,  // also members of clusters dropped by select_top_classes
};

/// Appends up to m one-sample, negatives-only classes. Candidates are ranked by
/// descending distance to their nearest kept-class sample, ties by position.
PseudoLabeling add_singletons(const PseudoLabeling& base, std::span<const int> labels,
                              const DistanceMatrix& dist, std::size_t m,
                              SingletonSource source = SingletonSource::outliers);

}  // namespace reid
