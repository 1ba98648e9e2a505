#pragma once

#include <cstddef>
#include <vector>

#include "reid/store.hpp"

namespace reid {

/// k-reciprocal re-ranking parameters.
struct RerankParams {
  std::size_t k1 = 20;   // reciprocal neighbourhood size
  std::size_t k2 = 6;    // local query expansion size (counting the row itself)
  double lambda = 0.3;   // weight of the original distance
};

void validate(const RerankParams& params, std::size_t n_total);

/// The k nearest positions of row i, self excluded, ordered by (distance, position).
std::vector<std::size_t> nearest_neighbors(const DistanceMatrix& dist, std::size_t i, std::size_t k);

/// R(i, k1) = { j in N(i, k1) : i in N(j, k1) }, in N(i, k1) order.
std::vector<std::size_t> k_reciprocal_neighbors(const DistanceMatrix& dist, std::size_t i,
                                                std::size_t k1);

/// Re-ranks the query x gallery block of a self matrix over query ∪ gallery
/// whose first n_query rows are the queries:
///
///   d*(p, g) = lambda * d(p, g) + (1 - lambda) * d_J(p, g)
///
/// where d_J is the Jaccard distance between locally expanded k-reciprocal
/// membership vectors. Membership vectors are stored sparsely.
DistanceMatrix rerank(const DistanceMatrix& dist_all, std::size_t n_query,
                      const RerankParams& params = {});

/// Same construction evaluated for every pair of rows (n x n), e.g. as a
/// clustering distance.
DistanceMatrix rerank_self(const DistanceMatrix& dist_all, const RerankParams& params = {});

}  // namespace reid
