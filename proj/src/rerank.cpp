#include "reid/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

namespace reid {

void validate(const RerankParams& params, std::size_t n_total) {
  if (params.k1 < 1 || params.k2 < 1 || params.k2 > params.k1) {
    throw std::invalid_argument("rerank: require 1 <= k2 <= k1");
  }
  if (params.k1 >= n_total) {
    throw std::invalid_argument("rerank: k1 = " + std::to_string(params.k1) +
                                " must be smaller than the number of samples " +
                                std::to_string(n_total));
  }
  if (!(params.lambda >= 0.0 && params.lambda <= 1.0)) {
    throw std::invalid_argument("rerank: lambda must lie in [0, 1]");
  }
}

namespace {

void require_square(const DistanceMatrix& dist) {
  if (dist.rows != dist.cols || !dist.is_self() || dist.values.size() != dist.rows * dist.cols) {
    throw std::invalid_argument("rerank needs a self-distance matrix");
  }
}

std::vector<std::size_t> knn_of(const DistanceMatrix& dist, std::size_t i, std::size_t k,
                                std::vector<std::size_t>& scratch) {
  const auto row = dist.row(i);
  scratch.clear();
  for (std::size_t j = 0; j < dist.cols; ++j) {
    if (j != i) scratch.push_back(j);
  }
  auto closer = [&](std::size_t a, std::size_t b) {
    return row[a] < row[b] || (row[a] == row[b] && a < b);
  };
  const std::size_t kk = std::min(k, scratch.size());
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(kk),
                    scratch.end(), closer);
  return {scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(kk)};
}

bool in_prefix(const std::vector<std::size_t>& list, std::size_t k, std::size_t value) {
  const auto end = list.begin() + static_cast<std::ptrdiff_t>(std::min(k, list.size()));
  return std::find(list.begin(), end, value) != end;
}

std::vector<std::size_t> reciprocal_from_table(const std::vector<std::vector<std::size_t>>& knn,
                                               std::size_t i, std::size_t k) {
  std::vector<std::size_t> out;
  const auto& mine = knn[i];
  for (std::size_t r = 0; r < std::min(k, mine.size()); ++r) {
    const std::size_t j = mine[r];
    if (in_prefix(knn[j], k, i)) out.push_back(j);
  }
  return out;
}

using SparseRow = std::vector<std::pair<std::uint32_t, double>>;

struct Encoding {
  std::vector<SparseRow> rows;  // locally expanded membership vectors
  std::vector<double> sums;
};

// Builds the expanded k-reciprocal membership vectors for every sample and
// applies local query expansion over the sample and its k2 - 1 nearest neighbours.
Encoding encode(const DistanceMatrix& dist, const RerankParams& params) {
  const std::size_t n = dist.rows;
  const std::size_t half = std::max<std::size_t>(1, params.k1 / 2);
  const auto ni = static_cast<std::int64_t>(n);

  std::vector<std::vector<std::size_t>> knn(n);
#pragma omp parallel
  {
    std::vector<std::size_t> scratch;
    scratch.reserve(n);
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < ni; ++i) {
      knn[static_cast<std::size_t>(i)] = knn_of(dist, static_cast<std::size_t>(i), params.k1, scratch);
    }
  }

  std::vector<std::vector<std::size_t>> r_full(n), r_half(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < ni; ++i) {
    const auto u = static_cast<std::size_t>(i);
    r_full[u] = reciprocal_from_table(knn, u, params.k1);
    r_half[u] = reciprocal_from_table(knn, u, half);
  }

  std::vector<SparseRow> v(n);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t i = 0; i < ni; ++i) {
    const auto u = static_cast<std::size_t>(i);
    std::vector<std::size_t> base = r_full[u];
    std::sort(base.begin(), base.end());

    std::vector<std::size_t> expanded = base;
    expanded.push_back(u);
    for (std::size_t q : r_full[u]) {
      const auto& cand = r_half[q];
      std::size_t overlap = 0;
      for (std::size_t c : cand) overlap += std::binary_search(base.begin(), base.end(), c) ? 1 : 0;
      if (3 * overlap >= 2 * cand.size()) expanded.insert(expanded.end(), cand.begin(), cand.end());
    }
    std::sort(expanded.begin(), expanded.end());
    expanded.erase(std::unique(expanded.begin(), expanded.end()), expanded.end());

    const auto row = dist.row(u);
    SparseRow sparse;
    sparse.reserve(expanded.size());
    double total = 0.0;
    for (std::size_t j : expanded) {
      const double w = std::exp(-static_cast<double>(row[j]));
      sparse.emplace_back(static_cast<std::uint32_t>(j), w);
      total += w;
    }
    if (total > 0.0) {
      for (auto& e : sparse) e.second /= total;
    } else {
      for (auto& e : sparse) e.second = 1.0 / static_cast<double>(sparse.size());
    }
    v[u] = std::move(sparse);
  }

  Encoding enc;
  enc.rows.resize(n);
  enc.sums.resize(n);
  const double inv_k2 = 1.0 / static_cast<double>(params.k2);
#pragma omp parallel
  {
    std::vector<double> acc(n, 0.0);
    std::vector<char> seen(n, 0);
    std::vector<std::uint32_t> touched;
#pragma omp for schedule(dynamic, 16)
    for (std::int64_t i = 0; i < ni; ++i) {
      const auto u = static_cast<std::size_t>(i);
      touched.clear();
      auto add_row = [&](std::size_t src) {
        for (const auto& [j, w] : v[src]) {
          if (!seen[j]) {
            seen[j] = 1;
            touched.push_back(j);
          }
          acc[j] += w;
        }
      };
      add_row(u);
      for (std::size_t r = 0; r + 1 < params.k2; ++r) add_row(knn[u][r]);
      std::sort(touched.begin(), touched.end());
      SparseRow out;
      out.reserve(touched.size());
      double sum = 0.0;
      for (auto j : touched) {
        const double val = acc[j] * inv_k2;
        out.emplace_back(j, val);
        sum += val;
        acc[j] = 0.0;
        seen[j] = 0;
      }
      enc.rows[u] = std::move(out);
      enc.sums[u] = sum;
    }
  }
  return enc;
}

// Jaccard-mixed distances for rows [r0, r1) against columns [c0, c1).
DistanceMatrix mix(const DistanceMatrix& dist, const Encoding& enc, std::size_t r0, std::size_t r1,
                   std::size_t c0, std::size_t c1, double lambda) {
  const std::size_t n = dist.rows;
  std::vector<std::int64_t> rids(dist.row_ids.begin() + static_cast<std::ptrdiff_t>(r0),
                                 dist.row_ids.begin() + static_cast<std::ptrdiff_t>(r1));
  std::vector<std::int64_t> cids(dist.col_ids.begin() + static_cast<std::ptrdiff_t>(c0),
                                 dist.col_ids.begin() + static_cast<std::ptrdiff_t>(c1));
  DistanceMatrix out = make_distance_matrix(std::move(rids), std::move(cids));
  const std::size_t ncols = c1 - c0;

  // inverted[j] lists (column position, value) of every column sample holding j.
  std::vector<std::vector<std::pair<std::uint32_t, double>>> inverted(n);
  for (std::size_t g = c0; g < c1; ++g) {
    for (const auto& [j, w] : enc.rows[g]) {
      inverted[j].emplace_back(static_cast<std::uint32_t>(g - c0), w);
    }
  }

#pragma omp parallel
  {
    std::vector<double> min_sum(ncols, 0.0);
#pragma omp for schedule(dynamic, 8)
    for (std::int64_t pi = static_cast<std::int64_t>(r0); pi < static_cast<std::int64_t>(r1); ++pi) {
      const auto p = static_cast<std::size_t>(pi);
      std::fill(min_sum.begin(), min_sum.end(), 0.0);
      for (const auto& [j, vp] : enc.rows[p]) {
        for (const auto& [g, vg] : inverted[j]) min_sum[g] += std::min(vp, vg);
      }
      const auto orig = dist.row(p);
      auto dst = out.row(p - r0);
      for (std::size_t g = 0; g < ncols; ++g) {
        const double m = min_sum[g];
        const double union_mass = enc.sums[p] + enc.sums[c0 + g] - m;
        double jaccard = union_mass > 0.0 ? 1.0 - m / union_mass : 0.0;
        jaccard = std::clamp(jaccard, 0.0, 1.0);
        dst[g] = static_cast<float>(lambda * static_cast<double>(orig[c0 + g]) + (1.0 - lambda) * jaccard);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<std::size_t> nearest_neighbors(const DistanceMatrix& dist, std::size_t i, std::size_t k) {
  require_square(dist);
  if (i >= dist.rows) throw std::out_of_range("neighbor index out of range");
  std::vector<std::size_t> scratch;
  return knn_of(dist, i, k, scratch);
}

std::vector<std::size_t> k_reciprocal_neighbors(const DistanceMatrix& dist, std::size_t i,
                                                std::size_t k1) {
  require_square(dist);
  if (i >= dist.rows) throw std::out_of_range("neighbor index out of range");
  if (k1 >= dist.rows) throw std::invalid_argument("k1 must be smaller than the number of samples");
  std::vector<std::size_t> scratch;
  const auto mine = knn_of(dist, i, k1, scratch);
  std::vector<std::size_t> out;
  for (std::size_t j : mine) {
    const auto theirs = knn_of(dist, j, k1, scratch);
    if (std::find(theirs.begin(), theirs.end(), i) != theirs.end()) out.push_back(j);
  }
  return out;
}

DistanceMatrix rerank(const DistanceMatrix& dist_all, std::size_t n_query, const RerankParams& params) {
  require_square(dist_all);
  const std::size_t n = dist_all.rows;
  if (n_query >= n) throw std::invalid_argument("rerank: n_query must be smaller than the number of samples");
  validate(params, n);
  if (params.lambda == 1.0) {
    // The mixing identity: no neighbour structure is needed.
    std::vector<std::size_t> rows(n_query), cols(n - n_query);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::iota(cols.begin(), cols.end(), n_query);
    return submatrix(dist_all, rows, cols);
  }
  const Encoding enc = encode(dist_all, params);
  return mix(dist_all, enc, 0, n_query, n_query, n, params.lambda);
}

DistanceMatrix rerank_self(const DistanceMatrix& dist_all, const RerankParams& params) {
  require_square(dist_all);
  const std::size_t n = dist_all.rows;
  validate(params, n);
  const Encoding enc = encode(dist_all, params);
  return mix(dist_all, enc, 0, n, 0, n, params.lambda);
}

}  // namespace reid
