#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "reid/parallel.hpp"
#include "reid/rerank.hpp"
#include "test_util.hpp"

using namespace reid;
using reid::testing::matrix_from;
using reid::testing::random_self_matrix;

namespace {

DistanceMatrix line_points(const std::vector<double>& xs) {
  std::vector<std::vector<float>> rows;
  for (double a : xs) {
    std::vector<float> r;
    for (double b : xs) r.push_back(static_cast<float>(std::fabs(a - b)));
    rows.push_back(r);
  }
  return matrix_from(rows);
}

// Two samples a and b with identical distance rows are only interchangeable
// for re-ranking when no other row's k-NN list cuts between them; index tie
// breaking would otherwise put one inside a neighbourhood and the other not.
bool boundary_splits(const DistanceMatrix& d, std::size_t a, std::size_t b, std::size_t k) {
  for (std::size_t j = 0; j < d.rows; ++j) {
    if (j == a || j == b) continue;
    const auto nn = nearest_neighbors(d, j, k);
    const bool ha = std::find(nn.begin(), nn.end(), a) != nn.end();
    const bool hb = std::find(nn.begin(), nn.end(), b) != nn.end();
    if (ha != hb) return true;
  }
  return false;
}

// Random self matrix in which row `dup` is an exact copy of row `src`.
DistanceMatrix with_duplicate(std::mt19937_64& rng, std::size_t n, std::size_t src, std::size_t dup) {
  auto d = random_self_matrix(rng, n, 3);
  for (std::size_t j = 0; j < n; ++j) {
    d.at(dup, j) = d.at(src, j);
    d.at(j, dup) = d.at(j, src);
  }
  d.at(dup, dup) = 0.0f;
  d.at(src, dup) = d.at(dup, src) = 0.0f;
  return d;
}

}  // namespace

TEST_CASE("nearest neighbours exclude self and break ties by index") {
  const auto d = matrix_from({{0, 1, 1, 2}, {1, 0, 3, 3}, {1, 3, 0, 3}, {2, 3, 3, 0}});
  CHECK(nearest_neighbors(d, 0, 2) == std::vector<std::size_t>{1, 2});
  CHECK(nearest_neighbors(d, 3, 3) == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(nearest_neighbors(d, 4, 1), std::out_of_range);
}

TEST_CASE("k_reciprocal_neighbors examples") {
  SUBCASE("two identical points") {
    const auto d = matrix_from({{0, 0}, {0, 0}});
    CHECK(k_reciprocal_neighbors(d, 0, 1) == std::vector<std::size_t>{1});
    CHECK(k_reciprocal_neighbors(d, 1, 1) == std::vector<std::size_t>{0});
  }
  SUBCASE("isolated point has no reciprocal neighbour") {
    const auto d = line_points({0.0, 1.0, 2.2, 10.0});
    CHECK(k_reciprocal_neighbors(d, 3, 1).empty());
    CHECK(oracle::reciprocal(d, 3, 1).empty());
    CHECK(k_reciprocal_neighbors(d, 0, 1) == std::vector<std::size_t>{1});
  }
  SUBCASE("errors") {
    const auto d = line_points({0.0, 1.0, 2.0});
    CHECK_THROWS_AS(k_reciprocal_neighbors(d, 0, 3), std::invalid_argument);
    CHECK_THROWS_AS(k_reciprocal_neighbors(d, 5, 1), std::out_of_range);
  }
}

TEST_CASE("reciprocal sets agree with the oracle and lie inside N(i,k)") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 8 + static_cast<std::size_t>(trial);
    const auto d = random_self_matrix(rng, n);
    for (std::size_t k : {1u, 2u, 5u}) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = k_reciprocal_neighbors(d, i, k);
        CHECK(r == oracle::reciprocal(d, i, k));
        const auto nn = nearest_neighbors(d, i, k);
        for (auto j : r) CHECK(std::find(nn.begin(), nn.end(), j) != nn.end());
      }
    }
  }
}

TEST_CASE("rerank on two three-point clusters matches the dense reference") {
  const auto d = line_points({0.0, 0.1, 0.25, 5.0, 5.2, 5.3});
  const RerankParams p{3, 2, 0.3};
  for (std::size_t nq : {1u, 2u, 3u}) {
    const auto got = rerank(d, nq, p);
    const auto want = oracle::rerank_dense(d, nq, 3, 2, 0.3);
    REQUIRE(got.rows == nq);
    REQUIRE(got.cols == 6 - nq);
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t j = 0; j < got.cols; ++j) CHECK(std::fabs(got.at(i, j) - want[i][j]) < 1e-6);
    }
  }
}

TEST_CASE("rerank matches the dense reference on random instances") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 15; ++trial) {
    const std::size_t n = 10 + static_cast<std::size_t>(trial) * 2;
    const auto d = random_self_matrix(rng, n, 2 + static_cast<std::size_t>(trial % 4));
    const std::size_t nq = 1 + static_cast<std::size_t>(trial) % (n / 2);
    const std::size_t k1 = 2 + static_cast<std::size_t>(trial) % 7;
    const std::size_t k2 = 1 + static_cast<std::size_t>(trial) % k1;
    const double lambda = 0.1 * static_cast<double>(trial % 10);
    const auto got = rerank(d, nq, {k1, k2, lambda});
    const auto want = oracle::rerank_dense(d, nq, k1, k2, lambda);
    double worst = 0;
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t j = 0; j < got.cols; ++j) worst = std::max(worst, std::fabs(got.at(i, j) - want[i][j]));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("lambda one is the bitwise identity on the query-gallery block") {
  std::mt19937_64 rng(4);
  const auto d = random_self_matrix(rng, 12);
  const auto out = rerank(d, 5, {4, 2, 1.0});
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 7; ++j) CHECK(out.at(i, j) == d.at(i, 5 + j));
  }
  CHECK(out.row_ids == std::vector<std::int64_t>(d.row_ids.begin(), d.row_ids.begin() + 5));
  CHECK(out.col_ids == std::vector<std::int64_t>(d.col_ids.begin() + 5, d.col_ids.end()));
}

TEST_CASE("output bounds") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto d = random_self_matrix(rng, 30, 5);
    const double lambda = 0.1 * trial;
    const auto out = rerank(d, 10, {6, 3, lambda});
    for (std::size_t i = 0; i < 10; ++i) {
      for (std::size_t j = 0; j < 20; ++j) {
        const double orig = d.at(i, 10 + j);
        CHECK(out.at(i, j) >= lambda * orig - 1e-6);
        CHECK(out.at(i, j) <= lambda * orig + (1.0 - lambda) + 1e-6);
      }
    }
  }
}

TEST_CASE("duplicated query in the gallery ranks first") {
  std::mt19937_64 rng(17);
  int checked = 0;
  for (int trial = 0; trial < 60 && checked < 10; ++trial) {
    const std::size_t n = 20, nq = 4, q = 2, dup = 11;
    const auto d = with_duplicate(rng, n, q, dup);
    const RerankParams p{6, 3, 0.3};
    if (boundary_splits(d, q, dup, p.k1) || boundary_splits(d, q, dup, p.k1 / 2)) continue;
    ++checked;
    for (double lambda : {0.0, 0.3, 0.9}) {
      const auto out = rerank(d, nq, {p.k1, p.k2, lambda});
      const auto row = out.row(q);
      CHECK(std::fabs(row[dup - nq]) < 1e-7);
      // at lambda = 0 a row sharing the query's averaged vector can tie it
      CHECK(row[dup - nq] <= *std::min_element(row.begin(), row.end()));
    }
  }
  CHECK(checked >= 5);
}

TEST_CASE("identical gallery rows receive equal distances") {
  std::mt19937_64 rng(23);
  int checked = 0;
  for (int trial = 0; trial < 60 && checked < 10; ++trial) {
    const std::size_t n = 24, nq = 6, a = 9, b = 17;
    const auto d = with_duplicate(rng, n, a, b);
    const RerankParams p{5, 3, 0.3};
    if (boundary_splits(d, a, b, p.k1) || boundary_splits(d, a, b, p.k1 / 2)) continue;
    ++checked;
    const auto out = rerank(d, nq, p);
    for (std::size_t i = 0; i < nq; ++i) CHECK(std::fabs(out.at(i, a - nq) - out.at(i, b - nq)) < 1e-7);
  }
  CHECK(checked >= 5);
}

TEST_CASE("rerank_self agrees with rerank and is a self matrix") {
  std::mt19937_64 rng(6);
  const auto d = random_self_matrix(rng, 25, 4);
  const RerankParams p{7, 3, 0.3};
  const auto full = rerank_self(d, p);
  const auto block = rerank(d, 8, p);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 17; ++j) CHECK(std::fabs(full.at(i, 8 + j) - block.at(i, j)) < 1e-7);
  }
  validate_self(full, 1e-6f);
}

TEST_CASE("rerank is independent of the thread count") {
  std::mt19937_64 rng(8);
  const auto d = random_self_matrix(rng, 120, 6);
  set_thread_count(1);
  const auto one = rerank(d, 40, {20, 6, 0.3});
  set_thread_count(3);
  const auto three = rerank(d, 40, {20, 6, 0.3});
  set_thread_count(0);
  CHECK(one == three);
}

TEST_CASE("rerank rejects invalid input") {
  std::mt19937_64 rng(2);
  const auto d = random_self_matrix(rng, 10);
  CHECK_THROWS_AS(rerank(d, 10, {3, 2, 0.3}), std::invalid_argument);
  CHECK_THROWS_AS(rerank(d, 3, {10, 2, 0.3}), std::invalid_argument);
  CHECK_THROWS_AS(rerank(d, 3, {3, 4, 0.3}), std::invalid_argument);
  CHECK_THROWS_AS(rerank(d, 3, {3, 0, 0.3}), std::invalid_argument);
  CHECK_THROWS_AS(rerank(d, 3, {3, 2, 1.5}), std::invalid_argument);
  auto rect = matrix_from({{0, 1, 2}, {1, 0, 2}});
  CHECK_THROWS_AS(rerank(rect, 1, {1, 1, 0.3}), std::invalid_argument);
}
