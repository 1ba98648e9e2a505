#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "reid/camera.hpp"
#include "reid/metrics.hpp"
#include "reid/parallel.hpp"
#include "test_util.hpp"

using namespace reid;
using reid::testing::make_set;
using reid::testing::matrix_from;

namespace {

EmbeddingSet random_set(std::mt19937_64& rng, std::size_t n, std::size_t dim, int cams) {
  std::normal_distribution<double> normal(0.0, 2.0);
  std::uniform_int_distribution<int> cam(0, cams - 1);
  EmbeddingSet s;
  s.dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < dim; ++k) s.features.push_back(static_cast<float>(normal(rng) + 3.0));
    SampleMeta m;
    m.index = static_cast<std::int64_t>(i);
    m.pid = static_cast<std::int64_t>(i % 7);
    m.camid = cam(rng);
    s.meta.push_back(m);
  }
  return s;
}

SampleMeta labeled(std::int64_t pid, int cam) {
  SampleMeta m;
  m.pid = pid;
  m.camid = cam;
  return m;
}

}  // namespace

TEST_CASE("subtract_camera_mean centres each camera") {
  std::mt19937_64 rng(1);
  auto one_cam = random_set(rng, 20, 6, 1);
  const auto out = subtract_camera_mean(one_cam);
  for (std::size_t k = 0; k < 6; ++k) {
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.row(i)[k];
    CHECK(std::fabs(s / 20.0) < 1e-5);
  }
  CHECK(out.meta == one_cam.meta);
}

TEST_CASE("subtract_camera_mean is idempotent and preserves within-camera distances") {
  std::mt19937_64 rng(2);
  const auto s = random_set(rng, 40, 8, 3);
  const auto once = subtract_camera_mean(s);
  const auto twice = subtract_camera_mean(once);
  for (std::size_t i = 0; i < once.features.size(); ++i) {
    CHECK(std::fabs(once.features[i] - twice.features[i]) < 1e-5);
  }
  const auto before = pairwise_distance(s, s);
  const auto after = pairwise_distance(once, once);
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s.meta[i].camid == s.meta[j].camid) CHECK(std::fabs(before.at(i, j) - after.at(i, j)) < 1e-5);
    }
  }
}

TEST_CASE("constant camera offset is removed") {
  std::mt19937_64 rng(3);
  const auto base = random_set(rng, 10, 5, 1);
  EmbeddingSet both = base;
  const std::vector<float> v{1.5f, -2.0f, 0.25f, 7.0f, -0.5f};
  for (std::size_t i = 0; i < base.size(); ++i) {
    for (std::size_t k = 0; k < 5; ++k) both.features.push_back(base.row(i)[k] + v[k]);
    SampleMeta m = base.meta[i];
    m.index += 100;
    m.camid = 1;
    both.meta.push_back(m);
  }
  const auto out = subtract_camera_mean(both);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t k = 0; k < 5; ++k) CHECK(std::fabs(out.row(i)[k] - out.row(i + 10)[k]) < 1e-5);
  }
}

TEST_CASE("neighbor_smooth examples") {
  std::mt19937_64 rng(4);
  const auto s = random_set(rng, 9, 3, 2);
  const auto same = neighbor_smooth(s, 0);
  CHECK(same == s);

  const auto trio = make_set(2, {{1, 2}, {1, 2}, {1, 2}});
  CHECK(neighbor_smooth(trio, 2) == trio);

  // Nearest neighbours: 0<->1 and 2<->3; point 3 is closer to 2 than to 1.
  const auto four = make_set(2, {{0, 0}, {1, 0}, {5, 0}, {5, 2}});
  const auto out = neighbor_smooth(four, 1);
  const std::vector<std::vector<float>> want{{0.5f, 0}, {0.5f, 0}, {5, 1}, {5, 1}};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(out.row(i)[0] == doctest::Approx(want[i][0]));
    CHECK(out.row(i)[1] == doctest::Approx(want[i][1]));
  }

  CHECK_THROWS_AS(neighbor_smooth(four, 4), std::invalid_argument);
}

TEST_CASE("neighbor_smooth reads only input features") {
  // Point 1 is the nearest neighbour of both 0 and 2. Sequential in-place
  // updates would make row 2 depend on the already-smoothed row 1.
  const auto s = make_set(1, {{0}, {1}, {2.5f}});
  const auto out = neighbor_smooth(s, 1);
  CHECK(out.row(0)[0] == doctest::Approx(0.5));
  CHECK(out.row(1)[0] == doctest::Approx(0.5));
  CHECK(out.row(2)[0] == doctest::Approx(1.75));
}

TEST_CASE("neighbor_smooth is independent of the thread count") {
  std::mt19937_64 rng(5);
  const auto s = random_set(rng, 90, 12, 3);
  set_thread_count(1);
  const auto a = neighbor_smooth(s, 5);
  set_thread_count(4);
  const auto b = neighbor_smooth(s, 5);
  set_thread_count(0);
  CHECK(a == b);
}

TEST_CASE("mean_camera_distance") {
  std::mt19937_64 rng(6);
  const auto m = reid::testing::random_self_matrix(rng, 5);
  const std::vector<DistanceMatrix> single{m};
  CHECK(mean_camera_distance(single) == m);

  auto a = matrix_from({{1, 2}, {3, 4}});
  auto b = matrix_from({{5, 4}, {3, 2}});  // -a + 2c with c = 3
  const std::vector<DistanceMatrix> pair{a, b};
  for (float v : mean_camera_distance(pair).values) CHECK(v == 3.0f);

  const std::vector<DistanceMatrix> three{reid::testing::random_self_matrix(rng, 6),
                                          reid::testing::random_self_matrix(rng, 6),
                                          reid::testing::random_self_matrix(rng, 6)};
  const auto mean = mean_camera_distance(three);
  for (std::size_t e = 0; e < mean.values.size(); ++e) {
    double s = 0;
    for (const auto& t : three) s += t.values[e];
    CHECK(std::fabs(mean.values[e] - s / 3.0) < 1e-6);
  }

  CHECK_THROWS_AS(mean_camera_distance(std::span<const DistanceMatrix>{}), std::invalid_argument);
  const std::vector<DistanceMatrix> mixed{m, a};
  CHECK_THROWS_AS(mean_camera_distance(mixed), std::invalid_argument);
}

TEST_CASE("subtract_camera_distance") {
  std::mt19937_64 rng(7);
  const auto d = reid::testing::random_self_matrix(rng, 6);
  const auto c = reid::testing::random_self_matrix(rng, 6);
  CHECK(subtract_camera_distance(d, c, 0.0) == d);
  for (float v : subtract_camera_distance(d, d, 1.0).values) CHECK(v == 0.0f);

  const auto one = matrix_from({{0.5f}});
  auto cam = matrix_from({{1.0f}});
  CHECK(subtract_camera_distance(one, cam, 1.0).at(0, 0) == 0.0f);

  const auto half = subtract_camera_distance(d, c, 0.1);
  for (std::size_t e = 0; e < d.values.size(); ++e) {
    CHECK(half.values[e] == doctest::Approx(std::max(0.0, d.values[e] - 0.1 * c.values[e])));
  }
  CHECK_THROWS_AS(subtract_camera_distance(d, one, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(subtract_camera_distance(d, c, -1.0), std::invalid_argument);
}

TEST_CASE("build_topology examples") {
  SUBCASE("two identities") {
    const std::vector<SampleMeta> meta{labeled(0, 1), labeled(0, 2), labeled(1, 1), labeled(1, 3)};
    const auto t = build_topology(meta);
    CHECK(t.cameras == 4);
    CHECK(t.at(1, 2) == 0.5);
    CHECK(t.at(2, 1) == 1.0);
    CHECK(t.at(1, 1) == 1.0);
    CHECK(t.at(1, 3) == 0.5);
    CHECK(t.at(2, 3) == 0.0);
    // camera 0 never observed
    for (std::size_t b = 0; b < 4; ++b) CHECK(t.at(0, b) == 0.0);
  }
  SUBCASE("single identity, single camera") {
    const std::vector<SampleMeta> meta{labeled(5, 2), labeled(5, 2)};
    const auto t = build_topology(meta);
    for (std::size_t a = 0; a < t.cameras; ++a) {
      for (std::size_t b = 0; b < t.cameras; ++b) CHECK(t.at(a, b) == (a == 2 && b == 2 ? 1.0 : 0.0));
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(build_topology(std::span<const SampleMeta>{}), std::invalid_argument);
    const std::vector<SampleMeta> bad{labeled(-1, 0)};
    CHECK_THROWS_AS(build_topology(bad), std::invalid_argument);
  }
}

TEST_CASE("build_topology on random metadata") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> pid(0, 9), cam(0, 4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<SampleMeta> meta;
    for (int i = 0; i < 40; ++i) meta.push_back(labeled(pid(rng), cam(rng)));
    const auto t = build_topology(meta);
    for (double p : t.prob) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
    for (const auto& m : meta) CHECK(t.at(static_cast<std::size_t>(m.camid), static_cast<std::size_t>(m.camid)) == 1.0);
    auto shuffled = meta;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(build_topology(shuffled).prob == t.prob);
  }
}

TEST_CASE("apply_topology") {
  const auto d = matrix_from({{1.0f, 2.0f}, {3.0f, 4.0f}});
  CameraTopology topo{2, {1.0, 0.25, 0.5, 1.0}};
  const std::vector<int> rows{0, 1}, cols{1, 0};

  CHECK(apply_topology(d, topo, rows, cols, 0.0) == d);

  CameraTopology ones{2, {1, 1, 1, 1}};
  const auto doubled = apply_topology(d, ones, rows, cols, 1.0);
  for (std::size_t e = 0; e < 4; ++e) CHECK(doubled.values[e] == 2.0f * d.values[e]);

  const auto w = apply_topology(d, topo, rows, cols, -0.4);
  CHECK(std::fabs(w.at(0, 0) - 1.0 * (1 - 0.4 * 0.25)) < 1e-6);
  CHECK(std::fabs(w.at(0, 1) - 2.0 * (1 - 0.4 * 1.0)) < 1e-6);
  CHECK(std::fabs(w.at(1, 0) - 3.0 * (1 - 0.4 * 1.0)) < 1e-6);
  CHECK(std::fabs(w.at(1, 1) - 4.0 * (1 - 0.4 * 0.5)) < 1e-6);

  // factor below zero clamps
  const auto clamped = apply_topology(d, ones, rows, cols, -3.0);
  for (float v : clamped.values) CHECK(v == 0.0f);

  const std::vector<int> bad{0, 2};
  CHECK_THROWS_AS(apply_topology(d, topo, rows, bad, 1.0), std::invalid_argument);
}

TEST_CASE("camera mean subtraction helps on biased synthetic data") {
  SynthConfig cfg;
  cfg.n_ids = 40;
  cfg.samples_per_id = 6;
  cfg.dim = 32;
  cfg.n_cameras = 3;
  cfg.intra_sigma = 0.5;
  cfg.camera_offset = 6.0;
  cfg.seed = 3;
  const auto set = generate_synthetic(cfg);
  auto map_of = [](const EmbeddingSet& s) {
    const auto q = select_split(s, Split::query);
    const auto g = select_split(s, Split::gallery);
    return evaluate(pairwise_distance(q, g), q.meta, g.meta).map;
  };
  CHECK(map_of(subtract_camera_mean(set)) > map_of(set));
}
