#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace reid {

enum class Domain { source, target };
enum class Split { train, query, gallery, val };

std::string_view to_string(Domain d);
std::string_view to_string(Split s);
Domain parse_domain(std::string_view text);
Split parse_split(std::string_view text);

/// Per-row metadata of an embedding. `pid == -1` marks an unknown identity and
/// is only legal for target-domain rows.
struct SampleMeta {
  std::int64_t index = 0;
  std::int64_t pid = -1;
  int camid = 0;
  Domain domain = Domain::target;
  Split split = Split::train;
  bool camstyle = false;

  bool operator==(const SampleMeta&) const = default;
};

/// Row-major n x dim feature matrix with one metadata record per row.
///
/// Kept as a plain aggregate so that operations can produce new sets cheaply;
/// call validate() at trust boundaries (file I/O, public operations).
struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<float> features;
  std::vector<SampleMeta> meta;

  std::size_t size() const { return meta.size(); }
  std::span<const float> row(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
  std::span<float> row(std::size_t i) { return {features.data() + i * dim, dim}; }

  bool operator==(const EmbeddingSet&) const = default;
};

/// Throws std::invalid_argument when the set violates its invariants.
void validate(const EmbeddingSet& set);

std::vector<std::int64_t> indices_of(std::span<const SampleMeta> meta);

/// rows x cols distances; row_ids/col_ids are EmbeddingSet index values.
struct DistanceMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;
  std::vector<std::int64_t> row_ids;
  std::vector<std::int64_t> col_ids;

  float at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  float& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  std::span<const float> row(std::size_t i) const {
    return {values.data() + i * cols, cols};
  }
  std::span<float> row(std::size_t i) { return {values.data() + i * cols, cols}; }

  bool is_self() const { return row_ids == col_ids; }
  bool same_layout(const DistanceMatrix& other) const {
    return rows == other.rows && cols == other.cols && row_ids == other.row_ids &&
           col_ids == other.col_ids;
  }

  bool operator==(const DistanceMatrix&) const = default;
};

DistanceMatrix make_distance_matrix(std::vector<std::int64_t> row_ids,
                                    std::vector<std::int64_t> col_ids);

/// Shape, id-list length, finiteness and non-negativity.
void validate(const DistanceMatrix& dist);

/// Additionally requires a self matrix with zero diagonal and symmetry within tol.
void validate_self(const DistanceMatrix& dist, float tol = 1e-5f);

/// Block of `dist` selected by row and column positions.
DistanceMatrix submatrix(const DistanceMatrix& dist, std::span<const std::size_t> rows,
                         std::span<const std::size_t> cols);

// Bundle directory: meta.json, embeddings.bin (f32le, row-major), labels.csv.
void save_bundle(const EmbeddingSet& set, const std::filesystem::path& dir);
EmbeddingSet load_bundle(const std::filesystem::path& dir);

// Distance directory: dist.meta.json, dist.bin, dist.ids.json.
void save_distance(const DistanceMatrix& dist, const std::filesystem::path& dir);
DistanceMatrix load_distance(const std::filesystem::path& dir);

enum class SynthSplitMode {
  query_gallery,  // one query per identity, remaining samples gallery
  train,
  val,
};

struct SynthConfig {
  std::size_t n_ids = 10;
  std::size_t samples_per_id = 4;
  std::size_t dim = 512;
  std::size_t n_cameras = 2;
  double intra_sigma = 0.1;
  double camera_offset = 0.0;
  std::uint64_t seed = 0;
  SynthSplitMode split_mode = SynthSplitMode::query_gallery;
  Domain domain = Domain::target;
};

void validate(const SynthConfig& cfg);

/// Rows are id_center(pid) + camera_bias(camid) + noise, identity-major. Sample j
/// of an identity is seen by camera j mod n_cameras. In query_gallery mode the
/// sample j == pid mod samples_per_id is the query, so query cameras rotate.
EmbeddingSet generate_synthetic(const SynthConfig& cfg);

EmbeddingSet select_split(const EmbeddingSet& set, Split split);
EmbeddingSet select_split(const EmbeddingSet& set, std::string_view split_name);

/// Rows at the given positions, in the given order.
EmbeddingSet select_rows(const EmbeddingSet& set, std::span<const std::size_t> positions);

/// Concatenation of two sets with the same dimension.
EmbeddingSet concat(const EmbeddingSet& first, const EmbeddingSet& second);

}  // namespace reid
