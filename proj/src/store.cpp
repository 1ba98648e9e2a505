#include "reid/store.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "reid/random.hpp"

namespace reid {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
    case Split::val: return "val";
  }
  return "train";
}

Domain parse_domain(std::string_view text) {
  if (text == "source") return Domain::source;
  if (text == "target") return Domain::target;
  throw std::invalid_argument("unknown domain '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "query") return Split::query;
  if (text == "gallery") return Split::gallery;
  if (text == "val") return Split::val;
  throw std::invalid_argument("unknown split '" + std::string(text) + "'");
}

void validate(const EmbeddingSet& set) {
  if (set.dim < 1) throw std::invalid_argument("inconsistent bundle: dim must be >= 1");
  if (set.features.size() != set.meta.size() * set.dim) {
    throw std::invalid_argument("inconsistent bundle: " + std::to_string(set.meta.size()) +
                                " meta rows but " + std::to_string(set.features.size()) +
                                " feature values for dim " + std::to_string(set.dim));
  }
  std::unordered_set<std::int64_t> seen;
  seen.reserve(set.meta.size());
  for (const auto& m : set.meta) {
    if (m.camid < 0) throw std::invalid_argument("invalid camera id at index " + std::to_string(m.index));
    if (m.pid < -1 || (m.pid == -1 && m.domain != Domain::target)) {
      throw std::invalid_argument("invalid pid at index " + std::to_string(m.index));
    }
    if (!seen.insert(m.index).second) {
      throw std::invalid_argument("duplicate index " + std::to_string(m.index));
    }
  }
}

std::vector<std::int64_t> indices_of(std::span<const SampleMeta> meta) {
  std::vector<std::int64_t> out;
  out.reserve(meta.size());
  for (const auto& m : meta) out.push_back(m.index);
  return out;
}

DistanceMatrix make_distance_matrix(std::vector<std::int64_t> row_ids,
                                    std::vector<std::int64_t> col_ids) {
  DistanceMatrix d;
  d.rows = row_ids.size();
  d.cols = col_ids.size();
  d.values.assign(d.rows * d.cols, 0.0f);
  d.row_ids = std::move(row_ids);
  d.col_ids = std::move(col_ids);
  return d;
}

void validate(const DistanceMatrix& dist) {
  if (dist.row_ids.size() != dist.rows || dist.col_ids.size() != dist.cols ||
      dist.values.size() != dist.rows * dist.cols) {
    throw std::invalid_argument("distance matrix shape does not match its id lists");
  }
  for (float v : dist.values) {
    if (!std::isfinite(v) || v < 0.0f) {
      throw std::invalid_argument("distance matrix has a negative or non-finite entry");
    }
  }
}

void validate_self(const DistanceMatrix& dist, float tol) {
  validate(dist);
  if (!dist.is_self()) throw std::invalid_argument("not a self-distance matrix");
  for (std::size_t i = 0; i < dist.rows; ++i) {
    if (dist.at(i, i) != 0.0f) throw std::invalid_argument("self-distance diagonal is not zero");
    for (std::size_t j = i + 1; j < dist.cols; ++j) {
      if (std::fabs(dist.at(i, j) - dist.at(j, i)) > tol) {
        throw std::invalid_argument("self-distance matrix is not symmetric");
      }
    }
  }
}

DistanceMatrix submatrix(const DistanceMatrix& dist, std::span<const std::size_t> rows,
                         std::span<const std::size_t> cols) {
  std::vector<std::int64_t> rids, cids;
  for (auto r : rows) rids.push_back(dist.row_ids.at(r));
  for (auto c : cols) cids.push_back(dist.col_ids.at(c));
  DistanceMatrix out = make_distance_matrix(std::move(rids), std::move(cids));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out.at(i, j) = dist.at(rows[i], cols[j]);
  }
  return out;
}

namespace {

void write_f32le(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t w = std::bit_cast<std::uint32_t>(values[i]);
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
    words[i] = w;
  }
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<float> read_f32le(const fs::path& path, std::size_t expected_count) {
  if (!fs::exists(path)) throw std::runtime_error("missing file " + path.string());
  const auto bytes = fs::file_size(path);
  if (bytes != expected_count * sizeof(float)) {
    throw std::runtime_error("byte-length mismatch in " + path.string() + ": expected " +
                             std::to_string(expected_count * sizeof(float)) + ", found " +
                             std::to_string(bytes));
  }
  std::ifstream in(path, std::ios::binary);
  std::vector<std::uint32_t> words(expected_count);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  if (!in && expected_count > 0) throw std::runtime_error("read failed: " + path.string());
  std::vector<float> values(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    std::uint32_t w = words[i];
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
    values[i] = std::bit_cast<float>(w);
  }
  return values;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void require_dtype(const json& meta, const fs::path& path) {
  if (!meta.contains("dtype") || meta["dtype"] != "f32le") {
    throw std::runtime_error("unknown dtype in " + path.string());
  }
}

template <typename Int>
Int parse_int(std::string_view field, std::size_t line) {
  Int value{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw std::runtime_error("malformed CSV row at line " + std::to_string(line));
  }
  return value;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

constexpr std::string_view kLabelsHeader = "index,pid,camid,domain,split,camstyle";

}  // namespace

void save_bundle(const EmbeddingSet& set, const fs::path& dir) {
  validate(set);
  fs::create_directories(dir);

  ordered_json meta;
  meta["n"] = set.size();
  meta["dim"] = set.dim;
  meta["dtype"] = "f32le";
  meta["layout"] = "row-major";
  write_text(dir / "meta.json", meta.dump() + "\n");

  write_f32le(dir / "embeddings.bin", set.features);

  std::ostringstream csv;
  csv << kLabelsHeader << '\n';
  for (const auto& m : set.meta) {
    csv << m.index << ',' << m.pid << ',' << m.camid << ',' << to_string(m.domain) << ','
        << to_string(m.split) << ',' << (m.camstyle ? 1 : 0) << '\n';
  }
  write_text(dir / "labels.csv", csv.str());
}

EmbeddingSet load_bundle(const fs::path& dir) {
  const json meta = read_json(dir / "meta.json");
  require_dtype(meta, dir / "meta.json");
  if (meta.value("layout", "row-major") != "row-major") {
    throw std::runtime_error("unsupported layout in " + (dir / "meta.json").string());
  }
  const auto n = meta.at("n").get<std::size_t>();
  const auto dim = meta.at("dim").get<std::size_t>();

  EmbeddingSet set;
  set.dim = dim;
  set.features = read_f32le(dir / "embeddings.bin", n * dim);

  std::ifstream in(dir / "labels.csv");
  if (!in) throw std::runtime_error("missing file " + (dir / "labels.csv").string());
  std::string line;
  if (!std::getline(in, line) || line != kLabelsHeader) {
    throw std::runtime_error("malformed CSV header in " + (dir / "labels.csv").string());
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 6) throw std::runtime_error("malformed CSV row at line " + std::to_string(line_no));
    SampleMeta m;
    m.index = parse_int<std::int64_t>(f[0], line_no);
    m.pid = parse_int<std::int64_t>(f[1], line_no);
    m.camid = parse_int<int>(f[2], line_no);
    try {
      m.domain = parse_domain(f[3]);
      m.split = parse_split(f[4]);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("malformed CSV row at line " + std::to_string(line_no));
    }
    if (f[5] != "0" && f[5] != "1") {
      throw std::runtime_error("malformed CSV row at line " + std::to_string(line_no));
    }
    m.camstyle = f[5] == "1";
    set.meta.push_back(m);
  }
  if (set.meta.size() != n) {
    throw std::runtime_error("inconsistent bundle: meta.json n=" + std::to_string(n) +
                             " but labels.csv has " + std::to_string(set.meta.size()) + " rows");
  }
  validate(set);
  return set;
}

void save_distance(const DistanceMatrix& dist, const fs::path& dir) {
  validate(dist);
  fs::create_directories(dir);
  ordered_json meta;
  meta["rows"] = dist.rows;
  meta["cols"] = dist.cols;
  meta["dtype"] = "f32le";
  write_text(dir / "dist.meta.json", meta.dump() + "\n");
  write_f32le(dir / "dist.bin", dist.values);
  ordered_json ids;
  ids["row_ids"] = dist.row_ids;
  ids["col_ids"] = dist.col_ids;
  write_text(dir / "dist.ids.json", ids.dump() + "\n");
}

DistanceMatrix load_distance(const fs::path& dir) {
  const json meta = read_json(dir / "dist.meta.json");
  require_dtype(meta, dir / "dist.meta.json");
  const json ids = read_json(dir / "dist.ids.json");
  DistanceMatrix d;
  d.rows = meta.at("rows").get<std::size_t>();
  d.cols = meta.at("cols").get<std::size_t>();
  d.row_ids = ids.at("row_ids").get<std::vector<std::int64_t>>();
  d.col_ids = ids.at("col_ids").get<std::vector<std::int64_t>>();
  if (d.row_ids.size() != d.rows || d.col_ids.size() != d.cols) {
    throw std::runtime_error("dist.ids.json does not match dist.meta.json in " + dir.string());
  }
  d.values = read_f32le(dir / "dist.bin", d.rows * d.cols);
  validate(d);
  return d;
}

void validate(const SynthConfig& cfg) {
  if (cfg.n_ids < 1 || cfg.samples_per_id < 1 || cfg.dim < 1 || cfg.n_cameras < 1) {
    throw std::invalid_argument("synthetic config: counts must be >= 1");
  }
  if (!(cfg.intra_sigma >= 0.0) || !(cfg.camera_offset >= 0.0)) {
    throw std::invalid_argument("synthetic config: scales must be >= 0");
  }
}

EmbeddingSet generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  GaussianSource gauss(cfg.seed);
  const std::size_t dim = cfg.dim;

  // Draw order is part of the fixture contract: centers, camera biases, noise.
  std::vector<double> centers(cfg.n_ids * dim);
  for (auto& c : centers) c = gauss.next();

  std::vector<double> biases(cfg.n_cameras * dim);
  for (std::size_t c = 0; c < cfg.n_cameras; ++c) {
    double norm2 = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double v = gauss.next();
      biases[c * dim + k] = v;
      norm2 += v * v;
    }
    const double scale = norm2 > 0.0 ? cfg.camera_offset / std::sqrt(norm2) : 0.0;
    for (std::size_t k = 0; k < dim; ++k) biases[c * dim + k] *= scale;
  }

  EmbeddingSet set;
  set.dim = dim;
  const std::size_t n = cfg.n_ids * cfg.samples_per_id;
  set.features.resize(n * dim);
  set.meta.reserve(n);
  std::size_t r = 0;
  for (std::size_t pid = 0; pid < cfg.n_ids; ++pid) {
    for (std::size_t j = 0; j < cfg.samples_per_id; ++j, ++r) {
      const std::size_t cam = j % cfg.n_cameras;
      auto out = set.row(r);
      for (std::size_t k = 0; k < dim; ++k) {
        const double noise = cfg.intra_sigma * gauss.next();
        out[k] = static_cast<float>(centers[pid * dim + k] + biases[cam * dim + k] + noise);
      }
      SampleMeta m;
      m.index = static_cast<std::int64_t>(r);
      m.pid = static_cast<std::int64_t>(pid);
      m.camid = static_cast<int>(cam);
      m.domain = cfg.domain;
      switch (cfg.split_mode) {
        case SynthSplitMode::query_gallery:
          m.split = (j == pid % cfg.samples_per_id) ? Split::query : Split::gallery;
          break;
        case SynthSplitMode::train: m.split = Split::train; break;
        case SynthSplitMode::val: m.split = Split::val; break;
      }
      set.meta.push_back(m);
    }
  }
  return set;
}

EmbeddingSet select_rows(const EmbeddingSet& set, std::span<const std::size_t> positions) {
  EmbeddingSet out;
  out.dim = set.dim;
  out.features.reserve(positions.size() * set.dim);
  out.meta.reserve(positions.size());
  for (auto p : positions) {
    const auto r = set.row(p);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.meta.push_back(set.meta.at(p));
  }
  return out;
}

EmbeddingSet select_split(const EmbeddingSet& set, Split split) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.meta[i].split == split) keep.push_back(i);
  }
  return select_rows(set, keep);
}

EmbeddingSet select_split(const EmbeddingSet& set, std::string_view split_name) {
  return select_split(set, parse_split(split_name));
}

EmbeddingSet concat(const EmbeddingSet& first, const EmbeddingSet& second) {
  if (first.dim != second.dim) throw std::invalid_argument("dimension mismatch in concat");
  EmbeddingSet out = first;
  out.features.insert(out.features.end(), second.features.begin(), second.features.end());
  out.meta.insert(out.meta.end(), second.meta.begin(), second.meta.end());
  return out;
}

}  // namespace reid
