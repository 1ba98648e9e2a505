#include "reid/pseudo.hpp"

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

namespace reid {

std::vector<int> dbscan(const DistanceMatrix& dist, const DbscanParams& params) {
  if (dist.rows != dist.cols || !dist.is_self() || dist.values.size() != dist.rows * dist.cols) {
    throw std::invalid_argument("dbscan needs a self-distance matrix");
  }
  if (!(params.eps > 0.0)) throw std::invalid_argument("dbscan: eps must be > 0");
  if (params.min_samples < 1) throw std::invalid_argument("dbscan: min_samples must be >= 1");

  const std::size_t n = dist.rows;
  std::vector<std::vector<std::size_t>> neighbors(n);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto row = dist.row(i);
    auto& nb = neighbors[i];
    for (std::size_t j = 0; j < n; ++j) {
      if (row[j] <= params.eps) nb.push_back(j);
    }
  }
  std::vector<char> core(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    // the diagonal counts as the point itself even if the matrix carries noise there
    const bool self_listed = std::binary_search(neighbors[i].begin(), neighbors[i].end(), i);
    const std::size_t count = neighbors[i].size() + (self_listed ? 0 : 1);
    core[i] = count >= params.min_samples;
  }

  std::vector<int> labels(n, kOutlier);
  int next_cluster = 0;
  std::deque<std::size_t> frontier;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (labels[seed] != kOutlier || !core[seed]) continue;
    const int cluster = next_cluster++;
    labels[seed] = cluster;
    frontier.push_back(seed);
    while (!frontier.empty()) {
      const std::size_t p = frontier.front();
      frontier.pop_front();
      for (std::size_t q : neighbors[p]) {
        if (labels[q] != kOutlier) continue;
        labels[q] = cluster;
        if (core[q]) frontier.push_back(q);
      }
    }
  }
  return labels;
}

void validate(const PseudoLabeling& labeling) {
  if (labeling.n_classes < 0 ||
      labeling.negatives_only.size() != static_cast<std::size_t>(labeling.n_classes)) {
    throw std::logic_error("pseudo labeling: flag list does not match class count");
  }
  std::vector<std::size_t> sizes(static_cast<std::size_t>(labeling.n_classes), 0);
  for (int c : labeling.assignment) {
    if (c == kNoClass) continue;
    if (c < 0 || c >= labeling.n_classes) throw std::logic_error("pseudo labeling: class id out of range");
    ++sizes[static_cast<std::size_t>(c)];
  }
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    if (sizes[c] == 0) throw std::logic_error("pseudo labeling: empty class " + std::to_string(c));
    if (labeling.negatives_only[c] && sizes[c] != 1) {
      throw std::logic_error("pseudo labeling: negatives-only class with more than one sample");
    }
  }
}

PseudoLabeling select_top_classes(std::span<const int> labels, std::size_t n_keep) {
  if (n_keep < 1) throw std::invalid_argument("select_top_classes: n_keep must be >= 1");
  std::map<int, std::size_t> sizes;
  for (int l : labels) {
    if (l != kOutlier) ++sizes[l];
  }
  std::vector<std::pair<int, std::size_t>> ranked(sizes.begin(), sizes.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > n_keep) ranked.resize(n_keep);

  std::map<int, int> renumber;
  for (std::size_t c = 0; c < ranked.size(); ++c) renumber[ranked[c].first] = static_cast<int>(c);

  PseudoLabeling out;
  out.n_classes = static_cast<int>(ranked.size());
  out.negatives_only.assign(ranked.size(), false);
  out.assignment.reserve(labels.size());
  for (int l : labels) {
    const auto it = renumber.find(l);
    out.assignment.push_back(it == renumber.end() ? kNoClass : it->second);
  }
  return out;
}

PseudoLabeling add_singletons(const PseudoLabeling& base, std::span<const int> labels,
                              const DistanceMatrix& dist, std::size_t m, SingletonSource source) {
  const std::size_t n = labels.size();
  if (base.assignment.size() != n) {
    throw std::invalid_argument("add_singletons: labeling and labels differ in length");
  }
  if (dist.rows != n || dist.cols != n || dist.values.size() != n * n) {
    throw std::invalid_argument("add_singletons: distance matrix shape mismatch");
  }
  PseudoLabeling out = base;
  if (m == 0) return out;

  std::vector<std::size_t> kept;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    if (base.assignment[i] != kNoClass) {
      kept.push_back(i);
    } else if (labels[i] == kOutlier || source == SingletonSource::outliers_and_discarded) {
      candidates.push_back(i);
    }
  }

  std::vector<double> isolation(n, std::numeric_limits<double>::infinity());
  for (std::size_t c : candidates) {
    for (std::size_t k : kept) isolation[c] = std::min(isolation[c], static_cast<double>(dist.at(c, k)));
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return isolation[a] > isolation[b]; });
  if (candidates.size() > m) candidates.resize(m);

  for (std::size_t c : candidates) {
    out.assignment[c] = out.n_classes++;
    out.negatives_only.push_back(true);
  }
  return out;
}

}  // namespace reid
