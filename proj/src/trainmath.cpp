#include "reid/trainmath.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>

#include "reid/random.hpp"

namespace reid {

double label_smooth_ce(std::span<const double> logits, std::size_t true_class, double epsilon,
                       std::size_t n_classes) {
  if (n_classes == 0 || logits.size() != n_classes) {
    throw std::invalid_argument("label_smooth_ce: logits length must equal n_classes");
  }
  if (true_class >= n_classes) throw std::invalid_argument("label_smooth_ce: invalid true class");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("label_smooth_ce: epsilon must lie in [0, 1)");

  const double top = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double z : logits) denom += std::exp(z - top);
  const double log_denom = std::log(denom);

  const double off = epsilon / static_cast<double>(n_classes);
  double loss = 0.0;
  for (std::size_t k = 0; k < n_classes; ++k) {
    const double q = k == true_class ? 1.0 - epsilon + off : off;
    if (q == 0.0) continue;
    const double log_p = (logits[k] - top) - log_denom;
    loss -= q * log_p;
  }
  return std::max(0.0, loss);
}

std::vector<TripletPair> batch_hard_triplets(const DistanceMatrix& dist, std::span<const int> labels,
                                             const std::vector<bool>& negatives_only) {
  const std::size_t n = labels.size();
  if (dist.rows != n || dist.cols != n || !dist.is_self() || negatives_only.size() != n) {
    throw std::invalid_argument("batch_hard_triplets: needs a self matrix matching the labels");
  }
  std::vector<TripletPair> out;
  for (std::size_t a = 0; a < n; ++a) {
    if (negatives_only[a]) continue;
    double d_ap = -1.0;
    double d_an = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double d = dist.at(a, j);
      if (labels[j] == labels[a]) {
        if (!negatives_only[j]) d_ap = std::max(d_ap, d);
      } else {
        d_an = std::min(d_an, d);
      }
    }
    if (d_ap < 0.0) {
      throw std::invalid_argument("batch_hard_triplets: class " + std::to_string(labels[a]) +
                                  " has no positive for anchor " + std::to_string(a));
    }
    if (!std::isfinite(d_an)) {
      throw std::invalid_argument("batch_hard_triplets: no negative for anchor " + std::to_string(a));
    }
    out.push_back({a, d_ap, d_an});
  }
  return out;
}

double softplus(double x) {
  if (x > 20.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double soft_margin_triplet(double d_ap, double d_an) {
  if (!std::isfinite(d_ap) || !std::isfinite(d_an)) {
    throw std::invalid_argument("soft_margin_triplet: non-finite input");
  }
  return softplus(d_ap - d_an);
}

void validate(const LrSchedule& s) {
  if (!(s.base_lr > 0.0)) throw std::invalid_argument("schedule: base_lr must be > 0");
  if (s.total_epochs < 1) throw std::invalid_argument("schedule: total_epochs must be >= 1");
  for (std::size_t i = 0; i < s.decay_epochs.size(); ++i) {
    if (s.decay_epochs[i] >= s.total_epochs || (i > 0 && s.decay_epochs[i] <= s.decay_epochs[i - 1])) {
      throw std::invalid_argument("schedule: decay epochs must be strictly increasing and < total_epochs");
    }
  }
}

double lr_at(std::size_t epoch, const LrSchedule& s) {
  validate(s);
  if (epoch < 1 || epoch > s.total_epochs) {
    throw std::out_of_range("schedule: epoch " + std::to_string(epoch) + " outside [1, " +
                            std::to_string(s.total_epochs) + "]");
  }
  if (epoch <= s.warmup_epochs) {
    if (s.warmup_epochs == 1) return s.base_lr;
    const double t = static_cast<double>(epoch - 1) / static_cast<double>(s.warmup_epochs - 1);
    return s.base_lr * (0.1 + 0.9 * t);
  }
  const auto passed = std::count_if(s.decay_epochs.begin(), s.decay_epochs.end(),
                                    [&](std::size_t d) { return d <= epoch; });
  return s.base_lr * std::pow(s.decay_factor, static_cast<double>(passed));
}

void validate(const BatchPolicy& pol) {
  if (pol.p_identities < 2 || pol.k_instances < 2) {
    throw std::invalid_argument("batch policy: P and K must both be >= 2");
  }
  if (!(pol.target_batch_ratio >= 0.0 && pol.target_batch_ratio <= 1.0) ||
      !(pol.camstyle_ratio >= 0.0 && pol.camstyle_ratio <= 1.0)) {
    throw std::invalid_argument("batch policy: ratios must lie in [0, 1]");
  }
}

namespace {

struct ClassRows {
  std::vector<std::int64_t> original;
  std::vector<std::int64_t> camstyle;
  std::size_t size() const { return original.size() + camstyle.size(); }
};

// First `count` entries of a seeded Fisher-Yates shuffle.
template <typename T>
std::vector<T> draw(std::vector<T> pool, std::size_t count, Xoshiro256& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace

std::vector<std::int64_t> compose_batch(std::span<const SampleMeta> meta, const BatchPolicy& pol,
                                        std::uint64_t seed) {
  validate(pol);
  const std::size_t P = pol.p_identities;
  const std::size_t K = pol.k_instances;

  std::map<std::int64_t, ClassRows> by_domain[2];
  for (const auto& m : meta) {
    if (m.pid < 0) continue;
    auto& rows = by_domain[m.domain == Domain::target ? 1 : 0][m.pid];
    (m.camstyle ? rows.camstyle : rows.original).push_back(m.index);
  }
  auto eligible = [&](int d) {
    std::vector<const ClassRows*> out;
    for (const auto& [pid, rows] : by_domain[d]) {
      if (rows.size() >= K) out.push_back(&rows);
    }
    return out;
  };

  Xoshiro256 rng(seed);
  std::vector<const ClassRows*> chosen;
  auto take = [&](int d, std::size_t count) {
    auto pool = eligible(d);
    if (pool.size() < count) {
      throw std::invalid_argument(std::string("compose_batch: ") + (d == 1 ? "target" : "source") +
                                  " domain has " + std::to_string(pool.size()) + " classes with >= " +
                                  std::to_string(K) + " samples, need " + std::to_string(count));
    }
    for (const auto* c : draw(std::move(pool), count, rng)) chosen.push_back(c);
  };
  if (pol.mixed_domains) {
    const auto n_target = static_cast<std::size_t>(std::llround(pol.target_batch_ratio * static_cast<double>(P)));
    take(1, n_target);
    take(0, P - n_target);
  } else {
    take(rng.uniform01() < pol.target_batch_ratio ? 1 : 0, P);
  }

  // CamStyle rows per class: start at the minimum forced by the originals
  // available, then hand out the remainder round-robin up to each class's cap.
  std::vector<std::size_t> lo(P), hi(P), cs(P);
  std::size_t lo_sum = 0, hi_sum = 0;
  for (std::size_t c = 0; c < P; ++c) {
    lo[c] = K > chosen[c]->original.size() ? K - chosen[c]->original.size() : 0;
    hi[c] = std::min(K, chosen[c]->camstyle.size());
    lo_sum += lo[c];
    hi_sum += hi[c];
  }
  const auto wanted = static_cast<std::size_t>(std::llround(pol.camstyle_ratio * static_cast<double>(P * K)));
  std::size_t remaining = std::clamp(wanted, lo_sum, hi_sum) - lo_sum;
  cs = lo;
  while (remaining > 0) {
    for (std::size_t c = 0; c < P && remaining > 0; ++c) {
      if (cs[c] < hi[c]) {
        ++cs[c];
        --remaining;
      }
    }
  }

  std::vector<std::int64_t> batch;
  batch.reserve(P * K);
  for (std::size_t c = 0; c < P; ++c) {
    for (auto idx : draw(chosen[c]->original, K - cs[c], rng)) batch.push_back(idx);
    for (auto idx : draw(chosen[c]->camstyle, cs[c], rng)) batch.push_back(idx);
  }
  return batch;
}

}  // namespace reid
