#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "reid/store.hpp"

namespace reid {

/// Cross entropy of softmax(logits) against the smoothed target
/// q_k = 1 - eps + eps / N for the true class and eps / N elsewhere.
double label_smooth_ce(std::span<const double> logits, std::size_t true_class, double epsilon,
                       std::size_t n_classes);

struct TripletPair {
  std::size_t anchor = 0;
  double d_ap = 0.0;  // hardest (largest) positive distance
  double d_an = 0.0;  // hardest (smallest) negative distance
};

/// Batch-hard mining over a self-distance matrix of one mini-batch. Flagged
/// (negatives-only) samples never act as anchors or positives but remain
/// eligible negatives.
std::vector<TripletPair> batch_hard_triplets(const DistanceMatrix& dist, std::span<const int> labels,
                                             const std::vector<bool>& negatives_only);

/// softplus(d_ap - d_an), stable for large arguments of either sign.
double soft_margin_triplet(double d_ap, double d_an);

/// Numerically stable ln(1 + e^x).
double softplus(double x);

struct LrSchedule {
  double base_lr = 0.02;
  std::size_t warmup_epochs = 10;
  std::vector<std::size_t> decay_epochs = {24, 48};
  double decay_factor = 0.1;
  std::size_t total_epochs = 60;
};

void validate(const LrSchedule& s);

/// Epochs are 1-indexed. Linear warmup from 0.1x to 1x of base_lr over the
/// warmup epochs, then a step decay at every listed epoch reached.
double lr_at(std::size_t epoch, const LrSchedule& s = {});

struct BatchPolicy {
  std::size_t p_identities = 4;
  std::size_t k_instances = 4;
  double target_batch_ratio = 0.5;
  double camstyle_ratio = 0.5;
  bool mixed_domains = false;  // draw round(ratio * P) target classes into every batch
};

void validate(const BatchPolicy& pol);

/// Composes one P x K mini-batch of sample index values. `meta.pid` is the
/// class (use pseudo labels for target rows); rows with pid < 0 are never
/// drawn. Deterministic in `seed`.
std::vector<std::int64_t> compose_batch(std::span<const SampleMeta> meta, const BatchPolicy& pol,
                                        std::uint64_t seed);

}  // namespace reid
