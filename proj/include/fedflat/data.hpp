#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedflat/batch.hpp"
#include "fedflat/rng.hpp"
#include "fedflat/tensor.hpp"

namespace fedflat {

/// Labeled samples. inputs is [N, ...sample shape]; labels in [0, num_classes).
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
  [[nodiscard]] Shape sample_shape() const;
  [[nodiscard]] std::size_t sample_size() const;
  [[nodiscard]] std::span<const double> sample(std::size_t i) const;
};

/// Checks the Dataset invariants, throwing ConfigError on violation.
void validate(const Dataset& ds);

Tensor one_hot(std::span<const int> labels, std::size_t num_classes);
Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices);
/// Concatenates datasets with identical sample shape and class count.
Dataset concat(std::span<const Dataset> parts);

struct ClientShard {
  std::size_t client_id = 0;
  std::vector<std::size_t> indices;
  std::vector<std::size_t> class_hist;

  [[nodiscard]] std::size_t size() const noexcept { return indices.size(); }
};

struct PartitionSpec {
  std::size_t num_clients = 1;
  double alpha = 0.0;  // 0 selects one class per client
  std::uint64_t seed = 0;
};

/// Label-skewed federated split. For alpha > 0 each client draws class
/// proportions from a symmetric Dirichlet(alpha) and receives floor(N/K)
/// samples drawn without replacement; exhausted classes drop out and the
/// proportions renormalize. Leftover samples go round-robin. For alpha = 0
/// each client holds a single class (classes assigned round-robin, each
/// class split evenly among its clients), which needs K >= num_classes.
std::vector<ClientShard> dirichlet_partition(const Dataset& ds, const PartitionSpec& spec);
std::vector<ClientShard> dirichlet_partition(std::span<const int> labels, std::size_t num_classes,
                                             const PartitionSpec& spec);

/// One draw from a symmetric Dirichlet(alpha) over num_classes categories.
std::vector<double> dirichlet_proportions(std::size_t num_classes, double alpha, Rng& rng);

/// Mixup with partner[i] as the mixing partner of sample i and weight
/// lambdas[i] on sample i.
Batch mixup_batch(const Batch& batch, std::span<const std::size_t> partner,
                  std::span<const double> lambdas);
/// Random in-batch permutation partners, lambda ~ Beta(alpha, alpha).
Batch mixup_batch(const Batch& batch, double alpha, Rng& rng);

/// Zeroes the size x size square whose top-left corner is
/// (center_y - size/2, center_x - size/2), clipped at the borders.
/// img is [C,H,W].
Tensor cutout_at(const Tensor& img, std::size_t size, std::size_t center_y, std::size_t center_x);
/// Center drawn uniformly over all pixels.
Tensor cutout(const Tensor& img, std::size_t size, Rng& rng);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

ChannelStats channel_stats(const Dataset& ds);

/// Zero-pad by `pad`, take the H x W window at (offset_y, offset_x), optional
/// horizontal flip, then per-channel normalization (skipped when stats are
/// empty).
Tensor augment_with(const Tensor& img, std::size_t pad, std::size_t offset_y,
                    std::size_t offset_x, bool flip, const ChannelStats& stats);
/// Pad 4, uniform random crop, flip with probability 0.5, normalize.
Tensor standard_augment(const Tensor& img, const ChannelStats& stats, Rng& rng);
/// Normalization only (evaluation-time transform).
Tensor normalize(const Tensor& img, const ChannelStats& stats);

enum class CifarVariant { cifar10, cifar100 };

/// CIFAR binary records: label byte(s) then 3072 CHW pixel bytes. CIFAR-100
/// records carry (coarse, fine) labels and the fine label is used. Pixels
/// scale to [0,1].
Dataset load_cifar_binary(const std::filesystem::path& path, CifarVariant variant);

struct SynthSpec {
  std::size_t num_classes = 10;
  std::size_t per_class = 100;
  std::size_t input_dim = 20;
  std::uint64_t seed = 0;
  /// Standard deviation of each cluster around its mean. Means are drawn
  /// from N(0, 1) per coordinate.
  double spread = 1.0;
};

/// Gaussian class clusters. Cluster means depend only on spec.seed; the
/// samples depend on (spec.seed, stream), so stream 0 and stream 1 give a
/// train/test pair from the same distribution.
Dataset synth_classification(const SynthSpec& spec, std::uint64_t stream = 0);

/// Applies per-sample image transforms to a batch of [B,C,H,W] inputs.
Batch map_images(const Batch& batch, auto&& transform) {
  Batch out = batch;
  const std::size_t per = batch.inputs.size() / batch.size();
  Shape sample(batch.inputs.shape().begin() + 1, batch.inputs.shape().end());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto src = batch.inputs.data().subspan(i * per, per);
    Tensor img(sample, std::vector<double>(src.begin(), src.end()));
    Tensor res = transform(img);
    std::copy(res.data().begin(), res.data().end(), out.inputs.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

}  // namespace fedflat
