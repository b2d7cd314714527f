#include "fedflat/data.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "fedflat/errors.hpp"

namespace fedflat {

Shape Dataset::sample_shape() const {
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

std::size_t Dataset::sample_size() const { return size() == 0 ? 0 : inputs.size() / size(); }

std::span<const double> Dataset::sample(std::size_t i) const {
  const auto n = sample_size();
  return inputs.data().subspan(i * n, n);
}

void validate(const Dataset& ds) {
  if (ds.size() == 0) throw ConfigError("dataset is empty");
  if (ds.inputs.rank() < 2 || ds.inputs.dim(0) != ds.size()) {
    throw ConfigError("dataset: inputs " + shape_string(ds.inputs.shape()) + " do not match " +
                      std::to_string(ds.size()) + " labels");
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] < 0 || static_cast<std::size_t>(ds.labels[i]) >= ds.num_classes) {
      throw ConfigError("dataset: label " + std::to_string(ds.labels[i]) + " at index " +
                        std::to_string(i) + " outside [0, " + std::to_string(ds.num_classes) + ")");
    }
  }
}

Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
  Tensor t({labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    t[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return t;
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("make_batch: no indices");
  const std::size_t per = ds.sample_size();
  Shape shape = ds.sample_shape();
  shape.insert(shape.begin(), indices.size());
  std::vector<double> data(indices.size() * per);
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ds.size()) throw UsageError("make_batch: index out of range");
    auto src = ds.sample(indices[i]);
    std::copy(src.begin(), src.end(), data.begin() + static_cast<std::ptrdiff_t>(i * per));
    labels[i] = ds.labels[indices[i]];
  }
  return Batch{Tensor(std::move(shape), std::move(data)), one_hot(labels, ds.num_classes)};
}

Dataset concat(std::span<const Dataset> parts) {
  if (parts.empty()) throw UsageError("concat: no datasets");
  Dataset out;
  out.num_classes = parts.front().num_classes;
  const Shape sample = parts.front().sample_shape();
  std::vector<double> data;
  for (const auto& p : parts) {
    if (p.sample_shape() != sample || p.num_classes != out.num_classes) {
      throw ConfigError("concat: datasets differ in sample shape or class count");
    }
    data.insert(data.end(), p.inputs.data().begin(), p.inputs.data().end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  Shape shape = sample;
  shape.insert(shape.begin(), out.labels.size());
  out.inputs = Tensor(std::move(shape), std::move(data));
  return out;
}

std::vector<double> dirichlet_proportions(std::size_t num_classes, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("dirichlet: alpha must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(num_classes);
  double total = 0.0;
  for (auto& v : p) total += (v = gamma(rng));
  if (total > 0.0) {
    for (auto& v : p) v /= total;
  } else {
    // Every gamma draw underflowed (tiny alpha): the limit is a single class.
    std::fill(p.begin(), p.end(), 0.0);
    p[std::uniform_int_distribution<std::size_t>(0, num_classes - 1)(rng)] = 1.0;
  }
  return p;
}

namespace {

ClientShard make_shard(std::size_t id, std::size_t num_classes) {
  return ClientShard{.client_id = id, .indices = {}, .class_hist = std::vector<std::size_t>(num_classes, 0)};
}

std::vector<ClientShard> single_class_partition(std::vector<std::vector<std::size_t>>& pools,
                                                std::size_t num_clients) {
  const std::size_t num_classes = pools.size();
  std::vector<ClientShard> shards;
  for (std::size_t k = 0; k < num_clients; ++k) shards.push_back(make_shard(k, num_classes));
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> owners;
    for (std::size_t k = c; k < num_clients; k += num_classes) owners.push_back(k);
    const auto& pool = pools[c];
    const std::size_t base = pool.size() / owners.size(), extra = pool.size() % owners.size();
    std::size_t pos = 0;
    for (std::size_t j = 0; j < owners.size(); ++j) {
      const std::size_t take = base + (j < extra ? 1 : 0);
      auto& shard = shards[owners[j]];
      shard.indices.insert(shard.indices.end(), pool.begin() + static_cast<std::ptrdiff_t>(pos),
                           pool.begin() + static_cast<std::ptrdiff_t>(pos + take));
      shard.class_hist[c] += take;
      pos += take;
    }
  }
  return shards;
}

}  // namespace

std::vector<ClientShard> dirichlet_partition(std::span<const int> labels, std::size_t num_classes,
                                             const PartitionSpec& spec) {
  const std::size_t n = labels.size();
  if (spec.num_clients == 0) throw ConfigError("partition: num_clients must be >= 1");
  if (spec.num_clients > n) {
    throw ConfigError("partition: " + std::to_string(spec.num_clients) + " clients exceed " +
                      std::to_string(n) + " samples");
  }
  if (spec.alpha < 0.0 || !std::isfinite(spec.alpha)) {
    throw ConfigError("partition: alpha must be finite and >= 0");
  }
  Rng rng = make_rng(spec.seed, {key(Stream::partition)});

  std::vector<std::vector<std::size_t>> pools(num_classes);
  for (std::size_t i = 0; i < n; ++i) pools.at(static_cast<std::size_t>(labels[i])).push_back(i);
  for (auto& pool : pools) std::shuffle(pool.begin(), pool.end(), rng);

  if (spec.alpha == 0.0) {
    std::size_t present = 0;
    for (const auto& pool : pools) present += pool.empty() ? 0 : 1;
    if (present != num_classes || spec.num_clients < num_classes) {
      throw ConfigError("partition: alpha = 0 needs num_clients >= num_classes (" +
                        std::to_string(spec.num_clients) + " < " + std::to_string(num_classes) +
                        ") and every class present");
    }
    return single_class_partition(pools, spec.num_clients);
  }

  std::vector<ClientShard> shards;
  const std::size_t per_client = n / spec.num_clients;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t k = 0; k < spec.num_clients; ++k) {
    ClientShard shard = make_shard(k, num_classes);
    const std::vector<double> p = dirichlet_proportions(num_classes, spec.alpha, rng);
    for (std::size_t j = 0; j < per_client; ++j) {
      double mass = 0.0;
      std::size_t available = 0;
      for (std::size_t c = 0; c < num_classes; ++c) {
        if (!pools[c].empty()) {
          mass += p[c];
          ++available;
        }
      }
      // Renormalize over non-exhausted classes; uniform if none of them has mass.
      std::size_t chosen = num_classes;
      if (mass > 0.0) {
        double u = unit(rng) * mass;
        for (std::size_t c = 0; c < num_classes; ++c) {
          if (pools[c].empty() || p[c] == 0.0) continue;
          chosen = c;
          if (u < p[c]) break;
          u -= p[c];
        }
      } else {
        std::size_t r = std::uniform_int_distribution<std::size_t>(0, available - 1)(rng);
        for (std::size_t c = 0; c < num_classes; ++c) {
          if (pools[c].empty()) continue;
          if (r-- == 0) {
            chosen = c;
            break;
          }
        }
      }
      shard.indices.push_back(pools[chosen].back());
      pools[chosen].pop_back();
      ++shard.class_hist[chosen];
    }
    shards.push_back(std::move(shard));
  }
  std::size_t next = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t idx : pools[c]) {
      auto& shard = shards[next++ % spec.num_clients];
      shard.indices.push_back(idx);
      ++shard.class_hist[c];
    }
  }
  return shards;
}

std::vector<ClientShard> dirichlet_partition(const Dataset& ds, const PartitionSpec& spec) {
  return dirichlet_partition(ds.labels, ds.num_classes, spec);
}

Batch mixup_batch(const Batch& batch, std::span<const std::size_t> partner,
                  std::span<const double> lambdas) {
  const std::size_t b = batch.size();
  if (partner.size() != b || lambdas.size() != b) throw UsageError("mixup: pairing size mismatch");
  Batch out = batch;
  const std::size_t per = batch.inputs.size() / b;
  const std::size_t k = batch.targets.dim(1);
  for (std::size_t i = 0; i < b; ++i) {
    const double lam = lambdas[i];
    if (!(lam >= 0.0 && lam <= 1.0)) throw UsageError("mixup: lambda outside [0,1]");
    const std::size_t j = partner[i];
    if (lam == 1.0) continue;
    for (std::size_t t = 0; t < per; ++t) {
      out.inputs[i * per + t] = lam * batch.inputs[i * per + t] + (1.0 - lam) * batch.inputs[j * per + t];
    }
    for (std::size_t c = 0; c < k; ++c) {
      out.targets[i * k + c] = lam * batch.targets[i * k + c] + (1.0 - lam) * batch.targets[j * k + c];
    }
  }
  return out;
}

Batch mixup_batch(const Batch& batch, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("mixup: alpha must be positive");
  if (batch.size() < 2) throw UsageError("mixup: batch needs at least 2 samples");
  std::vector<std::size_t> partner(batch.size());
  std::iota(partner.begin(), partner.end(), std::size_t{0});
  std::shuffle(partner.begin(), partner.end(), rng);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> lambdas(batch.size());
  for (auto& lam : lambdas) {
    const double x = gamma(rng), y = gamma(rng);
    lam = (x + y) > 0.0 ? x / (x + y) : 0.5;
  }
  return mixup_batch(batch, partner, lambdas);
}

Tensor cutout_at(const Tensor& img, std::size_t size, std::size_t center_y, std::size_t center_x) {
  if (img.rank() != 3) throw UsageError("cutout: expected a [C,H,W] image");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (size == 0 || size > 2 * std::min(h, w)) {
    throw ConfigError("cutout: size " + std::to_string(size) + " must be in [1, 2*min(H,W)]");
  }
  const auto half = static_cast<std::ptrdiff_t>(size / 2);
  const auto y0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(center_y) - half);
  const auto x0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(center_x) - half);
  const auto y1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(h),
                                           static_cast<std::ptrdiff_t>(center_y) - half + static_cast<std::ptrdiff_t>(size));
  const auto x1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                           static_cast<std::ptrdiff_t>(center_x) - half + static_cast<std::ptrdiff_t>(size));
  Tensor out = img;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (auto y = y0; y < y1; ++y)
      for (auto x = x0; x < x1; ++x) out[(ch * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)] = 0.0;
  return out;
}

Tensor cutout(const Tensor& img, std::size_t size, Rng& rng) {
  if (img.rank() != 3) throw UsageError("cutout: expected a [C,H,W] image");
  const std::size_t cy = std::uniform_int_distribution<std::size_t>(0, img.dim(1) - 1)(rng);
  const std::size_t cx = std::uniform_int_distribution<std::size_t>(0, img.dim(2) - 1)(rng);
  return cutout_at(img, size, cy, cx);
}

ChannelStats channel_stats(const Dataset& ds) {
  if (ds.inputs.rank() != 4) throw UsageError("channel_stats: expected [N,C,H,W] inputs");
  const std::size_t n = ds.inputs.dim(0), c = ds.inputs.dim(1);
  const std::size_t plane = ds.inputs.dim(2) * ds.inputs.dim(3);
  ChannelStats stats{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = &ds.inputs.data()[(i * c + ch) * plane];
      for (std::size_t t = 0; t < plane; ++t) {
        s += p[t];
        s2 += p[t] * p[t];
      }
    }
    const double cnt = static_cast<double>(n * plane);
    stats.mean[ch] = s / cnt;
    stats.stddev[ch] = std::sqrt(std::max(0.0, s2 / cnt - stats.mean[ch] * stats.mean[ch]));
    if (stats.stddev[ch] == 0.0) stats.stddev[ch] = 1.0;
  }
  return stats;
}

Tensor normalize(const Tensor& img, const ChannelStats& stats) {
  if (stats.mean.empty()) return img;
  if (img.rank() != 3 || stats.mean.size() != img.dim(0) || stats.stddev.size() != img.dim(0)) {
    throw UsageError("normalize: channel statistics do not match image");
  }
  Tensor out = img;
  const std::size_t plane = img.dim(1) * img.dim(2);
  for (std::size_t ch = 0; ch < img.dim(0); ++ch)
    for (std::size_t t = 0; t < plane; ++t) {
      double& v = out[ch * plane + t];
      v = (v - stats.mean[ch]) / stats.stddev[ch];
    }
  return out;
}

Tensor augment_with(const Tensor& img, std::size_t pad, std::size_t offset_y, std::size_t offset_x,
                    bool flip, const ChannelStats& stats) {
  if (img.rank() != 3) throw UsageError("augment: expected a [C,H,W] image");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (offset_y > 2 * pad || offset_x > 2 * pad) throw UsageError("augment: crop offset outside padding");
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        // Coordinates in the padded image, then back to the source image.
        const std::size_t py = y + offset_y, px = x + offset_x;
        double v = 0.0;
        if (py >= pad && py < pad + h && px >= pad && px < pad + w) {
          v = img[(ch * h + (py - pad)) * w + (px - pad)];
        }
        const std::size_t ox = flip ? w - 1 - x : x;
        out[(ch * h + y) * w + ox] = v;
      }
  return normalize(out, stats);
}

Tensor standard_augment(const Tensor& img, const ChannelStats& stats, Rng& rng) {
  constexpr std::size_t pad = 4;
  std::uniform_int_distribution<std::size_t> offset(0, 2 * pad);
  const std::size_t oy = offset(rng), ox = offset(rng);
  const bool flip = std::bernoulli_distribution(0.5)(rng);
  return augment_with(img, pad, oy, ox, flip, stats);
}

Dataset load_cifar_binary(const std::filesystem::path& path, CifarVariant variant) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open CIFAR file " + path.string(), 0);
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const std::size_t label_bytes = variant == CifarVariant::cifar10 ? 1 : 2;
  const std::size_t pixels = 3 * 32 * 32;
  const std::size_t record = label_bytes + pixels;
  if (bytes.empty()) throw FormatError("empty CIFAR file " + path.string(), 0);
  if (bytes.size() % record != 0) {
    throw FormatError("truncated CIFAR record in " + path.string() + ": " +
                          std::to_string(bytes.size()) + " bytes is not a multiple of " +
                          std::to_string(record),
                      bytes.size() - bytes.size() % record);
  }
  const std::size_t n = bytes.size() / record;
  const std::size_t num_classes = variant == CifarVariant::cifar10 ? 10 : 100;
  Dataset ds;
  ds.num_classes = num_classes;
  ds.labels.resize(n);
  std::vector<double> data(n * pixels);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t base = i * record;
    const std::size_t label_offset = base + label_bytes - 1;
    const int label = bytes[label_offset];
    if (static_cast<std::size_t>(label) >= num_classes) {
      throw FormatError("CIFAR label " + std::to_string(label) + " out of range", label_offset);
    }
    ds.labels[i] = label;
    for (std::size_t t = 0; t < pixels; ++t) {
      data[i * pixels + t] = static_cast<double>(bytes[base + label_bytes + t]) / 255.0;
    }
  }
  ds.inputs = Tensor({n, 3, 32, 32}, std::move(data));
  return ds;
}

Dataset synth_classification(const SynthSpec& spec, std::uint64_t stream) {
  if (spec.num_classes == 0 || spec.per_class == 0 || spec.input_dim == 0) {
    throw ConfigError("synthetic dataset: sizes must be positive");
  }
  if (!(spec.spread >= 0.0)) throw ConfigError("synthetic dataset: spread must be >= 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  Rng mean_rng = make_rng(spec.seed, {key(Stream::synth_means)});
  std::vector<double> means(spec.num_classes * spec.input_dim);
  for (auto& m : means) m = normal(mean_rng);

  Rng rng = make_rng(spec.seed, {key(Stream::synth_samples), stream});
  const std::size_t n = spec.num_classes * spec.per_class;
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.labels.resize(n);
  std::vector<double> data(n * spec.input_dim);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t j = 0; j < spec.per_class; ++j) {
      const std::size_t i = c * spec.per_class + j;
      ds.labels[i] = static_cast<int>(c);
      for (std::size_t d = 0; d < spec.input_dim; ++d) {
        data[i * spec.input_dim + d] = means[c * spec.input_dim + d] + spec.spread * normal(rng);
      }
    }
  }
  ds.inputs = Tensor({n, spec.input_dim}, std::move(data));
  return ds;
}

}  // namespace fedflat
