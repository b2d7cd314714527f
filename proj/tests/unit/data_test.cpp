#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "fedflat/data.hpp"
#include "fedflat/errors.hpp"
#include "fedflat/model.hpp"
#include "fedflat/optim.hpp"
#include "test_support.hpp"

using namespace fedflat;
using fedflat::testing::TempDir;

namespace {

std::vector<int> balanced_labels(std::size_t classes, std::size_t per_class) {
  std::vector<int> labels;
  for (std::size_t c = 0; c < classes; ++c) labels.insert(labels.end(), per_class, static_cast<int>(c));
  return labels;
}

void expect_conservation(const std::vector<ClientShard>& shards, std::size_t n, std::size_t classes) {
  std::vector<int> seen(n, 0);
  for (const auto& s : shards) {
    EXPECT_EQ(s.class_hist.size(), classes);
    EXPECT_EQ(std::accumulate(s.class_hist.begin(), s.class_hist.end(), std::size_t{0}), s.indices.size());
    for (auto i : s.indices) {
      ASSERT_LT(i, n);
      ++seen[i];
    }
  }
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

std::size_t nonzero_classes(const ClientShard& s) {
  return static_cast<std::size_t>(std::count_if(s.class_hist.begin(), s.class_hist.end(), [](auto c) { return c > 0; }));
}

Batch tiny_batch(std::vector<double> pixels, std::vector<std::size_t> labels, std::size_t k) {
  const std::size_t b = labels.size();
  Tensor targets({b, k});
  for (std::size_t i = 0; i < b; ++i) targets[i * k + labels[i]] = 1.0;
  const std::size_t per = pixels.size() / b;
  return Batch{Tensor({b, per}, std::move(pixels)), std::move(targets)};
}

}  // namespace

TEST(Partition, ConservationAndDisjointnessAcrossAlphas) {
  const auto labels = balanced_labels(10, 103);
  for (double alpha : {0.0, 0.05, 0.5, 1.0, 10.0, 1000.0}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      for (std::size_t k : {10u, 17u, 40u}) {
        const auto shards = dirichlet_partition(labels, 10, {.num_clients = k, .alpha = alpha, .seed = seed});
        ASSERT_EQ(shards.size(), k);
        expect_conservation(shards, labels.size(), 10);
        for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(shards[i].client_id, i);
      }
    }
  }
}

TEST(Partition, AlphaZeroGivesOneClassPerClientHundredClasses) {
  const auto labels = balanced_labels(100, 50);
  const auto shards = dirichlet_partition(labels, 100, {.num_clients = 100, .alpha = 0.0, .seed = 7});
  expect_conservation(shards, labels.size(), 100);
  for (const auto& s : shards) EXPECT_EQ(nonzero_classes(s), 1u);
}

TEST(Partition, AlphaZeroSplitsClassesEvenlyWhenMoreClientsThanClasses) {
  const auto labels = balanced_labels(10, 100);
  const auto shards = dirichlet_partition(labels, 10, {.num_clients = 20, .alpha = 0.0, .seed = 1});
  expect_conservation(shards, labels.size(), 10);
  for (const auto& s : shards) {
    EXPECT_EQ(nonzero_classes(s), 1u);
    EXPECT_EQ(s.indices.size(), 50u);
  }
}

TEST(Partition, AlphaZeroNeedsAtLeastOneClientPerClass) {
  const auto labels = balanced_labels(10, 10);
  EXPECT_THROW(dirichlet_partition(labels, 10, {.num_clients = 5, .alpha = 0.0, .seed = 1}), ConfigError);
}

TEST(Partition, MoreClientsThanSamplesIsConfigError) {
  const auto labels = balanced_labels(2, 2);
  EXPECT_THROW(dirichlet_partition(labels, 2, {.num_clients = 5, .alpha = 1.0, .seed = 1}), ConfigError);
}

TEST(Partition, LargeAlphaIsNearUniform) {
  // 10 classes x 5000 samples, 100 clients of 500: max class share < 2x uniform.
  const auto labels = balanced_labels(10, 5000);
  const auto shards = dirichlet_partition(labels, 10, {.num_clients = 100, .alpha = 1000.0, .seed = 3});
  std::size_t ok = 0;
  for (const auto& s : shards) {
    EXPECT_EQ(s.indices.size(), 500u);
    const double max_share = static_cast<double>(*std::max_element(s.class_hist.begin(), s.class_hist.end())) / 500.0;
    if (max_share < 2.0 / 10.0) ++ok;
  }
  EXPECT_GE(ok, 95u);
}

TEST(Partition, LargeAlphaProportionsNearUniformHundredClasses) {
  Rng rng(5);
  std::size_t ok = 0;
  for (int i = 0; i < 100; ++i) {
    const auto p = dirichlet_proportions(100, 1000.0, rng);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    if (*std::max_element(p.begin(), p.end()) < 2.0 / 100.0) ++ok;
  }
  EXPECT_GE(ok, 95u);
}

TEST(Partition, SmallAlphaIsSkewed) {
  const auto labels = balanced_labels(10, 500);
  const auto shards = dirichlet_partition(labels, 10, {.num_clients = 20, .alpha = 0.05, .seed = 2});
  double mean_max_share = 0.0;
  for (const auto& s : shards) {
    mean_max_share += static_cast<double>(*std::max_element(s.class_hist.begin(), s.class_hist.end())) /
                      static_cast<double>(s.indices.size());
  }
  EXPECT_GT(mean_max_share / 20.0, 0.5);
}

TEST(Partition, DeterministicPerSeed) {
  const auto labels = balanced_labels(10, 50);
  const PartitionSpec spec{.num_clients = 8, .alpha = 0.3, .seed = 11};
  const auto a = dirichlet_partition(labels, 10, spec);
  const auto b = dirichlet_partition(labels, 10, spec);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].indices, b[i].indices);
}

TEST(Mixup, HandConvexCombination) {
  const Batch b = tiny_batch({0.0, 4.0}, {0, 1}, 2);
  const std::vector<std::size_t> partner{1, 0};
  const std::vector<double> lambdas{0.25, 1.0};
  const Batch m = mixup_batch(b, partner, lambdas);
  EXPECT_DOUBLE_EQ(m.inputs[0], 3.0);
  EXPECT_DOUBLE_EQ(m.targets[0], 0.25);
  EXPECT_DOUBLE_EQ(m.targets[1], 0.75);
  // lambda = 1 keeps the sample exactly.
  EXPECT_EQ(m.inputs[1], 4.0);
  EXPECT_EQ(m.targets[2], 0.0);
  EXPECT_EQ(m.targets[3], 1.0);
}

TEST(Mixup, LabelsStayDistributions) {
  Rng rng(3);
  const Batch b = tiny_batch({0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, {0, 1, 2, 1, 0, 2}, 3);
  for (int t = 0; t < 200; ++t) {
    const Batch m = mixup_batch(b, 0.4, rng);
    for (std::size_t i = 0; i < m.size(); ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_GE(m.targets[i * 3 + c], 0.0);
        s += m.targets[i * 3 + c];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Mixup, AlphaOneGivesUniformLambda) {
  // Distinct one-hot rows: a mixed row holds lambda on its own class.
  Rng rng(21);
  const std::size_t k = 8;
  std::vector<std::size_t> labels(k);
  std::iota(labels.begin(), labels.end(), std::size_t{0});
  const Batch b = tiny_batch(std::vector<double>(k, 0.0), labels, k);
  std::vector<double> lambdas;
  while (lambdas.size() < 4000) {
    const Batch m = mixup_batch(b, 1.0, rng);
    for (std::size_t i = 0; i < k; ++i) {
      if (m.targets[i * k + i] < 1.0) lambdas.push_back(m.targets[i * k + i]);
    }
  }
  // Kolmogorov-Smirnov against U(0,1); 1.63/sqrt(n) is the 1% critical value.
  std::sort(lambdas.begin(), lambdas.end());
  const double n = static_cast<double>(lambdas.size());
  double d = 0.0;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    d = std::max({d, std::abs(static_cast<double>(i + 1) / n - lambdas[i]), std::abs(lambdas[i] - static_cast<double>(i) / n)});
  }
  EXPECT_LT(d, 1.63 / std::sqrt(n));
}

TEST(Mixup, Errors) {
  Rng rng(1);
  const Batch two = tiny_batch({0.0, 1.0}, {0, 1}, 2);
  EXPECT_THROW(mixup_batch(two, 0.0, rng), ConfigError);
  EXPECT_THROW(mixup_batch(two, -1.0, rng), ConfigError);
  EXPECT_THROW(mixup_batch(tiny_batch({0.0}, {0}, 2), 1.0, rng), UsageError);
}

TEST(Cutout, BruteForceCountOnEightByEight) {
  const Tensor img({1, 8, 8}, 1.0);
  for (std::size_t size = 1; size <= 16; ++size) {
    for (std::size_t cy = 0; cy < 8; ++cy) {
      for (std::size_t cx = 0; cx < 8; ++cx) {
        const Tensor out = cutout_at(img, size, cy, cx);
        const auto zeros = static_cast<std::size_t>(std::count(out.values().begin(), out.values().end(), 0.0));
        // Independent clipped overlap of [c - size/2, c - size/2 + size) with [0, 8).
        const auto extent = [&](std::size_t c) {
          const long lo = std::max(0L, static_cast<long>(c) - static_cast<long>(size / 2));
          const long hi = std::min(8L, static_cast<long>(c) - static_cast<long>(size / 2) + static_cast<long>(size));
          return static_cast<std::size_t>(std::max(0L, hi - lo));
        };
        EXPECT_EQ(zeros, extent(cy) * extent(cx));
        EXPECT_LE(zeros, size * size);
        const std::size_t margin = std::min({cy, cx, 7 - cy, 7 - cx});
        if (margin >= size / 2 && size <= 8) EXPECT_EQ(zeros, size * size) << size << " " << cy << " " << cx;
      }
    }
  }
}

TEST(Cutout, ComplementIsBitIdentical) {
  Rng rng(4);
  std::mt19937_64 gen(9);
  const Tensor img({3, 8, 8}, fedflat::testing::random_vector(192, gen, 0.5, 1.0));
  for (int t = 0; t < 50; ++t) {
    const Tensor out = cutout(img, 4, rng);
    for (std::size_t i = 0; i < img.size(); ++i) {
      if (out[i] != 0.0) EXPECT_EQ(out[i], img[i]);
    }
    // Every channel masks the same pixels.
    for (std::size_t p = 0; p < 64; ++p) {
      EXPECT_EQ(out[p] == 0.0, out[64 + p] == 0.0);
      EXPECT_EQ(out[p] == 0.0, out[128 + p] == 0.0);
    }
  }
}

TEST(Cutout, SizeLimit) {
  const Tensor img({1, 4, 6}, 1.0);
  EXPECT_NO_THROW(cutout_at(img, 8, 0, 0));
  EXPECT_THROW(cutout_at(img, 9, 0, 0), ConfigError);
  EXPECT_THROW(cutout_at(img, 0, 0, 0), ConfigError);
}

TEST(StandardAugment, FlipTwiceIsIdentity) {
  std::mt19937_64 gen(2);
  const Tensor img({3, 32, 32}, fedflat::testing::random_vector(3 * 32 * 32, gen));
  const Tensor once = augment_with(img, 4, 4, 4, true, {});
  EXPECT_NE(once, img);
  EXPECT_EQ(augment_with(once, 4, 4, 4, true, {}), img);
}

TEST(StandardAugment, ZeroOffsetIsTopLeftOfPaddedImage) {
  std::mt19937_64 gen(3);
  const Tensor img({3, 32, 32}, fedflat::testing::random_vector(3 * 32 * 32, gen));
  const Tensor out = augment_with(img, 4, 0, 0, false, {});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        const double expected = (y < 4 || x < 4) ? 0.0 : img[(c * 32 + y - 4) * 32 + x - 4];
        EXPECT_EQ(out[(c * 32 + y) * 32 + x], expected);
      }
}

TEST(StandardAugment, ConstantChannelAtMeanNormalizesToZero) {
  const ChannelStats stats{{0.4, 0.5, 0.6}, {0.2, 0.25, 0.3}};
  Tensor img({3, 4, 4});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 16; ++i) img[c * 16 + i] = stats.mean[c];
  const Tensor out = normalize(img, stats);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(StandardAugment, RandomPipelinePreservesShape) {
  Rng rng(8);
  const Tensor img({3, 32, 32}, 0.5);
  EXPECT_EQ(standard_augment(img, {}, rng).shape(), img.shape());
}

TEST(Cifar, TenRecordFixtureRoundTrips) {
  TempDir dir("cifar");
  const auto path = dir.path() / "data_batch.bin";
  {
    std::ofstream out(path, std::ios::binary);
    for (int r = 0; r < 10; ++r) {
      out.put(static_cast<char>(r % 10));
      for (int i = 0; i < 3072; ++i) out.put(static_cast<char>((r * 7 + i) % 256));
    }
  }
  const Dataset ds = load_cifar_binary(path, CifarVariant::cifar10);
  EXPECT_EQ(ds.labels.size(), 10u);
  EXPECT_EQ(ds.inputs.shape(), (Shape{10, 3, 32, 32}));
  EXPECT_EQ(ds.labels[3], 3);
  EXPECT_DOUBLE_EQ(ds.inputs[0], 0.0 / 255.0);
  EXPECT_DOUBLE_EQ(ds.inputs[3072 * 2], 14.0 / 255.0);
  EXPECT_DOUBLE_EQ(ds.inputs[3072 * 2 + 1024], static_cast<double>((14 + 1024) % 256) / 255.0);
}

TEST(Cifar, HundredUsesFineLabel) {
  TempDir dir("cifar100");
  const auto path = dir.path() / "train.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out.put(static_cast<char>(3));   // coarse
    out.put(static_cast<char>(42));  // fine
    for (int i = 0; i < 3072; ++i) out.put(static_cast<char>(255));
  }
  const Dataset ds = load_cifar_binary(path, CifarVariant::cifar100);
  EXPECT_EQ(ds.num_classes, 100u);
  EXPECT_EQ(ds.labels[0], 42);
  EXPECT_DOUBLE_EQ(ds.inputs[5], 1.0);
}

TEST(Cifar, TruncatedFileReportsByteOffset) {
  TempDir dir("cifar_bad");
  const auto path = dir.path() / "bad.bin";
  {
    std::ofstream out(path, std::ios::binary);
    for (int i = 0; i < 3073 * 2 + 1; ++i) out.put('\1');
  }
  try {
    (void)load_cifar_binary(path, CifarVariant::cifar10);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.byte_offset(), 3073u * 2);
    EXPECT_NE(std::string(e.what()).find("6146"), std::string::npos);
  }
}

TEST(Synthetic, DeterministicAndSized) {
  const SynthSpec spec{.num_classes = 10, .per_class = 100, .input_dim = 20, .seed = 3};
  const Dataset a = synth_classification(spec);
  EXPECT_EQ(a.labels.size(), 1000u);
  EXPECT_EQ(a.inputs.shape(), (Shape{1000, 20}));
  EXPECT_EQ(a.inputs, synth_classification(spec).inputs);
  // Another stream shares the class means but not the samples.
  EXPECT_NE(a.inputs, synth_classification(spec, 1).inputs);
}

TEST(Synthetic, CentralizedMlpReachesNinetyFivePercent) {
  const SynthSpec spec{.num_classes = 10, .per_class = 100, .input_dim = 20, .seed = 0};
  const Dataset ds = synth_classification(spec);
  const ModelSpec model = mlp({20, 32, 10});
  ParamVector theta = init_params(model, 0);
  SgdState state;
  const SgdConfig sgd{.lr = 0.05};
  Rng rng(1);
  std::vector<std::size_t> order(ds.labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double accuracy = 0.0;
  std::size_t epochs = 0;
  while (epochs < 200 && accuracy < 0.95) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += 32) {
      const std::span<const std::size_t> idx(order.data() + s, std::min<std::size_t>(32, order.size() - s));
      const auto lg = model_objective(model, make_batch(ds, idx))(theta.data());
      sgd_step(theta.data(), lg.grad, state, sgd);
    }
    ++epochs;
    const Tensor logits = forward_logits(theta.data(), model, ds.inputs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
      const auto row = logits.data().subspan(i * 10, 10);
      correct += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == ds.labels[i];
    }
    accuracy = static_cast<double>(correct) / static_cast<double>(ds.labels.size());
  }
  EXPECT_GE(accuracy, 0.95) << "after " << epochs << " epochs";
}

TEST(Dataset, ValidateRejectsOutOfRangeLabels) {
  Dataset ds{Tensor({2, 3}), {0, 5}, 3};
  EXPECT_THROW(validate(ds), ConfigError);
}
