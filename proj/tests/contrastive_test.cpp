#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "encwm/contrastive.hpp"
#include "encwm/downstream.hpp"
#include "gradcheck.hpp"
#include "oracle.hpp"

namespace encwm {
namespace {

oracle::Mat to_mat(const Tensor& t) {
  oracle::Mat m;
  for (std::size_t r = 0; r < t.rows(); ++r) m.push_back(gradcheck::row(t, r));
  return m;
}

Tensor random_features(std::size_t rows, std::size_t dim, Rng& rng) {
  Tensor t({rows, dim});
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

EncoderArch small_arch() {
  EncoderArch a;
  a.input_dim = 8 * 8 * 3;
  a.hidden = {16};
  a.feature_dim = 6;
  a.projection_dim = 4;
  return a;
}

TEST(EncodeTest, DeterministicAndFeatureSized) {
  Rng rng(1);
  const auto model = EncoderModel::create(EncoderArch{}, rng);
  const auto img = gen_synthetic(2, 1, 16, 5).images[0];
  const auto a = encode(model, img);
  EXPECT_EQ(a.size(), model.feature_dim());
  EXPECT_EQ(a, encode(model, img));
}

TEST(EncodeTest, ZeroWeightsGiveZeroFeature) {
  EncoderModel model(EncoderArch{});
  const auto f = encode(model, gen_synthetic(2, 1, 16, 5).images[0]);
  for (float v : f) EXPECT_EQ(v, 0.0f);
}

TEST(EncodeTest, ShapeMismatchRejected) {
  EncoderModel model(EncoderArch{});
  EXPECT_THROW(encode(model, Image(8, 8)), ShapeError);
}

TEST(NtXentTest, SinglePairIsExactlyZero) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial)
    EXPECT_EQ(ntxent_loss(random_features(2, 5, rng), 0.5), 0.0);
}

TEST(NtXentTest, HandFixedUnitVectors) {
  const Tensor f({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
  const double expect = oracle::ntxent(to_mat(f), 1.0);
  // Each anchor: positive sim 1, negatives two zeros: -log(e / (e + 2)).
  EXPECT_NEAR(expect, -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0)), 1e-12);
  EXPECT_NEAR(ntxent_loss(f, 1.0), expect, 1e-6);
}

TEST(NtXentTest, MatchesBruteForceEnumeration) {
  Rng rng(3);
  for (std::size_t pairs : {2u, 3u, 5u})
    for (double tau : {0.1, 0.5, 1.0}) {
      const auto f = random_features(2 * pairs, 7, rng);
      EXPECT_NEAR(ntxent_loss(f, tau), oracle::ntxent(to_mat(f), tau), 1e-5 / tau);
    }
}

TEST(NtXentTest, ScaleInvariantProperty) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto f = random_features(6, 4, rng);
    const double base = ntxent_loss(f, 0.5);
    const auto c = static_cast<float>(std::exp(rng.uniform(-3, 3)));
    for (auto& v : f.data) v *= c;
    EXPECT_NEAR(ntxent_loss(f, 0.5), base, 1e-5);
  }
}

TEST(NtXentTest, InvalidInputsRejected) {
  Rng rng(5);
  EXPECT_THROW(ntxent_loss(random_features(3, 4, rng), 0.5), ShapeError);
  EXPECT_THROW(ntxent_loss(random_features(4, 4, rng), 0.0), Error);
  EXPECT_THROW(ntxent_loss(random_features(4, 4, rng), -1.0), Error);
}

// Gradient w.r.t. the feature matrix against a fourth-order central
// difference of the brute-force oracle.
TEST(NtXentTest, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    auto f = Tensor::parameter({4, 3});
    for (auto& v : f.data) v = static_cast<float>(rng.normal());
    Graph g;
    g.backward(ntxent_loss(g.param(f), 0.5));
    const auto base = to_mat(f);
    const double h = 1e-3;
    for (std::size_t i = 0; i < f.numel(); ++i) {
      auto at = [&](double d) {
        auto m = base;
        m[i / 3][i % 3] += d;
        return oracle::ntxent(m, 0.5);
      };
      const double fd = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
      EXPECT_LT(oracle::rel_error(f.grad[i], fd, 1e-3), 1e-4) << "entry " << i;
    }
  }
}

TEST(QueueTest, WarmupThenFifo) {
  MomentumQueue q(8, 2);
  auto batch = [](float base) {
    Tensor t({4, 2});
    for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = base + float(i);
    return t;
  };
  EXPECT_EQ(q.push(batch(0)), 0u);
  EXPECT_EQ(q.size(), 4u);
  EXPECT_EQ(q.push(batch(100)), 0u);
  EXPECT_EQ(q.push(batch(200)), 4u);
  EXPECT_EQ(q.size(), 8u);
  EXPECT_EQ(q.at(0), (std::vector<float>{100, 101}));
  EXPECT_EQ(q.at(7), (std::vector<float>{206, 207}));
}

TEST(QueueTest, BatchTooLargeOrNotDividingRejected) {
  MomentumQueue q(8, 2);
  EXPECT_THROW(q.push(Tensor({16, 2})), Error);
  EXPECT_THROW(q.push(Tensor({3, 2})), Error);
  EXPECT_THROW(q.push(Tensor({4, 3})), ShapeError);
}

TEST(QueuePropertyTest, CapacityAndEvictionCount) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + rng.below(4);
    const std::size_t cap = b * (1 + rng.below(5));
    MomentumQueue q(cap, 3);
    std::vector<std::vector<float>> pushed;
    for (int k = 0; k < 12; ++k) {
      auto t = random_features(b, 3, rng);
      const std::size_t before = q.size();
      const std::size_t evicted = q.push(t);
      EXPECT_EQ(evicted, before + b > cap ? before + b - cap : 0u);
      EXPECT_LE(q.size(), cap);
      for (std::size_t r = 0; r < b; ++r) {
        const auto row = gradcheck::row(t, r);
        pushed.emplace_back(row.begin(), row.end());
      }
      const std::size_t n = std::min(cap, pushed.size());
      for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(q.at(i), pushed[pushed.size() - n + i]);
    }
  }
}

TEST(MocoLossTest, OrthogonalNegativesClosedForm) {
  const std::size_t k = 6;
  MomentumQueue q(k, 8);
  Tensor neg({k, 8});
  for (std::size_t i = 0; i < k; ++i) neg.at(i, i + 1) = 1.0f;
  q.push(neg);
  std::vector<float> e0(8, 0.0f);
  e0[0] = 1.0f;
  const double closed = -std::log(std::exp(1.0) / (std::exp(1.0) + double(k)));
  oracle::Mat negs = to_mat(neg);
  const oracle::Vec qv(e0.begin(), e0.end());
  EXPECT_NEAR(oracle::moco(qv, qv, negs, 1.0), closed, 1e-12);
  EXPECT_NEAR(moco_loss(e0, e0, q, 1.0), closed, 1e-6);
}

TEST(MocoLossTest, UniformLogitsGiveLogKPlusOne) {
  const std::size_t k = 4;
  MomentumQueue q(k, 3);
  const std::vector<float> u{0.6f, 0.0f, 0.8f};
  Tensor copies({k, 3});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < 3; ++j) copies.at(i, j) = u[j];
  q.push(copies);
  EXPECT_NEAR(moco_loss(u, u, q, 0.2), std::log(double(k + 1)), 1e-6);
}

TEST(MocoLossTest, DecreasesAsPositiveAlignmentGrows) {
  Rng rng(8);
  MomentumQueue q(8, 2);
  q.push(Tensor({8, 2}, std::vector<float>(16, 0.0f)));
  Tensor negs({8, 2});
  for (std::size_t i = 0; i < 8; ++i) {
    const double a = rng.uniform(0, 6.28);
    negs.at(i, 0) = float(std::cos(a));
    negs.at(i, 1) = float(std::sin(a));
  }
  MomentumQueue q2(8, 2);
  q2.push(negs);
  const std::vector<float> qv{1, 0};
  double prev = INFINITY;
  for (double angle = 3.0; angle >= 0.0; angle -= 0.25) {
    const std::vector<float> kp{float(std::cos(angle)), float(std::sin(angle))};
    const double l = moco_loss(qv, kp, q2, 0.5);
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(MocoLossTest, MatchesExplicitSoftmaxCrossEntropy) {
  Rng rng(9);
  MomentumQueue q(12, 5);
  q.push(random_features(12, 5, rng));
  const auto qs = random_features(3, 5, rng);
  const auto ks = random_features(3, 5, rng);
  Graph g;
  const double got = moco_loss(g.input(qs), ks, q, 0.3).value()[0];
  double expect = 0.0;
  const auto negs = to_mat(q.as_tensor());
  for (std::size_t r = 0; r < 3; ++r) {
    oracle::Vec logits{oracle::dot(gradcheck::row(qs, r), gradcheck::row(ks, r)) / 0.3};
    for (const auto& n : negs) logits.push_back(oracle::dot(gradcheck::row(qs, r), n) / 0.3);
    expect += oracle::softmax_ce(logits, 0) / 3.0;
  }
  EXPECT_NEAR(got, expect, 1e-5);
}

TEST(MocoLossTest, InvalidInputsRejected) {
  MomentumQueue empty(4, 2);
  EXPECT_THROW(moco_loss({1, 0}, {1, 0}, empty, 1.0), Error);
  MomentumQueue q(4, 2);
  q.push(Tensor({4, 2}, 0.5f));
  EXPECT_THROW(moco_loss({1, 0}, {1, 0}, q, 0.0), Error);
}

TEST(MomentumUpdateTest, Endpoints) {
  Rng rng(10);
  auto k = random_features(3, 4, rng), q = random_features(3, 4, rng);
  const auto k0 = k;
  momentum_update(k, q, 1.0);
  EXPECT_EQ(k.data, k0.data);
  momentum_update(k, q, 0.0);
  EXPECT_EQ(k.data, q.data);
}

TEST(MomentumUpdateTest, OneLineArithmetic) {
  Tensor k({1}, 1.0f);
  momentum_update(k, Tensor({1}, 0.0f), 0.9);
  EXPECT_FLOAT_EQ(k.data[0], 0.9f);
}

TEST(MomentumUpdateTest, ShapeMismatchRejected) {
  Tensor k({2}), q({3});
  EXPECT_THROW(momentum_update(k, q, 0.5), ShapeError);
  EXPECT_THROW(momentum_update(k, k, 1.5), Error);
}

TEST(MomentumUpdatePropertyTest, GeometricConvergence) {
  Rng rng(11);
  for (double m : {0.1, 0.5, 0.9, 0.99}) {
    auto k = random_features(4, 4, rng);
    const auto q = random_features(4, 4, rng);
    auto dist = [&] {
      double s = 0.0;
      for (std::size_t i = 0; i < k.numel(); ++i) s += double(k.data[i] - q.data[i]) * (k.data[i] - q.data[i]);
      return std::sqrt(s);
    };
    double d = dist();
    for (int step = 0; step < 10; ++step) {
      momentum_update(k, q, m);
      const double next = dist();
      EXPECT_NEAR(next, m * d, 1e-5 * (1.0 + d));
      d = next;
    }
  }
}

TEST(MomentumUpdateTest, WholeEncoder) {
  Rng rng(12);
  auto key = EncoderModel::create(small_arch(), rng);
  const auto query = EncoderModel::create(small_arch(), rng);
  momentum_update(key, query, 0.0);
  EXPECT_TRUE(key.same_parameters(query));
}

PretrainConfig tiny_config(ContrastiveAlgorithm algo) {
  PretrainConfig cfg;
  cfg.algorithm = algo;
  cfg.arch = small_arch();
  cfg.batch_size = 8;
  cfg.epochs = 4;
  cfg.queue_capacity = 32;
  cfg.momentum = 0.9;
  cfg.learning_rate = 3e-3;
  cfg.seed = 3;
  return cfg;
}

TEST(PretrainTest, SameSeedBitIdentical) {
  const auto data = gen_synthetic(2, 12, 8, 1);
  for (auto algo : {ContrastiveAlgorithm::SimClr, ContrastiveAlgorithm::Moco}) {
    const auto a = pretrain(data.images, tiny_config(algo));
    const auto b = pretrain(data.images, tiny_config(algo));
    EXPECT_TRUE(a.model.same_parameters(b.model));
    EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  }
}

TEST(PretrainTest, LossLoggedPerEpochAndFinite) {
  const auto data = gen_synthetic(2, 12, 8, 1);
  std::vector<std::size_t> seen;
  const auto r = pretrain(data.images, tiny_config(ContrastiveAlgorithm::Moco),
                          [&](std::size_t e, double l) {
                            seen.push_back(e);
                            EXPECT_TRUE(std::isfinite(l));
                          });
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(r.epoch_losses.size(), 4u);
}

TEST(PretrainTest, DegenerateConfigRejected) {
  const auto data = gen_synthetic(2, 4, 8, 1);
  auto cfg = tiny_config(ContrastiveAlgorithm::Moco);
  cfg.queue_capacity = 30;
  EXPECT_THROW(pretrain(data.images, cfg), Error);
  cfg = tiny_config(ContrastiveAlgorithm::SimClr);
  cfg.temperature = 0.0;
  EXPECT_THROW(pretrain(data.images, cfg), Error);
  EXPECT_THROW(pretrain({}, tiny_config(ContrastiveAlgorithm::SimClr)), Error);
}

TEST(PretrainTest, AlgorithmNamesRoundTrip) {
  for (auto a : {ContrastiveAlgorithm::SimClr, ContrastiveAlgorithm::Moco})
    EXPECT_EQ(contrastive_algorithm_from_string(to_string(a)), a);
  EXPECT_THROW(contrastive_algorithm_from_string("byol"), Error);
}

// Desk-scale training runs shared by the slower tests below.
class DeskPretrainTest : public ::testing::TestWithParam<ContrastiveAlgorithm> {
 protected:
  static PretrainConfig desk_config(ContrastiveAlgorithm algo) {
    PretrainConfig cfg;
    cfg.algorithm = algo;
    cfg.seed = 1;
    return cfg;
  }
};

TEST_P(DeskPretrainTest, LossDecreases) {
  const auto data = gen_synthetic(4, 200, 16, 21);
  const auto r = pretrain(data.images, desk_config(GetParam()));
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
}

// Limited-label linear probe: frozen features against raw pixels, averaged
// over several draws of the labeled set.
TEST_P(DeskPretrainTest, FeatureProbeBeatsRawPixelProbe) {
  const auto data = gen_synthetic(4, 200, 16, 21);
  const auto model = pretrain(data.images, desk_config(GetParam())).model;
  const auto test = gen_synthetic(4, 50, 16, 22);
  const Tensor test_raw = to_batch(test.images);
  const Tensor test_feat = encode_images(model, test.images);
  double raw = 0.0, feat = 0.0;
  HeadTrainConfig hc;
  for (std::uint64_t draw = 0; draw < 5; ++draw) {
    const auto few = gen_synthetic(4, 3, 16, 100 + draw);
    hc.seed = draw;
    raw += probe_accuracy(to_batch(few.images), few.labels, test_raw, test.labels, 4, hc);
    feat += probe_accuracy(encode_images(model, few.images), few.labels, test_feat, test.labels, 4, hc);
  }
  EXPECT_GT(feat, raw) << "mean feature probe " << feat / 5 << ", raw " << raw / 5;
}

INSTANTIATE_TEST_SUITE_P(Algorithms, DeskPretrainTest,
                         ::testing::Values(ContrastiveAlgorithm::SimClr, ContrastiveAlgorithm::Moco),
                         [](const auto& info) { return to_string(info.param); });

}  // namespace
}  // namespace encwm
