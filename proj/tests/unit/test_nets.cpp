#include "wmark/nets.hpp"
#include "wmark/serialize.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

using namespace wmark;

namespace {

Mlp zero_model(const std::vector<std::size_t>& dims) {
  Mlp m = make_classifier(dims, 1);
  for (std::size_t i = 0; i < m.layer_count(); ++i) {
    std::fill(m.layer(i).weight.data().begin(), m.layer(i).weight.data().end(), 0.0);
    std::fill(m.layer(i).bias.data().begin(), m.layer(i).bias.data().end(), 0.0);
  }
  return m;
}

Tensor random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = g(rng);
  return Tensor::matrix(rows, cols, std::move(v));
}

// Permutes hidden unit order of layer `i`: rows of layer i, columns of layer i+1.
void permute_hidden_units(Mlp& m, std::size_t i, const std::vector<std::size_t>& perm) {
  Dense& a = m.layer(i);
  Dense& b = m.layer(i + 1);
  std::size_t in = a.in_dim(), out = a.out_dim(), next = b.out_dim();
  auto aw = a.weight.values(), ab = a.bias.values(), bw = b.weight.values();
  for (std::size_t r = 0; r < out; ++r) {
    for (std::size_t c = 0; c < in; ++c) a.weight.data()[r * in + c] = aw[perm[r] * in + c];
    a.bias.data()[r] = ab[perm[r]];
  }
  for (std::size_t r = 0; r < next; ++r)
    for (std::size_t c = 0; c < out; ++c) b.weight.data()[r * out + c] = bw[r * out + perm[c]];
}

}  // namespace

TEST(Classify, ZeroWeightModelGivesZeroLogits) {
  Mlp m = zero_model({5, 4, 3});
  Tensor logits = classify(m, random_batch(7, 5, 3));
  ASSERT_EQ(logits.rows(), 7u);
  ASSERT_EQ(logits.cols(), 3u);
  for (double v : logits.values()) EXPECT_EQ(v, 0.0);
}

TEST(Classify, SingleExampleMatchesBatchOfOne) {
  Mlp m = make_classifier({6, 8, 4}, 11);
  Tensor batch = random_batch(5, 6, 4);
  Tensor all = classify(m, batch);
  for (std::size_t r = 0; r < 5; ++r) {
    std::vector<double> row(batch.values().begin() + static_cast<long>(r * 6),
                            batch.values().begin() + static_cast<long>((r + 1) * 6));
    Tensor one = classify(m, Tensor::matrix(1, 6, row));
    for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(one.values()[c], all.values()[r * 4 + c]);
  }
}

TEST(Classify, RejectsWrongInputWidth) {
  Mlp m = make_classifier({6, 8, 4}, 11);
  EXPECT_THROW(classify(m, random_batch(2, 5, 1)), ShapeError);
}

TEST(Mlp, RejectsDegenerateDims) {
  EXPECT_THROW(make_classifier({4}, 1), std::invalid_argument);
  EXPECT_THROW(make_classifier({4, 0, 2}, 1), std::invalid_argument);
}

TEST(Mlp, CopiesAreDeep) {
  Mlp a = make_classifier({3, 4, 2}, 5);
  Mlp b = a;
  b.layer(0).weight.data()[0] += 1.0;
  EXPECT_FALSE(a == b);
}

TEST(ExtractFeatures, WeightLayerIsRowMajorSelection) {
  Mlp m = make_classifier({3, 4, 2}, 7);
  WeightVector q = extract_features(m, FeatureKey::weight_layer(0));
  ASSERT_EQ(q.size(), 12u);
  EXPECT_EQ(q, m.layer(0).weight.values());
  EXPECT_EQ(m.layer(0).weight.rows(), 4u);
}

TEST(ExtractFeatures, ActivationOfZeroTriggersAndZeroBiasIsZero) {
  Mlp m = make_classifier({5, 6, 3}, 9);
  for (std::size_t i = 0; i < m.layer_count(); ++i)
    std::fill(m.layer(i).bias.data().begin(), m.layer(i).bias.data().end(), 0.0);
  FeatureKey key = FeatureKey::activation(0, Tensor::zeros({4, 5}));
  WeightVector q = extract_features(m, key);
  ASSERT_EQ(q.size(), 24u);
  EXPECT_EQ(feature_length(m, key), 24u);
  for (double v : q) EXPECT_EQ(v, 0.0);
}

TEST(ExtractFeatures, Deterministic) {
  Mlp m = make_classifier({5, 6, 3}, 9);
  FeatureKey key = FeatureKey::activation(0, random_batch(3, 5, 2));
  EXPECT_EQ(extract_features(m, key), extract_features(m, key));
  EXPECT_EQ(extract_features(m, FeatureKey::weight_layer(1)), extract_features(m, FeatureKey::weight_layer(1)));
}

TEST(ExtractFeatures, OutOfRangeLayerRejected) {
  Mlp m = make_classifier({5, 6, 3}, 9);
  EXPECT_THROW(extract_features(m, FeatureKey::weight_layer(2)), std::out_of_range);
  EXPECT_THROW(extract_features(m, FeatureKey::activation(0, Tensor::zeros({2, 4}))), ShapeError);
}

TEST(ExtractFeatures, TriggerSetIsImmutableCopy) {
  Tensor triggers = random_batch(2, 5, 8);
  FeatureKey key = FeatureKey::activation(0, triggers);
  double before = std::get<ActivationKey>(key.which).triggers->values()[0];
  triggers.data()[0] += 10.0;
  EXPECT_EQ(std::get<ActivationKey>(key.which).triggers->values()[0], before);
}

TEST(ExtractFeatures, WeightLayerFeaturesAreLinearInWeights) {
  Mlp m = make_classifier({6, 5, 3}, 21);
  Mlp scaled = m;
  const double alpha = -2.5;
  for (auto& v : scaled.layer(1).weight.data()) v *= alpha;
  WeightVector q = extract_features(m, FeatureKey::weight_layer(1));
  WeightVector qs = extract_features(scaled, FeatureKey::weight_layer(1));
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_DOUBLE_EQ(qs[i], alpha * q[i]);
}

TEST(SortedFeatures, Examples) {
  EXPECT_EQ(sorted_features({0.3, -0.1, 0.5}), (WeightVector{0.5, 0.3, -0.1}));
  WeightVector already{3.0, 2.0, 2.0, -1.0};
  EXPECT_EQ(sorted_features(already), already);
}

TEST(SortedFeatures, PreservesMultiset) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  WeightVector q(50);
  for (auto& v : q) v = u(rng);
  WeightVector s = sorted_features(q);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end(), std::greater<>()));
  std::sort(q.begin(), q.end());
  std::sort(s.begin(), s.end());
  EXPECT_EQ(q, s);
}

TEST(SortedFeatures, InvariantUnderHiddenNeuronPermutation) {
  Mlp m = make_classifier({8, 12, 10, 4}, 31);
  Tensor x = random_batch(6, 8, 5);
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    for (std::size_t layer = 0; layer + 1 < m.layer_count(); ++layer) {
      std::vector<std::size_t> perm(m.layer(layer).out_dim());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Mlp p = m;
      permute_hidden_units(p, layer, perm);
      // Function is unchanged, so the permutation really is a symmetry.
      auto a = classify(m, x).values(), b = classify(p, x).values();
      for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-12);
      for (std::size_t l = 0; l < m.layer_count(); ++l) {
        EXPECT_EQ(sorted_features(extract_features(m, FeatureKey::weight_layer(l))),
                  sorted_features(extract_features(p, FeatureKey::weight_layer(l))));
      }
    }
  }
}

TEST(Extractor, OutputStrictlyInsideUnitInterval) {
  Mlp ext = make_extractor(20, 6, 3, {16, 8});
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int i = 0; i < 50; ++i) {
    WeightVector q(20);
    for (auto& v : q) v = u(rng);
    const Tensor out = ext.forward(row_tensor(q));
    for (double y : out.values()) {
      EXPECT_GT(y, 0.0);
      EXPECT_LT(y, 1.0);
    }
  }
}

TEST(Detector, OutputHeadDependsOnMode) {
  Mlp log_loss = make_detector(10, CriticMode::LogLoss, 1, {8, 4});
  Mlp critic = make_detector(10, CriticMode::WassersteinDifference, 1, {8, 4});
  EXPECT_EQ(log_loss.output_activation(), OutputActivation::Sigmoid);
  EXPECT_EQ(critic.output_activation(), OutputActivation::Identity);
  EXPECT_EQ(log_loss.output_dim(), 1u);
  EXPECT_EQ(log_loss.layer_count(), 3u);
}

TEST(WeightFormat, RoundTripIsBitExactForEveryNetKind) {
  std::vector<Mlp> nets{make_classifier({7, 5, 3}, 1), make_extractor(15, 4, 2, {6, 5}),
                        make_detector(15, CriticMode::WassersteinDifference, 3, {4, 3})};
  for (const auto& net : nets) {
    std::stringstream buf;
    write_mlp(buf, net);
    std::string bytes = buf.str();
    Mlp back = read_mlp(buf);
    EXPECT_TRUE(back == net);
    EXPECT_EQ(back.kind(), net.kind());
    EXPECT_EQ(back.seed(), net.seed());
    EXPECT_EQ(back.output_activation(), net.output_activation());
    std::stringstream again;
    write_mlp(again, back);
    EXPECT_EQ(again.str(), bytes);
  }
}

TEST(WeightFormat, RejectsCorruptInput) {
  std::stringstream buf;
  write_mlp(buf, make_classifier({3, 2}, 1));
  std::string bytes = buf.str();
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::istringstream a(bad_magic);
  EXPECT_THROW(read_mlp(a), FormatError);
  std::istringstream b(bytes.substr(0, bytes.size() - 4));
  EXPECT_THROW(read_mlp(b), FormatError);
}

TEST(WeightFormat, ArchitectureHashDistinguishesDims) {
  EXPECT_EQ(architecture_hash({64, 128, 64, 10}), architecture_hash({64, 128, 64, 10}));
  EXPECT_NE(architecture_hash({64, 128, 64, 10}), architecture_hash({64, 64, 128, 10}));
}
