#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "medic/error.hpp"
#include "medic/losses.hpp"
#include "medic/metrics.hpp"
#include "medic/model.hpp"
#include "medic/nn.hpp"
#include "medic/optim.hpp"
#include "medic/train.hpp"

using namespace medic;

// ============================================================================
// Losses
// ============================================================================

TEST(LossTest, PerfectPredictionHasTinyCrossEntropy) {
  const Tensor probs({2, 3}, {1, 0, 0, 0, 0, 1});
  EXPECT_LE(loss::cross_entropy(probs, {0, 2}), 1e-6);
}

TEST(LossTest, HalfProbabilitiesGiveLn2) {
  Tensor masks({2, 2, 2, 1}, {0, 1, 1, 0, 1, 1, 0, 0});
  EXPECT_NEAR(loss::bce(Tensor::full(masks.shape(), 0.5), masks), std::log(2.0), 1e-9);
}

TEST(LossTest, MatchesLoopOracles) {
  Rng rng(21);
  const Tensor p = uniform_tensor(rng, {3, 4, 4, 1}, 0.01, 0.99);
  Tensor m(p.shape());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.bernoulli(0.4);
  double bce = 0, inter = 0, ps = 0, ms = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    bce -= m[i] * std::log(p[i]) + (1 - m[i]) * std::log(1 - p[i]);
    inter += p[i] * m[i];
    ps += p[i];
    ms += m[i];
  }
  EXPECT_NEAR(loss::bce(p, m), bce / static_cast<double>(p.size()), 1e-10);
  EXPECT_NEAR(loss::dice_loss(p, m), 1 - (2 * inter + 1) / (ps + ms + 1), 1e-10);

  Tensor probs = uniform_tensor(rng, {4, 3}, 0.05, 1.0);
  for (std::size_t r = 0; r < 4; ++r) {
    const double s = probs[r * 3] + probs[r * 3 + 1] + probs[r * 3 + 2];
    for (std::size_t c = 0; c < 3; ++c) probs[r * 3 + c] /= s;
  }
  const std::vector<std::size_t> labels{2, 0, 1, 1};
  double ce = 0;
  for (std::size_t r = 0; r < 4; ++r) ce -= std::log(probs[r * 3 + labels[r]]);
  EXPECT_NEAR(loss::cross_entropy(probs, labels), ce / 4, 1e-10);
}

TEST(LossTest, FusedLossesMatchComposedOnes) {
  Rng rng(22);
  const Tensor z = normal_tensor(rng, {3, 4}, 0, 2);
  const std::vector<std::size_t> labels{1, 3, 0};
  ad::Tape tape;
  const ad::Var zl = tape.leaf(z);
  EXPECT_NEAR(loss::softmax_cross_entropy(zl, labels).value().item(),
              loss::cross_entropy(nn::softmax(zl, 1), labels).value().item(), 1e-12);
  Tensor m(z.shape());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = i % 3 == 0;
  EXPECT_NEAR(loss::sigmoid_bce(zl, m).value().item(), loss::bce(nn::sigmoid(zl), m).value().item(), 1e-9);
}

TEST(LossTest, LabelOutOfRangeThrows) {
  EXPECT_THROW(loss::cross_entropy(Tensor({1, 2}, {0.5, 0.5}), {2}), std::invalid_argument);
}

// ============================================================================
// Adam
// ============================================================================

TEST(AdamTest, ZeroGradientLeavesParameterAlone) {
  Tensor p = Tensor::from({1, -2});
  optim::AdamSlot slot{Tensor::zeros({2}), Tensor::zeros({2})};
  optim::adam_step(p, Tensor::zeros({2}), slot, {}, 1);
  EXPECT_EQ(p.values(), (std::vector<double>{1, -2}));
  EXPECT_EQ(slot.m, Tensor::zeros({2}));
  EXPECT_EQ(slot.v, Tensor::zeros({2}));
}

TEST(AdamTest, MatchesScalarOracle) {
  const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double grads[] = {1.0, -0.5, 2.0, 0.25, -3.0};
  double theta = 0, m = 0, v = 0;
  Tensor p = Tensor::from({0.0});
  optim::AdamSlot slot{Tensor::zeros({1}), Tensor::zeros({1})};
  for (int t = 1; t <= 5; ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    theta -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    optim::adam_step(p, Tensor::from({g}), slot, {lr, b1, b2, eps}, static_cast<std::size_t>(t));
    EXPECT_NEAR(p[0], theta, 1e-15) << "step " << t;
  }
  // First step moves by lr * g / (|g| + eps).
  Tensor q = Tensor::from({0.0});
  optim::AdamSlot fresh{Tensor::zeros({1}), Tensor::zeros({1})};
  optim::adam_step(q, Tensor::from({1.0}), fresh, {lr, b1, b2, eps}, 1);
  EXPECT_NEAR(q[0], -lr / (1 + eps), 1e-18);
}

TEST(AdamTest, NonFiniteGradientIsRejectedBeforeAnyUpdate) {
  optim::Adam adam({});
  std::vector<std::pair<std::string, Tensor>> params{{"a", Tensor::from({1})}, {"b", Tensor::from({2})}};
  std::map<std::string, Tensor> grads{{"a", Tensor::from({1})}, {"b", Tensor::from({NAN})}};
  EXPECT_THROW(adam.step(params, grads), NumericError);
  EXPECT_EQ(params[0].second[0], 1.0);
}

// ============================================================================
// Metrics
// ============================================================================

TEST(MetricsTest, PerfectPredictions) {
  metrics::ConfusionMatrix cm(3);
  for (std::size_t c = 0; c < 3; ++c) cm.add(c, c, 4);
  const auto r = metrics::classification_report(cm);
  EXPECT_EQ(*r.accuracy, 1.0);
  EXPECT_EQ(*r.recall, 1.0);
  EXPECT_EQ(*r.f1, 1.0);
}

TEST(MetricsTest, HandConfusionMatrix) {
  // Positive class 1: TP 3, FP 1, FN 2, TN 4.
  metrics::ConfusionMatrix cm(2);
  cm.add(1, 1, 3);
  cm.add(0, 1, 1);
  cm.add(1, 0, 2);
  cm.add(0, 0, 4);
  const auto pos = metrics::class_metrics(cm, 1);
  EXPECT_NEAR(pos.recall, 0.6, 1e-12);
  EXPECT_NEAR(pos.precision, 0.75, 1e-12);
  EXPECT_NEAR(pos.f1, 2.0 / 3.0, 1e-12);
  const auto r = metrics::classification_report(cm);
  EXPECT_NEAR(*r.accuracy, 0.7, 1e-12);
  // Class 0: recall 4/5, precision 4/6, F1 8/11.
  EXPECT_NEAR(*r.recall, (0.6 + 0.8) / 2, 1e-12);
  EXPECT_NEAR(*r.f1, (2.0 / 3.0 + 8.0 / 11.0) / 2, 1e-12);
  const auto w = metrics::classification_report(cm, metrics::Averaging::weighted);
  EXPECT_NEAR(*w.recall, (5 * 0.6 + 5 * 0.8) / 10, 1e-12);
}

TEST(MetricsTest, MacroRecallIgnoresLabelPermutation) {
  metrics::ConfusionMatrix a(3), b(3);
  const std::size_t perm[] = {2, 0, 1};
  const std::size_t cells[][3] = {{0, 0, 5}, {0, 1, 2}, {1, 1, 4}, {1, 2, 3}, {2, 2, 6}, {2, 0, 1}};
  for (const auto& c : cells) {
    a.add(c[0], c[1], c[2]);
    b.add(perm[c[0]], perm[c[1]], c[2]);
  }
  EXPECT_NEAR(*metrics::classification_report(a).recall, *metrics::classification_report(b).recall, 1e-15);
}

TEST(MetricsTest, QuadrantOverlap) {
  std::vector<double> upper(16, 0.0), left(16, 0.0);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      upper[y * 4 + x] = y < 2;
      left[y * 4 + x] = x < 2;
    }
  const auto o = metrics::overlap(upper, left);
  EXPECT_EQ(o.intersection, 4u);
  EXPECT_EQ(o.union_size(), 12u);
  EXPECT_DOUBLE_EQ(o.iou(), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(o.dsc(), 0.5);
}

TEST(MetricsTest, EmptyMasksAgree) {
  const std::vector<double> none(9, 0.0);
  const auto o = metrics::overlap(none, none);
  EXPECT_EQ(o.iou(), 1.0);
  EXPECT_EQ(o.dsc(), 1.0);
}

TEST(MetricsTest, DiceIouIdentityOnRandomMasks) {
  Rng rng(30);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(64), g(64);
    const double fill = rng.uniform();
    for (std::size_t i = 0; i < 64; ++i) {
      p[i] = rng.bernoulli(fill);
      g[i] = rng.bernoulli(fill);
    }
    const auto o = metrics::overlap(p, g);
    // Over the integers: 2I / (P + G) = 2I / (U + I) since P + G = U + I.
    EXPECT_EQ(o.predicted + o.truth, o.union_size() + o.intersection);
    EXPECT_NEAR(o.dsc(), 2 * o.iou() / (1 + o.iou()), 1e-15);
    EXPECT_LE(o.iou(), o.dsc());
  }
}

TEST(MetricsTest, SegmentationReportAveragesPerImage) {
  Tensor probs({2, 2, 2, 1}, {0.9, 0.9, 0.1, 0.1, 0.2, 0.2, 0.2, 0.2});
  Tensor masks({2, 2, 2, 1}, {1, 0, 0, 0, 0, 0, 0, 0});
  const auto r = metrics::segmentation_report(probs, masks);
  EXPECT_DOUBLE_EQ(*r.iou, (0.5 + 1.0) / 2);
  EXPECT_DOUBLE_EQ(*r.dsc, (2.0 / 3.0 + 1.0) / 2);
  EXPECT_DOUBLE_EQ(*r.accuracy, 7.0 / 8.0);
}

// ============================================================================
// Training loop
// ============================================================================

namespace {

data::SplitDataset small_cls_split(std::uint64_t seed, std::size_t n = 60) {
  return data::split_dataset(data::synth_blobs(data::Task::cls, n, 28, seed), {0.2, 0.1, seed, true});
}

train::TrainConfig quick_config(std::size_t epochs) {
  train::TrainConfig tc = train::default_config(data::Task::cls);
  tc.epochs = epochs;
  return tc;
}

}  // namespace

TEST(TrainTest, PublishedDefaults) {
  const auto cls = train::default_config(data::Task::cls);
  EXPECT_EQ(cls.epochs, 30u);
  EXPECT_EQ(cls.batch_size, 16u);
  EXPECT_DOUBLE_EQ(cls.learning_rate, 1e-4);
  const auto seg = train::default_config(data::Task::seg);
  EXPECT_EQ(seg.epochs, 100u);
  EXPECT_EQ(seg.batch_size, 8u);
  EXPECT_DOUBLE_EQ(seg.learning_rate, 1e-5);
  EXPECT_DOUBLE_EQ(cls.beta1, 0.9);
  EXPECT_DOUBLE_EQ(cls.beta2, 0.999);
  EXPECT_DOUBLE_EQ(cls.epsilon, 1e-8);
}

TEST(TrainTest, InvalidConfigIsConfigError) {
  auto tc = quick_config(0);
  EXPECT_THROW(train::validate(tc), ConfigError);
  tc = quick_config(1);
  tc.learning_rate = -1;
  EXPECT_THROW(train::validate(tc), ConfigError);
}

TEST(TrainTest, OneStepDecreasesBatchLoss) {
  // Same dropout draw before and after the update, so only the parameters differ.
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    zoo::Model model = zoo::build_medic_cls({28, 28, 3}, 2, 1, seed);
    const auto samples = data::synth_blobs(data::Task::cls, 16, 28, seed);
    std::vector<std::size_t> idx(16);
    std::iota(idx.begin(), idx.end(), 0);
    const Tensor x = data::stack_inputs(samples, idx);
    const auto labels = data::gather_labels(samples, idx);
    optim::Adam adam({1e-4, 0.9, 0.999, 1e-8});
    Rng first(seed);
    const double before = train::train_step(model, adam, x, labels, {}, data::Task::cls, first);
    Rng second(seed);
    const double after = train::train_step(model, adam, x, labels, {}, data::Task::cls, second);
    EXPECT_LT(after, before) << "seed " << seed;
  }
}

TEST(TrainTest, HistoryHasOneRecordPerEpoch) {
  const auto split = small_cls_split(1);
  const auto result = train::train(zoo::build_medic_cls(), split, quick_config(3));
  ASSERT_EQ(result.history.size(), 3u);
  EXPECT_EQ(result.history.back().epoch, 3u);
  EXPECT_TRUE(result.history[0].val.loss.has_value());
  EXPECT_TRUE(result.test.accuracy.has_value());
}

TEST(TrainTest, SameSeedSameCheckpoint) {
  const auto split = small_cls_split(2);
  auto bytes = [&] {
    std::stringstream ss;
    zoo::write_checkpoint(ss, train::train(zoo::build_medic_cls(), split, quick_config(2)).model);
    return ss.str();
  };
  EXPECT_EQ(bytes(), bytes());
}

TEST(TrainTest, OverfitsSmallSeparableSet) {
  // 64 position-separable blobs reach 100% training accuracy within 200 epochs.
  const auto samples = data::synth_blobs(data::Task::cls, 64, 28, 5);
  zoo::Model model = zoo::build_medic_cls({28, 28, 3}, 2, 1, 5);
  optim::Adam adam({1e-4, 0.9, 0.999, 1e-8});
  Rng rng(5);
  std::vector<std::size_t> order(64);
  std::iota(order.begin(), order.end(), 0);
  double accuracy = 0;
  std::size_t epoch = 0;
  for (; epoch < 200 && accuracy < 1.0; ++epoch) {
    rng.shuffle(order);
    for (std::size_t b = 0; b < 64; b += 16) {
      const std::span<const std::size_t> idx(order.data() + b, 16);
      train::train_step(model, adam, data::stack_inputs(samples, idx), data::gather_labels(samples, idx), {},
                        data::Task::cls, rng);
    }
    accuracy = *train::evaluate_cls(model, samples).accuracy;
  }
  EXPECT_EQ(accuracy, 1.0) << "after " << epoch << " epochs";
}

TEST(TrainTest, SegmentationStepRuns) {
  const auto samples = data::synth_blobs(data::Task::seg, 8, 32, 3);
  const auto split = data::split_dataset(samples, {0.25, 0.0, 3, false});
  train::TrainConfig tc = train::default_config(data::Task::seg);
  tc.epochs = 1;
  tc.batch_size = 2;
  const auto result = train::train(zoo::build_medic_seg({32, 32, 3}, 1, 8, 3), split, tc);
  EXPECT_TRUE(result.test.iou.has_value());
  EXPECT_TRUE(result.test.dsc.has_value());
  EXPECT_FALSE(result.test.recall.has_value());
}

TEST(TrainTest, TaskMismatchIsConfigError) {
  const auto split = small_cls_split(4);
  train::TrainConfig tc = train::default_config(data::Task::seg);
  tc.epochs = 1;
  EXPECT_THROW(train::train(zoo::build_medic_cls(), split, tc), ConfigError);
}

TEST(HistoryCsvTest, HeaderAndEmptyCells) {
  train::EpochRecord rec;
  rec.epoch = 1;
  rec.train.loss = 0.5;
  rec.train.accuracy = 0.75;
  rec.val.loss = 0.25;
  metrics::MetricsReport test;
  test.loss = 1;
  test.iou = 0.5;
  std::ostringstream os;
  train::write_history_csv(os, {rec}, test);
  EXPECT_EQ(os.str(),
            "epoch,split,loss,accuracy,recall,f1,iou,dsc\n"
            "1,train,0.5,0.75,,,,\n"
            "1,val,0.25,,,,,\n"
            "1,test,1,,,,0.5,\n");
}
