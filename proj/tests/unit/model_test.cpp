#include <gtest/gtest.h>

#include <sstream>

#include "medic/error.hpp"
#include "medic/model.hpp"
#include "medic/rng.hpp"

using namespace medic;
using namespace medic::zoo;

namespace {

std::size_t hidden_dense(const Architecture& a) {
  std::size_t n = 0;
  for (const auto& l : a.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&l.params)) n += !d->classifier;
  }
  return n;
}

ModelConfig config(ModelKind kind, std::size_t inv, Shape shape = {28, 28, 3}) {
  ModelConfig c;
  c.kind = kind;
  c.conventions = paper_conventions(kind);
  c.input_shape = std::move(shape);
  c.n_involutions = inv;
  return c;
}

std::size_t paper_count(ModelConfig c) {
  return closed_form_parameter_count(describe(c), kPaperCountPolicy);
}

}  // namespace

// ============================================================================
// Architectures
// ============================================================================

TEST(ArchitectureTest, MedicClsLayerInventory) {
  ModelConfig c = config(ModelKind::medic_cls, 1);
  c.num_classes = 7;
  const Architecture a = describe(c);
  EXPECT_EQ(a.count(LayerKind::conv), 2u);
  EXPECT_EQ(a.count(LayerKind::involution), 1u);
  EXPECT_EQ(hidden_dense(a), 4u);
  EXPECT_EQ(a.output_shapes.back(), (Shape{7}));
}

TEST(ArchitectureTest, MedicClsShapeTrace) {
  // Three floor-mode pools: 28 -> 14 -> 7 -> 3.
  const Architecture a = describe(config(ModelKind::medic_cls, 1));
  EXPECT_EQ(a.output_shapes[a.index_of("inv_pool")], (Shape{14, 14, 3}));
  EXPECT_EQ(a.output_shapes[a.index_of("conv1_pool")], (Shape{7, 7, 64}));
  EXPECT_EQ(a.output_shapes[a.index_of("conv2_pool")], (Shape{3, 3, 128}));
  EXPECT_EQ(a.output_shapes[a.index_of("flatten")], (Shape{1152}));
}

TEST(ArchitectureTest, BaselineInventories) {
  const Architecture cnn = describe(config(ModelKind::cnn, 0));
  EXPECT_EQ(cnn.count(LayerKind::conv), 3u);
  EXPECT_EQ(cnn.count(LayerKind::involution), 0u);
  const Architecture inn = describe(config(ModelKind::inn, 1));
  EXPECT_EQ(inn.count(LayerKind::involution), 1u);
  EXPECT_EQ(inn.count(LayerKind::conv), 0u);
  EXPECT_LT(closed_form_parameter_count(inn), closed_form_parameter_count(cnn));
}

TEST(ArchitectureTest, SegmentationBlocks) {
  const Architecture a = describe(config(ModelKind::medic_seg, 1, {128, 128, 3}));
  EXPECT_EQ(a.count(LayerKind::conv_transpose), 5u);
  EXPECT_EQ(a.count(LayerKind::concat_skip), 5u);
  EXPECT_EQ(a.output_shapes.back(), (Shape{128, 128, 1}));
  EXPECT_EQ(a.output_shapes[a.index_of("enc6_conv1")], (Shape{4, 4, 512}));
}

TEST(ArchitectureTest, InvalidConfigurationsNameTheProblem) {
  EXPECT_THROW(describe(config(ModelKind::medic_cls, 0)), std::invalid_argument);
  EXPECT_THROW(describe(config(ModelKind::medic_cls, 4)), std::invalid_argument);
  ModelConfig c = config(ModelKind::medic_seg, 1, {100, 100, 3});
  try {
    describe(c);
    FAIL() << "expected a shape error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("dec"), std::string::npos) << e.what();
  }
  c.input_shape = {128, 128, 3};
  c.width_divisor = 3;
  EXPECT_THROW(describe(c), std::invalid_argument);
}

TEST(ArchitectureTest, ConfigTextRoundTrip) {
  ModelConfig c = config(ModelKind::medic_seg, 2, {64, 64, 1});
  c.width_divisor = 4;
  c.extra_convs = true;
  c.seed = 99;
  c.conventions.pool_rounding = ops::PoolRounding::ceil;
  const ModelConfig back = model_config_from_text(to_text(c));
  EXPECT_EQ(to_text(back), to_text(c));
}

// ============================================================================
// Parameter counts
// ============================================================================

TEST(ParamCountTest, ClosedFormLayers) {
  EXPECT_EQ(layer_parameter_count({"d", DenseLayer{64}}, {96}), 6208u);
  EXPECT_EQ(layer_parameter_count({"c", ConvLayer{128, 3}}, {7, 7, 64}), 73856u);
  EXPECT_EQ(layer_parameter_count({"b", BatchNormLayer{}}, {7, 7, 64}), 128u);
  EXPECT_EQ(layer_parameter_count({"b", BatchNormLayer{}}, {7, 7, 64}, kPaperCountPolicy), 256u);
  EXPECT_EQ(layer_parameter_count({"t", ConvTransposeLayer{256}}, {8, 8, 512}), 2u * 2 * 512 * 256 + 256);
}

TEST(ParamCountTest, InvolutionLayerCount) {
  // C = 3, automatic r = 3, width 1: W0 3 + b0 1 + W1 9 + b1 9 + norm 2 (4 with statistics).
  InvolutionLayer inv;
  inv.bottleneck_norm = true;
  EXPECT_EQ(layer_parameter_count({"i", inv}, {8, 8, 3}), 24u);
  EXPECT_EQ(layer_parameter_count({"i", inv}, {8, 8, 3}, kPaperCountPolicy), 26u);
  inv.bottleneck_width = 2;
  EXPECT_EQ(layer_parameter_count({"i", inv}, {8, 8, 3}, kPaperCountPolicy), 6u + 2 + 18 + 9 + 8);
}

TEST(ParamCountTest, PublishedSegmentationTotals) {
  ModelConfig c = config(ModelKind::medic_seg, 0, {128, 128, 3});
  EXPECT_EQ(paper_count(c), 6988113u);
  c.n_involutions = 1;
  EXPECT_EQ(paper_count(c), 6988139u);
  c.n_involutions = 2;
  EXPECT_EQ(paper_count(c), 6988165u);
  c.n_involutions = 3;
  EXPECT_EQ(paper_count(c), 6988191u);
  c.n_involutions = 0;
  c.extra_convs = true;
  EXPECT_EQ(paper_count(c), 11707729u);
}

TEST(ParamCountTest, ClassificationDeltasAreConstant) {
  const std::size_t h1 = paper_count(config(ModelKind::medic_cls, 1));
  const std::size_t h2 = paper_count(config(ModelKind::medic_cls, 2));
  const std::size_t h3 = paper_count(config(ModelKind::medic_cls, 3));
  EXPECT_EQ(h2 - h1, 43u);
  EXPECT_EQ(h3 - h2, 43u);
}

TEST(ParamCountTest, BuiltModelMatchesClosedForm) {
  for (ModelKind kind : {ModelKind::medic_cls, ModelKind::cnn, ModelKind::inn}) {
    const Model m = build(config(kind, kind == ModelKind::cnn ? 0 : 1));
    for (CountPolicy p : {CountPolicy{}, kPaperCountPolicy}) {
      EXPECT_EQ(count_parameters(m, p), closed_form_parameter_count(m.arch, p)) << to_string(kind);
    }
  }
}

// ============================================================================
// Forward pass
// ============================================================================

TEST(ForwardTest, ClassifierRowsSumToOne) {
  const Model m = build_medic_cls({28, 28, 3}, 3, 1, 5);
  Rng rng(1);
  const Tensor y = predict(m, uniform_tensor(rng, {2, 28, 28, 3}, 0, 1));
  ASSERT_EQ(y.shape(), (Shape{2, 3}));
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(y[r * 3] + y[r * 3 + 1] + y[r * 3 + 2], 1.0, 1e-12);
}

TEST(ForwardTest, SegmenterOutputsProbabilities) {
  const Model m = build_medic_seg({128, 128, 3}, 1, 4, 2);
  Rng rng(2);
  const Tensor y = predict(m, uniform_tensor(rng, {1, 128, 128, 3}, 0, 1));
  ASSERT_EQ(y.shape(), (Shape{1, 128, 128, 1}));
  for (double v : y.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(ForwardTest, SameSeedSameOutput) {
  Rng rng(3);
  const Tensor x = uniform_tensor(rng, {2, 28, 28, 3}, 0, 1);
  EXPECT_EQ(predict(build_medic_cls({28, 28, 3}, 2, 1, 7), x), predict(build_medic_cls({28, 28, 3}, 2, 1, 7), x));
  EXPECT_NE(predict(build_medic_cls({28, 28, 3}, 2, 1, 7), x), predict(build_medic_cls({28, 28, 3}, 2, 1, 8), x));
}

TEST(ForwardTest, WrongInputShapeThrows) {
  const Model m = build_medic_cls();
  EXPECT_THROW(predict(m, Tensor({1, 32, 32, 3})), std::invalid_argument);
}

TEST(ForwardTest, LogitsStopBeforeSoftmax) {
  const Model m = build_medic_cls({28, 28, 3}, 2, 1, 1);
  Rng rng(4);
  const Tensor x = uniform_tensor(rng, {1, 28, 28, 3}, 0, 1);
  const Tensor z = predict(m, x, true);
  const Tensor p = predict(m, x);
  const double e0 = std::exp(z[0] - z[1]);
  EXPECT_NEAR(p[0], e0 / (e0 + 1), 1e-12);
}

// ============================================================================
// Checkpoints
// ============================================================================

TEST(CheckpointTest, RoundTripPreservesModel) {
  const Model m = build_medic_seg({32, 32, 3}, 2, 8, 3);
  std::stringstream ss;
  write_checkpoint(ss, m);
  const Model back = read_checkpoint(ss);
  EXPECT_EQ(to_text(back.arch.config), to_text(m.arch.config));
  ASSERT_EQ(back.params.size(), m.params.size());
  for (const auto& [name, value] : m.params.entries()) EXPECT_EQ(back.params.get(name), value) << name;
  EXPECT_EQ(back.buffers.size(), m.buffers.size());
  Rng rng(5);
  const Tensor x = uniform_tensor(rng, {1, 32, 32, 3}, 0, 1);
  EXPECT_EQ(predict(back, x), predict(m, x));
}

TEST(CheckpointTest, CorruptInputIsDataError) {
  const Model m = build_medic_cls();
  std::stringstream ss;
  write_checkpoint(ss, m);
  std::string bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint(truncated), DataError);
  bytes[0] = 'X';
  std::stringstream bad_magic(bytes);
  EXPECT_THROW(read_checkpoint(bad_magic), DataError);
}
