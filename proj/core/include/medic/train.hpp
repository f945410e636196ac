#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "medic/data.hpp"
#include "medic/metrics.hpp"
#include "medic/model.hpp"
#include "medic/optim.hpp"

namespace medic::train {

struct TrainConfig {
  data::Task task = data::Task::cls;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  /// Segmentation prediction threshold.
  double threshold = 0.5;
  metrics::Averaging averaging = metrics::Averaging::macro;
  std::size_t eval_batch_size = 32;
  /// Where the last good model is written if the loss becomes non-finite.
  std::filesystem::path abort_checkpoint;
  /// Per-epoch progress lines; null for silence.
  std::ostream* log = nullptr;
};

/// cls: 30 epochs, batch 16, lr 1e-4. seg: 100 epochs, batch 8, lr 1e-5.
TrainConfig default_config(data::Task task);
/// Throws ConfigError on an unusable configuration.
void validate(const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  /// Running loss and train-mode metrics over the epoch's minibatches.
  metrics::MetricsReport train;
  /// Inference-mode loss and metrics on the validation split (empty if none).
  metrics::MetricsReport val;
};

struct TrainResult {
  zoo::Model model;
  std::vector<EpochRecord> history;
  metrics::MetricsReport test;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch Adam training with a seeded shuffle each epoch, followed by
/// validation after each epoch and a final test evaluation. Throws
/// NumericError (after dumping `abort_checkpoint`) on a non-finite loss.
TrainResult train(zoo::Model model, const data::SplitDataset& split, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// One optimization step on a prepared batch; returns the pre-update loss.
/// `targets` holds masks for segmentation; `labels` is used for
/// classification.
double train_step(zoo::Model& model, optim::Adam& adam, const Tensor& inputs,
                  const std::vector<std::size_t>& labels, const Tensor& masks, data::Task task,
                  Rng& rng, Tensor* outputs = nullptr);

/// Loss of a batch in inference mode (cross-entropy, or BCE + Dice).
double batch_loss(const zoo::Model& model, const Tensor& inputs,
                  const std::vector<std::size_t>& labels, const Tensor& masks, data::Task task);

metrics::MetricsReport evaluate_cls(const zoo::Model& model, const std::vector<data::Sample>& samples,
                                    metrics::Averaging averaging = metrics::Averaging::macro,
                                    std::size_t batch_size = 32);
metrics::MetricsReport evaluate_seg(const zoo::Model& model, const std::vector<data::Sample>& samples,
                                    double threshold = 0.5, std::size_t batch_size = 16);
metrics::MetricsReport evaluate(const zoo::Model& model, const std::vector<data::Sample>& samples,
                                const TrainConfig& config);

/// Header `epoch,split,loss,accuracy,recall,f1,iou,dsc`; one train and one
/// val row per epoch, then a test row when given.
void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history,
                       const std::optional<metrics::MetricsReport>& test = std::nullopt);

}  // namespace medic::train
