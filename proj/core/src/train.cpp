#include "medic/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "medic/error.hpp"
#include "medic/losses.hpp"
#include "medic/nn.hpp"

namespace medic::train {

TrainConfig default_config(data::Task task) {
  TrainConfig c;
  c.task = task;
  if (task == data::Task::seg) {
    c.epochs = 100;
    c.batch_size = 8;
    c.learning_rate = 1e-5;
  }
  return c;
}

void validate(const TrainConfig& c) {
  if (c.epochs == 0) throw ConfigError("epochs must be >= 1");
  if (c.batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
    throw ConfigError("learning rate must be positive");
  }
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0 && c.epsilon > 0.0)) {
    throw ConfigError("Adam betas must lie in [0,1) and epsilon must be positive");
  }
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
  if (c.eval_batch_size == 0) throw ConfigError("eval batch size must be >= 1");
}

namespace {

ad::Var task_loss(ad::Var scores, const std::vector<std::size_t>& labels, const Tensor& masks,
                  data::Task task) {
  if (task == data::Task::cls) return loss::softmax_cross_entropy(scores, labels);
  return nn::add(loss::sigmoid_bce(scores, masks), loss::dice_loss(nn::sigmoid(scores), masks));
}

double tensor_loss(const Tensor& logits, const std::vector<std::size_t>& labels, const Tensor& masks,
                   data::Task task) {
  if (task == data::Task::cls) return loss::cross_entropy(ops::softmax(logits, 1), labels);
  const Tensor p = ops::sigmoid(logits);
  return loss::bce(p, masks) + loss::dice_loss(p, masks);
}

void check_task(const zoo::Model& model, data::Task task) {
  if (zoo::is_segmentation(model.arch.config.kind) != (task == data::Task::seg)) {
    throw ConfigError("model kind " + zoo::to_string(model.arch.config.kind) + " does not fit task " +
                      data::to_string(task));
  }
}

std::vector<std::vector<std::size_t>> batches(std::vector<std::size_t> order, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + size)));
  }
  return out;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

/// Shared metric accumulation for train-mode and inference-mode passes.
class Accumulator {
 public:
  Accumulator(data::Task task, std::size_t classes, double threshold, metrics::Averaging averaging)
      : task_(task), cm_(classes), threshold_(threshold), averaging_(averaging) {}

  void add(const Tensor& logits, const std::vector<std::size_t>& labels, const Tensor& masks,
           double loss) {
    const std::size_t n = logits.dim(0);
    loss_ += loss * static_cast<double>(n);
    count_ += n;
    if (task_ == data::Task::cls) {
      for (std::size_t i = 0; i < n; ++i) cm_.add(labels[i], metrics::argmax_row(logits, i));
    } else {
      const metrics::MetricsReport r = metrics::segmentation_report(ops::sigmoid(logits), masks, threshold_);
      iou_ += *r.iou * static_cast<double>(n);
      dsc_ += *r.dsc * static_cast<double>(n);
      pix_ += *r.accuracy * static_cast<double>(n);
    }
  }

  [[nodiscard]] metrics::MetricsReport report() const {
    metrics::MetricsReport r;
    if (count_ == 0) return r;
    const double n = static_cast<double>(count_);
    if (task_ == data::Task::cls) {
      r = metrics::classification_report(cm_, averaging_);
    } else {
      r.accuracy = pix_ / n;
      r.iou = iou_ / n;
      r.dsc = dsc_ / n;
    }
    r.loss = loss_ / n;
    return r;
  }

 private:
  data::Task task_;
  metrics::ConfusionMatrix cm_;
  double threshold_;
  metrics::Averaging averaging_;
  double loss_ = 0, iou_ = 0, dsc_ = 0, pix_ = 0;
  std::size_t count_ = 0;
};

std::size_t class_count(const zoo::Model& model, data::Task task) {
  return task == data::Task::cls ? model.arch.config.num_classes : 1;
}

metrics::MetricsReport run_eval(const zoo::Model& model, const std::vector<data::Sample>& samples,
                                data::Task task, double threshold, metrics::Averaging averaging,
                                std::size_t batch_size) {
  if (samples.empty()) throw DataError("cannot evaluate on an empty sample list");
  Accumulator acc(task, class_count(model, task), threshold, averaging);
  for (const auto& idx : batches(iota(samples.size()), batch_size)) {
    const Tensor x = data::stack_inputs(samples, idx);
    const auto labels = task == data::Task::cls ? data::gather_labels(samples, idx) : std::vector<std::size_t>{};
    const Tensor masks = task == data::Task::seg ? data::stack_masks(samples, idx) : Tensor{};
    for (auto l : labels) {
      if (l >= model.arch.config.num_classes) throw DataError("label exceeds the model's class count");
    }
    const Tensor logits = zoo::predict(model, x, true);
    acc.add(logits, labels, masks, tensor_loss(logits, labels, masks, task));
  }
  return acc.report();
}

}  // namespace

double train_step(zoo::Model& model, optim::Adam& adam, const Tensor& inputs,
                  const std::vector<std::size_t>& labels, const Tensor& masks, data::Task task, Rng& rng,
                  Tensor* outputs) {
  ad::Tape tape;
  zoo::ForwardOptions opt;
  opt.mode = ops::Mode::train;
  opt.rng = &rng;
  zoo::BufferStore updated;
  opt.update_buffers = &updated;
  opt.logits = true;
  const zoo::ForwardTrace trace = zoo::forward(model, tape, tape.constant(inputs), opt);
  const ad::Var loss = task_loss(trace.output, labels, masks, task);
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw NumericError("non-finite training loss");
  if (outputs) *outputs = trace.output.value();

  const ad::GradientMap grads = tape.backward(loss);
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, var] : trace.params) by_name.emplace(name, grads.at(var));
  adam.step(model.params.entries(), by_name);
  for (auto& [key, stats] : updated) model.buffers[key] = std::move(stats);
  return value;
}

double batch_loss(const zoo::Model& model, const Tensor& inputs, const std::vector<std::size_t>& labels,
                  const Tensor& masks, data::Task task) {
  return tensor_loss(zoo::predict(model, inputs, true), labels, masks, task);
}

metrics::MetricsReport evaluate_cls(const zoo::Model& model, const std::vector<data::Sample>& samples,
                                    metrics::Averaging averaging, std::size_t batch_size) {
  return run_eval(model, samples, data::Task::cls, 0.5, averaging, batch_size);
}

metrics::MetricsReport evaluate_seg(const zoo::Model& model, const std::vector<data::Sample>& samples,
                                    double threshold, std::size_t batch_size) {
  return run_eval(model, samples, data::Task::seg, threshold, metrics::Averaging::macro, batch_size);
}

metrics::MetricsReport evaluate(const zoo::Model& model, const std::vector<data::Sample>& samples,
                                const TrainConfig& c) {
  return run_eval(model, samples, c.task, c.threshold, c.averaging, c.eval_batch_size);
}

TrainResult train(zoo::Model model, const data::SplitDataset& split, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  validate(config);
  check_task(model, config.task);
  if (split.train.empty()) throw DataError("training split is empty");

  optim::AdamConfig adam_config{config.learning_rate, config.beta1, config.beta2, config.epsilon};
  optim::Adam adam(adam_config);
  Rng root(config.seed);
  Rng shuffle_rng = root.split();
  Rng dropout_rng = root.split();

  TrainResult result{std::move(model), {}, {}};
  zoo::Model& m = result.model;
  std::vector<std::size_t> order = iota(split.train.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    Accumulator acc(config.task, class_count(m, config.task), config.threshold, config.averaging);
    for (const auto& idx : batches(order, config.batch_size)) {
      const Tensor x = data::stack_inputs(split.train, idx);
      const auto labels =
          config.task == data::Task::cls ? data::gather_labels(split.train, idx) : std::vector<std::size_t>{};
      const Tensor masks = config.task == data::Task::seg ? data::stack_masks(split.train, idx) : Tensor{};
      Tensor logits;
      double loss = 0.0;
      try {
        loss = train_step(m, adam, x, labels, masks, config.task, dropout_rng, &logits);
      } catch (const NumericError& e) {
        if (!config.abort_checkpoint.empty()) zoo::save_checkpoint(config.abort_checkpoint, m);
        throw NumericError(std::string(e.what()) + " in epoch " + std::to_string(epoch) +
                           (config.abort_checkpoint.empty()
                                ? std::string()
                                : "; last good model written to " + config.abort_checkpoint.string()));
      }
      acc.add(logits, labels, masks, loss);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = acc.report();
    if (!split.val.empty()) rec.val = evaluate(m, split.val, config);
    if (config.log) {
      *config.log << "epoch " << epoch << "/" << config.epochs << " train_loss=" << *rec.train.loss;
      if (rec.val.loss) *config.log << " val_loss=" << *rec.val.loss;
      if (rec.val.accuracy && config.task == data::Task::cls) *config.log << " val_acc=" << *rec.val.accuracy;
      if (rec.val.iou) *config.log << " val_iou=" << *rec.val.iou;
      *config.log << std::endl;
    }
    if (on_epoch) on_epoch(rec);
    result.history.push_back(std::move(rec));
  }
  if (!split.test.empty()) result.test = evaluate(m, split.test, config);
  return result;
}

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history,
                       const std::optional<metrics::MetricsReport>& test) {
  os << "epoch,split,loss,accuracy,recall,f1,iou,dsc\n";
  auto cell = [&](const std::optional<double>& v) {
    os << ',';
    if (v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.10g", *v);
      os << buf;
    }
  };
  auto row = [&](std::size_t epoch, const char* split, const metrics::MetricsReport& r) {
    os << epoch << ',' << split;
    cell(r.loss);
    cell(r.accuracy);
    cell(r.recall);
    cell(r.f1);
    cell(r.iou);
    cell(r.dsc);
    os << '\n';
  };
  for (const auto& rec : history) {
    row(rec.epoch, "train", rec.train);
    if (rec.val.loss) row(rec.epoch, "val", rec.val);
  }
  if (test && test->loss) row(history.empty() ? 0 : history.back().epoch, "test", *test);
}

}  // namespace medic::train
