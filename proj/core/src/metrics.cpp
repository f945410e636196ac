#include "medic/metrics.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace medic::metrics {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw std::invalid_argument("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::size_t count) {
  if (truth >= k_ || predicted >= k_) throw std::invalid_argument("class index out of range");
  counts_[truth * k_ + predicted] += count;
}

std::size_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  return counts_.at(truth * k_ + predicted);
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::size_t ConfusionMatrix::false_positives(std::size_t c) const {
  std::size_t s = 0;
  for (std::size_t r = 0; r < k_; ++r)
    if (r != c) s += at(r, c);
  return s;
}

std::size_t ConfusionMatrix::false_negatives(std::size_t c) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < k_; ++p)
    if (p != c) s += at(c, p);
  return s;
}

std::size_t ConfusionMatrix::support(std::size_t c) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < k_; ++p) s += at(c, p);
  return s;
}

ClassMetrics class_metrics(const ConfusionMatrix& cm, std::size_t c) {
  ClassMetrics m;
  const double tp = static_cast<double>(cm.true_positives(c));
  const double fp = static_cast<double>(cm.false_positives(c));
  const double fn = static_cast<double>(cm.false_negatives(c));
  m.support = cm.support(c);
  m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

MetricsReport classification_report(const ConfusionMatrix& cm, Averaging averaging) {
  const std::size_t total = cm.total();
  if (total == 0) throw std::invalid_argument("classification_report on an empty confusion matrix");
  MetricsReport r;
  std::size_t trace = 0;
  double recall = 0, f1 = 0, weight = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    trace += cm.true_positives(c);
    const ClassMetrics m = class_metrics(cm, c);
    r.per_class.push_back(m);
    if (m.support == 0) continue;
    const double w = averaging == Averaging::macro ? 1.0 : static_cast<double>(m.support);
    recall += w * m.recall;
    f1 += w * m.f1;
    weight += w;
  }
  r.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  r.recall = recall / weight;
  r.f1 = f1 / weight;
  return r;
}

std::size_t argmax_row(const Tensor& scores, std::size_t row) {
  const std::size_t k = scores.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (scores[row * k + j] > scores[row * k + best]) best = j;
  return best;
}

double Overlap::iou() const {
  const std::size_t u = union_size();
  return u == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(u);
}

double Overlap::dsc() const {
  const std::size_t d = predicted + truth;
  return d == 0 ? 1.0 : 2.0 * static_cast<double>(intersection) / static_cast<double>(d);
}

Overlap overlap(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("overlap: mask size mismatch");
  Overlap o;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] != 0.0, t = truth[i] != 0.0;
    o.predicted += p;
    o.truth += t;
    o.intersection += p && t;
  }
  return o;
}

MetricsReport segmentation_report(const Tensor& probs, const Tensor& masks, double threshold) {
  if (probs.shape() != masks.shape() || probs.rank() != 4) {
    throw std::invalid_argument("segmentation_report expects matching [N,H,W,1] tensors");
  }
  const std::size_t n = probs.dim(0), per = probs.size() / n;
  double iou = 0, dsc = 0;
  std::size_t correct = 0;
  std::vector<double> pred(per), truth(per);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < per; ++i) {
      pred[i] = probs[b * per + i] >= threshold ? 1.0 : 0.0;
      truth[i] = masks[b * per + i] != 0.0 ? 1.0 : 0.0;
      correct += pred[i] == truth[i];
    }
    const Overlap o = overlap(pred, truth);
    iou += o.iou();
    dsc += o.dsc();
  }
  MetricsReport r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(probs.size());
  r.iou = iou / static_cast<double>(n);
  r.dsc = dsc / static_cast<double>(n);
  return r;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(17);
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) os << key << '=' << *v << '\n';
  };
  put("loss", loss);
  put("accuracy", accuracy);
  put("recall", recall);
  put("f1", f1);
  put("iou", iou);
  put("dsc", dsc);
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    os << "class" << c << ".support=" << per_class[c].support << '\n';
    os << "class" << c << ".precision=" << per_class[c].precision << '\n';
    os << "class" << c << ".recall=" << per_class[c].recall << '\n';
    os << "class" << c << ".f1=" << per_class[c].f1 << '\n';
  }
  return os.str();
}

}  // namespace medic::metrics
