#include "medic/calibration.hpp"

#include <ostream>
#include <sstream>
#include <stdexcept>

namespace medic::calib {

std::vector<Target> published_targets() {
  using zoo::ModelKind;
  return {
      {"cls/hybrid-1", ModelKind::medic_cls, 1, false, 301983},
      {"cls/hybrid-2", ModelKind::medic_cls, 2, false, 302026},
      {"cls/hybrid-3", ModelKind::medic_cls, 3, false, 302069},
      {"cls/cnn", ModelKind::cnn, 0, false, 532584},
      {"cls/inn", ModelKind::inn, 1, false, 245279},
      {"seg/unet", ModelKind::medic_seg, 0, false, 6988113},
      {"seg/unet-extra", ModelKind::medic_seg, 0, true, 11707729},
      {"seg/hybrid-1", ModelKind::medic_seg, 1, false, 6988139},
      {"seg/hybrid-2", ModelKind::medic_seg, 2, false, 6988165},
      {"seg/hybrid-3", ModelKind::medic_seg, 3, false, 6988191},
  };
}

std::size_t Trial::hits(const std::vector<Target>& targets) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) n += counts[i] == targets[i].expected;
  return n;
}

std::string describe(const zoo::Conventions& c, const zoo::CountPolicy& p, std::size_t num_classes) {
  std::ostringstream os;
  os << "bias=" << (c.involution_bias ? 1 : 0) << " norm=" << (c.bottleneck_norm ? 1 : 0)
     << " width=" << c.bottleneck_width << " r=" << c.involution_reduction
     << " pool=" << (c.pool_rounding == ops::PoolRounding::floor ? "floor" : "ceil")
     << " pad=" << (c.conv_padding == ops::Padding::same ? "same" : "valid")
     << " classes=" << num_classes << " running_stats=" << (p.include_running_stats ? 1 : 0);
  return os.str();
}

namespace {

std::size_t count_for(const Target& t, const zoo::Conventions& c, std::size_t num_classes,
                      zoo::CountPolicy policy) {
  zoo::ModelConfig cfg;
  cfg.kind = t.kind;
  cfg.n_involutions = t.n_involutions;
  cfg.extra_convs = t.extra_convs;
  cfg.conventions = c;
  cfg.num_classes = num_classes;
  cfg.input_shape = zoo::is_segmentation(t.kind) ? Shape{128, 128, 3} : Shape{28, 28, 3};
  try {
    return zoo::closed_form_parameter_count(zoo::describe(cfg), policy);
  } catch (const std::invalid_argument&) {
    return 0;  // convention not realizable for this model
  }
}

bool is_cls(const Target& t) { return !zoo::is_segmentation(t.kind); }

}  // namespace

SearchResult search() {
  SearchResult r;
  r.targets = published_targets();
  r.hit.assign(r.targets.size(), false);
  const std::size_t widths[] = {0, 1, 2, 3};
  const std::size_t reductions[] = {0, 1, 3};
  const std::size_t class_counts[] = {2, 7};
  for (bool bias : {true, false})
    for (bool norm : {false, true})
      for (std::size_t width : widths)
        for (std::size_t red : reductions) {
          if (width != 0 && red != 0) continue;  // an explicit width overrides r
          for (auto pool : {ops::PoolRounding::floor, ops::PoolRounding::ceil})
            for (auto pad : {ops::Padding::same, ops::Padding::valid})
              for (std::size_t classes : class_counts)
                for (bool running : {false, true}) {
                  Trial t;
                  t.conventions = {bias, norm, width, red, pool, pad};
                  t.policy.include_running_stats = running;
                  t.num_classes = classes;
                  for (const auto& target : r.targets)
                    t.counts.push_back(count_for(target, t.conventions, classes, t.policy));
                  r.trials.push_back(std::move(t));
                }
        }

  std::size_t best_cls_hits = 0, best_seg_hits = 0;
  for (std::size_t i = 0; i < r.trials.size(); ++i) {
    std::size_t cls_hits = 0, seg_hits = 0;
    for (std::size_t k = 0; k < r.targets.size(); ++k) {
      const bool h = r.trials[i].counts[k] == r.targets[k].expected;
      if (h) r.hit[k] = true;
      (is_cls(r.targets[k]) ? cls_hits : seg_hits) += h;
    }
    if (cls_hits > best_cls_hits) best_cls_hits = cls_hits, r.best_cls = i;
    if (seg_hits > best_seg_hits) best_seg_hits = seg_hits, r.best_seg = i;
  }
  return r;
}

void write_log(std::ostream& os, const SearchResult& r) {
  os << "# parameter-count calibration search\n";
  os << "# targets:";
  for (const auto& t : r.targets) os << ' ' << t.name << '=' << t.expected;
  os << "\n# " << r.trials.size() << " trials\n";
  for (const auto& t : r.trials) {
    os << describe(t.conventions, t.policy, t.num_classes) << " |";
    for (std::size_t k = 0; k < r.targets.size(); ++k) {
      os << ' ' << r.targets[k].name << '=' << t.counts[k];
      if (t.counts[k] == r.targets[k].expected) os << '*';
    }
    os << " | hits=" << t.hits(r.targets) << '\n';
  }
  os << "# summary\n";
  for (std::size_t k = 0; k < r.targets.size(); ++k) {
    os << r.targets[k].name << " expected=" << r.targets[k].expected << " hit=" << (r.hit[k] ? "yes" : "no")
       << '\n';
  }
  const Trial& bc = r.trials[r.best_cls];
  const Trial& bs = r.trials[r.best_seg];
  os << "best_cls: " << describe(bc.conventions, bc.policy, bc.num_classes) << '\n';
  os << "best_seg: " << describe(bs.conventions, bs.policy, bs.num_classes) << '\n';
}

}  // namespace medic::calib
