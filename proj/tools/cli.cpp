#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "medic/calibration.hpp"
#include "medic/data.hpp"
#include "medic/error.hpp"
#include "medic/explain.hpp"
#include "medic/gradcheck_suite.hpp"
#include "medic/image_io.hpp"
#include "medic/model.hpp"
#include "medic/train.hpp"

namespace medic::cli {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Value parsing

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ConfigError("invalid value for '" + key + "': '" + value + "' (expected " + expected + ")");
}

const std::string& require(const Values& v, const std::string& key) {
  const auto it = v.find(key);
  if (it == v.end()) throw ConfigError("missing setting '" + key + "'");
  return it->second;
}

template <typename T>
T get_integer(const Values& v, const std::string& key) {
  const std::string& s = require(v, key);
  T out{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || ptr != s.data() + s.size()) bad_value(key, s, "a non-negative integer");
  return out;
}

std::size_t get_size(const Values& v, const std::string& key) {
  return get_integer<std::size_t>(v, key);
}

std::uint64_t get_u64(const Values& v, const std::string& key) {
  return get_integer<std::uint64_t>(v, key);
}

double get_double(const Values& v, const std::string& key) {
  const std::string& s = require(v, key);
  double out = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(out)) {
    bad_value(key, s, "a number");
  }
  return out;
}

bool get_bool(const Values& v, const std::string& key) {
  const std::string& s = require(v, key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value(key, s, "true or false");
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

std::string num_text(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

std::string fixed_text(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

// ---------------------------------------------------------------------------
// Settings per command

const std::vector<std::string> kModelKeys = {
    "task",          "model",       "involutions",     "image_size",      "channels",
    "width_divisor", "extra_convs", "involution_bias", "bottleneck_norm", "bottleneck_width",
    "involution_reduction", "pool_rounding", "conv_padding"};
const std::vector<std::string> kDataKeys = {"data", "samples", "noise", "test_fraction",
                                            "val_fraction"};
const std::vector<std::string> kTrainKeys = {"epochs",    "batch",     "lr",  "seed",
                                             "threshold", "averaging", "out", "tag"};

std::vector<std::string> keys_for(const std::string& command) {
  std::vector<std::string> keys;
  auto append = [&](const std::vector<std::string>& more) {
    keys.insert(keys.end(), more.begin(), more.end());
  };
  if (command == "train" || command == "ablate") {
    append(kModelKeys);
    append(kDataKeys);
    append(kTrainKeys);
    if (command == "ablate") keys.push_back("seeds");
  } else if (command == "eval") {
    append({"checkpoint", "split"});
    append(kDataKeys);
    append({"seed", "threshold", "averaging", "batch", "out", "tag"});
  } else if (command == "param-count") {
    append(kModelKeys);
    keys.push_back("classes");
  } else if (command == "grad-check") {
    append({"ops", "seeds"});
  } else if (command == "explain") {
    append(kModelKeys);
    append({"classes", "seed", "checkpoint", "method", "layer", "input", "kernel_reduction",
            "palette", "class", "noise", "out", "tag"});
  } else if (command == "calibrate") {
    append({"log", "out", "tag"});
  }
  return keys;
}

bool has_key(const std::vector<std::string>& keys, const std::string& key) {
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

zoo::ModelKind resolve_kind(const std::string& model, data::Task task) {
  if (model == "medic") {
    return task == data::Task::seg ? zoo::ModelKind::medic_seg : zoo::ModelKind::medic_cls;
  }
  if (model == "unet" || model == "medic-seg") return zoo::ModelKind::medic_seg;
  if (model == "medic-cls") return zoo::ModelKind::medic_cls;
  if (model == "cnn") return zoo::ModelKind::cnn;
  if (model == "inn") return zoo::ModelKind::inn;
  bad_value("model", model, "medic, medic-cls, medic-seg, unet, cnn or inn");
}

const char* rounding_name(ops::PoolRounding r) {
  return r == ops::PoolRounding::ceil ? "ceil" : "floor";
}

const char* padding_name(ops::Padding p) { return p == ops::Padding::valid ? "valid" : "same"; }

// Fills every unset key with its default. Defaults depend on task and model,
// so those are settled first.
void apply_defaults(Values& v, const std::string& command) {
  const std::vector<std::string> keys = keys_for(command);
  auto set = [&](const std::string& key, const std::string& value) {
    if (has_key(keys, key)) v.emplace(key, value);
  };

  data::Task task = data::Task::cls;
  if (has_key(keys, "model")) {
    if (!v.count("task") && v.count("model")) {
      const std::string& m = v.at("model");
      if (m == "unet" || m == "medic-seg") v["task"] = "seg";
    }
    set("task", "cls");
    set("model", "medic");
    task = data::parse_task(v.at("task"));
    const zoo::ModelKind kind = resolve_kind(v.at("model"), task);
    if (zoo::is_segmentation(kind) != (task == data::Task::seg)) {
      throw ConfigError("model '" + v.at("model") + "' does not fit task '" + v.at("task") + "'");
    }
    const bool plain = v.at("model") == "unet" || kind == zoo::ModelKind::cnn;
    set("involutions", plain ? "0" : "1");
    set("image_size", task == data::Task::seg ? "128" : "28");
    set("channels", "3");
    set("width_divisor", "1");
    set("extra_convs", "false");
    const zoo::Conventions c = zoo::paper_conventions(kind);
    set("involution_bias", bool_text(c.involution_bias));
    set("bottleneck_norm", bool_text(c.bottleneck_norm));
    set("bottleneck_width", std::to_string(c.bottleneck_width));
    set("involution_reduction", std::to_string(c.involution_reduction));
    set("pool_rounding", rounding_name(c.pool_rounding));
    set("conv_padding", padding_name(c.conv_padding));
  }

  const train::TrainConfig tc = train::default_config(task);
  const bool seg = task == data::Task::seg;
  set("data", "synth");
  if (command != "eval") set("samples", seg ? "256" : "1000");
  set("noise", "0.05");
  set("test_fraction", "0.2");
  set("val_fraction", "0.1");
  set("epochs", std::to_string(tc.epochs));
  set("batch", std::to_string(tc.batch_size));
  set("lr", num_text(tc.learning_rate));
  set("seed", "0");
  set("threshold", "0.5");
  set("averaging", "macro");
  set("out", "runs");
  set("tag", command);
  set("seeds", command == "grad-check" ? "5" : "1");
  set("ops", "all");
  set("classes", "2");
  set("split", "test");
  set("method", "kernel-map");
  set("layer", "inv1");
  set("input", "synth");
  set("kernel_reduction", "center_tap");
  set("palette", "gray");
}

// ---------------------------------------------------------------------------
// Run directories

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path make_run_dir(const Values& v, const std::string& override_dir) {
  fs::path dir;
  if (!override_dir.empty()) {
    dir = override_dir;
  } else {
    const fs::path base = fs::path(require(v, "out")) / (timestamp() + "-" + require(v, "tag"));
    dir = base;
    for (int i = 1; fs::exists(dir); ++i) dir = base.string() + "-" + std::to_string(i);
  }
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Building blocks shared by the commands

data::Task task_of(const Values& v) { return data::parse_task(require(v, "task")); }

zoo::ModelConfig model_config(const Values& v, std::size_t num_classes) {
  zoo::ModelConfig c;
  const data::Task task = task_of(v);
  c.kind = resolve_kind(require(v, "model"), task);
  const std::size_t size = get_size(v, "image_size");
  const std::size_t channels = get_size(v, "channels");
  if (size == 0) bad_value("image_size", require(v, "image_size"), "a positive integer");
  if (channels != 1 && channels != 3) bad_value("channels", require(v, "channels"), "1 or 3");
  c.input_shape = {size, size, channels};
  c.num_classes = num_classes;
  c.n_involutions = get_size(v, "involutions");
  c.width_divisor = get_size(v, "width_divisor");
  c.extra_convs = get_bool(v, "extra_convs");
  c.conventions.involution_bias = get_bool(v, "involution_bias");
  c.conventions.bottleneck_norm = get_bool(v, "bottleneck_norm");
  c.conventions.bottleneck_width = get_size(v, "bottleneck_width");
  c.conventions.involution_reduction = get_size(v, "involution_reduction");
  const std::string& rounding = require(v, "pool_rounding");
  if (rounding != "floor" && rounding != "ceil") bad_value("pool_rounding", rounding, "floor or ceil");
  c.conventions.pool_rounding = rounding == "ceil" ? ops::PoolRounding::ceil : ops::PoolRounding::floor;
  const std::string& padding = require(v, "conv_padding");
  if (padding != "same" && padding != "valid") bad_value("conv_padding", padding, "same or valid");
  c.conventions.conv_padding = padding == "valid" ? ops::Padding::valid : ops::Padding::same;
  c.seed = v.count("seed") ? get_u64(v, "seed") : 0;
  return c;
}

metrics::Averaging averaging_of(const Values& v) {
  const std::string& s = require(v, "averaging");
  if (s == "macro") return metrics::Averaging::macro;
  if (s == "weighted") return metrics::Averaging::weighted;
  bad_value("averaging", s, "macro or weighted");
}

struct LoadedData {
  std::vector<data::Sample> samples;
  std::size_t num_classes = 2;
  std::vector<std::string> class_names;
};

LoadedData load_data(const Values& v, data::Task task, std::size_t image_size,
                     std::size_t channels, std::ostream& err) {
  const std::string& spec = require(v, "data");
  LoadedData out;
  auto report = [&](const data::LoadReport& r) {
    for (const auto& w : r.warnings) err << "warning: " << w << '\n';
  };
  const data::LoadOptions opts{image_size, image_size, channels};
  if (spec == "synth") {
    data::SynthOptions so;
    so.noise_sigma = get_double(v, "noise");
    so.channels = channels;
    out.samples = data::synth_blobs(task, get_size(v, "samples"), image_size, get_u64(v, "seed"), so);
    return out;
  }
  if (spec.rfind("dir:", 0) == 0) {
    const fs::path root = spec.substr(4);
    if (task == data::Task::seg) {
      auto ds = data::load_segmentation_dataset(root / "images", root / "masks", opts);
      report(ds.report);
      out.samples = std::move(ds.samples);
    } else {
      auto ds = data::load_classification_dataset(root, opts);
      report(ds.report);
      out.samples = std::move(ds.samples);
      out.class_names = ds.class_names;
      out.num_classes = ds.class_names.size();
    }
    return out;
  }
  if (spec.rfind("manifest:", 0) == 0) {
    if (task == data::Task::seg) throw ConfigError("manifest data is classification-only");
    auto ds = data::load_manifest(spec.substr(9), opts);
    report(ds.report);
    out.samples = std::move(ds.samples);
    out.class_names = ds.class_names;
    out.num_classes = ds.class_names.size();
    return out;
  }
  bad_value("data", spec, "synth, dir:<path> or manifest:<file>");
}

data::SplitDataset split_of(const Values& v, const std::vector<data::Sample>& samples,
                            data::Task task) {
  data::SplitOptions so;
  so.test_fraction = get_double(v, "test_fraction");
  so.val_fraction = get_double(v, "val_fraction");
  if (so.test_fraction < 0 || so.test_fraction >= 1) {
    bad_value("test_fraction", require(v, "test_fraction"), "a fraction in [0, 1)");
  }
  if (so.val_fraction < 0 || so.val_fraction >= 1) {
    bad_value("val_fraction", require(v, "val_fraction"), "a fraction in [0, 1)");
  }
  so.seed = get_u64(v, "seed");
  so.stratified = task == data::Task::cls;
  return data::split_dataset(samples, so);
}

train::TrainConfig train_config(const Values& v, data::Task task) {
  train::TrainConfig tc = train::default_config(task);
  tc.epochs = get_size(v, "epochs");
  tc.batch_size = get_size(v, "batch");
  tc.learning_rate = get_double(v, "lr");
  tc.seed = get_u64(v, "seed");
  tc.threshold = get_double(v, "threshold");
  tc.averaging = averaging_of(v);
  train::validate(tc);
  return tc;
}

void print_report(std::ostream& out, const std::string& title, const metrics::MetricsReport& r) {
  out << title << ':';
  if (r.loss) out << " loss=" << fixed_text(*r.loss);
  if (r.accuracy) out << " accuracy=" << fixed_text(*r.accuracy);
  if (r.recall) out << " recall=" << fixed_text(*r.recall);
  if (r.f1) out << " f1=" << fixed_text(*r.f1);
  if (r.iou) out << " iou=" << fixed_text(*r.iou);
  if (r.dsc) out << " dsc=" << fixed_text(*r.dsc);
  out << '\n';
}

std::string format_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& row : rows) {
    widths.resize(std::max(widths.size(), row.size()), 0);
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  }
  std::ostringstream os;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << "  ";
      // Left-align the first column, right-align the numbers.
      if (i == 0) os << row[i] << std::string(widths[i] - row[i].size(), ' ');
      else os << std::string(widths[i] - row[i].size(), ' ') << row[i];
    }
    os << '\n';
  }
  return os.str();
}

std::string format_csv(const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  }
  return os.str();
}

std::string group_digits(std::size_t n) {
  std::string s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

// Trains one model and writes its artifacts into `dir`.
train::TrainResult train_into(const zoo::ModelConfig& mc, const data::SplitDataset& split,
                              train::TrainConfig tc, const fs::path& dir, std::ostream* log) {
  tc.abort_checkpoint = dir / "abort.ckpt";
  tc.log = log;
  train::TrainResult result = train::train(zoo::build(mc), split, tc);
  zoo::save_checkpoint(dir / "model.ckpt", result.model);
  std::ofstream csv(dir / "history.csv", std::ios::binary);
  if (!csv) throw DataError("cannot write " + (dir / "history.csv").string());
  train::write_history_csv(csv, result.history, result.test);
  write_text(dir / "metrics.txt", result.test.to_text());
  return result;
}

// ---------------------------------------------------------------------------
// Commands

struct Context {
  Values values;
  std::string run_dir;
  std::ostream& out;
  std::ostream& err;
};

void echo_config(Context& ctx, const std::string& command, const fs::path* dir) {
  Values shown = ctx.values;
  shown["command"] = command;
  const std::string text = format_config(shown);
  ctx.out << "# resolved configuration\n" << text;
  if (dir) {
    write_text(*dir / "resolved-config.txt", text);
    ctx.out << "# run directory: " << dir->string() << '\n';
  }
}

int cmd_train(Context& ctx) {
  const Values& v = ctx.values;
  const data::Task task = task_of(v);
  const train::TrainConfig tc = train_config(v, task);
  const std::size_t size = get_size(v, "image_size");
  const std::size_t channels = get_size(v, "channels");
  LoadedData loaded = load_data(v, task, size, channels, ctx.err);
  const zoo::ModelConfig mc = model_config(v, loaded.num_classes);
  zoo::describe(mc);
  const data::SplitDataset split = split_of(v, loaded.samples, task);

  const fs::path dir = make_run_dir(v, ctx.run_dir);
  echo_config(ctx, "train", &dir);
  ctx.out << "model " << zoo::to_string(mc.kind) << ": "
          << zoo::count_parameters(zoo::build(mc), zoo::kPaperCountPolicy) << " parameters; split "
          << split.train.size() << '/' << split.val.size() << '/' << split.test.size() << '\n';
  const train::TrainResult result = train_into(mc, split, tc, dir, &ctx.out);
  print_report(ctx.out, "test", result.test);
  return kOk;
}

int cmd_eval(Context& ctx) {
  Values& v = ctx.values;
  const zoo::Model model = zoo::load_checkpoint(require(v, "checkpoint"));
  const zoo::ModelConfig& mc = model.arch.config;
  const data::Task task = zoo::is_segmentation(mc.kind) ? data::Task::seg : data::Task::cls;
  // The synthetic sample count defaults by task, known only now.
  v.emplace("samples", task == data::Task::seg ? "256" : "1000");

  LoadedData loaded = load_data(v, task, mc.input_shape[0], mc.input_shape[2], ctx.err);
  if (task == data::Task::cls) {
    for (const auto& s : loaded.samples) {
      if (s.label >= mc.num_classes) throw DataError("label out of range for checkpoint " + s.id);
    }
  }
  const std::string& which = require(v, "split");
  std::vector<data::Sample> samples;
  if (which == "all") {
    samples = loaded.samples;
  } else {
    data::SplitDataset split = split_of(v, loaded.samples, task);
    if (which == "test") samples = std::move(split.test);
    else if (which == "val") samples = std::move(split.val);
    else if (which == "train") samples = std::move(split.train);
    else bad_value("split", which, "test, val, train or all");
  }
  if (samples.empty()) throw DataError("split '" + which + "' is empty");

  train::TrainConfig tc = train::default_config(task);
  tc.threshold = get_double(v, "threshold");
  tc.averaging = averaging_of(v);
  tc.eval_batch_size = std::max<std::size_t>(1, get_size(v, "batch"));
  const fs::path dir = make_run_dir(v, ctx.run_dir);
  echo_config(ctx, "eval", &dir);
  const metrics::MetricsReport report = train::evaluate(model, samples, tc);
  write_text(dir / "metrics.txt", report.to_text());
  print_report(ctx.out, which + " (" + std::to_string(samples.size()) + " samples)", report);
  return kOk;
}

struct Variant {
  std::string name;
  Values overrides;
};

std::vector<Variant> ablation_ladder(data::Task task) {
  if (task == data::Task::seg) {
    return {{"unet", {{"model", "unet"}, {"involutions", "0"}}},
            {"unet-extra", {{"model", "unet"}, {"involutions", "0"}, {"extra_convs", "true"}}},
            {"hybrid-1", {{"model", "medic"}, {"involutions", "1"}}},
            {"hybrid-2", {{"model", "medic"}, {"involutions", "2"}}},
            {"hybrid-3", {{"model", "medic"}, {"involutions", "3"}}}};
  }
  return {{"hybrid-1", {{"model", "medic"}, {"involutions", "1"}}},
          {"hybrid-2", {{"model", "medic"}, {"involutions", "2"}}},
          {"hybrid-3", {{"model", "medic"}, {"involutions", "3"}}},
          {"cnn", {{"model", "cnn"}, {"involutions", "0"}}},
          {"inn", {{"model", "inn"}, {"involutions", "1"}}}};
}

int cmd_ablate(Context& ctx) {
  const Values& v = ctx.values;
  const data::Task task = task_of(v);
  const train::TrainConfig base_tc = train_config(v, task);
  const std::size_t n_seeds = get_size(v, "seeds");
  if (n_seeds == 0) bad_value("seeds", require(v, "seeds"), "a positive integer");
  const std::uint64_t seed0 = get_u64(v, "seed");
  const bool seg = task == data::Task::seg;

  const std::vector<Variant> ladder = ablation_ladder(task);
  std::vector<zoo::ModelConfig> configs;
  for (const Variant& variant : ladder) {
    Values vv = v;
    for (const auto& [key, value] : variant.overrides) vv[key] = value;
    configs.push_back(model_config(vv, 2));
    zoo::describe(configs.back());
  }

  const fs::path dir = make_run_dir(v, ctx.run_dir);
  echo_config(ctx, "ablate", &dir);

  std::vector<std::vector<metrics::MetricsReport>> reports(ladder.size());
  std::size_t num_classes = 2;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    Values sv = v;
    sv["seed"] = std::to_string(seed0 + s);
    LoadedData loaded = load_data(sv, task, get_size(v, "image_size"), get_size(v, "channels"), ctx.err);
    num_classes = loaded.num_classes;
    const data::SplitDataset split = split_of(sv, loaded.samples, task);
    train::TrainConfig tc = base_tc;
    tc.seed = seed0 + s;
    for (std::size_t i = 0; i < ladder.size(); ++i) {
      zoo::ModelConfig mc = configs[i];
      mc.num_classes = num_classes;
      mc.seed = seed0 + s;
      fs::path vdir = dir / ladder[i].name;
      if (n_seeds > 1) vdir /= "seed-" + std::to_string(seed0 + s);
      fs::create_directories(vdir);
      ctx.out << "== " << ladder[i].name << " (seed " << seed0 + s << ")\n";
      const train::TrainResult result = train_into(mc, split, tc, vdir, nullptr);
      print_report(ctx.out, "test", result.test);
      reports[i].push_back(result.test);
    }
  }

  std::vector<std::vector<std::string>> rows;
  if (seg) rows.push_back({"variant", "params", "iou", "dsc", "accuracy"});
  else rows.push_back({"variant", "params", "accuracy", "recall", "f1"});
  auto mean_of = [](const std::vector<metrics::MetricsReport>& rs,
                    std::optional<double> metrics::MetricsReport::*field) {
    double total = 0;
    for (const auto& r : rs) total += (r.*field).value_or(0.0);
    return total / static_cast<double>(rs.size());
  };
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    zoo::ModelConfig mc = configs[i];
    mc.num_classes = num_classes;
    const std::size_t params =
        zoo::closed_form_parameter_count(zoo::describe(mc), zoo::kPaperCountPolicy);
    std::vector<std::string> row{ladder[i].name, std::to_string(params)};
    using R = metrics::MetricsReport;
    const auto fields = seg ? std::vector{&R::iou, &R::dsc, &R::accuracy}
                            : std::vector{&R::accuracy, &R::recall, &R::f1};
    for (auto field : fields) row.push_back(fixed_text(mean_of(reports[i], field)));
    rows.push_back(std::move(row));
  }
  const std::string table = format_table(rows);
  write_text(dir / "ablation.csv", format_csv(rows));
  write_text(dir / "ablation.txt", table);
  ctx.out << table;
  return kOk;
}

int cmd_param_count(Context& ctx) {
  const Values& v = ctx.values;
  const zoo::ModelConfig mc = model_config(v, get_size(v, "classes"));
  const zoo::Architecture arch = zoo::describe(mc);
  echo_config(ctx, "param-count", nullptr);
  const auto counts = zoo::per_layer_counts(arch, zoo::kPaperCountPolicy);
  std::vector<std::vector<std::string>> rows{{"layer", "kind", "output", "params"}};
  for (std::size_t i = 0; i < counts.size(); ++i) {
    rows.push_back({counts[i].name, zoo::to_string(counts[i].kind),
                    shape_to_string(arch.output_shapes[i]), group_digits(counts[i].count)});
  }
  ctx.out << format_table(rows);
  const std::size_t total = zoo::closed_form_parameter_count(arch, zoo::kPaperCountPolicy);
  const std::size_t trainable = zoo::closed_form_parameter_count(arch, zoo::CountPolicy{});
  ctx.out << "total = " << total << " (" << group_digits(total) << ")\n";
  ctx.out << "trainable = " << trainable << '\n';
  ctx.out << "non-trainable = " << total - trainable << '\n';
  return kOk;
}

int cmd_grad_check(Context& ctx) {
  const Values& v = ctx.values;
  const std::size_t n = get_size(v, "seeds");
  if (n == 0) bad_value("seeds", require(v, "seeds"), "a positive integer");
  std::vector<std::uint64_t> seeds(n);
  for (std::size_t i = 0; i < n; ++i) seeds[i] = i;

  std::vector<std::string> ops;
  const std::string& spec = require(v, "ops");
  const std::vector<std::string> known = gradcheck::op_names();
  if (spec == "all") {
    ops = known;
  } else {
    std::istringstream is(spec);
    for (std::string op; std::getline(is, op, ',');) {
      op = trim(op);
      if (!has_key(known, op)) {
        std::string list;
        for (const auto& k : known) list += (list.empty() ? "" : ", ") + k;
        bad_value("ops", op, "one of: " + list);
      }
      ops.push_back(op);
    }
  }
  echo_config(ctx, "grad-check", nullptr);

  bool ok = true;
  std::vector<std::vector<std::string>> rows{{"op", "seed", "max_rel_error", "checked", "result"}};
  for (const auto& e : gradcheck::run_suite(seeds, ops)) {
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", e.result.max_rel_error);
    rows.push_back({e.op, std::to_string(e.seed), err, std::to_string(e.result.checked),
                    e.passed() ? "pass" : "FAIL"});
    ok = ok && e.passed();
  }
  ctx.out << format_table(rows);
  ctx.out << (ok ? "all gradients within " : "gradient check failed; tolerance ")
          << gradcheck::kTolerance << '\n';
  return ok ? kOk : kNumericError;
}

// Converts an [H, W, C] image to the requested channel count and size.
Tensor fit_image(Tensor image, std::size_t size, std::size_t channels) {
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (c != channels) {
    Tensor out({h, w, channels});
    for (std::size_t p = 0; p < h * w; ++p) {
      double mean = 0;
      for (std::size_t k = 0; k < c; ++k) mean += image[p * c + k];
      mean /= static_cast<double>(c);
      for (std::size_t k = 0; k < channels; ++k) {
        out[p * channels + k] = c == 1 ? image[p] : (channels == 1 ? mean : image[p * c + k]);
      }
    }
    image = std::move(out);
  }
  if (h != size || w != size) image = data::resize_bilinear(image, size, size);
  return image;
}

int cmd_explain(Context& ctx) {
  Values& v = ctx.values;
  const std::string& method = require(v, "method");
  if (method != "kernel-map" && method != "grad-cam") {
    bad_value("method", method, "kernel-map or grad-cam");
  }
  const std::string& palette_name = require(v, "palette");
  if (palette_name != "gray" && palette_name != "viridis") {
    bad_value("palette", palette_name, "gray or viridis");
  }
  const explain::Palette palette =
      palette_name == "viridis" ? explain::Palette::viridis : explain::Palette::gray;
  explain::KernelReduction reduction{};
  try {
    reduction = explain::parse_reduction(require(v, "kernel_reduction"));
  } catch (const std::invalid_argument&) {
    bad_value("kernel_reduction", v.at("kernel_reduction"), "center_tap or l2_norm");
  }

  // Input image: a file, or a synthetic blob drawn from the seed.
  const std::string& input = require(v, "input");
  Tensor image;
  std::string input_id;
  if (input == "synth") {
    data::SynthOptions so;
    so.noise_sigma = get_double(v, "noise");
    so.channels = get_size(v, "channels");
    image = data::synth_blobs(task_of(v), 1, get_size(v, "image_size"), get_u64(v, "seed"), so)[0].input;
    input_id = "synth";
  } else {
    image = io::read_image(input);
    input_id = fs::path(input).stem().string();
  }

  zoo::Model model;
  if (v.count("checkpoint")) {
    model = zoo::load_checkpoint(v.at("checkpoint"));
    const Shape& s = model.arch.config.input_shape;
    if (s[0] != s[1]) throw ConfigError("explain expects a square model input");
    image = fit_image(std::move(image), s[0], s[2]);
  } else {
    // A fresh model shaped like the image.
    const std::size_t channels = get_size(v, "channels");
    if (image.dim(0) != image.dim(1)) throw DataError("input image must be square");
    image = fit_image(std::move(image), image.dim(0), channels);
    v["image_size"] = std::to_string(image.dim(0));
    model = zoo::build(model_config(v, get_size(v, "classes")));
  }

  const fs::path dir = make_run_dir(v, ctx.run_dir);
  echo_config(ctx, "explain", &dir);
  const std::string& layer = require(v, "layer");
  explain::Heatmap map;
  if (method == "kernel-map") {
    map = explain::involution_kernel_map(model, image, layer, reduction, input_id);
  } else {
    explain::CamTarget target;
    if (v.count("class")) target.class_index = get_size(v, "class");
    map = explain::grad_cam(model, image, layer, target, input_id);
  }
  const fs::path path = dir / explain::heatmap_filename(map, palette);
  explain::write_heatmap(map, path, palette);
  ctx.out << "wrote " << path.string() << " (" << map.values.dim(0) << 'x' << map.values.dim(1)
          << ")\n";
  return kOk;
}

int cmd_calibrate(Context& ctx) {
  const Values& v = ctx.values;
  const fs::path dir = make_run_dir(v, ctx.run_dir);
  echo_config(ctx, "calibrate", &dir);
  const calib::SearchResult result = calib::search();
  const fs::path log = v.count("log") ? fs::path(v.at("log")) : dir / "search_log.txt";
  {
    std::ofstream os(log, std::ios::binary);
    if (!os) throw DataError("cannot write " + log.string());
    calib::write_log(os, result);
  }
  std::vector<std::vector<std::string>> rows{{"target", "published", "reproduced"}};
  for (std::size_t i = 0; i < result.targets.size(); ++i) {
    rows.push_back({result.targets[i].name, std::to_string(result.targets[i].expected),
                    result.hit[i] ? "yes" : "no"});
  }
  ctx.out << format_table(rows);
  ctx.out << result.trials.size() << " convention combinations searched; log: " << log.string()
          << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// Flag registration

struct Flags {
  Values values;
  std::string config_file;
  std::string run_dir;
};

void value_flag(CLI::App* app, Flags& flags, const std::string& name, const std::string& key,
                const std::string& help) {
  app->add_option_function<std::string>(
      name, [&flags, key](const std::string& s) { flags.values[key] = s; }, help);
}

void bool_flag(CLI::App* app, Flags& flags, const std::string& name, const std::string& key,
               const std::string& help) {
  app->add_flag_callback(name, [&flags, key]() { flags.values[key] = "true"; }, help);
}

void common_flags(CLI::App* app, Flags& flags) {
  app->add_option("--config", flags.config_file, "Config file of `key = value` lines");
}

void run_flags(CLI::App* app, Flags& flags) {
  value_flag(app, flags, "--out", "out", "Parent directory of run directories");
  value_flag(app, flags, "--tag", "tag", "Run directory suffix");
  app->add_option("--run-dir", flags.run_dir, "Exact run directory (overrides --out/--tag)");
}

void model_flags(CLI::App* app, Flags& flags) {
  value_flag(app, flags, "--task", "task", "cls or seg");
  value_flag(app, flags, "--model", "model", "medic, medic-cls, medic-seg, unet, cnn or inn");
  value_flag(app, flags, "--involutions", "involutions", "Number of involution layers");
  value_flag(app, flags, "--image-size", "image_size", "Square input size");
  value_flag(app, flags, "--channels", "channels", "Input channels (1 or 3)");
  value_flag(app, flags, "--width-divisor", "width_divisor", "Divides segmentation widths");
  bool_flag(app, flags, "--extra-convs", "extra_convs", "Two extra convolutions in the deepest block");
  value_flag(app, flags, "--involution-bias", "involution_bias", "Bias in kernel generation");
  value_flag(app, flags, "--bottleneck-norm", "bottleneck_norm", "Batch norm in the bottleneck");
  value_flag(app, flags, "--bottleneck-width", "bottleneck_width", "Bottleneck width (0 = C/r)");
  value_flag(app, flags, "--reduction-ratio", "involution_reduction", "Reduction ratio r (0 = auto)");
  value_flag(app, flags, "--pool-rounding", "pool_rounding", "floor or ceil");
  value_flag(app, flags, "--conv-padding", "conv_padding", "same or valid");
}

void data_flags(CLI::App* app, Flags& flags) {
  value_flag(app, flags, "--data", "data", "synth, dir:<path> or manifest:<file>");
  value_flag(app, flags, "--samples", "samples", "Synthetic sample count");
  value_flag(app, flags, "--noise", "noise", "Synthetic noise sigma");
  value_flag(app, flags, "--test-fraction", "test_fraction", "Held-out test fraction");
  value_flag(app, flags, "--val-fraction", "val_fraction", "Validation fraction of the rest");
}

void train_flags(CLI::App* app, Flags& flags) {
  value_flag(app, flags, "--epochs", "epochs", "Training epochs");
  value_flag(app, flags, "--batch", "batch", "Minibatch size");
  value_flag(app, flags, "--lr", "lr", "Adam learning rate");
  value_flag(app, flags, "--seed", "seed", "Seed for data, split, init and shuffling");
  value_flag(app, flags, "--threshold", "threshold", "Mask threshold");
  value_flag(app, flags, "--averaging", "averaging", "macro or weighted");
}

int exit_for_config(std::ostream& err, const std::string& what) {
  err << "error: " << what << '\n';
  return kConfigError;
}

}  // namespace

Values parse_config_text(const std::string& text) {
  Values values;
  std::istringstream is(text);
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(n) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(n) + ": empty key");
    values[key] = trim(line.substr(eq + 1));
  }
  return values;
}

std::string format_config(const Values& values) {
  std::ostringstream os;
  for (const auto& [key, value] : values) os << key << " = " << value << '\n';
  return os.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Involution-based medical image classification and segmentation", "medic"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  Flags flags;
  std::vector<std::string> grad_ops;
  bool grad_all = false;

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint, history and metrics");
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Train the ablation ladder and tabulate results");
  CLI::App* count_cmd = app.add_subcommand("param-count", "Print per-layer and total parameter counts");
  CLI::App* grad_cmd = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  CLI::App* explain_cmd = app.add_subcommand("explain", "Export a kernel map or Grad-CAM heatmap");
  CLI::App* calib_cmd = app.add_subcommand("calibrate", "Search counting conventions against published totals");

  for (CLI::App* cmd : {train_cmd, ablate_cmd}) {
    common_flags(cmd, flags);
    run_flags(cmd, flags);
    model_flags(cmd, flags);
    data_flags(cmd, flags);
    train_flags(cmd, flags);
  }
  value_flag(ablate_cmd, flags, "--seeds", "seeds", "Seeds per variant (seed, seed+1, ...)");

  common_flags(eval_cmd, flags);
  run_flags(eval_cmd, flags);
  data_flags(eval_cmd, flags);
  value_flag(eval_cmd, flags, "--checkpoint", "checkpoint", "Checkpoint to evaluate");
  value_flag(eval_cmd, flags, "--split", "split", "test, val, train or all");
  value_flag(eval_cmd, flags, "--seed", "seed", "Seed of the data and split");
  value_flag(eval_cmd, flags, "--threshold", "threshold", "Mask threshold");
  value_flag(eval_cmd, flags, "--averaging", "averaging", "macro or weighted");
  value_flag(eval_cmd, flags, "--batch", "batch", "Evaluation batch size");

  common_flags(count_cmd, flags);
  model_flags(count_cmd, flags);
  value_flag(count_cmd, flags, "--classes", "classes", "Number of classes");

  common_flags(grad_cmd, flags);
  grad_cmd->add_flag("--all", grad_all, "Check every operation");
  grad_cmd->add_option("--op", grad_ops, "Operation to check (repeatable)");
  value_flag(grad_cmd, flags, "--seeds", "seeds", "Check seeds 0..N-1");

  common_flags(explain_cmd, flags);
  run_flags(explain_cmd, flags);
  model_flags(explain_cmd, flags);
  value_flag(explain_cmd, flags, "--classes", "classes", "Number of classes (fresh model)");
  value_flag(explain_cmd, flags, "--seed", "seed", "Model and synthetic input seed");
  value_flag(explain_cmd, flags, "--noise", "noise", "Synthetic input noise sigma");
  value_flag(explain_cmd, flags, "--checkpoint", "checkpoint", "Trained model (default: fresh)");
  value_flag(explain_cmd, flags, "--method", "method", "kernel-map or grad-cam");
  value_flag(explain_cmd, flags, "--layer", "layer", "Layer name");
  value_flag(explain_cmd, flags, "--input", "input", "Image file (PNM or PNG) or synth");
  value_flag(explain_cmd, flags, "--reduction", "kernel_reduction", "center_tap or l2_norm");
  value_flag(explain_cmd, flags, "--palette", "palette", "gray or viridis");
  value_flag(explain_cmd, flags, "--class", "class", "Target class (classification)");

  common_flags(calib_cmd, flags);
  run_flags(calib_cmd, flags);
  value_flag(calib_cmd, flags, "--log", "log", "Search log path");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kConfigError;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  if (grad_all && !grad_ops.empty()) return exit_for_config(err, "--all and --op are exclusive");
  if (!grad_ops.empty()) {
    std::string joined;
    for (const auto& op : grad_ops) joined += (joined.empty() ? "" : ",") + op;
    flags.values["ops"] = joined;
  } else if (grad_all) {
    flags.values["ops"] = "all";
  }

  try {
    Values values;
    if (!flags.config_file.empty()) {
      std::ifstream is(flags.config_file, std::ios::binary);
      if (!is) throw ConfigError("cannot read config file " + flags.config_file);
      std::ostringstream ss;
      ss << is.rdbuf();
      values = parse_config_text(ss.str());
      const auto it = values.find("command");
      if (it != values.end()) {
        if (it->second != command) {
          throw ConfigError("config file is for command '" + it->second + "', not '" + command + "'");
        }
        values.erase(it);
      }
    }
    for (const auto& [key, value] : flags.values) values[key] = value;
    const std::vector<std::string> allowed = keys_for(command);
    for (const auto& [key, value] : values) {
      if (!has_key(allowed, key)) throw ConfigError("unknown setting '" + key + "' for " + command);
    }
    apply_defaults(values, command);

    Context ctx{std::move(values), flags.run_dir, out, err};
    int code = kOk;
    if (command == "train") code = cmd_train(ctx);
    else if (command == "eval") code = cmd_eval(ctx);
    else if (command == "ablate") code = cmd_ablate(ctx);
    else if (command == "param-count") code = cmd_param_count(ctx);
    else if (command == "grad-check") code = cmd_grad_check(ctx);
    else if (command == "explain") code = cmd_explain(ctx);
    else if (command == "calibrate") code = cmd_calibrate(ctx);
    out.flush();
    return code;
  } catch (const ConfigError& e) {
    return exit_for_config(err, e.what());
  } catch (const std::invalid_argument& e) {
    return exit_for_config(err, e.what());
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace medic::cli
