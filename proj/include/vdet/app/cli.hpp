// Copyright 2026 The vdet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end. Every command resolves its settings as
// command-line flag > config file > built-in default and echoes the
// effective settings to <out>/config.txt, which can be fed back through
// --config to repeat the run.

#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vdet/checkpoint.hpp"
#include "vdet/data/dataset.hpp"
#include "vdet/eval/complexity.hpp"
#include "vdet/eval/dumps.hpp"
#include "vdet/gradcheck_suite.hpp"
#include "vdet/train/trainer.hpp"

namespace vdet::app {

namespace fs = std::filesystem;

// A required input file is absent; reported with exit status 2.
class MissingInput : public Error {
 public:
  using Error::Error;
};

class Settings {
 public:
  std::map<std::string, std::string> values;

  const std::string& str(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw ParameterError("unknown setting '" + key + "'");
    return it->second;
  }
  double real(const std::string& key) const { return parse<double>(key); }
  std::int64_t integer(const std::string& key) const { return parse<std::int64_t>(key); }
  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ParameterError("setting '" + key + "' is not a boolean: " + v);
  }
  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(str(key));
    for (std::string item; std::getline(ss, item, ',');)
      if (!item.empty()) out.push_back(item);
    return out;
  }

  std::string dump() const {
    std::string s = "# effective configuration\n";
    for (const auto& [k, v] : values) s += k + " = " + v + '\n';
    return s;
  }

 private:
  template <class V>
  V parse(const std::string& key) const {
    std::istringstream is(str(key));
    V v{};
    if (!(is >> v) || !(is >> std::ws).eof()) throw ParameterError("setting '" + key + "' is not numeric: " + str(key));
    return v;
  }
};

inline std::string normalize_key(std::string k) {
  for (auto& ch : k)
    if (ch == '-') ch = '_';
  return k;
}

// `key = value` lines; `#` starts a comment.
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput("config file not found: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected 'key = value' in " + path);
    out[normalize_key(trim(line.substr(0, eq)))] = trim(line.substr(eq + 1));
  }
  return out;
}

inline Settings default_settings(const std::string& command) {
  Settings s;
  s.values = {{"seed", "0"},
              {"data", ""},
              {"val_data", ""},
              {"ckpt", ""},
              {"out", "runs/" + command},
              {"classes", "Car,Van,Truck,Tram"},
              {"epochs", "150"},
              {"batch", "32"},
              {"lr", "0.001"},
              {"patience", "10"},
              {"conf", "0.25"},
              {"nms_iou", "0.45"},
              {"use_ghost", "true"},
              {"use_cbam", "true"},
              {"use_dcn", "true"},
              {"anchors", "1"},
              {"synth", "0"},
              {"img_size", "640"},
              {"augment", "true"},
              {"mosaic", "0.5"},
              {"n", "16"},
              {"dets", ""},
              {"layers", "false"}};
  return s;
}

namespace detail {

inline ModelConfig model_config(const Settings& s) {
  ModelConfig c;
  c.class_names = s.list("classes");
  c.use_ghost = s.flag("use_ghost");
  c.use_cbam = s.flag("use_cbam");
  c.use_dcn = s.flag("use_dcn");
  c.anchors = s.integer("anchors");
  c.input_size = s.integer("img_size");
  c.validate();
  return c;
}

inline train::TrainConfig train_config(const Settings& s, const fs::path& out) {
  train::TrainConfig t;
  t.batch_size = s.integer("batch");
  t.lr0 = s.real("lr");
  t.epochs = s.integer("epochs");
  t.patience = std::min(s.integer("patience"), t.epochs);
  t.conf_threshold = s.real("conf");
  t.nms_iou = s.real("nms_iou");
  t.augment_enabled = s.flag("augment");
  t.augment.mosaic_p = s.real("mosaic");
  if (!out.empty()) t.best_checkpoint = (out / "best.ckpt").string();
  return t;
}

inline std::size_t synth_val_count(std::int64_t n) { return static_cast<std::size_t>(std::max<std::int64_t>(8, n / 4)); }

// Train and validation sets from --synth N (N training images plus a
// held-out tail of max(8, N/4)) or from manifests.
inline std::pair<data::Dataset, data::Dataset> datasets(const Settings& s) {
  const auto classes = s.list("classes");
  const Index size = s.integer("img_size");
  if (s.integer("synth") > 0) {
    const std::int64_t n = s.integer("synth");
    data::SynthConfig sc;
    sc.image_size = size;
    const auto all = data::synth_dataset(n + static_cast<std::int64_t>(synth_val_count(n)), classes,
                                         static_cast<std::uint64_t>(s.integer("seed")), sc);
    return data::split_tail(all, synth_val_count(n));
  }
  const std::string path = s.str("data");
  if (path.empty()) throw ParameterError("no dataset: pass --data MANIFEST or --synth N");
  if (!fs::exists(path)) throw MissingInput("data manifest not found: " + path);
  auto all = data::load_manifest(path, classes, size);
  if (!s.str("val_data").empty()) {
    if (!fs::exists(s.str("val_data"))) throw MissingInput("validation manifest not found: " + s.str("val_data"));
    return {std::move(all), data::load_manifest(s.str("val_data"), classes, size)};
  }
  const std::size_t tail = std::max<std::size_t>(1, all.size() / 4);
  if (all.size() < 2) return {all, all};
  return data::split_tail(all, tail);
}

inline std::unique_ptr<Model<float>> load_model(const Settings& s) {
  const std::string path = s.str("ckpt");
  if (path.empty()) throw ParameterError("--ckpt is required");
  if (!fs::exists(path)) throw MissingInput("checkpoint not found: " + path);
  auto model = load_checkpoint<float>(path);
  if (model->config().class_names != s.list("classes"))
    throw ParameterError("class list mismatch: checkpoint has " + vdet::detail::join(model->config().class_names, ',') +
                         ", labels use " + s.str("classes"));
  return model;
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

inline std::string history_text(const train::History& h) {
  std::ostringstream os;
  train::write_history(os, h);
  return os.str();
}

}  // namespace detail

struct AblationRow {
  ModelConfig config;
  eval::EvalReport report;
  eval::ComplexityReport complexity;
  train::History history;
};

inline void write_ablation_grid(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant\tghost\tcbam\tdcn\tprecision\trecall\tf1\tmap50\tparams\tgflops\tmemory_mb\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s\t%d\t%d\t%d\t%.6f\t%.6f\t%.6f\t%.6f\t%lld\t%.4f\t%.4f\n",
                  r.config.variant_name().c_str(), r.config.use_ghost, r.config.use_cbam, r.config.use_dcn,
                  r.report.precision, r.report.recall, r.report.f1, r.report.map50,
                  static_cast<long long>(r.complexity.params), r.complexity.flops() / 1e9,
                  r.complexity.memory_bytes() / 1048576.0);
    os << buf;
  }
}

// Trains and evaluates the eight ablation variants under one seed.
inline std::vector<AblationRow> run_ablation(const Settings& s, const fs::path& out, std::ostream& log) {
  const auto [train_set, val_set] = detail::datasets(s);
  const std::uint64_t seed = static_cast<std::uint64_t>(s.integer("seed"));
  std::vector<AblationRow> rows;
  for (const auto& cfg : ablation_variants(detail::model_config(s))) {
    const fs::path dir = out / cfg.variant_name();
    fs::create_directories(dir);
    auto model = build_model<float>(cfg, seed);
    auto tc = detail::train_config(s, dir);
    log << "[ablate] " << cfg.variant_name() << '\n' << std::flush;
    AblationRow row{cfg, {}, {}, {}};
    row.history = train::train(*model, train_set, val_set, tc, seed);
    row.report = train::evaluate_model(*model, val_set, tc);
    row.complexity = eval::count_params_flops(*model, 640);
    detail::write_text(dir / "history.tsv", detail::history_text(row.history));
    detail::write_text(dir / "report.txt", eval::report_string(row.report));
    log << "[ablate] " << cfg.variant_name() << " map50=" << row.report.map50 << '\n' << std::flush;
    rows.push_back(std::move(row));
  }
  std::ostringstream grid;
  write_ablation_grid(grid, rows);
  detail::write_text(out / "ablation.tsv", grid.str());
  return rows;
}

namespace detail {

inline int cmd_train(const Settings& s, const fs::path& out, std::ostream& os) {
  const auto [train_set, val_set] = datasets(s);
  const auto cfg = model_config(s);
  auto model = build_model<float>(cfg, static_cast<std::uint64_t>(s.integer("seed")));
  const auto tc = train_config(s, out);
  os << "training " << cfg.variant_name() << " on " << train_set.size() << " images, validating on "
     << val_set.size() << '\n';
  const auto hist = train::train(*model, train_set, val_set, tc, static_cast<std::uint64_t>(s.integer("seed")),
                                 [&](const train::EpochRecord& r) {
                                   char buf[160];
                                   std::snprintf(buf, sizeof buf, "epoch %lld loss %.5f P %.4f R %.4f mAP50 %.4f (%.1fs)\n",
                                                 static_cast<long long>(r.epoch), r.loss, r.precision, r.recall,
                                                 r.map50, r.seconds);
                                   os << buf << std::flush;
                                 });
  write_text(out / "history.tsv", history_text(hist));
  const fs::path ckpt = s.str("ckpt").empty() ? out / "model.ckpt" : fs::path(s.str("ckpt"));
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(*model, ckpt.string());
  const auto report = train::evaluate_model(*model, val_set, tc);
  write_text(out / "report.txt", eval::report_string(report));
  os << "best epoch " << hist.best_epoch << (hist.stopped_early ? " (stopped early)" : "") << ", checkpoint "
     << ckpt.string() << '\n';
  return 0;
}

// Evaluation set: the held-out synthetic split, or the whole --data manifest.
inline data::Dataset eval_dataset(const Settings& s) {
  if (s.integer("synth") > 0) return datasets(s).second;
  if (s.str("data").empty()) throw ParameterError("no images: pass --data MANIFEST or --synth N");
  if (!fs::exists(s.str("data"))) throw MissingInput("data manifest not found: " + s.str("data"));
  return data::load_manifest(s.str("data"), s.list("classes"), s.integer("img_size"));
}

inline int cmd_eval(const Settings& s, const fs::path& out, std::ostream& os) {
  const data::Dataset ds = eval_dataset(s);
  const data::Dataset* target = &ds;
  train::TrainConfig tc = train_config(s, {});
  eval::EvalReport report;
  if (!s.str("dets").empty()) {
    const fs::path dir = s.str("dets");
    if (!fs::is_directory(dir)) throw MissingInput("detection directory not found: " + dir.string());
    std::vector<std::vector<DetectionBox>> dets;
    std::vector<std::vector<GroundTruth>> gts;
    for (const auto& smp : target->samples) {
      const fs::path f = dir / (smp.id + ".txt");
      auto d = fs::exists(f) ? eval::parse_detections(data::read_text_file(f), target->class_names)
                             : std::vector<DetectionBox>{};
      for (auto& b : d) b.box = smp.letterbox.apply(b.box);
      dets.push_back(std::move(d));
      gts.push_back(train::ground_truths(smp));
    }
    report = eval::map_at(dets, gts, target->class_names, 0.5, tc.conf_threshold);
  } else {
    auto model = load_model(s);
    report = train::evaluate_model(*model, *target, tc);
  }
  const std::string text = eval::report_string(report);
  write_text(out / "report.txt", text);
  os << text;
  return 0;
}

inline int cmd_detect(const Settings& s, const fs::path& out, std::ostream& os) {
  auto model = load_model(s);
  const data::Dataset ds = eval_dataset(s);
  const fs::path dir = out / "detections";
  fs::create_directories(dir);
  std::size_t total = 0;
  for (const auto& smp : ds.samples) {
    auto dets = train::detect(*model, {&smp}, s.real("conf"), s.real("nms_iou"), 100)[0];
    for (auto& d : dets) d.box = smp.letterbox.invert(d.box);
    total += dets.size();
    eval::write_detection_dump(dir, smp.id, dets, ds.class_names);
  }
  os << "wrote " << total << " detections for " << ds.size() << " images to " << dir.string() << '\n';
  return 0;
}

inline int cmd_ablate(const Settings& s, const fs::path& out, std::ostream& os) {
  const auto rows = run_ablation(s, out, os);
  write_ablation_grid(os, rows);
  return 0;
}

inline int cmd_bench(const Settings& s, const fs::path& out, std::ostream& os) {
  ModelConfig base = model_config(s), proposed = base;
  base.use_ghost = base.use_cbam = base.use_dcn = false;
  proposed.use_ghost = proposed.use_cbam = proposed.use_dcn = true;
  const Index size = s.integer("img_size");
  auto mb = build_model<float>(base, 0), mp = build_model<float>(proposed, 0);
  const auto rb = eval::count_params_flops(*mb, size), rp = eval::count_params_flops(*mp, size);
  std::ostringstream text;
  eval::write_complexity_comparison(text, rb, rp);
  if (s.flag("layers")) {
    for (const auto* r : {&rb, &rp}) {
      text << "\n# layers: " << r->variant << "\nlayer\tparams\tclosed_form_params\tmacs\n";
      for (const auto& l : r->layers) text << l.name << '\t' << l.params << '\t' << l.closed_params << '\t' << l.macs << '\n';
    }
  }
  write_text(out / "complexity.tsv", text.str());
  os << text.str();
  return 0;
}

inline int cmd_gradcheck(const Settings& s, const fs::path& out, std::ostream& os) {
  const auto entries = run_gradcheck_suite(static_cast<std::uint64_t>(s.integer("seed")) + 1);
  std::ostringstream text;
  text << "block\tmax_rel_error\tprobes\tstatus\n";
  char buf[160];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%s\t%.3e\t%zu\t%s\n", e.name.c_str(), e.result.max_rel_error, e.result.probes,
                  e.result.max_rel_error < 1e-4 && e.result.probes >= 20 ? "ok" : "FAIL");
    text << buf;
  }
  write_text(out / "gradcheck.tsv", text.str());
  os << text.str();
  return gradcheck_passed(entries) ? 0 : 1;
}

inline int cmd_synth(const Settings& s, const fs::path& out, std::ostream& os) {
  data::SynthConfig sc;
  sc.image_size = s.integer("img_size");
  const auto ds = data::synth_dataset(s.integer("n"), s.list("classes"), static_cast<std::uint64_t>(s.integer("seed")), sc);
  data::write_dataset(ds, out);
  os << "wrote " << ds.size() << " images to " << out.string() << '\n';
  return 0;
}

}  // namespace detail

// Runs one command; returns the process exit status. Usage problems and
// missing input files give 2, other failures 1.
inline int run(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& es = std::cerr) {
  CLI::App app{"vdet: lightweight single-stage object detector"};
  app.require_subcommand(1);
  struct Flags {
    std::map<std::string, std::string> text;
    std::map<std::string, bool> toggles;
    std::string config;
  };
  std::map<std::string, Flags> flags;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "train a detector"},
      {"eval", "evaluate a checkpoint or detection dumps"},
      {"detect", "write per-image detections"},
      {"ablate", "train and evaluate all eight module combinations"},
      {"bench", "parameter / FLOP / memory comparison of base and proposed models"},
      {"gradcheck", "finite-difference check of every block"},
      {"synth", "write a synthetic dataset to disk"}};
  const std::vector<std::pair<std::string, std::string>> options = {
      {"seed", "random seed"},         {"data", "dataset manifest"},
      {"val-data", "validation manifest"}, {"ckpt", "checkpoint path"},
      {"out", "output directory"},     {"classes", "comma-separated class names"},
      {"epochs", "training epochs"},   {"batch", "batch size"},
      {"lr", "initial learning rate"}, {"patience", "early-stopping patience"},
      {"conf", "confidence threshold"}, {"nms-iou", "NMS IoU threshold"},
      {"anchors", "anchors per cell"}, {"synth", "use N synthetic training images"},
      {"img-size", "network input size"}, {"mosaic", "mosaic probability"},
      {"n", "number of images (synth)"}, {"dets", "directory of detection dumps (eval)"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    auto& f = flags[name];
    sub->add_option("--config", f.config, "key = value settings file");
    for (const auto& [opt, h] : options) sub->add_option("--" + opt, f.text[normalize_key(opt)], h);
    sub->add_flag("--use-ghost,!--no-ghost", f.toggles["use_ghost"], "Ghost convolutions in the neck");
    sub->add_flag("--use-cbam,!--no-cbam", f.toggles["use_cbam"], "CBAM after each neck stage");
    sub->add_flag("--use-dcn,!--no-dcn", f.toggles["use_dcn"], "deformable convolution in the head");
    sub->add_flag("--augment,!--no-augment", f.toggles["augment"], "training augmentation");
    sub->add_flag("--layers", f.toggles["layers"], "per-layer complexity table (bench)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int code = app.exit(e, o, er);
    os << o.str();
    es << er.str();
    return code == 0 ? 0 : 2;
  }
  auto* sub = app.get_subcommands().front();
  const std::string cmd = sub->get_name();
  const auto& f = flags[cmd];
  try {
    Settings s = default_settings(cmd);
    if (!f.config.empty())
      for (const auto& [k, v] : parse_config_file(f.config)) {
        if (!s.values.count(k)) throw ParameterError("unknown key '" + k + "' in " + f.config);
        s.values[k] = v;
      }
    for (const auto& [opt, h] : options) {
      const std::string key = normalize_key(opt);
      if (sub->get_option("--" + opt)->count() > 0) s.values[key] = f.text.at(key);
    }
    for (const auto& [key, v] : f.toggles) {
      const std::string name = key == "use_ghost" ? "--use-ghost" : key == "use_cbam" ? "--use-cbam"
                               : key == "use_dcn" ? "--use-dcn" : "--" + key;
      if (sub->get_option(name)->count() > 0) s.values[key] = v ? "true" : "false";
    }
    const fs::path out = s.str("out");
    fs::create_directories(out);
    detail::write_text(out / "config.txt", s.dump());
    if (cmd == "train") return detail::cmd_train(s, out, os);
    if (cmd == "eval") return detail::cmd_eval(s, out, os);
    if (cmd == "detect") return detail::cmd_detect(s, out, os);
    if (cmd == "ablate") return detail::cmd_ablate(s, out, os);
    if (cmd == "bench") return detail::cmd_bench(s, out, os);
    if (cmd == "gradcheck") return detail::cmd_gradcheck(s, out, os);
    return detail::cmd_synth(s, out, os);
  } catch (const MissingInput& e) {
    es << "vdet " << cmd << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    es << "vdet " << cmd << ": " << e.what() << '\n';
    return 1;
  }
}

inline int run(const std::vector<std::string>& args, std::ostream& os = std::cout, std::ostream& es = std::cerr) {
  std::vector<const char*> argv{"vdet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), os, es);
}

}  // namespace vdet::app
