// Copyright 2026 The DFA Authors.
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

// dfa: preprocess, train, eval, ablate, export-features, report, synth.
//
// Exit codes: 0 success, 1 module error (JSON on stderr), 2 usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dfa/config.hpp"
#include "dfa/data_pipeline.hpp"
#include "dfa/error.hpp"
#include "dfa/metrics.hpp"
#include "dfa/run.hpp"
#include "dfa/synthetic.hpp"
#include "dfa/training.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::string checkpoint;
  std::string split = "val";
};

/// Output directory bookkeeping: every file written through it lands in the
/// run manifest.
class RunDir {
 public:
  explicit RunDir(const std::string& path) : root_(path) {
    dfa::check(!path.empty(), dfa::ErrorKind::kUsage, "--out is required");
    fs::create_directories(root_);
  }

  fs::path path(const std::string& name) {
    files_.insert(name);
    return root_ / name;
  }

  void write(const std::string& name, const std::string& text) {
    std::ofstream out(path(name), std::ios::binary);
    dfa::check(out.good(), dfa::ErrorKind::kIo, "cannot write " + (root_ / name).string());
    out << text;
  }

  void snapshot(const dfa::RunConfig& config) {
    write("resolved_config.toml", config.to_toml());
    write("seed.txt", std::to_string(config.train.seed) + "\n");
  }

  void finish() {
    ojson files = ojson::array();
    for (const auto& name : files_) {
      files.push_back({{"file", name}, {"bytes", fs::file_size(root_ / name)}});
    }
    std::ofstream out(root_ / "run_manifest.json", std::ios::binary);
    out << ojson{{"files", files}}.dump(2) << "\n";
  }

 private:
  fs::path root_;
  std::set<std::string> files_;
};

dfa::RunConfig resolve(const Common& c) {
  if (c.config.empty()) return dfa::parse_config("", c.overrides);
  return dfa::load_config(c.config, c.overrides);
}

ojson optional_number(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  dfa::check(in.good(), dfa::ErrorKind::kIo, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

dfa::DatasetManifest require_manifest(const dfa::RunConfig& cfg) {
  dfa::check(!cfg.data.manifest.empty(), dfa::ErrorKind::kConfig, "data.manifest is not set");
  dfa::check(!cfg.data.store_root.empty(), dfa::ErrorKind::kConfig, "data.store_root is not set");
  return dfa::DatasetManifest::load(cfg.data.manifest);
}

dfa::SampleSet load_split(const dfa::RunConfig& cfg, const dfa::DatasetManifest& manifest, const std::string& split) {
  dfa::ModelInputSpec spec;
  spec.image_size = cfg.model.encoder.image_size;
  return dfa::load_sample_set(manifest, cfg.data.store_root, dfa::parse_split(split), spec);
}

dfa::DFAModel model_from_checkpoint(const dfa::RunConfig& cfg, const std::string& checkpoint) {
  dfa::check(!checkpoint.empty(), dfa::ErrorKind::kUsage, "--checkpoint is required");
  auto model = dfa::make_model(cfg, dfa::make_encoder(cfg));
  dfa::load_model_bundle(*model, dfa::load_store(checkpoint));
  return model;
}

// ---------------------------------------------------------------------------

int cmd_preprocess(const Common& c) {
  auto cfg = resolve(c);
  RunDir run(c.out);
  dfa::check(!cfg.data.media_root.empty(), dfa::ErrorKind::kConfig, "data.media_root is not set");
  if (cfg.data.store_root.empty()) cfg.data.store_root = (fs::path(c.out) / "store").string();
  dfa::DatasetManifest manifest;
  if (!cfg.data.manifest.empty() && fs::exists(cfg.data.manifest)) {
    manifest = dfa::DatasetManifest::load(cfg.data.manifest);
  } else {
    dfa::LabelingRule rule;
    rule.train_fraction = cfg.data.train_fraction;
    rule.seed = static_cast<std::uint64_t>(cfg.data.split_seed);
    manifest = dfa::build_manifest(cfg.data.media_root, rule, cfg.data.source_dataset);
    if (cfg.data.manifest.empty()) cfg.data.manifest = (fs::path(c.out) / "manifest.json").string();
    manifest.save(cfg.data.manifest);
  }
  if (fs::path(cfg.data.manifest).parent_path() == fs::path(c.out)) run.path(fs::path(cfg.data.manifest).filename());
  dfa::PreprocessOptions opts;
  opts.frames_per_video = cfg.data.frames_per_video;
  opts.frame_stride = cfg.data.frame_stride;
  opts.crop_size = cfg.data.crop_size;
  const auto stats = dfa::preprocess_dataset(manifest, cfg.data.media_root, cfg.data.store_root, opts);
  run.snapshot(cfg);
  ojson summary{{"videos", stats.videos},
                {"frames_written", stats.frames_written},
                {"frames_without_face", stats.frames_without_face},
                {"manifest", cfg.data.manifest},
                {"store_root", cfg.data.store_root}};
  run.write("preprocess.json", summary.dump(2) + "\n");
  run.finish();
  std::cout << summary.dump(2) << "\n";
  return 0;
}

ojson step_json(const dfa::StepRecord& s) {
  return {{"step", s.step},
          {"epoch", s.epoch},
          {"loss_global", optional_number(s.loss_global)},
          {"loss_local", optional_number(s.loss_local)},
          {"loss_fusion", optional_number(s.loss_fusion)},
          {"loss_total", s.loss_total},
          {"w_global", s.weights[0]},
          {"w_local", s.weights[1]},
          {"w_fusion", s.weights[2]}};
}

ojson epoch_json(const dfa::EpochRecord& e) {
  return {{"epoch", e.epoch},
          {"steps", e.steps},
          {"loss_global", optional_number(e.loss_global)},
          {"loss_local", optional_number(e.loss_local)},
          {"loss_fusion", optional_number(e.loss_fusion)},
          {"loss_total", e.loss_total},
          {"w_global", e.weights[0]},
          {"w_local", e.weights[1]},
          {"w_fusion", e.weights[2]},
          {"train_accuracy", e.train_accuracy},
          {"val_auc", optional_number(e.val_auc)},
          {"val_eer", optional_number(e.val_eer)}};
}

int cmd_train(const Common& c) {
  const auto cfg = resolve(c);
  RunDir run(c.out);
  run.snapshot(cfg);
  const auto manifest = require_manifest(cfg);
  const auto train_set = load_split(cfg, manifest, "train");
  const auto val_set = load_split(cfg, manifest, "val");
  dfa::Trainer trainer(dfa::make_model(cfg, dfa::make_encoder(cfg)), cfg.train);
  std::ofstream steps(run.path("train_log.jsonl"), std::ios::binary);
  std::ofstream epochs(run.path("epochs.jsonl"), std::ios::binary);
  dfa::CheckpointMeta meta{0, cfg.hash(), cfg.encoder_checkpoint};
  run.path("best.safetensors");
  run.path("last.safetensors");
  const auto result = trainer.train(
      train_set, &val_set, fs::path(c.out), [&](const dfa::StepRecord& s) { steps << step_json(s).dump() << "\n"; },
      [&](const dfa::EpochRecord& e) { epochs << epoch_json(e).dump() << "\n"; }, meta);
  steps.close();
  epochs.close();
  ojson summary{{"total_steps", result.total_steps},
                {"epochs", result.epochs.size()},
                {"best_epoch", result.best_epoch},
                {"final_train_accuracy", result.final_train_accuracy},
                {"train_samples", train_set.size()},
                {"val_samples", val_set.size()},
                {"config_hash", cfg.hash()}};
  run.write("train_summary.json", summary.dump(2) + "\n");
  run.finish();
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& scores, const std::string& level, std::optional<double> threshold,
             const std::string& aggregation) {
  if (!scores.empty()) {
    dfa::check(level == "frame" || level == "video", dfa::ErrorKind::kUsage, "--level must be frame or video");
    const std::string agg = aggregation.empty() ? "mean" : aggregation;
    auto table = dfa::ScoreTable::load(scores);
    if (level == "video") table = dfa::aggregate_video(table, dfa::parse_aggregation(agg));
    const auto report = dfa::evaluate_table(table, level, threshold.value_or(0.5));
    auto j = report.to_json();
    if (level == "video") j["aggregation"] = agg;
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  const auto cfg = resolve(c);
  RunDir run(c.out);
  run.snapshot(cfg);
  auto model = model_from_checkpoint(cfg, c.checkpoint);
  const auto samples = load_split(cfg, require_manifest(cfg), c.split);
  const auto scored = dfa::score_samples(*model, samples, dfa::Ablation{}, cfg.eval.batch_size);
  scored.table.save(run.path("scores.csv"));
  const double t = threshold.value_or(cfg.eval.threshold);
  const auto agg = dfa::parse_aggregation(aggregation.empty() ? cfg.eval.aggregation : aggregation);
  ojson out;
  out["split"] = c.split;
  out["frame"] = dfa::evaluate_table(scored.table, "frame", t).to_json();
  out["video"] = dfa::evaluate_table(dfa::aggregate_video(scored.table, agg), "video", t).to_json();
  out["video"]["aggregation"] = dfa::aggregation_name(agg);
  run.write("metrics.json", out.dump(2) + "\n");
  run.finish();
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_ablate(const Common& c) {
  const auto cfg = resolve(c);
  RunDir run(c.out);
  run.snapshot(cfg);
  const auto manifest = require_manifest(cfg);
  const auto train_set = load_split(cfg, manifest, "train");
  const auto eval_set = load_split(cfg, manifest, c.split);
  const auto encoder = dfa::make_encoder(cfg);
  const auto rows = dfa::ablate(cfg.train, [&] { return dfa::make_model(cfg, encoder); }, train_set, eval_set);
  ojson out{{"level", "frame"}, {"split", c.split}, {"rows", dfa::ablation_to_json(rows)}};
  run.write("ablation.json", out.dump(2) + "\n");
  run.finish();
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_export(const Common& c, std::optional<int> n_per_class) {
  const auto cfg = resolve(c);
  RunDir run(c.out);
  run.snapshot(cfg);
  auto model = model_from_checkpoint(cfg, c.checkpoint);
  const auto samples = load_split(cfg, require_manifest(cfg), c.split);
  const auto rows = dfa::export_features(*model, samples, n_per_class.value_or(cfg.eval.n_per_class),
                                         static_cast<std::uint64_t>(cfg.eval.feature_seed), cfg.eval.batch_size);
  run.write("features.csv", dfa::features_to_csv(rows));
  run.finish();
  std::cout << ojson{{"rows", rows.size()}, {"width", rows.empty() ? 0 : rows.front().values.size()}}.dump(2) << "\n";
  return 0;
}

int cmd_report(const Common& c, const std::string& published, const std::string& mixed, const std::string& dfdc,
               const std::string& ablation, std::optional<double> threshold, const std::string& aggregation) {
  dfa::ReportInputs in;
  try {
    in.published = nlohmann::json::parse(read_text(published));
  } catch (const nlohmann::json::exception& e) {
    dfa::fail(dfa::ErrorKind::kData, std::string("malformed published results: ") + e.what());
  }
  if (!mixed.empty()) in.mixed_frames = dfa::ScoreTable::load(mixed);
  if (!dfdc.empty()) in.dfdc_frames = dfa::ScoreTable::load(dfdc);
  if (!ablation.empty()) {
    try {
      in.ablation = dfa::ablation_from_json(nlohmann::json::parse(read_text(ablation)));
    } catch (const nlohmann::json::exception& e) {
      dfa::fail(dfa::ErrorKind::kData, std::string("malformed ablation results: ") + e.what());
    }
  }
  in.threshold = threshold.value_or(0.5);
  in.aggregation = dfa::parse_aggregation(aggregation.empty() ? "mean" : aggregation);
  const auto report = dfa::build_report(in);
  if (!c.out.empty()) {
    RunDir run(c.out);
    run.write("report.json", report.dump(2) + "\n");
    run.finish();
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_synth(const Common& c, const dfa::SyntheticDatasetOptions& opts) {
  RunDir run(c.out);
  dfa::write_synthetic_raw_dataset(c.out, opts);
  run.write("seed.txt", std::to_string(opts.seed) + "\n");
  run.write("synth.json", ojson{{"videos_per_class", opts.videos_per_class},
                                {"frames_per_video", opts.frames_per_video},
                                {"frame_size", opts.frame_size},
                                {"face_size", opts.face_size},
                                {"seed", opts.seed}}
                                  .dump(2) +
                              "\n");
  run.finish();
  return 0;
}

void report_error(const std::string& kind, const std::string& message) {
  std::cerr << ojson{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deepfake forensics adapter: preprocessing, training, evaluation and reports"};
  app.require_subcommand(1);
  Common common;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "TOML run configuration");
    sub->add_option("--override", common.overrides, "key=value override (repeatable)");
    sub->add_option("--out", common.out, "output directory");
  };

  auto* preprocess = app.add_subcommand("preprocess", "build the manifest and the sample store");
  add_config(preprocess);

  auto* train = app.add_subcommand("train", "train the adapter, local stream and fusion head");
  add_config(train);

  std::string scores, level = "frame", aggregation;
  std::optional<double> threshold;
  auto* eval = app.add_subcommand("eval", "metrics from a score table or a checkpoint");
  add_config(eval);
  eval->add_option("--scores", scores, "score table CSV (sample_id,video_id,label,score)");
  eval->add_option("--level", level, "frame or video")->check(CLI::IsMember({"frame", "video"}));
  eval->add_option("--threshold", threshold, "decision threshold for accuracy and precision");
  eval->add_option("--aggregation", aggregation, "video aggregation: mean or max")
      ->check(CLI::IsMember({"mean", "max"}));
  eval->add_option("--checkpoint", common.checkpoint, "trained bundle");
  eval->add_option("--split", common.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

  auto* ablate = app.add_subcommand("ablate", "train and score the four module toggle patterns");
  add_config(ablate);
  ablate->add_option("--split", common.split, "evaluation split")->check(CLI::IsMember({"train", "val", "test"}));

  std::optional<int> n_per_class;
  auto* exp = app.add_subcommand("export-features", "fused features for embedding plots");
  add_config(exp);
  exp->add_option("--checkpoint", common.checkpoint, "trained bundle")->required();
  exp->add_option("--split", common.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  exp->add_option("--n-per-class", n_per_class, "samples per class")->check(CLI::PositiveNumber);

  std::string published = DFA_DATA_DIR "/published_results.json", mixed, dfdc, ablation_file;
  auto* report = app.add_subcommand("report", "method x metric tables, ablation and radar rows");
  report->add_option("--published", published, "published results JSON");
  report->add_option("--mixed-scores", mixed, "frame scores on the mixed dataset");
  report->add_option("--dfdc-scores", dfdc, "frame scores on DFDC (video rows are aggregated from these)");
  report->add_option("--ablation", ablation_file, "ablation.json from the ablate command");
  report->add_option("--threshold", threshold, "decision threshold");
  report->add_option("--aggregation", aggregation, "video aggregation: mean or max")
      ->check(CLI::IsMember({"mean", "max"}));
  report->add_option("--out", common.out, "output directory");

  dfa::SyntheticDatasetOptions synth_opts;
  auto* synth = app.add_subcommand("synth", "write a synthetic raw dataset with detection sidecars");
  synth->add_option("--out", common.out, "dataset root")->required();
  synth->add_option("--videos-per-class", synth_opts.videos_per_class)->check(CLI::PositiveNumber);
  synth->add_option("--frames-per-video", synth_opts.frames_per_video)->check(CLI::PositiveNumber);
  synth->add_option("--frame-size", synth_opts.frame_size)->check(CLI::PositiveNumber);
  synth->add_option("--face-size", synth_opts.face_size)->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_opts.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*preprocess) return cmd_preprocess(common);
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common, scores, level, threshold, aggregation);
    if (*ablate) return cmd_ablate(common);
    if (*exp) return cmd_export(common, n_per_class);
    if (*report) return cmd_report(common, published, mixed, dfdc, ablation_file, threshold, aggregation);
    if (*synth) return cmd_synth(common, synth_opts);
  } catch (const dfa::Error& e) {
    report_error(std::string(dfa::error_kind_name(e.kind())), e.what());
    return e.kind() == dfa::ErrorKind::kUsage ? 2 : 1;
  } catch (const std::exception& e) {
    report_error("internal_error", e.what());
    return 1;
  }
  return 2;
}
