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

// Frame- and video-level detection metrics over score tables. Pure
// functions, no tensor dependency.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dfa {

struct ScoreRow {
  std::string sample_id;
  std::string video_id;
  int label = 0;  // 1 = fake
  double score = 0.0;
};

struct ScoreTable {
  std::vector<ScoreRow> rows;

  std::size_t size() const { return rows.size(); }
  std::size_t count_label(int label) const;
  /// Labels in {0, 1}, scores finite and in [0, 1].
  void validate() const;

  /// Header "sample_id,video_id,label,score"; scores printed round-trip exact.
  std::string to_csv() const;
  static ScoreTable from_csv(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static ScoreTable load(const std::filesystem::path& path);
};

struct ConfusionMetrics {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  double accuracy = 0.0;
  std::optional<double> precision;  // absent when nothing is predicted fake
};

/// Predicts fake iff score >= threshold.
ConfusionMetrics confusion_metrics(const ScoreTable& table, double threshold = 0.5);

/// Probability that a random fake outscores a random real, ties counted 1/2.
/// Computed from tie-averaged ranks in integer arithmetic.
double auc(const ScoreTable& table);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  double fpr = 0.0;
  double fnr = 0.0;
};

/// Sweeps every distinct score as a threshold and keeps the one minimizing
/// |FPR - FNR| (lowest threshold on ties); eer = (FPR + FNR) / 2 there.
EerResult eer(const ScoreTable& table);

enum class VideoAggregation { kMean, kMax };
VideoAggregation parse_aggregation(const std::string& name);
std::string aggregation_name(VideoAggregation agg);

/// One row per video_id (sorted), sample_id = video_id.
ScoreTable aggregate_video(const ScoreTable& frames, VideoAggregation agg = VideoAggregation::kMean);

struct MetricsReport {
  std::string level = "frame";
  std::size_t num_samples = 0;
  double threshold_used = 0.5;
  double accuracy = 0.0;
  std::optional<double> precision;
  double auc = 0.0;
  double eer = 0.0;
  double eer_threshold = 0.0;

  nlohmann::ordered_json to_json() const;
};

MetricsReport evaluate_table(const ScoreTable& table, const std::string& level, double threshold = 0.5);

// ---------------------------------------------------------------------------
// Reports

struct AblationRow {
  bool global_on = true;
  bool local_on = true;
  bool ifc_on = true;
  double auc = 0.0;
  double eer = 0.0;
};

nlohmann::ordered_json ablation_to_json(const std::vector<AblationRow>& rows);
std::vector<AblationRow> ablation_from_json(const nlohmann::json& doc);

/// Inputs of the combined report. Each measured piece is optional; missing
/// ones leave null cells for this run.
struct ReportInputs {
  nlohmann::json published;  // data/published_results.json
  std::optional<ScoreTable> mixed_frames;
  std::optional<ScoreTable> dfdc_frames;
  std::vector<AblationRow> ablation;
  VideoAggregation aggregation = VideoAggregation::kMean;
  double threshold = 0.5;
  std::string run_label = "DFA (this run)";
};

/// Method x metric tables for the mixed frame-level, DFDC frame-level and
/// DFDC video-level comparisons, the module ablation and radar-chart rows.
nlohmann::ordered_json build_report(const ReportInputs& inputs);

// ---------------------------------------------------------------------------
// Feature export

struct FeatureRow {
  std::string sample_id;
  int label = 0;
  std::vector<double> values;
};

/// CSV: sample_id,label,f0..f{D-1}; values printed round-trip exact.
std::string features_to_csv(const std::vector<FeatureRow>& rows);

/// Formats a double so that parsing it back yields the same value.
std::string format_double(double v);

}  // namespace dfa
