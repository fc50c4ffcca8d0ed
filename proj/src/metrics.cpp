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

#include "dfa/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "dfa/error.hpp"

namespace dfa {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::size_t ScoreTable::count_label(int label) const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [label](const ScoreRow& r) { return r.label == label; }));
}

void ScoreTable::validate() const {
  for (const auto& r : rows) {
    check(r.label == 0 || r.label == 1, ErrorKind::kData, "label must be 0 or 1 (sample " + r.sample_id + ")");
    check(std::isfinite(r.score) && r.score >= 0.0 && r.score <= 1.0, ErrorKind::kData,
          "score must be finite and in [0, 1] (sample " + r.sample_id + ")");
  }
}

std::string ScoreTable::to_csv() const {
  std::string out = "sample_id,video_id,label,score\n";
  for (const auto& r : rows) {
    check(r.sample_id.find_first_of(",\n") == std::string::npos && r.video_id.find_first_of(",\n") == std::string::npos,
          ErrorKind::kData, "identifiers must not contain commas or newlines");
    out += r.sample_id + "," + r.video_id + "," + std::to_string(r.label) + "," + format_double(r.score) + "\n";
  }
  return out;
}

ScoreTable ScoreTable::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  check(static_cast<bool>(std::getline(in, line)), ErrorKind::kData, "score table is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  check(line == "sample_id,video_id,label,score", ErrorKind::kData, "unexpected score table header '" + line + "'");
  ScoreTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    check(fields.size() == 4, ErrorKind::kData, "line " + std::to_string(line_no) + ": expected 4 fields");
    ScoreRow row;
    row.sample_id = fields[0];
    row.video_id = fields[1];
    try {
      std::size_t used = 0;
      row.label = std::stoi(fields[2], &used);
      check(used == fields[2].size(), ErrorKind::kData, "bad label");
      row.score = std::stod(fields[3], &used);
      check(used == fields[3].size(), ErrorKind::kData, "bad score");
    } catch (const std::logic_error&) {
      fail(ErrorKind::kData, "line " + std::to_string(line_no) + ": unparsable label or score");
    }
    table.rows.push_back(std::move(row));
  }
  table.validate();
  return table;
}

void ScoreTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out << to_csv();
}

ScoreTable ScoreTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorKind::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_csv(ss.str());
}

ConfusionMetrics confusion_metrics(const ScoreTable& table, double threshold) {
  check(!table.rows.empty(), ErrorKind::kData, "score table is empty");
  check(threshold >= 0.0 && threshold <= 1.0, ErrorKind::kInvalidArgument, "threshold must be in [0, 1]");
  table.validate();
  ConfusionMetrics m;
  for (const auto& r : table.rows) {
    const bool predicted_fake = r.score >= threshold;
    if (r.label == 1) {
      (predicted_fake ? m.tp : m.fn)++;
    } else {
      (predicted_fake ? m.fp : m.tn)++;
    }
  }
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(table.rows.size());
  if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  return m;
}

namespace {

void require_both_classes(const ScoreTable& table, const char* metric) {
  table.validate();
  check(table.count_label(0) > 0 && table.count_label(1) > 0, ErrorKind::kUndefinedMetric,
        std::string(metric) + " needs at least one real and one fake sample");
}

}  // namespace

double auc(const ScoreTable& table) {
  require_both_classes(table, "AUC");
  std::vector<std::pair<double, int>> items;
  items.reserve(table.rows.size());
  for (const auto& r : table.rows) items.emplace_back(r.score, r.label);
  std::sort(items.begin(), items.end());
  // Twice the tie-averaged 1-based rank of a group spanning [i, j] is i + j.
  std::int64_t doubled_rank_sum = 0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j + 1 < items.size() && items[j + 1].first == items[i].first) ++j;
    const auto doubled = static_cast<std::int64_t>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (items[k].second == 1) doubled_rank_sum += doubled;
    }
    i = j + 1;
  }
  const auto nf = static_cast<std::int64_t>(table.count_label(1));
  const auto nr = static_cast<std::int64_t>(table.count_label(0));
  const std::int64_t doubled_u = doubled_rank_sum - nf * (nf + 1);
  return static_cast<double>(doubled_u) / static_cast<double>(2 * nf * nr);
}

EerResult eer(const ScoreTable& table) {
  require_both_classes(table, "EER");
  const auto nf = static_cast<std::int64_t>(table.count_label(1));
  const auto nr = static_cast<std::int64_t>(table.count_label(0));
  std::vector<std::pair<double, int>> items;
  for (const auto& r : table.rows) items.emplace_back(r.score, r.label);
  std::sort(items.begin(), items.end());
  // Moving the threshold up past a group turns its members into "real"
  // predictions: reals become true negatives, fakes become misses.
  std::int64_t fp = nr, fn = 0;
  std::int64_t best_gap = -1;
  EerResult best;
  std::size_t i = 0;
  while (i < items.size()) {
    const double t = items[i].first;
    // fp / fn here are the counts for threshold t (items >= t predicted fake).
    const std::int64_t gap = std::llabs(fp * nf - fn * nr);  // |FPR - FNR| * nf * nr
    if (best_gap < 0 || gap < best_gap) {
      best_gap = gap;
      best.threshold = t;
      best.fpr = static_cast<double>(fp) / static_cast<double>(nr);
      best.fnr = static_cast<double>(fn) / static_cast<double>(nf);
      best.eer = (best.fpr + best.fnr) / 2.0;
    }
    while (i < items.size() && items[i].first == t) {
      if (items[i].second == 1) {
        ++fn;
      } else {
        --fp;
      }
      ++i;
    }
  }
  return best;
}

VideoAggregation parse_aggregation(const std::string& name) {
  if (name == "mean") return VideoAggregation::kMean;
  if (name == "max") return VideoAggregation::kMax;
  fail(ErrorKind::kInvalidArgument, "unknown video aggregation '" + name + "' (mean or max)");
}

std::string aggregation_name(VideoAggregation agg) { return agg == VideoAggregation::kMean ? "mean" : "max"; }

ScoreTable aggregate_video(const ScoreTable& frames, VideoAggregation agg) {
  check(!frames.rows.empty(), ErrorKind::kData, "score table is empty");
  frames.validate();
  struct Acc {
    int label;
    double sum = 0.0;
    double max = 0.0;
    std::size_t count = 0;
  };
  std::map<std::string, Acc> groups;
  for (const auto& r : frames.rows) {
    check(!r.video_id.empty(), ErrorKind::kData, "row " + r.sample_id + " has no video_id");
    auto [it, inserted] = groups.try_emplace(r.video_id, Acc{r.label});
    check(it->second.label == r.label, ErrorKind::kData, "video " + r.video_id + " mixes labels");
    it->second.sum += r.score;
    it->second.max = it->second.count == 0 ? r.score : std::max(it->second.max, r.score);
    it->second.count++;
  }
  ScoreTable out;
  for (const auto& [video, acc] : groups) {
    const double score = agg == VideoAggregation::kMean ? acc.sum / static_cast<double>(acc.count) : acc.max;
    out.rows.push_back({video, video, acc.label, score});
  }
  return out;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["level"] = level;
  j["num_samples"] = num_samples;
  j["threshold_used"] = threshold_used;
  j["accuracy"] = accuracy;
  j["precision"] = precision ? nlohmann::ordered_json(*precision) : nlohmann::ordered_json(nullptr);
  j["auc"] = auc;
  j["eer"] = eer;
  j["eer_threshold"] = eer_threshold;
  return j;
}

MetricsReport evaluate_table(const ScoreTable& table, const std::string& level, double threshold) {
  MetricsReport r;
  r.level = level;
  r.num_samples = table.size();
  r.threshold_used = threshold;
  const auto cm = confusion_metrics(table, threshold);
  r.accuracy = cm.accuracy;
  r.precision = cm.precision;
  r.auc = auc(table);
  const auto e = eer(table);
  r.eer = e.eer;
  r.eer_threshold = e.threshold;
  return r;
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json ablation_to_json(const std::vector<AblationRow>& rows) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    out.push_back({{"global", r.global_on}, {"local", r.local_on}, {"ifc", r.ifc_on}, {"auc", r.auc}, {"eer", r.eer}});
  }
  return out;
}

std::vector<AblationRow> ablation_from_json(const nlohmann::json& doc) {
  const auto& rows = doc.is_object() && doc.contains("rows") ? doc.at("rows") : doc;
  check(rows.is_array(), ErrorKind::kData, "ablation results must be an array of rows");
  std::vector<AblationRow> out;
  try {
    for (const auto& r : rows) {
      out.push_back({r.at("global").get<bool>(), r.at("local").get<bool>(), r.at("ifc").get<bool>(),
                     r.at("auc").get<double>(), r.at("eer").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed ablation row: ") + e.what());
  }
  return out;
}

namespace {

using ojson = nlohmann::ordered_json;

ojson value_or_null(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

/// Published rows of one comparison plus a measured row for this run.
ojson comparison_table(const nlohmann::json& published, const std::string& key, const std::string& level,
                       const std::string& run_label, const std::map<std::string, std::optional<double>>& measured) {
  ojson table;
  table["level"] = level;
  ojson metrics = ojson::array();
  std::vector<std::string> names;
  if (published.contains(key)) {
    for (const auto& m : published.at(key).at("metrics")) names.push_back(m.get<std::string>());
  }
  for (const auto& n : names) metrics.push_back(n);
  table["metrics"] = metrics;
  ojson rows = ojson::array();
  if (published.contains(key)) {
    for (const auto& m : published.at(key).at("methods")) {
      ojson row;
      row["method"] = m.at("method");
      row["source"] = "published";
      const auto& values = m.at("values");
      check(values.size() == names.size(), ErrorKind::kData, "published row width mismatch in " + key);
      for (std::size_t i = 0; i < names.size(); ++i) row[names[i]] = values[i];
      rows.push_back(row);
    }
  }
  ojson mine;
  mine["method"] = run_label;
  mine["source"] = "measured";
  for (const auto& n : names) {
    auto it = measured.find(n);
    mine[n] = it == measured.end() ? ojson(nullptr) : value_or_null(it->second);
  }
  rows.push_back(mine);
  table["rows"] = rows;
  return table;
}

}  // namespace

nlohmann::ordered_json build_report(const ReportInputs& in) {
  ojson report;
  report["scope"] =
      "Published rows come from full-dataset, multi-GPU training and are not reproduced at desk scale; "
      "measured rows hold the metrics of the supplied score files.";

  std::map<std::string, std::optional<double>> mixed;
  if (in.mixed_frames) {
    const auto r = evaluate_table(*in.mixed_frames, "frame", in.threshold);
    mixed["Acc"] = r.accuracy;
    mixed["Precision"] = r.precision;
    mixed["AUC"] = r.auc;
    mixed["Avg"] = r.precision ? std::optional<double>((r.accuracy + *r.precision + r.auc) / 3.0) : std::nullopt;
  }
  report["mixed_frame"] = comparison_table(in.published, "mixed_frame", "frame", in.run_label, mixed);

  std::map<std::string, std::optional<double>> dfdc_frame, dfdc_video;
  if (in.dfdc_frames) {
    const auto f = evaluate_table(*in.dfdc_frames, "frame", in.threshold);
    dfdc_frame["AUC"] = f.auc;
    dfdc_frame["EER"] = f.eer;
    const auto v = evaluate_table(aggregate_video(*in.dfdc_frames, in.aggregation), "video", in.threshold);
    dfdc_video["AUC"] = v.auc;
    dfdc_video["EER"] = v.eer;
  }
  report["dfdc_frame"] = comparison_table(in.published, "dfdc_frame", "frame", in.run_label, dfdc_frame);
  report["dfdc_video"] = comparison_table(in.published, "dfdc_video", "video", in.run_label, dfdc_video);
  report["dfdc_video"]["aggregation"] = aggregation_name(in.aggregation);

  // Module ablation: one row per toggle pattern, published next to measured.
  ojson ablation = ojson::array();
  std::vector<AblationRow> published_rows;
  if (in.published.contains("ablation")) published_rows = ablation_from_json(in.published.at("ablation"));
  for (const auto& p : published_rows) {
    ojson row{{"global", p.global_on}, {"local", p.local_on}, {"ifc", p.ifc_on},
              {"published_auc", p.auc}, {"published_eer", p.eer}, {"auc", nullptr}, {"eer", nullptr}};
    for (const auto& m : in.ablation) {
      if (m.global_on == p.global_on && m.local_on == p.local_on && m.ifc_on == p.ifc_on) {
        row["auc"] = m.auc;
        row["eer"] = m.eer;
      }
    }
    ablation.push_back(row);
  }
  report["ablation"] = {{"level", "frame"}, {"rows", ablation}};

  // Radar rows: one per metric of the mixed comparison, method -> value.
  ojson radar = ojson::array();
  const auto& mixed_table = report["mixed_frame"];
  for (const auto& metric : mixed_table["metrics"]) {
    const auto name = metric.get<std::string>();
    ojson values;
    for (const auto& row : mixed_table["rows"]) values[row["method"].get<std::string>()] = row[name];
    radar.push_back({{"metric", name}, {"values", values}});
  }
  report["radar"] = radar;
  return report;
}

std::string features_to_csv(const std::vector<FeatureRow>& rows) {
  std::string out = "sample_id,label";
  const std::size_t width = rows.empty() ? 0 : rows.front().values.size();
  for (std::size_t i = 0; i < width; ++i) out += ",f" + std::to_string(i);
  out += "\n";
  for (const auto& r : rows) {
    check(r.values.size() == width, ErrorKind::kShape, "feature rows differ in width");
    out += r.sample_id + "," + std::to_string(r.label);
    for (double v : r.values) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

}  // namespace dfa
