#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lexroute/taxonomy.hpp"

namespace lexroute {

/// Lowercase whitespace tokenization shared by all text metrics.
std::vector<std::string> metric_tokens(std::string_view text);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// F1 of LCS precision and recall. Both empty gives 1.0, one empty 0.0.
double rouge_l(std::string_view prediction, std::string_view reference);

/// Uniform-weight geometric mean of clipped n-gram precisions times the
/// brevity penalty. Orders longer than the prediction are left out of the
/// mean. A zero match count at order n >= 2 is smoothed to 1 / (c + 1);
/// zero unigram matches (or an empty prediction) give 0.
double bleu(std::string_view prediction, std::string_view reference, int max_n = 4);

/// Set F1. Both empty gives 1.0.
double f1(const std::vector<std::string>& predicted, const std::vector<std::string>& reference);

struct LabelPair {
    std::string predicted;
    std::string gold;
};

/// Exact match after case and whitespace folding. Throws UndefinedMetric when empty.
double accuracy(std::span<const LabelPair> pairs);
/// Unweighted mean of per-class F1 over every label seen. Throws UndefinedMetric when empty.
double macro_f1(std::span<const LabelPair> pairs);
/// Throws UndefinedMetric when empty.
double abstention_rate(std::span<const bool> abstained);

struct EvalRecord {
    std::string id;
    std::string input;
    std::vector<std::string> references;
    std::optional<std::string> label;
    std::vector<std::string> docs;
};

std::vector<EvalRecord> parse_eval_jsonl(std::istream& in, const std::string& source = "<stream>");
std::vector<EvalRecord> load_eval_jsonl(const std::string& path);

struct EvalTask {
    std::string name;  // report label, e.g. "rouge-fixture"
    Task task = Task::QuestionAnswering;
    MetricKind metric = MetricKind::Accuracy;
    std::string dataset;

    /// Throws Configuration when the metric is not one the task is scored by.
    void validate() const;
};

EvalTask eval_task_from_json(const nlohmann::json& j);
nlohmann::json eval_task_to_json(const EvalTask& t);

struct EvalPrediction {
    std::string text;
    std::optional<std::string> label;
    bool abstained = false;
};

using EvalPipeline = std::function<EvalPrediction(const EvalRecord&)>;

struct EvalPair {
    std::string id;
    std::string prediction;
    std::vector<std::string> references;
    std::optional<std::string> predicted_label;
    std::optional<std::string> label;
    bool abstained = false;
    std::optional<double> score;  // per-pair metric value, absent when abstained
};

struct MetricReport {
    std::string task;
    MetricKind metric = MetricKind::Accuracy;
    std::optional<double> score;  // null when no pair was scored
    double abstention_rate = 0.0;
    std::size_t n = 0;
    std::size_t n_scored = 0;
    std::vector<EvalPair> pairs;  // ordered by id
};

nlohmann::json metric_report_to_json(const MetricReport& r);

/// Scores one pair with the task metric. Multiple references take the best.
double score_pair(MetricKind metric, const std::string& prediction, const std::vector<std::string>& references);

/// Runs the pipeline over every record. Pairs are ordered by id; the task
/// score is the mean per-pair score over non-abstained pairs, except F1 on
/// labelled data which is macro F1 over predicted versus gold labels.
MetricReport run_eval(const EvalTask& task, std::span<const EvalRecord> records, const EvalPipeline& pipeline);

}  // namespace lexroute
