#include "lexroute/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "lexroute/embedder.hpp"
#include "lexroute/error.hpp"

namespace lexroute {

std::vector<std::string> metric_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(std::string_view prediction, std::string_view reference) {
    const auto p = metric_tokens(prediction);
    const auto r = metric_tokens(reference);
    if (p.empty() && r.empty()) return 1.0;
    if (p.empty() || r.empty()) return 0.0;
    const double lcs = static_cast<double>(lcs_length(p, r));
    if (lcs == 0.0) return 0.0;
    const double precision = lcs / static_cast<double>(p.size());
    const double recall = lcs / static_cast<double>(r.size());
    return 2.0 * precision * recall / (precision + recall);
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> out;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                       toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return out;
}

}  // namespace

double bleu(std::string_view prediction, std::string_view reference, int max_n) {
    if (max_n < 1) throw Error(ErrorCode::Validation, "bleu max_n must be >= 1");
    const auto p = metric_tokens(prediction);
    const auto r = metric_tokens(reference);
    if (p.empty()) return 0.0;
    const std::size_t orders = std::min<std::size_t>(static_cast<std::size_t>(max_n), p.size());
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= orders; ++n) {
        const auto pc = ngram_counts(p, n);
        const auto rc = ngram_counts(r, n);
        std::size_t matched = 0;
        for (const auto& [gram, count] : pc) {
            auto it = rc.find(gram);
            if (it != rc.end()) matched += std::min(count, it->second);
        }
        const std::size_t total = p.size() - n + 1;
        if (matched == 0) {
            if (n == 1) return 0.0;
            log_sum += std::log(1.0 / static_cast<double>(total + 1));
        } else {
            log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
        }
    }
    const double c = static_cast<double>(p.size());
    const double ref_len = static_cast<double>(r.size());
    const double bp = c > ref_len ? 1.0 : std::exp(1.0 - ref_len / c);
    return bp * std::exp(log_sum / static_cast<double>(orders));
}

double f1(const std::vector<std::string>& predicted, const std::vector<std::string>& reference) {
    const std::set<std::string> p(predicted.begin(), predicted.end());
    const std::set<std::string> r(reference.begin(), reference.end());
    if (p.empty() && r.empty()) return 1.0;
    std::size_t tp = 0;
    for (const auto& x : p) tp += r.count(x);
    if (tp == 0) return 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(p.size());
    const double recall = static_cast<double>(tp) / static_cast<double>(r.size());
    return 2.0 * precision * recall / (precision + recall);
}

double accuracy(std::span<const LabelPair> pairs) {
    if (pairs.empty()) throw Error(ErrorCode::UndefinedMetric, "accuracy over zero pairs");
    std::size_t hits = 0;
    for (const auto& pr : pairs) hits += fold_text(pr.predicted) == fold_text(pr.gold) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

double macro_f1(std::span<const LabelPair> pairs) {
    if (pairs.empty()) throw Error(ErrorCode::UndefinedMetric, "macro F1 over zero pairs");
    struct Counts {
        std::size_t tp = 0, fp = 0, fn = 0;
    };
    std::map<std::string, Counts> classes;
    for (const auto& pr : pairs) {
        const std::string p = fold_text(pr.predicted);
        const std::string g = fold_text(pr.gold);
        if (p == g) {
            ++classes[g].tp;
        } else {
            ++classes[p].fp;
            ++classes[g].fn;
        }
    }
    double sum = 0.0;
    for (const auto& [label, c] : classes) {
        const std::size_t denom = 2 * c.tp + c.fp + c.fn;
        sum += denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
    }
    return sum / static_cast<double>(classes.size());
}

double abstention_rate(std::span<const bool> abstained) {
    if (abstained.empty()) throw Error(ErrorCode::UndefinedMetric, "abstention rate over zero pairs");
    const auto n = std::count(abstained.begin(), abstained.end(), true);
    return static_cast<double>(n) / static_cast<double>(abstained.size());
}

std::vector<EvalRecord> parse_eval_jsonl(std::istream& in, const std::string& source) {
    std::vector<EvalRecord> out;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = source + " line " + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::Parse, where + ": " + e.what());
        }
        if (!j.is_object()) throw Error(ErrorCode::Parse, where + ": record must be a JSON object");
        EvalRecord r;
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const auto& v = it.value();
            auto need_string = [&](const char* what) {
                if (!v.is_string()) throw Error(ErrorCode::Parse, where + ": '" + what + "' must be a string");
                return v.get<std::string>();
            };
            auto need_strings = [&](const char* what) {
                if (!v.is_array()) throw Error(ErrorCode::Parse, where + ": '" + what + "' must be an array");
                std::vector<std::string> xs;
                for (const auto& e : v) {
                    if (!e.is_string()) throw Error(ErrorCode::Parse, where + ": '" + what + "' must hold strings");
                    xs.push_back(e.get<std::string>());
                }
                return xs;
            };
            if (k == "id") {
                r.id = need_string("id");
            } else if (k == "input") {
                r.input = need_string("input");
            } else if (k == "references") {
                auto xs = need_strings("references");
                r.references.insert(r.references.end(), xs.begin(), xs.end());
            } else if (k == "reference") {
                r.references.push_back(need_string("reference"));
            } else if (k == "label") {
                if (!v.is_null()) r.label = need_string("label");
            } else if (k == "docs") {
                r.docs = need_strings("docs");
            } else {
                throw Error(ErrorCode::Parse, where + ": unknown field '" + k + "'");
            }
        }
        const std::string who = r.id.empty() ? where : where + " (id " + r.id + ")";
        if (r.id.empty()) throw Error(ErrorCode::Parse, where + ": missing 'id'");
        if (r.input.empty()) throw Error(ErrorCode::Parse, who + ": missing 'input'");
        if (r.references.empty() && !r.label) throw Error(ErrorCode::Parse, who + ": needs references or a label");
        if (!seen.insert(r.id).second) throw Error(ErrorCode::Parse, who + ": duplicate id");
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<EvalRecord> load_eval_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open eval data " + path);
    return parse_eval_jsonl(in, path);
}

void EvalTask::validate() const {
    const auto allowed = metrics_for_task(task);
    if (std::find(allowed.begin(), allowed.end(), metric) == allowed.end()) {
        throw Error(ErrorCode::Configuration, "task '" + std::string(task_name(task)) + "' is not scored by " +
                                                  std::string(metric_name(metric)));
    }
}

EvalTask eval_task_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorCode::Configuration, "eval task must be an object");
    EvalTask t;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (!it.value().is_string()) throw Error(ErrorCode::Configuration, "eval task '" + k + "' must be a string");
        const std::string v = it.value().get<std::string>();
        if (k == "name") t.name = v;
        else if (k == "task") t.task = parse_task(v);
        else if (k == "metric") t.metric = parse_metric(v);
        else if (k == "dataset") t.dataset = v;
        else throw Error(ErrorCode::Configuration, "unknown eval task key '" + k + "'");
    }
    if (!j.contains("metric")) t.metric = metrics_for_task(t.task).front();
    if (t.name.empty()) t.name = std::string(task_name(t.task));
    t.validate();
    return t;
}

nlohmann::json eval_task_to_json(const EvalTask& t) {
    return {{"name", t.name},
            {"task", std::string(task_name(t.task))},
            {"metric", std::string(metric_name(t.metric))},
            {"dataset", t.dataset}};
}

nlohmann::json metric_report_to_json(const MetricReport& r) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : r.pairs) {
        nlohmann::json jp{{"id", p.id},
                          {"prediction", p.prediction},
                          {"references", p.references},
                          {"abstained", p.abstained},
                          {"score", p.score ? nlohmann::json(*p.score) : nlohmann::json(nullptr)}};
        if (p.label) jp["label"] = *p.label;
        if (p.predicted_label) jp["predicted_label"] = *p.predicted_label;
        pairs.push_back(std::move(jp));
    }
    return {{"task", r.task},
            {"metric", std::string(metric_name(r.metric))},
            {"score", r.score ? nlohmann::json(*r.score) : nlohmann::json(nullptr)},
            {"abstention_rate", r.abstention_rate},
            {"n", r.n},
            {"n_scored", r.n_scored},
            {"pairs", std::move(pairs)}};
}

double score_pair(MetricKind metric, const std::string& prediction, const std::vector<std::string>& references) {
    if (references.empty()) throw Error(ErrorCode::Validation, "pair has no references");
    double best = 0.0;
    for (const auto& ref : references) {
        double s = 0.0;
        switch (metric) {
            case MetricKind::Accuracy: s = fold_text(prediction) == fold_text(ref) ? 1.0 : 0.0; break;
            case MetricKind::RougeL: s = rouge_l(prediction, ref); break;
            case MetricKind::BLEU: s = bleu(prediction, ref); break;
            case MetricKind::F1: s = f1(metric_tokens(prediction), metric_tokens(ref)); break;
        }
        best = std::max(best, s);
    }
    return best;
}

MetricReport run_eval(const EvalTask& task, std::span<const EvalRecord> records, const EvalPipeline& pipeline) {
    task.validate();
    if (records.empty()) throw Error(ErrorCode::UndefinedMetric, "task " + task.name + " has no records");
    if (!pipeline) throw Error(ErrorCode::Configuration, "eval pipeline is not set");
    MetricReport report;
    report.task = task.name;
    report.metric = task.metric;

    std::vector<const EvalRecord*> ordered;
    for (const auto& r : records) ordered.push_back(&r);
    std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

    std::vector<LabelPair> labelled;
    std::vector<bool> abstained;
    double sum = 0.0;
    for (const EvalRecord* rec : ordered) {
        EvalPrediction pred = pipeline(*rec);
        EvalPair pair{rec->id, pred.text, rec->references, pred.label, rec->label, pred.abstained, std::nullopt};
        abstained.push_back(pred.abstained);
        if (!pred.abstained) {
            if (rec->label) {
                const std::string guess = pred.label.value_or(pred.text);
                pair.score = fold_text(guess) == fold_text(*rec->label) ? 1.0 : 0.0;
                labelled.push_back({guess, *rec->label});
            } else {
                pair.score = score_pair(task.metric, pred.text, rec->references);
            }
            sum += *pair.score;
            ++report.n_scored;
        }
        report.pairs.push_back(std::move(pair));
    }
    report.n = ordered.size();
    if (report.n == 0) throw Error(ErrorCode::UndefinedMetric, "eval over zero records");
    auto flags = std::make_unique<bool[]>(abstained.size());
    std::copy(abstained.begin(), abstained.end(), flags.get());
    report.abstention_rate = abstention_rate(std::span<const bool>(flags.get(), abstained.size()));
    if (report.n_scored > 0) {
        if (task.metric == MetricKind::F1 && labelled.size() == report.n_scored) {
            report.score = macro_f1(labelled);
        } else {
            report.score = sum / static_cast<double>(report.n_scored);
        }
    }
    return report;
}

}  // namespace lexroute
