#include "lexroute/taxonomy.hpp"

#include <algorithm>
#include <cctype>

#include "lexroute/error.hpp"

namespace lexroute {
namespace {

// "Question Answering", "question_answering", "question-answering" and
// "QuestionAnswering" all normalise to "questionanswering".
std::string squash(std::string_view s) {
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

}  // namespace

std::string_view role_name(Role r) {
    switch (r) {
        case Role::Consultant: return "Consultant";
        case Role::Researcher: return "Researcher";
        case Role::Paralegal: return "Paralegal";
        case Role::Advisor: return "Advisor";
    }
    return "Consultant";
}

Role parse_role(std::string_view s) {
    std::string k = squash(s);
    for (Role r : kAllRoles) {
        if (squash(role_name(r)) == k) return r;
    }
    if (k == "researchassociate") return Role::Researcher;
    throw Error(ErrorCode::Validation, "unknown role '" + std::string(s) + "'");
}

std::string_view task_name(Task t) {
    switch (t) {
        case Task::QuestionAnswering: return "Question Answering";
        case Task::CasesIdentification: return "Cases Identification";
        case Task::ArticleRecitation: return "Article Recitation";
        case Task::ElementExtraction: return "Element Extraction";
        case Task::TextClassification: return "Text Classification";
        case Task::DocumentSummarization: return "Document Summarization";
        case Task::ContractDrafting: return "Contract Drafting";
        case Task::CaseAnalysis: return "Case Analysis";
        case Task::JudgmentPrediction: return "Judgment Prediction";
    }
    return "Question Answering";
}

Task parse_task(std::string_view s) {
    std::string k = squash(s);
    for (Task t : kAllTasks) {
        if (squash(task_name(t)) == k) return t;
    }
    throw Error(ErrorCode::Validation, "unknown task '" + std::string(s) + "'");
}

std::string_view metric_name(MetricKind m) {
    switch (m) {
        case MetricKind::Accuracy: return "Accuracy";
        case MetricKind::RougeL: return "RougeL";
        case MetricKind::F1: return "F1";
        case MetricKind::BLEU: return "BLEU";
    }
    return "Accuracy";
}

MetricKind parse_metric(std::string_view s) {
    std::string k = squash(s);
    if (k == "accuracy") return MetricKind::Accuracy;
    if (k == "rougel") return MetricKind::RougeL;
    if (k == "f1" || k == "f1score") return MetricKind::F1;
    if (k == "bleu") return MetricKind::BLEU;
    throw Error(ErrorCode::Validation, "unknown metric '" + std::string(s) + "'");
}

Role role_for_task(Task t) {
    switch (t) {
        case Task::QuestionAnswering: return Role::Consultant;
        case Task::CasesIdentification:
        case Task::ArticleRecitation:
        case Task::ElementExtraction:
        case Task::TextClassification: return Role::Researcher;
        case Task::DocumentSummarization:
        case Task::ContractDrafting: return Role::Paralegal;
        case Task::CaseAnalysis:
        case Task::JudgmentPrediction: return Role::Advisor;
    }
    return Role::Consultant;
}

std::vector<MetricKind> metrics_for_task(Task t) {
    switch (t) {
        case Task::QuestionAnswering: return {MetricKind::Accuracy};
        case Task::CasesIdentification: return {MetricKind::RougeL};
        case Task::ArticleRecitation: return {MetricKind::RougeL};
        case Task::ElementExtraction: return {MetricKind::F1};
        case Task::TextClassification: return {MetricKind::Accuracy};
        case Task::DocumentSummarization: return {MetricKind::BLEU};
        case Task::ContractDrafting: return {MetricKind::RougeL};
        case Task::CaseAnalysis: return {MetricKind::RougeL, MetricKind::Accuracy};
        case Task::JudgmentPrediction: return {MetricKind::RougeL};
    }
    return {};
}

}  // namespace lexroute
