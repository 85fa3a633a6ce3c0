#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace lexroute {

enum class Role { Consultant, Researcher, Paralegal, Advisor };

inline constexpr std::array<Role, 4> kAllRoles{Role::Consultant, Role::Researcher, Role::Paralegal, Role::Advisor};

enum class Task {
    QuestionAnswering,
    CasesIdentification,
    ArticleRecitation,
    ElementExtraction,
    TextClassification,
    DocumentSummarization,
    ContractDrafting,
    CaseAnalysis,
    JudgmentPrediction,
};

inline constexpr std::array<Task, 9> kAllTasks{
    Task::QuestionAnswering,     Task::CasesIdentification, Task::ArticleRecitation,
    Task::ElementExtraction,     Task::TextClassification,  Task::DocumentSummarization,
    Task::ContractDrafting,      Task::CaseAnalysis,        Task::JudgmentPrediction,
};

enum class MetricKind { Accuracy, RougeL, F1, BLEU };

std::string_view role_name(Role r);
Role parse_role(std::string_view s);

std::string_view task_name(Task t);
Task parse_task(std::string_view s);

std::string_view metric_name(MetricKind m);
MetricKind parse_metric(std::string_view s);

/// Which expert role owns a task in the legal task table.
Role role_for_task(Task t);

/// Metrics the task table assigns to a task (Case Analysis has two).
std::vector<MetricKind> metrics_for_task(Task t);

}  // namespace lexroute
