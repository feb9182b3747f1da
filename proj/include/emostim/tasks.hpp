#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace emostim {

enum class Suite { instruction_induction, bbii, custom };
enum class ScorerKind { exact_match, contained_match, set_match, multiple_choice, numeric_equal };

std::string_view to_string(Suite s);
std::string_view to_string(ScorerKind k);
Suite parse_suite(std::string_view s);
ScorerKind parse_scorer(std::string_view s);

// A single string, or a list. For set_match a list is the gold set; for every
// other scorer it is a list of accepted alternatives.
using Gold = std::variant<std::string, std::vector<std::string>>;

struct TaskExample {
  std::string input;
  Gold gold;
};

struct TaskSpec {
  std::string id;
  Suite suite = Suite::custom;
  std::string instruction;
  std::vector<TaskExample> examples;
  ScorerKind scorer = ScorerKind::exact_match;
  std::optional<double> random_baseline;
  std::optional<double> human_baseline;
  std::optional<std::string> neutral_label;

  std::size_t sample_count() const { return examples.size(); }
  // Throws Error(schema) naming the field and task id.
  void validate() const;
};

struct Score {
  double raw = 0.0;
  std::optional<double> normalized;
  std::optional<std::string> diagnostic;
};

// {"schema": 1, "tasks": [...]}. Throws Error(io|schema|duplicate_id).
std::vector<TaskSpec> load_tasks(const std::filesystem::path& path);
std::vector<TaskSpec> parse_tasks(std::string_view json_text, std::string_view origin = "<tasks>");

// Lowercase, trim, collapse internal whitespace, strip one terminal period.
std::string normalize_answer(std::string_view s);

// Letter of the first standalone option token ("(A)", "A.", "A)", "A:" or a
// bare single-letter answer); nullopt when none.
std::optional<char> extract_option(std::string_view response);

// First number in the text; commas between digits are ignored.
std::optional<double> extract_number(std::string_view response);

// Never throws for model output; normalized is filled when the task carries
// both baselines.
Score score_response(const TaskSpec& task, std::string_view response, const Gold& gold);

// 100 * (raw - random) / (human - random). Throws Error(degenerate_baseline).
double normalized_preferred_metric(double raw, double random_baseline, double human_baseline);

}  // namespace emostim
