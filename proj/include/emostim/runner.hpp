#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "emostim/catalog.hpp"
#include "emostim/gateway.hpp"
#include "emostim/tasks.hpp"

namespace emostim {

enum class Setting { zero_shot, few_shot, zero_shot_cot };
std::string_view to_string(Setting s);
Setting parse_setting(std::string_view s);

inline constexpr std::string_view kControlId = "control";
inline constexpr std::string_view kCotSuffix = "Let's think step by step.";
inline constexpr int kGridSchema = 1;
inline constexpr int kRecordSchema = 1;

struct GridConfig {
  std::optional<std::filesystem::path> task_file;
  std::vector<std::string> tasks;
  std::vector<std::string> stimuli;  // control is implicit
  std::vector<std::string> models;
  std::vector<double> temperatures;
  Setting setting = Setting::zero_shot;
  // Seeded subset of examples per task; all examples when absent.
  std::optional<int> samples_per_cell;
  std::uint64_t seed = 0;
  int shots = 3;  // demonstrations per query in the few-shot setting
  std::optional<std::filesystem::path> asset_dir;
  int max_tokens = 512;

  // Throws Error(planning).
  void validate() const;
};

GridConfig grid_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const GridConfig& c);
// A relative task_file or asset_dir resolves against the file's directory.
GridConfig load_grid_config(const std::filesystem::path& path);

struct Trial {
  std::string trial_id;
  std::shared_ptr<const TaskSpec> task;
  std::string stimulus_id;
  std::string model_id;
  double temperature = kDefaultTemperature;
  Setting setting = Setting::zero_shot;
  std::size_t example_index = 0;
  CompletionRequest request;

  const TaskExample& example() const { return task->examples[example_index]; }
  // Text of the final user message.
  const std::string& final_prompt() const { return request.messages.back().text; }
};

std::string make_trial_id(std::string_view task, std::string_view stimulus, std::string_view model,
                          double temperature, Setting setting, std::size_t example_index);

// "{instruction}\n\nInput: {input}\nOutput:"
std::string format_query(std::string_view instruction, std::string_view input);
// Gold rendered as a demonstration answer.
std::string gold_text(const Gold& gold, ScorerKind scorer);

// Order: task, stimulus (control first), model, temperature, example.
// Few-shot demonstrations are the first `shots` other examples of the task.
// Throws Error(planning) naming any id that does not resolve.
std::vector<Trial> plan_grid(const GridConfig& config, const std::vector<TaskSpec>& tasks,
                             const Catalog& catalog);

struct TrialError {
  std::string kind;
  std::string message;
};

struct TrialRecord {
  std::string trial_id;
  std::string task_id;
  Suite suite = Suite::custom;
  std::string stimulus_id;
  std::string model_id;
  double temperature = kDefaultTemperature;
  Setting setting = Setting::zero_shot;
  std::size_t example_index = 0;
  std::string final_prompt;
  std::optional<std::string> response;
  std::optional<Score> score;
  std::optional<TrialError> error;
  int attempts = 0;
  std::int64_t latency_ms = 0;
  std::string started_at;
  std::string finished_at;

  bool ok() const { return score.has_value(); }
  // Normalized metric when present, raw otherwise.
  double value() const;
};

nlohmann::ordered_json to_json(const TrialRecord& r);
// Throws Error(schema).
TrialRecord record_from_json(const nlohmann::json& j);

// Append-only JSONL store. Appends are serialized and flushed per line.
class ResultStore {
 public:
  // Loads any existing records. Throws Error(io|schema).
  explicit ResultStore(std::filesystem::path path);

  void append(const TrialRecord& record);
  std::vector<TrialRecord> records() const;
  // Latest record per trial_id.
  std::vector<TrialRecord> latest() const;
  bool completed(std::string_view trial_id) const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::vector<TrialRecord> records_;
  std::map<std::string, std::size_t, std::less<>> latest_;
};

// Deterministic model that answers every query with the gold output of the
// matching task example.
class EchoOracleClient final : public CompletionClient {
 public:
  explicit EchoOracleClient(std::vector<TaskSpec> tasks);
  ModelResponse complete(const CompletionRequest& request) override;

 private:
  std::vector<TaskSpec> tasks_;
};

struct Grouping {
  bool by_suite = true;
  bool by_stimulus = true;
  bool by_setting = false;
  bool by_temperature = false;
};

struct GroupKey {
  std::optional<Suite> suite;
  std::optional<std::string> stimulus;
  std::optional<Setting> setting;
  std::optional<double> temperature;

  auto operator<=>(const GroupKey&) const = default;
};

struct AggregateRow {
  GroupKey key;
  double mean = 0.0;
  // Over per-(task, model) means; absent below two of them.
  std::optional<double> std_error;
  std::size_t records = 0;
  std::size_t tasks = 0;
  std::size_t models = 0;
};

struct AggregateTable {
  std::vector<AggregateRow> rows;  // ordered by key
  std::vector<std::string> diagnostics;
};

// Mean over a task's examples, then over tasks, then over models. Errored
// records are excluded.
AggregateTable aggregate(const std::vector<TrialRecord>& records, const Grouping& grouping = {});

double relative_gain(double augmented_mean, double vanilla_mean);
// Throws Error(insufficient_samples) below two samples.
double std_error(const std::vector<double>& samples);

struct GainRow {
  Suite suite = Suite::custom;
  std::string stimulus_id;
  double mean = 0.0;
  double control_mean = 0.0;
  double gain = 0.0;
  std::optional<double> ratio;  // gain / control_mean; absent when control is 0
};

struct RunReport {
  AggregateTable table;  // by suite and stimulus
  std::vector<GainRow> gains;
  std::size_t scored = 0;
  std::size_t errored = 0;
  std::map<std::string, std::size_t> error_kinds;
};

// Deterministic in the set of latest records per trial_id.
RunReport build_report(const std::vector<TrialRecord>& records);

struct RankEntry {
  std::string stimulus_id;
  double mean = 0.0;
};
// Excludes control; mean descending, ties by id ascending.
std::vector<RankEntry> rank_stimuli(const RunReport& report, Suite suite);

std::string report_csv(const RunReport& report);
std::string report_markdown(const RunReport& report);
std::string ranking_csv(const std::vector<RankEntry>& ranking);
std::string ranking_markdown(const std::vector<RankEntry>& ranking);

struct ExecuteOptions {
  int workers = 4;
  // Stops dispatching after this many new trials.
  std::optional<std::size_t> max_new_trials;
};

struct ExecuteResult {
  std::size_t executed = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  RunReport report;
};

// Runs trials not yet completed in the store and appends one record per
// trial. Per-trial errors are recorded and the run continues.
ExecuteResult execute(const std::vector<Trial>& trials, CompletionClient& client, ResultStore& store,
                      const ExecuteOptions& options = {});

}  // namespace emostim
