#include "emostim/runner.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "emostim/error.hpp"
#include "emostim/rng.hpp"
#include "emostim/transform.hpp"

namespace emostim {

namespace {

std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed4(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << v;
  return os.str();
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

[[noreturn]] void planning_error(const std::string& what) { throw Error(ErrorKind::planning, what); }

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

double mean_of(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Instruction with the stimulus applied, plus any image.
AugmentedPrompt augment_instruction(const std::string& instruction, const EmotionStimulus& s,
                                    const GridConfig& config) {
  if (s.modality == Modality::visual) {
    if (!config.asset_dir)
      planning_error("visual stimulus " + s.id + " requires asset_dir");
    return attach_image(instruction, s, *config.asset_dir);
  }
  if (s.polarity == Polarity::attack && s.attack_form) return prefix_context(instruction, s);
  return append_stimulus(instruction, s);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// All indices, or a seeded subset in ascending order.
std::vector<std::size_t> select_examples(const TaskSpec& task, const GridConfig& config) {
  std::vector<std::size_t> idx(task.examples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (!config.samples_per_cell || idx.size() <= static_cast<std::size_t>(*config.samples_per_cell))
    return idx;
  SeededRng rng(config.seed ^ fnv1a(task.id));
  for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
  idx.resize(static_cast<std::size_t>(*config.samples_per_cell));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::string_view to_string(Setting s) {
  switch (s) {
    case Setting::zero_shot: return "zero_shot";
    case Setting::few_shot: return "few_shot";
    case Setting::zero_shot_cot: return "zero_shot_cot";
  }
  return "zero_shot";
}

Setting parse_setting(std::string_view s) {
  if (s == "zero_shot") return Setting::zero_shot;
  if (s == "few_shot") return Setting::few_shot;
  if (s == "zero_shot_cot") return Setting::zero_shot_cot;
  throw Error(ErrorKind::invalid_argument, "unknown setting '" + std::string(s) + "'");
}

void GridConfig::validate() const {
  if (tasks.empty()) planning_error("grid lists no tasks");
  if (models.empty()) planning_error("grid lists no models");
  if (temperatures.empty()) planning_error("grid lists no temperatures");
  for (double t : temperatures)
    if (!(t >= 0.0) || !std::isfinite(t)) planning_error("invalid temperature " + format_number(t));
  if (samples_per_cell && *samples_per_cell < 1) planning_error("samples_per_cell must be >= 1");
  if (shots < 0) planning_error("shots must be >= 0");
  if (max_tokens < 1) planning_error("max_tokens must be >= 1");
  auto no_dupes = [](const std::vector<std::string>& ids, const char* what) {
    std::set<std::string_view> seen;
    for (const auto& id : ids)
      if (!seen.insert(id).second) planning_error(std::string("duplicate ") + what + " " + id);
  };
  no_dupes(tasks, "task");
  no_dupes(stimuli, "stimulus");
  no_dupes(models, "model");
}

GridConfig grid_config_from_json(const nlohmann::json& j) {
  auto bad = [](const std::string& field, const std::string& why) -> Error {
    return Error(ErrorKind::schema, "grid config field '" + field + "' " + why);
  };
  if (!j.is_object()) throw bad("<root>", "must be an object");
  if (j.value("schema", 0) != kGridSchema) throw bad("schema", "must be 1");
  GridConfig c;
  try {
    if (j.contains("task_file")) c.task_file = j.at("task_file").get<std::string>();
    c.tasks = j.at("tasks").get<std::vector<std::string>>();
    if (j.contains("stimuli")) c.stimuli = j.at("stimuli").get<std::vector<std::string>>();
    c.models = j.at("models").get<std::vector<std::string>>();
    c.temperatures = j.at("temperatures").get<std::vector<double>>();
    if (j.contains("setting")) c.setting = parse_setting(j.at("setting").get<std::string>());
    if (j.contains("samples_per_cell") && !j.at("samples_per_cell").is_null())
      c.samples_per_cell = j.at("samples_per_cell").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("shots")) c.shots = j.at("shots").get<int>();
    if (j.contains("asset_dir")) c.asset_dir = j.at("asset_dir").get<std::string>();
    if (j.contains("max_tokens")) c.max_tokens = j.at("max_tokens").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, std::string("grid config: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::schema, std::string("grid config: ") + e.what());
  }
  return c;
}

nlohmann::ordered_json to_json(const GridConfig& c) {
  nlohmann::ordered_json j;
  j["schema"] = kGridSchema;
  if (c.task_file) j["task_file"] = c.task_file->string();
  j["tasks"] = c.tasks;
  j["stimuli"] = c.stimuli;
  j["models"] = c.models;
  j["temperatures"] = c.temperatures;
  j["setting"] = to_string(c.setting);
  if (c.samples_per_cell) j["samples_per_cell"] = *c.samples_per_cell;
  j["seed"] = c.seed;
  j["shots"] = c.shots;
  if (c.asset_dir) j["asset_dir"] = c.asset_dir->string();
  j["max_tokens"] = c.max_tokens;
  return j;
}

GridConfig load_grid_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open grid config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::schema, path.string() + ": " + e.what());
  }
  auto c = grid_config_from_json(j);
  const auto base = path.parent_path();
  if (c.task_file && c.task_file->is_relative()) c.task_file = base / *c.task_file;
  if (c.asset_dir && c.asset_dir->is_relative()) c.asset_dir = base / *c.asset_dir;
  return c;
}

std::string make_trial_id(std::string_view task, std::string_view stimulus, std::string_view model,
                          double temperature, Setting setting, std::size_t example_index) {
  std::string id;
  id.append(task).append("|").append(stimulus).append("|").append(model);
  id += "|t" + format_number(temperature) + "|";
  id.append(to_string(setting)).append("|").append(std::to_string(example_index));
  return id;
}

std::string format_query(std::string_view instruction, std::string_view input) {
  std::string q(instruction);
  q += "\n\nInput: ";
  q += input;
  q += "\nOutput:";
  return q;
}

std::string gold_text(const Gold& gold, ScorerKind scorer) {
  if (const auto* s = std::get_if<std::string>(&gold)) return *s;
  const auto& list = std::get<std::vector<std::string>>(gold);
  if (scorer != ScorerKind::set_match) return list.front();
  std::string out;
  for (std::size_t i = 0; i < list.size(); ++i) out += (i ? ", " : "") + list[i];
  return out;
}

std::vector<Trial> plan_grid(const GridConfig& config, const std::vector<TaskSpec>& tasks,
                             const Catalog& catalog) {
  config.validate();

  std::vector<std::shared_ptr<const TaskSpec>> selected;
  for (const auto& id : config.tasks) {
    auto it = std::find_if(tasks.begin(), tasks.end(), [&](const TaskSpec& t) { return t.id == id; });
    if (it == tasks.end()) planning_error("unknown task id '" + id + "'");
    selected.push_back(std::make_shared<const TaskSpec>(*it));
  }

  std::vector<const EmotionStimulus*> stimuli{nullptr};
  for (const auto& id : config.stimuli) {
    if (id == kControlId) continue;
    const auto* s = catalog.find(id);
    if (!s) planning_error("unknown stimulus id '" + id + "'");
    if (s->placeholder) planning_error("stimulus " + id + " has no verified wording");
    if (s->polarity == Polarity::attack && s->modality == Modality::textual && !s->attack_form &&
        s->theory != Theory::excessive_happiness && s->theory != Theory::anxiety_stress)
      planning_error("stimulus " + id + " cannot be applied to an instruction");
    stimuli.push_back(s);
  }

  std::vector<Trial> trials;
  for (const auto& task : selected) {
    std::string instruction = task->instruction;
    if (config.setting == Setting::zero_shot_cot) instruction += " " + std::string(kCotSuffix);

    const auto indices = select_examples(*task, config);

    for (const auto* stim : stimuli) {
      AugmentedPrompt augmented;
      if (stim) {
        augmented = augment_instruction(instruction, *stim, config);
      } else {
        augmented.original = instruction;
        augmented.final_text = instruction;
      }
      const std::string stim_id = stim ? stim->id : std::string(kControlId);

      for (const auto& model : config.models) {
        for (double temperature : config.temperatures) {
          for (std::size_t idx : indices) {
            Trial t;
            t.trial_id = make_trial_id(task->id, stim_id, model, temperature, config.setting, idx);
            t.task = task;
            t.stimulus_id = stim_id;
            t.model_id = model;
            t.temperature = temperature;
            t.setting = config.setting;
            t.example_index = idx;
            t.request.model_id = model;
            t.request.temperature = temperature;
            t.request.max_tokens = config.max_tokens;
            t.request.seed = static_cast<std::int64_t>(config.seed & 0x7fffffffffffffffULL);

            if (config.setting == Setting::few_shot) {
              int used = 0;
              for (std::size_t d = 0; d < task->examples.size() && used < config.shots; ++d) {
                if (d == idx) continue;
                const auto& demo = task->examples[d];
                t.request.messages.push_back({Role::user, format_query(augmented.final_text, demo.input), {}});
                t.request.messages.push_back({Role::assistant, gold_text(demo.gold, task->scorer), {}});
                ++used;
              }
            }
            ChatMessage query{Role::user, format_query(augmented.final_text, task->examples[idx].input),
                              augmented.image_ref};
            t.request.messages.push_back(std::move(query));
            trials.push_back(std::move(t));
          }
        }
      }
    }
  }
  return trials;
}

double TrialRecord::value() const {
  if (!score) throw Error(ErrorKind::invalid_argument, "trial " + trial_id + " has no score");
  return score->normalized.value_or(score->raw);
}

nlohmann::ordered_json to_json(const TrialRecord& r) {
  nlohmann::ordered_json j;
  j["schema"] = kRecordSchema;
  j["trial_id"] = r.trial_id;
  j["task"] = r.task_id;
  j["suite"] = to_string(r.suite);
  j["stimulus"] = r.stimulus_id;
  j["model"] = r.model_id;
  j["temperature"] = r.temperature;
  j["setting"] = to_string(r.setting);
  j["example_index"] = r.example_index;
  j["final_prompt"] = r.final_prompt;
  if (r.response) j["response"] = *r.response;
  if (r.score) {
    nlohmann::ordered_json s;
    s["raw"] = r.score->raw;
    if (r.score->normalized) s["normalized"] = *r.score->normalized;
    if (r.score->diagnostic) s["diagnostic"] = *r.score->diagnostic;
    j["score"] = s;
  }
  if (r.error) j["error"] = {{"kind", r.error->kind}, {"message", r.error->message}};
  j["attempts"] = r.attempts;
  j["latency_ms"] = r.latency_ms;
  j["started_at"] = r.started_at;
  j["finished_at"] = r.finished_at;
  return j;
}

TrialRecord record_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema").get<int>() != kRecordSchema)
      throw Error(ErrorKind::schema, "unsupported trial record schema");
    TrialRecord r;
    r.trial_id = j.at("trial_id").get<std::string>();
    r.task_id = j.at("task").get<std::string>();
    r.suite = parse_suite(j.at("suite").get<std::string>());
    r.stimulus_id = j.at("stimulus").get<std::string>();
    r.model_id = j.at("model").get<std::string>();
    r.temperature = j.at("temperature").get<double>();
    r.setting = parse_setting(j.at("setting").get<std::string>());
    r.example_index = j.at("example_index").get<std::size_t>();
    r.final_prompt = j.at("final_prompt").get<std::string>();
    if (j.contains("response")) r.response = j.at("response").get<std::string>();
    if (j.contains("score")) {
      const auto& s = j.at("score");
      Score score;
      score.raw = s.at("raw").get<double>();
      if (s.contains("normalized")) score.normalized = s.at("normalized").get<double>();
      if (s.contains("diagnostic")) score.diagnostic = s.at("diagnostic").get<std::string>();
      r.score = score;
    }
    if (j.contains("error"))
      r.error = TrialError{j.at("error").at("kind").get<std::string>(),
                           j.at("error").value("message", "")};
    if (r.score.has_value() != r.response.has_value())
      throw Error(ErrorKind::schema, "trial " + r.trial_id + ": score and response must appear together");
    r.attempts = j.value("attempts", 0);
    r.latency_ms = j.value("latency_ms", std::int64_t{0});
    r.started_at = j.value("started_at", "");
    r.finished_at = j.value("finished_at", "");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, std::string("trial record: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::schema) throw;
    throw Error(ErrorKind::schema, std::string("trial record: ") + e.what());
  }
}

ResultStore::ResultStore(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  std::ifstream in(path_);
  if (!in) throw Error(ErrorKind::io, "cannot read store " + path_.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw Error(ErrorKind::schema, path_.string() + ":" + std::to_string(lineno) + ": malformed line");
    }
    auto r = record_from_json(j);
    latest_[r.trial_id] = records_.size();
    records_.push_back(std::move(r));
  }
}

void ResultStore::append(const TrialRecord& record) {
  const std::string line = to_json(record).dump() + "\n";
  std::lock_guard lock(mu_);
  {
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot append to store " + path_.string());
    out << line;
    out.flush();
    if (!out) throw Error(ErrorKind::io, "write failed for store " + path_.string());
  }
  latest_[record.trial_id] = records_.size();
  records_.push_back(record);
}

std::vector<TrialRecord> ResultStore::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::vector<TrialRecord> ResultStore::latest() const {
  std::lock_guard lock(mu_);
  std::vector<TrialRecord> out;
  out.reserve(latest_.size());
  for (const auto& [id, idx] : latest_) out.push_back(records_[idx]);
  return out;
}

bool ResultStore::completed(std::string_view trial_id) const {
  std::lock_guard lock(mu_);
  auto it = latest_.find(trial_id);
  return it != latest_.end() && records_[it->second].ok();
}

EchoOracleClient::EchoOracleClient(std::vector<TaskSpec> tasks) : tasks_(std::move(tasks)) {}

ModelResponse EchoOracleClient::complete(const CompletionRequest& request) {
  request.validate();
  const std::string& text = request.messages.back().text;
  static constexpr std::string_view kInput = "\n\nInput: ";
  static constexpr std::string_view kOutput = "\nOutput:";
  const auto at = text.rfind(kInput);
  if (at == std::string::npos || text.size() < kOutput.size() ||
      text.compare(text.size() - kOutput.size(), kOutput.size(), kOutput) != 0)
    throw Error(ErrorKind::bad_request, "echo oracle: message is not a task query");
  const std::string input = text.substr(at + kInput.size(), text.size() - kOutput.size() - at - kInput.size());
  const std::string head = text.substr(0, at);

  const TaskExample* match = nullptr;
  ScorerKind scorer = ScorerKind::exact_match;
  for (const auto& task : tasks_) {
    // Prefix contexts lower the instruction's first letter.
    const std::string_view tail = std::string_view(task.instruction).substr(task.instruction.empty() ? 0 : 1);
    const bool instruction_matches = head.find(tail) != std::string::npos;
    for (const auto& ex : task.examples) {
      if (ex.input != input) continue;
      if (!match || instruction_matches) {
        match = &ex;
        scorer = task.scorer;
      }
      if (instruction_matches) break;
    }
    if (match && instruction_matches) break;
  }
  if (!match) throw Error(ErrorKind::bad_request, "echo oracle: no example with input '" + input + "'");

  ModelResponse r;
  r.text = gold_text(match->gold, scorer);
  r.provider = "echo";
  r.http_status = 200;
  r.attempts = 1;
  return r;
}

AggregateTable aggregate(const std::vector<TrialRecord>& records, const Grouping& grouping) {
  AggregateTable table;
  // group -> model -> task -> values
  std::map<GroupKey, std::map<std::string, std::map<std::string, std::vector<double>>>> buckets;
  std::map<GroupKey, std::size_t> counts;
  std::size_t skipped = 0;
  for (const auto& r : records) {
    if (!r.ok()) {
      ++skipped;
      continue;
    }
    GroupKey key;
    if (grouping.by_suite) key.suite = r.suite;
    if (grouping.by_stimulus) key.stimulus = r.stimulus_id;
    if (grouping.by_setting) key.setting = r.setting;
    if (grouping.by_temperature) key.temperature = r.temperature;
    buckets[key][r.model_id][r.task_id].push_back(r.value());
    ++counts[key];
  }
  if (skipped) table.diagnostics.push_back(std::to_string(skipped) + " errored record(s) excluded");

  for (const auto& [key, models] : buckets) {
    AggregateRow row;
    row.key = key;
    row.records = counts[key];
    std::vector<double> model_means;
    std::vector<double> cell_means;
    std::set<std::string> task_ids;
    for (const auto& [model, tasks] : models) {
      std::vector<double> task_means;
      for (const auto& [task, values] : tasks) {
        task_means.push_back(mean_of(values));
        task_ids.insert(task);
      }
      cell_means.insert(cell_means.end(), task_means.begin(), task_means.end());
      model_means.push_back(mean_of(task_means));
    }
    row.mean = mean_of(model_means);
    row.tasks = task_ids.size();
    row.models = models.size();
    if (cell_means.size() >= 2) row.std_error = std_error(cell_means);
    table.rows.push_back(std::move(row));
  }
  return table;
}

double relative_gain(double augmented_mean, double vanilla_mean) { return augmented_mean - vanilla_mean; }

double std_error(const std::vector<double>& samples) {
  if (samples.size() < 2)
    throw Error(ErrorKind::insufficient_samples, "standard error needs at least 2 samples");
  const double m = mean_of(samples);
  double ss = 0.0;
  for (double x : samples) ss += (x - m) * (x - m);
  const double n = static_cast<double>(samples.size());
  return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

RunReport build_report(const std::vector<TrialRecord>& records) {
  std::map<std::string, const TrialRecord*> latest;
  for (const auto& r : records) latest[r.trial_id] = &r;
  std::vector<TrialRecord> snapshot;
  snapshot.reserve(latest.size());
  for (const auto& [id, r] : latest) snapshot.push_back(*r);

  RunReport report;
  for (const auto& r : snapshot) {
    if (r.ok()) {
      ++report.scored;
    } else {
      ++report.errored;
      ++report.error_kinds[r.error ? r.error->kind : "unknown"];
    }
  }
  report.table = aggregate(snapshot);

  std::map<Suite, double> control;
  for (const auto& row : report.table.rows)
    if (row.key.stimulus == kControlId) control[*row.key.suite] = row.mean;
  for (const auto& row : report.table.rows) {
    if (row.key.stimulus == kControlId) continue;
    auto it = control.find(*row.key.suite);
    if (it == control.end()) {
      report.table.diagnostics.push_back("no control trials for suite " +
                                         std::string(to_string(*row.key.suite)) + "; gain for " +
                                         *row.key.stimulus + " omitted");
      continue;
    }
    GainRow g;
    g.suite = *row.key.suite;
    g.stimulus_id = *row.key.stimulus;
    g.mean = row.mean;
    g.control_mean = it->second;
    g.gain = relative_gain(row.mean, it->second);
    if (it->second != 0.0) g.ratio = g.gain / it->second;
    report.gains.push_back(g);
  }
  return report;
}

std::vector<RankEntry> rank_stimuli(const RunReport& report, Suite suite) {
  std::vector<RankEntry> out;
  for (const auto& row : report.table.rows)
    if (row.key.suite == suite && row.key.stimulus && *row.key.stimulus != kControlId)
      out.push_back({*row.key.stimulus, row.mean});
  std::sort(out.begin(), out.end(), [](const RankEntry& a, const RankEntry& b) {
    if (a.mean != b.mean) return a.mean > b.mean;
    return a.stimulus_id < b.stimulus_id;
  });
  return out;
}

std::string report_csv(const RunReport& report) {
  std::map<std::pair<Suite, std::string>, const GainRow*> gains;
  for (const auto& g : report.gains) gains[{g.suite, g.stimulus_id}] = &g;
  std::string out = "suite,stimulus,mean,std_error,records,tasks,models,gain,ratio\n";
  for (const auto& row : report.table.rows) {
    const GainRow* g = nullptr;
    if (auto it = gains.find({*row.key.suite, *row.key.stimulus}); it != gains.end()) g = it->second;
    out += std::string(to_string(*row.key.suite)) + "," + csv_field(*row.key.stimulus) + "," +
           format_number(row.mean) + "," + (row.std_error ? format_number(*row.std_error) : "") + "," +
           std::to_string(row.records) + "," + std::to_string(row.tasks) + "," +
           std::to_string(row.models) + "," + (g ? format_number(g->gain) : "") + "," +
           (g && g->ratio ? format_number(*g->ratio) : "") + "\n";
  }
  return out;
}

std::string report_markdown(const RunReport& report) {
  std::map<std::pair<Suite, std::string>, const GainRow*> gains;
  for (const auto& g : report.gains) gains[{g.suite, g.stimulus_id}] = &g;
  std::string out = "| suite | stimulus | mean | std error | records | gain | ratio |\n";
  out += "|---|---|---:|---:|---:|---:|---:|\n";
  for (const auto& row : report.table.rows) {
    const GainRow* g = nullptr;
    if (auto it = gains.find({*row.key.suite, *row.key.stimulus}); it != gains.end()) g = it->second;
    out += "| " + std::string(to_string(*row.key.suite)) + " | " + *row.key.stimulus + " | " +
           fixed4(row.mean) + " | " + (row.std_error ? fixed4(*row.std_error) : "-") + " | " +
           std::to_string(row.records) + " | " + (g ? fixed4(g->gain) : "-") + " | " +
           (g && g->ratio ? fixed4(*g->ratio) : "-") + " |\n";
  }
  out += "\nScored trials: " + std::to_string(report.scored) +
         ", errored trials: " + std::to_string(report.errored) + "\n";
  for (const auto& [kind, n] : report.error_kinds) out += "- " + kind + ": " + std::to_string(n) + "\n";
  return out;
}

std::string ranking_csv(const std::vector<RankEntry>& ranking) {
  std::string out = "rank,stimulus,mean\n";
  for (std::size_t i = 0; i < ranking.size(); ++i)
    out += std::to_string(i + 1) + "," + csv_field(ranking[i].stimulus_id) + "," +
           format_number(ranking[i].mean) + "\n";
  return out;
}

std::string ranking_markdown(const std::vector<RankEntry>& ranking) {
  std::string out = "| rank | stimulus | mean |\n|---:|---|---:|\n";
  for (std::size_t i = 0; i < ranking.size(); ++i)
    out += "| " + std::to_string(i + 1) + " | " + ranking[i].stimulus_id + " | " +
           fixed4(ranking[i].mean) + " |\n";
  return out;
}

ExecuteResult execute(const std::vector<Trial>& trials, CompletionClient& client, ResultStore& store,
                      const ExecuteOptions& options) {
  ExecuteResult result;
  std::vector<const Trial*> pending;
  std::set<std::string_view> queued;
  for (const auto& t : trials) {
    if (store.completed(t.trial_id) || !queued.insert(t.trial_id).second) {
      ++result.skipped;
      continue;
    }
    pending.push_back(&t);
  }
  if (options.max_new_trials && pending.size() > *options.max_new_trials)
    pending.resize(*options.max_new_trials);

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> failed{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < pending.size(); i = next++) {
      const Trial& t = *pending[i];
      TrialRecord rec;
      rec.trial_id = t.trial_id;
      rec.task_id = t.task->id;
      rec.suite = t.task->suite;
      rec.stimulus_id = t.stimulus_id;
      rec.model_id = t.model_id;
      rec.temperature = t.temperature;
      rec.setting = t.setting;
      rec.example_index = t.example_index;
      rec.final_prompt = t.final_prompt();
      rec.started_at = utc_now();
      try {
        const auto response = client.complete(t.request);
        rec.response = response.text;
        rec.score = score_response(*t.task, response.text, t.example().gold);
        rec.attempts = response.attempts;
        rec.latency_ms = response.latency_ms;
      } catch (const Error& e) {
        rec.error = TrialError{std::string(to_string(e.kind())), e.what()};
      } catch (const std::exception& e) {
        rec.error = TrialError{"unknown", e.what()};
      }
      if (rec.error) ++failed;
      rec.finished_at = utc_now();
      store.append(rec);
    }
  };

  const int n_workers =
      std::max(1, std::min(options.workers, static_cast<int>(std::max<std::size_t>(pending.size(), 1))));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  result.executed = pending.size();
  result.failed = failed;
  result.report = build_report(store.records());
  return result;
}

}  // namespace emostim
