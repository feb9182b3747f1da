#include "emostim/tasks.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "emostim/error.hpp"

namespace emostim {

namespace {

constexpr std::array<std::string_view, 3> kSuiteNames{"instruction_induction", "bbii",
                                                      "custom"};
constexpr std::array<std::string_view, 5> kScorerNames{
    "exact_match", "contained_match", "set_match", "multiple_choice", "numeric_equal"};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_letter(char c) { return is_upper(c) || (c >= 'a' && c <= 'z'); }
char upper(char c) { return static_cast<char>(std::toupper(static_cast<unsigned char>(c))); }

std::vector<std::string> split_set(std::string_view s) {
  std::vector<std::string> items;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    auto item = normalize_answer(s.substr(start, end - start));
    if (!item.empty()) items.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return items;
}

std::vector<std::string> alternatives(const Gold& gold) {
  if (const auto* s = std::get_if<std::string>(&gold)) return {*s};
  return std::get<std::vector<std::string>>(gold);
}

bool starts_with_word(const std::string& text, const std::string& prefix) {
  if (prefix.empty() || text.size() < prefix.size()) return false;
  if (text.compare(0, prefix.size(), prefix) != 0) return false;
  return text.size() == prefix.size() || !is_alnum(text[prefix.size()]);
}

double score_multiple_choice(std::string_view response, const std::string& gold) {
  const auto gold_option = extract_option(gold);
  const auto normalized_gold = normalize_answer(gold);
  // A gold that is itself an option token compares by letter.
  if (gold_option && normalized_gold.size() <= 3) {
    const auto got = extract_option(response);
    return got && *got == *gold_option ? 1.0 : 0.0;
  }
  const auto normalized = normalize_answer(response);
  return normalized == normalized_gold || starts_with_word(normalized, normalized_gold) ? 1.0
                                                                                        : 0.0;
}

[[noreturn]] void schema_error(std::string_view origin, std::string_view task_id,
                               std::string_view field, std::string_view what) {
  std::string msg(origin);
  msg += ": task '";
  msg += task_id;
  msg += "': field '";
  msg += field;
  msg += "' ";
  msg += what;
  throw Error(ErrorKind::schema, msg);
}

}  // namespace

std::string_view to_string(Suite s) { return kSuiteNames[static_cast<std::size_t>(s)]; }
std::string_view to_string(ScorerKind k) { return kScorerNames[static_cast<std::size_t>(k)]; }

Suite parse_suite(std::string_view s) {
  for (std::size_t i = 0; i < kSuiteNames.size(); ++i)
    if (kSuiteNames[i] == s) return static_cast<Suite>(i);
  throw Error(ErrorKind::invalid_argument, "unknown suite '" + std::string(s) + "'");
}

ScorerKind parse_scorer(std::string_view s) {
  for (std::size_t i = 0; i < kScorerNames.size(); ++i)
    if (kScorerNames[i] == s) return static_cast<ScorerKind>(i);
  throw Error(ErrorKind::invalid_argument, "unknown scorer '" + std::string(s) + "'");
}

void TaskSpec::validate() const {
  const std::string_view origin = "task spec";
  if (id.empty()) schema_error(origin, "?", "id", "must be non-empty");
  if (instruction.empty()) schema_error(origin, id, "instruction", "must be non-empty");
  if (examples.empty()) schema_error(origin, id, "examples", "must be non-empty");
  for (const auto& ex : examples) {
    const auto golds = alternatives(ex.gold);
    if (golds.empty() ||
        std::any_of(golds.begin(), golds.end(), [](const auto& g) { return g.empty(); }))
      schema_error(origin, id, "gold", "must be non-empty");
  }
  if (suite == Suite::bbii && (!random_baseline || !human_baseline))
    schema_error(origin, id, "human_baseline", "and random_baseline are required for bbii");
  if (random_baseline && human_baseline) {
    if (suite == Suite::bbii && !(*human_baseline > *random_baseline))
      schema_error(origin, id, "human_baseline", "must exceed random_baseline");
    if (*human_baseline == *random_baseline)
      schema_error(origin, id, "human_baseline", "must differ from random_baseline");
  }
}

std::vector<TaskSpec> parse_tasks(std::string_view json_text, std::string_view origin) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, std::string(origin) + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("schema") || doc["schema"] != 1)
    throw Error(ErrorKind::schema, std::string(origin) + ": field 'schema' must be 1");
  if (!doc.contains("tasks") || !doc["tasks"].is_array())
    throw Error(ErrorKind::schema, std::string(origin) + ": field 'tasks' must be an array");

  std::vector<TaskSpec> tasks;
  std::set<std::string> ids;
  for (const auto& t : doc["tasks"]) {
    TaskSpec spec;
    if (!t.is_object() || !t.contains("id") || !t["id"].is_string())
      schema_error(origin, "?", "id", "missing or not a string");
    spec.id = t["id"].get<std::string>();
    auto str = [&](const char* field) -> std::string {
      if (!t.contains(field) || !t[field].is_string())
        schema_error(origin, spec.id, field, "missing or not a string");
      return t[field].get<std::string>();
    };
    auto number = [&](const char* field) -> std::optional<double> {
      if (!t.contains(field) || t[field].is_null()) return std::nullopt;
      if (!t[field].is_number()) schema_error(origin, spec.id, field, "must be a number");
      return t[field].get<double>();
    };
    try {
      spec.suite = parse_suite(str("suite"));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::schema) throw;
      schema_error(origin, spec.id, "suite", e.what());
    }
    spec.instruction = str("instruction");
    try {
      spec.scorer = parse_scorer(str("scorer"));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::schema) throw;
      schema_error(origin, spec.id, "scorer", e.what());
    }
    if (t.contains("neutral_label") && !t["neutral_label"].is_null())
      spec.neutral_label = str("neutral_label");
    spec.random_baseline = number("random_baseline");
    spec.human_baseline = number("human_baseline");

    if (!t.contains("examples") || !t["examples"].is_array())
      schema_error(origin, spec.id, "examples", "missing or not an array");
    for (const auto& ex : t["examples"]) {
      TaskExample example;
      if (!ex.is_object() || !ex.contains("input") || !ex["input"].is_string())
        schema_error(origin, spec.id, "examples.input", "missing or not a string");
      example.input = ex["input"].get<std::string>();
      if (!ex.contains("gold")) schema_error(origin, spec.id, "examples.gold", "missing");
      const auto& gold = ex["gold"];
      if (gold.is_string()) {
        example.gold = gold.get<std::string>();
      } else if (gold.is_array() &&
                 std::all_of(gold.begin(), gold.end(), [](const auto& g) { return g.is_string(); })) {
        example.gold = gold.get<std::vector<std::string>>();
      } else {
        schema_error(origin, spec.id, "examples.gold", "must be a string or array of strings");
      }
      spec.examples.push_back(std::move(example));
    }

    try {
      spec.validate();
    } catch (const Error& e) {
      std::string msg = e.what();
      msg.replace(0, std::string_view("task spec").size(), origin);
      throw Error(ErrorKind::schema, msg);
    }
    if (!ids.insert(spec.id).second)
      throw Error(ErrorKind::duplicate_id,
                  std::string(origin) + ": duplicate task id '" + spec.id + "'");
    tasks.push_back(std::move(spec));
  }
  return tasks;
}

std::vector<TaskSpec> load_tasks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open task file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_tasks(buffer.str(), path.string());
}

std::string normalize_answer(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (!out.empty() && out.back() == '.') {
    out.pop_back();
    while (!out.empty() && out.back() == ' ') out.pop_back();
  }
  return out;
}

std::optional<char> extract_option(std::string_view r) {
  std::size_t b = 0, e = r.size();
  while (b < e && is_space(r[b])) ++b;
  while (e > b && (is_space(r[e - 1]) || r[e - 1] == '.')) --e;
  if (e - b == 1 && is_letter(r[b])) return upper(r[b]);

  for (std::size_t i = 0; i < r.size(); ++i) {
    const bool boundary_before = i == 0 || !is_alnum(r[i - 1]);
    if (!boundary_before) continue;
    // (X)
    if (r[i] == '(' && i + 2 < r.size() && is_letter(r[i + 1]) && r[i + 2] == ')')
      return upper(r[i + 1]);
    // X. X) X:
    if (is_upper(r[i]) && i + 1 < r.size() &&
        (r[i + 1] == '.' || r[i + 1] == ')' || r[i + 1] == ':') &&
        (i + 2 == r.size() || !is_alnum(r[i + 2])))
      return r[i];
  }
  return std::nullopt;
}

std::optional<double> extract_number(std::string_view r) {
  auto digit = [](char c) { return c >= '0' && c <= '9'; };
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!digit(r[i])) continue;
    std::string cleaned;
    if (i > 0 && r[i - 1] == '-') cleaned.push_back('-');
    std::size_t j = i;
    while (j < r.size()) {
      if (digit(r[j])) {
        cleaned.push_back(r[j++]);
      } else if (r[j] == ',' && j + 1 < r.size() && digit(r[j + 1])) {
        ++j;
      } else {
        break;
      }
    }
    if (j + 1 < r.size() && r[j] == '.' && digit(r[j + 1])) {
      cleaned.push_back(r[j++]);
      while (j < r.size() && digit(r[j])) cleaned.push_back(r[j++]);
    }
    double value = 0.0;
    const auto res = std::from_chars(cleaned.data(), cleaned.data() + cleaned.size(), value);
    if (res.ec == std::errc()) return value;
    return std::nullopt;
  }
  return std::nullopt;
}

Score score_response(const TaskSpec& task, std::string_view response, const Gold& gold) {
  Score score;
  const auto normalized = normalize_answer(response);
  switch (task.scorer) {
    case ScorerKind::exact_match:
      for (const auto& g : alternatives(gold))
        if (normalized == normalize_answer(g)) score.raw = 1.0;
      break;
    case ScorerKind::contained_match:
      for (const auto& g : alternatives(gold)) {
        const auto ng = normalize_answer(g);
        if (!ng.empty() && normalized.find(ng) != std::string::npos) score.raw = 1.0;
      }
      break;
    case ScorerKind::set_match: {
      std::set<std::string> want;
      if (const auto* s = std::get_if<std::string>(&gold)) {
        for (auto& item : split_set(*s)) want.insert(std::move(item));
      } else {
        for (const auto& g : std::get<std::vector<std::string>>(gold)) {
          auto item = normalize_answer(g);
          if (!item.empty()) want.insert(std::move(item));
        }
      }
      std::set<std::string> got;
      for (auto& item : split_set(response)) got.insert(std::move(item));
      score.raw = !want.empty() && got == want ? 1.0 : 0.0;
      break;
    }
    case ScorerKind::multiple_choice:
      for (const auto& g : alternatives(gold))
        if (score_multiple_choice(response, g) == 1.0) score.raw = 1.0;
      break;
    case ScorerKind::numeric_equal: {
      const auto got = extract_number(response);
      if (!got) {
        score.diagnostic = "no number in response";
        break;
      }
      bool any_gold = false;
      for (const auto& g : alternatives(gold)) {
        const auto want = extract_number(g);
        if (!want) continue;
        any_gold = true;
        if (std::abs(*got - *want) <= 1e-9 * std::max(1.0, std::abs(*want))) score.raw = 1.0;
      }
      if (!any_gold) score.diagnostic = "gold is not numeric";
      break;
    }
  }
  if (task.random_baseline && task.human_baseline)
    score.normalized =
        normalized_preferred_metric(score.raw, *task.random_baseline, *task.human_baseline);
  return score;
}

double normalized_preferred_metric(double raw, double random_baseline, double human_baseline) {
  if (human_baseline == random_baseline)
    throw Error(ErrorKind::degenerate_baseline, "human and random baselines are equal");
  return 100.0 * (raw - random_baseline) / (human_baseline - random_baseline);
}

}  // namespace emostim
