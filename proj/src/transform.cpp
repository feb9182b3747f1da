#include "emostim/transform.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <functional>
#include <set>

#include "emostim/error.hpp"
#include "emostim/rng.hpp"
#include "emostim/tasks.hpp"

namespace emostim {

namespace {

constexpr std::array<std::string_view, 7> kModeNames{
    "append", "prefix_context", "word_inject", "demo_sentence",
    "demo_word", "visual_attach", "combined"};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

void require_textual(const EmotionStimulus& s) {
  if (s.modality != Modality::textual)
    throw Error(ErrorKind::wrong_modality, "stimulus " + s.id + " is not textual");
  if (s.placeholder || !s.text)
    throw Error(ErrorKind::placeholder_stimulus,
                "stimulus " + s.id + " has no verified text; supply it via a catalog override");
}

void require_prompt(std::string_view prompt) {
  if (prompt.empty()) throw Error(ErrorKind::invalid_argument, "prompt is empty");
}

// First occurrence of `word` not embedded in a longer alphanumeric run.
std::size_t find_whole_word(std::string_view text, std::string_view word) {
  std::size_t pos = text.find(word);
  while (pos != std::string_view::npos) {
    const bool left = pos == 0 || !is_alnum(text[pos - 1]);
    const std::size_t end = pos + word.size();
    const bool right = end == text.size() || !is_alnum(text[end]);
    if (left && right) return pos;
    pos = text.find(word, pos + 1);
  }
  return std::string_view::npos;
}

std::string strip_terminal_period(std::string s) {
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

}  // namespace

std::string_view to_string(TransformMode m) { return kModeNames[static_cast<std::size_t>(m)]; }

TransformMode parse_transform_mode(std::string_view s) {
  for (std::size_t i = 0; i < kModeNames.size(); ++i)
    if (kModeNames[i] == s) return static_cast<TransformMode>(i);
  throw Error(ErrorKind::invalid_argument, "unknown transform mode '" + std::string(s) + "'");
}

std::string apply_provenance(std::string_view original, const std::vector<EditSpan>& spans) {
  std::string out;
  std::size_t cursor = 0;
  for (const auto& span : spans) {
    if (span.offset < cursor || span.offset + span.length > original.size())
      throw Error(ErrorKind::invalid_argument, "provenance spans overlap or exceed the text");
    out.append(original.substr(cursor, span.offset - cursor));
    out.append(span.inserted);
    cursor = span.offset + span.length;
  }
  out.append(original.substr(cursor));
  return out;
}

void Demonstration::validate() const {
  if (input_text.empty() || output_text.empty())
    throw Error(ErrorKind::invalid_argument, "demonstration needs input and output text");
}

AugmentedPrompt append_stimulus(std::string_view prompt, const EmotionStimulus& stimulus) {
  require_textual(stimulus);
  const bool supplementary = stimulus.theory == Theory::excessive_happiness ||
                             stimulus.theory == Theory::anxiety_stress;
  if (stimulus.polarity == Polarity::attack && !supplementary)
    throw Error(ErrorKind::wrong_polarity,
                "stimulus " + stimulus.id + " is an attack context; use prefix_context");
  require_prompt(prompt);

  AugmentedPrompt out;
  out.original = std::string(prompt);
  out.stimulus_id = stimulus.id;
  out.mode = TransformMode::append;
  out.provenance.push_back({prompt.size(), 0, " " + *stimulus.text});
  out.final_text = out.original + " " + *stimulus.text;
  return out;
}

AugmentedPrompt prefix_context(std::string_view prompt, const EmotionStimulus& context) {
  require_textual(context);
  if (context.polarity != Polarity::attack || !context.attack_form)
    throw Error(ErrorKind::wrong_polarity,
                "stimulus " + context.id + " is not an attack context");
  require_prompt(prompt);

  std::string head = *context.text + ", ";
  std::size_t replaced = 0;
  // Lower the first ASCII letter; a non-ASCII byte ends the scan.
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    const auto c = static_cast<unsigned char>(prompt[i]);
    if (c >= 0x80) break;
    if (std::isalpha(c)) {
      if (std::isupper(c)) {
        head.append(prompt.substr(0, i));
        head.push_back(static_cast<char>(std::tolower(c)));
        replaced = i + 1;
      }
      break;
    }
  }

  AugmentedPrompt out;
  out.original = std::string(prompt);
  out.stimulus_id = context.id;
  out.mode = TransformMode::prefix_context;
  out.provenance.push_back({0, replaced, head});
  out.final_text = head + std::string(prompt.substr(replaced));
  return out;
}

std::string entity_recognition_query(std::string_view sentence) {
  std::string q = "Please recognize the entity that represents the human in this sentence: ";
  q += sentence;
  q += ". Return the result in this format: entity_1, entity_2, entity_3...";
  return q;
}

EntityRecognition parse_entity_reply(std::string_view sentence, std::string_view reply) {
  EntityRecognition out;
  if (trim(reply).empty()) {
    out.unparseable = true;
    out.diagnostics.push_back("empty recognition reply");
    return out;
  }
  std::size_t start = 0;
  for (;;) {
    const auto comma = reply.find(',', start);
    const auto end = comma == std::string_view::npos ? reply.size() : comma;
    auto item = trim(reply.substr(start, end - start));
    if (!item.empty()) {
      if (sentence.find(item) != std::string_view::npos) {
        out.entities.push_back(std::move(item));
      } else {
        out.diagnostics.push_back("entity '" + item + "' not in sentence");
      }
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

EntityRecognition recognize_human_entities(std::string_view sentence, CompletionClient& client,
                                           std::string_view model_id) {
  if (sentence.empty()) throw Error(ErrorKind::invalid_argument, "sentence is empty");
  CompletionRequest request;
  request.model_id = std::string(model_id);
  request.messages.push_back({Role::user, entity_recognition_query(sentence), std::nullopt});
  const auto response = client.complete(request);
  return parse_entity_reply(sentence, response.text);
}

std::vector<std::string> default_adjective_lexicon() {
  return {"happy", "angry", "sad", "crying", "joyful", "fearful", "disgusted", "surprised"};
}

std::vector<std::string> load_adjective_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open adjective lexicon " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    auto word = trim(line);
    if (word.empty()) continue;
    if (std::any_of(word.begin(), word.end(), is_space))
      throw Error(ErrorKind::schema, "lexicon entry is not a single word: '" + word + "'");
    words.push_back(std::move(word));
  }
  if (words.empty()) throw Error(ErrorKind::schema, "adjective lexicon is empty");
  return words;
}

std::string pick_adjective(const std::vector<std::string>& lexicon, std::uint64_t seed) {
  if (lexicon.empty()) throw Error(ErrorKind::invalid_argument, "adjective lexicon is empty");
  SeededRng rng(seed);
  return lexicon[rng.below(lexicon.size())];
}

InjectionResult inject_adjective(std::string_view text, const std::vector<std::string>& entities,
                                 std::string_view adjective,
                                 const std::vector<std::string>& lexicon) {
  if (adjective.empty() || std::any_of(adjective.begin(), adjective.end(), is_space))
    throw Error(ErrorKind::invalid_argument, "adjective must be a single word");
  if (!lexicon.empty() && std::find(lexicon.begin(), lexicon.end(), adjective) == lexicon.end())
    throw Error(ErrorKind::invalid_argument,
                "adjective '" + std::string(adjective) + "' is not in the lexicon");

  InjectionResult result;
  std::set<std::string> seen;
  std::set<std::size_t> positions;
  for (const auto& entity : entities) {
    if (entity.empty() || !seen.insert(entity).second) continue;
    const auto pos = find_whole_word(text, entity);
    if (pos == std::string_view::npos) {
      result.diagnostics.push_back("entity '" + entity + "' not found");
      continue;
    }
    positions.insert(pos);
  }

  auto& out = result.prompt;
  out.original = std::string(text);
  out.stimulus_id = "adjective:" + std::string(adjective);
  out.mode = TransformMode::word_inject;
  const std::string insert = std::string(adjective) + " ";
  for (auto pos : positions) out.provenance.push_back({pos, 0, insert});
  out.final_text = apply_provenance(text, out.provenance);
  return result;
}

std::vector<EmotionStimulus> demo_context_pool(const Catalog& catalog) {
  std::vector<EmotionStimulus> pool;
  std::set<std::string> texts;
  for (const auto& s : catalog.filter({Polarity::attack, Modality::textual, std::nullopt})) {
    if (s.placeholder || !s.attack_form || !s.text) continue;
    if (!texts.insert(*s.text).second) continue;
    pool.push_back(s);
  }
  return pool;
}

Demonstration build_emotional_demo(const TaskSpec& task, const Catalog& catalog,
                                   std::uint64_t seed) {
  if (!task.neutral_label || task.neutral_label->empty())
    throw Error(ErrorKind::unsupported_task,
                "task '" + task.id + "' has no neutral label for emotional demonstrations");
  const auto pool = demo_context_pool(catalog);
  if (pool.size() < 2)
    throw Error(ErrorKind::invalid_argument, "catalog has fewer than two attack contexts");

  SeededRng rng(seed);
  const auto first = rng.below(pool.size());
  auto second = rng.below(pool.size() - 1);
  if (second >= first) ++second;

  Demonstration demo;
  demo.input_text = "Sentence 1: " + strip_terminal_period(*pool[first].text) +
                    ". Sentence 2: " + strip_terminal_period(*pool[second].text) + ".";
  demo.output_text = *task.neutral_label;
  demo.emotional = true;
  return demo;
}

namespace {

DemoAttackResult attack_each(const std::vector<Demonstration>& demos,
                             const std::function<std::string(std::size_t)>& adjective_for,
                             CompletionClient& client, std::string_view model_id) {
  if (demos.empty()) throw Error(ErrorKind::invalid_argument, "no demonstrations to attack");
  DemoAttackResult result;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    Demonstration demo = demos[i];
    const std::string adjective = adjective_for(i);
    try {
      const auto recognized = recognize_human_entities(demo.input_text, client, model_id);
      for (const auto& d : recognized.diagnostics)
        result.diagnostics.push_back("demo " + std::to_string(i) + ": " + d);
      auto injected = inject_adjective(demo.input_text, recognized.entities, adjective, {});
      for (const auto& d : injected.diagnostics)
        result.diagnostics.push_back("demo " + std::to_string(i) + ": " + d);
      if (!injected.prompt.provenance.empty()) {
        demo.input_text = std::move(injected.prompt.final_text);
        demo.emotional = true;
      }
    } catch (const Error& e) {
      result.diagnostics.push_back("demo " + std::to_string(i) + " left unmodified: " +
                                   std::string(to_string(e.kind())) + ": " + e.what());
    }
    result.demos.push_back(std::move(demo));
  }
  return result;
}

}  // namespace

DemoAttackResult attack_demonstrations(const std::vector<Demonstration>& demos,
                                       std::string_view adjective, CompletionClient& client,
                                       std::string_view model_id) {
  if (adjective.empty() || std::any_of(adjective.begin(), adjective.end(), is_space))
    throw Error(ErrorKind::invalid_argument, "adjective must be a single word");
  const std::string word(adjective);
  return attack_each(
      demos, [&](std::size_t) { return word; }, client, model_id);
}

DemoAttackResult attack_demonstrations(const std::vector<Demonstration>& demos,
                                       const std::vector<std::string>& lexicon,
                                       std::uint64_t seed, CompletionClient& client,
                                       std::string_view model_id) {
  if (lexicon.empty()) throw Error(ErrorKind::invalid_argument, "adjective lexicon is empty");
  SeededRng rng(seed);
  return attack_each(
      demos, [&](std::size_t) { return lexicon[rng.below(lexicon.size())]; }, client,
      model_id);
}

std::filesystem::path resolve_image_asset(const EmotionStimulus& stimulus,
                                          const std::filesystem::path& asset_dir, int variant) {
  if (stimulus.modality != Modality::visual || !stimulus.image_category)
    throw Error(ErrorKind::wrong_modality, "stimulus " + stimulus.id + " is not visual");
  std::string stem = *stimulus.image_category;
  for (auto& c : stem) {
    c = c == ' ' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  stem += "_" + std::to_string(variant);
  for (const char* ext : {".png", ".jpg", ".jpeg", ".webp"}) {
    auto candidate = asset_dir / (stem + ext);
    if (std::filesystem::is_regular_file(candidate)) return candidate;
  }
  throw Error(ErrorKind::asset_missing,
              "no image asset at " + (asset_dir / stem).string() + ".{png,jpg,jpeg,webp}");
}

AugmentedPrompt attach_image(std::string_view prompt, const EmotionStimulus& stimulus,
                             const std::filesystem::path& asset_dir, int variant) {
  require_prompt(prompt);
  AugmentedPrompt out;
  out.image_ref = resolve_image_asset(stimulus, asset_dir, variant);
  out.original = std::string(prompt);
  out.final_text = out.original;
  out.stimulus_id = stimulus.id;
  out.mode = TransformMode::visual_attach;
  return out;
}

AugmentedPrompt attach_image(const AugmentedPrompt& prompt, const EmotionStimulus& stimulus,
                             const std::filesystem::path& asset_dir, int variant) {
  if (prompt.image_ref)
    throw Error(ErrorKind::invalid_argument, "prompt already carries an image");
  AugmentedPrompt out = prompt;
  out.image_ref = resolve_image_asset(stimulus, asset_dir, variant);
  out.stimulus_id = prompt.stimulus_id + "+" + stimulus.id;
  out.mode = TransformMode::combined;
  return out;
}

}  // namespace emostim
