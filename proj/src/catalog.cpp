#include "emostim/catalog.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include "emostim/error.hpp"

namespace emostim {

namespace {

constexpr std::array kPolarityNames{"prompt", "attack", "neutral"};
constexpr std::array kModalityNames{"textual", "visual"};
constexpr std::array kTheoryNames{
    "self_monitoring",      "social_cognitive", "maslow_needs",
    "negative_life_events", "emotional_arousal", "neutral",
    "excessive_happiness",  "anxiety_stress"};
constexpr std::array kAttackFormNames{"context_sentence", "life_event"};

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<const char*, N>& names,
                std::string_view what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (s == names[i]) return static_cast<Enum>(i);
  }
  throw Error(ErrorKind::invalid_argument,
              "unknown " + std::string(what) + " '" + std::string(s) + "'");
}

EmotionStimulus textual(std::string id, std::string text, Polarity polarity,
                        Theory theory) {
  EmotionStimulus s;
  s.id = std::move(id);
  s.text = std::move(text);
  s.polarity = polarity;
  s.modality = Modality::textual;
  s.theory = theory;
  return s;
}

EmotionStimulus unverified(std::string id, Polarity polarity, Theory theory) {
  auto s = textual(id, "[unverified " + id + "]", polarity, theory);
  s.placeholder = true;
  return s;
}

EmotionStimulus visual(std::string id, std::string category,
                       Polarity polarity, Theory theory) {
  EmotionStimulus s;
  s.id = std::move(id);
  s.image_category = std::move(category);
  s.polarity = polarity;
  s.modality = Modality::visual;
  s.theory = theory;
  return s;
}

std::string two_digit(int n) {
  return (n < 10 ? "0" : "") + std::to_string(n);
}

std::vector<EmotionStimulus> builtin_entries() {
  std::vector<EmotionStimulus> v;

  // EmotionPrompt, textual. Slots without recoverable wording are flagged.
  const std::map<int, std::string> prompt_text{
      {1, "Write your answer and give me a confidence score between 0-1 for "
          "your answer."},
      {2, "This is very important to my career."},
      {3, "You'd better be sure."},
      {6, "Provide your answer and a confidence score between 0-1 for your "
          "prediction. Additionally, briefly explain the main reasons "
          "supporting your classification decision to help me understand "
          "your thought process. This task is vital to my career, and I "
          "greatly value your thorough analysis."},
      {8, "Embrace challenges as opportunities for growth. Each obstacle you "
          "overcome brings you closer to success."},
      {9, "Stay focused and dedicated to your goals. Your consistent efforts "
          "will lead to outstanding achievements."},
  };
  for (int i = 1; i <= 21; ++i) {
    const Theory theory = i <= 6    ? Theory::self_monitoring
                          : i <= 11 ? Theory::social_cognitive
                                    : Theory::maslow_needs;
    const std::string id = "EP" + two_digit(i);
    auto it = prompt_text.find(i);
    v.push_back(it != prompt_text.end()
                    ? textual(id, it->second, Polarity::prompt, theory)
                    : unverified(id, Polarity::prompt, theory));
  }

  // EmotionAttack, textual. EA01-EA15 negative life events, EA16-EA22
  // heightened arousal contexts with their arousal ranks.
  const std::map<int, std::string> attack_text{
      {1, "A child is laughing joyfully"},
      {2, "A musician is playing passionately"},
      {4, "The little boy offered his ice cream to the homeless man, showing "
          "that generosity isn't measured by wealth but by the heart"},
      {5, "Instead of setting, the sun split into two, casting dual shadows."},
      {6, "Your friend Bob is sick"},
      {11, "Your most treasured possession has been stolen"},
      {16, "A baby is crying sadly"},
      {17, "A child is laughing joyfully"},
      {18, "A dog is barking angrily"},
      {19, "A cat is purring contentedly"},
      {20, "A bird is singing cheerfully"},
      {21, "A girl is humming dreamily"},
      {22, "A musician is playing passionately"},
  };
  const std::map<int, int> arousal_rank{{22, 1}, {17, 2}, {20, 3}, {18, 4},
                                        {21, 5}, {16, 6}, {19, 7}};
  for (int i = 1; i <= 22; ++i) {
    const bool arousal = i >= 16;
    const Theory theory =
        arousal ? Theory::emotional_arousal : Theory::negative_life_events;
    const std::string id = "EA" + two_digit(i);
    auto it = attack_text.find(i);
    auto s = it != attack_text.end()
                 ? textual(id, it->second, Polarity::attack, theory)
                 : unverified(id, Polarity::attack, theory);
    s.attack_form =
        arousal ? AttackForm::context_sentence : AttackForm::life_event;
    if (arousal) s.arousal_rank = arousal_rank.at(i);
    v.push_back(std::move(s));
  }

  // Negative life events quoted without a slot number.
  const std::array<const char*, 3> life_events{
      "Your friend Bob is dead", "The trust you once had is now broken",
      "Every bridge you had has been burned"};
  for (std::size_t i = 0; i < life_events.size(); ++i) {
    auto s = textual("NLE" + std::to_string(i + 1), life_events[i],
                     Polarity::attack, Theory::negative_life_events);
    s.attack_form = AttackForm::life_event;
    v.push_back(std::move(s));
  }

  const std::array<const char*, 5> neutral{
      "The newly developed product has passed a series of quality tests and "
      "is about to be released for sale.",
      "The school library has extended its opening hours to meet the "
      "students' learning needs.",
      "The government announced measures to improve urban air quality and "
      "reduce environmental pollution.",
      "This encyclopedia provides extensive and accurate information suitable "
      "for readers of all ages.",
      "The company plans to implement an upgrade project for campus "
      "infrastructure next year to enhance the quality of the learning "
      "environment."};
  for (std::size_t i = 0; i < neutral.size(); ++i) {
    v.push_back(textual("Neu" + std::to_string(i + 1), neutral[i],
                        Polarity::neutral, Theory::neutral));
  }

  const std::array<const char*, 3> happy{
      "Imagine receiving a surprise invitation to your dream vacation "
      "destination, complete with first-class accommodations and "
      "unforgettable experiences.",
      "Picture yourself walking hand in hand with your soulmate along a "
      "pristine beach, as the sun sets in a spectacular display of colors.",
      "Close your eyes and envision the moment you're reunited with a "
      "long-lost friend, feeling the warmth of their embrace after years "
      "apart."};
  for (std::size_t i = 0; i < happy.size(); ++i) {
    v.push_back(textual("Exc" + std::to_string(i + 1), happy[i],
                        Polarity::attack, Theory::excessive_happiness));
  }

  const std::array<const char*, 3> anxious{
      "Everyone else managed to do it; why can't you?",
      "I've seen others do this much more efficiently and effectively.",
      "You've never been particularly good at this, have you?"};
  for (std::size_t i = 0; i < anxious.size(); ++i) {
    v.push_back(textual("Anx" + std::to_string(i + 1), anxious[i],
                        Polarity::attack, Theory::anxiety_stress));
  }

  // Maslow needs, lowest to highest.
  const std::array<const char*, 5> needs{"Fortress", "Money", "Sexy man",
                                         "Sexy woman", "Honor"};
  for (std::size_t i = 0; i < needs.size(); ++i) {
    v.push_back(visual("VP" + std::to_string(i + 1), needs[i],
                       Polarity::prompt, Theory::maslow_needs));
  }
  const std::array<const char*, 6> emotions{"happiness", "sadness", "fear",
                                            "disgust",   "anger",   "surprise"};
  for (std::size_t i = 0; i < emotions.size(); ++i) {
    v.push_back(visual("VA" + std::to_string(i + 1), emotions[i],
                       Polarity::attack, Theory::emotional_arousal));
  }
  return v;
}

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorKind::schema, "catalog invariant violated: " + what);
}

bool has_edge_space(const std::string& s) {
  return std::isspace(static_cast<unsigned char>(s.front())) ||
         std::isspace(static_cast<unsigned char>(s.back()));
}

}  // namespace

std::string_view to_string(Polarity p) {
  return kPolarityNames[static_cast<std::size_t>(p)];
}
std::string_view to_string(Modality m) {
  return kModalityNames[static_cast<std::size_t>(m)];
}
std::string_view to_string(Theory t) {
  return kTheoryNames[static_cast<std::size_t>(t)];
}
std::string_view to_string(AttackForm f) {
  return kAttackFormNames[static_cast<std::size_t>(f)];
}

Polarity parse_polarity(std::string_view s) {
  return parse_enum<Polarity>(s, kPolarityNames, "polarity");
}
Modality parse_modality(std::string_view s) {
  return parse_enum<Modality>(s, kModalityNames, "modality");
}
Theory parse_theory(std::string_view s) {
  return parse_enum<Theory>(s, kTheoryNames, "theory");
}
AttackForm parse_attack_form(std::string_view s) {
  return parse_enum<AttackForm>(s, kAttackFormNames, "attack_form");
}

void validate_catalog(const std::vector<EmotionStimulus>& entries) {
  std::set<std::string> ids;
  int prompt_textual = 0, neutral = 0, happy = 0, anxious = 0;
  std::set<int> ranks;
  std::set<std::string> prompt_visual, attack_visual;

  for (const auto& s : entries) {
    if (s.id.empty()) invalid("empty id");
    if (!ids.insert(s.id).second) invalid("duplicate id " + s.id);
    if (s.modality == Modality::textual) {
      if (!s.text || s.text->empty()) invalid(s.id + " has no text");
      if (has_edge_space(*s.text)) invalid(s.id + " text has edge whitespace");
      if (s.image_category) invalid(s.id + " textual with image category");
      if (s.polarity == Polarity::prompt) ++prompt_textual;
    } else {
      if (!s.image_category || s.image_category->empty())
        invalid(s.id + " visual without category");
      if (s.text) invalid(s.id + " visual with text");
      if (s.polarity == Polarity::prompt) prompt_visual.insert(*s.image_category);
      if (s.polarity == Polarity::attack) attack_visual.insert(*s.image_category);
    }
    if (s.polarity == Polarity::neutral) ++neutral;
    if (s.theory == Theory::excessive_happiness) ++happy;
    if (s.theory == Theory::anxiety_stress) ++anxious;
    if (s.arousal_rank) {
      if (*s.arousal_rank < 1 || *s.arousal_rank > 7)
        invalid(s.id + " arousal rank outside 1..7");
      if (!ranks.insert(*s.arousal_rank).second)
        invalid(s.id + " repeats arousal rank");
    }
  }

  if (prompt_textual != 21)
    invalid("expected 21 textual EmotionPrompt stimuli");
  for (int i = 1; i <= 21; ++i) {
    if (!ids.contains("EP" + two_digit(i)))
      invalid("missing EP" + two_digit(i));
  }
  for (int i = 1; i <= 22; ++i) {
    const auto id = "EA" + two_digit(i);
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const auto& s) { return s.id == id; });
    if (it == entries.end()) invalid("missing " + id);
    if (it->polarity != Polarity::attack || it->modality != Modality::textual)
      invalid(id + " must be a textual attack");
    if (i >= 16 && (it->theory != Theory::emotional_arousal || !it->arousal_rank))
      invalid(id + " must be a ranked arousal context");
  }
  if (ranks != std::set<int>{1, 2, 3, 4, 5, 6, 7})
    invalid("arousal ranks must cover 1..7");
  if (neutral != 5) invalid("expected 5 neutral stimuli");
  if (happy != 3) invalid("expected 3 excessive-happiness stimuli");
  if (anxious != 3) invalid("expected 3 anxiety stimuli");
  if (prompt_visual != std::set<std::string>{"Fortress", "Money", "Sexy man",
                                             "Sexy woman", "Honor"})
    invalid("visual prompt categories");
  if (attack_visual != std::set<std::string>{"happiness", "sadness", "fear",
                                             "disgust", "anger", "surprise"})
    invalid("visual attack categories");
}

Catalog::Catalog(std::vector<EmotionStimulus> entries)
    : entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  validate_catalog(entries_);
}

const EmotionStimulus* Catalog::find(std::string_view id) const {
  auto it = std::lower_bound(
      entries_.begin(), entries_.end(), id,
      [](const EmotionStimulus& s, std::string_view key) { return s.id < key; });
  if (it == entries_.end() || it->id != id) return nullptr;
  return &*it;
}

const EmotionStimulus& Catalog::get(std::string_view id) const {
  if (const auto* s = find(id)) return *s;
  throw Error(ErrorKind::not_found, "unknown stimulus id '" + std::string(id) + "'");
}

std::vector<EmotionStimulus> Catalog::filter(const StimulusFilter& f) const {
  std::vector<EmotionStimulus> out;
  for (const auto& s : entries_) {
    if (f.polarity && s.polarity != *f.polarity) continue;
    if (f.modality && s.modality != *f.modality) continue;
    if (f.theory && s.theory != *f.theory) continue;
    out.push_back(s);
  }
  return out;
}

const Catalog& load_catalog() {
  static const Catalog catalog(builtin_entries());
  return catalog;
}

nlohmann::ordered_json to_json(const EmotionStimulus& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  if (s.text) j["text"] = *s.text;
  if (s.image_category) j["image_category"] = *s.image_category;
  j["polarity"] = to_string(s.polarity);
  j["modality"] = to_string(s.modality);
  j["theory"] = to_string(s.theory);
  if (s.arousal_rank) j["arousal_rank"] = *s.arousal_rank;
  if (s.attack_form) j["attack_form"] = to_string(*s.attack_form);
  if (s.placeholder) j["placeholder"] = true;
  return j;
}

EmotionStimulus stimulus_from_json(const nlohmann::json& j) {
  auto field = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j[key].is_string())
      throw Error(ErrorKind::schema,
                  std::string("stimulus field '") + key + "' missing or not a string" +
                      (j.contains("id") && j["id"].is_string()
                           ? " (id " + j["id"].get<std::string>() + ")"
                           : ""));
    return j[key].get<std::string>();
  };
  EmotionStimulus s;
  try {
    s.id = field("id");
    s.polarity = parse_polarity(field("polarity"));
    s.modality = parse_modality(field("modality"));
    s.theory = parse_theory(field("theory"));
    if (j.contains("text")) s.text = field("text");
    if (j.contains("image_category")) s.image_category = field("image_category");
    if (j.contains("attack_form"))
      s.attack_form = parse_attack_form(field("attack_form"));
    if (j.contains("arousal_rank")) {
      if (!j["arousal_rank"].is_number_integer())
        throw Error(ErrorKind::schema, "arousal_rank must be an integer (id " + s.id + ")");
      s.arousal_rank = j["arousal_rank"].get<int>();
    }
    if (j.contains("placeholder")) s.placeholder = j["placeholder"].get<bool>();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::schema) throw;
    throw Error(ErrorKind::schema, std::string(e.what()) + " (id " + s.id + ")");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, std::string(e.what()) + " (id " + s.id + ")");
  }
  return s;
}

nlohmann::ordered_json to_json(const Catalog& c) {
  nlohmann::ordered_json j;
  j["catalog_version"] = 1;
  j["stimuli"] = nlohmann::ordered_json::array();
  for (const auto& s : c.entries()) j["stimuli"].push_back(to_json(s));
  return j;
}

Catalog load_catalog_with_override(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open catalog override " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, path.string() + ": " + e.what());
  }
  if (!doc.is_object() || doc.value("catalog_version", 0) != 1)
    throw Error(ErrorKind::schema, path.string() + ": catalog_version must be 1");
  if (!doc.contains("stimuli") || !doc["stimuli"].is_array())
    throw Error(ErrorKind::schema, path.string() + ": 'stimuli' must be an array");

  std::vector<EmotionStimulus> merged = load_catalog().entries();
  std::set<std::string> seen;
  for (const auto& item : doc["stimuli"]) {
    auto s = stimulus_from_json(item);
    if (!seen.insert(s.id).second)
      throw Error(ErrorKind::duplicate_id, "duplicate stimulus id in override: " + s.id);
    auto it = std::find_if(merged.begin(), merged.end(),
                           [&](const auto& e) { return e.id == s.id; });
    if (it != merged.end()) {
      *it = std::move(s);
    } else {
      merged.push_back(std::move(s));
    }
  }
  return Catalog(std::move(merged));
}

}  // namespace emostim
