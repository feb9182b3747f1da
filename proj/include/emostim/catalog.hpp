#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace emostim {

enum class Polarity { prompt, attack, neutral };
enum class Modality { textual, visual };
enum class Theory {
  self_monitoring,
  social_cognitive,
  maslow_needs,
  negative_life_events,
  emotional_arousal,
  neutral,
  excessive_happiness,
  anxiety_stress,
};
enum class AttackForm { context_sentence, life_event };

std::string_view to_string(Polarity p);
std::string_view to_string(Modality m);
std::string_view to_string(Theory t);
std::string_view to_string(AttackForm f);

// Parsers throw Error(invalid_argument) on unknown names.
Polarity parse_polarity(std::string_view s);
Modality parse_modality(std::string_view s);
Theory parse_theory(std::string_view s);
AttackForm parse_attack_form(std::string_view s);

struct EmotionStimulus {
  std::string id;
  std::optional<std::string> text;            // textual stimuli only
  std::optional<std::string> image_category;  // visual stimuli only
  Polarity polarity = Polarity::prompt;
  Modality modality = Modality::textual;
  Theory theory = Theory::neutral;
  std::optional<int> arousal_rank;
  std::optional<AttackForm> attack_form;
  // Slot whose wording is not recoverable from the source material. The text
  // is a marker, never stimulus wording.
  bool placeholder = false;

  bool operator==(const EmotionStimulus&) const = default;
};

struct StimulusFilter {
  std::optional<Polarity> polarity;
  std::optional<Modality> modality;
  std::optional<Theory> theory;
};

class Catalog {
 public:
  Catalog() = default;
  // Sorts by id and checks every catalog invariant; throws Error(schema).
  explicit Catalog(std::vector<EmotionStimulus> entries);

  const std::vector<EmotionStimulus>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  const EmotionStimulus* find(std::string_view id) const;
  // Throws Error(not_found).
  const EmotionStimulus& get(std::string_view id) const;

  // Matches every provided filter; result ordered by id.
  std::vector<EmotionStimulus> filter(const StimulusFilter& f) const;

  bool operator==(const Catalog&) const = default;

 private:
  std::vector<EmotionStimulus> entries_;
};

// Throws Error(schema) naming the first violated invariant.
void validate_catalog(const std::vector<EmotionStimulus>& entries);

// The compiled-in catalog. Returns the same instance on every call.
const Catalog& load_catalog();

// Built-in catalog with entries from an override file merged in by id.
// File: {"catalog_version": 1, "stimuli": [ {...EmotionStimulus fields...} ]}
Catalog load_catalog_with_override(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const EmotionStimulus& s);
EmotionStimulus stimulus_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const Catalog& c);

}  // namespace emostim
