#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emostim/catalog.hpp"
#include "emostim/gateway.hpp"

namespace emostim {

struct TaskSpec;

enum class TransformMode {
  append,
  prefix_context,
  word_inject,
  demo_sentence,
  demo_word,
  visual_attach,
  combined,
};
std::string_view to_string(TransformMode m);
TransformMode parse_transform_mode(std::string_view s);

// Replaces original[offset, offset + length) with `inserted`. Offsets are in
// the coordinates of the original text.
struct EditSpan {
  std::size_t offset = 0;
  std::size_t length = 0;
  std::string inserted;

  bool operator==(const EditSpan&) const = default;
};

struct AugmentedPrompt {
  std::string original;
  std::string stimulus_id = "control";
  TransformMode mode = TransformMode::append;
  std::string final_text;
  std::optional<std::filesystem::path> image_ref;
  std::vector<EditSpan> provenance;
};

// Applies sorted, non-overlapping spans. Throws Error(invalid_argument) when
// spans overlap, are unsorted, or fall outside the text.
std::string apply_provenance(std::string_view original, const std::vector<EditSpan>& spans);

struct Demonstration {
  std::string input_text;
  std::string output_text;
  bool emotional = false;

  // Throws Error(invalid_argument) when either side is empty.
  void validate() const;
  bool operator==(const Demonstration&) const = default;
};

// prompt + " " + stimulus text. Accepts prompt/neutral stimuli and the
// supplementary excessive-happiness / anxiety stimuli.
AugmentedPrompt append_stimulus(std::string_view prompt, const EmotionStimulus& stimulus);

// context + ", " + prompt with the prompt's first ASCII letter lowered.
AugmentedPrompt prefix_context(std::string_view prompt, const EmotionStimulus& context);

// Exact query sent to the recognition model.
std::string entity_recognition_query(std::string_view sentence);

struct EntityRecognition {
  std::vector<std::string> entities;
  bool unparseable = false;
  std::vector<std::string> diagnostics;
};

// Comma-split, trim, drop empties, keep only substrings of `sentence`.
EntityRecognition parse_entity_reply(std::string_view sentence, std::string_view reply);

inline constexpr std::string_view kDefaultRecognitionModel = "gpt-3.5-turbo";

// Transport errors from the client propagate.
EntityRecognition recognize_human_entities(std::string_view sentence, CompletionClient& client,
                                           std::string_view model_id = kDefaultRecognitionModel);

std::vector<std::string> default_adjective_lexicon();
// One word per line; blank lines and surrounding whitespace ignored.
std::vector<std::string> load_adjective_lexicon(const std::filesystem::path& path);
std::string pick_adjective(const std::vector<std::string>& lexicon, std::uint64_t seed);

struct InjectionResult {
  AugmentedPrompt prompt;
  std::vector<std::string> diagnostics;
};

// Prefixes the first whole-word occurrence of each distinct entity with
// `adjective + " "`. Entities that do not occur are skipped with a diagnostic.
// When `lexicon` is non-empty the adjective must belong to it.
InjectionResult inject_adjective(std::string_view text, const std::vector<std::string>& entities,
                                 std::string_view adjective,
                                 const std::vector<std::string>& lexicon = default_adjective_lexicon());

// Contexts eligible for emotional demonstrations: verified textual attack
// entries that carry an attack form.
std::vector<EmotionStimulus> demo_context_pool(const Catalog& catalog);

// "Sentence 1: {c1}. Sentence 2: {c2}." labelled with the task's neutral label.
Demonstration build_emotional_demo(const TaskSpec& task, const Catalog& catalog,
                                   std::uint64_t seed);

struct DemoAttackResult {
  std::vector<Demonstration> demos;
  std::vector<std::string> diagnostics;
};

DemoAttackResult attack_demonstrations(const std::vector<Demonstration>& demos,
                                       std::string_view adjective, CompletionClient& client,
                                       std::string_view model_id = kDefaultRecognitionModel);

// Same, with a seeded adjective draw from `lexicon` per demonstration.
DemoAttackResult attack_demonstrations(const std::vector<Demonstration>& demos,
                                       const std::vector<std::string>& lexicon,
                                       std::uint64_t seed, CompletionClient& client,
                                       std::string_view model_id = kDefaultRecognitionModel);

// <asset_dir>/<category>_<variant>.{png,jpg,jpeg,webp}, category lowercased
// with spaces as underscores. Throws Error(asset_missing) naming the path.
std::filesystem::path resolve_image_asset(const EmotionStimulus& stimulus,
                                          const std::filesystem::path& asset_dir,
                                          int variant = 1);

AugmentedPrompt attach_image(std::string_view prompt, const EmotionStimulus& stimulus,
                             const std::filesystem::path& asset_dir, int variant = 1);
// Attaches to an already augmented prompt; the result has mode=combined.
AugmentedPrompt attach_image(const AugmentedPrompt& prompt, const EmotionStimulus& stimulus,
                             const std::filesystem::path& asset_dir, int variant = 1);

}  // namespace emostim
