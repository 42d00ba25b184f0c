#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "persona/rng.hpp"

namespace persona {

// The four forced-choice dichotomies. The first pole of each pair (E, S,
// T, J) is the one percentages are reported against.
enum class Dimension { EI, SN, TF, JP };

enum class Pole { E, I, S, N, T, F, J, P };

constexpr std::array<Dimension, 4> kAllDimensions = {
    Dimension::EI, Dimension::SN, Dimension::TF, Dimension::JP};

Pole first_pole(Dimension d);
Pole second_pole(Dimension d);
Dimension pole_dimension(Pole p);
char pole_letter(Pole p);
std::string_view dimension_name(Dimension d);
std::optional<Dimension> parse_dimension(std::string_view s);
std::optional<Pole> parse_pole(std::string_view s);

struct OptionSpec {
  Pole pole;
  std::map<std::string, std::string> description;  // language tag -> text
};

struct ScaleItem {
  std::string item_id;
  Dimension dimension;
  OptionSpec option_a;
  OptionSpec option_b;
  std::map<std::string, std::string> text;  // language tag -> question stem
};

struct Scale {
  std::string name;
  std::vector<std::string> languages;
  std::map<Dimension, int> dimension_counts;
  std::vector<ScaleItem> items;

  const ScaleItem* find(std::string_view item_id) const;
  bool has_language(std::string_view tag) const;
};

// Parses and validates a scale document. Parse failures carry line
// context; validation failures name the offending item.
Scale load_scale(const std::filesystem::path& path);
Scale parse_scale(const std::string& json_text,
                  const std::string& origin = "<string>");

enum class LabelForm { number, alphabet };
enum class InstructionStyle { with_description, without_description };
enum class PermutationMode { none, exchange_descriptions, exchange_labels };

std::string_view to_string(LabelForm v);
std::string_view to_string(InstructionStyle v);
std::string_view to_string(PermutationMode v);
std::optional<LabelForm> parse_label_form(std::string_view s);
std::optional<InstructionStyle> parse_instruction_style(std::string_view s);
std::optional<PermutationMode> parse_permutation_mode(std::string_view s);

// One assessment's presentation factors. The seed fully determines every
// downstream random decision.
struct FactorConfig {
  LabelForm label_form = LabelForm::number;
  InstructionStyle instruction_style = InstructionStyle::with_description;
  std::string language = "en";
  PermutationMode permutation_mode = PermutationMode::exchange_descriptions;
  std::uint64_t seed = 0;
};

struct PresentedOption {
  std::string label;  // "1"/"2" or "A"/"B"
  std::string description;
  Pole pole;
};

// An item as shown to the respondent. Options are in presentation order;
// the (description, pole) binding of the source item is never broken.
struct PresentedItem {
  std::string item_id;
  Dimension dimension;
  std::string language;
  std::string stem;
  std::array<PresentedOption, 2> options;
  int presentation_index = 0;  // index of the source option shown first
  bool swapped = false;        // permutation coin outcome
};

// Applies the configured permutation with a coin drawn from `rng`.
// exchange_descriptions keeps the label sequence and swaps the
// description order; exchange_labels keeps the description order and
// swaps which label each option carries.
PresentedItem permute_item(const ScaleItem& item, const FactorConfig& config,
                           Rng& rng);

// Stream-split convenience: the coin comes from (config.seed, item_id),
// so the result is independent of iteration order.
PresentedItem permute_item(const ScaleItem& item, const FactorConfig& config);

std::uint64_t item_stream_seed(std::uint64_t seed, std::string_view item_id);

struct RenderedPrompt {
  std::string instructions;
  std::string exemplar;
  std::string question;
  std::string answer_hint;

  std::string user_text() const;
  std::string full_text() const;
};

// Pure function of (p, config). Exemplars use the same label form and
// instruction style as the item being asked. Throws MissingLanguageError
// when no prompt template exists for config.language.
RenderedPrompt render_prompt(const PresentedItem& p, const FactorConfig& config);

}  // namespace persona
