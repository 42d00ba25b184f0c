#include "persona/questionnaire.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "persona/error.hpp"

namespace persona {

using nlohmann::json;

Pole first_pole(Dimension d) {
  switch (d) {
    case Dimension::EI: return Pole::E;
    case Dimension::SN: return Pole::S;
    case Dimension::TF: return Pole::T;
    case Dimension::JP: return Pole::J;
  }
  return Pole::E;
}

Pole second_pole(Dimension d) {
  switch (d) {
    case Dimension::EI: return Pole::I;
    case Dimension::SN: return Pole::N;
    case Dimension::TF: return Pole::F;
    case Dimension::JP: return Pole::P;
  }
  return Pole::I;
}

Dimension pole_dimension(Pole p) {
  switch (p) {
    case Pole::E:
    case Pole::I: return Dimension::EI;
    case Pole::S:
    case Pole::N: return Dimension::SN;
    case Pole::T:
    case Pole::F: return Dimension::TF;
    case Pole::J:
    case Pole::P: return Dimension::JP;
  }
  return Dimension::EI;
}

char pole_letter(Pole p) {
  switch (p) {
    case Pole::E: return 'E';
    case Pole::I: return 'I';
    case Pole::S: return 'S';
    case Pole::N: return 'N';
    case Pole::T: return 'T';
    case Pole::F: return 'F';
    case Pole::J: return 'J';
    case Pole::P: return 'P';
  }
  return '?';
}

std::string_view dimension_name(Dimension d) {
  switch (d) {
    case Dimension::EI: return "EI";
    case Dimension::SN: return "SN";
    case Dimension::TF: return "TF";
    case Dimension::JP: return "JP";
  }
  return "EI";
}

std::optional<Dimension> parse_dimension(std::string_view s) {
  if (s == "EI") return Dimension::EI;
  if (s == "SN") return Dimension::SN;
  if (s == "TF") return Dimension::TF;
  if (s == "JP") return Dimension::JP;
  return std::nullopt;
}

std::optional<Pole> parse_pole(std::string_view s) {
  if (s.size() != 1) return std::nullopt;
  switch (s[0]) {
    case 'E': return Pole::E;
    case 'I': return Pole::I;
    case 'S': return Pole::S;
    case 'N': return Pole::N;
    case 'T': return Pole::T;
    case 'F': return Pole::F;
    case 'J': return Pole::J;
    case 'P': return Pole::P;
    default: return std::nullopt;
  }
}

std::string_view to_string(LabelForm v) {
  return v == LabelForm::number ? "number" : "alphabet";
}

std::string_view to_string(InstructionStyle v) {
  return v == InstructionStyle::with_description ? "with_description"
                                                 : "without_description";
}

std::string_view to_string(PermutationMode v) {
  switch (v) {
    case PermutationMode::none: return "none";
    case PermutationMode::exchange_descriptions: return "exchange_descriptions";
    case PermutationMode::exchange_labels: return "exchange_labels";
  }
  return "none";
}

std::optional<LabelForm> parse_label_form(std::string_view s) {
  if (s == "number") return LabelForm::number;
  if (s == "alphabet") return LabelForm::alphabet;
  return std::nullopt;
}

std::optional<InstructionStyle> parse_instruction_style(std::string_view s) {
  if (s == "with_description") return InstructionStyle::with_description;
  if (s == "without_description") return InstructionStyle::without_description;
  return std::nullopt;
}

std::optional<PermutationMode> parse_permutation_mode(std::string_view s) {
  if (s == "none") return PermutationMode::none;
  if (s == "exchange_descriptions") return PermutationMode::exchange_descriptions;
  if (s == "exchange_labels") return PermutationMode::exchange_labels;
  return std::nullopt;
}

const ScaleItem* Scale::find(std::string_view item_id) const {
  for (const auto& item : items) {
    if (item.item_id == item_id) return &item;
  }
  return nullptr;
}

bool Scale::has_language(std::string_view tag) const {
  return std::find(languages.begin(), languages.end(), tag) != languages.end();
}

namespace {

int line_of_byte(const std::string& text, std::size_t byte) {
  int line = 1;
  const std::size_t end = std::min(byte, text.size());
  for (std::size_t i = 0; i < end; ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

void reject_unknown_fields(const json& obj, const std::set<std::string>& known,
                           const std::string& origin, const std::string& what) {
  for (const auto& el : obj.items()) {
    if (!known.count(el.key())) {
      throw ParseError(origin + ": unknown field \"" + el.key() + "\" in " +
                       what);
    }
  }
}

std::map<std::string, std::string> parse_language_map(
    const json& obj, const std::vector<std::string>& languages,
    const std::string& origin, const std::string& what) {
  if (!obj.is_object()) {
    throw ParseError(origin + ": " + what + " must be an object");
  }
  std::map<std::string, std::string> out;
  for (const auto& el : obj.items()) {
    if (std::find(languages.begin(), languages.end(), el.key()) ==
        languages.end()) {
      throw ValidationError(origin + ": " + what + " carries language \"" +
                            el.key() + "\" not declared in the scale header");
    }
    if (!el.value().is_string()) {
      throw ParseError(origin + ": " + what + "." + el.key() +
                       " must be a string");
    }
    out[el.key()] = el.value().get<std::string>();
  }
  for (const auto& lang : languages) {
    if (!out.count(lang)) {
      throw ValidationError(origin + ": " + what + " is missing language \"" +
                            lang + "\"");
    }
    if (out.at(lang).empty()) {
      throw ValidationError(origin + ": " + what + "." + lang + " is empty");
    }
  }
  return out;
}

OptionSpec parse_option(const json& obj,
                        const std::vector<std::string>& languages,
                        const std::string& origin, const std::string& what) {
  if (!obj.is_object()) {
    throw ParseError(origin + ": " + what + " must be an object");
  }
  reject_unknown_fields(obj, {"pole", "description"}, origin, what);
  if (!obj.contains("pole") || !obj.at("pole").is_string()) {
    throw ParseError(origin + ": " + what + ".pole must be a string");
  }
  const auto pole = parse_pole(obj.at("pole").get<std::string>());
  if (!pole) {
    throw ParseError(origin + ": " + what + ".pole \"" +
                     obj.at("pole").get<std::string>() +
                     "\" is not one of E,I,S,N,T,F,J,P");
  }
  if (!obj.contains("description")) {
    throw ParseError(origin + ": " + what + " is missing description");
  }
  OptionSpec spec;
  spec.pole = *pole;
  spec.description = parse_language_map(obj.at("description"), languages,
                                        origin, what + ".description");
  return spec;
}

}  // namespace

Scale parse_scale(const std::string& json_text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(origin + ":" +
                     std::to_string(line_of_byte(json_text, e.byte)) + ": " +
                     e.what());
  }
  if (!doc.is_object()) {
    throw ParseError(origin + ": scale document must be a JSON object");
  }
  reject_unknown_fields(doc, {"name", "languages", "dimension_counts", "items"},
                        origin, "scale header");

  Scale scale;
  if (!doc.contains("name") || !doc.at("name").is_string()) {
    throw ParseError(origin + ": header field \"name\" must be a string");
  }
  scale.name = doc.at("name").get<std::string>();

  if (!doc.contains("languages") || !doc.at("languages").is_array() ||
      doc.at("languages").empty()) {
    throw ParseError(origin +
                     ": header field \"languages\" must be a non-empty array");
  }
  for (const auto& lang : doc.at("languages")) {
    if (!lang.is_string()) {
      throw ParseError(origin + ": language tags must be strings");
    }
    const auto tag = lang.get<std::string>();
    if (scale.has_language(tag)) {
      throw ValidationError(origin + ": duplicate language tag \"" + tag + "\"");
    }
    scale.languages.push_back(tag);
  }

  if (!doc.contains("dimension_counts") ||
      !doc.at("dimension_counts").is_object()) {
    throw ParseError(
        origin + ": header field \"dimension_counts\" must be an object");
  }
  for (const auto& el : doc.at("dimension_counts").items()) {
    const auto dim = parse_dimension(el.key());
    if (!dim) {
      throw ParseError(origin + ": dimension_counts key \"" + el.key() +
                       "\" is not one of EI,SN,TF,JP");
    }
    if (!el.value().is_number_integer() || el.value().get<int>() < 0) {
      throw ParseError(origin + ": dimension_counts." + el.key() +
                       " must be a non-negative integer");
    }
    scale.dimension_counts[*dim] = el.value().get<int>();
  }

  if (!doc.contains("items") || !doc.at("items").is_array()) {
    throw ParseError(origin + ": field \"items\" must be an array");
  }

  std::set<std::string> seen_ids;
  std::map<Dimension, int> actual_counts;
  for (const auto& obj : doc.at("items")) {
    if (!obj.is_object()) {
      throw ParseError(origin + ": items must be objects");
    }
    reject_unknown_fields(
        obj, {"item_id", "dimension", "option_a", "option_b", "text"}, origin,
        "item");
    if (!obj.contains("item_id") || !obj.at("item_id").is_string() ||
        obj.at("item_id").get<std::string>().empty()) {
      throw ParseError(origin + ": item_id must be a non-empty string");
    }
    ScaleItem item;
    item.item_id = obj.at("item_id").get<std::string>();
    const std::string what = "item " + item.item_id;
    if (!seen_ids.insert(item.item_id).second) {
      throw ValidationError(origin + ": duplicate item_id \"" + item.item_id +
                            "\"");
    }
    if (!obj.contains("dimension") || !obj.at("dimension").is_string()) {
      throw ParseError(origin + ": " + what + ".dimension must be a string");
    }
    const auto dim = parse_dimension(obj.at("dimension").get<std::string>());
    if (!dim) {
      throw ParseError(origin + ": " + what + ".dimension \"" +
                       obj.at("dimension").get<std::string>() +
                       "\" is not one of EI,SN,TF,JP");
    }
    item.dimension = *dim;
    if (!obj.contains("option_a") || !obj.contains("option_b")) {
      throw ParseError(origin + ": " + what +
                       " must carry option_a and option_b");
    }
    item.option_a = parse_option(obj.at("option_a"), scale.languages, origin,
                                 what + ".option_a");
    item.option_b = parse_option(obj.at("option_b"), scale.languages, origin,
                                 what + ".option_b");
    if (!obj.contains("text")) {
      throw ParseError(origin + ": " + what + " is missing text");
    }
    item.text = parse_language_map(obj.at("text"), scale.languages, origin,
                                   what + ".text");

    const Pole p1 = first_pole(item.dimension);
    const Pole p2 = second_pole(item.dimension);
    const bool straight = item.option_a.pole == p1 && item.option_b.pole == p2;
    const bool reversed = item.option_a.pole == p2 && item.option_b.pole == p1;
    if (!straight && !reversed) {
      throw ValidationError(
          origin + ": " + what + ": options must carry the opposite poles of " +
          std::string(dimension_name(item.dimension)) + " (got " +
          pole_letter(item.option_a.pole) + std::string(" and ") +
          pole_letter(item.option_b.pole) + ")");
    }
    actual_counts[item.dimension] += 1;
    scale.items.push_back(std::move(item));
  }

  for (const auto dim : kAllDimensions) {
    const int declared = scale.dimension_counts.count(dim)
                             ? scale.dimension_counts.at(dim)
                             : 0;
    const int actual = actual_counts.count(dim) ? actual_counts.at(dim) : 0;
    if (declared != actual) {
      throw ValidationError(origin + ": header declares " +
                            std::to_string(declared) + " " +
                            std::string(dimension_name(dim)) +
                            " items but the file contains " +
                            std::to_string(actual));
    }
    scale.dimension_counts[dim] = actual;
  }
  return scale;
}

Scale load_scale(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open scale file: " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scale(buf.str(), path.string());
}

std::uint64_t item_stream_seed(std::uint64_t seed, std::string_view item_id) {
  return Rng::derive(seed, item_id);
}

PresentedItem permute_item(const ScaleItem& item, const FactorConfig& config,
                           Rng& rng) {
  const auto stem_it = item.text.find(config.language);
  const auto desc_a_it = item.option_a.description.find(config.language);
  const auto desc_b_it = item.option_b.description.find(config.language);
  if (stem_it == item.text.end() ||
      desc_a_it == item.option_a.description.end() ||
      desc_b_it == item.option_b.description.end()) {
    throw MissingLanguageError("item " + item.item_id +
                               " has no text for language \"" +
                               config.language + "\"");
  }

  const bool number = config.label_form == LabelForm::number;
  const std::string label1 = number ? "1" : "A";
  const std::string label2 = number ? "2" : "B";

  bool swap = false;
  if (config.permutation_mode != PermutationMode::none) {
    swap = rng.next_coin();
  }

  PresentedItem out;
  out.item_id = item.item_id;
  out.dimension = item.dimension;
  out.language = config.language;
  out.stem = stem_it->second;
  out.swapped = swap;

  const PresentedOption a{label1, desc_a_it->second, item.option_a.pole};
  const PresentedOption b{label2, desc_b_it->second, item.option_b.pole};

  if (!swap) {
    out.options = {a, b};
    out.presentation_index = 0;
  } else if (config.permutation_mode == PermutationMode::exchange_descriptions) {
    // A. <desc_b>, B. <desc_a>: labels keep their sequence.
    out.options = {PresentedOption{label1, b.description, b.pole},
                   PresentedOption{label2, a.description, a.pole}};
    out.presentation_index = 1;
  } else {
    // B. <desc_a>, A. <desc_b>: descriptions keep their order.
    out.options = {PresentedOption{label2, a.description, a.pole},
                   PresentedOption{label1, b.description, b.pole}};
    out.presentation_index = 0;
  }
  return out;
}

PresentedItem permute_item(const ScaleItem& item, const FactorConfig& config) {
  Rng rng(item_stream_seed(config.seed, item.item_id));
  return permute_item(item, config, rng);
}

namespace {

struct PromptStrings {
  std::string question_prefix;
  std::string answer_prompt;
  std::string exemplar_stem;
  std::string exemplar_agree;
  std::string exemplar_disagree;
  std::string instr_intro;
  std::string instr_with_desc;
  std::string instr_without_desc;
};

const PromptStrings* prompt_strings(const std::string& language) {
  static const PromptStrings en{
      "Question: ",
      "Your answer:",
      "Artificial intelligence cannot have emotions.",
      "Agree",
      "Disagree",
      "You are taking a forced-choice personality questionnaire. Each "
      "question offers exactly two options; choose the one that fits you "
      "better.",
      "Reply with the option label followed by its description, exactly as "
      "shown in the example.",
      "Reply with only the option label, exactly as shown in the example.",
  };
  static const PromptStrings zh{
      "问题：",
      "你的回答：",
      "人工智能不能拥有情感。",
      "同意",
      "不同意",
      "你正在进行一份二选一的人格问卷。每道题提供两个选项，请选择更符合你的那"
      "一个。",
      "请按照示例，回答选项标号及其描述。",
      "请按照示例，只回答选项标号。",
  };
  if (language == "en") return &en;
  if (language == "zh") return &zh;
  return nullptr;
}

std::string join_options(const PresentedItem& p) {
  return p.options[0].label + ". " + p.options[0].description + " " +
         p.options[1].label + ". " + p.options[1].description;
}

}  // namespace

std::string RenderedPrompt::user_text() const {
  return exemplar + "\n\n" + question + " " + answer_hint;
}

std::string RenderedPrompt::full_text() const {
  return instructions + "\n\n" + user_text();
}

RenderedPrompt render_prompt(const PresentedItem& p,
                             const FactorConfig& config) {
  const PromptStrings* s = prompt_strings(config.language);
  if (s == nullptr || p.language != config.language) {
    throw MissingLanguageError("no prompt template for language \"" +
                               config.language + "\"");
  }
  const bool number = config.label_form == LabelForm::number;
  const std::string label1 = number ? "1" : "A";
  const std::string label2 = number ? "2" : "B";
  const bool with_desc =
      config.instruction_style == InstructionStyle::with_description;

  RenderedPrompt out;
  out.instructions =
      s->instr_intro + " " + (with_desc ? s->instr_with_desc
                                        : s->instr_without_desc);

  // Single fixed exemplar, templated onto the configured label form.
  std::string answer = label2;
  if (with_desc) answer += ". " + s->exemplar_disagree;
  out.exemplar = s->question_prefix + s->exemplar_stem + " " + label1 + ". " +
                 s->exemplar_agree + ", " + label2 + ". " +
                 s->exemplar_disagree + ". " + s->answer_prompt + " " + answer;

  out.question = s->question_prefix + p.stem + " " + join_options(p);
  out.answer_hint = s->answer_prompt;
  return out;
}

}  // namespace persona
