#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <filesystem>

namespace persona {

struct ToxicityItem {
  std::string prompt;
  std::optional<bool> reference;  // optional hand label
};

struct PrivacyItem {
  std::string scenario;
  bool violation = false;  // ground truth
};

struct StereotypeItem {
  std::string context;
  std::string stereotype;
  std::string anti_stereotype;
  std::string unrelated;
  std::string category;  // race / religion / profession / gender
};

struct SafetyDataset {
  std::vector<ToxicityItem> toxicity;
  std::vector<PrivacyItem> privacy;
  std::vector<StereotypeItem> stereotype;
};

// Native JSONL: one object per line with a "kind" tag.
SafetyDataset load_safety_dataset(const std::filesystem::path& path);

// Minimal adapters for the published layouts.
std::vector<StereotypeItem> load_stereoset(const std::filesystem::path& path);
std::vector<ToxicityItem> load_toxigen(const std::filesystem::path& path);
std::vector<PrivacyItem> load_confaide(const std::filesystem::path& path);

struct JailbreakRecord {
  std::string model;
  std::string method;
  int attempts = 0;
  int successes = 0;

  double rate() const { return static_cast<double>(successes) / attempts; }
};

// CSV with header "model,method,attempts,successes".
std::vector<JailbreakRecord> ingest_jailbreak_records(
    const std::filesystem::path& path);

struct SafetyReport {
  std::optional<double> toxicity_ratio;  // lower is better
  int toxicity_n = 0;
  int toxicity_skipped = 0;

  std::optional<double> privacy_accuracy;
  int privacy_n = 0;
  int privacy_skipped = 0;

  std::optional<double> stereotype_preference;
  std::optional<double> fairness;  // 1 - preference
  int stereotype_n = 0;
  int stereotype_ties = 0;

  std::map<std::string, double> jailbreak_rates;  // by method
};

std::string safety_report_to_json(const SafetyReport& r);
SafetyReport safety_report_from_json(const std::string& text);

// plain text-completion channel; throws BackendError on hard failure
using TextModel = std::function<std::string(const std::string& prompt)>;
// true = toxic
using ToxicityClassifier = std::function<bool(const std::string& text)>;
// log-likelihood of continuation given context
using LikelihoodModel = std::function<double(const std::string& context,
                                             const std::string& continuation)>;

ToxicityClassifier keyword_classifier(std::vector<std::string> keywords);

struct ToxicityResult {
  std::optional<double> ratio;
  int n = 0;        // answered items
  int toxic = 0;
  int skipped = 0;  // backend failures
  std::vector<std::optional<bool>> verdicts;  // per item, nullopt = skipped
};

ToxicityResult eval_toxicity(const TextModel& model,
                             const std::vector<ToxicityItem>& items,
                             const ToxicityClassifier& classifier);

struct PrivacyResult {
  std::optional<double> accuracy;
  int n = 0;
  int correct = 0;
  int unparseable = 0;  // counted incorrect
  int skipped = 0;
};

// wording of the judgment prompt appended to each scenario
std::string privacy_prompt(const PrivacyItem& item);

PrivacyResult eval_privacy(const TextModel& model,
                           const std::vector<PrivacyItem>& items);

struct StereotypeResult {
  std::optional<double> preference;  // stereotype preferred, ties half
  std::optional<double> fairness;    // 1 - preference
  int n = 0;
  int preferred = 0;
  int anti_preferred = 0;
  int ties = 0;
};

StereotypeResult eval_stereotype(const LikelihoodModel& model,
                                 const std::vector<StereotypeItem>& items);

}  // namespace persona
