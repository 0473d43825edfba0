#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "spfg/backend.hpp"
#include "spfg/corpus.hpp"

namespace spfg::datagen {

// ---------------------------------------------------------------------------
// Templates

struct PromptTemplate {
  std::string name;
  std::string body;  // `{identifier}` marks a slot; other braces are literal
};

using SlotMap = std::map<std::string, std::string, std::less<>>;

// Slot names in order of first appearance.
std::vector<std::string> placeholders(const PromptTemplate& tpl);

// Single left-to-right pass; substituted values are never re-scanned.
// Throws DataError("unresolved placeholder: <name>") for a missing slot.
std::string render_template(const PromptTemplate& tpl, const SlotMap& slots);

PromptTemplate load_template(std::string_view name);  // from the embedded set

// Correction-and-feedback prompt (speaker_level, source).
PromptTemplate correction_feedback_template();

// ---------------------------------------------------------------------------
// Corruption taxonomy

enum class CorruptionKind {
  WrongAttribution,
  ExplanationMismatch,
  DiscouragingTone,
  MisleadingSuggestion,
  OverCorrection
};

inline constexpr std::array<CorruptionKind, 5> kAllKinds = {
    CorruptionKind::WrongAttribution, CorruptionKind::ExplanationMismatch,
    CorruptionKind::DiscouragingTone, CorruptionKind::MisleadingSuggestion,
    CorruptionKind::OverCorrection};

// Shares of the five kinds in the released preference data.
inline constexpr std::array<double, 5> kDefaultCorruptionWeights = {0.251, 0.253, 0.142, 0.095, 0.259};

std::string_view to_string(CorruptionKind kind);  // snake_case
std::optional<CorruptionKind> parse_kind(std::string_view text);
PromptTemplate negative_template(CorruptionKind kind);

// Categorical draw. Weights need not be normalized but must be non-negative
// with a positive sum.
CorruptionKind sample_corruption_type(std::mt19937_64& rng,
                                      const std::array<double, 5>& weights = kDefaultCorruptionWeights);

// ---------------------------------------------------------------------------
// Generation

struct GenerationResponse {
  std::string correction;
  std::string feedback;
};

// Takes the first balanced JSON object in `raw` (code fences and surrounding
// prose are tolerated). Throws DataError naming what is missing.
GenerationResponse parse_generation(std::string_view raw);

std::string to_json_text(const GenerationResponse& response);

struct GenerationJob {
  const corpus::UtteranceRecord* record = nullptr;
  CorruptionKind kind = CorruptionKind::WrongAttribution;
  std::string prompt;
};

class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  // Raw model text for one job; may throw BackendError.
  virtual std::string generate(const GenerationJob& job) = 0;
};

// Offline corruptor: rewrites the record's verified feedback according to the
// job's corruption kind. Output depends only on (seed, record id, kind).
class LocalCorruptor : public GeneratorBackend {
 public:
  explicit LocalCorruptor(std::uint64_t seed) : seed_(seed) {}
  std::string generate(const GenerationJob& job) override;
  GenerationResponse corrupt(const corpus::UtteranceRecord& record, CorruptionKind kind) const;

 private:
  std::uint64_t seed_;
};

// Sends the rendered prompt as one user message.
class ChatGenerator : public GeneratorBackend {
 public:
  ChatGenerator(std::shared_ptr<backend::ChatBackend> chat, std::string model, double temperature = 0.7)
      : chat_(std::move(chat)), model_(std::move(model)), temperature_(temperature) {}
  std::string generate(const GenerationJob& job) override;

 private:
  std::shared_ptr<backend::ChatBackend> chat_;
  std::string model_;
  double temperature_;
};

struct NegativeSample {
  std::string id;
  CorruptionKind kind = CorruptionKind::WrongAttribution;
  GenerationResponse response;
};

struct GenerationFailure {
  std::string id;
  CorruptionKind kind = CorruptionKind::WrongAttribution;
  int attempts = 0;
  std::string error;
};

struct NegativeBatch {
  std::vector<NegativeSample> negatives;  // record order
  std::vector<GenerationFailure> failures;  // record order
  std::vector<CorruptionKind> drawn;  // one per record, in record order
};

struct GenerateOptions {
  std::uint64_t seed = 0;
  std::array<double, 5> weights = kDefaultCorruptionWeights;
  backend::RetryPolicy retry;
  std::size_t max_in_flight = 4;
};

// One negative per record. Kinds are drawn in record order before any backend
// call. Throws BackendError only when every record failed on transport errors.
NegativeBatch generate_negatives(const std::vector<corpus::UtteranceRecord>& records,
                                 GeneratorBackend& backend, const GenerateOptions& options);

// ---------------------------------------------------------------------------
// Preference pairs

struct PreferencePair {
  std::string id;
  std::string source;
  corpus::CefrBand cefr = corpus::CefrBand::B1;
  GenerationResponse chosen;
  GenerationResponse rejected;
  CorruptionKind corruption = CorruptionKind::WrongAttribution;
};

struct PairIssue {
  std::string id;
  std::string message;
};

struct PairBuildResult {
  std::vector<PreferencePair> pairs;
  std::vector<PairIssue> issues;
};

PairBuildResult build_preference_pairs(const std::vector<corpus::UtteranceRecord>& records,
                                       const std::vector<NegativeSample>& negatives);

nlohmann::ordered_json pair_to_json(const PreferencePair& pair);
PreferencePair pair_from_json(const nlohmann::json& j);
nlohmann::ordered_json negative_to_json(const NegativeSample& n);
NegativeSample negative_from_json(const nlohmann::json& j);
nlohmann::ordered_json failure_to_json(const GenerationFailure& f);

std::string serialize_pairs(const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> parse_pairs(std::string_view jsonl);
std::string serialize_negatives(const std::vector<NegativeSample>& negatives);
std::vector<NegativeSample> parse_negatives(std::string_view jsonl);

// ---------------------------------------------------------------------------
// Synthetic data

// Seeded learner utterances, each with one grammatical error of a known kind
// (agreement, article, preposition, plural, tense) and short templated
// feedback. All records are in the train split; ids are "syn-<index>".
std::vector<corpus::UtteranceRecord> synthetic_corpus(std::size_t n, std::uint64_t seed);

// Seeded plain English sentences over the same vocabulary, without any chat
// or feedback structure.
std::vector<std::string> synthetic_plain_text(std::size_t n, std::uint64_t seed);

}  // namespace spfg::datagen
