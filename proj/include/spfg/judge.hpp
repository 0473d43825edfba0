#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spfg/backend.hpp"
#include "spfg/corpus.hpp"
#include "spfg/datagen.hpp"

// Rubric scoring of feedback texts by an external judge model.
namespace spfg::judge {

enum class RubricDimension { Correctness, LevelAppropriateness, SuggestionQuality, Positiveness };

inline constexpr std::array<RubricDimension, 4> kDimensions = {
    RubricDimension::Correctness, RubricDimension::LevelAppropriateness, RubricDimension::SuggestionQuality,
    RubricDimension::Positiveness};

// Report column name: correctness, level, suggestion, positiveness.
std::string_view column_name(RubricDimension dim);
std::size_t dimension_index(RubricDimension dim);
datagen::PromptTemplate rubric_template(RubricDimension dim);

// Throws DataError when any slot value is empty.
std::string render_rubric_prompt(RubricDimension dim, std::string_view source, std::string_view target,
                                 std::string_view level, std::string_view feedback);

// Strict: trimmed text is a single digit 1..5. Lenient: first standalone
// integer in range. Otherwise DataError.
int parse_rubric_score(std::string_view raw);

struct JudgeScore {
  std::array<std::optional<int>, 4> scores;

  bool complete() const;
  int sum() const;  // of present scores
  // (c + l + s + p) / 4; nullopt unless complete.
  std::optional<double> avg() const;
};

struct JudgeItem {
  std::string id;
  std::string source;
  std::string target;
  corpus::CefrBand cefr = corpus::CefrBand::B1;
  std::string feedback;
};

// One rubric call. Implementations may throw BackendError.
class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual std::string judge(RubricDimension dim, const std::string& prompt) = 0;
};

// Sends the prompt through a chat backend (temperature 0 by default).
class ChatJudge : public JudgeClient {
 public:
  ChatJudge(std::shared_ptr<backend::ChatBackend> chat, std::string model, double temperature = 0.0)
      : chat_(std::move(chat)), model_(std::move(model)), temperature_(temperature) {}
  std::string judge(RubricDimension dim, const std::string& prompt) override;

 private:
  std::shared_ptr<backend::ChatBackend> chat_;
  std::string model_;
  double temperature_;
};

// Deterministic offline judge returning fixed text per dimension.
class MockJudge : public JudgeClient {
 public:
  explicit MockJudge(std::array<std::string, 4> replies) : replies_(std::move(replies)) {}
  static MockJudge constant(int score);
  std::string judge(RubricDimension dim, const std::string& prompt) override;

 private:
  std::array<std::string, 4> replies_;
};

struct JudgeOptions {
  backend::RetryPolicy retry;
  std::size_t max_in_flight = 4;
};

struct JudgeFailure {
  std::string id;
  RubricDimension dim = RubricDimension::Correctness;
  std::string error;
};

struct JudgeReport {
  std::vector<std::string> ids;
  std::vector<JudgeScore> scores;  // parallel to ids
  std::array<std::optional<double>, 4> means;
  std::array<std::size_t, 4> coverage{};  // scored items per dimension
  std::vector<JudgeFailure> failures;

  // Mean of the four corpus means; nullopt when a dimension has no scores.
  std::optional<double> avg() const;
};

// Four calls per item. Calls that still fail after retries leave a missing
// score. Throws BackendError when every call failed on transport errors.
JudgeReport judge_corpus(const std::vector<JudgeItem>& items, JudgeClient& client, const JudgeOptions& options);

// Columns id,correctness,level,suggestion,positiveness,avg; a trailing "mean"
// row carries the corpus means. Missing values are empty cells.
std::string report_csv(const JudgeReport& report);

double mean_of_four(const std::array<double, 4>& values);

struct NamedColumn {
  std::string name;
  std::vector<double> values;
};

struct CorrelationMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<double>> r;
};

// Throws DataError for unequal lengths, fewer than two values, or a
// zero-variance column (named in the message).
CorrelationMatrix pearson_matrix(const std::vector<NamedColumn>& columns);

std::string correlation_csv(const CorrelationMatrix& m);

}  // namespace spfg::judge
