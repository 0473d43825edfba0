#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace spfg::corpus {

// CEFR proficiency band, half-bands included, in ascending order.
enum class CefrBand { A2, A2_B1, B1, B1_B2, B2, B2_C1, C1, C1_C2 };

inline constexpr std::array<CefrBand, 8> kAllBands = {
    CefrBand::A2, CefrBand::A2_B1, CefrBand::B1,    CefrBand::B1_B2,
    CefrBand::B2, CefrBand::B2_C1, CefrBand::C1, CefrBand::C1_C2};

// Accepts "A2", "A2-B1", ... (an en dash is also accepted in half-bands).
std::optional<CefrBand> parse_band(std::string_view text);
CefrBand band_from_string(std::string_view text);  // throws DataError
std::string_view to_string(CefrBand band);
std::size_t band_index(CefrBand band);

enum class Split { Train, Dev, Eval };

std::optional<Split> parse_split(std::string_view text);
std::string_view to_string(Split split);

struct UtteranceRecord {
  std::string id;
  std::string source;
  std::string target;
  CefrBand cefr = CefrBand::B1;
  std::string feedback;
  Split split = Split::Train;
  // Fields not in the schema, written back unchanged on save.
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct LoadIssue {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<UtteranceRecord> records;
  std::vector<LoadIssue> issues;
};

// Reads the JSONL corpus. In strict mode the first bad line throws DataError
// naming the line; otherwise bad lines are collected in `issues` and skipped.
// A missing file always throws.
LoadResult load_corpus(const std::filesystem::path& path, bool strict);
LoadResult parse_corpus(std::string_view jsonl, bool strict);

UtteranceRecord record_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json record_to_json(const UtteranceRecord& r);

std::string serialize_corpus(const std::vector<UtteranceRecord>& records);
void save_corpus(const std::filesystem::path& path, const std::vector<UtteranceRecord>& records);

// Every violated record invariant; empty means valid.
std::vector<std::string> validate_record(const UtteranceRecord& record);

std::size_t word_count(std::string_view text);

struct SplitStats {
  std::size_t n_items = 0;
  std::size_t total_words = 0;
  double avg_words = 0.0;

  SplitStats& operator+=(const SplitStats& other);
};

SplitStats split_stats(const std::vector<UtteranceRecord>& records, Split split);
// Over every record regardless of split.
SplitStats corpus_stats(const std::vector<UtteranceRecord>& records);

struct BandFeedbackStats {
  CefrBand band = CefrBand::A2;
  std::size_t count = 0;
  double percentage = 0.0;
  double avg_feedback_words = 0.0;
};

std::array<BandFeedbackStats, 8> cefr_feedback_stats(const std::vector<UtteranceRecord>& records);

std::vector<UtteranceRecord> filter_split(const std::vector<UtteranceRecord>& records, Split split);

}  // namespace spfg::corpus
