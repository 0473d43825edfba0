#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spfg/corpus.hpp"

// Corpus analytics: error-type distributions, per-type F0.5 heatmaps and
// readability of feedback texts.
namespace spfg::analysis {

// ---------------------------------------------------------------------------
// Error-type distributions

struct DistributionRow {
  std::string type_code;  // "other" for the remainder row
  std::size_t count = 0;
  double percentage = 0.0;
};

struct DistributionGroup {
  std::string key;  // "all" or a CEFR band
  std::size_t total = 0;
  std::vector<DistributionRow> rows;  // count descending, then type_code
};

struct DistributionReport {
  std::vector<DistributionGroup> groups;
};

// Edit counts per type code over every (source, target) pair.
std::map<std::string, std::size_t> type_counts(const std::vector<corpus::UtteranceRecord>& records);

// The top_k most frequent types plus an "other" row for the rest (top_k = 0
// keeps every type).
DistributionGroup make_group(std::string key, const std::map<std::string, std::size_t>& counts, std::size_t top_k);

// Single group keyed "all".
DistributionReport error_type_distribution(const std::vector<corpus::UtteranceRecord>& records,
                                           std::size_t top_k = 15);

// One group per CEFR band in ascending order; bands without edits have no rows.
DistributionReport cefr_error_distribution(const std::vector<corpus::UtteranceRecord>& records,
                                           std::size_t top_k = 15);

// group,type_code,count,percentage
std::string distribution_csv(const DistributionReport& report);

// ---------------------------------------------------------------------------
// Heatmap

struct SystemPredictions {
  std::string name;
  std::map<std::string, std::string> corrections;  // item id -> corrected text
};

struct Heatmap {
  std::vector<std::string> systems;
  std::vector<std::string> types;
  // values[s][t] is F0.5 of system s on type t; empty when the type has no
  // tp, fp or fn for that system.
  std::vector<std::vector<std::optional<double>>> values;
};

// Columns are the top_k reference types by edit count. Throws DataError when
// a system does not cover exactly the reference ids.
Heatmap per_type_heatmap(const std::vector<SystemPredictions>& systems,
                         const std::vector<corpus::UtteranceRecord>& references, std::size_t top_k = 15);

std::string heatmap_csv(const Heatmap& heatmap);
// {"systems": [...], "types": [...], "values": [[...], ...]} with null for empty cells.
nlohmann::ordered_json heatmap_json(const Heatmap& heatmap);

// ---------------------------------------------------------------------------
// Readability

// Vowel groups over a e i o u y, minus one for a silent final "e" (a consonant
// followed by "e", except a consonant + "le" ending); at least 1 for any word
// with a letter, 0 otherwise.
int count_syllables(std::string_view word);

struct ReadabilityStats {
  std::size_t words = 0;
  std::size_t sentences = 0;
  std::size_t syllables = 0;
  std::size_t difficult_words = 0;  // words with >= 3 syllables
  double reading_ease = 0.0;
  double fk_grade = 0.0;
  double smog = 0.0;
  double gunning_fog = 0.0;
};

std::vector<std::string> split_words(std::string_view text);
// Segments ending in . ! or ?; text without terminal punctuation is one sentence.
std::size_t count_sentences(std::string_view text);

// Throws DataError for a block without words.
ReadabilityStats readability(std::string_view text);

struct GroupReadability {
  corpus::CefrBand band = corpus::CefrBand::A2;
  std::size_t blocks = 0;
  double reading_ease = 0.0;
  double fk_grade = 0.0;
  double smog = 0.0;
  double gunning_fog = 0.0;
  double difficult_words = 0.0;
};

// Per-band means over the blocks of that band; bands without blocks are omitted.
std::vector<GroupReadability> readability_by_band(
    const std::vector<std::pair<corpus::CefrBand, std::string>>& blocks);

std::string readability_csv(const std::vector<GroupReadability>& groups);

// ---------------------------------------------------------------------------
// Text rendering

// One line per row: label, a bar of '#' scaled to the largest value, the value.
std::string render_bars(const std::vector<std::pair<std::string, double>>& rows, std::size_t width = 40);

}  // namespace spfg::analysis
