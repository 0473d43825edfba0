#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

// Correction-quality evaluation: normalization, WER, edit extraction and
// classification, and edit-level precision/recall/F0.5.
namespace spfg::editscore {

using TokenSeq = std::vector<std::string>;

// Lowercases ASCII letters, drops punctuation except apostrophes and hyphens
// that sit between two word characters, and splits on whitespace.
TokenSeq normalize_tokens(std::string_view text);

struct WerCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_length = 0;

  std::size_t errors() const { return substitutions + insertions + deletions; }
};

// Minimal-edit-distance error counts of hyp against ref.
WerCounts wer_counts(const TokenSeq& hyp, const TokenSeq& ref);

// errors / |ref|. Throws std::invalid_argument when ref is empty.
double wer(const TokenSeq& hyp, const TokenSeq& ref);

enum class EditOp { Missing, Replace, Unnecessary };

char op_letter(EditOp op);

struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool empty() const { return begin == end; }
  std::size_t size() const { return end - begin; }
  bool operator==(const Range&) const = default;
};

struct EditSpan {
  EditOp op = EditOp::Replace;
  std::string type_code;
  Range src_range;
  Range tgt_range;
  TokenSeq src_text;
  TokenSeq tgt_text;
};

// Token alignment (match 0, substitute/insert/delete 1) with ties resolved
// match > substitute > delete > insert during the backtrace. Each maximal run
// of non-match steps becomes one span. Spans come back classified.
std::vector<EditSpan> extract_edits(const TokenSeq& src, const TokenSeq& tgt);

// Heuristic ERRANT-style type code; always prefixed by the op letter.
std::string classify_edit(const EditSpan& edit, const TokenSeq& src, const TokenSeq& tgt);

// Replays spans left to right onto src.
TokenSeq apply_edits(const TokenSeq& src, const std::vector<EditSpan>& edits);

struct EditScore {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f_half = 0.0;
};

// Fills precision/recall/f_half from the counts.
EditScore finalize(std::size_t tp, std::size_t fp, std::size_t fn);

double f_beta(double precision, double recall, double beta = 0.5);

struct ScoreReport {
  EditScore overall;
  std::map<std::string, EditScore> per_type;
};

using EditLists = std::vector<std::vector<EditSpan>>;

// Hypothesis edits are true positives when a reference edit of the same item
// has the same source range and the same replacement tokens. Per-type counts
// use the reference type for tp/fn and the hypothesis type for fp.
// Throws std::invalid_argument when the item counts differ.
ScoreReport score_edits(const EditLists& hyp_edits, const EditLists& ref_edits);

// CSV with columns type_code,tp,fp,fn,p,r,f05; reals with 4 decimals; the
// final row is the overall score.
std::string report_csv(const ScoreReport& report);

}  // namespace spfg::editscore
