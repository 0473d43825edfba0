#include "spfg/editscore.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <optional>
#include <cstdio>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace spfg::editscore {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

// Maps U+2019 to an ASCII apostrophe so curly and straight quotes agree.
std::string fold_quotes(std::string_view text) {
  static constexpr std::string_view kRsquo = "\xE2\x80\x99";
  std::string out(text);
  for (auto pos = out.find(kRsquo); pos != std::string::npos; pos = out.find(kRsquo, pos)) {
    out.replace(pos, kRsquo.size(), "'");
  }
  return out;
}

}  // namespace

TokenSeq normalize_tokens(std::string_view raw) {
  const std::string text = fold_quotes(raw);
  TokenSeq tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (is_word_byte(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (c == '\'' || c == '-') {
      const bool prev_word = i > 0 && is_word_byte(static_cast<unsigned char>(text[i - 1]));
      const bool next_word =
          i + 1 < text.size() && is_word_byte(static_cast<unsigned char>(text[i + 1]));
      if (prev_word && next_word) current.push_back(static_cast<char>(c));
    }
    // any other punctuation is dropped in place
  }
  flush();
  return tokens;
}

namespace {

enum class Step { Match, Substitute, Delete, Insert };

using Table = std::vector<std::vector<std::size_t>>;

Table distance_table(const TokenSeq& src, const TokenSeq& tgt) {
  const std::size_t n = src.size();
  const std::size_t m = tgt.size();
  Table d(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = d[i - 1][j - 1] + (src[i - 1] == tgt[j - 1] ? 0 : 1);
      d[i][j] = std::min({diag, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  }
  return d;
}

// Forward-ordered alignment steps.
std::vector<Step> backtrace(const TokenSeq& src, const TokenSeq& tgt) {
  const Table d = distance_table(src, tgt);
  std::vector<Step> steps;
  std::size_t i = src.size();
  std::size_t j = tgt.size();
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && src[i - 1] == tgt[j - 1] && d[i][j] == d[i - 1][j - 1]) {
      steps.push_back(Step::Match);
      --i, --j;
    } else if (i > 0 && j > 0 && src[i - 1] != tgt[j - 1] && d[i][j] == d[i - 1][j - 1] + 1) {
      steps.push_back(Step::Substitute);
      --i, --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      steps.push_back(Step::Delete);
      --i;
    } else {
      steps.push_back(Step::Insert);
      --j;
    }
  }
  std::reverse(steps.begin(), steps.end());
  return steps;
}

}  // namespace

WerCounts wer_counts(const TokenSeq& hyp, const TokenSeq& ref) {
  WerCounts c;
  c.ref_length = ref.size();
  // Align ref (as source) to hyp (as target): a deletion from ref is a
  // deletion error, an insertion into hyp is an insertion error.
  for (Step s : backtrace(ref, hyp)) {
    if (s == Step::Substitute) ++c.substitutions;
    if (s == Step::Delete) ++c.deletions;
    if (s == Step::Insert) ++c.insertions;
  }
  return c;
}

double wer(const TokenSeq& hyp, const TokenSeq& ref) {
  if (ref.empty()) throw std::invalid_argument("wer: empty reference");
  const auto c = wer_counts(hyp, ref);
  return static_cast<double>(c.errors()) / static_cast<double>(ref.size());
}

char op_letter(EditOp op) {
  switch (op) {
    case EditOp::Missing: return 'M';
    case EditOp::Replace: return 'R';
    case EditOp::Unnecessary: return 'U';
  }
  return 'R';
}

std::vector<EditSpan> extract_edits(const TokenSeq& src, const TokenSeq& tgt) {
  std::vector<EditSpan> edits;
  const auto steps = backtrace(src, tgt);
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t k = 0;
  while (k < steps.size()) {
    if (steps[k] == Step::Match) {
      ++i, ++j, ++k;
      continue;
    }
    EditSpan e;
    e.src_range.begin = i;
    e.tgt_range.begin = j;
    for (; k < steps.size() && steps[k] != Step::Match; ++k) {
      if (steps[k] != Step::Insert) ++i;
      if (steps[k] != Step::Delete) ++j;
    }
    e.src_range.end = i;
    e.tgt_range.end = j;
    e.src_text.assign(src.begin() + static_cast<std::ptrdiff_t>(e.src_range.begin),
                      src.begin() + static_cast<std::ptrdiff_t>(e.src_range.end));
    e.tgt_text.assign(tgt.begin() + static_cast<std::ptrdiff_t>(e.tgt_range.begin),
                      tgt.begin() + static_cast<std::ptrdiff_t>(e.tgt_range.end));
    if (e.src_range.empty()) {
      e.op = EditOp::Missing;
    } else if (e.tgt_range.empty()) {
      e.op = EditOp::Unnecessary;
    } else {
      e.op = EditOp::Replace;
    }
    e.type_code = classify_edit(e, src, tgt);
    edits.push_back(std::move(e));
  }
  return edits;
}

TokenSeq apply_edits(const TokenSeq& src, const std::vector<EditSpan>& edits) {
  TokenSeq out;
  std::size_t pos = 0;
  for (const auto& e : edits) {
    if (e.src_range.begin < pos || e.src_range.end > src.size()) {
      throw std::invalid_argument("apply_edits: spans overlap or exceed the source");
    }
    out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(pos),
               src.begin() + static_cast<std::ptrdiff_t>(e.src_range.begin));
    out.insert(out.end(), e.tgt_text.begin(), e.tgt_text.end());
    pos = e.src_range.end;
  }
  out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(pos), src.end());
  return out;
}

// ---------------------------------------------------------------------------
// Classification

namespace {

using Lexicon = std::unordered_set<std::string_view>;

const Lexicon& determiners() {
  static const Lexicon k = {"a", "an", "the", "this", "that", "these", "those"};
  return k;
}

const Lexicon& prepositions() {
  static const Lexicon k = {"about",  "above",   "across", "after",  "against", "along",
                            "among",  "around",  "as",     "at",     "before",  "behind",
                            "below",  "beside",  "besides", "between", "beyond", "by",
                            "despite", "during", "except", "for",    "from",    "in",
                            "inside", "into",    "near",   "of",     "off",     "on",
                            "onto",   "outside", "over",   "since",  "through", "throughout",
                            "till",   "to",      "toward", "towards", "under",  "until",
                            "upon",   "via",     "with",   "within", "without"};
  return k;
}

const Lexicon& pronouns() {
  static const Lexicon k = {"i",       "me",       "my",        "mine",     "myself",
                            "you",     "your",     "yours",     "yourself", "yourselves",
                            "he",      "him",      "his",       "himself",  "she",
                            "her",     "hers",     "herself",   "it",       "its",
                            "itself",  "we",       "us",        "our",      "ours",
                            "ourselves", "they",   "them",      "their",    "theirs",
                            "themselves", "someone", "somebody", "something", "anyone",
                            "anybody", "anything", "everyone",  "everybody", "everything",
                            "nobody",  "nothing",  "who",       "whom",     "whose"};
  return k;
}

const Lexicon& subject_pronouns() {
  static const Lexicon k = {"i", "you", "he", "she", "it", "we", "they"};
  return k;
}

// Verbs whose -s/-es alternation is read as agreement rather than number.
const Lexicon& agreement_verbs() {
  static const Lexicon k = {"be",    "have",   "do",     "go",    "like",  "love",  "want",
                            "need",  "make",   "take",   "think", "know",  "live",  "work",
                            "play",  "eat",    "watch",  "get",   "say",   "come",  "see",
                            "use",   "help",   "enjoy",  "prefer", "hate", "give",  "feel",
                            "look",  "seem",   "start",  "read",  "write", "speak", "talk",
                            "spend", "mean",   "become", "keep",  "let",   "begin", "show",
                            "hear",  "run",    "move",   "believe", "bring", "happen", "include",
                            "provide", "allow", "teach", "learn", "change", "depend", "agree"};
  return k;
}

// base -> irregular past / participle forms
const std::unordered_map<std::string_view, std::vector<std::string_view>>& irregular_verbs() {
  static const std::unordered_map<std::string_view, std::vector<std::string_view>> k = {
      {"be", {"was", "were", "been"}},       {"begin", {"began", "begun"}},
      {"bring", {"brought"}},                {"buy", {"bought"}},
      {"catch", {"caught"}},                 {"choose", {"chose", "chosen"}},
      {"come", {"came"}},                    {"do", {"did", "done"}},
      {"drink", {"drank", "drunk"}},         {"drive", {"drove", "driven"}},
      {"eat", {"ate", "eaten"}},             {"fall", {"fell", "fallen"}},
      {"feel", {"felt"}},                    {"find", {"found"}},
      {"fly", {"flew", "flown"}},            {"forget", {"forgot", "forgotten"}},
      {"get", {"got", "gotten"}},            {"give", {"gave", "given"}},
      {"go", {"went", "gone"}},              {"grow", {"grew", "grown"}},
      {"have", {"had"}},                     {"hear", {"heard"}},
      {"keep", {"kept"}},                    {"know", {"knew", "known"}},
      {"leave", {"left"}},                   {"lose", {"lost"}},
      {"make", {"made"}},                    {"meet", {"met"}},
      {"pay", {"paid"}},                     {"run", {"ran"}},
      {"say", {"said"}},                     {"see", {"saw", "seen"}},
      {"sell", {"sold"}},                    {"send", {"sent"}},
      {"sing", {"sang", "sung"}},            {"sit", {"sat"}},
      {"sleep", {"slept"}},                  {"speak", {"spoke", "spoken"}},
      {"spend", {"spent"}},                  {"stand", {"stood"}},
      {"swim", {"swam", "swum"}},            {"take", {"took", "taken"}},
      {"teach", {"taught"}},                 {"tell", {"told"}},
      {"think", {"thought"}},                {"understand", {"understood"}},
      {"wake", {"woke", "woken"}},           {"wear", {"wore", "worn"}},
      {"win", {"won"}},                      {"write", {"wrote", "written"}}};
  return k;
}

bool all_in(const Lexicon& lex, const TokenSeq& a, const TokenSeq& b) {
  if (a.empty() && b.empty()) return false;
  auto in = [&](const std::string& t) { return lex.count(t) > 0; };
  return std::all_of(a.begin(), a.end(), in) && std::all_of(b.begin(), b.end(), in);
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

// Candidate base forms for a possibly -ing/-ed/-en inflected word.
std::set<std::string> stems(const std::string& w) {
  std::set<std::string> out = {w};
  for (std::string_view suffix : {"ing", "ed", "en"}) {
    if (!ends_with(w, suffix) || w.size() < suffix.size() + 2) continue;
    std::string base = w.substr(0, w.size() - suffix.size());
    out.insert(base);
    out.insert(base + "e");
    const auto n = base.size();
    if (n >= 2 && base[n - 1] == base[n - 2] && !is_vowel(base[n - 1])) {
      out.insert(base.substr(0, n - 1));
    }
  }
  return out;
}

// The shorter word when the two differ by a final "s"/"es".
std::optional<std::string> plural_base(const std::string& a, const std::string& b) {
  for (std::string_view suffix : {"s", "es"}) {
    if (b.size() == a.size() + suffix.size() && ends_with(b, suffix) &&
        b.compare(0, a.size(), a) == 0) {
      return a;
    }
    if (a.size() == b.size() + suffix.size() && ends_with(a, suffix) &&
        a.compare(0, b.size(), b) == 0) {
      return b;
    }
  }
  return std::nullopt;
}

bool irregular_tense_pair(const std::string& a, const std::string& b) {
  const auto& table = irregular_verbs();
  auto forms_of = [&](const std::string& base) -> const std::vector<std::string_view>* {
    auto it = table.find(base);
    return it == table.end() ? nullptr : &it->second;
  };
  auto contains = [](const std::vector<std::string_view>& v, const std::string& w) {
    return std::find(v.begin(), v.end(), w) != v.end();
  };
  // a may be the base, a regularized form of the base, or another irregular form.
  for (const auto& x : {std::pair{a, b}, std::pair{b, a}}) {
    for (const auto& base : stems(x.first)) {
      if (const auto* forms = forms_of(base); forms && (x.second == base || contains(*forms, x.second))) {
        return true;
      }
    }
  }
  for (const auto& [base, forms] : table) {
    if (contains(forms, a) && contains(forms, b)) return true;
  }
  return false;
}

}  // namespace

std::string classify_edit(const EditSpan& edit, const TokenSeq& src, const TokenSeq& /*tgt*/) {
  const std::string prefix = std::string(1, op_letter(edit.op)) + ":";
  if (all_in(determiners(), edit.src_text, edit.tgt_text)) return prefix + "DET";
  if (all_in(prepositions(), edit.src_text, edit.tgt_text)) return prefix + "PREP";
  if (all_in(pronouns(), edit.src_text, edit.tgt_text)) return prefix + "PRON";

  if (edit.op == EditOp::Replace && edit.src_text.size() == 1 && edit.tgt_text.size() == 1) {
    const auto& a = edit.src_text.front();
    const auto& b = edit.tgt_text.front();
    if (auto base = plural_base(a, b)) {
      const bool subject_left = edit.src_range.begin > 0 &&
                                subject_pronouns().count(src[edit.src_range.begin - 1]) > 0;
      if (agreement_verbs().count(*base) > 0 || subject_left) return prefix + "VERB:SVA";
      return prefix + "NOUN:NUM";
    }
    const auto sa = stems(a);
    const auto sb = stems(b);
    const bool shared = std::any_of(sa.begin(), sa.end(), [&](const std::string& s) {
      return sb.count(s) > 0;
    });
    if (shared) return prefix + "VERB:FORM";
    if (irregular_tense_pair(a, b)) return prefix + "VERB:TENSE";
  }
  return prefix + "OTHER";
}

// ---------------------------------------------------------------------------
// Scoring

double f_beta(double precision, double recall, double beta) {
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  if (precision + recall <= 0.0 || denom <= 0.0) return 0.0;
  return (1.0 + b2) * precision * recall / denom;
}

EditScore finalize(std::size_t tp, std::size_t fp, std::size_t fn) {
  EditScore s{tp, fp, fn, 0.0, 0.0, 0.0};
  if (tp + fp > 0) s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  s.f_half = f_beta(s.precision, s.recall, 0.5);
  return s;
}

ScoreReport score_edits(const EditLists& hyp_edits, const EditLists& ref_edits) {
  if (hyp_edits.size() != ref_edits.size()) {
    throw std::invalid_argument("score_edits: " + std::to_string(hyp_edits.size()) +
                                " hypothesis items vs " + std::to_string(ref_edits.size()) +
                                " reference items");
  }
  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
  };
  Counts total;
  std::map<std::string, Counts> per_type;
  for (std::size_t item = 0; item < hyp_edits.size(); ++item) {
    const auto& refs = ref_edits[item];
    std::vector<bool> used(refs.size(), false);
    for (const auto& h : hyp_edits[item]) {
      bool matched = false;
      for (std::size_t r = 0; r < refs.size(); ++r) {
        if (!used[r] && refs[r].src_range == h.src_range && refs[r].tgt_text == h.tgt_text) {
          used[r] = true;
          matched = true;
          ++total.tp;
          ++per_type[refs[r].type_code].tp;
          break;
        }
      }
      if (!matched) {
        ++total.fp;
        ++per_type[h.type_code].fp;
      }
    }
    for (std::size_t r = 0; r < refs.size(); ++r) {
      if (used[r]) continue;
      ++total.fn;
      ++per_type[refs[r].type_code].fn;
    }
  }
  ScoreReport report;
  report.overall = finalize(total.tp, total.fp, total.fn);
  for (const auto& [code, c] : per_type) report.per_type[code] = finalize(c.tp, c.fp, c.fn);
  return report;
}

std::string report_csv(const ScoreReport& report) {
  std::string out = "type_code,tp,fp,fn,p,r,f05\n";
  char buf[256];
  auto row = [&](const std::string& name, const EditScore& s) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%.4f,%.4f,%.4f\n", name.c_str(), s.tp, s.fp,
                  s.fn, s.precision, s.recall, s.f_half);
    out += buf;
  };
  for (const auto& [code, s] : report.per_type) row(code, s);
  row("overall", report.overall);
  return out;
}

}  // namespace spfg::editscore
