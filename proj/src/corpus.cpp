#include "spfg/corpus.hpp"

#include <sstream>
#include <unordered_set>

#include "spfg/digest.hpp"
#include "spfg/editscore.hpp"
#include "spfg/error.hpp"

namespace spfg::corpus {

namespace {

constexpr std::array<std::string_view, 8> kBandNames = {"A2", "A2-B1", "B1", "B1-B2",
                                                         "B2", "B2-C1", "C1", "C1-C2"};

std::string replace_en_dash(std::string_view text) {
  static constexpr std::string_view kEnDash = "\xE2\x80\x93";
  std::string out(text);
  for (auto pos = out.find(kEnDash); pos != std::string::npos; pos = out.find(kEnDash, pos)) {
    out.replace(pos, kEnDash.size(), "-");
  }
  return out;
}

const nlohmann::ordered_json& require_string(const nlohmann::ordered_json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw DataError(std::string("missing field '") + key + "'");
  if (!it->is_string()) throw DataError(std::string("field '") + key + "' is not a string");
  return *it;
}

}  // namespace

std::optional<CefrBand> parse_band(std::string_view text) {
  const std::string canon = replace_en_dash(text);
  for (std::size_t i = 0; i < kBandNames.size(); ++i) {
    if (canon == kBandNames[i]) return kAllBands[i];
  }
  return std::nullopt;
}

CefrBand band_from_string(std::string_view text) {
  if (auto b = parse_band(text)) return *b;
  throw DataError("unknown CEFR band '" + std::string(text) + "'");
}

std::string_view to_string(CefrBand band) { return kBandNames[band_index(band)]; }

std::size_t band_index(CefrBand band) { return static_cast<std::size_t>(band); }

std::optional<Split> parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "dev") return Split::Dev;
  if (text == "eval") return Split::Eval;
  return std::nullopt;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Eval: return "eval";
  }
  return "train";
}

UtteranceRecord record_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  UtteranceRecord r;
  r.id = require_string(j, "id").get<std::string>();
  r.source = require_string(j, "source").get<std::string>();
  r.target = require_string(j, "target").get<std::string>();
  r.cefr = band_from_string(require_string(j, "cefr").get<std::string>());
  r.feedback = require_string(j, "feedback").get<std::string>();
  const auto split = require_string(j, "split").get<std::string>();
  auto s = parse_split(split);
  if (!s) throw DataError("unknown split '" + split + "'");
  r.split = *s;
  for (const auto& [key, value] : j.items()) {
    if (key == "id" || key == "source" || key == "target" || key == "cefr" || key == "feedback" ||
        key == "split") {
      continue;
    }
    r.extra[key] = value;
  }
  return r;
}

nlohmann::ordered_json record_to_json(const UtteranceRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["source"] = r.source;
  j["target"] = r.target;
  j["cefr"] = std::string(to_string(r.cefr));
  j["feedback"] = r.feedback;
  j["split"] = std::string(to_string(r.split));
  for (const auto& [key, value] : r.extra.items()) j[key] = value;
  return j;
}

std::vector<std::string> validate_record(const UtteranceRecord& record) {
  std::vector<std::string> out;
  if (record.id.empty()) out.emplace_back("id empty");
  if (editscore::normalize_tokens(record.source).empty()) out.emplace_back("source empty");
  if (editscore::normalize_tokens(record.target).empty()) out.emplace_back("target empty");
  if (record.split == Split::Train && editscore::normalize_tokens(record.feedback).empty()) {
    out.emplace_back("train record has empty feedback");
  }
  return out;
}

LoadResult parse_corpus(std::string_view jsonl, bool strict) {
  LoadResult result;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    auto nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    std::string_view line = jsonl.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    std::string problem;
    UtteranceRecord rec;
    try {
      rec = record_from_json(nlohmann::ordered_json::parse(line));
      auto violations = validate_record(rec);
      if (!violations.empty()) {
        problem = violations.front();
        for (std::size_t i = 1; i < violations.size(); ++i) problem += "; " + violations[i];
      } else if (!seen.insert(rec.id).second) {
        problem = "duplicate id '" + rec.id + "'";
      }
    } catch (const nlohmann::json::exception& e) {
      problem = std::string("malformed JSON: ") + e.what();
    } catch (const DataError& e) {
      problem = e.what();
    }
    if (problem.empty()) {
      result.records.push_back(std::move(rec));
      continue;
    }
    if (strict) throw DataError("line " + std::to_string(line_no) + ": " + problem);
    result.issues.push_back({line_no, std::move(problem)});
  }
  return result;
}

LoadResult load_corpus(const std::filesystem::path& path, bool strict) {
  if (!std::filesystem::exists(path)) throw DataError("corpus file not found: " + path.string());
  return parse_corpus(read_file(path), strict);
}

std::string serialize_corpus(const std::vector<UtteranceRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

void save_corpus(const std::filesystem::path& path, const std::vector<UtteranceRecord>& records) {
  write_file(path, serialize_corpus(records));
}

std::size_t word_count(std::string_view text) { return editscore::normalize_tokens(text).size(); }

SplitStats& SplitStats::operator+=(const SplitStats& other) {
  n_items += other.n_items;
  total_words += other.total_words;
  avg_words = n_items ? static_cast<double>(total_words) / static_cast<double>(n_items) : 0.0;
  return *this;
}

namespace {
template <typename Pred>
SplitStats stats_where(const std::vector<UtteranceRecord>& records, Pred pred) {
  SplitStats s;
  for (const auto& r : records) {
    if (!pred(r)) continue;
    ++s.n_items;
    s.total_words += word_count(r.source);
  }
  s.avg_words = s.n_items ? static_cast<double>(s.total_words) / static_cast<double>(s.n_items) : 0.0;
  return s;
}
}  // namespace

SplitStats split_stats(const std::vector<UtteranceRecord>& records, Split split) {
  return stats_where(records, [split](const UtteranceRecord& r) { return r.split == split; });
}

SplitStats corpus_stats(const std::vector<UtteranceRecord>& records) {
  return stats_where(records, [](const UtteranceRecord&) { return true; });
}

std::array<BandFeedbackStats, 8> cefr_feedback_stats(const std::vector<UtteranceRecord>& records) {
  std::array<BandFeedbackStats, 8> out{};
  std::array<std::size_t, 8> words{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i].band = kAllBands[i];
  for (const auto& r : records) {
    const auto b = band_index(r.cefr);
    ++out[b].count;
    words[b] += word_count(r.feedback);
  }
  const double n = static_cast<double>(records.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].count == 0) continue;
    out[i].percentage = 100.0 * static_cast<double>(out[i].count) / n;
    out[i].avg_feedback_words = static_cast<double>(words[i]) / static_cast<double>(out[i].count);
  }
  return out;
}

std::vector<UtteranceRecord> filter_split(const std::vector<UtteranceRecord>& records, Split split) {
  std::vector<UtteranceRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

}  // namespace spfg::corpus
