#include "spfg/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

#include "spfg/editscore.hpp"
#include "spfg/error.hpp"

namespace spfg::analysis {

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::vector<editscore::EditSpan> edits_of(std::string_view source, std::string_view target) {
  return editscore::extract_edits(editscore::normalize_tokens(source), editscore::normalize_tokens(target));
}

}  // namespace

std::map<std::string, std::size_t> type_counts(const std::vector<corpus::UtteranceRecord>& records) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : records) {
    for (const auto& e : edits_of(r.source, r.target)) ++counts[e.type_code];
  }
  return counts;
}

DistributionGroup make_group(std::string key, const std::map<std::string, std::size_t>& counts, std::size_t top_k) {
  DistributionGroup g;
  g.key = std::move(key);
  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [type, n] : sorted) g.total += n;
  if (g.total == 0) return g;
  const double total = static_cast<double>(g.total);
  std::size_t rest = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (top_k == 0 || i < top_k) {
      g.rows.push_back({sorted[i].first, sorted[i].second, 100.0 * static_cast<double>(sorted[i].second) / total});
    } else {
      rest += sorted[i].second;
    }
  }
  if (rest > 0) g.rows.push_back({"other", rest, 100.0 * static_cast<double>(rest) / total});
  return g;
}

DistributionReport error_type_distribution(const std::vector<corpus::UtteranceRecord>& records, std::size_t top_k) {
  return {{make_group("all", type_counts(records), top_k)}};
}

DistributionReport cefr_error_distribution(const std::vector<corpus::UtteranceRecord>& records, std::size_t top_k) {
  std::array<std::map<std::string, std::size_t>, 8> per_band;
  for (const auto& r : records) {
    auto& counts = per_band[corpus::band_index(r.cefr)];
    for (const auto& e : edits_of(r.source, r.target)) ++counts[e.type_code];
  }
  DistributionReport report;
  for (auto band : corpus::kAllBands) {
    report.groups.push_back(make_group(std::string(corpus::to_string(band)), per_band[corpus::band_index(band)], top_k));
  }
  return report;
}

std::string distribution_csv(const DistributionReport& report) {
  std::string out = "group,type_code,count,percentage\n";
  for (const auto& g : report.groups) {
    for (const auto& r : g.rows) {
      out += g.key + "," + r.type_code + "," + std::to_string(r.count) + "," + fixed(r.percentage, 2) + "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Heatmap per_type_heatmap(const std::vector<SystemPredictions>& systems,
                         const std::vector<corpus::UtteranceRecord>& references, std::size_t top_k) {
  editscore::EditLists ref_edits;
  std::map<std::string, std::size_t> ref_counts;
  std::set<std::string> ids;
  for (const auto& r : references) {
    ids.insert(r.id);
    ref_edits.push_back(edits_of(r.source, r.target));
    for (const auto& e : ref_edits.back()) ++ref_counts[e.type_code];
  }
  Heatmap h;
  for (const auto& row : make_group("", ref_counts, 0).rows) h.types.push_back(row.type_code);
  if (top_k != 0 && h.types.size() > top_k) h.types.resize(top_k);

  for (const auto& sys : systems) {
    for (const auto& [id, text] : sys.corrections) {
      if (!ids.count(id)) throw DataError("system " + sys.name + " has a prediction for unknown id " + id);
    }
    editscore::EditLists hyp;
    for (const auto& r : references) {
      auto it = sys.corrections.find(r.id);
      if (it == sys.corrections.end()) throw DataError("system " + sys.name + " lacks a prediction for id " + r.id);
      hyp.push_back(edits_of(r.source, it->second));
    }
    const auto report = editscore::score_edits(hyp, ref_edits);
    std::vector<std::optional<double>> row;
    for (const auto& t : h.types) {
      auto it = report.per_type.find(t);
      if (it == report.per_type.end() || it->second.tp + it->second.fp + it->second.fn == 0) {
        row.emplace_back();
      } else {
        row.emplace_back(it->second.f_half);
      }
    }
    h.systems.push_back(sys.name);
    h.values.push_back(std::move(row));
  }
  return h;
}

std::string heatmap_csv(const Heatmap& heatmap) {
  std::string out = "system";
  for (const auto& t : heatmap.types) out += "," + t;
  out += "\n";
  for (std::size_t s = 0; s < heatmap.systems.size(); ++s) {
    out += heatmap.systems[s];
    for (const auto& v : heatmap.values[s]) out += "," + (v ? fixed(*v, 4) : std::string());
    out += "\n";
  }
  return out;
}

nlohmann::ordered_json heatmap_json(const Heatmap& heatmap) {
  nlohmann::ordered_json j;
  j["systems"] = heatmap.systems;
  j["types"] = heatmap.types;
  j["values"] = nlohmann::ordered_json::array();
  for (const auto& row : heatmap.values) {
    auto r = nlohmann::ordered_json::array();
    for (const auto& v : row) r.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json());
    j["values"].push_back(r);
  }
  return j;
}

// ---------------------------------------------------------------------------

namespace {
bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y'; }
}  // namespace

int count_syllables(std::string_view word) {
  std::string w;
  for (char c : word) {
    if (std::isalpha(static_cast<unsigned char>(c))) w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (w.empty()) return 0;
  int groups = 0;
  bool in_group = false;
  for (char c : w) {
    const bool v = is_vowel(c);
    if (v && !in_group) ++groups;
    in_group = v;
  }
  const std::size_t n = w.size();
  if (n >= 2 && w[n - 1] == 'e' && !is_vowel(w[n - 2])) {
    const bool consonant_le = w[n - 2] == 'l' && n >= 3 && !is_vowel(w[n - 3]);
    if (!consonant_le) --groups;
  }
  return std::max(groups, 1);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    // keep only tokens with a letter or digit
    if (std::any_of(cur.begin(), cur.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)); })) {
      out.push_back(cur);
    }
    cur.clear();
  };
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '\'' || c == '-' || u >= 0x80) {
      cur.push_back(c);
    } else {
      flush();
    }
  }
  flush();
  return out;
}

std::size_t count_sentences(std::string_view text) {
  std::size_t n = 0;
  bool has_word = false;
  for (char c : text) {
    if (c == '.' || c == '!' || c == '?') {
      if (has_word) ++n;
      has_word = false;
    } else if (std::isalnum(static_cast<unsigned char>(c))) {
      has_word = true;
    }
  }
  if (has_word) ++n;  // trailing text without terminal punctuation
  return n;
}

ReadabilityStats readability(std::string_view text) {
  const auto words = split_words(text);
  if (words.empty()) throw DataError("readability: empty block");
  ReadabilityStats s;
  s.words = words.size();
  s.sentences = std::max<std::size_t>(1, count_sentences(text));
  for (const auto& w : words) {
    const int syl = count_syllables(w);
    s.syllables += static_cast<std::size_t>(syl);
    if (syl >= 3) ++s.difficult_words;
  }
  const double wps = static_cast<double>(s.words) / static_cast<double>(s.sentences);
  const double spw = static_cast<double>(s.syllables) / static_cast<double>(s.words);
  const double poly = static_cast<double>(s.difficult_words);
  s.reading_ease = 206.835 - 1.015 * wps - 84.6 * spw;
  s.fk_grade = 0.39 * wps + 11.8 * spw - 15.59;
  s.smog = 1.0430 * std::sqrt(poly * 30.0 / static_cast<double>(s.sentences)) + 3.1291;
  s.gunning_fog = 0.4 * (wps + 100.0 * poly / static_cast<double>(s.words));
  return s;
}

std::vector<GroupReadability> readability_by_band(
    const std::vector<std::pair<corpus::CefrBand, std::string>>& blocks) {
  std::array<GroupReadability, 8> acc{};
  for (const auto& [band, text] : blocks) {
    const auto s = readability(text);
    auto& g = acc[corpus::band_index(band)];
    g.band = band;
    ++g.blocks;
    g.reading_ease += s.reading_ease;
    g.fk_grade += s.fk_grade;
    g.smog += s.smog;
    g.gunning_fog += s.gunning_fog;
    g.difficult_words += static_cast<double>(s.difficult_words);
  }
  std::vector<GroupReadability> out;
  for (auto& g : acc) {
    if (g.blocks == 0) continue;
    const double n = static_cast<double>(g.blocks);
    g.reading_ease /= n;
    g.fk_grade /= n;
    g.smog /= n;
    g.gunning_fog /= n;
    g.difficult_words /= n;
    out.push_back(g);
  }
  return out;
}

std::string readability_csv(const std::vector<GroupReadability>& groups) {
  std::string out = "cefr,blocks,reading_ease,fk_grade,smog,gunning_fog,difficult_words\n";
  for (const auto& g : groups) {
    out += std::string(corpus::to_string(g.band)) + "," + std::to_string(g.blocks) + "," + fixed(g.reading_ease, 2) +
           "," + fixed(g.fk_grade, 2) + "," + fixed(g.smog, 2) + "," + fixed(g.gunning_fog, 2) + "," +
           fixed(g.difficult_words, 2) + "\n";
  }
  return out;
}

std::string render_bars(const std::vector<std::pair<std::string, double>>& rows, std::size_t width) {
  std::size_t label_w = 0;
  double max_v = 0.0;
  for (const auto& [label, v] : rows) {
    label_w = std::max(label_w, label.size());
    max_v = std::max(max_v, v);
  }
  std::string out;
  for (const auto& [label, v] : rows) {
    const auto len = max_v > 0 ? static_cast<std::size_t>(std::lround(static_cast<double>(width) * v / max_v)) : 0;
    out += label + std::string(label_w - label.size(), ' ') + " | " + std::string(len, '#') +
           std::string(width - std::min(len, width), ' ') + " " + fixed(v, 2) + "\n";
  }
  return out;
}

}  // namespace spfg::analysis
