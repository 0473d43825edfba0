#include "spfg/judge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "spfg/error.hpp"
#include "spfg/parallel.hpp"

namespace spfg::judge {

std::string_view column_name(RubricDimension dim) {
  switch (dim) {
    case RubricDimension::Correctness: return "correctness";
    case RubricDimension::LevelAppropriateness: return "level";
    case RubricDimension::SuggestionQuality: return "suggestion";
    case RubricDimension::Positiveness: return "positiveness";
  }
  return "?";
}

std::size_t dimension_index(RubricDimension dim) { return static_cast<std::size_t>(dim); }

datagen::PromptTemplate rubric_template(RubricDimension dim) {
  switch (dim) {
    case RubricDimension::Correctness: return datagen::load_template("judge_correctness");
    case RubricDimension::LevelAppropriateness: return datagen::load_template("judge_level_appropriateness");
    case RubricDimension::SuggestionQuality: return datagen::load_template("judge_suggestion_quality");
    case RubricDimension::Positiveness: return datagen::load_template("judge_positiveness");
  }
  throw std::invalid_argument("unknown rubric dimension");
}

std::string render_rubric_prompt(RubricDimension dim, std::string_view source, std::string_view target,
                                 std::string_view level, std::string_view feedback) {
  const std::pair<const char*, std::string_view> slots[] = {
      {"SOURCE", source}, {"TARGET", target}, {"LEVEL", level}, {"FEEDBACK", feedback}};
  datagen::SlotMap map;
  for (const auto& [name, value] : slots) {
    if (value.empty()) throw DataError(std::string("missing slot: ") + name);
    map.emplace(name, std::string(value));
  }
  return datagen::render_template(rubric_template(dim), map);
}

int parse_rubric_score(std::string_view raw) {
  auto b = raw.find_first_not_of(" \t\r\n");
  auto e = raw.find_last_not_of(" \t\r\n");
  if (b != std::string_view::npos) {
    const auto t = raw.substr(b, e - b + 1);
    if (t.size() == 1 && t[0] >= '1' && t[0] <= '5') return t[0] - '0';
  }
  // standalone integers only: digits not adjacent to other digits or letters
  std::size_t i = 0;
  while (i < raw.size()) {
    if (!std::isdigit(static_cast<unsigned char>(raw[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < raw.size() && std::isdigit(static_cast<unsigned char>(raw[j]))) ++j;
    const bool left_ok = i == 0 || !std::isalnum(static_cast<unsigned char>(raw[i - 1]));
    const bool right_ok = j == raw.size() || !std::isalnum(static_cast<unsigned char>(raw[j]));
    const bool decimal = j < raw.size() && raw[j] == '.' && j + 1 < raw.size() &&
                         std::isdigit(static_cast<unsigned char>(raw[j + 1]));
    if (left_ok && right_ok && !decimal && j - i == 1 && raw[i] >= '1' && raw[i] <= '5') return raw[i] - '0';
    i = j;
  }
  throw DataError("no rubric score in judge output: " + std::string(raw.substr(0, 80)));
}

bool JudgeScore::complete() const {
  for (const auto& s : scores) {
    if (!s) return false;
  }
  return true;
}

int JudgeScore::sum() const {
  int total = 0;
  for (const auto& s : scores) total += s.value_or(0);
  return total;
}

std::optional<double> JudgeScore::avg() const {
  if (!complete()) return std::nullopt;
  return sum() / 4.0;
}

std::string ChatJudge::judge(RubricDimension, const std::string& prompt) {
  return chat_->complete({model_, prompt, temperature_});
}

MockJudge MockJudge::constant(int score) {
  const auto s = std::to_string(score);
  return MockJudge({s, s, s, s});
}

std::string MockJudge::judge(RubricDimension dim, const std::string&) { return replies_[dimension_index(dim)]; }

std::optional<double> JudgeReport::avg() const {
  double total = 0.0;
  for (const auto& m : means) {
    if (!m) return std::nullopt;
    total += *m;
  }
  return total / 4.0;
}

JudgeReport judge_corpus(const std::vector<JudgeItem>& items, JudgeClient& client, const JudgeOptions& options) {
  struct Outcome {
    std::optional<int> score;
    std::string error;
    bool transport = false;
  };
  const std::size_t calls = items.size() * 4;
  std::vector<Outcome> outcomes(calls);
  const int attempts = std::max(1, options.retry.attempts);
  parallel_for(calls, options.max_in_flight, [&](std::size_t k) {
    const JudgeItem& item = items[k / 4];
    const RubricDimension dim = kDimensions[k % 4];
    Outcome& out = outcomes[k];
    std::string prompt;
    try {
      prompt = render_rubric_prompt(dim, item.source, item.target, corpus::to_string(item.cefr), item.feedback);
    } catch (const DataError& e) {
      out.error = e.what();
      return;
    }
    for (int attempt = 1; attempt <= attempts; ++attempt) {
      options.retry.wait_before_attempt(attempt);
      try {
        out.score = parse_rubric_score(client.judge(dim, prompt));
        return;
      } catch (const BackendError& e) {
        out.error = e.what();
        out.transport = true;
      } catch (const DataError& e) {
        out.error = e.what();
        out.transport = false;
      }
    }
  });

  JudgeReport report;
  report.ids.reserve(items.size());
  report.scores.resize(items.size());
  std::array<long long, 4> sums{};
  bool all_transport = calls > 0;
  for (std::size_t k = 0; k < calls; ++k) {
    const std::size_t d = k % 4;
    auto& o = outcomes[k];
    if (o.score) {
      all_transport = false;
      report.scores[k / 4].scores[d] = o.score;
      sums[d] += *o.score;
      ++report.coverage[d];
    } else {
      all_transport = all_transport && o.transport;
      report.failures.push_back({items[k / 4].id, kDimensions[d], o.error});
    }
  }
  if (all_transport) throw BackendError("judge backend unreachable: " + report.failures.front().error);
  for (const auto& item : items) report.ids.push_back(item.id);
  for (std::size_t d = 0; d < 4; ++d) {
    if (report.coverage[d] > 0) report.means[d] = static_cast<double>(sums[d]) / static_cast<double>(report.coverage[d]);
  }
  return report;
}

namespace {
std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}
}  // namespace

std::string report_csv(const JudgeReport& report) {
  std::string out = "id,correctness,level,suggestion,positiveness,avg\n";
  for (std::size_t i = 0; i < report.ids.size(); ++i) {
    const auto& s = report.scores[i];
    out += csv_field(report.ids[i]);
    for (const auto& v : s.scores) out += "," + (v ? std::to_string(*v) : std::string());
    const auto a = s.avg();
    out += "," + (a ? fixed(*a, 2) : std::string()) + "\n";
  }
  out += "mean";
  for (const auto& m : report.means) out += "," + (m ? fixed(*m, 4) : std::string());
  const auto a = report.avg();
  out += "," + (a ? fixed(*a, 4) : std::string()) + "\n";
  return out;
}

double mean_of_four(const std::array<double, 4>& values) {
  return (values[0] + values[1] + values[2] + values[3]) / 4.0;
}

CorrelationMatrix pearson_matrix(const std::vector<NamedColumn>& columns) {
  if (columns.empty()) throw DataError("no columns to correlate");
  const std::size_t n = columns.front().values.size();
  for (const auto& c : columns) {
    if (c.values.size() != n) throw DataError("column " + c.name + " has a different length");
  }
  if (n < 2) throw DataError("need at least two values per column");
  const std::size_t k = columns.size();
  std::vector<std::vector<double>> centered(k);
  std::vector<double> norms(k);
  for (std::size_t c = 0; c < k; ++c) {
    double mean = 0.0;
    for (double v : columns[c].values) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : columns[c].values) {
      centered[c].push_back(v - mean);
      ss += (v - mean) * (v - mean);
    }
    if (ss == 0.0) throw DataError("column " + columns[c].name + " has zero variance");
    norms[c] = std::sqrt(ss);
  }
  CorrelationMatrix m;
  m.r.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t a = 0; a < k; ++a) {
    m.names.push_back(columns[a].name);
    m.r[a][a] = 1.0;
    for (std::size_t b = a + 1; b < k; ++b) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += centered[a][i] * centered[b][i];
      const double r = std::clamp(dot / (norms[a] * norms[b]), -1.0, 1.0);
      m.r[a][b] = r;
      m.r[b][a] = r;
    }
  }
  return m;
}

std::string correlation_csv(const CorrelationMatrix& m) {
  std::string out = "name";
  for (const auto& n : m.names) out += "," + csv_field(n);
  out += "\n";
  for (std::size_t a = 0; a < m.names.size(); ++a) {
    out += csv_field(m.names[a]);
    for (double v : m.r[a]) out += "," + fixed(v, 4);
    out += "\n";
  }
  return out;
}

}  // namespace spfg::judge
