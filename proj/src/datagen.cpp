#include "spfg/datagen.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <unordered_map>

#include "spfg/error.hpp"
#include "spfg/parallel.hpp"
#include "spfg/templates.hpp"

namespace spfg::datagen {

namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Length of `{identifier}` starting at pos, or 0.
std::size_t slot_length(std::string_view body, std::size_t pos) {
  if (body[pos] != '{' || pos + 2 >= body.size() || !is_ident_start(body[pos + 1])) return 0;
  std::size_t end = pos + 2;
  while (end < body.size() && is_ident_char(body[end])) ++end;
  if (end < body.size() && body[end] == '}') return end - pos + 1;
  return 0;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    current.push_back(text[i]);
    const char c = text[i];
    const bool terminal = c == '.' || c == '!' || c == '?';
    if (terminal && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))) {
      auto first = current.find_first_not_of(" \t\n");
      if (first != std::string::npos) out.push_back(current.substr(first));
      current.clear();
    }
  }
  auto first = current.find_first_not_of(" \t\n");
  if (first != std::string::npos) out.push_back(current.substr(first));
  return out;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

// Replaces every case-insensitive occurrence of `from` that sits on word boundaries.
bool replace_term(std::string& text, std::string_view from, std::string_view to) {
  const std::string low = lower(text);
  std::string out;
  bool changed = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto hit = low.find(from, pos);
    if (hit == std::string::npos) break;
    const bool left_ok = hit == 0 || !std::isalpha(static_cast<unsigned char>(low[hit - 1]));
    const auto after = hit + from.size();
    const bool right_ok = after >= low.size() || !std::isalpha(static_cast<unsigned char>(low[after]));
    out.append(text, pos, hit - pos);
    if (left_ok && right_ok) {
      out.append(to);
      changed = true;
    } else {
      out.append(text, hit, from.size());
    }
    pos = after;
  }
  out.append(text, std::min(pos, text.size()), std::string::npos);
  text = std::move(out);
  return changed;
}

const std::vector<std::pair<std::string_view, std::string_view>>& attribution_confusions() {
  static const std::vector<std::pair<std::string_view, std::string_view>> k = {
      {"subject-verb agreement", "word order"},
      {"preposition", "verb tense"},
      {"prepositions", "verb tenses"},
      {"tense", "preposition"},
      {"article", "word order"},
      {"articles", "word order rules"},
      {"plural", "past tense"},
      {"singular", "present tense"},
      {"verb form", "article use"},
      {"determiner", "pronoun"},
      {"pronoun", "determiner"},
      {"gerund", "plural noun"},
      {"infinitive", "possessive"},
      {"noun", "adverb"},
      {"verb", "adjective"},
  };
  return k;
}

const std::vector<std::string_view>& mismatched_explanations() {
  static const std::vector<std::string_view> k = {
      "The change is needed because adjectives in English come before the noun they describe.",
      "This follows the rule that questions in English start with an auxiliary verb.",
      "The key point here is that uncountable nouns do not take a plural ending.",
      "The reason is that the past perfect is used for an action completed before another past action.",
      "This is because adverbs of frequency usually go before the main verb.",
  };
  return k;
}

const std::vector<std::string_view>& misleading_suggestions() {
  static const std::vector<std::string_view> k = {
      "A simple rule to remember: always put \"the\" before every noun.",
      "To be safe, add -s to every verb that follows a noun.",
      "Whenever you are unsure, use the -ing form of the verb, because it is always correct.",
      "Try to leave out prepositions after verbs, since English speakers usually drop them.",
      "When in doubt, use the past tense, because it sounds more polite in any situation.",
  };
  return k;
}

constexpr std::string_view kHarshOpening =
    "This sentence is full of basic mistakes that you should not be making at this level.";

const std::vector<std::string_view>& encouragement_markers() {
  static const std::vector<std::string_view> k = {
      "great", "good job", "well done", "keep ", "nice", "excellent", "you're doing",
      "you are doing", "don't worry", "good effort", "impressive", "right track", "fantastic",
      "good work", "awesome", "proud"};
  return k;
}

const std::vector<std::pair<std::string_view, std::string_view>>& synonyms() {
  static const std::vector<std::pair<std::string_view, std::string_view>> k = {
      {"big", "large"},     {"good", "fine"},        {"like", "enjoy"},
      {"very", "really"},   {"think", "believe"},    {"want", "wish"},
      {"help", "assist"},   {"start", "begin"},      {"buy", "purchase"},
      {"get", "obtain"},    {"happy", "glad"},       {"often", "frequently"},
      {"important", "essential"}, {"small", "little"}, {"maybe", "perhaps"},
      {"because", "since"}, {"nice", "pleasant"},    {"job", "occupation"},
      {"people", "persons"}, {"friends", "companions"}, {"house", "home"},
  };
  return k;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<std::string> placeholders(const PromptTemplate& tpl) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < tpl.body.size(); ++i) {
    if (auto len = slot_length(tpl.body, i)) {
      std::string name = tpl.body.substr(i + 1, len - 2);
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
      i += len - 1;
    }
  }
  return out;
}

std::string render_template(const PromptTemplate& tpl, const SlotMap& slots) {
  std::string out;
  out.reserve(tpl.body.size());
  const std::string_view body = tpl.body;
  for (std::size_t i = 0; i < body.size();) {
    if (auto len = slot_length(body, i)) {
      const auto name = body.substr(i + 1, len - 2);
      auto it = slots.find(name);
      if (it == slots.end()) throw DataError("unresolved placeholder: " + std::string(name));
      out += it->second;
      i += len;
    } else {
      out.push_back(body[i]);
      ++i;
    }
  }
  return out;
}

PromptTemplate load_template(std::string_view name) {
  return {std::string(name), templates::get(name)};
}

PromptTemplate correction_feedback_template() { return load_template("correction_feedback"); }

std::string_view to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::WrongAttribution: return "wrong_attribution";
    case CorruptionKind::ExplanationMismatch: return "explanation_mismatch";
    case CorruptionKind::DiscouragingTone: return "discouraging_tone";
    case CorruptionKind::MisleadingSuggestion: return "misleading_suggestion";
    case CorruptionKind::OverCorrection: return "over_correction";
  }
  return "wrong_attribution";
}

std::optional<CorruptionKind> parse_kind(std::string_view text) {
  for (auto k : kAllKinds) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

PromptTemplate negative_template(CorruptionKind kind) {
  return load_template("negative_" + std::string(to_string(kind)));
}

CorruptionKind sample_corruption_type(std::mt19937_64& rng, const std::array<double, 5>& weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("corruption weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("corruption weights sum to zero");
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  return kAllKinds[dist(rng)];
}

// ---------------------------------------------------------------------------

GenerationResponse parse_generation(std::string_view raw) {
  for (std::size_t start = raw.find('{'); start != std::string_view::npos;
       start = raw.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    std::size_t end = std::string_view::npos;
    for (std::size_t i = start; i < raw.size(); ++i) {
      const char c = raw[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}' && --depth == 0) {
        end = i;
        break;
      }
    }
    if (end == std::string_view::npos) break;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(raw.substr(start, end - start + 1));
    } catch (const nlohmann::json::exception&) {
      continue;
    }
    if (!j.is_object()) continue;
    GenerationResponse r;
    for (const char* key : {"correction", "feedback"}) {
      auto it = j.find(key);
      if (it == j.end()) throw DataError(std::string("missing ") + key);
      if (!it->is_string()) throw DataError(std::string(key) + " is not a string");
      auto value = it->get<std::string>();
      if (value.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw DataError(std::string("empty ") + key);
      }
      (std::string_view(key) == "correction" ? r.correction : r.feedback) = std::move(value);
    }
    return r;
  }
  throw DataError("no JSON object found in generation output");
}

std::string to_json_text(const GenerationResponse& response) {
  nlohmann::ordered_json j;
  j["correction"] = response.correction;
  j["feedback"] = response.feedback;
  return j.dump();
}

GenerationResponse LocalCorruptor::corrupt(const corpus::UtteranceRecord& record,
                                           CorruptionKind kind) const {
  std::mt19937_64 rng(seed_ ^ fnv1a(record.id) ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(kind) + 1)));
  auto pick = [&rng](const auto& list) {
    std::uniform_int_distribution<std::size_t> d(0, list.size() - 1);
    return list[d(rng)];
  };
  GenerationResponse out{record.target, record.feedback};
  auto sentences = split_sentences(record.feedback);

  switch (kind) {
    case CorruptionKind::WrongAttribution: {
      bool swapped = false;
      for (const auto& [from, to] : attribution_confusions()) {
        if (replace_term(out.feedback, from, to)) {
          swapped = true;
          break;
        }
      }
      if (!swapped) out.feedback = "The main problem in this sentence is word order. " + out.feedback;
      break;
    }
    case CorruptionKind::ExplanationMismatch: {
      std::vector<std::string> kept;
      if (!sentences.empty()) kept.push_back(sentences.front());
      kept.emplace_back(pick(mismatched_explanations()));
      if (sentences.size() > 1) kept.push_back(sentences.back());
      out.feedback = join(kept);
      break;
    }
    case CorruptionKind::DiscouragingTone: {
      std::vector<std::string> kept = {std::string(kHarshOpening)};
      for (const auto& s : sentences) {
        const auto low = lower(s);
        const bool encouraging = std::any_of(
            encouragement_markers().begin(), encouragement_markers().end(),
            [&](std::string_view m) { return low.find(m) != std::string::npos; });
        if (!encouraging) kept.push_back(s);
      }
      out.feedback = join(kept);
      break;
    }
    case CorruptionKind::MisleadingSuggestion:
      out.feedback = join({record.feedback, std::string(pick(misleading_suggestions()))});
      break;
    case CorruptionKind::OverCorrection: {
      std::string changed = record.target;
      std::string from_word;
      std::string to_word;
      for (const auto& [from, to] : synonyms()) {
        if (replace_term(changed, from, to)) {
          from_word = from;
          to_word = to;
          break;
        }
      }
      if (from_word.empty()) {
        changed = record.target + " indeed";
        out.feedback = join({"You need to add \"indeed\" at the end; the sentence is incomplete without it.",
                             record.feedback});
      } else {
        out.feedback = join({"You should say \"" + to_word + "\" instead of \"" + from_word +
                                 "\"; this change is necessary for the sentence to be correct.",
                             record.feedback});
      }
      out.correction = changed;
      break;
    }
  }
  if (out.feedback == record.feedback) out.feedback = join({std::string(kHarshOpening), out.feedback});
  return out;
}

std::string LocalCorruptor::generate(const GenerationJob& job) {
  if (!job.record) throw std::invalid_argument("LocalCorruptor needs the source record");
  return to_json_text(corrupt(*job.record, job.kind));
}

std::string ChatGenerator::generate(const GenerationJob& job) {
  return chat_->complete({model_, job.prompt, temperature_});
}

NegativeBatch generate_negatives(const std::vector<corpus::UtteranceRecord>& records,
                                 GeneratorBackend& backend, const GenerateOptions& options) {
  NegativeBatch batch;
  std::mt19937_64 rng(options.seed);
  batch.drawn.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    batch.drawn.push_back(sample_corruption_type(rng, options.weights));
  }

  struct Outcome {
    std::optional<GenerationResponse> response;
    std::string error;
    int attempts = 0;
    bool transport = false;
  };
  std::vector<Outcome> outcomes(records.size());
  const int attempts = std::max(1, options.retry.attempts);

  parallel_for(records.size(), options.max_in_flight, [&](std::size_t i) {
    GenerationJob job{&records[i], batch.drawn[i], ""};
    job.prompt = render_template(negative_template(job.kind),
                                 {{"speaker_level", std::string(corpus::to_string(records[i].cefr))},
                                  {"source_sentence", records[i].source}});
    Outcome& out = outcomes[i];
    for (int attempt = 1; attempt <= attempts; ++attempt) {
      options.retry.wait_before_attempt(attempt);
      out.attempts = attempt;
      try {
        out.response = parse_generation(backend.generate(job));
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

  bool all_transport = !records.empty();
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& o = outcomes[i];
    if (o.response) {
      all_transport = false;
      batch.negatives.push_back({records[i].id, batch.drawn[i], std::move(*o.response)});
    } else {
      all_transport = all_transport && o.transport;
      batch.failures.push_back({records[i].id, batch.drawn[i], o.attempts, std::move(o.error)});
    }
  }
  if (all_transport) {
    throw BackendError("generator backend unreachable after " + std::to_string(attempts) +
                       " attempts: " + batch.failures.front().error);
  }
  return batch;
}

// ---------------------------------------------------------------------------

PairBuildResult build_preference_pairs(const std::vector<corpus::UtteranceRecord>& records,
                                       const std::vector<NegativeSample>& negatives) {
  std::unordered_map<std::string, const NegativeSample*> by_id;
  for (const auto& n : negatives) by_id.emplace(n.id, &n);
  PairBuildResult result;
  for (const auto& r : records) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) {
      result.issues.push_back({r.id, "no negative sample"});
      continue;
    }
    if (r.feedback.empty()) {
      result.issues.push_back({r.id, "record has empty feedback"});
      continue;
    }
    const NegativeSample& neg = *it->second;
    if (neg.response.feedback == r.feedback) {
      result.issues.push_back({r.id, "rejected feedback equals chosen feedback"});
      continue;
    }
    result.pairs.push_back({r.id, r.source, r.cefr, {r.target, r.feedback}, neg.response, neg.kind});
  }
  return result;
}

nlohmann::ordered_json pair_to_json(const PreferencePair& p) {
  nlohmann::ordered_json j;
  j["id"] = p.id;
  j["source"] = p.source;
  j["cefr"] = std::string(corpus::to_string(p.cefr));
  j["chosen_correction"] = p.chosen.correction;
  j["chosen_feedback"] = p.chosen.feedback;
  j["rejected_correction"] = p.rejected.correction;
  j["rejected_feedback"] = p.rejected.feedback;
  j["corruption_type"] = std::string(to_string(p.corruption));
  return j;
}

namespace {
CorruptionKind kind_field(const nlohmann::json& j) {
  const auto text = j.at("corruption_type").get<std::string>();
  auto k = parse_kind(text);
  if (!k) throw DataError("unknown corruption_type '" + text + "'");
  return *k;
}

template <typename T, typename Parse>
std::vector<T> parse_jsonl(std::string_view jsonl, Parse parse) {
  std::vector<T> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    auto nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    auto line = jsonl.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(parse(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}
}  // namespace

PreferencePair pair_from_json(const nlohmann::json& j) {
  PreferencePair p;
  p.id = j.at("id").get<std::string>();
  p.source = j.at("source").get<std::string>();
  p.cefr = corpus::band_from_string(j.at("cefr").get<std::string>());
  p.chosen = {j.at("chosen_correction").get<std::string>(), j.at("chosen_feedback").get<std::string>()};
  p.rejected = {j.at("rejected_correction").get<std::string>(),
                j.at("rejected_feedback").get<std::string>()};
  p.corruption = kind_field(j);
  return p;
}

nlohmann::ordered_json negative_to_json(const NegativeSample& n) {
  nlohmann::ordered_json j;
  j["id"] = n.id;
  j["corruption_type"] = std::string(to_string(n.kind));
  j["correction"] = n.response.correction;
  j["feedback"] = n.response.feedback;
  return j;
}

NegativeSample negative_from_json(const nlohmann::json& j) {
  return {j.at("id").get<std::string>(), kind_field(j),
          {j.at("correction").get<std::string>(), j.at("feedback").get<std::string>()}};
}

nlohmann::ordered_json failure_to_json(const GenerationFailure& f) {
  nlohmann::ordered_json j;
  j["id"] = f.id;
  j["corruption_type"] = std::string(to_string(f.kind));
  j["attempts"] = f.attempts;
  j["error"] = f.error;
  return j;
}

std::string serialize_pairs(const std::vector<PreferencePair>& pairs) {
  std::string out;
  for (const auto& p : pairs) out += pair_to_json(p).dump() + "\n";
  return out;
}

std::vector<PreferencePair> parse_pairs(std::string_view jsonl) {
  return parse_jsonl<PreferencePair>(jsonl, pair_from_json);
}

std::string serialize_negatives(const std::vector<NegativeSample>& negatives) {
  std::string out;
  for (const auto& n : negatives) out += negative_to_json(n).dump() + "\n";
  return out;
}

std::vector<NegativeSample> parse_negatives(std::string_view jsonl) {
  return parse_jsonl<NegativeSample>(jsonl, negative_from_json);
}

}  // namespace spfg::datagen

// ---------------------------------------------------------------------------
// Synthetic data

namespace spfg::datagen {

namespace {

struct Lexicon {
  std::vector<std::string_view> subjects = {"he", "she", "my friend", "the teacher", "tom", "my sister"};
  std::vector<std::array<std::string_view, 3>> habits = {{"go", "goes", "to school"},     {"play", "plays", "football"},
                                                         {"work", "works", "at home"},    {"like", "likes", "music"},
                                                         {"read", "reads", "books"},      {"watch", "watches", "films"}};
  std::vector<std::string_view> nouns = {"cat", "dog", "bird", "car", "house", "book"};
  std::vector<std::string_view> places = {"station", "airport", "office", "school", "hotel"};
  std::vector<std::string_view> wrong_preps = {"to", "in", "on"};
  std::vector<std::string_view> numbers = {"two", "three", "four", "five"};
  std::vector<std::array<std::string_view, 2>> past = {
      {"go", "went"}, {"walk", "walked"}, {"drive", "drove"}, {"run", "ran"}, {"come", "came"}};
  std::vector<std::string_view> openers = {"Good try!", "Nice work!", "Well done!"};
  std::vector<std::string_view> closers = {"Keep practicing!", "Keep it up!"};
};

const Lexicon& lexicon() {
  static const Lexicon k;
  return k;
}

template <typename List>
const auto& pick_from(const List& list, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, list.size() - 1);
  return list[d(rng)];
}

std::string q(std::string_view s) { return "\"" + std::string(s) + "\""; }

}  // namespace

std::vector<corpus::UtteranceRecord> synthetic_corpus(std::size_t n, std::uint64_t seed) {
  const Lexicon& L = lexicon();
  std::mt19937_64 rng(seed);
  std::vector<corpus::UtteranceRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    corpus::UtteranceRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%05zu", i);
    r.id = id;
    r.cefr = pick_from(corpus::kAllBands, rng);
    r.split = corpus::Split::Train;
    std::string rule;
    switch (std::uniform_int_distribution<int>(0, 4)(rng)) {
      case 0: {
        const auto subj = std::string(pick_from(L.subjects, rng));
        const auto& h = pick_from(L.habits, rng);
        r.source = subj + " " + std::string(h[0]) + " " + std::string(h[2]) + " every day";
        r.target = subj + " " + std::string(h[1]) + " " + std::string(h[2]) + " every day";
        rule = "With " + q(subj) + " say " + q(h[1]) + " for subject-verb agreement.";
        break;
      }
      case 1: {
        const auto noun = std::string(pick_from(L.nouns, rng));
        r.source = "i saw " + noun + " in the park";
        r.target = "i saw a " + noun + " in the park";
        rule = "Add the article \"a\" before " + q(noun) + ".";
        break;
      }
      case 2: {
        const auto place = std::string(pick_from(L.places, rng));
        const auto bad = std::string(pick_from(L.wrong_preps, rng));
        r.source = "we arrived " + bad + " the " + place;
        r.target = "we arrived at the " + place;
        rule = "Use the preposition \"at\" here, not " + q(bad) + ".";
        break;
      }
      case 3: {
        const auto num = std::string(pick_from(L.numbers, rng));
        const auto noun = std::string(pick_from(L.nouns, rng));
        r.source = "i have " + num + " " + noun;
        r.target = "i have " + num + " " + noun + "s";
        rule = "After " + q(num) + " use the plural noun " + q(noun + "s") + ".";
        break;
      }
      default: {
        const auto& v = pick_from(L.past, rng);
        const auto place = std::string(pick_from(L.places, rng));
        r.source = "yesterday i " + std::string(v[0]) + " to the " + place;
        r.target = "yesterday i " + std::string(v[1]) + " to the " + place;
        rule = "With \"yesterday\" use the past tense " + q(v[1]) + ".";
        break;
      }
    }
    r.feedback = std::string(pick_from(L.openers, rng)) + " " + rule + " " + std::string(pick_from(L.closers, rng));
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> synthetic_plain_text(std::size_t n, std::uint64_t seed) {
  const Lexicon& L = lexicon();
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  out.reserve(n);
  auto cap = [](std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    const int sentences = std::uniform_int_distribution<int>(2, 4)(rng);
    for (int s = 0; s < sentences; ++s) {
      std::string sent;
      switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
        case 0: {
          const auto& h = pick_from(L.habits, rng);
          sent = std::string(pick_from(L.subjects, rng)) + " " + std::string(h[1]) + " " + std::string(h[2]) + ".";
          break;
        }
        case 1:
          sent = "the " + std::string(pick_from(L.nouns, rng)) + " is near the " + std::string(pick_from(L.places, rng)) + ".";
          break;
        case 2:
          sent = "they have " + std::string(pick_from(L.numbers, rng)) + " " + std::string(pick_from(L.nouns, rng)) + "s.";
          break;
        default:
          sent = "last week we " + std::string(pick_from(L.past, rng)[1]) + " to the " +
                 std::string(pick_from(L.places, rng)) + ".";
          break;
      }
      if (!text.empty()) text += ' ';
      text += cap(sent);
    }
    out.push_back(std::move(text));
  }
  return out;
}

}  // namespace spfg::datagen
