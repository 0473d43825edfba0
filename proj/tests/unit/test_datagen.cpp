#include <doctest.h>

#include <atomic>
#include <map>
#include <mutex>
#include <random>
#include <set>

#include "spfg/datagen.hpp"
#include "spfg/error.hpp"
#include "support.hpp"

using namespace spfg;
using namespace spfg::datagen;
using spfg::test::record;

namespace {

backend::RetryPolicy no_wait(int attempts) {
  backend::RetryPolicy p;
  p.attempts = attempts;
  p.sleep = [](std::chrono::milliseconds) {};
  return p;
}

// Replies from a fixed script per record id; counts calls.
class ScriptedBackend : public GeneratorBackend {
 public:
  explicit ScriptedBackend(std::map<std::string, std::string> replies) : replies_(std::move(replies)) {}
  std::string generate(const GenerationJob& job) override {
    std::lock_guard lock(mu_);
    ++calls_[job.record->id];
    prompts_[job.record->id] = job.prompt;
    return replies_.at(job.record->id);
  }
  int calls(const std::string& id) {
    std::lock_guard lock(mu_);
    return calls_[id];
  }
  std::string prompt(const std::string& id) {
    std::lock_guard lock(mu_);
    return prompts_[id];
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::string> replies_;
  std::map<std::string, int> calls_;
  std::map<std::string, std::string> prompts_;
};

class DownBackend : public GeneratorBackend {
 public:
  std::string generate(const GenerationJob&) override { throw BackendError("connection refused"); }
};

std::vector<corpus::UtteranceRecord> three_records() {
  return {record("r1", "he go home", "he goes home", corpus::CefrBand::A2, "Use \"goes\" with \"he\". Well done!"),
          record("r2", "i have cat", "i have a cat", corpus::CefrBand::B1, "Add the article \"a\". Keep it up!"),
          record("r3", "we was happy", "we were happy", corpus::CefrBand::B2, "Use \"were\" with \"we\". Good try!")};
}

}  // namespace

TEST_SUITE("datagen") {

TEST_CASE("default corruption weights sum to one") {
  double sum = 0.0;
  for (double w : kDefaultCorruptionWeights) sum += w;
  CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("sampler frequencies, degenerate weights and determinism") {
  std::mt19937_64 rng(42);
  std::array<int, 5> counts{};
  for (int i = 0; i < 100000; ++i) ++counts[static_cast<std::size_t>(sample_corruption_type(rng))];
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(std::abs(counts[k] / 100000.0 - kDefaultCorruptionWeights[k]) <= 0.005);
  }
  std::mt19937_64 r2(1);
  for (int i = 0; i < 100; ++i) CHECK(sample_corruption_type(r2, {1, 0, 0, 0, 0}) == CorruptionKind::WrongAttribution);
  std::mt19937_64 a(9);
  std::mt19937_64 b(9);
  for (int i = 0; i < 100; ++i) CHECK(sample_corruption_type(a) == sample_corruption_type(b));
}

TEST_CASE("kind names round-trip") {
  for (auto k : kAllKinds) CHECK(parse_kind(to_string(k)) == k);
  CHECK_FALSE(parse_kind("sarcasm"));
}

TEST_CASE("render_template") {
  const auto out = render_template(negative_template(CorruptionKind::WrongAttribution),
                                   {{"speaker_level", "B1"}, {"source_sentence", "he go home"}});
  CHECK(out.find("You are a strict English teacher.\n") != std::string::npos);
  CHECK(out.find("\"he go home\"") != std::string::npos);
  CHECK(out.find('{' + std::string("source_sentence}")) == std::string::npos);

  const PromptTemplate plain{"plain", "no slots {here either"};
  CHECK(render_template(plain, {}) == plain.body);

  try {
    render_template(negative_template(CorruptionKind::OverCorrection), {{"speaker_level", "B1"}});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()) == "unresolved placeholder: source_sentence");
  }
}

TEST_CASE("substituted values are not re-scanned") {
  const PromptTemplate t{"t", "[{a}] [{b}]"};
  CHECK(render_template(t, {{"a", "{b}"}, {"b", "x"}}) == "[{b}] [x]");
}

TEST_CASE("property: rendering is injective in the source") {
  std::set<std::string> seen;
  for (int i = 0; i < 50; ++i) {
    seen.insert(render_template(correction_feedback_template(),
                                {{"speaker_level", "B1"}, {"source", "sentence number " + std::to_string(i)}}));
  }
  CHECK(seen.size() == 50);
}

TEST_CASE("every template is well formed") {
  for (auto k : kAllKinds) CHECK(placeholders(negative_template(k)) == std::vector<std::string>{"speaker_level", "source_sentence"});
  CHECK(placeholders(correction_feedback_template()) == std::vector<std::string>{"speaker_level", "source"});
}

TEST_CASE("parse_generation") {
  auto r = parse_generation(R"({"correction":"c","feedback":"f"})");
  CHECK(r.correction == "c");
  CHECK(r.feedback == "f");
  r = parse_generation("Here you go:\n```json\n{\"correction\":\"c\",\"feedback\":\"f\"}\n```\n");
  CHECK(r.correction == "c");
  CHECK(r.feedback == "f");
  r = parse_generation(R"(note {"correction":"a {b}","feedback":"x \"y\""} trailing)");
  CHECK(r.correction == "a {b}");
  try {
    parse_generation(R"({"correction":"c"})");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()) == "missing feedback");
  }
  CHECK_THROWS_AS(parse_generation("no json here"), DataError);
  CHECK_THROWS_AS(parse_generation(R"({"correction":"","feedback":"f"})"), DataError);
}

TEST_CASE("local corruptor is deterministic and differs from the verified feedback") {
  const auto recs = three_records();
  LocalCorruptor c1(7);
  LocalCorruptor c2(7);
  GenerateOptions opt;
  opt.seed = 7;
  const auto a = generate_negatives(recs, c1, opt);
  const auto b = generate_negatives(recs, c2, opt);
  REQUIRE(a.negatives.size() == 3);
  CHECK(a.failures.empty());
  CHECK(serialize_negatives(a.negatives) == serialize_negatives(b.negatives));
  for (const auto& r : recs) {
    for (auto k : kAllKinds) CHECK(c1.corrupt(r, k).feedback != r.feedback);
  }
}

TEST_CASE("kinds are drawn in record order before dispatch") {
  const auto recs = three_records();
  GenerateOptions opt;
  opt.seed = 5;
  std::mt19937_64 rng(5);
  LocalCorruptor local(1);
  const auto batch = generate_negatives(recs, local, opt);
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(batch.drawn[i] == sample_corruption_type(rng));
}

TEST_CASE("persistent parse failure is recorded after retries") {
  const auto recs = three_records();
  ScriptedBackend be({{"r1", R"({"correction":"c1","feedback":"bad one"})"},
                      {"r2", "I would rather not answer in JSON."},
                      {"r3", R"({"correction":"c3","feedback":"bad three"})"}});
  GenerateOptions opt;
  opt.retry = no_wait(2);
  const auto batch = generate_negatives(recs, be, opt);
  CHECK(batch.negatives.size() == 2);
  REQUIRE(batch.failures.size() == 1);
  CHECK(batch.failures[0].id == "r2");
  CHECK(batch.failures[0].attempts == 2);
  CHECK(be.calls("r2") == 2);
  CHECK(be.calls("r1") == 1);
  CHECK(be.prompt("r1").find("he go home") != std::string::npos);
}

TEST_CASE("total outage is a backend error") {
  DownBackend down;
  GenerateOptions opt;
  opt.retry = no_wait(3);
  CHECK_THROWS_AS(generate_negatives(three_records(), down, opt), BackendError);
}

TEST_CASE("build_preference_pairs") {
  const auto recs = three_records();
  LocalCorruptor local(3);
  GenerateOptions opt;
  opt.seed = 3;
  auto negs = generate_negatives(recs, local, opt).negatives;
  auto result = build_preference_pairs(recs, negs);
  CHECK(result.pairs.size() == 3);
  CHECK(result.issues.empty());
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(result.pairs[i].source == recs[i].source);
    CHECK(result.pairs[i].cefr == recs[i].cefr);
    CHECK(result.pairs[i].chosen.feedback == recs[i].feedback);
    CHECK(result.pairs[i].chosen.feedback != result.pairs[i].rejected.feedback);
  }

  negs[1].response.feedback = recs[1].feedback;
  negs.pop_back();
  result = build_preference_pairs(recs, negs);
  CHECK(result.pairs.size() == 1);
  REQUIRE(result.issues.size() == 2);
  CHECK(result.issues[0].id == "r2");
  CHECK(result.issues[1].id == "r3");
}

TEST_CASE("property: pair kinds equal the drawn kinds and pairs round-trip") {
  const auto recs = synthetic_corpus(200, 8);
  LocalCorruptor local(8);
  GenerateOptions opt;
  opt.seed = 8;
  const auto batch = generate_negatives(recs, local, opt);
  const auto pairs = build_preference_pairs(recs, batch.negatives).pairs;
  REQUIRE(pairs.size() == recs.size());
  std::map<CorruptionKind, int> drawn;
  std::map<CorruptionKind, int> paired;
  for (auto k : batch.drawn) ++drawn[k];
  for (const auto& p : pairs) ++paired[p.corruption];
  CHECK(drawn == paired);

  const auto text = serialize_pairs(pairs);
  CHECK(serialize_pairs(parse_pairs(text)) == text);
  const auto ntext = serialize_negatives(batch.negatives);
  CHECK(serialize_negatives(parse_negatives(ntext)) == ntext);
}

TEST_CASE("synthetic data is seeded and valid") {
  const auto a = synthetic_corpus(30, 4);
  CHECK(corpus::serialize_corpus(a) == corpus::serialize_corpus(synthetic_corpus(30, 4)));
  CHECK(corpus::serialize_corpus(a) != corpus::serialize_corpus(synthetic_corpus(30, 5)));
  for (const auto& r : a) {
    CHECK(corpus::validate_record(r).empty());
    CHECK(r.source != r.target);
  }
  CHECK(synthetic_plain_text(10, 1) == synthetic_plain_text(10, 1));
}

}  // TEST_SUITE
