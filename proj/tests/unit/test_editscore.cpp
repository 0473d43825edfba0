#include <doctest.h>

#include <random>
#include <stdexcept>

#include "spfg/editscore.hpp"

using namespace spfg::editscore;

namespace {

TokenSeq toks(std::initializer_list<const char*> words) {
  TokenSeq out;
  for (const char* w : words) out.emplace_back(w);
  return out;
}

TokenSeq random_seq(std::mt19937_64& rng, std::size_t max_len) {
  static const char* alphabet[] = {"a", "the", "cat", "cats", "in", "on", "go", "goes"};
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, 7);
  TokenSeq out(len(rng));
  for (auto& t : out) t = alphabet[pick(rng)];
  return out;
}

}  // namespace

TEST_SUITE("editscore") {

TEST_CASE("normalize_tokens") {
  CHECK(normalize_tokens("I like it.") == toks({"i", "like", "it"}));
  CHECK(normalize_tokens("don't stop") == toks({"don't", "stop"}));
  CHECK(normalize_tokens("").empty());
  CHECK(normalize_tokens("well-known 'quoted' -dash") == toks({"well-known", "quoted", "dash"}));
  CHECK(normalize_tokens("Hello,   WORLD!!") == toks({"hello", "world"}));
}

TEST_CASE("wer") {
  CHECK(wer(toks({"a", "b"}), toks({"a", "b"})) == 0.0);
  CHECK(wer(normalize_tokens("i like playing to volleyball"), normalize_tokens("i like playing volleyball")) ==
        doctest::Approx(0.25));
  CHECK(wer({}, toks({"a", "b", "c"})) == doctest::Approx(1.0));
  CHECK_THROWS_AS(wer(toks({"a"}), {}), std::invalid_argument);
  const auto c = wer_counts(toks({"a", "x", "c", "d"}), toks({"a", "b", "c"}));
  CHECK(c.substitutions == 1);
  CHECK(c.insertions == 1);
  CHECK(c.deletions == 0);
}

TEST_CASE("extract_edits on the worked examples") {
  auto e = extract_edits(normalize_tokens("we love swim"), normalize_tokens("we love swimming"));
  REQUIRE(e.size() == 1);
  CHECK(e[0].op == EditOp::Replace);
  CHECK(e[0].src_range == Range{2, 3});
  CHECK(e[0].tgt_range == Range{2, 3});

  e = extract_edits(normalize_tokens("i go out to eat at restaurant"),
                    normalize_tokens("i go out to eat at a restaurant"));
  REQUIRE(e.size() == 1);
  CHECK(e[0].op == EditOp::Missing);
  CHECK(e[0].tgt_text == toks({"a"}));
  CHECK(e[0].src_range == Range{6, 6});
  CHECK(e[0].type_code == "M:DET");

  e = extract_edits(normalize_tokens("i like playing to volleyball"), normalize_tokens("i like playing volleyball"));
  REQUIRE(e.size() == 1);
  CHECK(e[0].op == EditOp::Unnecessary);
  CHECK(e[0].src_text == toks({"to"}));

  CHECK(extract_edits(toks({"a", "b"}), toks({"a", "b"})).empty());
}

TEST_CASE("adjacent non-match steps merge into one span") {
  const auto e = extract_edits(toks({"x", "a", "b", "y"}), toks({"x", "c", "y"}));
  REQUIRE(e.size() == 1);
  CHECK(e[0].op == EditOp::Replace);
  CHECK(e[0].src_range == Range{1, 3});
  CHECK(e[0].tgt_range == Range{1, 2});
}

TEST_CASE("classify_edit rules") {
  auto code = [](const char* s, const char* t) {
    const auto e = extract_edits(normalize_tokens(s), normalize_tokens(t));
    REQUIRE(e.size() == 1);
    return e[0].type_code;
  };
  CHECK(code("i like to know different culture", "i like to know different cultures") == "R:NOUN:NUM");
  CHECK(code("the best form to improve", "the best way to improve") == "R:OTHER");
  CHECK(code("she teached me", "she taught me") == "R:VERB:TENSE");
  CHECK(code("he go home", "he goes home") == "R:VERB:SVA");
  CHECK(code("we talked in the meeting", "we talked at the meeting") == "R:PREP");
  CHECK(code("i saw him", "i saw her") == "R:PRON");
  CHECK(code("we love swim", "we love swimming") == "R:VERB:FORM");
}

TEST_CASE("f-beta and finalize") {
  CHECK(f_beta(0.610, 0.600) == doctest::Approx(0.608).epsilon(1e-3));
  const auto zero = finalize(0, 5, 5);
  CHECK(zero.precision == 0.0);
  CHECK(zero.recall == 0.0);
  CHECK(zero.f_half == 0.0);
  const auto s = finalize(3, 1, 2);
  CHECK(s.precision == doctest::Approx(0.75));
  CHECK(s.recall == doctest::Approx(0.6));
  CHECK(s.f_half == doctest::Approx(0.7143).epsilon(1e-4));
  CHECK(finalize(0, 0, 0).f_half == 0.0);
}

TEST_CASE("score_edits matches on span and replacement, not type") {
  const auto src = normalize_tokens("he go to school");
  const auto ref = extract_edits(src, normalize_tokens("he goes to school"));
  auto hyp = ref;
  hyp[0].type_code = "R:OTHER";
  const auto r = score_edits({hyp}, {ref});
  CHECK(r.overall.tp == 1);
  CHECK(r.overall.f_half == doctest::Approx(1.0));
  CHECK(r.per_type.at(ref[0].type_code).tp == 1);

  const auto wrong = extract_edits(src, normalize_tokens("he went to school"));
  const auto r2 = score_edits({wrong}, {ref});
  CHECK(r2.overall.tp == 0);
  CHECK(r2.overall.fp == 1);
  CHECK(r2.overall.fn == 1);
  CHECK_THROWS_AS(score_edits({hyp, hyp}, {ref}), std::invalid_argument);
}

TEST_CASE("report_csv layout") {
  const auto src = normalize_tokens("he go");
  const auto ref = extract_edits(src, normalize_tokens("he goes"));
  const auto csv = report_csv(score_edits({ref}, {ref}));
  CHECK(csv.rfind("type_code,tp,fp,fn,p,r,f05\n", 0) == 0);
  CHECK(csv.find("overall,1,0,0,1.0000,1.0000,1.0000\n") != std::string::npos);
}

TEST_CASE("property: replaying edits reconstructs the target") {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 2000; ++k) {
    const auto s = random_seq(rng, 9);
    const auto t = random_seq(rng, 9);
    const auto edits = extract_edits(s, t);
    CHECK(apply_edits(s, edits) == t);
    for (const auto& e : edits) {
      CHECK(e.src_range.empty() == (e.op == EditOp::Missing));
      CHECK(e.tgt_range.empty() == (e.op == EditOp::Unnecessary));
      CHECK(e.type_code[0] == op_letter(e.op));
      CHECK(classify_edit(e, s, t) == e.type_code);
    }
  }
}

TEST_CASE("property: identical edit sets score perfectly") {
  std::mt19937_64 rng(12);
  EditLists lists;
  bool any = false;
  for (int k = 0; k < 50; ++k) {
    const auto s = random_seq(rng, 7);
    lists.push_back(extract_edits(s, random_seq(rng, 7)));
    any = any || !lists.back().empty();
  }
  REQUIRE(any);
  const auto r = score_edits(lists, lists);
  CHECK(r.overall.precision == 1.0);
  CHECK(r.overall.recall == 1.0);
  CHECK(r.overall.f_half == doctest::Approx(1.0));
  const auto empty = score_edits({{}, {}}, {{}, {}});
  CHECK(empty.overall.f_half == 0.0);
}

}  // TEST_SUITE
