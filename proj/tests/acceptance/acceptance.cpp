// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.
//
//   spfg_acceptance [--out DIR] [--only N ...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spfg/align.hpp"
#include "spfg/analysis.hpp"
#include "spfg/cli.hpp"
#include "spfg/corpus.hpp"
#include "spfg/datagen.hpp"
#include "spfg/digest.hpp"
#include "spfg/editscore.hpp"
#include "spfg/judge.hpp"
#include "spfg/model.hpp"

namespace fs = std::filesystem;
using namespace spfg;

namespace {

// Pinned tolerances.
constexpr double kFbetaTol = 0.15;
constexpr double kJudgeAvgTol = 0.01;
constexpr double kCorpusAvgTol = 0.01;
constexpr double kDpoTol = 1e-9;
constexpr double kFdStep = 1e-5;
constexpr double kFdRelTol = 1e-4;
// Gradient magnitudes below this are compared absolutely (relative error is
// meaningless at zero).
constexpr double kFdFloor = 1e-6;
constexpr std::size_t kFdCoords = 200;
constexpr double kMergeTol = 1e-6;
constexpr double kHeldOutDeltaMin = 0.0;
constexpr double kSftNllRatioMax = 0.60;
constexpr double kSamplerTolPp = 0.5;
constexpr double kReadingEase = 119.19;
constexpr double kReadingEaseTol = 0.01;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Rows of the results table: name, P, R, F0.5, four judge dimensions, Avg.

struct ResultRow {
  const char* name;
  double p, r, f;
  double correctness, level, suggestion, positiveness, avg;
};

const ResultRow kResults[] = {
    {"DeepSeek-Chat", 43.8, 58.6, 46.1, 4.97, 4.99, 4.86, 4.99, 4.95},
    {"Gemini-2.5-Flash", 40.0, 54.7, 42.3, 5.00, 4.98, 4.85, 5.00, 4.96},
    {"Qwen-Plus", 25.7, 44.9, 28.1, 4.97, 4.94, 4.90, 4.79, 4.90},
    {"Qwen-2.5", 50.9, 55.3, 51.7, 4.32, 4.69, 4.29, 4.87, 4.55},
    {"Qwen-2.5 (SFT)", 61.0, 60.0, 60.8, 4.65, 4.92, 4.54, 5.00, 4.78},
    {"Qwen-2.5 (DPO+SFT)", 63.9, 59.6, 63.0, 4.60, 4.93, 4.47, 5.00, 4.75},
    {"Qwen-2.5 (KTO+SFT)", 57.9, 59.5, 58.2, 4.59, 4.86, 4.54, 5.00, 4.75},
    {"Llama-3.1", 30.8, 46.3, 33.1, 4.18, 4.31, 4.02, 4.21, 4.18},
    {"Llama-3.1 (SFT)", 68.3, 63.9, 67.4, 4.59, 4.94, 4.38, 5.00, 4.73},
    {"Llama-3.1 (DPO+SFT)", 65.7, 61.3, 64.8, 4.47, 4.85, 4.35, 5.00, 4.67},
    {"Llama-3.1 (KTO+SFT)", 65.0, 61.8, 64.3, 4.50, 4.82, 4.41, 5.00, 4.68},
    {"GLM-4", 36.9, 50.0, 38.9, 4.53, 4.78, 4.24, 4.85, 4.60},
    {"GLM-4 (SFT)", 67.9, 64.4, 67.1, 4.65, 4.96, 4.54, 5.00, 4.79},
    {"GLM-4 (DPO+SFT)", 68.6, 58.7, 66.3, 4.57, 4.87, 4.39, 5.00, 4.71},
    {"GLM-4 (KTO+SFT)", 68.5, 61.0, 66.9, 4.57, 4.89, 4.36, 5.00, 4.70},
};

Outcome fbeta_consistency() {
  double worst = 0.0;
  std::string worst_row;
  for (const auto& row : kResults) {
    const double f = 100.0 * editscore::f_beta(row.p / 100.0, row.r / 100.0, 0.5);
    const double err = std::abs(f - row.f);
    if (err > worst) {
      worst = err;
      worst_row = row.name;
    }
  }
  return {worst <= kFbetaTol, "15 rows, worst |dF| " + fmt("%.4f", worst) + " (" + worst_row + ")"};
}

Outcome judge_average_consistency() {
  double worst = 0.0;
  std::string worst_row;
  for (const auto& row : kResults) {
    const double avg = judge::mean_of_four({row.correctness, row.level, row.suggestion, row.positiveness});
    const double err = std::abs(avg - row.avg);
    if (err > worst) {
      worst = err;
      worst_row = row.name;
    }
  }
  return {worst <= kJudgeAvgTol, "15 rows, worst |dAvg| " + fmt("%.4f", worst) + " (" + worst_row + ")"};
}

// Builds a corpus with the split's item and word counts and recomputes the
// average through split_stats.
Outcome corpus_average_consistency() {
  struct SplitRow {
    corpus::Split split;
    std::size_t items;
    std::size_t words;
    double avg;
  };
  const SplitRow rows[] = {{corpus::Split::Train, 4285, 151859, 35.44},
                           {corpus::Split::Dev, 500, 17739, 35.48},
                           {corpus::Split::Eval, 2793, 102108, 36.56}};
  std::vector<corpus::UtteranceRecord> records;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.items; ++i) {
      const std::size_t n = row.words / row.items + (i < row.words % row.items ? 1 : 0);
      corpus::UtteranceRecord r;
      r.id = std::string(corpus::to_string(row.split)) + "-" + std::to_string(i);
      for (std::size_t w = 0; w < n; ++w) r.source += w ? " word" : "word";
      r.target = r.source;
      r.feedback = "ok";
      r.split = row.split;
      records.push_back(std::move(r));
    }
  }
  bool ok = true;
  std::string detail;
  for (const auto& row : rows) {
    const auto s = corpus::split_stats(records, row.split);
    ok = ok && s.n_items == row.items && s.total_words == row.words && std::abs(s.avg_words - row.avg) <= kCorpusAvgTol;
    detail += std::string(detail.empty() ? "" : ", ") + fmt("%.4f", s.avg_words);
  }
  return {ok, "avg words " + detail};
}

// Plain recursive edit distance, memoized; shares nothing with the library DP.
std::size_t brute_edit_distance(const editscore::TokenSeq& a, const editscore::TokenSeq& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto it = memo.find({i, j});
    if (it != memo.end()) return it->second;
    std::size_t best = go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, go(i + 1, j) + 1);
    best = std::min(best, go(i, j + 1) + 1);
    memo[{i, j}] = best;
    return best;
  };
  return go(0, 0);
}

editscore::TokenSeq random_tokens(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len,
                                  const std::vector<std::string>& alphabet) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  editscore::TokenSeq out(len(rng));
  for (auto& t : out) t = alphabet[pick(rng)];
  return out;
}

Outcome wer_oracle() {
  std::mt19937_64 rng(2024);
  const std::vector<std::string> alphabet = {"a", "b", "c"};
  std::size_t mismatches = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto hyp = random_tokens(rng, 0, 8, alphabet);
    const auto ref = random_tokens(rng, 1, 8, alphabet);
    const auto expected = brute_edit_distance(hyp, ref);
    const double w = editscore::wer(hyp, ref);
    if (editscore::wer_counts(hyp, ref).errors() != expected ||
        w != static_cast<double>(expected) / static_cast<double>(ref.size())) {
      ++mismatches;
    }
  }
  std::size_t identity_bad = 0;
  for (int k = 0; k < 200; ++k) {
    const auto ref = random_tokens(rng, 1, 8, alphabet);
    if (editscore::wer(ref, ref) != 0.0) ++identity_bad;
  }
  return {mismatches == 0 && identity_bad == 0,
          "1000 pairs, " + std::to_string(mismatches) + " oracle mismatches, " + std::to_string(identity_bad) +
              " nonzero identities"};
}

Outcome edit_extraction() {
  std::mt19937_64 rng(77);
  const std::vector<std::string> alphabet = {"the", "a", "cat", "cats", "in", "go"};
  std::size_t bad_replay = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto src = random_tokens(rng, 0, 8, alphabet);
    const auto tgt = random_tokens(rng, 0, 8, alphabet);
    if (editscore::apply_edits(src, editscore::extract_edits(src, tgt)) != tgt) ++bad_replay;
  }

  struct Example {
    const char* src;
    const char* tgt;
    const char* code;
    bool full_code;  // type pinned, not only the op letter
  };
  const Example examples[] = {
      {"nature food is good for health", "natural food is good for health", "R:OTHER", false},
      {"I like to know different culture", "I like to know different cultures", "R:NOUN:NUM", true},
      {"so at summer we usually bike to the beach", "so in summer we usually bike to the beach", "R:PREP", true},
      {"in general the technology is good", "in general technology is good", "U:DET", true},
      {"we love swim", "we love swimming", "R:VERB:FORM", true},
      {"the best way is to enter into a page", "the best way is to open a page", "R:VERB", false},
      {"I go out to eat at restaurant", "I go out to eat at a restaurant", "M:DET", true},
      {"I see myself as a individual", "I see myself as an individual", "R:DET", true},
      {"the best form to improve my English", "the best way to improve my English", "R:NOUN", false},
      {"we also likes the same things", "we also like the same things", "R:VERB:SVA", true},
      {"someone who want to make a healthy lifestyle", "someone who wants to make a healthy lifestyle", "R:MORPH",
       false},
      {"I would like to know various cultures", "I would like to know about various cultures", "M:PREP", true},
      {"she teached me a lot", "she taught me a lot", "R:VERB:TENSE", false},
      {"I like playing to volleyball", "I like playing volleyball", "U:PREP", true},
      {"it can be positive true positive too", "it can be positive too", "U:OTHER", false},
  };
  std::size_t op_ok = 0;
  std::size_t full_ok = 0;
  std::size_t full_total = 0;
  std::string misses;
  for (const auto& ex : examples) {
    const auto src = editscore::normalize_tokens(ex.src);
    const auto tgt = editscore::normalize_tokens(ex.tgt);
    const auto edits = editscore::extract_edits(src, tgt);
    const std::string code = edits.size() == 1 ? edits.front().type_code : "<" + std::to_string(edits.size()) + " edits>";
    if (!code.empty() && code[0] == ex.code[0] && edits.size() == 1) ++op_ok;
    if (ex.full_code) {
      ++full_total;
      if (code == ex.code) {
        ++full_ok;
      } else {
        misses += std::string(" ") + ex.code + "->" + code;
      }
    }
  }
  const bool ok = bad_replay == 0 && op_ok == 15 && full_ok == full_total;
  return {ok, "replay failures " + std::to_string(bad_replay) + "/1000, op " + std::to_string(op_ok) +
                  "/15, type " + std::to_string(full_ok) + "/" + std::to_string(full_total) + misses};
}

// ---------------------------------------------------------------------------
// Model-based criteria

model::ModelParams tiny_model(std::uint64_t seed, double jitter) {
  model::ToyLmConfig c;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.context_len = 32;
  c.ff_mult = 2;
  c.seed = seed;
  auto p = model::init_params(c);
  std::mt19937_64 rng(seed + 100);
  std::normal_distribution<double> nd(0.0, jitter);
  for (auto& [name, w] : p.weights) {
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] += nd(rng);
  }
  return p;
}

model::LoraAdapter random_adapter(const model::ModelParams& p, std::uint64_t seed, double scale) {
  auto a = model::init_adapter(p, 4, 8.0, seed);
  std::mt19937_64 rng(seed + 7);
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& [name, f] : a.factors) {
    for (Eigen::Index i = 0; i < f.a.size(); ++i) f.a.data()[i] += nd(rng);
    for (Eigen::Index i = 0; i < f.b.size(); ++i) f.b.data()[i] = nd(rng);
  }
  return a;
}

align::MaskedSequence tiny_sequence(const std::string& user, const std::string& reply) {
  return align::assemble_sequence("sys", user, reply, 32);
}

Outcome dpo_anchors() {
  const auto base = tiny_model(1, 0.3);
  const auto adapter = random_adapter(base, 2, 0.3);
  const auto chosen = tiny_sequence("he go", "goes ok");
  const auto rejected = tiny_sequence("he go", "went bad");
  const align::ModelView ref{&base, nullptr};
  const align::ModelView pol{&base, &adapter};

  const auto same = align::dpo_loss(ref, ref, chosen, rejected, 0.1);
  const double e1 = std::abs(same.loss - std::log(2.0));
  const auto hand = align::dpo_from_logratios(2.0, -1.0, 0.1);
  const double expect = -std::log(1.0 / (1.0 + std::exp(-0.3)));
  const double e2 = std::abs(hand.loss - expect) + std::abs(hand.delta - 3.0);
  const auto fwd = align::dpo_loss(pol, ref, chosen, rejected, 0.1);
  const auto bwd = align::dpo_loss(pol, ref, rejected, chosen, 0.1);
  const bool antisym = bwd.delta == -fwd.delta && fwd.delta != 0.0;
  return {e1 <= kDpoTol && e2 <= kDpoTol && antisym,
          "|L-ln2| " + fmt("%.2e", e1) + ", |L-(-ln s(0.3))| " + fmt("%.2e", e2) + ", swap negates delta " +
              (antisym ? "exactly" : "NOT exactly")};
}

struct Coord {
  model::Matrix* tensor;
  const model::Matrix* grad;
  Eigen::Index index;
};

// Worst relative error over sampled coordinates of base and adapter tensors.
double worst_fd_error(model::ModelParams& p, model::LoraAdapter& a, const model::ScalarObjective& obj,
                      std::mt19937_64& rng, std::size_t* checked, const std::set<int>& used_tokens) {
  const auto g = model::parameter_gradients(p, &a, obj, true);
  auto eval = [&] {
    std::vector<double> lp;
    for (const auto& t : obj.terms) lp.push_back(model::sequence_logprob(p, &a, t.tokens, t.mask));
    std::vector<double> d(lp.size());
    return obj.loss(lp, d);
  };
  std::vector<std::vector<Coord>> per_tensor;
  for (auto& [name, w] : p.weights) {
    std::vector<Coord> cs;
    const auto& gw = g.grads.base.at(name);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      // embedding rows of tokens absent from the inputs have no influence
      if (name == "tok_emb" && !used_tokens.count(static_cast<int>(i % w.rows()))) continue;
      cs.push_back({&w, &gw, i});
    }
    per_tensor.push_back(std::move(cs));
  }
  for (auto& [name, f] : a.factors) {
    const auto& gf = g.grads.adapter.at(name);
    std::vector<Coord> ca;
    std::vector<Coord> cb;
    for (Eigen::Index i = 0; i < f.a.size(); ++i) ca.push_back({&f.a, &gf.a, i});
    for (Eigen::Index i = 0; i < f.b.size(); ++i) cb.push_back({&f.b, &gf.b, i});
    per_tensor.push_back(std::move(ca));
    per_tensor.push_back(std::move(cb));
  }
  // Equal share per tensor so small tensors are covered too.
  const std::size_t per = (kFdCoords + per_tensor.size() - 1) / per_tensor.size() + 1;
  double worst = 0.0;
  *checked = 0;
  for (auto& cs : per_tensor) {
    std::shuffle(cs.begin(), cs.end(), rng);
    for (std::size_t k = 0; k < std::min(per, cs.size()); ++k) {
      auto& c = cs[k];
      double& x = c.tensor->data()[c.index];
      const double orig = x;
      x = orig + kFdStep;
      const double up = eval();
      x = orig - kFdStep;
      const double down = eval();
      x = orig;
      const double fd = (up - down) / (2.0 * kFdStep);
      const double an = c.grad->data()[c.index];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), kFdFloor});
      worst = std::max(worst, rel);
      ++*checked;
    }
  }
  return worst;
}

Outcome gradient_checks() {
  auto base = tiny_model(11, 0.3);
  auto adapter = random_adapter(base, 12, 0.3);
  const std::vector<align::MaskedSequence> seqs = {
      tiny_sequence("she go", "goes"), tiny_sequence("a cat", "the cats"),
      tiny_sequence("in home", "at home!"), tiny_sequence("he walk", "walked")};
  std::set<int> used;
  for (const auto& s : seqs) used.insert(s.tokens.begin(), s.tokens.end());
  std::mt19937_64 rng(99);

  std::string detail = "params " + std::to_string(base.size() + adapter.size());
  bool ok = base.size() + adapter.size() <= 10000;
  auto run = [&](const char* name, const model::ScalarObjective& obj) {
    std::size_t n = 0;
    const double worst = worst_fd_error(base, adapter, obj, rng, &n, used);
    ok = ok && n >= kFdCoords && worst <= kFdRelTol;
    detail += std::string(", ") + name + " " + fmt("%.1e", worst) + " over " + std::to_string(n);
  };

  run("nll", align::sft_objective(seqs));

  const align::ModelView ref{&base, nullptr};
  std::vector<align::TokenizedPair> pairs = {{seqs[0], tiny_sequence("she go", "went")},
                                             {seqs[1], tiny_sequence("a cat", "a dog")}};
  std::vector<double> ref_lp;
  for (const auto& p : pairs) {
    ref_lp.push_back(align::sequence_logprob(ref, p.chosen));
    ref_lp.push_back(align::sequence_logprob(ref, p.rejected));
  }
  // The reference is a frozen copy, so base perturbations move only the policy.
  const auto frozen = base;
  const align::ModelView frozen_ref{&frozen, nullptr};
  run("dpo", align::dpo_objective(pairs, ref_lp, 0.5));

  std::vector<align::KtoExample> kto = {{seqs[0], true}, {seqs[1], false}, {seqs[2], true}, {seqs[3], false}};
  const align::KtoOptions opts{0.5, 1.0, 1.3};
  run("kto", align::kto_objective(kto, frozen_ref, opts));
  return {ok, detail};
}

Outcome lora_merge_equivalence() {
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    model::ToyLmConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.context_len = 64;
    c.seed = 500 + static_cast<std::uint64_t>(k);
    const auto base = model::init_params(c);
    const auto adapter = random_adapter(base, 600 + static_cast<std::uint64_t>(k), 0.2);
    const auto merged = model::lora_merge(base, adapter);
    std::mt19937_64 rng(700 + static_cast<std::uint64_t>(k));
    std::uniform_int_distribution<int> tok(0, model::kVocabSize - 1);
    std::uniform_int_distribution<int> len(1, 64);
    std::vector<model::TokenId> tokens(static_cast<std::size_t>(len(rng)));
    for (auto& t : tokens) t = tok(rng);
    const auto a = model::forward_logits(base, &adapter, tokens);
    const auto m = model::forward_logits(merged, nullptr, tokens);
    worst = std::max(worst, (a - m).cwiseAbs().maxCoeff());
  }
  // Zero B: outputs and merged weights bit-identical to the base.
  const auto base = tiny_model(3, 0.3);
  const auto zero = model::init_adapter(base, 4, 8.0, 4);
  const std::vector<model::TokenId> tokens = {256, 72, 105, 257, 33, 258, 9, 259};
  const bool same_logits = model::forward_logits(base, &zero, tokens) == model::forward_logits(base, nullptr, tokens);
  const auto merged = model::lora_merge(base, zero);
  bool same_weights = true;
  for (const auto& [name, w] : base.weights) same_weights = same_weights && merged.at(name) == w;
  return {worst <= kMergeTol && same_logits && same_weights,
          "max |dlogit| " + fmt("%.2e", worst) + ", zero-B identical: " + (same_logits && same_weights ? "yes" : "no")};
}

Outcome two_stage_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto records = datagen::synthetic_corpus(450, 42);
  datagen::LocalCorruptor corruptor(42);
  std::mt19937_64 rng(1);
  const auto format = align::toy_chat_format(512);
  std::vector<align::TokenizedPair> train_pairs;
  std::vector<align::TokenizedPair> held_out;
  std::vector<align::MaskedSequence> sft;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto kind = datagen::sample_corruption_type(rng);
    const datagen::PreferencePair pair{r.id, r.source, r.cefr, {r.target, r.feedback}, corruptor.corrupt(r, kind),
                                       kind};
    if (i < 200) {
      train_pairs.push_back(align::tokenize_pair(pair, format));
    } else if (i < 250) {
      held_out.push_back(align::tokenize_pair(pair, format));
    } else {
      sft.push_back(align::sequence_for_record(r, format));
    }
  }

  model::ToyLmConfig mc;
  mc.seed = 42;
  auto base = model::init_params(mc);
  align::TrainConfig cfg;
  cfg.seed = 42;
  cfg.grad_accum = 4;
  cfg.pretrain_epochs = 3;
  cfg.pretrain_lr = 3e-3;
  cfg.pref_epochs = 1;
  cfg.pref_lr = 5e-4;
  cfg.lr = 1e-2;
  cfg.epochs = 8;
  std::vector<std::vector<model::TokenId>> texts;
  for (const auto& t : datagen::synthetic_plain_text(400, 7)) texts.push_back(model::encode_bytes(t));
  align::pretrain_base(base, texts, cfg);

  const auto result = align::two_stage_train(base, train_pairs, sft, cfg, align::Objective::DpoSft);
  const auto pref_adapter = model::restore_adapter(result.preference->final);
  const align::ModelView reference{&base, nullptr};
  const align::ModelView policy{&base, &pref_adapter};
  double delta = 0.0;
  for (double d : align::pair_deltas(policy, reference, held_out)) delta += d;
  delta /= static_cast<double>(held_out.size());

  const double nll0 = align::mean_masked_nll({&result.merged_base, nullptr}, sft);
  const double nll1 = align::mean_masked_nll({&result.merged_base, &result.sft_adapter}, sft);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double ratio = nll1 / nll0;
  return {delta > kHeldOutDeltaMin && ratio <= kSftNllRatioMax && seconds < 300.0,
          "held-out mean delta " + fmt("%.3f", delta) + ", SFT NLL " + fmt("%.1f", nll0) + " -> " +
              fmt("%.1f", nll1) + " (ratio " + fmt("%.3f", ratio) + "), " + fmt("%.0f s", seconds)};
}

Outcome corruption_sampler() {
  std::mt19937_64 rng(42);
  std::array<std::size_t, 5> counts{};
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(datagen::sample_corruption_type(rng))];
  const double expected[5] = {25.1, 25.3, 14.2, 9.5, 25.9};
  double worst = 0.0;
  std::string shares;
  for (std::size_t k = 0; k < 5; ++k) {
    const double pct = 100.0 * static_cast<double>(counts[k]) / static_cast<double>(n);
    worst = std::max(worst, std::abs(pct - expected[k]));
    shares += (k ? " / " : "") + fmt("%.2f", pct);
  }
  return {worst <= kSamplerTolPp, shares + " %, worst " + fmt("%.3f", worst) + " pp"};
}

Outcome readability_anchors() {
  const auto cat = analysis::readability("The cat sat.");
  const double e = std::abs(cat.reading_ease - kReadingEase);

  const std::string text =
      "Your sentence is almost perfect. Remember to use the past tense for finished actions! "
      "Practising with examples every day will help you improve quickly.";
  const auto one = analysis::readability(text);
  const auto two = analysis::readability(text + " " + text);
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); };
  const bool invariant = close(one.reading_ease, two.reading_ease) && close(one.fk_grade, two.fk_grade) &&
                         close(one.smog, two.smog) && close(one.gunning_fog, two.gunning_fog) &&
                         two.difficult_words == 2 * one.difficult_words;

  // Hand-labelled: true when the word has three or more syllables.
  const std::pair<const char*, bool> words[] = {
      {"cat", false},       {"make", false},       {"table", false},     {"the", false},
      {"school", false},    {"grammar", false},    {"sentence", false},  {"practice", false},
      {"music", false},     {"simple", false},     {"beautiful", true},  {"unbelievable", true},
      {"important", true},  {"education", true},   {"family", true},     {"vocabulary", true},
      {"yesterday", true},  {"wonderful", true},   {"encourage", true},  {"example", true},
  };
  std::string joined;
  std::size_t labelled = 0;
  std::size_t word_mismatch = 0;
  for (const auto& [w, difficult] : words) {
    joined += std::string(joined.empty() ? "" : " ") + w;
    if (difficult) ++labelled;
    if ((analysis::count_syllables(w) >= 3) != difficult) ++word_mismatch;
  }
  const auto list = analysis::readability(joined + ".");
  const bool difficult_ok = list.difficult_words == labelled && word_mismatch == 0;
  return {e <= kReadingEaseTol && invariant && difficult_ok,
          "\"The cat sat.\" RE " + fmt("%.4f", cat.reading_ease) + ", duplication invariant " +
              (invariant ? "yes" : "no") + ", difficult " + std::to_string(list.difficult_words) + "/" +
              std::to_string(labelled)};
}

// ---------------------------------------------------------------------------
// CLI determinism

std::map<std::string, std::string> dir_digests(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = sha256_file(e.path());
  }
  return out;
}

int run_cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

Outcome cli_determinism(const fs::path& root) {
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path corpus_path = root / "corpus.jsonl";
  corpus::save_corpus(corpus_path, datagen::synthetic_corpus(60, 5));
  const fs::path config = root / "tiny.conf";
  write_file(config,
             "lr = 1e-2\nepochs = 2\ngrad_accum = 4\npref_lr = 5e-4\npref_epochs = 1\npretrain_epochs = 1\n"
             "max_len = 256\nmodel.d_model = 16\nmodel.n_layers = 1\nmodel.n_heads = 2\nmodel.context_len = 256\n");

  bool ok = true;
  std::string detail;
  const std::vector<std::pair<std::string, std::vector<std::string>>> commands = {
      {"gen-negatives", {"gen-negatives", "--corpus", corpus_path.string(), "--seed", "9"}},
      {"train dpo+sft", {"train", "--objective", "dpo+sft", "--config", config.string(), "--synthetic", "40", "--seed", "42"}},
      {"train kto+sft", {"train", "--objective", "kto+sft", "--config", config.string(), "--synthetic", "40", "--seed", "42"}},
  };
  int n = 0;
  for (const auto& [name, args] : commands) {
    std::map<std::string, std::string> digests[2];
    for (int run = 0; run < 2; ++run) {
      const fs::path out = root / ("cmd" + std::to_string(n) + "_run" + std::to_string(run));
      auto full = args;
      full.push_back("--out");
      full.push_back(out.string());
      if (run_cli(full) != 0) {
        ok = false;
        detail += name + " failed; ";
        continue;
      }
      digests[run] = dir_digests(out);
    }
    const bool same = !digests[0].empty() && digests[0] == digests[1];
    ok = ok && same;
    detail += name + (same ? " identical (" + std::to_string(digests[0].size()) + " files)" : " DIFFERS") + "; ";
    ++n;
  }
  if (!detail.empty()) detail.resize(detail.size() - 2);
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path out = fs::temp_directory_path() / "spfg_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) {
      out = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      only.insert(std::stoi(argv[++i]));
    } else {
      std::cerr << "usage: spfg_acceptance [--out DIR] [--only N ...]\n";
      return 2;
    }
  }

  const std::vector<std::tuple<int, std::string, double, std::function<Outcome()>>> criteria = {
      {1, "F-beta consistency", 1.0, fbeta_consistency},
      {2, "judge-average consistency", 1.0, judge_average_consistency},
      {3, "corpus-average consistency", 0.0, corpus_average_consistency},
      {4, "WER oracle equivalence", 5.0, wer_oracle},
      {5, "edit-extraction soundness", 0.0, edit_extraction},
      {6, "DPO analytic anchors", 0.0, dpo_anchors},
      {7, "gradient checks", 120.0, gradient_checks},
      {8, "LoRA merge equivalence", 0.0, lora_merge_equivalence},
      {9, "two-stage end-to-end", 300.0, two_stage_end_to_end},
      {10, "corruption sampler", 0.0, corruption_sampler},
      {11, "readability anchors", 0.0, readability_anchors},
      {12, "determinism", 0.0, [&] { return cli_determinism(out / "determinism"); }},
  };

  int failures = 0;
  for (const auto& [id, name, budget, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget > 0.0 && secs >= budget) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f s", budget) + " budget";
    }
    if (!o.pass) ++failures;
    std::printf("%s %2d %-28s %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
