#include "spfg/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "spfg/align.hpp"
#include "spfg/analysis.hpp"
#include "spfg/backend.hpp"
#include "spfg/corpus.hpp"
#include "spfg/datagen.hpp"
#include "spfg/digest.hpp"
#include "spfg/editscore.hpp"
#include "spfg/error.hpp"
#include "spfg/judge.hpp"
#include "spfg/model.hpp"

namespace spfg::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kGenKeyEnv = "SPFG_GEN_API_KEY";
constexpr const char* kJudgeKeyEnv = "SPFG_JUDGE_API_KEY";

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

// Collects input digests and output files, then writes manifest.json.
class RunContext {
 public:
  RunContext(std::string command, const std::vector<std::string>& args, fs::path out, std::uint64_t seed)
      : command_(std::move(command)), out_(std::move(out)), seed_(seed) {
    // The output location is left out so that reruns elsewhere give the same manifest.
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--out") {
        ++i;
      } else if (args[i].rfind("--out=", 0) != 0) {
        args_.push_back(args[i]);
      }
    }
  }

  void input(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("input file not found: " + path.string());
    inputs_[path.string()] = sha256_file(path);
  }

  std::string read_input(const fs::path& path) {
    input(path);
    return read_file(path);
  }

  void output(const std::string& name, std::string_view data) {
    fs::create_directories(out_);
    write_file(out_ / name, data);
    outputs_[name] = sha256_hex(data);
  }

  void set_options(ordered_json options, std::optional<std::string> config_hash = std::nullopt) {
    config_hash_ = config_hash ? *config_hash : sha256_hex(options.dump());
    options_ = std::move(options);
  }

  const fs::path& out() const { return out_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  void finish() {
    ordered_json m;
    m["command"] = command_;
    m["args"] = args_;
    m["seed"] = seed_;
    m["config_hash"] = config_hash_;
    m["options"] = options_;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    fs::create_directories(out_);
    write_file(out_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  fs::path out_;
  std::uint64_t seed_;
  std::string config_hash_;
  ordered_json options_ = ordered_json::object();
  ordered_json inputs_ = ordered_json::object();
  ordered_json outputs_ = ordered_json::object();
};

template <typename Fn>
void for_each_json_line(std::string_view text, const std::string& what, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    ++line_no;
    pos = nl + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (nl == text.size()) break;
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw DataError(what + " line " + std::to_string(line_no) + ": malformed JSON");
    }
    try {
      fn(j);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(what + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(what + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (nl == text.size()) break;
  }
}

// id -> corrected text; "correction" is preferred, "target" accepted.
std::map<std::string, std::string> load_predictions(std::string_view text, const std::string& what) {
  std::map<std::string, std::string> out;
  for_each_json_line(text, what, [&](const nlohmann::json& j) {
    const auto id = j.at("id").get<std::string>();
    std::string text_value;
    if (j.contains("correction")) {
      text_value = j.at("correction").get<std::string>();
    } else if (j.contains("target")) {
      text_value = j.at("target").get<std::string>();
    } else {
      throw DataError("record " + id + " has neither correction nor target");
    }
    if (!out.emplace(id, text_value).second) throw DataError("duplicate id " + id);
  });
  return out;
}

std::vector<judge::JudgeItem> load_judge_items(std::string_view text) {
  std::vector<judge::JudgeItem> items;
  for_each_json_line(text, "items", [&](const nlohmann::json& j) {
    judge::JudgeItem it;
    it.id = j.at("id").get<std::string>();
    it.source = j.at("source").get<std::string>();
    it.target = j.value("target", j.value("correction", std::string()));
    it.cefr = corpus::band_from_string(j.at("cefr").get<std::string>());
    it.feedback = j.value("feedback", std::string());
    items.push_back(std::move(it));
  });
  return items;
}

std::vector<corpus::UtteranceRecord> load_records(RunContext& ctx, const fs::path& path, bool strict,
                                                  std::size_t* skipped = nullptr) {
  ctx.input(path);
  auto result = corpus::load_corpus(path, strict);
  if (skipped) *skipped = result.issues.size();
  return std::move(result.records);
}

std::shared_ptr<backend::ChatBackend> make_chat_backend(const std::string& kind, const std::string& url,
                                                        const std::string& model, double temperature,
                                                        const std::string& key_env, std::size_t in_flight,
                                                        const fs::path& cache_dir) {
  if (kind == "replay") return std::make_shared<backend::CachingBackend>(nullptr, cache_dir, true);
  if (kind != "http") throw UsageError("unknown backend: " + kind);
  if (url.empty()) throw UsageError("--url is required for the http backend");
  auto http = std::make_shared<backend::HttpChatBackend>(
      backend::HttpBackendConfig{url, model, temperature, key_env, std::chrono::seconds(60), in_flight});
  return std::make_shared<backend::CachingBackend>(http, cache_dir, false);
}

// ---------------------------------------------------------------------------

struct CommonOptions {
  std::string out = "spfg-out";
  std::uint64_t seed = 0;
  std::string config;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  cmd->add_option("--config", o.config, "Config file (key = value or JSON)");
}

struct StatsOptions {
  std::string corpus;
  bool strict = false;
};

int cmd_stats(RunContext& ctx, const StatsOptions& o, std::ostream& out) {
  std::size_t skipped = 0;
  const auto records = load_records(ctx, o.corpus, o.strict, &skipped);
  ctx.set_options({{"corpus", o.corpus}, {"strict", o.strict}});
  std::string csv = "split,n_items,total_words,avg_words\n";
  std::ostringstream table;
  table << "split  items  words  avg_words\n";
  corpus::SplitStats all;
  for (auto split : {corpus::Split::Train, corpus::Split::Dev, corpus::Split::Eval}) {
    const auto s = corpus::split_stats(records, split);
    all += s;
    csv += std::string(corpus::to_string(split)) + "," + std::to_string(s.n_items) + "," +
           std::to_string(s.total_words) + "," + fixed(s.avg_words, 2) + "\n";
    table << corpus::to_string(split) << "  " << s.n_items << "  " << s.total_words << "  " << fixed(s.avg_words, 2)
          << "\n";
  }
  csv += "all," + std::to_string(all.n_items) + "," + std::to_string(all.total_words) + "," + fixed(all.avg_words, 2) + "\n";
  ctx.output("stats.csv", csv);

  std::string cefr = "cefr,count,percentage,avg_feedback_words\n";
  for (const auto& b : corpus::cefr_feedback_stats(records)) {
    cefr += std::string(corpus::to_string(b.band)) + "," + std::to_string(b.count) + "," + fixed(b.percentage, 2) +
            "," + fixed(b.avg_feedback_words, 2) + "\n";
  }
  ctx.output("cefr.csv", cefr);
  out << table.str();
  if (skipped) out << skipped << " malformed line(s) skipped\n";
  return kExitOk;
}

struct ScoreOptions {
  std::string hyp;
  std::string ref;
  std::string split;
};

int cmd_score(RunContext& ctx, const ScoreOptions& o, std::ostream& out) {
  const auto hyp = load_predictions(ctx.read_input(o.hyp), "hypothesis");
  auto refs = load_records(ctx, o.ref, true);
  if (!o.split.empty()) {
    const auto split = corpus::parse_split(o.split);
    if (!split) throw UsageError("unknown split: " + o.split);
    refs = corpus::filter_split(refs, *split);
  }
  ctx.set_options({{"hyp", o.hyp}, {"ref", o.ref}, {"split", o.split}});
  if (refs.empty()) throw DataError("no reference records to score");

  editscore::EditLists hyp_edits;
  editscore::EditLists ref_edits;
  std::size_t errors = 0;
  std::size_t ref_len = 0;
  std::string wer_csv = "id,errors,ref_length,wer\n";
  for (const auto& r : refs) {
    auto it = hyp.find(r.id);
    if (it == hyp.end()) throw DataError("hypothesis lacks id " + r.id);
    const auto src = editscore::normalize_tokens(r.source);
    const auto tgt = editscore::normalize_tokens(r.target);
    const auto h = editscore::normalize_tokens(it->second);
    if (tgt.empty()) throw DataError("reference " + r.id + " has an empty target");
    const auto c = editscore::wer_counts(h, tgt);
    errors += c.errors();
    ref_len += c.ref_length;
    wer_csv += r.id + "," + std::to_string(c.errors()) + "," + std::to_string(c.ref_length) + "," +
               fixed(static_cast<double>(c.errors()) / static_cast<double>(c.ref_length), 4) + "\n";
    hyp_edits.push_back(editscore::extract_edits(src, h));
    ref_edits.push_back(editscore::extract_edits(src, tgt));
  }
  const auto report = editscore::score_edits(hyp_edits, ref_edits);
  const double wer = static_cast<double>(errors) / static_cast<double>(ref_len);
  ordered_json summary = {{"items", refs.size()},
                          {"wer", wer},
                          {"precision", report.overall.precision},
                          {"recall", report.overall.recall},
                          {"f05", report.overall.f_half},
                          {"tp", report.overall.tp},
                          {"fp", report.overall.fp},
                          {"fn", report.overall.fn}};
  ctx.output("scores.csv", editscore::report_csv(report));
  ctx.output("wer.csv", wer_csv);
  ctx.output("score_summary.json", summary.dump(2) + "\n");
  out << "items " << refs.size() << "  WER " << fixed(wer, 4) << "  P " << fixed(report.overall.precision, 4) << "  R "
      << fixed(report.overall.recall, 4) << "  F0.5 " << fixed(report.overall.f_half, 4) << "\n";
  return kExitOk;
}

struct GenOptions {
  std::string corpus;
  std::string backend = "local";
  std::string url;
  std::string model = "gpt-4o";
  double temperature = 0.7;
  std::string cache;
  std::size_t max_in_flight = 4;
  int attempts = 3;
  std::string split;
};

int cmd_gen_negatives(RunContext& ctx, const GenOptions& o, std::uint64_t seed, std::ostream& out) {
  auto records = load_records(ctx, o.corpus, true);
  if (!o.split.empty()) {
    const auto split = corpus::parse_split(o.split);
    if (!split) throw UsageError("unknown split: " + o.split);
    records = corpus::filter_split(records, *split);
  }
  std::vector<corpus::UtteranceRecord> usable;
  for (auto& r : records) {
    if (!r.feedback.empty()) usable.push_back(std::move(r));
  }
  const fs::path cache = o.cache.empty() ? ctx.out() / "cache" : fs::path(o.cache);
  ordered_json options = {{"corpus", o.corpus}, {"backend", o.backend}, {"split", o.split},
                          {"seed", seed},       {"attempts", o.attempts}};
  if (o.backend != "local") {
    options["url"] = o.url;
    options["model"] = o.model;
    options["temperature"] = o.temperature;
    options["cache"] = cache.string();
  }
  ctx.set_options(options);

  std::unique_ptr<datagen::GeneratorBackend> gen;
  if (o.backend == "local") {
    gen = std::make_unique<datagen::LocalCorruptor>(seed);
  } else {
    gen = std::make_unique<datagen::ChatGenerator>(
        make_chat_backend(o.backend, o.url, o.model, o.temperature, kGenKeyEnv, o.max_in_flight, cache), o.model,
        o.temperature);
  }
  datagen::GenerateOptions gopt;
  gopt.seed = seed;
  gopt.retry.attempts = o.attempts;
  gopt.max_in_flight = o.max_in_flight;
  const auto batch = datagen::generate_negatives(usable, *gen, gopt);
  ctx.output("negatives.jsonl", datagen::serialize_negatives(batch.negatives));
  std::string failures;
  for (const auto& f : batch.failures) failures += datagen::failure_to_json(f).dump() + "\n";
  ctx.output("failures.jsonl", failures);
  out << "negatives " << batch.negatives.size() << "  failures " << batch.failures.size() << "\n";
  return kExitOk;
}

struct PairOptions {
  std::string corpus;
  std::string negatives;
};

int cmd_build_pairs(RunContext& ctx, const PairOptions& o, std::ostream& out) {
  const auto records = load_records(ctx, o.corpus, true);
  const auto negatives = datagen::parse_negatives(ctx.read_input(o.negatives));
  ctx.set_options({{"corpus", o.corpus}, {"negatives", o.negatives}});
  const auto result = datagen::build_preference_pairs(records, negatives);
  ctx.output("pairs.jsonl", datagen::serialize_pairs(result.pairs));
  std::string issues;
  for (const auto& i : result.issues) issues += ordered_json{{"id", i.id}, {"issue", i.message}}.dump() + "\n";
  ctx.output("pair_issues.jsonl", issues);
  out << "pairs " << result.pairs.size() << "  issues " << result.issues.size() << "\n";
  return kExitOk;
}

struct TrainOptions {
  std::string objective;
  std::string sft;
  std::string pairs;
  std::string base;
  std::size_t synthetic = 200;
  std::string prompt = "toy";
};

int cmd_train(RunContext& ctx, const TrainOptions& o, const CommonOptions& common, bool seed_given,
              std::ostream& out) {
  const auto objective = align::parse_objective(o.objective);
  if (!objective) throw UsageError("--objective must be sft, dpo+sft or kto+sft");
  align::RunConfig rc;
  if (!common.config.empty()) rc = align::parse_run_config(ctx.read_input(common.config));
  if (seed_given || common.config.empty()) {
    rc.train.seed = common.seed;
    rc.model.seed = common.seed;
  }
  const std::uint64_t seed = rc.train.seed;
  ctx.set_seed(seed);
  const auto max_len = static_cast<std::size_t>(rc.train.max_len);
  align::ChatFormat format;
  if (o.prompt == "toy") {
    format = align::toy_chat_format(max_len);
  } else if (o.prompt == "full") {
    format = align::full_chat_format(max_len);
  } else {
    throw UsageError("--prompt must be toy or full");
  }

  // Data: a corpus file, or a seeded synthetic corpus when none is given.
  std::vector<corpus::UtteranceRecord> records;
  std::vector<datagen::PreferencePair> pairs;
  std::vector<std::string> plain;
  const bool synthetic = o.sft.empty();
  if (synthetic) {
    records = datagen::synthetic_corpus(o.synthetic, seed);
    if (*objective != align::Objective::Sft) {
      datagen::LocalCorruptor corruptor(seed);
      datagen::GenerateOptions gopt;
      gopt.seed = seed;
      gopt.max_in_flight = 1;
      const auto batch = datagen::generate_negatives(records, corruptor, gopt);
      pairs = datagen::build_preference_pairs(records, batch.negatives).pairs;
    }
    plain = datagen::synthetic_plain_text(2 * o.synthetic, seed + 1);
  } else {
    for (auto& r : load_records(ctx, o.sft, true)) {
      if (r.split == corpus::Split::Train && !r.feedback.empty()) records.push_back(std::move(r));
    }
    if (*objective != align::Objective::Sft) {
      if (o.pairs.empty()) throw UsageError("--pairs is required for preference objectives");
      pairs = datagen::parse_pairs(ctx.read_input(o.pairs));
    }
    for (const auto& r : records) {
      plain.push_back(r.source);
      plain.push_back(r.target);
    }
  }

  std::size_t dropped = 0;
  std::vector<align::MaskedSequence> sft_data;
  for (const auto& r : records) {
    try {
      sft_data.push_back(align::sequence_for_record(r, format));
    } catch (const DataError&) {
      ++dropped;
    }
  }
  std::vector<align::TokenizedPair> tokenized;
  for (const auto& p : pairs) {
    try {
      tokenized.push_back(align::tokenize_pair(p, format));
    } catch (const DataError&) {
      ++dropped;
    }
  }
  if (sft_data.empty()) throw DataError("no usable SFT sequences");
  if (*objective != align::Objective::Sft && tokenized.empty()) throw DataError("no usable preference pairs");

  ordered_json options = {{"objective", o.objective},
                          {"prompt", o.prompt},
                          {"sft", o.sft},
                          {"pairs", o.pairs},
                          {"base", o.base},
                          {"synthetic_items", synthetic ? o.synthetic : 0},
                          {"train", rc.train.to_json()},
                          {"model", rc.model.to_json()}};
  ctx.set_options(options, align::hash_run_config(rc));

  ordered_json summary = {{"objective", o.objective}, {"sft_sequences", sft_data.size()},
                          {"pairs", tokenized.size()},  {"dropped_overlong", dropped}};

  model::ModelParams base;
  if (!o.base.empty()) {
    ctx.input(o.base);
    base = model::restore_params(model::load_snapshot(o.base, rc.model));
  } else {
    base = model::init_params(rc.model);
    if (rc.train.pretrain_epochs > 0) {
      std::vector<std::vector<model::TokenId>> texts;
      for (const auto& t : plain) {
        auto tok = model::encode_bytes(t);
        if (tok.size() > static_cast<std::size_t>(rc.model.context_len)) tok.resize(rc.model.context_len);
        texts.push_back(std::move(tok));
      }
      const auto pre = align::pretrain_base(base, texts, rc.train);
      ctx.output("loss_pretrain.csv", align::trace_csv(pre.trace));
      summary["pretrain_steps"] = pre.trace.size();
    }
    ctx.output("base.snap", model::serialize_snapshot(model::snapshot(base)));
  }

  const auto result = align::two_stage_train(base, tokenized, sft_data, rc.train, *objective);
  if (result.preference) {
    ctx.output("loss_preference.csv", align::trace_csv(result.preference->trace));
    ctx.output("preference_final.snap", model::serialize_snapshot(result.preference->final));
    ctx.output("merged_base.snap", model::serialize_snapshot(*result.preference->merged_base));
    summary["preference_steps"] = result.preference->trace.size();
    summary["preference_loss_first"] = result.preference->trace.front().loss;
    summary["preference_loss_last"] = result.preference->trace.back().loss;
  }
  ctx.output("loss_sft.csv", align::trace_csv(result.sft.trace));
  ctx.output("sft_final.snap", model::serialize_snapshot(result.sft.final));
  summary["sft_steps"] = result.sft.trace.size();
  summary["sft_loss_first"] = result.sft.trace.front().loss;
  summary["sft_loss_last"] = result.sft.trace.back().loss;
  ctx.output("train_summary.json", summary.dump(2) + "\n");
  out << "objective " << o.objective << "  sft steps " << result.sft.trace.size() << "  sft loss "
      << fixed(result.sft.trace.front().loss, 4) << " -> " << fixed(result.sft.trace.back().loss, 4) << "\n";
  return kExitOk;
}

struct JudgeOptions {
  std::string items;
  std::string backend = "mock:5";
  std::string url;
  std::string model = "gpt-4o";
  double temperature = 0.0;
  std::string cache;
  std::size_t max_in_flight = 4;
  int attempts = 3;
};

std::unique_ptr<judge::JudgeClient> make_judge(const JudgeOptions& o, const fs::path& cache) {
  if (o.backend.rfind("mock:", 0) == 0) {
    std::vector<std::string> parts;
    std::stringstream ss(o.backend.substr(5));
    for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
    if (parts.size() == 1) return std::make_unique<judge::MockJudge>(judge::MockJudge({parts[0], parts[0], parts[0], parts[0]}));
    if (parts.size() == 4) return std::make_unique<judge::MockJudge>(judge::MockJudge({parts[0], parts[1], parts[2], parts[3]}));
    throw UsageError("mock backend takes one score or four comma-separated scores");
  }
  return std::make_unique<judge::ChatJudge>(
      make_chat_backend(o.backend, o.url, o.model, o.temperature, kJudgeKeyEnv, o.max_in_flight, cache), o.model,
      o.temperature);
}

int cmd_judge(RunContext& ctx, const JudgeOptions& o, std::ostream& out) {
  const auto items = load_judge_items(ctx.read_input(o.items));
  const fs::path cache = o.cache.empty() ? ctx.out() / "cache" : fs::path(o.cache);
  ordered_json options = {{"items", o.items}, {"backend", o.backend}, {"attempts", o.attempts}};
  if (o.backend.rfind("mock:", 0) != 0) {
    options["url"] = o.url;
    options["model"] = o.model;
    options["temperature"] = o.temperature;
    options["cache"] = cache.string();
  }
  ctx.set_options(options);
  auto client = make_judge(o, cache);
  judge::JudgeOptions jopt;
  jopt.retry.attempts = o.attempts;
  jopt.max_in_flight = o.max_in_flight;
  const auto report = judge::judge_corpus(items, *client, jopt);
  ctx.output("judge.csv", judge::report_csv(report));
  ordered_json summary;
  summary["items"] = items.size();
  for (auto dim : judge::kDimensions) {
    const auto d = judge::dimension_index(dim);
    const auto name = std::string(judge::column_name(dim));
    summary["means"][name] = report.means[d] ? ordered_json(*report.means[d]) : ordered_json();
    summary["coverage"][name] = report.coverage[d];
  }
  const auto avg = report.avg();
  summary["avg"] = avg ? ordered_json(*avg) : ordered_json();
  summary["failures"] = report.failures.size();
  ctx.output("judge_summary.json", summary.dump(2) + "\n");
  std::string failures;
  for (const auto& f : report.failures) {
    failures += ordered_json{{"id", f.id}, {"dimension", judge::column_name(f.dim)}, {"error", f.error}}.dump() + "\n";
  }
  ctx.output("judge_failures.jsonl", failures);
  out << "items " << items.size() << "  avg " << (avg ? fixed(*avg, 2) : std::string("n/a")) << "  missing scores "
      << report.failures.size() << "\n";
  return kExitOk;
}

struct AnalyzeOptions {
  std::string corpus;
  std::size_t top_k = 15;
  std::vector<std::string> systems;
  std::string judge_csv;
  bool bars = false;
};

std::vector<judge::NamedColumn> read_judge_columns(std::string_view csv) {
  std::vector<judge::NamedColumn> cols = {{"correctness", {}}, {"level", {}}, {"suggestion", {}}, {"positiveness", {}}};
  std::istringstream in{std::string(csv)};
  std::string line;
  std::getline(in, line);
  if (line.rfind("id,correctness,level,suggestion,positiveness", 0) != 0) throw DataError("not a judge report");
  while (std::getline(in, line)) {
    if (line.rfind("mean,", 0) == 0) continue;
    // ids may be quoted; the four scores are the last five fields minus avg
    std::vector<std::string> fields;
    std::size_t end = line.size();
    for (int k = 0; k < 5; ++k) {
      const auto comma = line.rfind(',', end - 1);
      if (comma == std::string::npos) throw DataError("short judge row: " + line);
      fields.insert(fields.begin(), line.substr(comma + 1, end - comma - 1));
      end = comma;
    }
    bool complete = true;
    for (int k = 0; k < 4; ++k) complete = complete && !fields[static_cast<std::size_t>(k)].empty();
    if (!complete) continue;
    for (int k = 0; k < 4; ++k) cols[static_cast<std::size_t>(k)].values.push_back(std::stod(fields[static_cast<std::size_t>(k)]));
  }
  return cols;
}

int cmd_analyze(RunContext& ctx, const AnalyzeOptions& o, std::ostream& out) {
  const auto records = load_records(ctx, o.corpus, true);
  ordered_json options = {{"corpus", o.corpus}, {"top_k", o.top_k}, {"systems", o.systems}, {"judge", o.judge_csv}};
  ctx.set_options(options);

  const auto dist = analysis::error_type_distribution(records, o.top_k);
  ctx.output("distribution.csv", analysis::distribution_csv(dist));
  ctx.output("cefr_distribution.csv", analysis::distribution_csv(analysis::cefr_error_distribution(records, o.top_k)));

  std::vector<std::pair<corpus::CefrBand, std::string>> blocks;
  for (const auto& r : records) {
    if (!r.feedback.empty()) blocks.emplace_back(r.cefr, r.feedback);
  }
  if (!blocks.empty()) ctx.output("readability.csv", analysis::readability_csv(analysis::readability_by_band(blocks)));

  if (!o.systems.empty()) {
    std::vector<analysis::SystemPredictions> systems;
    for (const auto& entry : o.systems) {
      const auto eq = entry.find('=');
      if (eq == std::string::npos || eq == 0) throw UsageError("--system expects name=path");
      const std::string path = entry.substr(eq + 1);
      systems.push_back({entry.substr(0, eq), load_predictions(ctx.read_input(path), entry.substr(0, eq))});
    }
    const auto heat = analysis::per_type_heatmap(systems, records, o.top_k);
    ctx.output("heatmap.csv", analysis::heatmap_csv(heat));
    ctx.output("heatmap.json", analysis::heatmap_json(heat).dump(2) + "\n");
  }
  if (!o.judge_csv.empty()) {
    const auto m = judge::pearson_matrix(read_judge_columns(ctx.read_input(o.judge_csv)));
    ctx.output("correlations.csv", judge::correlation_csv(m));
  }

  std::vector<std::pair<std::string, double>> rows;
  for (const auto& r : dist.groups.front().rows) rows.emplace_back(r.type_code, r.percentage);
  const auto bars = analysis::render_bars(rows);
  ctx.output("bars.txt", bars);
  if (o.bars) out << bars;
  out << "edits " << dist.groups.front().total << "  types shown " << rows.size() << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spoken-learner feedback toolkit", "spfg"};
  app.require_subcommand(1);

  CommonOptions common;
  StatsOptions stats;
  ScoreOptions score;
  GenOptions gen;
  PairOptions pairs;
  TrainOptions train;
  JudgeOptions jopt;
  AnalyzeOptions analyze;

  auto* c_stats = app.add_subcommand("stats", "Corpus statistics per split and CEFR band");
  add_common(c_stats, common);
  c_stats->add_option("--corpus", stats.corpus, "Corpus JSONL")->required();
  c_stats->add_flag("--strict", stats.strict, "Fail on the first malformed line");

  auto* c_score = app.add_subcommand("score", "WER and edit-level F0.5 of predictions");
  add_common(c_score, common);
  c_score->add_option("--hyp", score.hyp, "Predictions JSONL (id, correction)")->required();
  c_score->add_option("--ref", score.ref, "Reference corpus JSONL")->required();
  c_score->add_option("--split", score.split, "Only score this split");

  auto* c_gen = app.add_subcommand("gen-negatives", "Generate corrupted feedback for preference pairs");
  add_common(c_gen, common);
  c_gen->add_option("--corpus", gen.corpus, "Corpus JSONL")->required();
  c_gen->add_option("--backend", gen.backend, "local, http or replay")->capture_default_str();
  c_gen->add_option("--url", gen.url, "Chat completions endpoint");
  c_gen->add_option("--model", gen.model, "Generator model name")->capture_default_str();
  c_gen->add_option("--temperature", gen.temperature)->capture_default_str();
  c_gen->add_option("--cache", gen.cache, "Response cache directory (default <out>/cache)");
  c_gen->add_option("--max-in-flight", gen.max_in_flight)->capture_default_str()->check(CLI::PositiveNumber);
  c_gen->add_option("--attempts", gen.attempts)->capture_default_str()->check(CLI::PositiveNumber);
  c_gen->add_option("--split", gen.split, "Only use this split");

  auto* c_pairs = app.add_subcommand("build-pairs", "Join verified feedback with negatives");
  add_common(c_pairs, common);
  c_pairs->add_option("--corpus", pairs.corpus, "Corpus JSONL")->required();
  c_pairs->add_option("--negatives", pairs.negatives, "negatives.jsonl from gen-negatives")->required();

  auto* c_train = app.add_subcommand("train", "Two-stage training of the toy model");
  add_common(c_train, common);
  c_train->add_option("--objective", train.objective, "sft, dpo+sft or kto+sft")->required();
  c_train->add_option("--sft", train.sft, "Corpus JSONL for Stage 2 (synthetic data when omitted)");
  c_train->add_option("--pairs", train.pairs, "pairs.jsonl for Stage 1");
  c_train->add_option("--base", train.base, "Base model snapshot");
  c_train->add_option("--synthetic", train.synthetic, "Synthetic corpus size")->capture_default_str();
  c_train->add_option("--prompt", train.prompt, "toy or full")->capture_default_str();

  auto* c_judge = app.add_subcommand("judge", "Rubric scores from a judge backend");
  add_common(c_judge, common);
  c_judge->add_option("--items", jopt.items, "JSONL with id, source, target, cefr, feedback")->required();
  c_judge->add_option("--backend", jopt.backend, "mock:<s> | mock:<c,l,s,p> | http | replay")->capture_default_str();
  c_judge->add_option("--url", jopt.url, "Chat completions endpoint");
  c_judge->add_option("--model", jopt.model, "Judge model name")->capture_default_str();
  c_judge->add_option("--temperature", jopt.temperature)->capture_default_str();
  c_judge->add_option("--cache", jopt.cache, "Response cache directory (default <out>/cache)");
  c_judge->add_option("--max-in-flight", jopt.max_in_flight)->capture_default_str()->check(CLI::PositiveNumber);
  c_judge->add_option("--attempts", jopt.attempts)->capture_default_str()->check(CLI::PositiveNumber);

  auto* c_analyze = app.add_subcommand("analyze", "Error distributions, heatmap, readability, correlations");
  add_common(c_analyze, common);
  c_analyze->add_option("--corpus", analyze.corpus, "Corpus JSONL")->required();
  c_analyze->add_option("--top-k", analyze.top_k)->capture_default_str();
  c_analyze->add_option("--system", analyze.systems, "name=predictions.jsonl (repeatable)");
  c_analyze->add_option("--judge", analyze.judge_csv, "judge.csv for the correlation matrix");
  c_analyze->add_flag("--bars", analyze.bars, "Print a text bar chart");

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsageError;
  }

  CLI::App* cmd = app.get_subcommands().front();
  try {
    RunContext ctx(cmd->get_name(), args, common.out, common.seed);
    int code = kExitOk;
    if (cmd == c_stats) code = cmd_stats(ctx, stats, out);
    else if (cmd == c_score) code = cmd_score(ctx, score, out);
    else if (cmd == c_gen) code = cmd_gen_negatives(ctx, gen, common.seed, out);
    else if (cmd == c_pairs) code = cmd_build_pairs(ctx, pairs, out);
    else if (cmd == c_train) code = cmd_train(ctx, train, common, c_train->count("--seed") > 0, out);
    else if (cmd == c_judge) code = cmd_judge(ctx, jopt, out);
    else if (cmd == c_analyze) code = cmd_analyze(ctx, analyze, out);
    ctx.finish();
    return code;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n\n" << cmd->help();
    return kExitUsageError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDataError;
  }
}

}  // namespace spfg::cli
