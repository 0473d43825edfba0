#include "spfg/align.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "spfg/digest.hpp"
#include "spfg/error.hpp"
#include "spfg/parallel.hpp"

namespace spfg::align {

// ---------------------------------------------------------------------------
// Sequences

MaskedSequence assemble_sequence(std::string_view system, std::string_view user, std::string_view response,
                                 std::size_t max_len) {
  if (response.empty()) throw DataError("empty response");
  MaskedSequence seq;
  auto& t = seq.tokens;
  t.reserve(system.size() + user.size() + response.size() + 4);
  t.push_back(model::kSys);
  for (unsigned char c : system) t.push_back(c);
  t.push_back(model::kUsr);
  for (unsigned char c : user) t.push_back(c);
  seq.prompt_len = t.size();
  t.push_back(model::kAsst);
  for (unsigned char c : response) t.push_back(c);
  t.push_back(model::kEos);
  if (t.size() > max_len) {
    throw DataError("sequence of " + std::to_string(t.size()) + " tokens exceeds L_max " + std::to_string(max_len));
  }
  seq.mask.assign(t.size(), 0);
  std::fill(seq.mask.begin() + static_cast<std::ptrdiff_t>(seq.prompt_len) + 1, seq.mask.end(), 1);
  return seq;
}

ChatFormat toy_chat_format(std::size_t max_len) {
  return {"English tutor. Reply in JSON.", {"toy_user", "Level: {speaker_level}\nSaid: \"{source}\""}, max_len};
}

ChatFormat full_chat_format(std::size_t max_len) {
  return {"You are a helpful assistant.", datagen::correction_feedback_template(), max_len};
}

namespace {

std::size_t utf8_floor(std::string_view s, std::size_t n) {
  while (n > 0 && n < s.size() && (static_cast<unsigned char>(s[n]) & 0xC0) == 0x80) --n;
  return n;
}

}  // namespace

namespace {

std::string render_user(const ChatFormat& format, corpus::CefrBand cefr, const std::string& source) {
  return datagen::render_template(format.user,
                                  {{"speaker_level", std::string(corpus::to_string(cefr))}, {"source", source}});
}

// Longest UTF-8 prefix of `source` whose sequence fits a reply of `reply_size` bytes.
std::string fitted_source(std::string_view source, corpus::CefrBand cefr, std::size_t reply_size,
                          const ChatFormat& format) {
  std::string src(source);
  for (;;) {
    const std::size_t total = format.system.size() + render_user(format, cefr, src).size() + reply_size + 4;
    if (total <= format.max_len) return src;
    const std::size_t excess = total - format.max_len;
    if (src.empty()) break;
    if (excess >= src.size()) {
      src.clear();
    } else {
      src.resize(utf8_floor(src, src.size() - excess));
    }
  }
  throw DataError("sequence overflows L_max " + std::to_string(format.max_len) + " after truncating the source");
}

}  // namespace

MaskedSequence build_masked_sequence(std::string_view source, corpus::CefrBand cefr,
                                     const datagen::GenerationResponse& response, const ChatFormat& format) {
  if (response.correction.empty() && response.feedback.empty()) throw DataError("empty response");
  const std::string reply = datagen::to_json_text(response);
  const std::string src = fitted_source(source, cefr, reply.size(), format);
  return assemble_sequence(format.system, render_user(format, cefr, src), reply, format.max_len);
}

MaskedSequence sequence_for_record(const corpus::UtteranceRecord& record, const ChatFormat& format) {
  return build_masked_sequence(record.source, record.cefr, {record.target, record.feedback}, format);
}

TokenizedPair tokenize_pair(const datagen::PreferencePair& pair, const ChatFormat& format) {
  // Both sides share one prompt, truncated for the longer reply.
  for (const auto* r : {&pair.chosen, &pair.rejected}) {
    if (r->correction.empty() && r->feedback.empty()) throw DataError("empty response");
  }
  const std::string chosen = datagen::to_json_text(pair.chosen);
  const std::string rejected = datagen::to_json_text(pair.rejected);
  const std::string src = fitted_source(pair.source, pair.cefr, std::max(chosen.size(), rejected.size()), format);
  const std::string user = render_user(format, pair.cefr, src);
  return {assemble_sequence(format.system, user, chosen, format.max_len),
          assemble_sequence(format.system, user, rejected, format.max_len)};
}

MaskedSequence recombine(const MaskedSequence& prompt_from, const MaskedSequence& response_from,
                         std::size_t max_len) {
  MaskedSequence seq;
  const auto p = prompt_from.prompt();
  auto r = response_from.response();
  if (max_len > 0 && p.size() + r.size() > max_len) r = r.first(std::max<std::size_t>(1, max_len - std::min(max_len, p.size())));
  seq.tokens.assign(p.begin(), p.end());
  seq.tokens.insert(seq.tokens.end(), r.begin(), r.end());
  seq.prompt_len = prompt_from.prompt_len;
  seq.mask.assign(seq.tokens.size(), 0);
  std::fill(seq.mask.begin() + static_cast<std::ptrdiff_t>(seq.prompt_len) + 1, seq.mask.end(), 1);
  return seq;
}

// ---------------------------------------------------------------------------
// Losses

double sequence_logprob(const ModelView& m, const MaskedSequence& seq) {
  return model::sequence_logprob(*m.params, m.adapter, seq.tokens, seq.mask);
}

std::vector<double> sequence_logprobs(const ModelView& m, const std::vector<MaskedSequence>& seqs,
                                      std::size_t workers) {
  std::vector<double> out(seqs.size(), 0.0);
  parallel_for(seqs.size(), workers, [&](std::size_t i) { out[i] = sequence_logprob(m, seqs[i]); });
  return out;
}

double masked_nll(const ModelView& m, const MaskedSequence& seq) { return -sequence_logprob(m, seq); }

double mean_masked_nll(const ModelView& m, const std::vector<MaskedSequence>& seqs, std::size_t workers) {
  if (seqs.empty()) throw std::invalid_argument("no sequences");
  const auto lp = sequence_logprobs(m, seqs, workers);
  double sum = 0.0;
  for (double v : lp) sum -= v;
  return sum / static_cast<double>(seqs.size());
}

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// -ln sigmoid(x), stable for large |x|
double neg_log_sigmoid(double x) {
  return x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

void check_same_prompt(const MaskedSequence& chosen, const MaskedSequence& rejected) {
  const auto a = chosen.prompt();
  const auto b = rejected.prompt();
  if (!std::equal(a.begin(), a.end(), b.begin(), b.end())) {
    throw DataError("prompt region differs between chosen and rejected");
  }
}

}  // namespace

DpoValue dpo_from_logratios(double chosen_logratio, double rejected_logratio, double beta) {
  const double delta = chosen_logratio - rejected_logratio;
  return {neg_log_sigmoid(beta * delta), delta};
}

DpoValue dpo_loss(const ModelView& policy, const ModelView& reference, const MaskedSequence& chosen,
                  const MaskedSequence& rejected, double beta) {
  check_same_prompt(chosen, rejected);
  return dpo_from_logratios(sequence_logprob(policy, chosen) - sequence_logprob(reference, chosen),
                            sequence_logprob(policy, rejected) - sequence_logprob(reference, rejected), beta);
}

KtoValue kto_from_rewards(std::span<const double> rewards, std::span<const double> mismatch,
                          const std::vector<bool>& desirable, const KtoOptions& options) {
  const std::size_t n = rewards.size();
  if (n < 2) throw std::invalid_argument("KTO batch needs at least two examples");
  if (mismatch.size() != n || desirable.size() != n) throw std::invalid_argument("KTO input sizes differ");
  const double inv_n = 1.0 / static_cast<double>(n);
  double z_raw = 0.0;
  for (double r : mismatch) z_raw += r;
  z_raw *= inv_n;
  KtoValue out;
  out.z0 = std::max(0.0, z_raw);
  out.d_reward.assign(n, 0.0);
  out.d_mismatch.assign(n, 0.0);
  double dz0 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    double dv_dr = 0.0;
    double lambda = 0.0;
    if (desirable[i]) {
      lambda = options.lambda_desirable;
      const double s = sigmoid(rewards[i] - out.z0);
      v = lambda * s;
      dv_dr = lambda * s * (1.0 - s);
    } else {
      lambda = options.lambda_undesirable;
      const double s = sigmoid(out.z0 - rewards[i]);
      v = lambda * s;
      dv_dr = -lambda * s * (1.0 - s);
    }
    out.loss += (lambda - v) * inv_n;
    out.d_reward[i] = -dv_dr * inv_n;
    dz0 += dv_dr * inv_n;  // dv/dz0 = -dv/dr, and dloss = -dv
  }
  if (z_raw > 0.0) {
    for (auto& d : out.d_mismatch) d = dz0 * inv_n;
  }
  return out;
}

namespace {

std::vector<MaskedSequence> mismatched_sequences(const std::vector<const MaskedSequence*>& seqs,
                                                std::size_t max_len) {
  std::vector<MaskedSequence> out;
  out.reserve(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    out.push_back(recombine(*seqs[i], *seqs[(i + 1) % seqs.size()], max_len));
  }
  return out;
}

}  // namespace

double kto_loss(const ModelView& policy, const ModelView& reference, const std::vector<KtoExample>& batch,
                const KtoOptions& options) {
  if (batch.size() < 2) throw std::invalid_argument("KTO batch needs at least two examples");
  std::vector<const MaskedSequence*> seqs;
  std::vector<bool> desirable;
  for (const auto& ex : batch) {
    seqs.push_back(&ex.seq);
    desirable.push_back(ex.desirable);
  }
  const auto mism = mismatched_sequences(seqs, static_cast<std::size_t>(policy.params->config.context_len));
  std::vector<double> r(batch.size());
  std::vector<double> rm(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    r[i] = options.beta * (sequence_logprob(policy, *seqs[i]) - sequence_logprob(reference, *seqs[i]));
    rm[i] = options.beta * (sequence_logprob(policy, mism[i]) - sequence_logprob(reference, mism[i]));
  }
  return kto_from_rewards(r, rm, desirable, options).loss;
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw DataError("invalid config: " + what); };
  if (!(beta > 0)) fail("beta must be positive");
  if (!(lr > 0)) fail("lr must be positive");
  if (warmup_ratio < 0 || warmup_ratio > 1) fail("warmup_ratio must lie in [0, 1]");
  if (per_step_batch < 1 || grad_accum < 1) fail("batch sizes must be at least 1");
  if (epochs < 0 || pref_epochs < 0 || pretrain_epochs < 0) fail("epochs must be non-negative");
  if (max_len < 4) fail("max_len too small");
  if (lora_rank < 1) fail("lora_rank must be at least 1");
  if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1) fail("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) fail("adam_eps must be positive");
  if (weight_decay < 0) fail("weight_decay must be non-negative");
  if (workers < 1) fail("workers must be at least 1");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  return {{"beta", beta},
          {"lr", lr},
          {"warmup_ratio", warmup_ratio},
          {"per_step_batch", per_step_batch},
          {"grad_accum", grad_accum},
          {"epochs", epochs},
          {"max_len", max_len},
          {"seed", seed},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps},
          {"weight_decay", weight_decay},
          {"lora_rank", lora_rank},
          {"lora_alpha", lora_alpha},
          {"kto_lambda_desirable", kto_lambda_desirable},
          {"kto_lambda_undesirable", kto_lambda_undesirable},
          {"pref_epochs", pref_epochs},
          {"pref_lr", pref_lr},
          {"pretrain_epochs", pretrain_epochs},
          {"pretrain_lr", pretrain_lr},
          {"workers", workers}};
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw DataError("config key " + key + ": not a number: " + value);
  return out;
}

long long to_integer(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw DataError("config key " + key + ": not an integer: " + value);
  return out;
}

void apply_key(RunConfig& rc, const std::string& key, const std::string& value) {
  auto& t = rc.train;
  auto& m = rc.model;
  auto as_int = [&] { return static_cast<int>(to_integer(key, value)); };
  auto as_double = [&] { return to_double(key, value); };
  if (key == "beta") t.beta = as_double();
  else if (key == "lr" || key == "learning_rate") t.lr = as_double();
  else if (key == "warmup_ratio") t.warmup_ratio = as_double();
  else if (key == "per_step_batch") t.per_step_batch = as_int();
  else if (key == "grad_accum") t.grad_accum = as_int();
  else if (key == "epochs") t.epochs = as_int();
  else if (key == "max_len") t.max_len = as_int();
  else if (key == "seed") t.seed = static_cast<std::uint64_t>(to_integer(key, value));
  else if (key == "adam_beta1") t.adam_beta1 = as_double();
  else if (key == "adam_beta2") t.adam_beta2 = as_double();
  else if (key == "adam_eps") t.adam_eps = as_double();
  else if (key == "weight_decay") t.weight_decay = as_double();
  else if (key == "lora_rank") t.lora_rank = as_int();
  else if (key == "lora_alpha") t.lora_alpha = as_double();
  else if (key == "kto_lambda_desirable") t.kto_lambda_desirable = as_double();
  else if (key == "kto_lambda_undesirable") t.kto_lambda_undesirable = as_double();
  else if (key == "pref_epochs") t.pref_epochs = as_int();
  else if (key == "pref_lr") t.pref_lr = as_double();
  else if (key == "pretrain_epochs") t.pretrain_epochs = as_int();
  else if (key == "pretrain_lr") t.pretrain_lr = as_double();
  else if (key == "workers") t.workers = static_cast<std::size_t>(std::max(1, as_int()));
  else if (key == "model.d_model") m.d_model = as_int();
  else if (key == "model.n_layers") m.n_layers = as_int();
  else if (key == "model.n_heads") m.n_heads = as_int();
  else if (key == "model.context_len") m.context_len = as_int();
  else if (key == "model.ff_mult") m.ff_mult = as_int();
  else if (key == "model.seed") m.seed = static_cast<std::uint64_t>(to_integer(key, value));
  else throw DataError("unknown config key: " + key);
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  RunConfig rc;
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("config is not valid JSON: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) {
      if (value.is_string()) apply_key(rc, key, value.get<std::string>());
      else if (value.is_number() || value.is_boolean()) apply_key(rc, key, value.dump());
      else throw DataError("config key " + key + ": unsupported value");
    }
  } else {
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      const std::string content = trim(line);
      if (content.empty()) continue;
      const auto eq = content.find('=');
      if (eq == std::string::npos) throw DataError("config line " + std::to_string(lineno) + ": expected key = value");
      apply_key(rc, trim(content.substr(0, eq)), trim(content.substr(eq + 1)));
    }
  }
  rc.train.validate();
  try {
    rc.model.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("invalid model config: ") + e.what());
  }
  if (rc.train.max_len > rc.model.context_len) throw DataError("max_len exceeds model.context_len");
  return rc;
}

std::string hash_run_config(const RunConfig& config) {
  nlohmann::ordered_json j;
  j["train"] = config.train.to_json();
  j["model"] = config.model.to_json();
  return sha256_hex(j.dump());
}

std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio) {
  return static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps) - 1e-12));
}

double learning_rate(std::size_t step, std::size_t total_steps, double peak, double warmup_ratio) {
  const std::size_t w = warmup_steps(total_steps, warmup_ratio);
  if (step <= w) return peak * static_cast<double>(step) / static_cast<double>(w);
  if (total_steps <= w) return 0.0;
  const double progress = static_cast<double>(step - w) / static_cast<double>(total_steps - w);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads, double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("parameter and gradient lists differ");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = *grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const Matrix update = (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + eps_);
    p -= lr * (update + weight_decay_ * p);
  }
}

// ---------------------------------------------------------------------------
// Stages

std::string_view to_string(StageTag tag) {
  switch (tag) {
    case StageTag::Pretrain: return "pretrain";
    case StageTag::Preference: return "preference";
    case StageTag::Sft: return "sft";
  }
  return "?";
}

std::string trace_csv(const std::vector<LossPoint>& trace) {
  std::string out = "step,lr,loss\n";
  char buf[96];
  for (const auto& p : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.12g\n", p.step, p.lr, p.loss);
    out += buf;
  }
  return out;
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch) {
  if (n == 0) return 0;
  std::size_t steps = (n + batch - 1) / batch;
  // a trailing singleton is folded into the previous batch
  if (steps > 1 && n % batch == 1) --steps;
  return steps;
}

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < steps_per_epoch(n, batch); ++s) {
    const std::size_t begin = s * batch;
    const std::size_t end = s + 1 == steps_per_epoch(n, batch) ? n : begin + batch;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct LoopSettings {
  std::size_t items = 0;
  int epochs = 1;
  double lr = 0.0;
  std::uint64_t shuffle_seed = 0;
};

using BuildObjective = std::function<model::ScalarObjective(const std::vector<std::size_t>&)>;

// Shared optimizer loop. Trains the adapter when one is given, otherwise
// every tensor of `trainable`, which must then be `params` itself.
std::vector<LossPoint> run_loop(const ModelParams& params, ModelParams* trainable, LoraAdapter* adapter,
                                const TrainConfig& config, const LoopSettings& settings, const BuildObjective& build) {
  const auto batch = static_cast<std::size_t>(config.effective_batch());
  const std::size_t per_epoch = steps_per_epoch(settings.items, batch);
  const std::size_t total = per_epoch * static_cast<std::size_t>(settings.epochs);
  std::mt19937_64 rng(settings.shuffle_seed);
  AdamW opt(config.adam_beta1, config.adam_beta2, config.adam_eps, config.weight_decay);
  const bool with_base = adapter == nullptr;
  std::vector<LossPoint> trace;
  trace.reserve(total);
  std::size_t step = 0;
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(settings.items, batch, rng)) {
      ++step;
      const double lr = learning_rate(step, total, settings.lr, config.warmup_ratio);
      const auto objective = build(idx);
      model::GradientResult g;
      try {
        g = model::parameter_gradients(params, adapter, objective, with_base, config.workers);
      } catch (const std::domain_error&) {
        throw std::domain_error("non-finite loss at step " + std::to_string(step));
      }
      std::vector<Matrix*> ps;
      std::vector<const Matrix*> gs;
      if (with_base) {
        for (auto& [name, w] : trainable->weights) {
          ps.push_back(&w);
          gs.push_back(&g.grads.base.at(name));
        }
      } else {
        for (auto& [name, f] : adapter->factors) {
          const auto& gf = g.grads.adapter.at(name);
          ps.push_back(&f.a);
          gs.push_back(&gf.a);
          ps.push_back(&f.b);
          gs.push_back(&gf.b);
        }
      }
      opt.step(ps, gs, lr);
      trace.push_back({step, lr, g.loss});
    }
  }
  return trace;
}

}  // namespace

model::ScalarObjective sft_objective(const std::vector<MaskedSequence>& batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  model::ScalarObjective obj;
  for (const auto& s : batch) obj.terms.push_back({s.tokens, s.mask});
  obj.loss = [n = static_cast<double>(batch.size())](std::span<const double> lp, std::span<double> d) {
    double loss = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) {
      loss -= lp[i] / n;
      d[i] = -1.0 / n;
    }
    return loss;
  };
  return obj;
}

model::ScalarObjective dpo_objective(const std::vector<TokenizedPair>& batch, std::vector<double> ref_logprobs,
                                     double beta) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  if (ref_logprobs.size() != 2 * batch.size()) throw std::invalid_argument("need two reference log-probs per pair");
  model::ScalarObjective obj;
  for (const auto& p : batch) {
    check_same_prompt(p.chosen, p.rejected);
    obj.terms.push_back({p.chosen.tokens, p.chosen.mask});
    obj.terms.push_back({p.rejected.tokens, p.rejected.mask});
  }
  obj.loss = [refs = std::move(ref_logprobs), beta](std::span<const double> lp, std::span<double> d) {
    const double n = static_cast<double>(lp.size() / 2);
    double loss = 0.0;
    for (std::size_t k = 0; k < lp.size(); k += 2) {
      const auto v = dpo_from_logratios(lp[k] - refs[k], lp[k + 1] - refs[k + 1], beta);
      loss += v.loss / n;
      // d(-ln sigma(x))/dx = -sigma(-x)
      const double g = -sigmoid(-beta * v.delta) * beta / n;
      d[k] = g;
      d[k + 1] = -g;
    }
    return loss;
  };
  return obj;
}

model::ScalarObjective kto_objective(const std::vector<KtoExample>& batch, const ModelView& reference,
                                     const KtoOptions& options, std::size_t workers) {
  if (batch.size() < 2) throw std::invalid_argument("KTO batch needs at least two examples");
  std::vector<const MaskedSequence*> seqs;
  std::vector<bool> desirable;
  std::vector<MaskedSequence> all;
  for (const auto& ex : batch) {
    seqs.push_back(&ex.seq);
    desirable.push_back(ex.desirable);
    all.push_back(ex.seq);
  }
  for (auto& m : mismatched_sequences(seqs, static_cast<std::size_t>(reference.params->config.context_len))) {
    all.push_back(std::move(m));
  }
  const auto refs = sequence_logprobs(reference, all, workers);
  model::ScalarObjective obj;
  for (auto& s : all) obj.terms.push_back({std::move(s.tokens), std::move(s.mask)});
  obj.loss = [refs, desirable, options](std::span<const double> lp, std::span<double> d) {
    const std::size_t n = desirable.size();
    std::vector<double> r(n);
    std::vector<double> rm(n);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = options.beta * (lp[i] - refs[i]);
      rm[i] = options.beta * (lp[n + i] - refs[n + i]);
    }
    const auto v = kto_from_rewards(r, rm, desirable, options);
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = options.beta * v.d_reward[i];
      d[n + i] = options.beta * v.d_mismatch[i];
    }
    return v.loss;
  };
  return obj;
}

namespace {

template <typename T>
std::vector<T> gather(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items[i]);
  return out;
}

}  // namespace

StageArtifacts sft_train(const ModelParams& base, LoraAdapter& adapter, const std::vector<MaskedSequence>& data,
                         const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("no SFT data");
  LoopSettings settings{data.size(), config.epochs, config.lr, mix(config.seed, 2)};
  StageArtifacts art;
  art.tag = StageTag::Sft;
  art.trace = run_loop(base, nullptr, &adapter, config, settings,
                       [&](const std::vector<std::size_t>& idx) { return sft_objective(gather(data, idx)); });
  art.final = model::snapshot(base, &adapter);
  return art;
}

StageArtifacts preference_train(const ModelParams& base, LoraAdapter& adapter,
                                const std::vector<TokenizedPair>& pairs, const TrainConfig& config,
                                PreferenceObjective objective) {
  config.validate();
  if (pairs.empty()) throw std::invalid_argument("no preference pairs");
  for (const auto& p : pairs) check_same_prompt(p.chosen, p.rejected);
  const ModelView reference{&base, nullptr};
  const int epochs = config.pref_epochs > 0 ? config.pref_epochs : config.epochs;
  const double lr = config.pref_lr > 0 ? config.pref_lr : config.lr;
  StageArtifacts art;
  art.tag = StageTag::Preference;

  if (objective == PreferenceObjective::Dpo) {
    std::vector<MaskedSequence> flat;
    for (const auto& p : pairs) {
      flat.push_back(p.chosen);
      flat.push_back(p.rejected);
    }
    const auto ref_lp = sequence_logprobs(reference, flat, config.workers);
    LoopSettings settings{pairs.size(), epochs, lr, mix(config.seed, 1)};
    art.trace = run_loop(base, nullptr, &adapter, config, settings, [&](const std::vector<std::size_t>& idx) {
      std::vector<double> refs;
      for (std::size_t i : idx) {
        refs.push_back(ref_lp[2 * i]);
        refs.push_back(ref_lp[2 * i + 1]);
      }
      return dpo_objective(gather(pairs, idx), std::move(refs), config.beta);
    });
  } else {
    std::vector<KtoExample> examples;
    for (const auto& p : pairs) {
      examples.push_back({p.chosen, true});
      examples.push_back({p.rejected, false});
    }
    const KtoOptions opts{config.beta, config.kto_lambda_desirable, config.kto_lambda_undesirable};
    LoopSettings settings{examples.size(), epochs, lr, mix(config.seed, 3)};
    art.trace = run_loop(base, nullptr, &adapter, config, settings, [&](const std::vector<std::size_t>& idx) {
      return kto_objective(gather(examples, idx), reference, opts, config.workers);
    });
  }
  art.final = model::snapshot(base, &adapter);
  art.merged_base = model::snapshot(model::lora_merge(base, adapter));
  return art;
}

StageArtifacts pretrain_base(ModelParams& params, const std::vector<std::vector<TokenId>>& texts,
                             const TrainConfig& config) {
  config.validate();
  std::vector<MaskedSequence> data;
  for (const auto& t : texts) {
    if (t.size() < 2) continue;
    MaskedSequence s;
    s.tokens = t;
    s.mask.assign(t.size(), 1);
    data.push_back(std::move(s));
  }
  if (data.empty()) throw std::invalid_argument("no pretraining text");
  LoopSettings settings{data.size(), config.pretrain_epochs, config.pretrain_lr, mix(config.seed, 4)};
  StageArtifacts art;
  art.tag = StageTag::Pretrain;
  art.trace = run_loop(params, &params, nullptr, config, settings,
                       [&](const std::vector<std::size_t>& idx) { return sft_objective(gather(data, idx)); });
  art.final = model::snapshot(params);
  return art;
}

std::optional<Objective> parse_objective(std::string_view text) {
  if (text == "sft") return Objective::Sft;
  if (text == "dpo+sft") return Objective::DpoSft;
  if (text == "kto+sft") return Objective::KtoSft;
  return std::nullopt;
}

std::string_view to_string(Objective objective) {
  switch (objective) {
    case Objective::Sft: return "sft";
    case Objective::DpoSft: return "dpo+sft";
    case Objective::KtoSft: return "kto+sft";
  }
  return "?";
}

TwoStageResult two_stage_train(const ModelParams& base, const std::vector<TokenizedPair>& pairs,
                               const std::vector<MaskedSequence>& sft_data, const TrainConfig& config,
                               Objective objective) {
  config.validate();
  if (sft_data.empty()) throw std::invalid_argument("no SFT data");
  TwoStageResult result{std::nullopt, {}, base, {}};
  if (objective != Objective::Sft) {
    if (pairs.empty()) throw std::invalid_argument("no preference pairs");
    LoraAdapter pref = model::init_adapter(base, config.lora_rank, config.lora_alpha, mix(config.seed, 11));
    result.preference = preference_train(
        base, pref, pairs, config, objective == Objective::DpoSft ? PreferenceObjective::Dpo : PreferenceObjective::Kto);
    result.merged_base = model::lora_merge(base, pref);
  }
  result.sft_adapter = model::init_adapter(result.merged_base, config.lora_rank, config.lora_alpha, mix(config.seed, 12));
  result.sft = sft_train(result.merged_base, result.sft_adapter, sft_data, config);
  return result;
}

std::vector<double> pair_deltas(const ModelView& policy, const ModelView& reference,
                                const std::vector<TokenizedPair>& pairs, std::size_t workers) {
  std::vector<double> out(pairs.size(), 0.0);
  parallel_for(pairs.size(), workers, [&](std::size_t i) {
    out[i] = dpo_loss(policy, reference, pairs[i].chosen, pairs[i].rejected, 1.0).delta;
  });
  return out;
}

}  // namespace spfg::align
