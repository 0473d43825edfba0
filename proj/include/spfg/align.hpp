#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "spfg/corpus.hpp"
#include "spfg/datagen.hpp"
#include "spfg/model.hpp"

// Two-stage training: chat-sequence construction with prompt masking,
// masked SFT, DPO/KTO preference objectives, AdamW with warmup + cosine decay.
namespace spfg::align {

using model::LoraAdapter;
using model::Matrix;
using model::ModelParams;
using model::TokenId;

// ---------------------------------------------------------------------------
// Sequences

struct MaskedSequence {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> mask;
  std::size_t prompt_len = 0;  // index of the ASST marker

  std::span<const TokenId> prompt() const { return {tokens.data(), prompt_len + 1}; }
  std::span<const TokenId> response() const {
    return {tokens.data() + prompt_len + 1, tokens.size() - prompt_len - 1};
  }
  std::size_t response_tokens() const { return tokens.size() - prompt_len - 1; }
};

// [SYS] system [USR] user [ASST] response [EOS]; everything through [ASST]
// is masked out. Throws DataError on an empty response or when the result
// exceeds max_len.
MaskedSequence assemble_sequence(std::string_view system, std::string_view user, std::string_view response,
                                 std::size_t max_len);

// Prompt text for the conversational layout. The user template has the
// slots {speaker_level} and {source}.
struct ChatFormat {
  std::string system;
  datagen::PromptTemplate user;
  std::size_t max_len = 512;
};

// Short prompt sized for the toy context window.
ChatFormat toy_chat_format(std::size_t max_len = 512);
// The full correction-and-feedback instruction prompt.
ChatFormat full_chat_format(std::size_t max_len = 768);

// Renders the prompt and the response as its JSON text. When the result is
// longer than format.max_len the source is shortened (on a UTF-8 boundary);
// if that cannot make it fit, DataError.
MaskedSequence build_masked_sequence(std::string_view source, corpus::CefrBand cefr,
                                     const datagen::GenerationResponse& response, const ChatFormat& format);

MaskedSequence sequence_for_record(const corpus::UtteranceRecord& record, const ChatFormat& format);

struct TokenizedPair {
  MaskedSequence chosen;
  MaskedSequence rejected;
};

TokenizedPair tokenize_pair(const datagen::PreferencePair& pair, const ChatFormat& format);

// Prompt of `prompt_from` followed by the response of `response_from`. With
// max_len > 0 the response tail is cut so the result fits (at least one
// response token is kept).
MaskedSequence recombine(const MaskedSequence& prompt_from, const MaskedSequence& response_from,
                         std::size_t max_len = 0);

// ---------------------------------------------------------------------------
// Losses

// A model as seen by a loss: base parameters plus an optional adapter.
struct ModelView {
  const ModelParams* params = nullptr;
  const LoraAdapter* adapter = nullptr;
};

double sequence_logprob(const ModelView& m, const MaskedSequence& seq);
// One masked log-probability per sequence, evaluated on `workers` threads.
std::vector<double> sequence_logprobs(const ModelView& m, const std::vector<MaskedSequence>& seqs,
                                      std::size_t workers = 1);

// -sum_t m_t log p(s_t | s_<t)
double masked_nll(const ModelView& m, const MaskedSequence& seq);
double mean_masked_nll(const ModelView& m, const std::vector<MaskedSequence>& seqs, std::size_t workers = 1);

struct DpoValue {
  double loss = 0.0;
  double delta = 0.0;
};

// Log-ratios are log pi_policy - log pi_ref for the chosen and the rejected response.
DpoValue dpo_from_logratios(double chosen_logratio, double rejected_logratio, double beta);

// Throws DataError when the two sequences have different prompt regions.
DpoValue dpo_loss(const ModelView& policy, const ModelView& reference, const MaskedSequence& chosen,
                  const MaskedSequence& rejected, double beta);

struct KtoOptions {
  double beta = 0.1;
  double lambda_desirable = 1.0;
  double lambda_undesirable = 1.0;
};

struct KtoExample {
  MaskedSequence seq;
  bool desirable = true;
};

struct KtoValue {
  double loss = 0.0;
  double z0 = 0.0;
  std::vector<double> d_reward;    // dloss / dr_i
  std::vector<double> d_mismatch;  // dloss / dr'_i for the mismatched completions
};

// rewards[i] = beta * (log pi_policy - log pi_ref) of example i; mismatch[i]
// is the same quantity for prompt i paired with response i+1 (cyclic).
// Throws std::invalid_argument for fewer than two examples.
KtoValue kto_from_rewards(std::span<const double> rewards, std::span<const double> mismatch,
                          const std::vector<bool>& desirable, const KtoOptions& options);

double kto_loss(const ModelView& policy, const ModelView& reference, const std::vector<KtoExample>& batch,
                const KtoOptions& options);

// Batch objectives over policy log-probabilities, as used by the training
// stages. The DPO variant takes reference log-probs (chosen, rejected) per
// pair; the KTO variant evaluates the reference itself, including the
// mismatched completions.
model::ScalarObjective sft_objective(const std::vector<MaskedSequence>& batch);
model::ScalarObjective dpo_objective(const std::vector<TokenizedPair>& batch, std::vector<double> ref_logprobs,
                                     double beta);
model::ScalarObjective kto_objective(const std::vector<KtoExample>& batch, const ModelView& reference,
                                     const KtoOptions& options, std::size_t workers = 1);

// ---------------------------------------------------------------------------
// Configuration and schedule

struct TrainConfig {
  double beta = 0.1;
  double lr = 2e-4;
  double warmup_ratio = 0.03;
  int per_step_batch = 1;
  int grad_accum = 16;
  int epochs = 1;
  int max_len = 512;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  int lora_rank = 16;
  double lora_alpha = 32.0;
  double kto_lambda_desirable = 1.0;
  double kto_lambda_undesirable = 1.0;
  // Stage-1 overrides; zero means "same as Stage 2".
  int pref_epochs = 0;
  double pref_lr = 0.0;
  // Optional full-parameter warmup of a freshly initialized base.
  int pretrain_epochs = 0;
  double pretrain_lr = 1e-3;
  std::size_t workers = 1;

  int effective_batch() const { return per_step_batch * grad_accum; }
  void validate() const;  // throws DataError
  nlohmann::ordered_json to_json() const;
};

struct RunConfig {
  TrainConfig train;
  model::ToyLmConfig model;
};

// Accepts a flat JSON object or `key = value` lines (# comments). Model shape
// keys carry a "model." prefix. Unknown keys and bad values throw DataError.
RunConfig parse_run_config(std::string_view text);
std::string hash_run_config(const RunConfig& config);

std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio);
// Step numbers start at 1.
double learning_rate(std::size_t step, std::size_t total_steps, double peak, double warmup_ratio);

// Decoupled weight decay Adam over an ordered list of tensors.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}
  void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

// ---------------------------------------------------------------------------
// Stages

enum class StageTag { Pretrain, Preference, Sft };
std::string_view to_string(StageTag tag);

struct LossPoint {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

std::string trace_csv(const std::vector<LossPoint>& trace);

struct StageArtifacts {
  StageTag tag = StageTag::Sft;
  model::ParameterSnapshot final;  // base + this stage's adapter
  std::vector<LossPoint> trace;    // one entry per optimizer step
  std::optional<model::ParameterSnapshot> merged_base;
};

// Number of optimizer steps one epoch takes over n items.
std::size_t steps_per_epoch(std::size_t n, std::size_t batch);

// Trains `adapter` on the mean masked NLL; base stays frozen.
StageArtifacts sft_train(const ModelParams& base, LoraAdapter& adapter, const std::vector<MaskedSequence>& data,
                         const TrainConfig& config);

enum class PreferenceObjective { Dpo, Kto };

// Trains `adapter` against the frozen reference `base`.
StageArtifacts preference_train(const ModelParams& base, LoraAdapter& adapter,
                                const std::vector<TokenizedPair>& pairs, const TrainConfig& config,
                                PreferenceObjective objective);

// Full-parameter next-token training on whole sequences (mask all ones after
// position 0). Used to give a fresh toy model generic language statistics.
StageArtifacts pretrain_base(ModelParams& params, const std::vector<std::vector<TokenId>>& texts,
                             const TrainConfig& config);

enum class Objective { Sft, DpoSft, KtoSft };
std::optional<Objective> parse_objective(std::string_view text);
std::string_view to_string(Objective objective);

struct TwoStageResult {
  std::optional<StageArtifacts> preference;
  StageArtifacts sft;
  ModelParams merged_base;
  LoraAdapter sft_adapter;
};

TwoStageResult two_stage_train(const ModelParams& base, const std::vector<TokenizedPair>& pairs,
                               const std::vector<MaskedSequence>& sft_data, const TrainConfig& config,
                               Objective objective);

// Delta of every pair under policy vs reference.
std::vector<double> pair_deltas(const ModelView& policy, const ModelView& reference,
                                const std::vector<TokenizedPair>& pairs, std::size_t workers = 1);

}  // namespace spfg::align
