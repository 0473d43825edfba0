#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

// Byte-level decoder-only language model with LoRA adapters on the attention
// query and value projections. All arithmetic is double precision.
namespace spfg::model {

using Matrix = Eigen::MatrixXd;
using TokenId = int;

inline constexpr int kByteVocab = 256;
inline constexpr TokenId kSys = 256;
inline constexpr TokenId kUsr = 257;
inline constexpr TokenId kAsst = 258;
inline constexpr TokenId kEos = 259;
inline constexpr int kVocabSize = 260;

std::vector<TokenId> encode_bytes(std::string_view text);
std::string decode_bytes(std::span<const TokenId> tokens);  // markers are skipped

struct ToyLmConfig {
  int vocab_size = kVocabSize;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int context_len = 512;
  int ff_mult = 4;
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
  // Shape-defining fields only; the seed does not change compatibility.
  std::string canonical() const;
  std::string hash() const;
  nlohmann::json to_json() const;
  static ToyLmConfig from_json(const nlohmann::json& j);
};

// Named tensors; vectors are stored as n x 1 matrices.
using TensorMap = std::map<std::string, Matrix>;

struct ModelParams {
  ToyLmConfig config;
  TensorMap weights;

  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);
  std::size_t size() const;
};

// Gaussian(0, 0.02) weights, unit LayerNorm gains, zero biases; seeded by config.seed.
ModelParams init_params(const ToyLmConfig& config);

struct LoraFactors {
  Matrix a;  // rank x d_in
  Matrix b;  // d_out x rank
};

struct LoraAdapter {
  int rank = 16;
  double alpha = 32.0;
  std::map<std::string, LoraFactors> factors;  // keyed by target weight name

  double scale() const { return alpha / static_cast<double>(rank); }
  std::size_t size() const;
};

// "layer<i>.attn.wq" and "layer<i>.attn.wv" for every layer.
std::vector<std::string> lora_targets(const ToyLmConfig& config);

// A ~ Gaussian(0, 0.02), B = 0, so the adapted model starts equal to the base.
LoraAdapter init_adapter(const ModelParams& params, int rank, double alpha, std::uint64_t seed);

// W' = W + (alpha / rank) * B * A for every target. Throws on shape mismatch.
ModelParams lora_merge(const ModelParams& params, const LoraAdapter& adapter);

// Raw logits, one row per position (T x vocab).
Matrix forward_logits(const ModelParams& params, const LoraAdapter* adapter,
                      std::span<const TokenId> tokens);

// Row t holds log p(next token | tokens[0..t]). Throws std::invalid_argument
// for out-of-vocabulary ids or sequences longer than the context.
Matrix forward_logprobs(const ModelParams& params, const LoraAdapter* adapter,
                        std::span<const TokenId> tokens);

// sum_t mask[t] * log p(tokens[t] | tokens[<t]). Position 0 has no context
// and never contributes. Throws when no position t >= 1 is selected.
double sequence_logprob(const ModelParams& params, const LoraAdapter* adapter,
                        std::span<const TokenId> tokens, std::span<const std::uint8_t> mask);

// Per-position log-probabilities of the observed next tokens; entry t is
// log p(tokens[t] | tokens[<t]) and entry 0 is 0.
std::vector<double> token_logprobs(const Matrix& logprobs, std::span<const TokenId> tokens);

// d/dlogits of sum_t weights[t] * logp[t-1][tokens[t]]; row t-1 is zero
// whenever weights[t] is zero.
Matrix logit_gradient(const Matrix& logprobs, std::span<const TokenId> tokens,
                      std::span<const double> weights);

struct Gradients {
  TensorMap base;                              // empty unless base grads were requested
  std::map<std::string, LoraFactors> adapter;  // empty when no adapter

  void add(const Gradients& other);
  void scale(double factor);
  std::size_t size() const;
};

Gradients zero_gradients(const ModelParams& params, const LoraAdapter* adapter, bool with_base);

// Adds the gradient of sum_t weights[t] * log p(tokens[t] | tokens[<t]) into
// `grads` and returns that sum. Base tensors are differentiated only when
// grads.base is non-empty.
double backward_weighted_logprob(const ModelParams& params, const LoraAdapter* adapter,
                                 std::span<const TokenId> tokens, std::span<const double> weights,
                                 Gradients& grads);

struct SequenceTerm {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> mask;
};

// A differentiable scalar built from policy sequence log-probabilities. `loss`
// receives one masked log-probability per term and writes dloss/dlogp into
// the second span.
struct ScalarObjective {
  std::vector<SequenceTerm> terms;
  std::function<double(std::span<const double>, std::span<double>)> loss;
};

struct GradientResult {
  double loss = 0.0;
  Gradients grads;
};

// Throws std::domain_error if the loss is not finite.
GradientResult parameter_gradients(const ModelParams& params, const LoraAdapter* adapter,
                                   const ScalarObjective& objective, bool with_base = false,
                                   std::size_t workers = 1);

// Argmax continuation until EOS or max_new tokens.
std::vector<TokenId> greedy_generate(const ModelParams& params, const LoraAdapter* adapter,
                                     std::vector<TokenId> prompt, int max_new);

// ---------------------------------------------------------------------------
// Snapshots

struct ParameterSnapshot {
  std::string config_hash;
  nlohmann::json config;
  nlohmann::json meta = nlohmann::json::object();
  TensorMap tensors;

  bool operator==(const ParameterSnapshot& other) const;
};

ParameterSnapshot snapshot(const ModelParams& params, const LoraAdapter* adapter = nullptr);
ModelParams restore_params(const ParameterSnapshot& snap);
// Throws std::invalid_argument when the snapshot carries no adapter.
LoraAdapter restore_adapter(const ParameterSnapshot& snap);

std::string serialize_snapshot(const ParameterSnapshot& snap);
ParameterSnapshot parse_snapshot(std::string_view bytes);
void save_snapshot(const std::filesystem::path& path, const ParameterSnapshot& snap);
// Refuses (DataError) when the stored config hash differs from `expected`.
ParameterSnapshot load_snapshot(const std::filesystem::path& path, const ToyLmConfig& expected);
ParameterSnapshot load_snapshot(const std::filesystem::path& path);

}  // namespace spfg::model
