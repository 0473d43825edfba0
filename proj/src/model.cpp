#include "spfg/model.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <stdexcept>

#include "spfg/digest.hpp"
#include "spfg/error.hpp"
#include "spfg/parallel.hpp"

namespace spfg::model {

using Eigen::VectorXd;

std::vector<TokenId> encode_bytes(std::string_view text) {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
  return out;
}

std::string decode_bytes(std::span<const TokenId> tokens) {
  std::string out;
  for (TokenId t : tokens) {
    if (t >= 0 && t < kByteVocab) out.push_back(static_cast<char>(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config

void ToyLmConfig::validate() const {
  if (vocab_size != kVocabSize) throw std::invalid_argument("vocab_size must be 260");
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || context_len <= 0 || ff_mult <= 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
}

std::string ToyLmConfig::canonical() const {
  return "vocab_size=" + std::to_string(vocab_size) + ";d_model=" + std::to_string(d_model) +
         ";n_layers=" + std::to_string(n_layers) + ";n_heads=" + std::to_string(n_heads) +
         ";context_len=" + std::to_string(context_len) + ";ff_mult=" + std::to_string(ff_mult);
}

std::string ToyLmConfig::hash() const { return sha256_hex(canonical()); }

nlohmann::json ToyLmConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model},         {"n_layers", n_layers},
          {"n_heads", n_heads},       {"context_len", context_len}, {"ff_mult", ff_mult},
          {"seed", seed}};
}

ToyLmConfig ToyLmConfig::from_json(const nlohmann::json& j) {
  ToyLmConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.context_len = j.value("context_len", c.context_len);
  c.ff_mult = j.value("ff_mult", c.ff_mult);
  c.seed = j.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

std::string layer_name(int l, const char* suffix) { return "layer" + std::to_string(l) + "." + suffix; }

constexpr double kInitStd = 0.02;
constexpr double kLnEps = 1e-5;

Matrix gaussian(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

}  // namespace

const Matrix& ModelParams::at(const std::string& name) const {
  auto it = weights.find(name);
  if (it == weights.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

Matrix& ModelParams::at(const std::string& name) {
  auto it = weights.find(name);
  if (it == weights.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

std::size_t ModelParams::size() const {
  std::size_t n = 0;
  for (const auto& [k, m] : weights) n += static_cast<std::size_t>(m.size());
  return n;
}

std::size_t LoraAdapter::size() const {
  std::size_t n = 0;
  for (const auto& [k, f] : factors) n += static_cast<std::size_t>(f.a.size() + f.b.size());
  return n;
}

ModelParams init_params(const ToyLmConfig& config) {
  config.validate();
  ModelParams p{config, {}};
  std::mt19937_64 rng(config.seed);
  const int d = config.d_model;
  const int f = config.ff_mult * d;
  const int v = config.vocab_size;
  auto& w = p.weights;
  w["tok_emb"] = gaussian(v, d, kInitStd, rng);
  w["pos_emb"] = gaussian(config.context_len, d, kInitStd, rng);
  for (int l = 0; l < config.n_layers; ++l) {
    w[layer_name(l, "ln1.g")] = Matrix::Ones(d, 1);
    w[layer_name(l, "ln1.b")] = Matrix::Zero(d, 1);
    w[layer_name(l, "attn.wq")] = gaussian(d, d, kInitStd, rng);
    w[layer_name(l, "attn.wk")] = gaussian(d, d, kInitStd, rng);
    w[layer_name(l, "attn.wv")] = gaussian(d, d, kInitStd, rng);
    w[layer_name(l, "attn.wo")] = gaussian(d, d, kInitStd, rng);
    w[layer_name(l, "ln2.g")] = Matrix::Ones(d, 1);
    w[layer_name(l, "ln2.b")] = Matrix::Zero(d, 1);
    w[layer_name(l, "mlp.w1")] = gaussian(f, d, kInitStd, rng);
    w[layer_name(l, "mlp.b1")] = Matrix::Zero(f, 1);
    w[layer_name(l, "mlp.w2")] = gaussian(d, f, kInitStd, rng);
    w[layer_name(l, "mlp.b2")] = Matrix::Zero(d, 1);
  }
  w["lnf.g"] = Matrix::Ones(d, 1);
  w["lnf.b"] = Matrix::Zero(d, 1);
  w["out.w"] = gaussian(v, d, kInitStd, rng);
  w["out.b"] = Matrix::Zero(v, 1);
  return p;
}

std::vector<std::string> lora_targets(const ToyLmConfig& config) {
  std::vector<std::string> out;
  for (int l = 0; l < config.n_layers; ++l) {
    out.push_back(layer_name(l, "attn.wq"));
    out.push_back(layer_name(l, "attn.wv"));
  }
  return out;
}

LoraAdapter init_adapter(const ModelParams& params, int rank, double alpha, std::uint64_t seed) {
  if (rank <= 0) throw std::invalid_argument("LoRA rank must be positive");
  LoraAdapter adapter{rank, alpha, {}};
  std::mt19937_64 rng(seed);
  for (const auto& name : lora_targets(params.config)) {
    const Matrix& w = params.at(name);
    adapter.factors[name] = {gaussian(rank, static_cast<int>(w.cols()), kInitStd, rng),
                             Matrix::Zero(w.rows(), rank)};
  }
  return adapter;
}

ModelParams lora_merge(const ModelParams& params, const LoraAdapter& adapter) {
  ModelParams merged = params;
  for (const auto& [name, f] : adapter.factors) {
    Matrix& w = merged.at(name);
    if (f.a.rows() != adapter.rank || f.b.cols() != adapter.rank || f.b.rows() != w.rows() ||
        f.a.cols() != w.cols()) {
      throw std::invalid_argument("LoRA factor shape mismatch for " + name);
    }
    w += adapter.scale() * (f.b * f.a);
  }
  return merged;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

struct LayerCache {
  Matrix x_in, xhat1, a, q, k, v, zq, zv, o, x1, xhat2, c, u, gl;
  VectorXd rstd1, rstd2;
  std::vector<Matrix> probs;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Matrix xhatf, f, logits;
  VectorXd rstdf;
};

void layer_norm(const Matrix& x, const Matrix& g, const Matrix& b, Matrix& xhat, VectorXd& rstd,
                Matrix& y) {
  const auto d = static_cast<double>(x.cols());
  const VectorXd mean = x.rowwise().sum() / d;
  xhat = x.colwise() - mean;
  const VectorXd var = xhat.array().square().rowwise().sum() / d;
  rstd = (var.array() + kLnEps).rsqrt();
  xhat = xhat.array().colwise() * rstd.array();
  y = (xhat.array().rowwise() * g.col(0).transpose().array()).rowwise() + b.col(0).transpose().array();
}

// Returns dx; accumulates gain/bias grads when the pointers are set.
Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const VectorXd& rstd, const Matrix& g,
                           Matrix* dg, Matrix* db) {
  if (dg) *dg += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
  if (db) *db += dy.colwise().sum().transpose();
  const Matrix dxhat = dy.array().rowwise() * g.col(0).transpose().array();
  const auto d = static_cast<double>(dy.cols());
  const VectorXd mean_dxhat = dxhat.rowwise().sum() / d;
  const VectorXd mean_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().sum() / d;
  Matrix dx = dxhat.colwise() - mean_dxhat;
  dx -= (xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
  return dx.array().colwise() * rstd.array();
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

const LoraFactors* find_factor(const LoraAdapter* adapter, const std::string& name) {
  if (!adapter) return nullptr;
  auto it = adapter->factors.find(name);
  return it == adapter->factors.end() ? nullptr : &it->second;
}

void check_tokens(const ModelParams& params, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw std::invalid_argument("empty token sequence");
  if (static_cast<int>(tokens.size()) > params.config.context_len) {
    throw std::invalid_argument("sequence length " + std::to_string(tokens.size()) +
                                " exceeds context " + std::to_string(params.config.context_len));
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= params.config.vocab_size) {
      throw std::invalid_argument("token id " + std::to_string(t) + " out of vocabulary");
    }
  }
}

// q or v projection with optional low-rank update; z receives a * A^T.
Matrix project(const Matrix& a, const Matrix& w, const LoraFactors* lora, double scale, Matrix& z) {
  Matrix out = a * w.transpose();
  if (lora) {
    z = a * lora->a.transpose();
    out.noalias() += scale * (z * lora->b.transpose());
  }
  return out;
}

ForwardCache run_forward(const ModelParams& params, const LoraAdapter* adapter,
                         std::span<const TokenId> tokens) {
  check_tokens(params, tokens);
  const auto& cfg = params.config;
  const int T = static_cast<int>(tokens.size());
  const int d = cfg.d_model;
  const int dh = d / cfg.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double lora_scale = adapter ? adapter->scale() : 0.0;

  const Matrix& tok = params.at("tok_emb");
  const Matrix& pos = params.at("pos_emb");
  Matrix x(T, d);
  for (int t = 0; t < T; ++t) x.row(t) = tok.row(tokens[static_cast<std::size_t>(t)]) + pos.row(t);

  ForwardCache cache;
  cache.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];
    lc.x_in = x;
    layer_norm(x, params.at(layer_name(l, "ln1.g")), params.at(layer_name(l, "ln1.b")), lc.xhat1,
               lc.rstd1, lc.a);
    const auto wq_name = layer_name(l, "attn.wq");
    const auto wv_name = layer_name(l, "attn.wv");
    lc.q = project(lc.a, params.at(wq_name), find_factor(adapter, wq_name), lora_scale, lc.zq);
    lc.k = lc.a * params.at(layer_name(l, "attn.wk")).transpose();
    lc.v = project(lc.a, params.at(wv_name), find_factor(adapter, wv_name), lora_scale, lc.zv);

    lc.o = Matrix::Zero(T, d);
    lc.probs.resize(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      Matrix s = (lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose()) * att_scale;
      for (int i = 0; i < T; ++i) {
        const double mx = s.row(i).head(i + 1).maxCoeff();
        double sum = 0.0;
        for (int j = 0; j <= i; ++j) {
          s(i, j) = std::exp(s(i, j) - mx);
          sum += s(i, j);
        }
        for (int j = 0; j <= i; ++j) s(i, j) /= sum;
        for (int j = i + 1; j < T; ++j) s(i, j) = 0.0;
      }
      lc.o.middleCols(h * dh, dh).noalias() = s * lc.v.middleCols(h * dh, dh);
      lc.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    lc.x1 = x + lc.o * params.at(layer_name(l, "attn.wo")).transpose();

    layer_norm(lc.x1, params.at(layer_name(l, "ln2.g")), params.at(layer_name(l, "ln2.b")), lc.xhat2,
               lc.rstd2, lc.c);
    lc.u = (lc.c * params.at(layer_name(l, "mlp.w1")).transpose()).rowwise() +
           params.at(layer_name(l, "mlp.b1")).col(0).transpose();
    lc.gl = lc.u.unaryExpr([](double u) { return gelu(u); });
    x = lc.x1 + lc.gl * params.at(layer_name(l, "mlp.w2")).transpose();
    x.rowwise() += params.at(layer_name(l, "mlp.b2")).col(0).transpose();
  }
  layer_norm(x, params.at("lnf.g"), params.at("lnf.b"), cache.xhatf, cache.rstdf, cache.f);
  cache.logits = (cache.f * params.at("out.w").transpose()).rowwise() +
                 params.at("out.b").col(0).transpose();
  return cache;
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

Matrix* grad_slot(TensorMap& base, const std::string& name) {
  if (base.empty()) return nullptr;
  return &base.at(name);
}

void run_backward(const ModelParams& params, const LoraAdapter* adapter, std::span<const TokenId> tokens,
                  const ForwardCache& cache, const Matrix& dlogits, Gradients& grads) {
  const auto& cfg = params.config;
  const int T = static_cast<int>(tokens.size());
  const int d = cfg.d_model;
  const int dh = d / cfg.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double lora_scale = adapter ? adapter->scale() : 0.0;
  TensorMap& gb = grads.base;
  const bool base = !gb.empty();

  if (base) {
    gb.at("out.w").noalias() += dlogits.transpose() * cache.f;
    gb.at("out.b") += dlogits.colwise().sum().transpose();
  }
  Matrix df = dlogits * params.at("out.w");
  Matrix dx = layer_norm_backward(df, cache.xhatf, cache.rstdf, params.at("lnf.g"), grad_slot(gb, "lnf.g"),
                                  grad_slot(gb, "lnf.b"));

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];
    // MLP block
    const Matrix& w2 = params.at(layer_name(l, "mlp.w2"));
    const Matrix& w1 = params.at(layer_name(l, "mlp.w1"));
    if (base) {
      gb.at(layer_name(l, "mlp.w2")).noalias() += dx.transpose() * lc.gl;
      gb.at(layer_name(l, "mlp.b2")) += dx.colwise().sum().transpose();
    }
    Matrix du = (dx * w2).array() * lc.u.unaryExpr([](double u) { return gelu_grad(u); }).array();
    if (base) {
      gb.at(layer_name(l, "mlp.w1")).noalias() += du.transpose() * lc.c;
      gb.at(layer_name(l, "mlp.b1")) += du.colwise().sum().transpose();
    }
    Matrix dc = du * w1;
    dx += layer_norm_backward(dc, lc.xhat2, lc.rstd2, params.at(layer_name(l, "ln2.g")),
                              grad_slot(gb, layer_name(l, "ln2.g")), grad_slot(gb, layer_name(l, "ln2.b")));

    // Attention block
    const Matrix& wo = params.at(layer_name(l, "attn.wo"));
    if (base) gb.at(layer_name(l, "attn.wo")).noalias() += dx.transpose() * lc.o;
    const Matrix dout = dx * wo;
    Matrix dq = Matrix::Zero(T, d);
    Matrix dk = Matrix::Zero(T, d);
    Matrix dv = Matrix::Zero(T, d);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const Matrix& p = lc.probs[static_cast<std::size_t>(h)];
      const auto doh = dout.middleCols(h * dh, dh);
      const Matrix dp = doh * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * doh;
      const VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
      const Matrix ds = (p.array() * (dp.colwise() - rowdot).array()).matrix() * att_scale;
      dq.middleCols(h * dh, dh).noalias() = ds * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * lc.q.middleCols(h * dh, dh);
    }
    const auto wq_name = layer_name(l, "attn.wq");
    const auto wk_name = layer_name(l, "attn.wk");
    const auto wv_name = layer_name(l, "attn.wv");
    Matrix da = dq * params.at(wq_name) + dk * params.at(wk_name) + dv * params.at(wv_name);
    if (base) {
      gb.at(wq_name).noalias() += dq.transpose() * lc.a;
      gb.at(wk_name).noalias() += dk.transpose() * lc.a;
      gb.at(wv_name).noalias() += dv.transpose() * lc.a;
    }
    for (const auto& [name, dproj, z] : {std::tuple{wq_name, &dq, &lc.zq}, std::tuple{wv_name, &dv, &lc.zv}}) {
      const LoraFactors* f = find_factor(adapter, name);
      if (!f) continue;
      const Matrix dz = lora_scale * (*dproj * f->b);
      auto git = grads.adapter.find(name);
      if (git != grads.adapter.end()) {
        git->second.b.noalias() += lora_scale * (dproj->transpose() * *z);
        git->second.a.noalias() += dz.transpose() * lc.a;
      }
      da.noalias() += dz * f->a;
    }
    dx += layer_norm_backward(da, lc.xhat1, lc.rstd1, params.at(layer_name(l, "ln1.g")),
                              grad_slot(gb, layer_name(l, "ln1.g")), grad_slot(gb, layer_name(l, "ln1.b")));
  }
  if (base) {
    Matrix& dtok = gb.at("tok_emb");
    Matrix& dpos = gb.at("pos_emb");
    for (int t = 0; t < T; ++t) {
      dtok.row(tokens[static_cast<std::size_t>(t)]) += dx.row(t);
      dpos.row(t) += dx.row(t);
    }
  }
}

}  // namespace

Matrix forward_logits(const ModelParams& params, const LoraAdapter* adapter, std::span<const TokenId> tokens) {
  return run_forward(params, adapter, tokens).logits;
}

Matrix forward_logprobs(const ModelParams& params, const LoraAdapter* adapter,
                        std::span<const TokenId> tokens) {
  return log_softmax_rows(forward_logits(params, adapter, tokens));
}

std::vector<double> token_logprobs(const Matrix& logprobs, std::span<const TokenId> tokens) {
  std::vector<double> out(tokens.size(), 0.0);
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    out[t] = logprobs(static_cast<Eigen::Index>(t - 1), tokens[t]);
  }
  return out;
}

namespace {
void check_mask(std::span<const TokenId> tokens, std::span<const std::uint8_t> mask) {
  if (mask.size() != tokens.size()) throw std::invalid_argument("mask length differs from token count");
  bool any = false;
  for (std::size_t t = 1; t < mask.size(); ++t) any = any || mask[t] != 0;
  if (!any) throw std::invalid_argument("mask selects no predictable position");
}
}  // namespace

double sequence_logprob(const ModelParams& params, const LoraAdapter* adapter,
                        std::span<const TokenId> tokens, std::span<const std::uint8_t> mask) {
  check_mask(tokens, mask);
  const auto lp = token_logprobs(forward_logprobs(params, adapter, tokens), tokens);
  double sum = 0.0;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    if (mask[t]) sum += lp[t];
  }
  return sum;
}

Matrix logit_gradient(const Matrix& logprobs, std::span<const TokenId> tokens,
                      std::span<const double> weights) {
  Matrix g = Matrix::Zero(logprobs.rows(), logprobs.cols());
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    const double w = weights[t];
    if (w == 0.0) continue;
    const auto row = static_cast<Eigen::Index>(t - 1);
    g.row(row) = -w * logprobs.row(row).array().exp();
    g(row, tokens[t]) += w;
  }
  return g;
}

void Gradients::add(const Gradients& other) {
  for (auto& [k, m] : base) m += other.base.at(k);
  for (auto& [k, f] : adapter) {
    const auto& o = other.adapter.at(k);
    f.a += o.a;
    f.b += o.b;
  }
}

void Gradients::scale(double factor) {
  for (auto& [k, m] : base) m *= factor;
  for (auto& [k, f] : adapter) {
    f.a *= factor;
    f.b *= factor;
  }
}

std::size_t Gradients::size() const {
  std::size_t n = 0;
  for (const auto& [k, m] : base) n += static_cast<std::size_t>(m.size());
  for (const auto& [k, f] : adapter) n += static_cast<std::size_t>(f.a.size() + f.b.size());
  return n;
}

Gradients zero_gradients(const ModelParams& params, const LoraAdapter* adapter, bool with_base) {
  Gradients g;
  if (with_base) {
    for (const auto& [k, m] : params.weights) g.base[k] = Matrix::Zero(m.rows(), m.cols());
  }
  if (adapter) {
    for (const auto& [k, f] : adapter->factors) {
      g.adapter[k] = {Matrix::Zero(f.a.rows(), f.a.cols()), Matrix::Zero(f.b.rows(), f.b.cols())};
    }
  }
  return g;
}

double backward_weighted_logprob(const ModelParams& params, const LoraAdapter* adapter,
                                 std::span<const TokenId> tokens, std::span<const double> weights,
                                 Gradients& grads) {
  if (weights.size() != tokens.size()) throw std::invalid_argument("weights length differs from token count");
  const ForwardCache cache = run_forward(params, adapter, tokens);
  const Matrix logprobs = log_softmax_rows(cache.logits);
  double value = 0.0;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    if (weights[t] != 0.0) value += weights[t] * logprobs(static_cast<Eigen::Index>(t - 1), tokens[t]);
  }
  run_backward(params, adapter, tokens, cache, logit_gradient(logprobs, tokens, weights), grads);
  return value;
}

GradientResult parameter_gradients(const ModelParams& params, const LoraAdapter* adapter,
                                   const ScalarObjective& objective, bool with_base, std::size_t workers) {
  const std::size_t n = objective.terms.size();
  std::vector<double> logps(n, 0.0);
  parallel_for(n, workers, [&](std::size_t i) {
    const auto& term = objective.terms[i];
    logps[i] = sequence_logprob(params, adapter, term.tokens, term.mask);
  });
  std::vector<double> coeff(n, 0.0);
  GradientResult result;
  result.loss = objective.loss(logps, coeff);
  if (!std::isfinite(result.loss)) throw std::domain_error("non-finite loss");
  result.grads = zero_gradients(params, adapter, with_base);

  std::vector<Gradients> partial(n);
  parallel_for(n, workers, [&](std::size_t i) {
    if (coeff[i] == 0.0) return;
    const auto& term = objective.terms[i];
    std::vector<double> w(term.tokens.size(), 0.0);
    for (std::size_t t = 1; t < w.size(); ++t) w[t] = term.mask[t] ? coeff[i] : 0.0;
    partial[i] = zero_gradients(params, adapter, with_base);
    backward_weighted_logprob(params, adapter, term.tokens, w, partial[i]);
  });
  // fixed reduction order keeps results independent of scheduling
  for (std::size_t i = 0; i < n; ++i) {
    if (coeff[i] != 0.0) result.grads.add(partial[i]);
  }
  return result;
}

std::vector<TokenId> greedy_generate(const ModelParams& params, const LoraAdapter* adapter,
                                     std::vector<TokenId> prompt, int max_new) {
  std::vector<TokenId> out;
  for (int step = 0; step < max_new; ++step) {
    if (static_cast<int>(prompt.size()) >= params.config.context_len) break;
    const Matrix logits = forward_logits(params, adapter, prompt);
    Eigen::Index best = 0;
    logits.row(logits.rows() - 1).maxCoeff(&best);
    const auto next = static_cast<TokenId>(best);
    out.push_back(next);
    if (next == kEos) break;
    prompt.push_back(next);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Snapshots

namespace {
constexpr std::string_view kMagic = "SPFGSNAP";
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw DataError("snapshot truncated");
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}
}  // namespace

bool ParameterSnapshot::operator==(const ParameterSnapshot& other) const {
  if (config_hash != other.config_hash || meta != other.meta || tensors.size() != other.tensors.size()) {
    return false;
  }
  for (const auto& [k, m] : tensors) {
    auto it = other.tensors.find(k);
    if (it == other.tensors.end() || it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
      return false;
    }
    if (m.size() && std::memcmp(m.data(), it->second.data(), sizeof(double) * static_cast<std::size_t>(m.size())) != 0) {
      return false;
    }
  }
  return true;
}

ParameterSnapshot snapshot(const ModelParams& params, const LoraAdapter* adapter) {
  ParameterSnapshot snap;
  snap.config_hash = params.config.hash();
  snap.config = params.config.to_json();
  snap.tensors = params.weights;
  if (adapter) {
    snap.meta["lora_rank"] = adapter->rank;
    snap.meta["lora_alpha"] = adapter->alpha;
    for (const auto& [k, f] : adapter->factors) {
      snap.tensors["lora." + k + ".A"] = f.a;
      snap.tensors["lora." + k + ".B"] = f.b;
    }
  }
  return snap;
}

ModelParams restore_params(const ParameterSnapshot& snap) {
  ModelParams p;
  p.config = ToyLmConfig::from_json(snap.config);
  if (p.config.hash() != snap.config_hash) throw DataError("snapshot config hash does not match its config");
  const ModelParams shape = init_params(p.config);
  for (const auto& [k, m] : shape.weights) {
    auto it = snap.tensors.find(k);
    if (it == snap.tensors.end()) throw DataError("snapshot lacks tensor " + k);
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
      throw DataError("snapshot tensor " + k + " has the wrong shape");
    }
    p.weights[k] = it->second;
  }
  return p;
}

LoraAdapter restore_adapter(const ParameterSnapshot& snap) {
  if (!snap.meta.contains("lora_rank")) throw std::invalid_argument("snapshot has no adapter");
  LoraAdapter a;
  a.rank = snap.meta.at("lora_rank").get<int>();
  a.alpha = snap.meta.at("lora_alpha").get<double>();
  for (const auto& name : lora_targets(ToyLmConfig::from_json(snap.config))) {
    auto ai = snap.tensors.find("lora." + name + ".A");
    auto bi = snap.tensors.find("lora." + name + ".B");
    if (ai == snap.tensors.end() || bi == snap.tensors.end()) throw DataError("snapshot lacks LoRA factors for " + name);
    a.factors[name] = {ai->second, bi->second};
  }
  return a;
}

std::string serialize_snapshot(const ParameterSnapshot& snap) {
  nlohmann::json header;
  header["config_hash"] = snap.config_hash;
  header["config"] = snap.config;
  header["meta"] = snap.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [k, m] : snap.tensors) {
    header["tensors"].push_back({{"name", k}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  const std::string h = header.dump();
  std::string out(kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, h.size());
  out += h;
  // row-major doubles, tensors in header order
  for (const auto& [k, m] : snap.tensors) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) put<double>(out, m(i, j));
    }
  }
  return out;
}

ParameterSnapshot parse_snapshot(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw DataError("not a snapshot file");
  std::size_t pos = kMagic.size();
  if (take<std::uint32_t>(bytes, pos) != kVersion) throw DataError("unsupported snapshot version");
  const auto header_len = take<std::uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw DataError("snapshot truncated");
  const auto header = nlohmann::json::parse(bytes.substr(pos, header_len));
  pos += header_len;
  ParameterSnapshot snap;
  snap.config_hash = header.at("config_hash").get<std::string>();
  snap.config = header.at("config");
  snap.meta = header.at("meta");
  for (const auto& t : header.at("tensors")) {
    Matrix m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = take<double>(bytes, pos);
    }
    snap.tensors[t.at("name").get<std::string>()] = std::move(m);
  }
  if (pos != bytes.size()) throw DataError("trailing bytes in snapshot");
  return snap;
}

void save_snapshot(const std::filesystem::path& path, const ParameterSnapshot& snap) {
  write_file(path, serialize_snapshot(snap));
}

ParameterSnapshot load_snapshot(const std::filesystem::path& path) { return parse_snapshot(read_file(path)); }

ParameterSnapshot load_snapshot(const std::filesystem::path& path, const ToyLmConfig& expected) {
  auto snap = load_snapshot(path);
  if (snap.config_hash != expected.hash()) {
    throw DataError("snapshot " + path.string() + " was written for a different model config");
  }
  return snap;
}

}  // namespace spfg::model
