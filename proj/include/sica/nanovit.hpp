#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sica/adapt.hpp"
#include "sica/domgen.hpp"
#include "sica/errors.hpp"
#include "sica/matio.hpp"
#include "sica/matrix.hpp"
#include "sica/metrics.hpp"
#include "sica/rng.hpp"
#include "sica/svd.hpp"

namespace sica {

// ---- configuration and checkpoint ----------------------------------------

struct ModelConfig {
  std::size_t d_feature = 64;
  std::size_t seq_len = 8;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t head_hidden = 32;
  std::uint64_t seed = 7;

  std::size_t token_dim() const { return d_feature / seq_len; }
  std::size_t mlp_hidden() const { return 4 * d_model; }

  void validate() const {
    if (d_feature == 0 || seq_len == 0 || d_model == 0 || n_heads == 0 || n_layers == 0 ||
        head_hidden == 0)
      throw std::invalid_argument("ModelConfig: all dimensions must be positive");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("ModelConfig: n_heads must divide d_model");
    if (d_feature % seq_len != 0)
      throw std::invalid_argument("ModelConfig: seq_len must divide d_feature");
  }
};

enum class Regime { Fft, Sica, Probe };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Fft: return "fft";
    case Regime::Sica: return "sica";
    default: return "probe";
  }
}

inline Regime regime_from_name(const std::string& s) {
  if (s == "fft") return Regime::Fft;
  if (s == "sica") return Regime::Sica;
  if (s == "probe") return Regime::Probe;
  throw std::invalid_argument("unknown regime: " + s);
}

struct Checkpoint {
  ModelConfig config;
  Regime regime = Regime::Probe;
  std::map<std::string, Matrix> params;
  std::map<std::string, LoraAdapter> adapters;  // keyed by attention matrix name

  const Matrix& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("checkpoint: missing tensor " + name);
    return it->second;
  }
};

inline std::vector<std::string> attention_matrix_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    for (const char* w : {"wq", "wk", "wv", "wo"})
      names.push_back("layer" + std::to_string(l) + ".attn." + w);
  return names;
}

// Expected shape of every tensor; doubles as the layout contract for
// checkpoint validation.
inline std::map<std::string, std::pair<std::size_t, std::size_t>> tensor_shapes(
    const ModelConfig& cfg, std::size_t head_out) {
  const std::size_t d = cfg.d_model;
  std::map<std::string, std::pair<std::size_t, std::size_t>> s;
  s["embed.w"] = {d, cfg.token_dim()};
  s["embed.b"] = {1, d};
  s["pos"] = {cfg.seq_len, d};
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    s[p + "ln1.g"] = {1, d};
    s[p + "ln1.b"] = {1, d};
    s[p + "attn.wq"] = {d, d};
    s[p + "attn.bq"] = {1, d};
    s[p + "attn.wk"] = {d, d};
    s[p + "attn.bk"] = {1, d};
    s[p + "attn.wv"] = {d, d};
    s[p + "attn.bv"] = {1, d};
    s[p + "attn.wo"] = {d, d};
    s[p + "attn.bo"] = {1, d};
    s[p + "ln2.g"] = {1, d};
    s[p + "ln2.b"] = {1, d};
    s[p + "mlp.w1"] = {cfg.mlp_hidden(), d};
    s[p + "mlp.b1"] = {1, cfg.mlp_hidden()};
    s[p + "mlp.w2"] = {d, cfg.mlp_hidden()};
    s[p + "mlp.b2"] = {1, d};
  }
  s["final_ln.g"] = {1, d};
  s["final_ln.b"] = {1, d};
  s["head.w1"] = {cfg.head_hidden, cfg.seq_len * d};
  s["head.b1"] = {1, cfg.head_hidden};
  s["head.w2"] = {head_out, cfg.head_hidden};
  s["head.b2"] = {1, head_out};
  return s;
}

inline std::size_t head_out_dim(const Checkpoint& ckpt) { return ckpt.at("head.w2").rows; }

// Seeded per-tensor init; the stream for each tensor depends only on
// (config seed, tensor name), never on construction order.
inline Checkpoint init_checkpoint(const ModelConfig& cfg, std::size_t head_out = 1) {
  cfg.validate();
  Checkpoint ckpt;
  ckpt.config = cfg;
  for (const auto& [name, shape] : tensor_shapes(cfg, head_out)) {
    const auto [rows, cols] = shape;
    Rng rng(rng::derive(cfg.seed, name));
    Matrix m(rows, cols);
    const bool is_gain = name.ends_with("ln1.g") || name.ends_with("ln2.g") || name == "final_ln.g";
    const bool is_bias_like = rows == 1;
    if (is_gain) {
      for (double& x : m.entries) x = 1.0;
    } else if (name == "pos") {
      for (double& x : m.entries) x = rng.uniform(-0.02, 0.02);
    } else if (!is_bias_like) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
      for (double& x : m.entries) x = rng.uniform(-bound, bound);
    }
    ckpt.params.emplace(name, std::move(m));
  }
  return ckpt;
}

inline void init_adapters(Checkpoint& ckpt, std::size_t rank, double alpha, std::uint64_t seed) {
  ckpt.adapters.clear();
  for (const std::string& name : attention_matrix_names(ckpt.config)) {
    const Matrix& w = ckpt.at(name);
    ckpt.adapters.emplace(name,
                          lora_init(w.rows, w.cols, rank, alpha, rng::derive(seed, name)));
  }
}

// ---- forward pass ---------------------------------------------------------

namespace nn {

constexpr double kLnEps = 1e-5;

struct LnCache {
  Matrix xhat;               // normalized rows
  std::vector<double> rstd;  // per row
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LnCache& cache) {
  const std::size_t n = x.cols;
  Matrix y(x.rows, n);
  cache.xhat = Matrix(x.rows, n);
  cache.rstd.resize(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.row_ptr(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xi[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xi[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd[i] = rstd;
    double* xh = cache.xhat.row_ptr(i);
    double* yi = y.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = (xi[j] - mean) * rstd;
      yi[j] = gain(0, j) * xh[j] + bias(0, j);
    }
  }
  return y;
}

// dx from dy given the cache; accumulates dgain/dbias.
inline Matrix layer_norm_backward(const Matrix& dy, const LnCache& cache, const Matrix& gain,
                                  Matrix& dgain, Matrix& dbias) {
  const std::size_t n = dy.cols;
  Matrix dx(dy.rows, n);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    const double* dyi = dy.row_ptr(i);
    const double* xh = cache.xhat.row_ptr(i);
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double dxhat = dyi[j] * gain(0, j);
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * xh[j];
      dgain(0, j) += dyi[j] * xh[j];
      dbias(0, j) += dyi[j];
    }
    mean_dxhat /= static_cast<double>(n);
    mean_dxhat_xhat /= static_cast<double>(n);
    double* dxi = dx.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double dxhat = dyi[j] * gain(0, j);
      dxi[j] = cache.rstd[i] * (dxhat - mean_dxhat - xh[j] * mean_dxhat_xhat);
    }
  }
  return dx;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475)); }

inline double gelu_grad(double x) {
  const double phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865475));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
  return phi + x * pdf;
}

inline void add_row_vector(Matrix& x, const Matrix& bias) {
  for (std::size_t i = 0; i < x.rows; ++i) {
    double* xi = x.row_ptr(i);
    for (std::size_t j = 0; j < x.cols; ++j) xi[j] += bias(0, j);
  }
}

inline Matrix column_sums(const Matrix& x) {
  Matrix s(1, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.row_ptr(i);
    for (std::size_t j = 0; j < x.cols; ++j) s(0, j) += xi[j];
  }
  return s;
}

}  // namespace nn

struct LinearCache {
  Matrix lora_mid;  // input * A^T when an adapter participated
  bool lora_used = false;
};

struct LayerCache {
  nn::LnCache ln1;
  Matrix y1;  // ln1 output, input of q/k/v projections
  LinearCache lora_q, lora_k, lora_v, lora_o;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // B*H softmax matrices, seq x seq
  Matrix ctx;                 // concatenated heads, input of o projection
  Matrix attn_out;
  nn::LnCache ln2;
  Matrix y2;     // ln2 output, input of mlp
  Matrix u;      // pre-gelu
  Matrix g_act;  // gelu(u)
};

struct ForwardCache {
  std::size_t batch = 0;
  Matrix tokens;  // (batch*seq) x token_dim
  Matrix x0;      // embedding output
  std::vector<LayerCache> layers;
  nn::LnCache final_ln;
  Matrix final_x;  // residual stream entering final LN
  Matrix readout;  // batch x (seq_len*d_model), concatenated final tokens
  Matrix h1;       // head pre-gelu
  Matrix a1;       // gelu(h1)
  Matrix logits;   // batch x head_out
};

namespace detail {

// y = x * W^T + bias, optionally with the LoRA branch of the adapter.
inline Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& bias,
                             const LoraAdapter* adapter, LinearCache& cache) {
  Matrix y = matmul_nt(x, w);
  nn::add_row_vector(y, bias);
  if (adapter != nullptr) {
    cache.lora_used = true;
    cache.lora_mid = matmul_nt(x, adapter->a);  // N x r
    const Matrix up = matmul_nt(cache.lora_mid, adapter->b);
    const double s = adapter->alpha / static_cast<double>(adapter->rank);
    for (std::size_t i = 0; i < y.entries.size(); ++i) y.entries[i] += s * up.entries[i];
  }
  return y;
}

inline void require_finite(const Matrix& m, const std::string& where) {
  double acc = 0.0;
  for (double x : m.entries) acc += x;
  if (!std::isfinite(acc))
    throw numeric_error("forward: non-finite activations in " + where);
}

}  // namespace detail

// batch is d_feature x batch_size, one sample per column.
inline ForwardCache forward(const Checkpoint& ckpt, const Matrix& batch) {
  const ModelConfig& cfg = ckpt.config;
  if (batch.rows != cfg.d_feature)
    throw std::invalid_argument("forward: batch rows must equal d_feature");
  const std::size_t bs = batch.cols;
  const std::size_t seq = cfg.seq_len;
  const std::size_t td = cfg.token_dim();
  const std::size_t d = cfg.d_model;
  const std::size_t heads = cfg.n_heads;
  const std::size_t hd = d / heads;
  const bool use_adapters = ckpt.regime == Regime::Sica && !ckpt.adapters.empty();

  ForwardCache cache;
  cache.batch = bs;
  const std::size_t n_tok = bs * seq;
  cache.tokens = Matrix(n_tok, td);
  for (std::size_t b = 0; b < bs; ++b)
    for (std::size_t t = 0; t < seq; ++t)
      for (std::size_t f = 0; f < td; ++f)
        cache.tokens(b * seq + t, f) = batch(t * td + f, b);

  cache.x0 = matmul_nt(cache.tokens, ckpt.at("embed.w"));
  nn::add_row_vector(cache.x0, ckpt.at("embed.b"));
  const Matrix& pos = ckpt.at("pos");
  for (std::size_t b = 0; b < bs; ++b)
    for (std::size_t t = 0; t < seq; ++t) {
      double* row = cache.x0.row_ptr(b * seq + t);
      for (std::size_t j = 0; j < d; ++j) row[j] += pos(t, j);
    }

  auto adapter_for = [&](const std::string& name) -> const LoraAdapter* {
    if (!use_adapters) return nullptr;
    auto it = ckpt.adapters.find(name);
    return it == ckpt.adapters.end() ? nullptr : &it->second;
  };

  Matrix x = cache.x0;
  cache.layers.resize(cfg.n_layers);
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerCache& lc = cache.layers[l];

    lc.y1 = nn::layer_norm(x, ckpt.at(p + "ln1.g"), ckpt.at(p + "ln1.b"), lc.ln1);
    lc.q = detail::linear_forward(lc.y1, ckpt.at(p + "attn.wq"), ckpt.at(p + "attn.bq"),
                                  adapter_for(p + "attn.wq"), lc.lora_q);
    lc.k = detail::linear_forward(lc.y1, ckpt.at(p + "attn.wk"), ckpt.at(p + "attn.bk"),
                                  adapter_for(p + "attn.wk"), lc.lora_k);
    lc.v = detail::linear_forward(lc.y1, ckpt.at(p + "attn.wv"), ckpt.at(p + "attn.bv"),
                                  adapter_for(p + "attn.wv"), lc.lora_v);

    lc.ctx = Matrix(n_tok, d);
    lc.probs.assign(bs * heads, Matrix());
    for (std::size_t b = 0; b < bs; ++b) {
      const std::size_t base = b * seq;
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * hd;
        Matrix scores(seq, seq);
        for (std::size_t i = 0; i < seq; ++i)
          for (std::size_t j = 0; j < seq; ++j) {
            double acc = 0.0;
            const double* qi = lc.q.row_ptr(base + i) + off;
            const double* kj = lc.k.row_ptr(base + j) + off;
            for (std::size_t c = 0; c < hd; ++c) acc += qi[c] * kj[c];
            scores(i, j) = acc * inv_sqrt_hd;
          }
        Matrix& probs = lc.probs[b * heads + h];
        probs = Matrix(seq, seq);
        for (std::size_t i = 0; i < seq; ++i) {
          double mx = scores(i, 0);
          for (std::size_t j = 1; j < seq; ++j) mx = std::max(mx, scores(i, j));
          double norm = 0.0;
          for (std::size_t j = 0; j < seq; ++j) {
            probs(i, j) = std::exp(scores(i, j) - mx);
            norm += probs(i, j);
          }
          for (std::size_t j = 0; j < seq; ++j) probs(i, j) /= norm;
        }
        for (std::size_t i = 0; i < seq; ++i) {
          double* out = lc.ctx.row_ptr(base + i) + off;
          for (std::size_t j = 0; j < seq; ++j) {
            const double pij = probs(i, j);
            const double* vj = lc.v.row_ptr(base + j) + off;
            for (std::size_t c = 0; c < hd; ++c) out[c] += pij * vj[c];
          }
        }
      }
    }

    lc.attn_out = detail::linear_forward(lc.ctx, ckpt.at(p + "attn.wo"), ckpt.at(p + "attn.bo"),
                                         adapter_for(p + "attn.wo"), lc.lora_o);
    for (std::size_t i = 0; i < x.entries.size(); ++i) x.entries[i] += lc.attn_out.entries[i];

    lc.y2 = nn::layer_norm(x, ckpt.at(p + "ln2.g"), ckpt.at(p + "ln2.b"), lc.ln2);
    LinearCache unused;
    lc.u = detail::linear_forward(lc.y2, ckpt.at(p + "mlp.w1"), ckpt.at(p + "mlp.b1"), nullptr,
                                  unused);
    lc.g_act = lc.u;
    for (double& e : lc.g_act.entries) e = nn::gelu(e);
    Matrix m = detail::linear_forward(lc.g_act, ckpt.at(p + "mlp.w2"), ckpt.at(p + "mlp.b2"),
                                      nullptr, unused);
    for (std::size_t i = 0; i < x.entries.size(); ++i) x.entries[i] += m.entries[i];
    detail::require_finite(x, "layer" + std::to_string(l));
  }

  cache.final_x = x;
  Matrix f = nn::layer_norm(x, ckpt.at("final_ln.g"), ckpt.at("final_ln.b"), cache.final_ln);
  // Readout: the normalized tokens concatenated per sample, so the head can
  // weight every token position independently.
  cache.readout = Matrix(bs, seq * d);
  for (std::size_t b = 0; b < bs; ++b)
    for (std::size_t t = 0; t < seq; ++t) {
      const double* row = f.row_ptr(b * seq + t);
      double* out = cache.readout.row_ptr(b) + t * d;
      for (std::size_t j = 0; j < d; ++j) out[j] = row[j];
    }

  LinearCache unused;
  cache.h1 = detail::linear_forward(cache.readout, ckpt.at("head.w1"), ckpt.at("head.b1"), nullptr,
                                    unused);
  cache.a1 = cache.h1;
  for (double& e : cache.a1.entries) e = nn::gelu(e);
  cache.logits = detail::linear_forward(cache.a1, ckpt.at("head.w2"), ckpt.at("head.b2"), nullptr,
                                        unused);
  detail::require_finite(cache.logits, "head");
  return cache;
}

// ---- losses ----------------------------------------------------------------

// Numerically stable mean binary cross-entropy on logits; also fills the
// gradient w.r.t. logits (already divided by batch).
inline double bce_with_logits(const Matrix& logits, const std::vector<int>& labels,
                              Matrix& dlogits) {
  if (logits.cols != 1) throw std::invalid_argument("bce_with_logits: expected one logit column");
  if (labels.size() != logits.rows)
    throw std::invalid_argument("bce_with_logits: label count mismatch");
  const double inv_b = 1.0 / static_cast<double>(logits.rows);
  dlogits = Matrix(logits.rows, 1);
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) throw std::invalid_argument("bce_with_logits: labels must be 0/1");
    const double z = logits(i, 0);
    loss += std::max(z, 0.0) - z * static_cast<double>(y) + std::log1p(std::exp(-std::abs(z)));
    const double sig = 1.0 / (1.0 + std::exp(-z));
    dlogits(i, 0) = (sig - static_cast<double>(y)) * inv_b;
  }
  return loss * inv_b;
}

inline double softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                                    Matrix& dlogits) {
  if (labels.size() != logits.rows)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  const double inv_b = 1.0 / static_cast<double>(logits.rows);
  dlogits = Matrix(logits.rows, logits.cols);
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols)
      throw std::invalid_argument("softmax_cross_entropy: label out of range");
    const double* zi = logits.row_ptr(i);
    double mx = zi[0];
    for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, zi[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(zi[j] - mx);
    const double lse = mx + std::log(sum);
    loss += lse - zi[y];
    for (std::size_t j = 0; j < logits.cols; ++j) {
      const double p = std::exp(zi[j] - mx) / sum;
      dlogits(i, j) = (p - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0)) * inv_b;
    }
  }
  return loss * inv_b;
}

// ---- backward pass ----------------------------------------------------------

struct Gradients {
  std::map<std::string, Matrix> params;
  std::map<std::string, std::pair<Matrix, Matrix>> adapters;  // name -> (dA, dB)
};

namespace detail {

inline Matrix& grad_slot(Gradients& g, const std::string& name, std::size_t rows,
                         std::size_t cols) {
  auto it = g.params.find(name);
  if (it == g.params.end()) it = g.params.emplace(name, Matrix(rows, cols)).first;
  return it->second;
}

// Backward of linear_forward. Returns dx and accumulates dW/db (when
// want_weight_grads) and adapter grads (when the adapter participated).
inline Matrix linear_backward(const Matrix& dy, const Matrix& x, const Matrix& w,
                              const std::string& wname, const LoraAdapter* adapter,
                              const LinearCache& lcache, bool want_weight_grads, Gradients& g) {
  Matrix dx = matmul(dy, w);
  if (want_weight_grads) {
    Matrix& dw = grad_slot(g, wname, w.rows, w.cols);
    const Matrix contrib = matmul_tn(dy, x);
    for (std::size_t i = 0; i < dw.entries.size(); ++i) dw.entries[i] += contrib.entries[i];
    const std::string bname = wname.substr(0, wname.size() - 2) + "b" + wname.substr(wname.size() - 1);
    Matrix& db = grad_slot(g, bname, 1, w.rows);
    const Matrix sums = nn::column_sums(dy);
    for (std::size_t j = 0; j < db.cols; ++j) db(0, j) += sums(0, j);
  }
  if (adapter != nullptr && lcache.lora_used) {
    const double s = adapter->alpha / static_cast<double>(adapter->rank);
    auto it = g.adapters.find(wname);
    if (it == g.adapters.end())
      it = g.adapters
               .emplace(wname, std::make_pair(Matrix(adapter->a.rows, adapter->a.cols),
                                              Matrix(adapter->b.rows, adapter->b.cols)))
               .first;
    // dB += s * dy^T * mid;  dmid = s * dy * B;  dA += dmid^T * x;  dx += dmid * A
    const Matrix db_contrib = matmul_tn(dy, lcache.lora_mid);
    for (std::size_t i = 0; i < it->second.second.entries.size(); ++i)
      it->second.second.entries[i] += s * db_contrib.entries[i];
    const Matrix dmid = scale(matmul(dy, adapter->b), s);
    const Matrix da_contrib = matmul_tn(dmid, x);
    for (std::size_t i = 0; i < it->second.first.entries.size(); ++i)
      it->second.first.entries[i] += da_contrib.entries[i];
    const Matrix dx_lora = matmul(dmid, adapter->a);
    for (std::size_t i = 0; i < dx.entries.size(); ++i) dx.entries[i] += dx_lora.entries[i];
  }
  return dx;
}

}  // namespace detail

// Mean loss over the batch plus gradients for exactly the parameters the
// regime trains (FFT: everything; SICA: adapters + head + layer norms;
// PROBE: head only).
inline std::pair<double, Gradients> backward(const Checkpoint& ckpt, const ForwardCache& cache,
                                             const std::vector<int>& labels) {
  const ModelConfig& cfg = ckpt.config;
  const std::size_t bs = cache.batch;
  const std::size_t seq = cfg.seq_len;
  const std::size_t d = cfg.d_model;
  const std::size_t heads = cfg.n_heads;
  const std::size_t hd = d / heads;
  const Regime regime = ckpt.regime;
  const bool full = regime == Regime::Fft;
  const bool use_adapters = regime == Regime::Sica && !ckpt.adapters.empty();

  Gradients g;
  Matrix dlogits;
  const double loss = head_out_dim(ckpt) == 1
                          ? bce_with_logits(cache.logits, labels, dlogits)
                          : softmax_cross_entropy(cache.logits, labels, dlogits);

  LinearCache no_lora;
  Matrix da1 = detail::linear_backward(dlogits, cache.a1, ckpt.at("head.w2"), "head.w2", nullptr,
                                       no_lora, /*want_weight_grads=*/true, g);
  Matrix dh1 = da1;
  for (std::size_t i = 0; i < dh1.entries.size(); ++i)
    dh1.entries[i] *= nn::gelu_grad(cache.h1.entries[i]);
  Matrix dreadout = detail::linear_backward(dh1, cache.readout, ckpt.at("head.w1"), "head.w1",
                                            nullptr, no_lora, true, g);

  if (regime == Regime::Probe) return {loss, g};

  // Undo the concatenation: route each slice back to its token row.
  const std::size_t n_tok = bs * seq;
  Matrix df(n_tok, d);
  for (std::size_t b = 0; b < bs; ++b)
    for (std::size_t t = 0; t < seq; ++t) {
      const double* src = dreadout.row_ptr(b) + t * d;
      double* dst = df.row_ptr(b * seq + t);
      for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
    }

  Matrix& dg_final = detail::grad_slot(g, "final_ln.g", 1, d);
  Matrix& db_final = detail::grad_slot(g, "final_ln.b", 1, d);
  Matrix dx = nn::layer_norm_backward(df, cache.final_ln, ckpt.at("final_ln.g"), dg_final,
                                      db_final);

  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const std::string p = "layer" + std::to_string(li) + ".";
    const LayerCache& lc = cache.layers[li];
    auto adapter_for = [&](const std::string& name) -> const LoraAdapter* {
      if (!use_adapters) return nullptr;
      auto it = ckpt.adapters.find(name);
      return it == ckpt.adapters.end() ? nullptr : &it->second;
    };

    // MLP branch.
    Matrix dgact = detail::linear_backward(dx, lc.g_act, ckpt.at(p + "mlp.w2"), p + "mlp.w2",
                                           nullptr, no_lora, full, g);
    Matrix du = dgact;
    for (std::size_t i = 0; i < du.entries.size(); ++i)
      du.entries[i] *= nn::gelu_grad(lc.u.entries[i]);
    Matrix dy2 = detail::linear_backward(du, lc.y2, ckpt.at(p + "mlp.w1"), p + "mlp.w1", nullptr,
                                         no_lora, full, g);
    Matrix& dg2 = detail::grad_slot(g, p + "ln2.g", 1, d);
    Matrix& db2 = detail::grad_slot(g, p + "ln2.b", 1, d);
    const Matrix dx_mlp = nn::layer_norm_backward(dy2, lc.ln2, ckpt.at(p + "ln2.g"), dg2, db2);
    for (std::size_t i = 0; i < dx.entries.size(); ++i) dx.entries[i] += dx_mlp.entries[i];

    // Attention branch.
    Matrix dctx = detail::linear_backward(dx, lc.ctx, ckpt.at(p + "attn.wo"), p + "attn.wo",
                                          adapter_for(p + "attn.wo"), lc.lora_o, full, g);
    Matrix dq(n_tok, d), dk(n_tok, d), dv(n_tok, d);
    for (std::size_t b = 0; b < bs; ++b) {
      const std::size_t base = b * seq;
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * hd;
        const Matrix& probs = lc.probs[b * heads + h];
        // dP = dctx * v^T; dV = P^T * dctx
        Matrix dp(seq, seq);
        for (std::size_t i = 0; i < seq; ++i)
          for (std::size_t j = 0; j < seq; ++j) {
            const double* dci = dctx.row_ptr(base + i) + off;
            const double* vj = lc.v.row_ptr(base + j) + off;
            double acc = 0.0;
            for (std::size_t c = 0; c < hd; ++c) acc += dci[c] * vj[c];
            dp(i, j) = acc;
          }
        for (std::size_t j = 0; j < seq; ++j) {
          double* dvj = dv.row_ptr(base + j) + off;
          for (std::size_t i = 0; i < seq; ++i) {
            const double pij = probs(i, j);
            const double* dci = dctx.row_ptr(base + i) + off;
            for (std::size_t c = 0; c < hd; ++c) dvj[c] += pij * dci[c];
          }
        }
        // Softmax backward per row: ds = p .* (dp - sum(dp .* p)).
        Matrix ds(seq, seq);
        for (std::size_t i = 0; i < seq; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < seq; ++j) dot += dp(i, j) * probs(i, j);
          for (std::size_t j = 0; j < seq; ++j)
            ds(i, j) = probs(i, j) * (dp(i, j) - dot) * inv_sqrt_hd;
        }
        // dq = ds * k; dk = ds^T * q.
        for (std::size_t i = 0; i < seq; ++i) {
          double* dqi = dq.row_ptr(base + i) + off;
          for (std::size_t j = 0; j < seq; ++j) {
            const double dsij = ds(i, j);
            const double* kj = lc.k.row_ptr(base + j) + off;
            for (std::size_t c = 0; c < hd; ++c) dqi[c] += dsij * kj[c];
          }
        }
        for (std::size_t j = 0; j < seq; ++j) {
          double* dkj = dk.row_ptr(base + j) + off;
          for (std::size_t i = 0; i < seq; ++i) {
            const double dsij = ds(i, j);
            const double* qi = lc.q.row_ptr(base + i) + off;
            for (std::size_t c = 0; c < hd; ++c) dkj[c] += dsij * qi[c];
          }
        }
      }
    }

    Matrix dy1 = detail::linear_backward(dq, lc.y1, ckpt.at(p + "attn.wq"), p + "attn.wq",
                                         adapter_for(p + "attn.wq"), lc.lora_q, full, g);
    const Matrix dy1_k = detail::linear_backward(dk, lc.y1, ckpt.at(p + "attn.wk"), p + "attn.wk",
                                                 adapter_for(p + "attn.wk"), lc.lora_k, full, g);
    const Matrix dy1_v = detail::linear_backward(dv, lc.y1, ckpt.at(p + "attn.wv"), p + "attn.wv",
                                                 adapter_for(p + "attn.wv"), lc.lora_v, full, g);
    for (std::size_t i = 0; i < dy1.entries.size(); ++i)
      dy1.entries[i] += dy1_k.entries[i] + dy1_v.entries[i];

    Matrix& dg1 = detail::grad_slot(g, p + "ln1.g", 1, d);
    Matrix& db1 = detail::grad_slot(g, p + "ln1.b", 1, d);
    const Matrix dx_attn = nn::layer_norm_backward(dy1, lc.ln1, ckpt.at(p + "ln1.g"), dg1, db1);
    for (std::size_t i = 0; i < dx.entries.size(); ++i) dx.entries[i] += dx_attn.entries[i];
  }

  if (full) {
    // Embedding, bias and positional gradients.
    Matrix& dwe = detail::grad_slot(g, "embed.w", cfg.d_model, cfg.token_dim());
    const Matrix contrib = matmul_tn(dx, cache.tokens);
    for (std::size_t i = 0; i < dwe.entries.size(); ++i) dwe.entries[i] += contrib.entries[i];
    Matrix& dbe = detail::grad_slot(g, "embed.b", 1, d);
    const Matrix sums = nn::column_sums(dx);
    for (std::size_t j = 0; j < d; ++j) dbe(0, j) += sums(0, j);
    Matrix& dpos = detail::grad_slot(g, "pos", seq, d);
    for (std::size_t b = 0; b < bs; ++b)
      for (std::size_t t = 0; t < seq; ++t) {
        const double* src = dx.row_ptr(b * seq + t);
        for (std::size_t j = 0; j < d; ++j) dpos(t, j) += src[j];
      }
  }
  return {loss, g};
}

// ---- training ---------------------------------------------------------------

struct TrainSpec {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr_start = 1e-3;  // cosine-decayed to lr_end
  double lr_end = 1e-5;
  double weight_decay = 0.01;
  bool train_layer_norms = true;  // sica regime only; sensitivity knob
  std::uint64_t seed = 7;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("TrainSpec: batch_size must be positive");
    if (!(lr_start >= lr_end && lr_end > 0.0))
      throw std::invalid_argument("TrainSpec: need lr_start >= lr_end > 0");
  }
};

struct TrainLogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step
  double lr = 0.0;
  double loss = 0.0;
  double acc = 0.0;
};

struct EpochStat {
  std::size_t epoch = 0;
  double loss = 0.0;
  double acc = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRow> log;
  std::vector<EpochStat> epochs;
};

namespace detail {

struct AdamSlot {
  Matrix m, v;
};

class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

  // Decoupled weight decay, applied to matrix-shaped tensors only (rows > 1);
  // biases, layer-norm vectors and other row vectors are left undecayed.
  void update(Matrix& theta, const Matrix& grad, const std::string& key, double lr) {
    AdamSlot& slot = slots_.try_emplace(key, AdamSlot{Matrix(theta.rows, theta.cols),
                                                      Matrix(theta.rows, theta.cols)})
                         .first->second;
    ++steps_[key];
    const double t = static_cast<double>(steps_[key]);
    const double bc1 = 1.0 - std::pow(beta1_, t);
    const double bc2 = 1.0 - std::pow(beta2_, t);
    const bool decay = theta.rows > 1;
    for (std::size_t i = 0; i < theta.entries.size(); ++i) {
      slot.m.entries[i] = beta1_ * slot.m.entries[i] + (1.0 - beta1_) * grad.entries[i];
      slot.v.entries[i] =
          beta2_ * slot.v.entries[i] + (1.0 - beta2_) * grad.entries[i] * grad.entries[i];
      const double mhat = slot.m.entries[i] / bc1;
      const double vhat = slot.v.entries[i] / bc2;
      double step = mhat / (std::sqrt(vhat) + eps_);
      if (decay) step += wd_ * theta.entries[i];
      theta.entries[i] -= lr * step;
    }
  }

 private:
  double beta1_, beta2_, eps_, wd_;
  std::map<std::string, AdamSlot> slots_;
  std::map<std::string, std::size_t> steps_;
};

inline double cosine_lr(double lr_start, double lr_end, std::size_t step,
                        std::size_t total_steps) {
  if (total_steps <= 1) return lr_start;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

enum class LossKind { Bce, DomainCe };

inline TrainResult train_loop(const Checkpoint& start, const TrainSpec& spec,
                              const SampleSet& data, LossKind loss_kind) {
  spec.validate();
  const ModelConfig& cfg = start.config;
  if (data.samples.empty()) throw std::invalid_argument("train: empty dataset");
  if (data.d_feature != cfg.d_feature)
    throw std::invalid_argument("train: dataset feature width differs from model");

  TrainResult result;
  result.checkpoint = start;
  Checkpoint& ckpt = result.checkpoint;
  if (spec.epochs == 0) return result;

  std::vector<int> targets(data.samples.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    targets[i] = loss_kind == LossKind::Bce ? s.label : static_cast<int>(s.domain_id);
    if (loss_kind == LossKind::Bce && s.label != 0 && s.label != 1)
      throw std::invalid_argument("train: labels must be binary");
  }

  AdamW opt(0.9, 0.999, 1e-8, spec.weight_decay);
  const std::size_t n = data.samples.size();
  const std::size_t steps_per_epoch = (n + spec.batch_size - 1) / spec.batch_size;
  const std::size_t total_steps = spec.epochs * steps_per_epoch;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    Rng shuffle_rng(rng::derive(spec.seed, "train.shuffle", epoch));
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0, epoch_correct = 0.0;
    for (std::size_t start_idx = 0; start_idx < n; start_idx += spec.batch_size) {
      const std::size_t bs = std::min(spec.batch_size, n - start_idx);
      Matrix batch(cfg.d_feature, bs);
      std::vector<int> labels(bs);
      for (std::size_t c = 0; c < bs; ++c) {
        const Sample& s = data.samples[order[start_idx + c]];
        for (std::size_t f = 0; f < cfg.d_feature; ++f) batch(f, c) = s.features[f];
        labels[c] = targets[order[start_idx + c]];
      }
      const ForwardCache cache = forward(ckpt, batch);
      const auto [loss, grads] = backward(ckpt, cache, labels);
      if (!std::isfinite(loss))
        throw numeric_error("train: loss diverged at epoch " + std::to_string(epoch) + " step " +
                            std::to_string(global_step));

      const double lr = cosine_lr(spec.lr_start, spec.lr_end, global_step, total_steps);
      const bool skip_ln = ckpt.regime == Regime::Sica && !spec.train_layer_norms;
      for (const auto& [name, grad] : grads.params) {
        if (skip_ln && (name.find(".ln") != std::string::npos || name.starts_with("final_ln")))
          continue;
        opt.update(ckpt.params.at(name), grad, name, lr);
      }
      for (const auto& [name, ab] : grads.adapters) {
        LoraAdapter& ad = ckpt.adapters.at(name);
        opt.update(ad.a, ab.first, name + "#a", lr);
        opt.update(ad.b, ab.second, name + "#b", lr);
      }

      double correct = 0.0;
      if (loss_kind == LossKind::Bce) {
        for (std::size_t c = 0; c < bs; ++c)
          correct += ((cache.logits(c, 0) >= 0.0) ? 1 : 0) == labels[c] ? 1.0 : 0.0;
      } else {
        for (std::size_t c = 0; c < bs; ++c) {
          std::size_t arg = 0;
          for (std::size_t j = 1; j < cache.logits.cols; ++j)
            if (cache.logits(c, j) > cache.logits(c, arg)) arg = j;
          correct += arg == static_cast<std::size_t>(labels[c]) ? 1.0 : 0.0;
        }
      }
      result.log.push_back({epoch, global_step, lr, loss, correct / static_cast<double>(bs)});
      epoch_loss += loss * static_cast<double>(bs);
      epoch_correct += correct;
      ++global_step;
    }
    result.epochs.push_back({epoch, epoch_loss / static_cast<double>(n),
                             epoch_correct / static_cast<double>(n)});
  }
  return result;
}

}  // namespace detail

inline TrainResult train(const Checkpoint& ckpt, const TrainSpec& spec, const SampleSet& data) {
  if (head_out_dim(ckpt) != 1)
    throw std::invalid_argument("train: checkpoint head is not binary");
  return detail::train_loop(ckpt, spec, data, detail::LossKind::Bce);
}

// ---- inference and evaluation ------------------------------------------------

inline std::vector<double> score_samples(const Checkpoint& ckpt, const SampleSet& data,
                                         std::size_t batch_size = 256) {
  const ModelConfig& cfg = ckpt.config;
  std::vector<double> scores;
  scores.reserve(data.samples.size());
  for (std::size_t start = 0; start < data.samples.size(); start += batch_size) {
    const std::size_t bs = std::min(batch_size, data.samples.size() - start);
    Matrix batch(cfg.d_feature, bs);
    for (std::size_t c = 0; c < bs; ++c)
      for (std::size_t f = 0; f < cfg.d_feature; ++f)
        batch(f, c) = data.samples[start + c].features[f];
    const ForwardCache cache = forward(ckpt, batch);
    for (std::size_t c = 0; c < bs; ++c)
      scores.push_back(1.0 / (1.0 + std::exp(-cache.logits(c, 0))));
  }
  return scores;
}

inline MetricBundle evaluate_on(const Checkpoint& ckpt, const SampleSet& data,
                                double threshold = 0.5) {
  const std::vector<double> scores = score_samples(ckpt, data);
  std::vector<int> labels(data.samples.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = data.samples[i].label;
  return evaluate_bundle(scores, labels, threshold);
}

// ---- backbone pretraining ------------------------------------------------------

struct PretrainSpec {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  double weight_decay = 0.01;
  std::uint64_t seed = 7;
};

struct PretrainResult {
  Checkpoint checkpoint;
  double val_domain_accuracy = 0.0;
  std::vector<EpochStat> epochs;
};

// Supervised K-way domain classification on real samples. The resulting
// backbone carries the semantic structure the adaptation regimes build on;
// the domain head is discarded and replaced by a fresh binary head.
inline PretrainResult pretrain_backbone(const ModelConfig& cfg, const SampleSet& reals,
                                        const PretrainSpec& spec = {}) {
  cfg.validate();
  std::set<std::size_t> domains;
  for (const Sample& s : reals.samples) {
    if (s.label != 0)
      throw std::invalid_argument("pretrain_backbone: expected real samples only");
    domains.insert(s.domain_id);
  }
  if (domains.size() < 2)
    throw std::invalid_argument("pretrain_backbone: need at least 2 domains");
  const std::size_t k = *domains.rbegin() + 1;

  // Hold out 10% for the domain-accuracy check.
  std::vector<std::size_t> order(reals.samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(rng::derive(spec.seed, "pretrain.val"));
  rng.shuffle(order);
  const std::size_t n_val = std::max<std::size_t>(1, order.size() / 10);
  SampleSet train_set, val_set;
  train_set.d_feature = val_set.d_feature = reals.d_feature;
  train_set.domain_names = val_set.domain_names = reals.domain_names;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_val ? val_set : train_set).samples.push_back(reals.samples[order[i]]);

  Checkpoint ckpt = init_checkpoint(cfg, k);
  ckpt.regime = Regime::Fft;
  TrainSpec tspec;
  tspec.epochs = spec.epochs;
  tspec.batch_size = spec.batch_size;
  tspec.lr_start = spec.lr_start;
  tspec.lr_end = spec.lr_end;
  tspec.weight_decay = spec.weight_decay;
  tspec.seed = rng::derive(spec.seed, "pretrain.train");
  TrainResult trained = detail::train_loop(ckpt, tspec, train_set, detail::LossKind::DomainCe);

  PretrainResult out;
  out.epochs = trained.epochs;
  out.checkpoint = std::move(trained.checkpoint);

  // Validation domain accuracy with the K-way head still in place.
  std::size_t correct = 0;
  const std::size_t batch_size = 256;
  for (std::size_t start = 0; start < val_set.samples.size(); start += batch_size) {
    const std::size_t bs = std::min(batch_size, val_set.samples.size() - start);
    Matrix batch(cfg.d_feature, bs);
    for (std::size_t c = 0; c < bs; ++c)
      for (std::size_t f = 0; f < cfg.d_feature; ++f)
        batch(f, c) = val_set.samples[start + c].features[f];
    const ForwardCache cache = forward(out.checkpoint, batch);
    for (std::size_t c = 0; c < bs; ++c) {
      std::size_t arg = 0;
      for (std::size_t j = 1; j < cache.logits.cols; ++j)
        if (cache.logits(c, j) > cache.logits(c, arg)) arg = j;
      if (arg == val_set.samples[start + c].domain_id) ++correct;
    }
  }
  out.val_domain_accuracy =
      static_cast<double>(correct) / static_cast<double>(val_set.samples.size());

  // Swap in a fresh binary head and freeze by default.
  ModelConfig head_cfg = cfg;
  head_cfg.seed = rng::derive(cfg.seed, "pretrain.head_reset");
  const Checkpoint fresh = init_checkpoint(head_cfg, 1);
  for (const char* name : {"head.w1", "head.b1", "head.w2", "head.b2"})
    out.checkpoint.params.at(name) = fresh.at(name);
  out.checkpoint.regime = Regime::Probe;
  return out;
}

// ---- feature export --------------------------------------------------------------

struct FeatureExport {
  Matrix features;  // one row per sample, seq_len*d_model wide
  Matrix pca2;      // 2-D PCA coordinates, zero column means
};

inline FeatureExport export_features(const Checkpoint& ckpt, const SampleSet& data) {
  if (data.samples.empty()) throw std::invalid_argument("export_features: empty dataset");
  const ModelConfig& cfg = ckpt.config;
  FeatureExport out;
  const std::size_t width = cfg.seq_len * cfg.d_model;
  out.features = Matrix(data.samples.size(), width);
  const std::size_t batch_size = 256;
  for (std::size_t start = 0; start < data.samples.size(); start += batch_size) {
    const std::size_t bs = std::min(batch_size, data.samples.size() - start);
    Matrix batch(cfg.d_feature, bs);
    for (std::size_t c = 0; c < bs; ++c)
      for (std::size_t f = 0; f < cfg.d_feature; ++f)
        batch(f, c) = data.samples[start + c].features[f];
    const ForwardCache cache = forward(ckpt, batch);
    for (std::size_t c = 0; c < bs; ++c)
      for (std::size_t j = 0; j < width; ++j)
        out.features(start + c, j) = cache.readout(c, j);
  }

  Matrix centered = out.features;
  for (std::size_t j = 0; j < centered.cols; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < centered.rows; ++i) mean += centered(i, j);
    mean /= static_cast<double>(centered.rows);
    for (std::size_t i = 0; i < centered.rows; ++i) centered(i, j) -= mean;
  }
  const SvdFactors f = svd(centered);
  const std::size_t comps = std::min<std::size_t>(2, f.s.size());
  Matrix v2(centered.cols, 2);
  for (std::size_t i = 0; i < centered.cols; ++i)
    for (std::size_t j = 0; j < comps; ++j) v2(i, j) = f.v(i, j);
  out.pca2 = matmul(centered, v2);
  return out;
}

// ---- checkpoint directory format ---------------------------------------------------

inline nlohmann::json config_json(const ModelConfig& cfg) {
  return {{"d_feature", cfg.d_feature}, {"seq_len", cfg.seq_len},   {"d_model", cfg.d_model},
          {"n_heads", cfg.n_heads},     {"n_layers", cfg.n_layers}, {"head_hidden", cfg.head_hidden},
          {"seed", cfg.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.d_feature = j.at("d_feature").get<std::size_t>();
  cfg.seq_len = j.at("seq_len").get<std::size_t>();
  cfg.d_model = j.at("d_model").get<std::size_t>();
  cfg.n_heads = j.at("n_heads").get<std::size_t>();
  cfg.n_layers = j.at("n_layers").get<std::size_t>();
  cfg.head_hidden = j.at("head_hidden").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, m] : ckpt.params) {
    const std::string file = name + ".matb";
    write_matb(dir / file, m);
    entries.push_back({{"name", name}, {"rows", m.rows}, {"cols", m.cols}, {"file", file}});
  }
  nlohmann::json adapters = nlohmann::json::array();
  for (const auto& [name, ad] : ckpt.adapters) {
    save_adapter(dir, name, ad);
    adapters.push_back({{"name", name}, {"alpha", ad.alpha}, {"rank", ad.rank}});
  }
  const nlohmann::json manifest = {{"config", config_json(ckpt.config)},
                                   {"regime", regime_name(ckpt.regime)},
                                   {"entries", entries},
                                   {"adapters", adapters}};
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) throw std::invalid_argument("save_checkpoint: cannot open manifest in " + dir.string());
  f << manifest.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f)
    throw std::invalid_argument("load_checkpoint: missing manifest.json in " + dir.string());
  const nlohmann::json manifest = nlohmann::json::parse(f);
  Checkpoint ckpt;
  ckpt.config = config_from_json(manifest.at("config"));
  ckpt.regime = regime_from_name(manifest.at("regime").get<std::string>());
  for (const auto& e : manifest.at("entries")) {
    const std::string name = e.at("name").get<std::string>();
    Matrix m = read_matb(dir / e.at("file").get<std::string>());
    if (m.rows != e.at("rows").get<std::size_t>() || m.cols != e.at("cols").get<std::size_t>())
      throw std::invalid_argument("load_checkpoint: shape mismatch for " + name);
    ckpt.params.emplace(name, std::move(m));
  }
  // Validate shapes against the config-derived layout.
  const auto shapes = tensor_shapes(ckpt.config, head_out_dim(ckpt));
  for (const auto& [name, shape] : shapes) {
    const Matrix& m = ckpt.at(name);
    if (m.rows != shape.first || m.cols != shape.second)
      throw std::invalid_argument("load_checkpoint: tensor " + name +
                                  " inconsistent with config");
  }
  for (const auto& a : manifest.at("adapters")) {
    const std::string name = a.at("name").get<std::string>();
    if (ckpt.params.find(name) == ckpt.params.end() || name.find(".attn.w") == std::string::npos)
      throw std::invalid_argument("load_checkpoint: adapter " + name +
                                  " is not an attention projection");
    ckpt.adapters.emplace(name, load_adapter(dir, name));
  }
  return ckpt;
}

}  // namespace sica
