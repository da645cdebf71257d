#pragma once

// A deliberately slow, scalar-loop re-implementation of the classifier
// forward pass, used only to cross-check the library's batched forward.
// Differences on purpose: per-sample processing, merged (dense) adapter
// weights instead of the factored branch, and naive per-element loops.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sica/adapt.hpp"
#include "sica/nanovit.hpp"

namespace reference {

using sica::Checkpoint;
using sica::Matrix;

inline std::vector<double> ln_row(const std::vector<double>& x, const Matrix& g, const Matrix& b) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double rstd = 1.0 / std::sqrt(var + 1e-5);
  std::vector<double> y(n);
  for (std::size_t j = 0; j < n; ++j) y[j] = g(0, j) * ((x[j] - mean) * rstd) + b(0, j);
  return y;
}

inline std::vector<double> linear_row(const std::vector<double>& x, const Matrix& w,
                                      const Matrix& b) {
  std::vector<double> y(w.rows);
  for (std::size_t o = 0; o < w.rows; ++o) {
    double acc = b(0, o);
    for (std::size_t i = 0; i < w.cols; ++i) acc += w(o, i) * x[i];
    y[o] = acc;
  }
  return y;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Logit for one sample (features in input order, length d_feature).
inline double forward_one(const Checkpoint& ckpt, const std::vector<double>& features) {
  const auto& cfg = ckpt.config;
  const std::size_t seq = cfg.seq_len, td = cfg.token_dim(), d = cfg.d_model;
  const std::size_t heads = cfg.n_heads, hd = d / heads;

  // Merge adapters into dense weights when the regime uses them.
  std::map<std::string, Matrix> weights;
  auto weight = [&](const std::string& name) -> const Matrix& {
    auto it = weights.find(name);
    if (it != weights.end()) return it->second;
    const Matrix& w0 = ckpt.at(name);
    if (ckpt.regime == sica::Regime::Sica) {
      auto ad = ckpt.adapters.find(name);
      if (ad != ckpt.adapters.end())
        return weights.emplace(name, sica::merge(w0, ad->second)).first->second;
    }
    return weights.emplace(name, w0).first->second;
  };

  std::vector<std::vector<double>> x(seq, std::vector<double>(d));
  for (std::size_t t = 0; t < seq; ++t) {
    std::vector<double> tok(features.begin() + t * td, features.begin() + (t + 1) * td);
    const auto emb = linear_row(tok, ckpt.at("embed.w"), ckpt.at("embed.b"));
    for (std::size_t j = 0; j < d; ++j) x[t][j] = emb[j] + ckpt.at("pos")(t, j);
  }

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    std::vector<std::vector<double>> q(seq), k(seq), v(seq);
    for (std::size_t t = 0; t < seq; ++t) {
      const auto y = ln_row(x[t], ckpt.at(p + "ln1.g"), ckpt.at(p + "ln1.b"));
      q[t] = linear_row(y, weight(p + "attn.wq"), ckpt.at(p + "attn.bq"));
      k[t] = linear_row(y, weight(p + "attn.wk"), ckpt.at(p + "attn.bk"));
      v[t] = linear_row(y, weight(p + "attn.wv"), ckpt.at(p + "attn.bv"));
    }
    std::vector<std::vector<double>> ctx(seq, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        std::vector<double> scores(seq);
        for (std::size_t j = 0; j < seq; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < hd; ++c) acc += q[i][h * hd + c] * k[j][h * hd + c];
          scores[j] = acc / std::sqrt(static_cast<double>(hd));
        }
        double mx = scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double z = 0.0;
        for (double& s : scores) {
          s = std::exp(s - mx);
          z += s;
        }
        for (std::size_t j = 0; j < seq; ++j)
          for (std::size_t c = 0; c < hd; ++c)
            ctx[i][h * hd + c] += (scores[j] / z) * v[j][h * hd + c];
      }
    }
    for (std::size_t t = 0; t < seq; ++t) {
      const auto o = linear_row(ctx[t], weight(p + "attn.wo"), ckpt.at(p + "attn.bo"));
      for (std::size_t j = 0; j < d; ++j) x[t][j] += o[j];
    }
    for (std::size_t t = 0; t < seq; ++t) {
      const auto y = ln_row(x[t], ckpt.at(p + "ln2.g"), ckpt.at(p + "ln2.b"));
      auto u = linear_row(y, ckpt.at(p + "mlp.w1"), ckpt.at(p + "mlp.b1"));
      for (double& e : u) e = gelu(e);
      const auto m = linear_row(u, ckpt.at(p + "mlp.w2"), ckpt.at(p + "mlp.b2"));
      for (std::size_t j = 0; j < d; ++j) x[t][j] += m[j];
    }
  }

  std::vector<double> readout(seq * d);
  for (std::size_t t = 0; t < seq; ++t) {
    const auto f = ln_row(x[t], ckpt.at("final_ln.g"), ckpt.at("final_ln.b"));
    for (std::size_t j = 0; j < d; ++j) readout[t * d + j] = f[j];
  }
  auto h1 = linear_row(readout, ckpt.at("head.w1"), ckpt.at("head.b1"));
  for (double& e : h1) e = gelu(e);
  const auto logits = linear_row(h1, ckpt.at("head.w2"), ckpt.at("head.b2"));
  return logits[0];
}

}  // namespace reference
