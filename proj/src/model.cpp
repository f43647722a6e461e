// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#include "promptdst/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "promptdst/errors.hpp"
#include "promptdst/kernels.hpp"

namespace pdst {
namespace {

constexpr double kLnEps = 1e-5;

struct Layout {
  int V, D, C, L, H, dh, F;
  size_t tok_emb, pos_emb;
  struct PerLayer {
    size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    size_t ln2_g, ln2_b, w1, b1, w2, b2;
  };
  std::vector<PerLayer> layer;
  size_t lnf_g, lnf_b, w_out;
  size_t total;
};

Layout make_layout(const LMConfig& cfg, int vocab_size) {
  Layout lt;
  lt.V = vocab_size;
  lt.D = cfg.model_dim;
  lt.C = cfg.context_length;
  lt.L = cfg.layers;
  lt.H = cfg.heads;
  lt.dh = lt.D / lt.H;
  lt.F = 4 * lt.D;
  size_t off = 0;
  auto take = [&off](size_t count) {
    size_t at = off;
    off += count;
    return at;
  };
  const size_t D = lt.D, F = lt.F;
  lt.tok_emb = take(static_cast<size_t>(lt.V) * D);
  lt.pos_emb = take(static_cast<size_t>(lt.C) * D);
  lt.layer.resize(lt.L);
  for (auto& pl : lt.layer) {
    pl.ln1_g = take(D);
    pl.ln1_b = take(D);
    pl.wq = take(D * D);
    pl.bq = take(D);
    pl.wk = take(D * D);
    pl.bk = take(D);
    pl.wv = take(D * D);
    pl.bv = take(D);
    pl.wo = take(D * D);
    pl.bo = take(D);
    pl.ln2_g = take(D);
    pl.ln2_b = take(D);
    pl.w1 = take(D * F);
    pl.b1 = take(F);
    pl.w2 = take(F * D);
    pl.b2 = take(D);
  }
  lt.lnf_g = take(D);
  lt.lnf_b = take(D);
  lt.w_out = take(D * static_cast<size_t>(lt.V));
  lt.total = off;
  return lt;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / M_SQRT2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / M_SQRT2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

// y = g * (x - mean) / sqrt(var + eps) + b, rows independent.
void ln_forward(const double* x, const double* g, const double* b, int T,
                int D, double* y, double* xhat, double* rstd) {
  for (int i = 0; i < T; ++i) {
    const double* xi = x + static_cast<size_t>(i) * D;
    double mean = 0.0;
    for (int j = 0; j < D; ++j) {
      mean += xi[j];
    }
    mean /= D;
    double var = 0.0;
    for (int j = 0; j < D; ++j) {
      const double d = xi[j] - mean;
      var += d * d;
    }
    var /= D;
    const double r = 1.0 / std::sqrt(var + kLnEps);
    rstd[i] = r;
    double* xh = xhat + static_cast<size_t>(i) * D;
    double* yi = y + static_cast<size_t>(i) * D;
    for (int j = 0; j < D; ++j) {
      xh[j] = (xi[j] - mean) * r;
      yi[j] = g[j] * xh[j] + b[j];
    }
  }
}

// dx for the rows in [0, T); accumulates dg/db.
void ln_backward(const double* dy, const double* xhat, const double* rstd,
                 const double* g, int T, int D, double* dx, double* dg,
                 double* db) {
  for (int i = 0; i < T; ++i) {
    const double* dyi = dy + static_cast<size_t>(i) * D;
    const double* xh = xhat + static_cast<size_t>(i) * D;
    double m1 = 0.0, m2 = 0.0;
    for (int j = 0; j < D; ++j) {
      const double dxh = dyi[j] * g[j];
      m1 += dxh;
      m2 += dxh * xh[j];
    }
    m1 /= D;
    m2 /= D;
    double* dxi = dx + static_cast<size_t>(i) * D;
    for (int j = 0; j < D; ++j) {
      const double dxh = dyi[j] * g[j];
      dxi[j] = rstd[i] * (dxh - m1 - xh[j] * m2);
      dg[j] += dyi[j] * xh[j];
      db[j] += dyi[j];
    }
  }
}

void col_sums(const double* x, int T, int D, double* out) {
  for (int i = 0; i < T; ++i) {
    const double* xi = x + static_cast<size_t>(i) * D;
    for (int j = 0; j < D; ++j) {
      out[j] += xi[j];
    }
  }
}

void pack_head(const double* x, int T, int D, int head, int dh, double* out) {
  for (int i = 0; i < T; ++i) {
    const double* src = x + static_cast<size_t>(i) * D + head * dh;
    std::copy(src, src + dh, out + static_cast<size_t>(i) * dh);
  }
}

void unpack_head_add(const double* packed, int T, int D, int head, int dh,
                     double* x) {
  for (int i = 0; i < T; ++i) {
    double* dst = x + static_cast<size_t>(i) * D + head * dh;
    const double* src = packed + static_cast<size_t>(i) * dh;
    for (int j = 0; j < dh; ++j) {
      dst[j] += src[j];
    }
  }
}

struct LayerActs {
  std::vector<double> ln1_xhat, ln1_rstd, ln1_out;
  std::vector<double> q, k, v;
  std::vector<double> probs;  // H * T * T
  std::vector<double> ctx;
  std::vector<double> x_attn;  // stream after the attention residual
  std::vector<double> ln2_xhat, ln2_rstd, ln2_out;
  std::vector<double> h_pre, h_act;
  std::vector<double> x_mlp;  // stream after the mlp residual
};

struct Acts {
  int T = 0;
  std::vector<double> x0;
  std::vector<LayerActs> layers;
};

int argmax_lowest(const std::vector<double>& d) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(d.size()); ++i) {
    if (d[i] > d[best]) {
      best = i;
    }
  }
  return best;
}

void softmax_inplace(std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) {
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : logits) {
    v /= sum;
  }
}

class Runner {
 public:
  Runner(const LMConfig& cfg, const std::vector<double>& params, int V)
      : lt_(make_layout(cfg, V)), p_(params.data()) {}

  const Layout& lt() const { return lt_; }
  const double* at(size_t off) const { return p_ + off; }

  // Forward over an already BOS-prefixed token sequence; fills acts and
  // leaves the final hidden stream in acts.layers.back().x_mlp (or
  // acts.x0 for a zero-layer model, which the config forbids anyway).
  void forward(const std::vector<int>& seq, Acts& a,
               DecodeState* capture) const {
    const auto& ops = kernels::active();
    const int T = static_cast<int>(seq.size());
    const int D = lt_.D, H = lt_.H, dh = lt_.dh, F = lt_.F;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    a.T = T;
    a.x0.assign(static_cast<size_t>(T) * D, 0.0);
    for (int i = 0; i < T; ++i) {
      const double* te = at(lt_.tok_emb) + static_cast<size_t>(seq[i]) * D;
      const double* pe = at(lt_.pos_emb) + static_cast<size_t>(i) * D;
      double* xi = a.x0.data() + static_cast<size_t>(i) * D;
      for (int j = 0; j < D; ++j) {
        xi[j] = te[j] + pe[j];
      }
    }
    a.layers.resize(lt_.L);
    if (capture != nullptr) {
      capture->k_cache.assign(lt_.L, {});
      capture->v_cache.assign(lt_.L, {});
      capture->len = T;
    }
    const std::vector<double>* stream = &a.x0;
    std::vector<double> qh(static_cast<size_t>(T) * dh);
    std::vector<double> kh(static_cast<size_t>(T) * dh);
    std::vector<double> vh(static_cast<size_t>(T) * dh);
    std::vector<double> ctxh(static_cast<size_t>(T) * dh);
    for (int l = 0; l < lt_.L; ++l) {
      const auto& pl = lt_.layer[l];
      LayerActs& la = a.layers[l];
      const size_t TD = static_cast<size_t>(T) * D;
      la.ln1_xhat.resize(TD);
      la.ln1_rstd.resize(T);
      la.ln1_out.resize(TD);
      ln_forward(stream->data(), at(pl.ln1_g), at(pl.ln1_b), T, D,
                 la.ln1_out.data(), la.ln1_xhat.data(), la.ln1_rstd.data());

      la.q.assign(TD, 0.0);
      la.k.assign(TD, 0.0);
      la.v.assign(TD, 0.0);
      ops.mm_nn(la.q.data(), la.ln1_out.data(), at(pl.wq), T, D, D, false);
      ops.add_row(la.q.data(), at(pl.bq), T, D);
      ops.mm_nn(la.k.data(), la.ln1_out.data(), at(pl.wk), T, D, D, false);
      ops.add_row(la.k.data(), at(pl.bk), T, D);
      ops.mm_nn(la.v.data(), la.ln1_out.data(), at(pl.wv), T, D, D, false);
      ops.add_row(la.v.data(), at(pl.bv), T, D);
      if (capture != nullptr) {
        capture->k_cache[l] = la.k;
        capture->v_cache[l] = la.v;
      }

      la.probs.assign(static_cast<size_t>(H) * T * T, 0.0);
      la.ctx.assign(TD, 0.0);
      for (int h = 0; h < H; ++h) {
        pack_head(la.q.data(), T, D, h, dh, qh.data());
        pack_head(la.k.data(), T, D, h, dh, kh.data());
        pack_head(la.v.data(), T, D, h, dh, vh.data());
        double* probs = la.probs.data() + static_cast<size_t>(h) * T * T;
        ops.mm_nt(probs, qh.data(), kh.data(), T, dh, T, false);
        for (int i = 0; i < T; ++i) {
          double* row = probs + static_cast<size_t>(i) * T;
          double mx = -1e300;
          for (int j = 0; j <= i; ++j) {
            row[j] *= inv_sqrt_dh;
            mx = std::max(mx, row[j]);
          }
          double sum = 0.0;
          for (int j = 0; j <= i; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
          }
          for (int j = 0; j <= i; ++j) {
            row[j] /= sum;
          }
          for (int j = i + 1; j < T; ++j) {
            row[j] = 0.0;
          }
        }
        std::fill(ctxh.begin(), ctxh.end(), 0.0);
        ops.mm_nn(ctxh.data(), probs, vh.data(), T, T, dh, false);
        for (int i = 0; i < T; ++i) {
          std::copy(ctxh.data() + static_cast<size_t>(i) * dh,
                    ctxh.data() + static_cast<size_t>(i) * dh + dh,
                    la.ctx.data() + static_cast<size_t>(i) * D + h * dh);
        }
      }

      la.x_attn = *stream;
      ops.mm_nn(la.x_attn.data(), la.ctx.data(), at(pl.wo), T, D, D, true);
      ops.add_row(la.x_attn.data(), at(pl.bo), T, D);

      la.ln2_xhat.resize(TD);
      la.ln2_rstd.resize(T);
      la.ln2_out.resize(TD);
      ln_forward(la.x_attn.data(), at(pl.ln2_g), at(pl.ln2_b), T, D,
                 la.ln2_out.data(), la.ln2_xhat.data(), la.ln2_rstd.data());

      const size_t TF = static_cast<size_t>(T) * F;
      la.h_pre.assign(TF, 0.0);
      ops.mm_nn(la.h_pre.data(), la.ln2_out.data(), at(pl.w1), T, D, F, false);
      ops.add_row(la.h_pre.data(), at(pl.b1), T, F);
      la.h_act.resize(TF);
      for (size_t i = 0; i < TF; ++i) {
        la.h_act[i] = gelu(la.h_pre[i]);
      }
      la.x_mlp = la.x_attn;
      ops.mm_nn(la.x_mlp.data(), la.h_act.data(), at(pl.w2), T, F, D, true);
      ops.add_row(la.x_mlp.data(), at(pl.b2), T, D);
      stream = &la.x_mlp;
    }
  }

  const std::vector<double>& final_stream(const Acts& a) const {
    return lt_.L > 0 ? a.layers.back().x_mlp : a.x0;
  }

  // Final layer norm + logits for rows [r0, T); logits is (T - r0) x V.
  void head_forward(const Acts& a, int r0, std::vector<double>& f,
                    std::vector<double>& f_xhat, std::vector<double>& f_rstd,
                    std::vector<double>& logits) const {
    const auto& ops = kernels::active();
    const int R = a.T - r0;
    const int D = lt_.D;
    const double* stream =
        final_stream(a).data() + static_cast<size_t>(r0) * D;
    f.resize(static_cast<size_t>(R) * D);
    f_xhat.resize(static_cast<size_t>(R) * D);
    f_rstd.resize(R);
    ln_forward(stream, at(lt_.lnf_g), at(lt_.lnf_b), R, D, f.data(),
               f_xhat.data(), f_rstd.data());
    logits.assign(static_cast<size_t>(R) * lt_.V, 0.0);
    ops.mm_nn(logits.data(), f.data(), at(lt_.w_out), R, D, lt_.V, false);
  }

  // Backward from d(final hidden stream) through all layers into grad;
  // then scatters into token/position embedding gradients.
  void backward(const std::vector<int>& seq, const Acts& a,
                std::vector<double>& dstream, double* g) const {
    const auto& ops = kernels::active();
    const int T = a.T;
    const int D = lt_.D, H = lt_.H, dh = lt_.dh, F = lt_.F;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const size_t TD = static_cast<size_t>(T) * D;
    const size_t TF = static_cast<size_t>(T) * F;

    std::vector<double> dln2_out(TF ? TD : TD), dh_pre(TF), dh_act(TF);
    std::vector<double> dtmp(TD), dctx(TD), dq(TD), dk(TD), dv(TD);
    std::vector<double> qh(static_cast<size_t>(T) * dh);
    std::vector<double> kh(static_cast<size_t>(T) * dh);
    std::vector<double> vh(static_cast<size_t>(T) * dh);
    std::vector<double> dph(static_cast<size_t>(T) * dh);
    std::vector<double> dscore(static_cast<size_t>(T) * T);

    for (int l = lt_.L - 1; l >= 0; --l) {
      const auto& pl = lt_.layer[l];
      const LayerActs& la = a.layers[l];
      const double* x_in =
          (l == 0) ? a.x0.data() : a.layers[l - 1].x_mlp.data();
      (void)x_in;

      // mlp branch: x_mlp = x_attn + w2(gelu(w1 ln2(x_attn))).
      dh_act.assign(TF, 0.0);
      ops.mm_nt(dh_act.data(), dstream.data(), at(pl.w2), T, D, F, false);
      ops.mm_tn(g + pl.w2, la.h_act.data(), dstream.data(), F, T, D, true);
      col_sums(dstream.data(), T, D, g + pl.b2);
      dh_pre.resize(TF);
      for (size_t i = 0; i < TF; ++i) {
        dh_pre[i] = dh_act[i] * gelu_grad(la.h_pre[i]);
      }
      ops.mm_tn(g + pl.w1, la.ln2_out.data(), dh_pre.data(), D, T, F, true);
      col_sums(dh_pre.data(), T, F, g + pl.b1);
      dln2_out.assign(TD, 0.0);
      ops.mm_nt(dln2_out.data(), dh_pre.data(), at(pl.w1), T, F, D, false);
      ln_backward(dln2_out.data(), la.ln2_xhat.data(), la.ln2_rstd.data(),
                  at(pl.ln2_g), T, D, dtmp.data(), g + pl.ln2_g,
                  g + pl.ln2_b);
      ops.axpy(dstream.data(), 1.0, dtmp.data(), TD);

      // attention branch: x_attn = x_in + wo(attn(ln1(x_in))).
      dctx.assign(TD, 0.0);
      ops.mm_nt(dctx.data(), dstream.data(), at(pl.wo), T, D, D, false);
      ops.mm_tn(g + pl.wo, la.ctx.data(), dstream.data(), D, T, D, true);
      col_sums(dstream.data(), T, D, g + pl.bo);

      dq.assign(TD, 0.0);
      dk.assign(TD, 0.0);
      dv.assign(TD, 0.0);
      for (int h = 0; h < H; ++h) {
        pack_head(la.q.data(), T, D, h, dh, qh.data());
        pack_head(la.k.data(), T, D, h, dh, kh.data());
        pack_head(la.v.data(), T, D, h, dh, vh.data());
        pack_head(dctx.data(), T, D, h, dh, dph.data());
        const double* probs = la.probs.data() + static_cast<size_t>(h) * T * T;

        // dvh = probs^T dctx_h, reusing vh's buffer afterwards is unsafe,
        // so accumulate into a scratch then unpack.
        std::vector<double> dvh(static_cast<size_t>(T) * dh, 0.0);
        ops.mm_tn(dvh.data(), probs, dph.data(), T, T, dh, false);
        unpack_head_add(dvh.data(), T, D, h, dh, dv.data());

        dscore.assign(static_cast<size_t>(T) * T, 0.0);
        ops.mm_nt(dscore.data(), dph.data(), vh.data(), T, dh, T, false);
        for (int i = 0; i < T; ++i) {
          const double* pr = probs + static_cast<size_t>(i) * T;
          double* dsr = dscore.data() + static_cast<size_t>(i) * T;
          double dot = 0.0;
          for (int j = 0; j <= i; ++j) {
            dot += pr[j] * dsr[j];
          }
          for (int j = 0; j <= i; ++j) {
            dsr[j] = pr[j] * (dsr[j] - dot) * inv_sqrt_dh;
          }
          for (int j = i + 1; j < T; ++j) {
            dsr[j] = 0.0;
          }
        }
        std::vector<double> dqh(static_cast<size_t>(T) * dh, 0.0);
        std::vector<double> dkh(static_cast<size_t>(T) * dh, 0.0);
        ops.mm_nn(dqh.data(), dscore.data(), kh.data(), T, T, dh, false);
        ops.mm_tn(dkh.data(), dscore.data(), qh.data(), T, T, dh, false);
        unpack_head_add(dqh.data(), T, D, h, dh, dq.data());
        unpack_head_add(dkh.data(), T, D, h, dh, dk.data());
      }

      ops.mm_tn(g + pl.wq, la.ln1_out.data(), dq.data(), D, T, D, true);
      col_sums(dq.data(), T, D, g + pl.bq);
      ops.mm_tn(g + pl.wk, la.ln1_out.data(), dk.data(), D, T, D, true);
      col_sums(dk.data(), T, D, g + pl.bk);
      ops.mm_tn(g + pl.wv, la.ln1_out.data(), dv.data(), D, T, D, true);
      col_sums(dv.data(), T, D, g + pl.bv);

      dln2_out.assign(TD, 0.0);  // reuse as d(ln1_out)
      ops.mm_nt(dln2_out.data(), dq.data(), at(pl.wq), T, D, D, false);
      ops.mm_nt(dln2_out.data(), dk.data(), at(pl.wk), T, D, D, true);
      ops.mm_nt(dln2_out.data(), dv.data(), at(pl.wv), T, D, D, true);
      ln_backward(dln2_out.data(), la.ln1_xhat.data(), la.ln1_rstd.data(),
                  at(pl.ln1_g), T, D, dtmp.data(), g + pl.ln1_g,
                  g + pl.ln1_b);
      ops.axpy(dstream.data(), 1.0, dtmp.data(), TD);
    }

    for (int i = 0; i < T; ++i) {
      const double* di = dstream.data() + static_cast<size_t>(i) * D;
      double* gt = g + lt_.tok_emb + static_cast<size_t>(seq[i]) * D;
      double* gp = g + lt_.pos_emb + static_cast<size_t>(i) * D;
      for (int j = 0; j < D; ++j) {
        gt[j] += di[j];
        gp[j] += di[j];
      }
    }
  }

 private:
  Layout lt_;
  const double* p_;
};

void check_ids(const std::vector<int>& ids, int V, const char* what) {
  for (int id : ids) {
    if (id < 0 || id >= V) {
      throw std::invalid_argument(std::string(what) +
                                  ": token id out of range");
    }
  }
}

}  // namespace

CausalLM::CausalLM(const LMConfig& cfg, Vocabulary vocab)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  if (cfg_.layers < 1 || cfg_.model_dim < 1 || cfg_.heads < 1 ||
      cfg_.context_length < 2) {
    throw std::invalid_argument("invalid model config");
  }
  if (cfg_.model_dim % cfg_.heads != 0) {
    throw std::invalid_argument("model_dim must be divisible by heads");
  }
  if (vocab_.size() < 5) {
    throw std::invalid_argument("vocabulary missing specials");
  }
  const Layout lt = make_layout(cfg_, vocab_.size());
  params_.assign(lt.total, 0.0);
  std::mt19937_64 rng(cfg_.seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  auto fill_normal = [&](size_t off, size_t count) {
    for (size_t i = 0; i < count; ++i) {
      params_[off + i] = dist(rng);
    }
  };
  auto fill_ones = [&](size_t off, size_t count) {
    std::fill_n(params_.begin() + off, count, 1.0);
  };
  const size_t D = lt.D, F = lt.F;
  fill_normal(lt.tok_emb, static_cast<size_t>(lt.V) * D);
  fill_normal(lt.pos_emb, static_cast<size_t>(lt.C) * D);
  for (const auto& pl : lt.layer) {
    fill_ones(pl.ln1_g, D);
    fill_normal(pl.wq, D * D);
    fill_normal(pl.wk, D * D);
    fill_normal(pl.wv, D * D);
    fill_normal(pl.wo, D * D);
    fill_ones(pl.ln2_g, D);
    fill_normal(pl.w1, D * F);
    fill_normal(pl.w2, F * D);
  }
  fill_ones(lt.lnf_g, D);
  fill_normal(lt.w_out, D * static_cast<size_t>(lt.V));
}

double CausalLM::nll(const TrainBatch& batch, LossNorm norm) const {
  std::vector<double> unused;
  return nll_grad(batch, norm, 0.0, unused);
}

double CausalLM::nll_grad(const TrainBatch& batch, LossNorm norm, double scale,
                          std::vector<double>& grad) const {
  const bool want_grad = scale != 0.0;
  const Runner r(cfg_, params_, vocab_.size());
  const int V = vocab_.size();
  const int D = r.lt().D;

  double denom = 0.0;
  if (norm == LossNorm::by_weight_sum) {
    for (const auto& item : batch.items) {
      if (item.weight < 0.0) {
        throw std::invalid_argument("negative item weight");
      }
      denom += item.weight;
    }
  } else {
    denom = static_cast<double>(batch.items.size());
  }
  if (denom <= 0.0) {
    return 0.0;
  }
  if (want_grad && grad.size() != params_.size()) {
    throw std::invalid_argument("gradient buffer size mismatch");
  }

  double total = 0.0;
  Acts acts;
  std::vector<double> f, f_xhat, f_rstd, logits;
  for (size_t idx = 0; idx < batch.items.size(); ++idx) {
    const auto& item = batch.items[idx];
    const int P = static_cast<int>(item.prefix.size());
    const int Tt = static_cast<int>(item.target.size());
    if (Tt == 0 || item.weight == 0.0) {
      continue;
    }
    if (!item.pos_weights.empty() &&
        item.pos_weights.size() != item.target.size()) {
      throw std::invalid_argument("pos_weights size mismatch at item " +
                                  std::to_string(idx));
    }
    if (P + Tt > cfg_.context_length) {
      throw data_error("batch item " + std::to_string(idx) +
                       " exceeds context length");
    }
    check_ids(item.prefix, V, "prefix");
    check_ids(item.target, V, "target");

    std::vector<int> seq;
    seq.reserve(1 + P + Tt - 1);
    seq.push_back(Vocabulary::bos);
    seq.insert(seq.end(), item.prefix.begin(), item.prefix.end());
    seq.insert(seq.end(), item.target.begin(), item.target.end() - 1);

    r.forward(seq, acts, nullptr);
    r.head_forward(acts, P, f, f_xhat, f_rstd, logits);
    const int R = Tt;

    double item_loss = 0.0;
    // logits becomes d(logits) in place when a gradient is requested.
    for (int k = 0; k < R; ++k) {
      double* row = logits.data() + static_cast<size_t>(k) * V;
      const int tgt = item.target[k];
      const double pw = item.pos_weights.empty() ? 1.0 : item.pos_weights[k];
      double mx = row[0];
      for (int j = 1; j < V; ++j) {
        mx = std::max(mx, row[j]);
      }
      double sum = 0.0;
      for (int j = 0; j < V; ++j) {
        sum += std::exp(row[j] - mx);
      }
      const double logp = row[tgt] - mx - std::log(sum);
      item_loss += pw * (-logp);
      if (want_grad) {
        const double coef = scale * item.weight * pw / denom;
        for (int j = 0; j < V; ++j) {
          row[j] = std::exp(row[j] - mx) / sum * coef;
        }
        row[tgt] -= coef;
      }
    }
    total += item.weight * item_loss;

    if (want_grad) {
      const auto& ops = kernels::active();
      double* g = grad.data();
      const auto& lt = r.lt();
      ops.mm_tn(g + lt.w_out, f.data(), logits.data(), D, R, V, true);
      std::vector<double> df(static_cast<size_t>(R) * D, 0.0);
      ops.mm_nt(df.data(), logits.data(), r.at(lt.w_out), R, V, D, false);
      std::vector<double> dstream(
          static_cast<size_t>(acts.T) * D, 0.0);
      ln_backward(df.data(), f_xhat.data(), f_rstd.data(), r.at(lt.lnf_g), R,
                  D, dstream.data() + static_cast<size_t>(P) * D,
                  g + lt.lnf_g, g + lt.lnf_b);
      r.backward(seq, acts, dstream, g);
    }
  }
  return total / denom;
}

DecodeResult CausalLM::generate(const std::vector<int>& prefix,
                                int max_new) const {
  DecodeResult out;
  if (max_new <= 0) {
    return out;
  }
  std::vector<double> dist;
  DecodeState state = prefill(prefix, dist);
  while (true) {
    const int best = argmax_lowest(dist);
    if (best == Vocabulary::eoa) {
      out.hit_eoa = true;
      break;
    }
    out.tokens.push_back(best);
    out.stepwise_logprobs.push_back(std::log(dist[best]));
    if (static_cast<int>(out.tokens.size()) >= max_new ||
        state.len >= cfg_.context_length) {
      break;
    }
    dist = decode_step(state, best);
  }
  out.text = vocab_.decode(out.tokens);
  return out;
}

double CausalLM::sequence_logprob(const std::vector<int>& prefix,
                                  const std::vector<int>& target) const {
  if (target.empty()) {
    return 0.0;
  }
  const int P = static_cast<int>(prefix.size());
  const int Tt = static_cast<int>(target.size());
  if (P + Tt > cfg_.context_length) {
    throw data_error("sequence_logprob: prefix+target exceeds context");
  }
  check_ids(prefix, vocab_.size(), "prefix");
  check_ids(target, vocab_.size(), "target");
  const Runner r(cfg_, params_, vocab_.size());
  std::vector<int> seq;
  seq.push_back(Vocabulary::bos);
  seq.insert(seq.end(), prefix.begin(), prefix.end());
  seq.insert(seq.end(), target.begin(), target.end() - 1);
  Acts acts;
  r.forward(seq, acts, nullptr);
  std::vector<double> f, f_xhat, f_rstd, logits;
  r.head_forward(acts, P, f, f_xhat, f_rstd, logits);
  const int V = vocab_.size();
  double total = 0.0;
  for (int k = 0; k < Tt; ++k) {
    const double* row = logits.data() + static_cast<size_t>(k) * V;
    double mx = row[0];
    for (int j = 1; j < V; ++j) {
      mx = std::max(mx, row[j]);
    }
    double sum = 0.0;
    for (int j = 0; j < V; ++j) {
      sum += std::exp(row[j] - mx);
    }
    total += row[target[k]] - mx - std::log(sum);
  }
  return total;
}

std::vector<double> CausalLM::next_distribution(
    const std::vector<int>& context) const {
  std::vector<double> dist;
  prefill(context, dist);
  return dist;
}

DecodeState CausalLM::prefill(const std::vector<int>& prefix,
                              std::vector<double>& first_dist) const {
  if (1 + static_cast<int>(prefix.size()) > cfg_.context_length) {
    throw data_error("prefix exceeds context length");
  }
  check_ids(prefix, vocab_.size(), "prefix");
  const Runner r(cfg_, params_, vocab_.size());
  std::vector<int> seq;
  seq.push_back(Vocabulary::bos);
  seq.insert(seq.end(), prefix.begin(), prefix.end());
  Acts acts;
  DecodeState state;
  r.forward(seq, acts, &state);
  std::vector<double> f, f_xhat, f_rstd;
  r.head_forward(acts, acts.T - 1, f, f_xhat, f_rstd, first_dist);
  softmax_inplace(first_dist);
  return state;
}

std::vector<double> CausalLM::decode_step(DecodeState& state,
                                          int token) const {
  if (state.len >= cfg_.context_length) {
    throw data_error("decode_step: context exhausted");
  }
  if (token < 0 || token >= vocab_.size()) {
    throw std::invalid_argument("decode_step: token id out of range");
  }
  const Runner r(cfg_, params_, vocab_.size());
  const auto& lt = r.lt();
  const auto& ops = kernels::active();
  const int D = lt.D, H = lt.H, dh = lt.dh, F = lt.F;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const int pos = state.len;

  std::vector<double> x(D);
  {
    const double* te = r.at(lt.tok_emb) + static_cast<size_t>(token) * D;
    const double* pe = r.at(lt.pos_emb) + static_cast<size_t>(pos) * D;
    for (int j = 0; j < D; ++j) {
      x[j] = te[j] + pe[j];
    }
  }
  std::vector<double> a(D), xhat(D), q(D), k(D), v(D), ctx(D), h_pre(F);
  std::vector<double> rstd(1);
  std::vector<double> scores;
  for (int l = 0; l < lt.L; ++l) {
    const auto& pl = lt.layer[l];
    ln_forward(x.data(), r.at(pl.ln1_g), r.at(pl.ln1_b), 1, D, a.data(),
               xhat.data(), rstd.data());
    std::fill(q.begin(), q.end(), 0.0);
    std::fill(k.begin(), k.end(), 0.0);
    std::fill(v.begin(), v.end(), 0.0);
    ops.mm_nn(q.data(), a.data(), r.at(pl.wq), 1, D, D, false);
    ops.axpy(q.data(), 1.0, r.at(pl.bq), D);
    ops.mm_nn(k.data(), a.data(), r.at(pl.wk), 1, D, D, false);
    ops.axpy(k.data(), 1.0, r.at(pl.bk), D);
    ops.mm_nn(v.data(), a.data(), r.at(pl.wv), 1, D, D, false);
    ops.axpy(v.data(), 1.0, r.at(pl.bv), D);
    auto& kc = state.k_cache[l];
    auto& vc = state.v_cache[l];
    kc.insert(kc.end(), k.begin(), k.end());
    vc.insert(vc.end(), v.begin(), v.end());
    const int T = pos + 1;
    std::fill(ctx.begin(), ctx.end(), 0.0);
    scores.assign(T, 0.0);
    for (int h = 0; h < H; ++h) {
      const int off = h * dh;
      for (int j = 0; j < T; ++j) {
        const double* kj = kc.data() + static_cast<size_t>(j) * D + off;
        double s = 0.0;
        for (int d = 0; d < dh; ++d) {
          s += q[off + d] * kj[d];
        }
        scores[j] = s * inv_sqrt_dh;
      }
      double mx = scores[0];
      for (int j = 1; j < T; ++j) {
        mx = std::max(mx, scores[j]);
      }
      double sum = 0.0;
      for (int j = 0; j < T; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        sum += scores[j];
      }
      for (int j = 0; j < T; ++j) {
        const double p = scores[j] / sum;
        const double* vj = vc.data() + static_cast<size_t>(j) * D + off;
        for (int d = 0; d < dh; ++d) {
          ctx[off + d] += p * vj[d];
        }
      }
    }
    ops.mm_nn(x.data(), ctx.data(), r.at(pl.wo), 1, D, D, true);
    ops.axpy(x.data(), 1.0, r.at(pl.bo), D);

    ln_forward(x.data(), r.at(pl.ln2_g), r.at(pl.ln2_b), 1, D, a.data(),
               xhat.data(), rstd.data());
    std::fill(h_pre.begin(), h_pre.end(), 0.0);
    ops.mm_nn(h_pre.data(), a.data(), r.at(pl.w1), 1, D, F, false);
    ops.axpy(h_pre.data(), 1.0, r.at(pl.b1), F);
    for (int i = 0; i < F; ++i) {
      h_pre[i] = gelu(h_pre[i]);
    }
    ops.mm_nn(x.data(), h_pre.data(), r.at(pl.w2), 1, F, D, true);
    ops.axpy(x.data(), 1.0, r.at(pl.b2), D);
  }
  ln_forward(x.data(), r.at(lt.lnf_g), r.at(lt.lnf_b), 1, D, a.data(),
             xhat.data(), rstd.data());
  std::vector<double> logits(lt.V, 0.0);
  ops.mm_nn(logits.data(), a.data(), r.at(lt.w_out), 1, D, lt.V, false);
  softmax_inplace(logits);
  state.len = pos + 1;
  return logits;
}

double train_step(CausalLM& model, const TrainBatch& batch, double lr) {
  if (lr < 0.0) {
    throw std::invalid_argument("train_step: negative learning rate");
  }
  std::vector<double> grad(model.n_params(), 0.0);
  const double loss =
      model.nll_grad(batch, LossNorm::by_weight_sum, 1.0, grad);
  if (!std::isfinite(loss)) {
    throw std::runtime_error("train_step: non-finite loss (" +
                             std::to_string(loss) + ") on batch of " +
                             std::to_string(batch.items.size()) + " items");
  }
  if (lr != 0.0) {
    kernels::active().axpy(model.params().data(), -lr, grad.data(),
                           grad.size());
  }
  return loss;
}

DecodeResult ensemble_generate(const std::vector<const CausalLM*>& models,
                               const std::vector<double>& weights,
                               const std::vector<std::vector<int>>& prefixes,
                               int max_new) {
  if (models.empty() || models.size() != weights.size() ||
      models.size() != prefixes.size()) {
    throw std::invalid_argument(
        "ensemble_generate: models, weights and prefixes must align");
  }
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) {
      throw std::invalid_argument("ensemble_generate: invalid weight");
    }
    wsum += w;
  }
  if (wsum <= 0.0) {
    throw std::invalid_argument("ensemble_generate: weights are all zero");
  }
  const size_t K = models.size();
  for (size_t i = 1; i < K; ++i) {
    if (!(models[i]->vocab() == models[0]->vocab())) {
      throw std::invalid_argument("ensemble_generate: vocabulary mismatch");
    }
  }
  DecodeResult out;
  if (max_new <= 0) {
    return out;
  }
  const int V = models[0]->vocab().size();
  std::vector<DecodeState> states(K);
  std::vector<std::vector<double>> dists(K);
  for (size_t i = 0; i < K; ++i) {
    states[i] = models[i]->prefill(prefixes[i], dists[i]);
  }
  while (true) {
    std::vector<double> mixed(V, 0.0);
    for (size_t i = 0; i < K; ++i) {
      const double alpha = weights[i] / wsum;
      kernels::active().axpy(mixed.data(), alpha, dists[i].data(), V);
    }
    const int best = argmax_lowest(mixed);
    if (best == Vocabulary::eoa) {
      out.hit_eoa = true;
      break;
    }
    out.tokens.push_back(best);
    out.stepwise_logprobs.push_back(std::log(mixed[best]));
    if (static_cast<int>(out.tokens.size()) >= max_new) {
      break;
    }
    bool exhausted = false;
    for (size_t i = 0; i < K; ++i) {
      if (states[i].len >= models[i]->config().context_length) {
        exhausted = true;
      }
    }
    if (exhausted) {
      break;
    }
    for (size_t i = 0; i < K; ++i) {
      dists[i] = models[i]->decode_step(states[i], best);
    }
  }
  out.text = models[0]->vocab().decode(out.tokens);
  return out;
}

DecodeResult ensemble_generate(const std::vector<const CausalLM*>& models,
                               const std::vector<double>& weights,
                               const std::vector<int>& prefix, int max_new) {
  return ensemble_generate(models, weights,
                           std::vector<std::vector<int>>(models.size(), prefix),
                           max_new);
}

}  // namespace pdst
