#pragma once

#include "kgbridge/promptbank.hpp"
#include "kgbridge/types.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace kgb {

struct ModelConfig {
  int dim = 100;
  int layers = 2;
  int heads = 2;
  int ffn_mult = 4;
  int max_seq_len = 15;  // longer sequences keep the most recent items
  double dropout = 0.2;

  void validate() const {
    if (dim < 1) throw std::invalid_argument("model dim must be >= 1");
    if (layers < 1) throw std::invalid_argument("model layers must be >= 1");
    if (heads < 1 || dim % heads != 0) {
      throw std::invalid_argument("heads must divide dim");
    }
    if (max_seq_len < 1) throw std::invalid_argument("max_seq_len must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) {
      throw std::invalid_argument("dropout must lie in [0, 1)");
    }
  }
};

template <typename S>
struct EncoderLayer {
  Mat<S> wq, wk, wv, wo;  // d x d, applied as x^T W
  Vec<S> bq, bk, bv, bo;
  Mat<S> w1;  // d x f
  Vec<S> b1;
  Mat<S> w2;  // f x d
  Vec<S> b2;
  Vec<S> ln1_g, ln1_b, ln2_g, ln2_b;
};

// item/positional tables, enrichment-attention scorer (2d -> d -> 1 with
// ReLU), causal transformer encoder, linear prediction head. Item row 0 is
// the reserved padding slot and stays zero.
template <typename S>
struct ModelState {
  Mat<S> item_emb;  // (|V|+1) x d
  Mat<S> pos_emb;   // N_max x d
  Mat<S> att_w1;    // 2d x d
  Vec<S> att_b1;    // d
  Vec<S> att_w2;    // d
  Vec<S> att_b2;    // size 1
  std::vector<EncoderLayer<S>> layers;
  Mat<S> head_w;  // |V| x d
  Vec<S> head_b;  // |V|
  int n_heads = 2;
  int max_seq_len = 15;
  double dropout_rate = 0.2;

  Index dim() const { return item_emb.cols(); }
  Index vocab() const { return head_w.rows(); }  // real items, ids 1..|V|
};

// Fixed parameter enumeration; serialization, the optimizer, and the gradient
// checks all iterate parameters in this order.
template <typename S, typename F>
void for_each_param(ModelState<S>& m, F&& f) {
  f("item_emb", m.item_emb);
  f("pos_emb", m.pos_emb);
  f("att_w1", m.att_w1);
  f("att_b1", m.att_b1);
  f("att_w2", m.att_w2);
  f("att_b2", m.att_b2);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const std::string p = "l" + std::to_string(i) + "_";
    auto& l = m.layers[i];
    f(p + "wq", l.wq);
    f(p + "bq", l.bq);
    f(p + "wk", l.wk);
    f(p + "bk", l.bk);
    f(p + "wv", l.wv);
    f(p + "bv", l.bv);
    f(p + "wo", l.wo);
    f(p + "bo", l.bo);
    f(p + "ln1_g", l.ln1_g);
    f(p + "ln1_b", l.ln1_b);
    f(p + "w1", l.w1);
    f(p + "b1", l.b1);
    f(p + "w2", l.w2);
    f(p + "b2", l.b2);
    f(p + "ln2_g", l.ln2_g);
    f(p + "ln2_b", l.ln2_b);
  }
  f("head_w", m.head_w);
  f("head_b", m.head_b);
}

template <typename S>
ModelState<S> init_model(const ModelConfig& cfg, Index vocab, Rng& rng) {
  cfg.validate();
  const Index d = cfg.dim;
  const Index f = static_cast<Index>(cfg.ffn_mult) * d;
  ModelState<S> m;
  m.n_heads = cfg.heads;
  m.max_seq_len = cfg.max_seq_len;
  m.dropout_rate = cfg.dropout;

  m.item_emb = Mat<S>::Zero(vocab + 1, d);
  for (Index i = 1; i <= vocab; ++i) {
    for (Index j = 0; j < d; ++j) {
      m.item_emb(i, j) = static_cast<S>(0.02 * rng.normal());
    }
  }
  m.pos_emb.resize(cfg.max_seq_len, d);
  for (Index i = 0; i < m.pos_emb.rows(); ++i) {
    for (Index j = 0; j < d; ++j) {
      m.pos_emb(i, j) = static_cast<S>(0.02 * rng.normal());
    }
  }

  m.att_w1 = detail::xavier_uniform<S>(2 * d, d, rng);
  m.att_b1 = Vec<S>::Zero(d);
  m.att_w2 = detail::xavier_uniform<S>(d, 1, rng).col(0);
  m.att_b2 = Vec<S>::Zero(1);

  m.layers.resize(cfg.layers);
  for (auto& l : m.layers) {
    l.wq = detail::xavier_uniform<S>(d, d, rng);
    l.wk = detail::xavier_uniform<S>(d, d, rng);
    l.wv = detail::xavier_uniform<S>(d, d, rng);
    l.wo = detail::xavier_uniform<S>(d, d, rng);
    l.bq = Vec<S>::Zero(d);
    l.bk = Vec<S>::Zero(d);
    l.bv = Vec<S>::Zero(d);
    l.bo = Vec<S>::Zero(d);
    l.w1 = detail::xavier_uniform<S>(d, f, rng);
    l.b1 = Vec<S>::Zero(f);
    l.w2 = detail::xavier_uniform<S>(f, d, rng);
    l.b2 = Vec<S>::Zero(d);
    l.ln1_g = Vec<S>::Ones(d);
    l.ln1_b = Vec<S>::Zero(d);
    l.ln2_g = Vec<S>::Ones(d);
    l.ln2_b = Vec<S>::Zero(d);
  }

  m.head_w = detail::xavier_uniform<S>(vocab, d, rng);
  m.head_b = Vec<S>::Zero(vocab);
  return m;
}

// Zero-valued gradient container with the same shapes.
template <typename S>
ModelState<S> zero_like(const ModelState<S>& m) {
  ModelState<S> g = m;
  for_each_param(g, [](const char*, auto& p) { p.setZero(); });
  return g;
}

// Left-padded id batch; padding slots carry id 0 and mask false. targets
// holds the per-position next item (0 where no supervision), so a row can
// carry one next-item pair per prefix position.
struct SequenceBatch {
  MatI ids;      // B x N
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mask;
  MatI targets;  // B x N, 0 = none

  Index batch() const { return ids.rows(); }
  Index len() const { return ids.cols(); }
};

// Builds a batch from per-row id lists, left-padding to `len`.
SequenceBatch make_batch(const std::vector<std::vector<int>>& inputs,
                         const std::vector<std::vector<int>>& targets, Index len);

inline SequenceBatch make_batch(const std::vector<std::vector<int>>& inputs,
                                Index len) {
  return make_batch(inputs, {}, len);
}

namespace detail {

template <typename S>
void check_finite(const Vec<S>& v, const char* what) {
  if (!v.allFinite()) throw std::runtime_error(std::string("non-finite ") + what);
}

}  // namespace detail

// ReLU pre-activation signs recorded during a forward pass. The gradient
// check compares signatures of the two perturbed evaluations and rejects
// coordinates whose finite-difference interval straddles a kink.
using KinkSignature = std::vector<std::uint8_t>;

template <typename S>
struct SeqForwardCache {
  struct LayerCache {
    Mat<S> input;                 // N x d
    Mat<S> q, k, v;               // N x d
    std::vector<Mat<S>> att;      // per head, N x N row-softmax weights
    Mat<S> ao;                    // N x d concatenated head outputs
    Mat<S> ln1_xhat, ln1_out;     // N x d
    Vec<S> ln1_rstd;              // N
    Mat<S> ffn_h;                 // N x f pre-ReLU
    Mat<S> ln2_xhat, out;         // N x d
    Vec<S> ln2_rstd;              // N
  };
  std::vector<int> ids;   // N
  std::vector<int> pos;   // N, content-relative position (-1 for padding)
  Mat<S> emb;             // N x d, post-dropout
  Mat<S> dropmask;        // N x d (empty in eval mode)
  Mat<S> alpha;           // N x (2L+1)
  Mat<S> fatt_h;          // (N*(2L+1)) x d pre-ReLU
  Mat<S> enriched;        // N x d
  std::vector<LayerCache> layers;
  const Mat<S>* hidden = nullptr;  // final N x d (points into layers)
};

inline constexpr double kLayerNormEps = 1e-5;

// ---------------------------------------------------------------------------
// forward ops
// ---------------------------------------------------------------------------

// E = ItemEmb(ids) + PosEmb(position), dropout in training mode, padding rows
// zeroed. Positions are content-relative (first real item is position 0) so
// left-padding never changes a real item's representation.
template <typename S>
std::vector<Mat<S>> embed_sequence(const ModelState<S>& state,
                                   const SequenceBatch& batch, bool training,
                                   Rng* dropout_rng,
                                   std::vector<SeqForwardCache<S>>* caches = nullptr) {
  const Index B = batch.batch();
  const Index N = batch.len();
  const Index d = state.dim();
  if (N > state.max_seq_len) {
    throw std::invalid_argument("sequence length exceeds max_seq_len");
  }
  const bool use_dropout = training && state.dropout_rate > 0.0;
  if (use_dropout && dropout_rng == nullptr) {
    throw std::invalid_argument("training-mode dropout requires an RNG");
  }
  const S keep_scale = static_cast<S>(1.0 / (1.0 - state.dropout_rate));

  std::vector<Mat<S>> out(B);
  if (caches) caches->resize(B);
  for (Index b = 0; b < B; ++b) {
    Mat<S> e = Mat<S>::Zero(N, d);
    Mat<S> dmask;
    if (use_dropout) dmask = Mat<S>::Zero(N, d);
    std::vector<int> pos(N, -1);
    int next_pos = 0;
    for (Index i = 0; i < N; ++i) {
      if (!batch.mask(b, i)) continue;
      const int id = batch.ids(b, i);
      if (id <= 0 || id >= state.item_emb.rows()) {
        throw std::out_of_range("item id out of range: " + std::to_string(id));
      }
      if (next_pos >= state.pos_emb.rows()) {
        throw std::invalid_argument("sequence has more items than positions");
      }
      pos[i] = next_pos;
      e.row(i) = state.item_emb.row(id) + state.pos_emb.row(next_pos);
      ++next_pos;
      if (use_dropout) {
        for (Index j = 0; j < d; ++j) {
          const S keep =
              dropout_rng->bernoulli(1.0 - state.dropout_rate) ? keep_scale : S(0);
          dmask(i, j) = keep;
          e(i, j) *= keep;
        }
      }
    }
    if (caches) {
      auto& c = (*caches)[b];
      c.ids.assign(N, 0);
      for (Index i = 0; i < N; ++i) c.ids[i] = batch.ids(b, i);
      c.pos = pos;
      c.emb = e;
      c.dropmask = dmask;
    }
    out[b] = std::move(e);
  }
  return out;
}

// Per position i, context X_i = [P_shared; P_spec; e_i]; slot scores come
// from the feed-forward scorer on [X_ij; e_i]; the enriched vector is the
// softmax-weighted combination of the slots. Padding rows stay zero.
template <typename S>
std::vector<Mat<S>> enrich_items(const ModelState<S>& state,
                                 const std::vector<Mat<S>>& embedded,
                                 const SequenceBatch& batch,
                                 const PromptBank<S>& shared,
                                 const PromptBank<S>& spec,
                                 std::vector<SeqForwardCache<S>>* caches = nullptr,
                                 KinkSignature* kinks = nullptr) {
  const Index d = state.dim();
  if (shared.values.cols() != d || spec.values.cols() != d ||
      shared.values.rows() != spec.values.rows()) {
    throw std::invalid_argument("prompt bank shape mismatch");
  }
  const Index L = shared.values.rows();
  const Index slots = 2 * L + 1;
  const Index B = batch.batch();
  const Index N = batch.len();

  std::vector<Mat<S>> out(B);
  Vec<S> cat(2 * d);
  Vec<S> hpre(d);
  Vec<S> scores(slots);
  for (Index b = 0; b < B; ++b) {
    if (embedded[b].rows() != N || embedded[b].cols() != d) {
      throw std::invalid_argument("embedded batch shape mismatch");
    }
    Mat<S> enr = Mat<S>::Zero(N, d);
    Mat<S> alpha;
    Mat<S> fatt_h;
    if (caches) {
      alpha = Mat<S>::Zero(N, slots);
      fatt_h = Mat<S>::Zero(N * slots, d);
    }
    for (Index i = 0; i < N; ++i) {
      if (!batch.mask(b, i)) continue;
      const auto e = embedded[b].row(i);
      cat.tail(d) = e.transpose();
      for (Index j = 0; j < slots; ++j) {
        if (j < L) {
          cat.head(d) = shared.values.row(j).transpose();
        } else if (j < 2 * L) {
          cat.head(d) = spec.values.row(j - L).transpose();
        } else {
          cat.head(d) = e.transpose();
        }
        hpre.noalias() = state.att_w1.transpose() * cat;
        hpre += state.att_b1;
        if (caches) fatt_h.row(i * slots + j) = hpre.transpose();
        if (kinks) {
          for (Index t = 0; t < d; ++t) kinks->push_back(hpre(t) > S(0) ? 1 : 0);
        }
        S s = state.att_b2(0);
        for (Index t = 0; t < d; ++t) {
          if (hpre(t) > S(0)) s += state.att_w2(t) * hpre(t);
        }
        scores(j) = s;
      }
      // ordered softmax over the slots
      S mx = scores(0);
      for (Index j = 1; j < slots; ++j) mx = std::max(mx, scores(j));
      S sum = 0;
      for (Index j = 0; j < slots; ++j) {
        scores(j) = std::exp(scores(j) - mx);
        sum += scores(j);
      }
      for (Index j = 0; j < slots; ++j) scores(j) /= sum;
      if (caches) alpha.row(i) = scores.transpose();

      auto row = enr.row(i);
      for (Index j = 0; j < L; ++j) row += scores(j) * shared.values.row(j);
      for (Index j = 0; j < L; ++j) row += scores(L + j) * spec.values.row(j);
      row += scores(2 * L) * e;
    }
    if (caches) {
      (*caches)[b].alpha = std::move(alpha);
      (*caches)[b].fatt_h = std::move(fatt_h);
      (*caches)[b].enriched = enr;
    }
    out[b] = std::move(enr);
  }
  return out;
}

namespace detail {

template <typename S>
void layer_norm_row(const Vec<S>& x, const Vec<S>& g, const Vec<S>& b, Vec<S>& out,
                    Vec<S>& xhat, S& rstd) {
  const Index d = x.size();
  const S mean = x.sum() / static_cast<S>(d);
  S var = 0;
  for (Index j = 0; j < d; ++j) {
    const S c = x(j) - mean;
    var += c * c;
  }
  var /= static_cast<S>(d);
  rstd = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
  xhat = (x.array() - mean).matrix() * rstd;
  out = (g.array() * xhat.array() + b.array()).matrix();
}

}  // namespace detail

template <typename S>
struct EncodeResult {
  std::vector<Mat<S>> hidden;  // per sequence, N x d
  Mat<S> z;                    // B x d, last non-padding position
};

// Multi-head self-attention under a strictly causal mask with padding keys
// excluded, post-norm residual blocks, ReLU feed-forward. Padding rows stay
// zero through the whole stack.
template <typename S>
EncodeResult<S> encode_sequence(const ModelState<S>& state,
                                const std::vector<Mat<S>>& enriched,
                                const SequenceBatch& batch,
                                std::vector<SeqForwardCache<S>>* caches = nullptr,
                                KinkSignature* kinks = nullptr) {
  const Index B = batch.batch();
  const Index N = batch.len();
  const Index d = state.dim();
  const Index heads = state.n_heads;
  const Index dh = d / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  EncodeResult<S> result;
  result.hidden.resize(B);
  result.z = Mat<S>::Zero(B, d);

  Vec<S> tmp(d), xhat(d), ln_out(d);
  for (Index b = 0; b < B; ++b) {
    Index last_real = -1;
    for (Index i = 0; i < N; ++i) {
      if (batch.mask(b, i)) last_real = i;
    }
    if (last_real < 0) {
      throw std::invalid_argument("all-padding row at batch index " + std::to_string(b));
    }

    Mat<S> h = enriched[b];
    auto* seq_cache = caches ? &(*caches)[b] : nullptr;
    if (seq_cache) seq_cache->layers.resize(state.layers.size());

    for (std::size_t li = 0; li < state.layers.size(); ++li) {
      const auto& l = state.layers[li];
      typename SeqForwardCache<S>::LayerCache* lc =
          seq_cache ? &seq_cache->layers[li] : nullptr;
      if (lc) lc->input = h;

      Mat<S> q = Mat<S>::Zero(N, d), k = Mat<S>::Zero(N, d), v = Mat<S>::Zero(N, d);
      for (Index i = 0; i < N; ++i) {
        if (!batch.mask(b, i)) continue;
        const Vec<S> hi = h.row(i).transpose();
        tmp.noalias() = l.wq.transpose() * hi;
        q.row(i) = (tmp + l.bq).transpose();
        tmp.noalias() = l.wk.transpose() * hi;
        k.row(i) = (tmp + l.bk).transpose();
        tmp.noalias() = l.wv.transpose() * hi;
        v.row(i) = (tmp + l.bv).transpose();
      }

      std::vector<Mat<S>> att;
      if (lc) att.assign(heads, Mat<S>::Zero(N, N));
      Mat<S> ao = Mat<S>::Zero(N, d);
      Vec<S> sc(N);
      for (Index hd = 0; hd < heads; ++hd) {
        const Index off = hd * dh;
        for (Index i = 0; i < N; ++i) {
          if (!batch.mask(b, i)) continue;
          S mx = std::numeric_limits<S>::lowest();
          for (Index j = 0; j <= i; ++j) {
            if (!batch.mask(b, j)) continue;
            S dot = 0;
            for (Index t = 0; t < dh; ++t) dot += q(i, off + t) * k(j, off + t);
            sc(j) = dot * scale;
            mx = std::max(mx, sc(j));
          }
          S sum = 0;
          for (Index j = 0; j <= i; ++j) {
            if (!batch.mask(b, j)) continue;
            sc(j) = std::exp(sc(j) - mx);
            sum += sc(j);
          }
          for (Index j = 0; j <= i; ++j) {
            if (!batch.mask(b, j)) continue;
            const S w = sc(j) / sum;
            if (lc) att[hd](i, j) = w;
            for (Index t = 0; t < dh; ++t) ao(i, off + t) += w * v(j, off + t);
          }
        }
      }

      Mat<S> next = Mat<S>::Zero(N, d);
      Mat<S> ln1_xhat, ln1_out_m, ffn_h_m, ln2_xhat;
      Vec<S> ln1_rstd, ln2_rstd;
      const Index f = l.b1.size();
      if (lc) {
        ln1_xhat = Mat<S>::Zero(N, d);
        ln1_out_m = Mat<S>::Zero(N, d);
        ffn_h_m = Mat<S>::Zero(N, f);
        ln2_xhat = Mat<S>::Zero(N, d);
        ln1_rstd = Vec<S>::Zero(N);
        ln2_rstd = Vec<S>::Zero(N);
      }
      Vec<S> hpre(f), hrelu(f), ffn_out(d), proj(d), sum1(d), sum2(d);
      for (Index i = 0; i < N; ++i) {
        if (!batch.mask(b, i)) continue;
        const Vec<S> ai = ao.row(i).transpose();
        proj.noalias() = l.wo.transpose() * ai;
        proj += l.bo;
        sum1 = h.row(i).transpose() + proj;

        S rstd1;
        detail::layer_norm_row(sum1, l.ln1_g, l.ln1_b, ln_out, xhat, rstd1);
        if (lc) {
          ln1_xhat.row(i) = xhat.transpose();
          ln1_out_m.row(i) = ln_out.transpose();
          ln1_rstd(i) = rstd1;
        }

        hpre.noalias() = l.w1.transpose() * ln_out;
        hpre += l.b1;
        if (lc) ffn_h_m.row(i) = hpre.transpose();
        if (kinks) {
          for (Index t = 0; t < f; ++t) kinks->push_back(hpre(t) > S(0) ? 1 : 0);
        }
        hrelu = hpre.cwiseMax(S(0));
        ffn_out.noalias() = l.w2.transpose() * hrelu;
        ffn_out += l.b2;
        sum2 = ln_out + ffn_out;

        S rstd2;
        detail::layer_norm_row(sum2, l.ln2_g, l.ln2_b, ln_out, xhat, rstd2);
        next.row(i) = ln_out.transpose();
        if (lc) {
          ln2_xhat.row(i) = xhat.transpose();
          ln2_rstd(i) = rstd2;
        }
      }

      if (lc) {
        lc->q = std::move(q);
        lc->k = std::move(k);
        lc->v = std::move(v);
        lc->att = std::move(att);
        lc->ao = std::move(ao);
        lc->ln1_xhat = std::move(ln1_xhat);
        lc->ln1_out = std::move(ln1_out_m);
        lc->ln1_rstd = std::move(ln1_rstd);
        lc->ffn_h = std::move(ffn_h_m);
        lc->ln2_xhat = std::move(ln2_xhat);
        lc->ln2_rstd = std::move(ln2_rstd);
        lc->out = next;
      }
      h = std::move(next);
    }

    result.z.row(b) = h.row(last_real);
    if (seq_cache) {
      seq_cache->hidden = &seq_cache->layers.back().out;
    }
    result.hidden[b] = std::move(h);
  }
  return result;
}

// Row-wise softmax over item logits W z + b; every row sums to 1.
template <typename S>
Mat<S> predict_distribution(const ModelState<S>& state, const Mat<S>& z) {
  const Index B = z.rows();
  const Index V = state.vocab();
  if (z.cols() != state.dim()) throw std::invalid_argument("z dimension mismatch");
  Mat<S> probs(B, V);
  Vec<S> logits(V);
  for (Index b = 0; b < B; ++b) {
    logits.noalias() = state.head_w * z.row(b).transpose();
    logits += state.head_b;
    detail::check_finite(logits, "logits");
    S mx = logits(0);
    for (Index j = 1; j < V; ++j) mx = std::max(mx, logits(j));
    S sum = 0;
    for (Index j = 0; j < V; ++j) {
      logits(j) = std::exp(logits(j) - mx);
      sum += logits(j);
    }
    probs.row(b) = (logits / sum).transpose();
  }
  return probs;
}

}  // namespace kgb
