#pragma once

#include "kgbridge/seqmodel.hpp"

#include <cmath>
#include <stdexcept>

namespace kgb {

template <typename S>
struct BankGrads {
  Mat<S> shared;
  Mat<S> spec;
};

template <typename S>
BankGrads<S> zero_bank_grads(const PromptBank<S>& shared, const PromptBank<S>& spec) {
  return {Mat<S>::Zero(shared.values.rows(), shared.values.cols()),
          Mat<S>::Zero(spec.values.rows(), spec.values.cols())};
}

struct RecLoss {
  double loss = 0.0;  // mean cross-entropy over supervised positions
  long n_targets = 0;
};

// Next-item cross-entropy over every supervised position, averaged across the
// batch. When grad containers are passed, runs the full backward pass and
// accumulates parameter gradients (including both prompt banks). Pass a kink
// signature collector to record ReLU pre-activation signs.
template <typename S>
RecLoss rec_loss_and_grad(const ModelState<S>& state, const PromptBank<S>& shared,
                          const PromptBank<S>& spec, const SequenceBatch& batch,
                          bool training, Rng* dropout_rng,
                          ModelState<S>* gmodel = nullptr,
                          BankGrads<S>* gbanks = nullptr,
                          KinkSignature* kinks = nullptr) {
  const Index B = batch.batch();
  const Index N = batch.len();
  const Index d = state.dim();
  const Index V = state.vocab();
  const Index L = shared.values.rows();
  const Index slots = 2 * L + 1;
  const bool want_grad = gmodel != nullptr;
  if (want_grad && gbanks == nullptr) {
    throw std::invalid_argument("model gradients require bank gradients too");
  }

  std::vector<SeqForwardCache<S>> caches;
  auto* cache_ptr = want_grad ? &caches : nullptr;

  const auto embedded = embed_sequence(state, batch, training, dropout_rng, cache_ptr);
  const auto enriched =
      enrich_items(state, embedded, batch, shared, spec, cache_ptr, kinks);
  const auto encoded = encode_sequence(state, enriched, batch, cache_ptr, kinks);

  RecLoss result;
  for (Index b = 0; b < B; ++b) {
    for (Index i = 0; i < N; ++i) {
      if (batch.targets(b, i) > 0) ++result.n_targets;
    }
  }
  if (result.n_targets == 0) return result;
  const S inv_t = S(1) / static_cast<S>(result.n_targets);

  Vec<S> logits(V);
  Vec<S> dh(d);
  const S heads = state.n_heads;
  const Index dh_dim = d / state.n_heads;
  const S att_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh_dim)));
  (void)heads;

  for (Index b = 0; b < B; ++b) {
    Mat<S> dhidden;
    if (want_grad) dhidden = Mat<S>::Zero(N, d);

    for (Index i = 0; i < N; ++i) {
      const int target = batch.targets(b, i);
      if (target <= 0) continue;
      if (target > V) {
        throw std::out_of_range("target id out of range: " + std::to_string(target));
      }
      const Vec<S> h = encoded.hidden[b].row(i).transpose();
      logits.noalias() = state.head_w * h;
      logits += state.head_b;
      detail::check_finite(logits, "logits");
      S mx = logits(0);
      for (Index j = 1; j < V; ++j) mx = std::max(mx, logits(j));
      S sum = 0;
      for (Index j = 0; j < V; ++j) {
        logits(j) = std::exp(logits(j) - mx);
        sum += logits(j);
      }
      const S p_target = logits(target - 1) / sum;
      result.loss += -std::log(static_cast<double>(p_target));

      if (!want_grad) continue;
      // dlogits = (softmax - onehot) / n_targets
      logits /= sum;
      logits(target - 1) -= S(1);
      logits *= inv_t;
      gmodel->head_w.noalias() += logits * h.transpose();
      gmodel->head_b += logits;
      dh.noalias() = state.head_w.transpose() * logits;
      dhidden.row(i) += dh.transpose();
    }

    if (!want_grad) continue;

    const auto& cache = caches[b];
    // ---- encoder backward, layers in reverse ----
    Mat<S> dout = std::move(dhidden);
    Vec<S> dxhat(d), dsum(d), dproj(d), dffn(d), dln1(d), dvec(d);
    for (int li = static_cast<int>(state.layers.size()) - 1; li >= 0; --li) {
      const auto& l = state.layers[li];
      auto& gl = gmodel->layers[li];
      const auto& lc = cache.layers[li];
      const Index f = l.b1.size();
      Vec<S> dhpre(f), dhrelu(f), hrelu(f);
      Mat<S> dinput = Mat<S>::Zero(N, d);
      Mat<S> dao = Mat<S>::Zero(N, d);

      for (Index i = 0; i < N; ++i) {
        if (!batch.mask(b, i)) continue;
        // ln2 backward
        Vec<S> dy = dout.row(i).transpose();
        const auto xhat2 = lc.ln2_xhat.row(i).transpose();
        gl.ln2_g += dy.cwiseProduct(xhat2);
        gl.ln2_b += dy;
        dxhat = dy.cwiseProduct(l.ln2_g);
        const S m1 = dxhat.sum() / static_cast<S>(d);
        const S m2 = dxhat.cwiseProduct(xhat2).sum() / static_cast<S>(d);
        dsum = lc.ln2_rstd(i) *
               (dxhat.array() - m1 - xhat2.array() * m2).matrix();

        // sum2 = ln1_out + ffn_out
        dln1 = dsum;
        dffn = dsum;

        // ffn backward
        const auto hpre = lc.ffn_h.row(i).transpose();
        hrelu = hpre.cwiseMax(S(0));
        gl.w2.noalias() += hrelu * dffn.transpose();
        gl.b2 += dffn;
        dhrelu.noalias() = l.w2 * dffn;
        dhpre = (hpre.array() > S(0)).template cast<S>().matrix().cwiseProduct(dhrelu);
        const Vec<S> x1 = lc.ln1_out.row(i).transpose();
        gl.w1.noalias() += x1 * dhpre.transpose();
        gl.b1 += dhpre;
        dln1.noalias() += l.w1 * dhpre;

        // ln1 backward
        const auto xhat1 = lc.ln1_xhat.row(i).transpose();
        gl.ln1_g += dln1.cwiseProduct(xhat1);
        gl.ln1_b += dln1;
        dxhat = dln1.cwiseProduct(l.ln1_g);
        const S n1 = dxhat.sum() / static_cast<S>(d);
        const S n2 = dxhat.cwiseProduct(xhat1).sum() / static_cast<S>(d);
        dsum = lc.ln1_rstd(i) *
               (dxhat.array() - n1 - xhat1.array() * n2).matrix();

        // sum1 = input + proj
        dinput.row(i) += dsum.transpose();
        dproj = dsum;

        // proj = wo^T ao + bo
        const Vec<S> ao_i = lc.ao.row(i).transpose();
        gl.wo.noalias() += ao_i * dproj.transpose();
        gl.bo += dproj;
        dao.row(i) += (l.wo * dproj).transpose();
      }

      // attention backward
      Mat<S> dq = Mat<S>::Zero(N, d), dk = Mat<S>::Zero(N, d), dv = Mat<S>::Zero(N, d);
      for (Index hd = 0; hd < state.n_heads; ++hd) {
        const Index off = hd * dh_dim;
        const auto& att = lc.att[hd];
        for (Index i = 0; i < N; ++i) {
          if (!batch.mask(b, i)) continue;
          S sum_term = 0;
          for (Index j = 0; j <= i; ++j) {
            if (!batch.mask(b, j)) continue;
            S dalpha = 0;
            for (Index t = 0; t < dh_dim; ++t) {
              dalpha += dao(i, off + t) * lc.v(j, off + t);
            }
            sum_term += att(i, j) * dalpha;
          }
          for (Index j = 0; j <= i; ++j) {
            if (!batch.mask(b, j)) continue;
            S dalpha = 0;
            for (Index t = 0; t < dh_dim; ++t) {
              dalpha += dao(i, off + t) * lc.v(j, off + t);
            }
            for (Index t = 0; t < dh_dim; ++t) {
              dv(j, off + t) += att(i, j) * dao(i, off + t);
            }
            const S dsc = att(i, j) * (dalpha - sum_term);
            for (Index t = 0; t < dh_dim; ++t) {
              dq(i, off + t) += dsc * lc.k(j, off + t) * att_scale;
              dk(j, off + t) += dsc * lc.q(i, off + t) * att_scale;
            }
          }
        }
      }

      for (Index i = 0; i < N; ++i) {
        if (!batch.mask(b, i)) continue;
        const Vec<S> hi = lc.input.row(i).transpose();
        const Vec<S> dqi = dq.row(i).transpose();
        const Vec<S> dki = dk.row(i).transpose();
        const Vec<S> dvi = dv.row(i).transpose();
        gl.wq.noalias() += hi * dqi.transpose();
        gl.bq += dqi;
        gl.wk.noalias() += hi * dki.transpose();
        gl.bk += dki;
        gl.wv.noalias() += hi * dvi.transpose();
        gl.bv += dvi;
        dinput.row(i) += (l.wq * dqi + l.wk * dki + l.wv * dvi).transpose();
      }
      dout = std::move(dinput);
    }

    // ---- enrichment backward ----
    Vec<S> cat(2 * d), dcat(2 * d), dhpre_att(d), de(d);
    for (Index i = 0; i < N; ++i) {
      if (!batch.mask(b, i)) continue;
      const Vec<S> denr = dout.row(i).transpose();
      const auto alpha = cache.alpha.row(i);
      const Vec<S> e = cache.emb.row(i).transpose();

      // dalpha_j = denr . X_j and softmax backward
      Vec<S> dalpha(slots);
      for (Index j = 0; j < slots; ++j) {
        if (j < L) {
          dalpha(j) = shared.values.row(j) * denr;
        } else if (j < 2 * L) {
          dalpha(j) = spec.values.row(j - L) * denr;
        } else {
          dalpha(j) = e.dot(denr);
        }
      }
      S sum_term = 0;
      for (Index j = 0; j < slots; ++j) sum_term += alpha(j) * dalpha(j);

      de.setZero();
      for (Index j = 0; j < slots; ++j) {
        // convex-combination term
        if (j < L) {
          gbanks->shared.row(j) += alpha(j) * denr.transpose();
        } else if (j < 2 * L) {
          gbanks->spec.row(j - L) += alpha(j) * denr.transpose();
        } else {
          de += alpha(j) * denr;
        }

        const S ds = alpha(j) * (dalpha(j) - sum_term);
        const Vec<S> hpre = cache.fatt_h.row(i * slots + j).transpose();
        for (Index t = 0; t < d; ++t) {
          if (hpre(t) > S(0)) {
            gmodel->att_w2(t) += ds * hpre(t);
            dhpre_att(t) = ds * state.att_w2(t);
          } else {
            dhpre_att(t) = S(0);
          }
        }
        gmodel->att_b2(0) += ds;

        if (j < L) {
          cat.head(d) = shared.values.row(j).transpose();
        } else if (j < 2 * L) {
          cat.head(d) = spec.values.row(j - L).transpose();
        } else {
          cat.head(d) = e;
        }
        cat.tail(d) = e;
        gmodel->att_w1.noalias() += cat * dhpre_att.transpose();
        gmodel->att_b1 += dhpre_att;
        dcat.noalias() = state.att_w1 * dhpre_att;
        if (j < L) {
          gbanks->shared.row(j) += dcat.head(d).transpose();
        } else if (j < 2 * L) {
          gbanks->spec.row(j - L) += dcat.head(d).transpose();
        } else {
          de += dcat.head(d);
        }
        de += dcat.tail(d);
      }

      // embedding backward through dropout
      if (cache.dropmask.size() > 0) {
        de = de.cwiseProduct(cache.dropmask.row(i).transpose());
      }
      gmodel->item_emb.row(cache.ids[i]) += de.transpose();
      gmodel->pos_emb.row(cache.pos[i]) += de.transpose();
    }
  }

  result.loss /= static_cast<double>(result.n_targets);
  return result;
}

// InfoNCE over index-aligned shared/specific prompt pairs with cosine
// similarity and temperature tau. Gradients cover both banks; training decides
// which side receives them.
template <typename S>
double disentanglement_loss(const PromptBank<S>& shared, const PromptBank<S>& spec,
                            double tau, BankGrads<S>* grads = nullptr) {
  if (tau <= 0.0) throw std::invalid_argument("tau must be > 0");
  const Index L = shared.values.rows();
  const Index d = shared.values.cols();
  if (spec.values.rows() != L || spec.values.cols() != d) {
    throw std::invalid_argument("prompt banks must share L and d");
  }
  Vec<S> na(L), nb(L);
  for (Index i = 0; i < L; ++i) {
    na(i) = shared.values.row(i).norm();
    nb(i) = spec.values.row(i).norm();
    if (!(na(i) > S(0)) || !(nb(i) > S(0))) {
      throw std::runtime_error("zero-norm prompt row: cosine undefined");
    }
  }
  Mat<S> cos(L, L);
  for (Index i = 0; i < L; ++i) {
    for (Index j = 0; j < L; ++j) {
      cos(i, j) = (shared.values.row(i) * spec.values.row(j).transpose())(0) /
                  (na(i) * nb(j));
    }
  }
  const S inv_tau = static_cast<S>(1.0 / tau);
  Mat<S> q(L, L);
  double loss = 0.0;
  for (Index i = 0; i < L; ++i) {
    S mx = cos(i, 0) * inv_tau;
    for (Index j = 1; j < L; ++j) mx = std::max(mx, cos(i, j) * inv_tau);
    S sum = 0;
    for (Index j = 0; j < L; ++j) {
      q(i, j) = std::exp(cos(i, j) * inv_tau - mx);
      sum += q(i, j);
    }
    for (Index j = 0; j < L; ++j) q(i, j) /= sum;
    const double lse = static_cast<double>(mx) + std::log(static_cast<double>(sum));
    loss += lse - static_cast<double>(cos(i, i) * inv_tau);
  }
  loss /= static_cast<double>(L);

  if (grads) {
    grads->shared = Mat<S>::Zero(L, d);
    grads->spec = Mat<S>::Zero(L, d);
    const S coef = static_cast<S>(1.0 / (static_cast<double>(L) * tau));
    for (Index i = 0; i < L; ++i) {
      for (Index j = 0; j < L; ++j) {
        const S dc = coef * (q(i, j) - (i == j ? S(1) : S(0)));
        // d cos / d a_i and d cos / d b_j
        grads->shared.row(i) +=
            dc * (spec.values.row(j) / (na(i) * nb(j)) -
                  cos(i, j) * shared.values.row(i) / (na(i) * na(i)));
        grads->spec.row(j) +=
            dc * (shared.values.row(i) / (na(i) * nb(j)) -
                  cos(i, j) * spec.values.row(j) / (nb(j) * nb(j)));
      }
    }
  }
  return loss;
}

}  // namespace kgb
