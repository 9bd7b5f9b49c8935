#pragma once

#include "kgbridge/corpus.hpp"
#include "kgbridge/types.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace kgb {

struct KgeConfig {
  int dim = 100;
  double margin = 1.0;
  double learning_rate = 0.01;
  int epochs = 100;
  int negatives_per_positive = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim < 1) throw std::invalid_argument("kge dim must be >= 1");
    if (margin < 0.0) throw std::invalid_argument("kge margin must be >= 0");
    if (learning_rate <= 0.0) throw std::invalid_argument("kge learning rate must be > 0");
    if (epochs < 0) throw std::invalid_argument("kge epochs must be >= 0");
    if (negatives_per_positive < 1) {
      throw std::invalid_argument("negatives_per_positive must be >= 1");
    }
  }
};

template <typename S>
struct KgeModel {
  Mat<S> entity_emb;    // |E| x d
  Mat<S> relation_emb;  // |R| x d
  std::vector<std::string> entity_ids;    // row order (lexicographic)
  std::vector<std::string> relation_ids;  // row order (lexicographic)
  std::map<std::string, Index> entity_index;
  std::map<std::string, Index> relation_index;

  Index dim() const { return entity_emb.cols(); }

  Index entity_row(const std::string& id) const {
    const auto it = entity_index.find(id);
    if (it == entity_index.end()) throw std::out_of_range("unknown entity: " + id);
    return it->second;
  }
  Index relation_row(const std::string& id) const {
    const auto it = relation_index.find(id);
    if (it == relation_index.end()) throw std::out_of_range("unknown relation: " + id);
    return it->second;
  }
};

// Gradients of the hinge loss w.r.t. every embedding row.
template <typename S>
struct KgeGrad {
  Mat<S> entity;
  Mat<S> relation;
};

// Translational score ||h + r - o||_2; lower is more plausible.
template <typename S>
S score_triple(const KgeModel<S>& model, const Triple& t) {
  const Index h = model.entity_row(t.head);
  const Index r = model.relation_row(t.relation);
  const Index o = model.entity_row(t.tail);
  Vec<S> diff = (model.entity_emb.row(h) + model.relation_emb.row(r) -
                 model.entity_emb.row(o))
                    .transpose();
  return diff.norm();
}

// Margin ranking loss: sum_i [margin + d(pos_i) - d(neg_i)]_+ where negative i
// corrupts positive i. The subgradient at the hinge kink is taken as 0, and
// the gradient of ||v|| at v = 0 is likewise taken as 0.
template <typename S>
S transe_loss_with_grad(const KgeModel<S>& model,
                        const std::vector<Triple>& positives,
                        const std::vector<Triple>& negatives, S margin,
                        KgeGrad<S>* grad = nullptr) {
  if (positives.size() != negatives.size()) {
    throw std::invalid_argument("positives and negatives must be index-aligned");
  }
  if (grad) {
    grad->entity = Mat<S>::Zero(model.entity_emb.rows(), model.entity_emb.cols());
    grad->relation =
        Mat<S>::Zero(model.relation_emb.rows(), model.relation_emb.cols());
  }
  S total = 0;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const Triple& p = positives[i];
    const Triple& q = negatives[i];
    const Index ph = model.entity_row(p.head);
    const Index pr = model.relation_row(p.relation);
    const Index po = model.entity_row(p.tail);
    const Index qh = model.entity_row(q.head);
    const Index qr = model.relation_row(q.relation);
    const Index qo = model.entity_row(q.tail);

    Vec<S> dp = (model.entity_emb.row(ph) + model.relation_emb.row(pr) -
                 model.entity_emb.row(po))
                    .transpose();
    Vec<S> dn = (model.entity_emb.row(qh) + model.relation_emb.row(qr) -
                 model.entity_emb.row(qo))
                    .transpose();
    const S sp = dp.norm();
    const S sn = dn.norm();
    const S hinge = margin + sp - sn;
    if (hinge <= S(0)) continue;
    total += hinge;
    if (!grad) continue;

    if (sp > S(0)) {
      Vec<S> gp = dp / sp;
      grad->entity.row(ph) += gp.transpose();
      grad->relation.row(pr) += gp.transpose();
      grad->entity.row(po) -= gp.transpose();
    }
    if (sn > S(0)) {
      Vec<S> gn = dn / sn;
      grad->entity.row(qh) -= gn.transpose();
      grad->relation.row(qr) -= gn.transpose();
      grad->entity.row(qo) += gn.transpose();
    }
  }
  return total;
}

template <typename S>
S transe_loss(const KgeModel<S>& model, const std::vector<Triple>& positives,
              const std::vector<Triple>& negatives, S margin) {
  return transe_loss_with_grad<S>(model, positives, negatives, margin, nullptr);
}

struct KgeTrainStats {
  std::vector<double> epoch_loss;  // summed hinge loss per epoch
};

// SGD on the margin ranking loss with uniform negative sampling: each positive
// is corrupted on head or tail with probability 1/2, resampling while the
// corruption is an observed triple. Entity rows are L2-normalized after each
// epoch; init is uniform in [-6/sqrt(d), 6/sqrt(d)].
template <typename S>
KgeModel<S> train_kge(const KnowledgeGraph& kg, const KgeConfig& cfg,
                      KgeTrainStats* stats = nullptr) {
  cfg.validate();
  if (kg.triples.empty()) throw std::invalid_argument("cannot train on an empty KG");

  KgeModel<S> model;
  model.entity_ids.assign(kg.entities.begin(), kg.entities.end());
  model.relation_ids.assign(kg.relations.begin(), kg.relations.end());
  for (Index i = 0; i < static_cast<Index>(model.entity_ids.size()); ++i) {
    model.entity_index[model.entity_ids[i]] = i;
  }
  for (Index i = 0; i < static_cast<Index>(model.relation_ids.size()); ++i) {
    model.relation_index[model.relation_ids[i]] = i;
  }

  const Index ne = static_cast<Index>(model.entity_ids.size());
  const Index nr = static_cast<Index>(model.relation_ids.size());
  const Index d = cfg.dim;
  const double bound = 6.0 / std::sqrt(static_cast<double>(d));

  Rng init_rng(cfg.seed, rng_stream::kInit);
  model.entity_emb.resize(ne, d);
  model.relation_emb.resize(nr, d);
  for (Index i = 0; i < ne; ++i) {
    for (Index j = 0; j < d; ++j) {
      model.entity_emb(i, j) = static_cast<S>(init_rng.uniform(-bound, bound));
    }
  }
  for (Index i = 0; i < nr; ++i) {
    for (Index j = 0; j < d; ++j) {
      model.relation_emb(i, j) = static_cast<S>(init_rng.uniform(-bound, bound));
    }
  }

  struct IdTriple {
    Index h, r, o;
  };
  std::vector<IdTriple> triples;
  triples.reserve(kg.triples.size());
  std::set<std::tuple<Index, Index, Index>> observed;
  for (const auto& t : kg.triples) {
    IdTriple it{model.entity_row(t.head), model.relation_row(t.relation),
                model.entity_row(t.tail)};
    triples.push_back(it);
    observed.insert({it.h, it.r, it.o});
  }

  Rng sample_rng(cfg.seed, rng_stream::kSampling);
  const S lr = static_cast<S>(cfg.learning_rate);
  const S margin = static_cast<S>(cfg.margin);
  std::vector<std::size_t> order(triples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    sample_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (const std::size_t idx : order) {
      const IdTriple pos = triples[idx];
      for (int nn = 0; nn < cfg.negatives_per_positive; ++nn) {
        IdTriple neg = pos;
        const bool corrupt_head = sample_rng.bernoulli(0.5);
        for (int attempt = 0; attempt < 100; ++attempt) {
          const Index cand = static_cast<Index>(sample_rng.below(ne));
          if (corrupt_head) {
            neg.h = cand;
          } else {
            neg.o = cand;
          }
          if (!observed.count({neg.h, neg.r, neg.o})) break;
        }

        Vec<S> dp = (model.entity_emb.row(pos.h) + model.relation_emb.row(pos.r) -
                     model.entity_emb.row(pos.o))
                        .transpose();
        Vec<S> dn = (model.entity_emb.row(neg.h) + model.relation_emb.row(neg.r) -
                     model.entity_emb.row(neg.o))
                        .transpose();
        const S sp = dp.norm();
        const S sn = dn.norm();
        const S hinge = margin + sp - sn;
        if (hinge <= S(0)) continue;
        epoch_loss += static_cast<double>(hinge);

        if (sp > S(0)) {
          Vec<S> gp = (lr / sp) * dp;
          model.entity_emb.row(pos.h) -= gp.transpose();
          model.relation_emb.row(pos.r) -= gp.transpose();
          model.entity_emb.row(pos.o) += gp.transpose();
        }
        if (sn > S(0)) {
          Vec<S> gn = (lr / sn) * dn;
          model.entity_emb.row(neg.h) += gn.transpose();
          model.relation_emb.row(neg.r) += gn.transpose();
          model.entity_emb.row(neg.o) -= gn.transpose();
        }
      }
    }
    for (Index i = 0; i < ne; ++i) {
      const S norm = model.entity_emb.row(i).norm();
      if (norm > S(0)) model.entity_emb.row(i) /= norm;
    }
    if (stats) stats->epoch_loss.push_back(epoch_loss);
  }
  return model;
}

// Relation matrices in partition order; every partition relation must exist.
template <typename S>
std::pair<Mat<S>, Mat<S>> export_relation_matrices(const KgeModel<S>& model,
                                                   const RelationPartition& part) {
  const Index d = model.dim();
  Mat<S> shared(static_cast<Index>(part.shared.size()), d);
  Mat<S> specific(static_cast<Index>(part.specific.size()), d);
  for (Index i = 0; i < shared.rows(); ++i) {
    shared.row(i) = model.relation_emb.row(model.relation_row(part.shared[i]));
  }
  for (Index i = 0; i < specific.rows(); ++i) {
    specific.row(i) = model.relation_emb.row(model.relation_row(part.specific[i]));
  }
  return {std::move(shared), std::move(specific)};
}

// Directory layout: manifest.json + entity_emb.f32 / relation_emb.f32
// (row-major little-endian float32).
void save_kge_model(const std::filesystem::path& dir, const KgeModel<float>& model,
                    const KgeConfig& cfg);
KgeModel<float> load_kge_model(const std::filesystem::path& dir);

}  // namespace kgb
