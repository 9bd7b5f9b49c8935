#pragma once

#include "kgbridge/dataset.hpp"
#include "kgbridge/seqmodel.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace kgb {

struct RankingResult {
  std::string user;
  long target_rank = 0;  // 1-based
};

struct MetricReport {
  std::map<int, std::pair<double, double>> per_k;  // K -> (recall, ndcg)
  long n_users = 0;
  std::uint64_t seed = 0;
  std::string system;
};

struct EvalOptions {
  std::vector<int> ks = {3, 5, 10, 20};
  bool history_mask = true;  // exclude the user's context items from ranking
};

// 1-based rank of the target among non-excluded items: strictly greater
// scores rank ahead, ties are broken by ascending item index.
long rank_of_target(const VecD& scores, Index target,
                    const std::set<Index>& excluded);

inline RankingResult rank_target(const VecD& scores, Index target,
                                 const std::set<Index>& excluded) {
  return {"", rank_of_target(scores, target, excluded)};
}

// Single held-out target per user: Recall@K = mean 1[rank <= K],
// NDCG@K = mean 1[rank <= K] / log2(rank + 1).
MetricReport compute_metrics(const std::vector<RankingResult>& results,
                             const std::vector<int>& ks);

// Full ranking of every eval row's target against the domain candidate range,
// optionally excluding the user's context items (never the target itself).
template <typename S>
MetricReport evaluate_model(const ModelState<S>& state, const PromptBank<S>& shared,
                            const PromptBank<S>& spec,
                            const std::vector<EvalRow>& rows,
                            const EvalOptions& opts) {
  std::vector<RankingResult> results;
  results.reserve(rows.size());
  const Index N = state.max_seq_len;
  Vec<S> logits(state.vocab());
  for (const auto& row : rows) {
    const SequenceBatch batch = make_batch({row.context}, N);
    const auto embedded = embed_sequence<S>(state, batch, false, nullptr);
    const auto enriched = enrich_items<S>(state, embedded, batch, shared, spec);
    const auto encoded = encode_sequence<S>(state, enriched, batch);
    logits.noalias() = state.head_w * encoded.z.row(0).transpose();
    logits += state.head_b;
    detail::check_finite(logits, "logits");

    // rank within the domain candidate range; softmax is monotone, so logits
    // rank identically to the probabilities
    const Index t = row.target - 1;
    const S ts = logits(t);
    long rank = 1;
    std::set<Index> excluded;
    if (opts.history_mask) {
      for (const int id : row.context) {
        if (id != row.target) excluded.insert(id - 1);
      }
    }
    for (Index j = row.cand_begin - 1; j < row.cand_end - 1; ++j) {
      if (j == t || excluded.count(j)) continue;
      if (logits(j) > ts || (logits(j) == ts && j < t)) ++rank;
    }
    results.push_back({row.user, rank});
  }
  return compute_metrics(results, opts.ks);
}

// Regularized incomplete beta I_x(a, b), via the standard continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

// Two-sided paired t-test p-value for mean(diffs) == 0. Degenerate cases
// (zero variance) are flagged: p = 1 when every diff is zero, p = 0 otherwise.
std::optional<double> paired_t_pvalue(const std::vector<double>& diffs,
                                      bool* degenerate = nullptr);

struct AggregateCell {
  double mean_recall = 0.0;
  double mean_ndcg = 0.0;
  std::optional<double> p_recall;
  std::optional<double> p_ndcg;
  bool degenerate_recall = false;
  bool degenerate_ndcg = false;
};

struct AggregateSummary {
  std::map<int, AggregateCell> per_k;
  long n_runs = 0;
};

// Per-K means over runs; with a baseline, a seed-matched two-sided paired
// t-test per metric. Baseline runs must match count and seeds.
AggregateSummary aggregate_and_test(const std::vector<MetricReport>& system,
                                    const std::vector<MetricReport>* baseline);

// CSV with header `system,seed,K,recall,ndcg,n_users`, 6 decimal places.
std::string metric_reports_to_csv(const std::vector<MetricReport>& reports);
std::vector<MetricReport> metric_reports_from_csv(const std::string& csv);

}  // namespace kgb
