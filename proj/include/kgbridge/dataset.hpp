#pragma once

#include "kgbridge/corpus.hpp"
#include "kgbridge/seqmodel.hpp"

#include <map>
#include <string>
#include <vector>

namespace kgb {

// Global item index across domains. Domains keep disjoint id ranges; global
// ids are 1-based (0 is the padding slot).
struct GlobalVocab {
  std::vector<std::string> domains;  // sorted
  std::map<std::string, int> domain_begin;
  std::map<std::string, std::vector<std::string>> domain_items;
  std::map<std::string, std::map<std::string, int>> index;
  int total = 0;

  int global_id(const std::string& domain, const std::string& item) const;
  // [begin, end) of a domain's global ids
  std::pair<int, int> domain_range(const std::string& domain) const;
  const std::string& item_name(int global_id) const;
};

GlobalVocab build_global_vocab(const std::map<std::string, DatasetSplit>& splits);

// One training example per user: up to max_len+1 most recent train items,
// next-item target at every prefix position.
struct TrainRow {
  std::string domain;
  std::string user;
  std::vector<int> inputs;   // global ids
  std::vector<int> targets;  // aligned with inputs
};

std::vector<TrainRow> build_train_rows(
    const std::map<std::string, DatasetSplit>& splits, const GlobalVocab& vocab,
    int max_len);

enum class EvalPhase { valid, test };

// Ranking task for one user: context ids, held-out target, candidate range,
// and the context items an exclusion policy may mask.
struct EvalRow {
  std::string user;
  std::vector<int> context;  // global ids, most recent max_len
  int target = 0;
  int cand_begin = 0;  // domain candidate range, global ids
  int cand_end = 0;
};

std::vector<EvalRow> build_eval_rows(const DatasetSplit& split,
                                     const std::string& domain,
                                     const GlobalVocab& vocab, EvalPhase phase,
                                     int max_len, long* skipped = nullptr);

}  // namespace kgb
