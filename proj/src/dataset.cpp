#include "kgbridge/dataset.hpp"

#include <algorithm>
#include <stdexcept>

namespace kgb {

int GlobalVocab::global_id(const std::string& domain, const std::string& item) const {
  const auto dit = index.find(domain);
  if (dit == index.end()) throw std::out_of_range("unknown domain: " + domain);
  const auto iit = dit->second.find(item);
  if (iit == dit->second.end()) {
    throw std::out_of_range("unknown item '" + item + "' in domain " + domain);
  }
  return iit->second;
}

std::pair<int, int> GlobalVocab::domain_range(const std::string& domain) const {
  const auto it = domain_begin.find(domain);
  if (it == domain_begin.end()) throw std::out_of_range("unknown domain: " + domain);
  const int begin = it->second;
  return {begin, begin + static_cast<int>(domain_items.at(domain).size())};
}

const std::string& GlobalVocab::item_name(int global_id) const {
  for (const auto& domain : domains) {
    const auto [begin, end] = domain_range(domain);
    if (global_id >= begin && global_id < end) {
      return domain_items.at(domain)[global_id - begin];
    }
  }
  throw std::out_of_range("global id out of range: " + std::to_string(global_id));
}

GlobalVocab build_global_vocab(const std::map<std::string, DatasetSplit>& splits) {
  GlobalVocab vocab;
  int next = 1;  // 0 is padding
  for (const auto& [domain, split] : splits) {
    vocab.domains.push_back(domain);
    vocab.domain_begin[domain] = next;
    vocab.domain_items[domain] = split.item_vocab;
    auto& idx = vocab.index[domain];
    for (const auto& item : split.item_vocab) idx[item] = next++;
  }
  vocab.total = next - 1;
  return vocab;
}

std::vector<TrainRow> build_train_rows(
    const std::map<std::string, DatasetSplit>& splits, const GlobalVocab& vocab,
    int max_len) {
  std::vector<TrainRow> rows;
  for (const auto& [domain, split] : splits) {
    for (const auto& seq : split.train_sequences) {
      const std::size_t n = seq.items.size();
      if (n < 2) continue;  // no next-item pair to learn from
      // keep the most recent max_len transitions
      const std::size_t window = std::min<std::size_t>(n, max_len + 1);
      const std::size_t start = n - window;
      TrainRow row;
      row.domain = domain;
      row.user = seq.user;
      for (std::size_t i = start; i + 1 < n; ++i) {
        row.inputs.push_back(vocab.global_id(domain, seq.items[i]));
        row.targets.push_back(vocab.global_id(domain, seq.items[i + 1]));
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<EvalRow> build_eval_rows(const DatasetSplit& split,
                                     const std::string& domain,
                                     const GlobalVocab& vocab, EvalPhase phase,
                                     int max_len, long* skipped) {
  std::map<std::string, const UserSequence*> by_user;
  for (const auto& seq : split.train_sequences) by_user[seq.user] = &seq;

  const auto& targets =
      phase == EvalPhase::valid ? split.valid_targets : split.test_targets;
  const auto [cb, ce] = vocab.domain_range(domain);

  std::vector<EvalRow> rows;
  long n_skipped = 0;
  for (const auto& [user, target_item] : targets) {
    const auto it = by_user.find(user);
    std::vector<std::string> context;
    if (it != by_user.end()) context = it->second->items;
    if (phase == EvalPhase::test) {
      const auto vt = split.valid_targets.find(user);
      if (vt != split.valid_targets.end()) context.push_back(vt->second);
    }
    if (context.empty()) {
      ++n_skipped;
      continue;
    }
    if (context.size() > static_cast<std::size_t>(max_len)) {
      context.erase(context.begin(),
                    context.end() - static_cast<std::ptrdiff_t>(max_len));
    }
    EvalRow row;
    row.user = user;
    for (const auto& item : context) {
      row.context.push_back(vocab.global_id(domain, item));
    }
    row.target = vocab.global_id(domain, target_item);
    row.cand_begin = cb;
    row.cand_end = ce;
    rows.push_back(std::move(row));
  }
  if (skipped) *skipped = n_skipped;
  return rows;
}

}  // namespace kgb
