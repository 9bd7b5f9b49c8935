#include "kgbridge/seqmodel.hpp"

namespace kgb {

SequenceBatch make_batch(const std::vector<std::vector<int>>& inputs,
                         const std::vector<std::vector<int>>& targets, Index len) {
  const Index B = static_cast<Index>(inputs.size());
  SequenceBatch batch;
  batch.ids = MatI::Zero(B, len);
  batch.mask.setConstant(B, len, false);
  batch.targets = MatI::Zero(B, len);
  for (Index b = 0; b < B; ++b) {
    const auto& row = inputs[b];
    if (row.empty()) throw std::invalid_argument("batch row without real items");
    if (static_cast<Index>(row.size()) > len) {
      throw std::invalid_argument("batch row longer than batch width");
    }
    const Index pad = len - static_cast<Index>(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (row[i] <= 0) throw std::invalid_argument("item ids must be positive");
      batch.ids(b, pad + static_cast<Index>(i)) = row[i];
      batch.mask(b, pad + static_cast<Index>(i)) = true;
    }
    if (!targets.empty()) {
      const auto& trow = targets[b];
      if (trow.size() != row.size()) {
        throw std::invalid_argument("targets must align with inputs");
      }
      for (std::size_t i = 0; i < trow.size(); ++i) {
        batch.targets(b, pad + static_cast<Index>(i)) = trow[i];
      }
    }
  }
  return batch;
}

}  // namespace kgb
