#pragma once

#include "kgbridge/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace kgb {

struct Triple {
  std::string head;
  std::string relation;
  std::string tail;

  bool operator==(const Triple&) const = default;
  bool operator<(const Triple& o) const {
    return std::tie(head, relation, tail) < std::tie(o.head, o.relation, o.tail);
  }
};

struct KnowledgeGraph {
  std::set<std::string> entities;
  std::set<std::string> relations;
  std::vector<Triple> triples;
  // relation -> domains whose files mention it
  std::map<std::string, std::set<std::string>> domain_tags;
};

// Shared relations occur in at least two domains; the rest are specific.
// Both lists are kept in lexicographic order so embedding-matrix row indices
// are stable across runs.
struct RelationPartition {
  std::vector<std::string> shared;
  std::vector<std::string> specific;
};

struct UserSequence {
  std::string user;
  std::vector<std::string> items;  // ordered by interaction time
  std::string domain;
};

struct DatasetSplit {
  std::vector<UserSequence> train_sequences;  // last two items held out
  std::map<std::string, std::string> valid_targets;  // user -> second-to-last
  std::map<std::string, std::string> test_targets;   // user -> last
  std::vector<std::string> item_vocab;               // sorted, covers the split
  std::map<std::string, std::string> item_entity_links;  // partial map
};

// Interaction TSV: `user<TAB>item<TAB>timestamp[<TAB>rating]`. Items are
// sorted by (timestamp, input order); users with fewer than min_len kept
// interactions are dropped. When min_rating is set, rows need the rating
// column and only rows with rating >= min_rating survive.
std::vector<UserSequence> load_interactions(
    const std::filesystem::path& path, int min_len = 3,
    std::optional<double> min_rating = std::nullopt,
    const std::string& domain = "");

// Merges per-domain KG TSVs (`head<TAB>relation<TAB>tail`), dropping exact
// duplicate triples, and splits the relation vocabulary into shared/specific.
std::pair<KnowledgeGraph, RelationPartition> load_kg_and_partition(
    const std::map<std::string, std::filesystem::path>& kg_paths);

RelationPartition partition_relations(const KnowledgeGraph& kg);

// Keeps only partition entries whose relation survives in `kg` (used after
// sparsity perturbation, which can erase a relation entirely).
RelationPartition restrict_partition(const RelationPartition& part,
                                     const KnowledgeGraph& kg);

DatasetSplit leave_one_out_split(const std::vector<UserSequence>& sequences);

std::map<std::string, std::string> load_item_entity_links(
    const std::filesystem::path& path);

// Attaches entity links, keeping only items present in the split vocabulary.
void attach_links(DatasetSplit& split,
                  const std::map<std::string, std::string>& links);

// Replaces user ids with fresh opaque ids so no id appears in more than one
// domain; item sequences and targets are untouched.
std::map<std::string, DatasetSplit> shuffle_user_identities(
    const std::map<std::string, DatasetSplit>& splits, std::uint64_t seed);

// Removes exactly round(|T| * remove_ratio) triples uniformly at random and
// recomputes entity/relation sets from the survivors.
KnowledgeGraph perturb_kg_sparsity(const KnowledgeGraph& kg, double remove_ratio,
                                   std::uint64_t seed);

// frequency (triples an entity appears in as head or tail) -> entity count
std::map<long, long> entity_frequency_stats(const KnowledgeGraph& kg);

}  // namespace kgb
