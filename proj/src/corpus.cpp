#include "kgbridge/corpus.hpp"

#include "kgbridge/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <stdexcept>

namespace kgb {

namespace {

long long parse_ll(const std::string& s, const char* what, std::size_t line_no) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw std::runtime_error("line " + std::to_string(line_no) +
                             ": malformed " + what + " '" + s + "'");
  }
  return v;
}

double parse_double(const std::string& s, const char* what, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("line " + std::to_string(line_no) +
                             ": malformed " + what + " '" + s + "'");
  }
}

}  // namespace

std::vector<UserSequence> load_interactions(const std::filesystem::path& path,
                                            int min_len,
                                            std::optional<double> min_rating,
                                            const std::string& domain) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open interactions file: " + path.string());

  struct Row {
    std::string item;
    long long ts;
    std::size_t order;  // input order breaks timestamp ties
  };
  std::map<std::string, std::vector<Row>> per_user;

  std::string line;
  std::size_t line_no = 0;
  std::size_t order = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = io::split(line, '\t');
    if (fields.size() < 3 || fields[0].empty() || fields[1].empty()) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": expected user<TAB>item<TAB>timestamp");
    }
    if (min_rating) {
      if (fields.size() < 4) {
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": rating column required by min-rating filter");
      }
      if (parse_double(fields[3], "rating", line_no) < *min_rating) continue;
    }
    const long long ts = parse_ll(fields[2], "timestamp", line_no);
    per_user[fields[0]].push_back({fields[1], ts, order++});
  }

  std::vector<UserSequence> out;
  for (auto& [user, rows] : per_user) {
    if (rows.size() < static_cast<std::size_t>(min_len)) continue;
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      return std::tie(a.ts, a.order) < std::tie(b.ts, b.order);
    });
    UserSequence seq;
    seq.user = user;
    seq.domain = domain;
    seq.items.reserve(rows.size());
    for (const auto& r : rows) seq.items.push_back(r.item);
    out.push_back(std::move(seq));
  }
  if (out.empty()) {
    throw std::runtime_error("empty corpus: no user in " + path.string() +
                             " has >= " + std::to_string(min_len) + " interactions");
  }
  return out;
}

std::pair<KnowledgeGraph, RelationPartition> load_kg_and_partition(
    const std::map<std::string, std::filesystem::path>& kg_paths) {
  KnowledgeGraph kg;
  std::set<Triple> seen;
  for (const auto& [domain, path] : kg_paths) {
    const auto rows = io::read_tsv(path);
    std::size_t line_no = 0;
    for (const auto& fields : rows) {
      ++line_no;
      if (fields.size() != 3 || fields[0].empty() || fields[1].empty() ||
          fields[2].empty()) {
        throw std::runtime_error(path.string() + " row " + std::to_string(line_no) +
                                 ": expected head<TAB>relation<TAB>tail");
      }
      Triple t{fields[0], fields[1], fields[2]};
      kg.domain_tags[t.relation].insert(domain);
      if (seen.insert(t).second) {
        kg.entities.insert(t.head);
        kg.entities.insert(t.tail);
        kg.relations.insert(t.relation);
        kg.triples.push_back(std::move(t));
      }
    }
  }
  return {kg, partition_relations(kg)};
}

RelationPartition partition_relations(const KnowledgeGraph& kg) {
  RelationPartition part;
  for (const auto& rel : kg.relations) {
    const auto it = kg.domain_tags.find(rel);
    const std::size_t n_domains = it == kg.domain_tags.end() ? 0 : it->second.size();
    if (n_domains >= 2) {
      part.shared.push_back(rel);
    } else {
      part.specific.push_back(rel);
    }
  }
  // std::set iteration is already lexicographic; keep the guarantee explicit
  std::sort(part.shared.begin(), part.shared.end());
  std::sort(part.specific.begin(), part.specific.end());
  return part;
}

RelationPartition restrict_partition(const RelationPartition& part,
                                     const KnowledgeGraph& kg) {
  RelationPartition out;
  for (const auto& r : part.shared) {
    if (kg.relations.count(r)) out.shared.push_back(r);
  }
  for (const auto& r : part.specific) {
    if (kg.relations.count(r)) out.specific.push_back(r);
  }
  return out;
}

DatasetSplit leave_one_out_split(const std::vector<UserSequence>& sequences) {
  std::vector<std::string> too_short;
  for (const auto& s : sequences) {
    if (s.items.size() < 3) too_short.push_back(s.user);
  }
  if (!too_short.empty()) {
    std::string msg = "sequences shorter than 3 items:";
    for (const auto& u : too_short) msg += " " + u;
    throw std::runtime_error(msg);
  }

  DatasetSplit split;
  std::set<std::string> vocab;
  for (const auto& s : sequences) {
    const std::size_t n = s.items.size();
    UserSequence train = s;
    train.items.assign(s.items.begin(), s.items.end() - 2);
    split.train_sequences.push_back(std::move(train));
    split.valid_targets[s.user] = s.items[n - 2];
    split.test_targets[s.user] = s.items[n - 1];
    vocab.insert(s.items.begin(), s.items.end());
  }
  split.item_vocab.assign(vocab.begin(), vocab.end());
  return split;
}

std::map<std::string, std::string> load_item_entity_links(
    const std::filesystem::path& path) {
  std::map<std::string, std::string> links;
  const auto rows = io::read_tsv(path);
  std::size_t line_no = 0;
  for (const auto& fields : rows) {
    ++line_no;
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw std::runtime_error(path.string() + " row " + std::to_string(line_no) +
                               ": expected item<TAB>entity");
    }
    links[fields[0]] = fields[1];
  }
  return links;
}

void attach_links(DatasetSplit& split,
                  const std::map<std::string, std::string>& links) {
  split.item_entity_links.clear();
  for (const auto& item : split.item_vocab) {
    const auto it = links.find(item);
    if (it != links.end()) split.item_entity_links[item] = it->second;
  }
}

std::map<std::string, DatasetSplit> shuffle_user_identities(
    const std::map<std::string, DatasetSplit>& splits, std::uint64_t seed) {
  if (splits.size() < 2) {
    throw std::invalid_argument("identity shuffle needs at least two domains");
  }
  // Deterministic enumeration: domains and users in sorted order.
  std::vector<std::pair<std::string, std::string>> all_users;
  for (const auto& [domain, split] : splits) {
    for (const auto& [user, _] : split.test_targets) {
      all_users.emplace_back(domain, user);
    }
  }
  std::vector<std::size_t> assignment(all_users.size());
  for (std::size_t i = 0; i < assignment.size(); ++i) assignment[i] = i;
  Rng rng(seed, rng_stream::kShuffleIds);
  rng.shuffle(assignment);

  std::map<std::string, std::map<std::string, std::string>> renames;
  for (std::size_t i = 0; i < all_users.size(); ++i) {
    renames[all_users[i].first][all_users[i].second] =
        "x" + std::to_string(assignment[i]);
  }

  std::map<std::string, DatasetSplit> out;
  for (const auto& [domain, split] : splits) {
    const auto& rename = renames.at(domain);
    DatasetSplit fresh = split;
    fresh.valid_targets.clear();
    fresh.test_targets.clear();
    for (auto& seq : fresh.train_sequences) seq.user = rename.at(seq.user);
    for (const auto& [user, item] : split.valid_targets) {
      fresh.valid_targets[rename.at(user)] = item;
    }
    for (const auto& [user, item] : split.test_targets) {
      fresh.test_targets[rename.at(user)] = item;
    }
    out[domain] = std::move(fresh);
  }
  return out;
}

KnowledgeGraph perturb_kg_sparsity(const KnowledgeGraph& kg, double remove_ratio,
                                   std::uint64_t seed) {
  if (!(remove_ratio >= 0.0 && remove_ratio < 1.0)) {
    throw std::invalid_argument("remove_ratio must lie in [0, 1)");
  }
  const std::size_t n = kg.triples.size();
  const auto k = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * remove_ratio));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed, rng_stream::kSparsity);
  rng.shuffle(order);
  std::vector<bool> removed(n, false);
  for (std::size_t i = 0; i < k; ++i) removed[order[i]] = true;

  KnowledgeGraph out;
  for (std::size_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    const Triple& t = kg.triples[i];
    out.triples.push_back(t);
    out.entities.insert(t.head);
    out.entities.insert(t.tail);
    out.relations.insert(t.relation);
  }
  for (const auto& rel : out.relations) {
    const auto it = kg.domain_tags.find(rel);
    if (it != kg.domain_tags.end()) out.domain_tags[rel] = it->second;
  }
  return out;
}

std::map<long, long> entity_frequency_stats(const KnowledgeGraph& kg) {
  if (kg.triples.empty()) throw std::invalid_argument("empty knowledge graph");
  std::map<std::string, long> freq;
  for (const auto& e : kg.entities) freq[e] = 0;
  for (const auto& t : kg.triples) {
    freq[t.head] += 1;
    if (t.tail != t.head) freq[t.tail] += 1;
  }
  std::map<long, long> hist;
  for (const auto& [_, f] : freq) hist[f] += 1;
  return hist;
}

}  // namespace kgb
