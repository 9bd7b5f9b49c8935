#include "kgbridge/evaluation.hpp"

#include "kgbridge/io.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace kgb {

long rank_of_target(const VecD& scores, Index target,
                    const std::set<Index>& excluded) {
  if (target < 0 || target >= scores.size()) {
    throw std::invalid_argument("target index out of range");
  }
  if (excluded.count(target)) {
    throw std::invalid_argument("target must not be excluded");
  }
  const double ts = scores(target);
  long rank = 1;
  for (Index j = 0; j < scores.size(); ++j) {
    if (j == target || excluded.count(j)) continue;
    if (scores(j) > ts || (scores(j) == ts && j < target)) ++rank;
  }
  return rank;
}

MetricReport compute_metrics(const std::vector<RankingResult>& results,
                             const std::vector<int>& ks) {
  if (results.empty()) throw std::invalid_argument("no ranking results");
  for (const int k : ks) {
    if (k <= 0) throw std::invalid_argument("K must be positive");
  }
  MetricReport report;
  report.n_users = static_cast<long>(results.size());
  for (const int k : ks) {
    double recall = 0.0;
    double ndcg = 0.0;
    for (const auto& r : results) {
      if (r.target_rank <= k) {
        recall += 1.0;
        ndcg += 1.0 / std::log2(static_cast<double>(r.target_rank) + 1.0);
      }
    }
    report.per_k[k] = {recall / report.n_users, ndcg / report.n_users};
  }
  return report;
}

namespace {

// continued fraction for the incomplete beta (Lentz's method)
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) throw std::invalid_argument("x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double ln_beta =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  const double front =
      std::exp(ln_beta + a * std::log(x) + b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * betacf(a, b, x) / a;
  }
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

std::optional<double> paired_t_pvalue(const std::vector<double>& diffs,
                                      bool* degenerate) {
  if (degenerate) *degenerate = false;
  const std::size_t n = diffs.size();
  if (n < 2) return std::nullopt;
  double mean = 0.0;
  for (const double d : diffs) mean += d;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (const double d : diffs) ss += (d - mean) * (d - mean);
  const double var = ss / static_cast<double>(n - 1);
  if (var == 0.0) {
    if (degenerate) *degenerate = true;
    return mean == 0.0 ? 1.0 : 0.0;
  }
  const double se = std::sqrt(var / static_cast<double>(n));
  const double t = mean / se;
  const double df = static_cast<double>(n - 1);
  return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

AggregateSummary aggregate_and_test(const std::vector<MetricReport>& system,
                                    const std::vector<MetricReport>* baseline) {
  if (system.empty()) throw std::invalid_argument("no reports to aggregate");
  if (baseline) {
    if (baseline->size() != system.size()) {
      throw std::invalid_argument("baseline run count must match system");
    }
    auto seeds_of = [](const std::vector<MetricReport>& rs) {
      std::vector<std::uint64_t> s;
      for (const auto& r : rs) s.push_back(r.seed);
      std::sort(s.begin(), s.end());
      return s;
    };
    if (seeds_of(system) != seeds_of(*baseline)) {
      throw std::invalid_argument("baseline seeds must match system seeds");
    }
  }

  // align runs by seed
  auto by_seed = [](const std::vector<MetricReport>& rs) {
    std::map<std::uint64_t, const MetricReport*> m;
    for (const auto& r : rs) m[r.seed] = &r;
    return m;
  };
  const auto sys = by_seed(system);

  AggregateSummary summary;
  summary.n_runs = static_cast<long>(system.size());
  for (const auto& [k, _] : system.front().per_k) {
    AggregateCell cell;
    std::vector<double> rec_diffs, ndcg_diffs;
    for (const auto& [seed, report] : sys) {
      const auto& [recall, ndcg] = report->per_k.at(k);
      cell.mean_recall += recall;
      cell.mean_ndcg += ndcg;
      if (baseline) {
        const auto base = by_seed(*baseline).at(seed);
        rec_diffs.push_back(recall - base->per_k.at(k).first);
        ndcg_diffs.push_back(ndcg - base->per_k.at(k).second);
      }
    }
    cell.mean_recall /= static_cast<double>(summary.n_runs);
    cell.mean_ndcg /= static_cast<double>(summary.n_runs);
    if (baseline) {
      cell.p_recall = paired_t_pvalue(rec_diffs, &cell.degenerate_recall);
      cell.p_ndcg = paired_t_pvalue(ndcg_diffs, &cell.degenerate_ndcg);
    }
    summary.per_k[k] = cell;
  }
  return summary;
}

std::string metric_reports_to_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << "system,seed,K,recall,ndcg,n_users\n";
  for (const auto& r : reports) {
    for (const auto& [k, values] : r.per_k) {
      os << r.system << ',' << r.seed << ',' << k << ',' << io::fmt6(values.first)
         << ',' << io::fmt6(values.second) << ',' << r.n_users << '\n';
    }
  }
  return os.str();
}

std::vector<MetricReport> metric_reports_from_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty metrics CSV");
  if (line.rfind("system,seed,K", 0) != 0) {
    throw std::runtime_error("unexpected metrics CSV header: " + line);
  }
  std::map<std::pair<std::string, std::uint64_t>, MetricReport> grouped;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = io::split(line, ',');
    if (fields.size() != 6) throw std::runtime_error("bad metrics CSV row: " + line);
    const std::string& system = fields[0];
    const auto seed = static_cast<std::uint64_t>(std::stoull(fields[1]));
    auto& report = grouped[{system, seed}];
    report.system = system;
    report.seed = seed;
    report.per_k[std::stoi(fields[2])] = {std::stod(fields[3]), std::stod(fields[4])};
    report.n_users = std::stol(fields[5]);
  }
  std::vector<MetricReport> out;
  for (auto& [_, report] : grouped) out.push_back(std::move(report));
  return out;
}

}  // namespace kgb
