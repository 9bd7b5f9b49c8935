#pragma once

#include "kgbridge/types.hpp"

#include <stdexcept>
#include <string>

namespace kgb {

enum class PromptKind { shared, specific };
enum class PromptStrategy { mean_noise, plain_mean, attention_pool, transformer_pool };

inline std::string to_string(PromptKind k) {
  return k == PromptKind::shared ? "shared" : "specific";
}

inline std::string to_string(PromptStrategy s) {
  switch (s) {
    case PromptStrategy::mean_noise: return "mean_noise";
    case PromptStrategy::plain_mean: return "plain_mean";
    case PromptStrategy::attention_pool: return "attention_pool";
    case PromptStrategy::transformer_pool: return "transformer_pool";
  }
  return "mean_noise";
}

inline PromptStrategy prompt_strategy_from_string(const std::string& s) {
  if (s == "mean_noise") return PromptStrategy::mean_noise;
  if (s == "plain_mean") return PromptStrategy::plain_mean;
  if (s == "attention_pool") return PromptStrategy::attention_pool;
  if (s == "transformer_pool") return PromptStrategy::transformer_pool;
  throw std::invalid_argument("unknown prompt strategy: " + s);
}

struct PromptGeneratorConfig {
  PromptStrategy strategy = PromptStrategy::mean_noise;
  int prompt_len = 2;        // L
  double noise_sigma = 0.01; // position-wise noise scale at init
  std::uint64_t seed = 0;

  void validate() const {
    if (prompt_len < 1) throw std::invalid_argument("prompt_len must be >= 1");
    if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
  }
};

// A fixed-size bank of L soft prompt rows. The bank is a free parameter after
// initialization; `frozen` marks it excluded from optimizer updates.
template <typename S>
struct PromptBank {
  PromptKind kind = PromptKind::shared;
  Mat<S> values;  // L x d
  bool frozen = false;
};

namespace detail {

template <typename S>
Mat<S> xavier_uniform(Index rows, Index cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat<S> m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      m(i, j) = static_cast<S>(rng.uniform(-bound, bound));
    }
  }
  return m;
}

template <typename S>
Mat<S> softmax_rows(const Mat<S>& scores) {
  Mat<S> out(scores.rows(), scores.cols());
  for (Index i = 0; i < scores.rows(); ++i) {
    S mx = scores(i, 0);
    for (Index j = 1; j < scores.cols(); ++j) mx = std::max(mx, scores(i, j));
    S sum = 0;
    for (Index j = 0; j < scores.cols(); ++j) {
      out(i, j) = std::exp(scores(i, j) - mx);
      sum += out(i, j);
    }
    out.row(i) /= sum;
  }
  return out;
}

}  // namespace detail

// Aggregates n relation-embedding rows into an L x d bank.
//
// mean_noise (default): every row is the column mean passed through an
// identity transform plus independent N(0, sigma^2 I) noise, drawn once at
// initialization. plain_mean drops the noise. attention_pool scores relation
// rows with L independent scalar heads; transformer_pool runs one
// self-attention pass per head and mean-pools the result. The pooled variants
// exist for comparison only and share no parameters with the model.
template <typename S>
PromptBank<S> generate_prompt_bank(const Mat<S>& relations,
                                   const PromptGeneratorConfig& cfg,
                                   PromptKind kind) {
  cfg.validate();
  if (relations.rows() == 0) {
    throw std::invalid_argument("empty relation vocabulary for " + to_string(kind) +
                                " prompt bank");
  }
  const Index n = relations.rows();
  const Index d = relations.cols();
  const Index L = cfg.prompt_len;
  Rng rng(cfg.seed, kind == PromptKind::shared ? rng_stream::kNoise
                                               : rng_stream::kNoise + 100);

  PromptBank<S> bank;
  bank.kind = kind;
  bank.values.resize(L, d);

  switch (cfg.strategy) {
    case PromptStrategy::plain_mean:
    case PromptStrategy::mean_noise: {
      Vec<S> mean = Vec<S>::Zero(d);
      for (Index i = 0; i < n; ++i) mean += relations.row(i).transpose();
      mean /= static_cast<S>(n);
      for (Index l = 0; l < L; ++l) {
        bank.values.row(l) = mean.transpose();
        if (cfg.strategy == PromptStrategy::mean_noise) {
          for (Index j = 0; j < d; ++j) {
            bank.values(l, j) += static_cast<S>(cfg.noise_sigma * rng.normal());
          }
        }
      }
      break;
    }
    case PromptStrategy::attention_pool: {
      // L scalar score heads, softmax over relation rows
      for (Index l = 0; l < L; ++l) {
        Vec<S> u(d);
        for (Index j = 0; j < d; ++j) {
          u(j) = static_cast<S>(rng.normal() / std::sqrt(static_cast<double>(d)));
        }
        Mat<S> scores(1, n);
        for (Index i = 0; i < n; ++i) scores(0, i) = relations.row(i) * u;
        const Mat<S> w = detail::softmax_rows(scores);
        Vec<S> pooled = Vec<S>::Zero(d);
        for (Index i = 0; i < n; ++i) pooled += w(0, i) * relations.row(i).transpose();
        bank.values.row(l) = pooled.transpose();
      }
      break;
    }
    case PromptStrategy::transformer_pool: {
      // one self-attention pass per head, then mean over attended rows
      const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));
      for (Index l = 0; l < L; ++l) {
        const Mat<S> wq = detail::xavier_uniform<S>(d, d, rng);
        const Mat<S> wk = detail::xavier_uniform<S>(d, d, rng);
        const Mat<S> wv = detail::xavier_uniform<S>(d, d, rng);
        Mat<S> q = relations * wq;
        Mat<S> k = relations * wk;
        Mat<S> v = relations * wv;
        Mat<S> scores = q * k.transpose() * scale;
        const Mat<S> w = detail::softmax_rows(scores);
        Mat<S> attended = w * v;
        Vec<S> pooled = Vec<S>::Zero(d);
        for (Index i = 0; i < n; ++i) pooled += attended.row(i).transpose();
        pooled /= static_cast<S>(n);
        bank.values.row(l) = pooled.transpose();
      }
      break;
    }
  }
  return bank;
}

// Builds both banks. An empty specific vocabulary (fully shared relation sets)
// falls back to initializing the specific bank from the shared matrix.
template <typename S>
std::pair<PromptBank<S>, PromptBank<S>> build_prompt_banks(
    const Mat<S>& r_shared, const Mat<S>& r_specific,
    const PromptGeneratorConfig& cfg) {
  PromptBank<S> shared = generate_prompt_bank(r_shared, cfg, PromptKind::shared);
  const Mat<S>& spec_source = r_specific.rows() > 0 ? r_specific : r_shared;
  PromptBank<S> specific =
      generate_prompt_bank(spec_source, cfg, PromptKind::specific);
  return {std::move(shared), std::move(specific)};
}

}  // namespace kgb
