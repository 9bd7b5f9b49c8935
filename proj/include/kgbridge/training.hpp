#pragma once

#include "kgbridge/dataset.hpp"
#include "kgbridge/evaluation.hpp"
#include "kgbridge/seqgrad.hpp"

#include <cmath>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace kgb {

enum class Stage { pretrain, finetune };

enum class Ablation { no_kg_init, no_shared, no_spec, no_disen, no_freeze };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct TrainConfig {
  Stage stage = Stage::pretrain;
  double learning_rate = 1e-4;
  int batch_size = 128;
  int max_epochs = 200;
  int patience = 10;
  double dropout = 0.2;
  double lambda = 0.003;  // disentanglement weight (fine-tuning)
  double tau = 0.2;       // InfoNCE temperature
  std::uint64_t seed = 0;
  std::set<Ablation> ablation_flags;

  void validate() const {
    if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
    if (tau <= 0.0) throw std::invalid_argument("tau must be > 0");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (max_epochs < 0) throw std::invalid_argument("max_epochs must be >= 0");
    if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
    if (dropout < 0.0 || dropout >= 1.0) {
      throw std::invalid_argument("dropout must lie in [0, 1)");
    }
  }
};

// Flat view over one parameter array; the enumeration order of
// `for_each_param` fixes the layout for the optimizer and serialization.
template <typename S>
struct ParamView {
  std::string name;
  S* data;
  Index rows, cols;
  Index size() const { return rows * cols; }
};

template <typename S>
std::vector<ParamView<S>> param_views(ModelState<S>& m, Mat<S>* shared_values,
                                      Mat<S>* spec_values) {
  std::vector<ParamView<S>> views;
  for_each_param(m, [&](const char* name, auto& p) {
    views.push_back({name, p.data(), p.rows(), p.cols()});
  });
  if (shared_values) {
    views.push_back({"bank_shared", shared_values->data(), shared_values->rows(),
                     shared_values->cols()});
  }
  if (spec_values) {
    views.push_back({"bank_spec", spec_values->data(), spec_values->rows(),
                     spec_values->cols()});
  }
  return views;
}

// Adaptive-moment gradient descent with bias correction. Frozen parameters
// are skipped entirely, so their moment state stays inert.
template <typename S>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<S>> m, v;  // aligned with the param enumeration
};

template <typename S>
void adam_step(AdamState<S>& opt, const std::vector<ParamView<S>>& params,
               const std::vector<ParamView<S>>& grads,
               const std::set<std::string>& frozen) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("params and grads must align");
  }
  if (opt.m.empty()) {
    for (const auto& p : params) {
      opt.m.emplace_back(p.size(), S(0));
      opt.v.emplace_back(p.size(), S(0));
    }
  }
  opt.step += 1;
  const S bc1 = static_cast<S>(1.0 / (1.0 - std::pow(opt.beta1, opt.step)));
  const S bc2 = static_cast<S>(1.0 / (1.0 - std::pow(opt.beta2, opt.step)));
  const S lr = static_cast<S>(opt.lr);
  const S b1 = static_cast<S>(opt.beta1);
  const S b2 = static_cast<S>(opt.beta2);
  const S eps = static_cast<S>(opt.eps);
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p].name != grads[p].name || params[p].size() != grads[p].size()) {
      throw std::invalid_argument("param/grad mismatch at " + params[p].name);
    }
    if (frozen.count(params[p].name)) continue;
    S* x = params[p].data;
    const S* g = grads[p].data;
    S* mp = opt.m[p].data();
    S* vp = opt.v[p].data();
    const Index n = params[p].size();
    for (Index i = 0; i < n; ++i) {
      mp[i] = b1 * mp[i] + (S(1) - b1) * g[i];
      vp[i] = b2 * vp[i] + (S(1) - b2) * g[i] * g[i];
      x[i] -= lr * (mp[i] * bc1) / (std::sqrt(vp[i] * bc2) + eps);
    }
  }
}

// Complete fine-tuning objective L_rec + lambda * L_disen with full gradients
// for every parameter including both banks. The training loop applies its own
// update rules on top (freezing, spec-only disentanglement flow); this
// function is the mathematically complete loss used for verification.
struct FinetuneLoss {
  double rec = 0.0;
  double disen = 0.0;
  double total = 0.0;
};

template <typename S>
FinetuneLoss finetune_loss_and_grad(const ModelState<S>& state,
                                       const PromptBank<S>& shared,
                                       const PromptBank<S>& spec,
                                       const SequenceBatch& batch, double lambda,
                                       double tau, ModelState<S>* gmodel = nullptr,
                                       BankGrads<S>* gbanks = nullptr,
                                       KinkSignature* kinks = nullptr) {
  FinetuneLoss out;
  const RecLoss rec =
      rec_loss_and_grad(state, shared, spec, batch, false, nullptr, gmodel, gbanks,
                        kinks);
  out.rec = rec.loss;
  if (lambda != 0.0) {
    BankGrads<S> dg;
    out.disen = disentanglement_loss(shared, spec, tau, gbanks ? &dg : nullptr);
    if (gbanks) {
      gbanks->shared += static_cast<S>(lambda) * dg.shared;
      gbanks->spec += static_cast<S>(lambda) * dg.spec;
    }
  } else {
    out.disen = 0.0;
  }
  out.total = out.rec + lambda * out.disen;
  return out;
}

// Redraws prompt banks with Xavier-normal entries for the initialization
// ablations; dimensionality is preserved. no_disen / no_freeze only take
// effect inside the fine-tuning loop and leave the banks untouched here.
void apply_ablation(const std::set<Ablation>& flags, PromptBank<float>& shared,
                    PromptBank<float>& spec, std::uint64_t seed);

// Full training snapshot. `model`/`*_bank` hold the best-so-far payload that
// downstream stages consume; the `cur_*` copies plus optimizer and RNG states
// make interrupted runs resume bit-exactly.
struct Checkpoint {
  ModelState<float> model;
  PromptBank<float> shared_bank, spec_bank;
  ModelState<float> cur_model;
  PromptBank<float> cur_shared, cur_spec;
  AdamState<float> optimizer;
  int epoch = 0;
  int epochs_since_best = 0;
  double best_valid_metric = -1.0;
  bool best_initialized = false;
  std::string rng_sample_state, rng_dropout_state;
  TrainConfig config;
  ModelConfig model_config;
  GlobalVocab vocab;
  std::vector<double> epoch_losses;  // mean per-step loss per epoch
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Allocates a model with the right shapes but all-zero parameters.
template <typename S>
ModelState<S> model_shell(const ModelConfig& cfg, Index vocab) {
  Rng rng(0);
  ModelState<S> m = init_model<S>(cfg, vocab, rng);
  for_each_param(m, [](const char*, auto& p) { p.setZero(); });
  return m;
}

struct FitData {
  std::vector<TrainRow> rows;
  std::vector<EvalRow> valid_rows;
};

struct FitOptions {
  EvalOptions eval;                    // exclusion policy for validation
  std::filesystem::path autosave_dir;  // empty = no per-epoch autosave
};

// Shared train loop for both stages: shuffled mixed batches, Adam steps,
// early stopping on validation NDCG@10, best-checkpoint tracking. Fine-tuning
// adds the disentanglement term (gradient to the specific bank only) and
// freezes the shared bank unless no_freeze is set.
void fit(Checkpoint& ckpt, const FitData& data, const FitOptions& opts);

Checkpoint make_checkpoint(ModelState<float> model, PromptBank<float> shared,
                           PromptBank<float> spec, TrainConfig cfg,
                           ModelConfig model_cfg, GlobalVocab vocab);

// Stage 1: next-item cross-entropy over mixed-domain batches from every
// domain; all parameters including both banks train.
Checkpoint pretrain(ModelState<float> model, PromptBank<float> shared,
                    PromptBank<float> spec,
                    const std::map<std::string, DatasetSplit>& splits,
                    const GlobalVocab& vocab, const TrainConfig& cfg,
                    const ModelConfig& model_cfg, const FitOptions& opts);

// Stage 2: target-domain data only, starting from the pretrained payload with
// a fresh optimizer.
Checkpoint finetune(const Checkpoint& pretrained, const DatasetSplit& target_split,
                    const std::string& target_domain, const TrainConfig& cfg,
                    const FitOptions& opts);

}  // namespace kgb
