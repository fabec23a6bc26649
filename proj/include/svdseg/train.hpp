// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "svdseg/checkpoint.hpp"
#include "svdseg/data.hpp"
#include "svdseg/metrics.hpp"
#include "svdseg/peft.hpp"

namespace svdseg {

// Resolved run configuration. Every run writes its resolved config next to
// its outputs; a run is fully determined by this record (plus backend).
struct RunConfig {
  ModelConfig model;

  Method method = Method::kSvd;
  int lora_rank = 4;
  SsamToggles toggles;

  // optimization
  double lr = 1e-3;           // adaptation learning rate
  double pretrain_lr = 1e-4;  // pretraining learning rate
  int steps = 260;            // adaptation steps
  int pretrain_steps = 1600;
  int batch = 8;
  int warmup = 20;
  double clip_norm = 1.0;

  // data
  int train_images = 64;
  int eval_images = 24;
  std::uint64_t data_seed = 9000;  // corpus seed, shared across run seeds
  DomainShiftSpec target_shift = GenSpec::target_default().shift;
  std::string data_dir;  // when set, ingest this directory instead of generating

  std::uint64_t seed = 42;
  std::vector<std::uint64_t> seeds = {1, 2, 3};  // ablation / experiment seed set

  // paths
  std::string out_dir = "runs";
  std::string run_name;
  std::string pretrained;  // pretrained checkpoint (adapt/ablation/evaluate)

  std::set<std::string> provided;  // keys set explicitly via file or CLI
};

// key = value configuration text. Unknown keys are config errors; CLI flags
// override file values.
RunConfig parse_run_config(const std::optional<std::filesystem::path>& file,
                           const std::vector<std::pair<std::string, std::string>>& overrides);
void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& file);

// Toggles are only meaningful for method=svd; rejects explicit toggle keys
// for any other method.
void check_config_for_command(const RunConfig& cfg, const std::string& command);

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

class AdamOptimizer {
 public:
  AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update to every trainable param that has a gradient buffer.
  void step(const ParamList& params, double lr);

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Slot> slots_;
};

// Linear warmup into cosine decay.
double lr_at_step(double base_lr, int step, int total_steps, int warmup);

// Equally weighted binary cross-entropy + soft dice on mask logits.
struct BatchLoss {
  double value = 0.0;
  Matrix d_logits;  // same shape as logits
};
BatchLoss seg_loss(const Matrix& logits, const std::vector<const Mask*>& masks);

struct TrainStats {
  double final_loss = 0.0;
  int steps = 0;
};

// Minibatch trainer. Batches mix present-class and absent-class prompts at
// roughly 3:1 so the model learns to emit blank masks. Throws TrainError on
// divergence (non-finite loss), reporting the step.
TrainStats train_model(PromptSegModel& model, const TextEmbedder& embedder, const Dataset& data,
                       int steps, int batch, double base_lr, int warmup, double clip_norm,
                       std::uint64_t seed);

// ---------------------------------------------------------------------------
// Run drivers (used by the CLI and the acceptance suite)
// ---------------------------------------------------------------------------

std::filesystem::path run_dir(const RunConfig& cfg, const std::string& default_name);

Dataset make_dataset(const RunConfig& cfg, Domain domain, bool eval_split);

struct PretrainOutcome {
  DiceResult source_eval;
  std::filesystem::path checkpoint;
  double final_loss = 0.0;
};
PretrainOutcome run_pretrain(const RunConfig& cfg);

struct AdaptOutcome {
  DiceResult target_eval;
  ParamReport params;
  std::vector<std::string> audit_violations;  // empty => frozen-bitwise audit passed
  std::filesystem::path checkpoint;
};
AdaptOutcome run_adapt(const RunConfig& cfg);

struct AblationRow {
  std::string name;
  SsamToggles toggles;
  std::vector<double> per_seed_dsc;
  double mean_dsc = 0.0;
};
// The 7 cumulative component combinations, each trained over cfg.seeds.
std::vector<AblationRow> run_ablation(const RunConfig& cfg);

// Table-5-style rows used by run_ablation (exposed for tests).
std::vector<std::pair<std::string, SsamToggles>> ablation_rows();

DiceResult evaluate_checkpoint(const RunConfig& cfg, const std::filesystem::path& ckpt,
                               Domain domain);

}  // namespace svdseg
