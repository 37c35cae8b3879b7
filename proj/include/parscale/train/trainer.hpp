#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "parscale/data/corpus.hpp"
#include "parscale/model/transformer.hpp"
#include "parscale/train/optimizer.hpp"
#include "parscale/train/schedule.hpp"

namespace parscale {

struct StepRecord {
  std::size_t step = 0;  // 1-based update number
  double lr = 0.0;
  double raw_loss = 0.0;  // before this update
  double ema_loss = 0.0;
  double grad_norm = 0.0;          // before clipping
  double clipped_grad_norm = 0.0;  // after clipping
};

struct EvalRecord {
  std::size_t step = 0;  // updates applied so far
  double loss = 0.0;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::string checkpoint;

  // step,lr,raw_loss,ema_loss
  std::string to_csv() const;
  // step,loss
  std::string evals_to_csv() const;
};

struct TrainOptions {
  // Mean loss over these batches is logged every `eval_every` updates, after
  // the last update, and at step 0 when eval_at_start is set.
  std::span<const Batch> validation = {};
  std::size_t eval_every = 0;
  // Also evaluate after each of the first eval_first_steps updates.
  std::size_t eval_first_steps = 0;
  bool eval_at_start = false;
  std::function<void(const StepRecord&)> on_step = nullptr;
};

struct TrainResult {
  ParameterStore<float> store;
  RunLog log;
  AdamState optimizer;
};

// Runs total_steps updates; update s consumes batches[s - 1]. Throws
// TrainingError with the step on a non-finite loss or gradient.
TrainResult train(ParameterStore<float> store, const ModelConfig& model,
                  const TrainConfig& config, std::span<const Batch> batches,
                  const TrainOptions& options = {}, AdamState optimizer = {});

double mean_loss(const ParameterStore<float>& store, const ModelConfig& model,
                 std::span<const Batch> batches);

struct StageInput {
  TrainConfig config;
  std::span<const Batch> batches;
  TrainOptions options;
};

struct TwoStageResult {
  ParameterStore<float> store;
  RunLog stage1;
  RunLog stage2;
  // Validation loss of the injected model before its first stage-2 update.
  std::optional<double> stage2_initial_eval;
};

// Stage 1 trains the single-stream backbone from `seed`. Stage 2 injects
// prefixes and the aggregation head (Gaussian, model.init_std) and trains
// everything, continuing the backbone's optimizer state. Stage 2 always runs
// wsd with no warmup, starts at stage 1's final learning rate and anneals to
// its own min_lr over all of its steps; those fields of stage2.config are
// overridden accordingly.
TwoStageResult two_stage_train(const ModelConfig& model, std::uint64_t seed,
                               const StageInput& stage1, const StageInput& stage2);

// The config stage 2 actually runs with.
TrainConfig stage2_config(const TrainConfig& stage1, const TrainConfig& stage2);

}  // namespace parscale
