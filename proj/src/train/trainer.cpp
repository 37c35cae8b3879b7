#include "parscale/train/trainer.hpp"

#include <cmath>

#include "parscale/common/errors.hpp"
#include "parscale/common/kv_config.hpp"

namespace parscale {

std::string RunLog::to_csv() const {
  std::string out = "step,lr,raw_loss,ema_loss\n";
  for (const auto& r : steps) {
    out += std::to_string(r.step) + "," + format_real(r.lr) + "," +
           format_real(r.raw_loss) + "," + format_real(r.ema_loss) + "\n";
  }
  return out;
}

std::string RunLog::evals_to_csv() const {
  std::string out = "step,loss\n";
  for (const auto& e : evals) {
    out += std::to_string(e.step) + "," + format_real(e.loss) + "\n";
  }
  return out;
}

double mean_loss(const ParameterStore<float>& store, const ModelConfig& model,
                 std::span<const Batch> batches) {
  if (batches.empty()) throw InputError("mean_loss over no batches");
  double sum = 0.0;
  for (const auto& b : batches) sum += evaluate_loss(store, model, b.tokens, b.targets).value;
  return sum / static_cast<double>(batches.size());
}

TrainResult train(ParameterStore<float> store, const ModelConfig& model,
                  const TrainConfig& config, std::span<const Batch> batches,
                  const TrainOptions& options, AdamState optimizer) {
  config.validate();
  model.validate();
  check_store_matches(store, model);
  if (batches.size() < config.total_steps) {
    throw InputError("train needs " + std::to_string(config.total_steps) +
                     " batches, got " + std::to_string(batches.size()));
  }
  if (config.freeze_backbone && !model.has_parallel_streams()) {
    throw ConfigError("freeze_backbone leaves nothing to train when num_streams = 1");
  }

  TrainResult result{std::move(store), {}, std::move(optimizer)};
  auto& log = result.log;
  const bool evaluating = !options.validation.empty();
  auto evaluate = [&](std::size_t step) {
    log.evals.push_back({step, mean_loss(result.store, model, options.validation)});
  };
  if (evaluating && options.eval_at_start) evaluate(0);

  const BackwardOptions bw{.freeze_backbone = config.freeze_backbone};
  log.steps.reserve(config.total_steps);
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    const auto& batch = batches[step - 1];
    auto [loss, grads] = backward(result.store, model, batch.tokens, batch.targets, bw);
    if (!std::isfinite(loss.value)) throw TrainingError(step, "non-finite loss");
    const double norm = global_grad_norm(grads);
    if (!std::isfinite(norm)) throw TrainingError(step, "non-finite gradient norm");
    const double clipped = clip_grad_norm(grads, config.grad_clip_norm);
    const double lr = lr_at(config, step);
    adamw_update(result.store, grads, result.optimizer, config, lr);

    StepRecord rec{step, lr, loss.value, loss.value, norm, clipped};
    if (!log.steps.empty()) {
      rec.ema_loss = config.ema_weight * log.steps.back().ema_loss +
                     (1.0 - config.ema_weight) * loss.value;
    }
    log.steps.push_back(rec);
    if (options.on_step) options.on_step(rec);
    if (evaluating && ((options.eval_every > 0 && step % options.eval_every == 0) ||
                       step <= options.eval_first_steps)) {
      evaluate(step);
    }
  }
  if (evaluating && (log.evals.empty() || log.evals.back().step != config.total_steps)) {
    evaluate(config.total_steps);
  }
  return result;
}

TrainConfig stage2_config(const TrainConfig& stage1, const TrainConfig& stage2) {
  TrainConfig c = stage2;
  c.schedule = Schedule::wsd;
  c.warmup_steps = 0;
  c.wsd_decay_steps = c.total_steps;
  c.peak_lr = lr_at(stage1, stage1.total_steps);
  if (c.min_lr > c.peak_lr) c.min_lr = c.peak_lr;
  return c;
}

TwoStageResult two_stage_train(const ModelConfig& model, std::uint64_t seed,
                               const StageInput& stage1, const StageInput& stage2) {
  model.validate();
  if (stage1.config.freeze_backbone) {
    throw ConfigError("stage 1 trains the backbone; freeze_backbone must be off");
  }
  const ModelConfig base = model.with_streams(1);
  auto first = train(build_model(base, seed), base, stage1.config, stage1.batches,
                     stage1.options);

  inject_parallel_parameters(first.store, model, seed);
  const TrainConfig c2 = stage2_config(stage1.config, stage2.config);
  std::optional<double> initial;
  if (!stage2.options.validation.empty()) {
    initial = mean_loss(first.store, model, stage2.options.validation);
  }
  auto second = train(std::move(first.store), model, c2, stage2.batches, stage2.options,
                      std::move(first.optimizer));
  return {std::move(second.store), std::move(first.log), std::move(second.log), initial};
}

}  // namespace parscale
