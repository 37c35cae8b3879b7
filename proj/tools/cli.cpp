#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "parscale/common/atomic_file.hpp"
#include "parscale/common/errors.hpp"
#include "parscale/common/kv_config.hpp"
#include "parscale/common/parallel.hpp"
#include "parscale/cost/cost.hpp"
#include "parscale/data/corpus.hpp"
#include "parscale/data/synth.hpp"
#include "parscale/law/law.hpp"
#include "parscale/model/generate.hpp"
#include "parscale/model/parameters.hpp"
#include "parscale/train/checkpoint.hpp"
#include "parscale/train/trainer.hpp"

#ifndef PARSCALE_VERSION
#define PARSCALE_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace parscale::cli {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitContract = 3;

struct Manifest {
  std::string command;
  KeyValueConfig config;
  json inputs = json::object();
  json outputs = json::object();
  std::optional<std::uint64_t> seed;

  void write(const fs::path& path) const {
    json j;
    j["command"] = command;
    j["tool_version"] = PARSCALE_VERSION;
    j["seed"] = seed ? json(*seed) : json(nullptr);
    json cfg = json::object();
    for (const auto& [k, v] : config.entries()) cfg[k] = v;
    j["config"] = cfg;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["deterministic"] = deterministic_mode();
    j["threads"] = thread_limit();
    write_file_atomic(path, j.dump(2) + "\n");
  }
};

fs::path sibling(const fs::path& path, const std::string& suffix) {
  return fs::path(path.string() + suffix);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// `model.preset` seeds every model.* key it does not already set.
ModelConfig read_model(KeyValueConfig& kv) {
  if (kv.has("model.preset")) {
    const auto streams = kv.get_int("model.num_streams", 1);
    if (streams < 1) throw ConfigError("model.num_streams must be at least 1");
    const auto preset =
        presets::by_name(kv.get_string("model.preset"), static_cast<std::size_t>(streams));
    KeyValueConfig defaults;
    preset.write(defaults, "model.");
    for (const auto& [k, v] : defaults.entries()) {
      if (!kv.has(k)) kv.set(k, v);
    }
  }
  auto model = ModelConfig::read(kv, "model.");
  model.validate();
  return model;
}

void reject_unused(const KeyValueConfig& kv, const std::string& origin) {
  const auto unused = kv.unused_keys();
  if (!unused.empty()) throw ConfigError(origin + ": unknown key '" + unused.front() + "'");
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string corpus;
  std::string out;
  std::string init;
  bool two_stage = false;
  bool freeze_backbone = false;
};

TokenStream load_training_stream(KeyValueConfig& kv, const std::string& corpus,
                                 Manifest& manifest) {
  if (!corpus.empty()) {
    manifest.inputs["corpus"] = corpus;
    return ingest_corpus(corpus);
  }
  if (!kv.has("data.synthetic.generator")) {
    throw InputError("no corpus: pass --corpus or set data.synthetic.generator");
  }
  SynthSpec spec;
  spec.generator = kv.get_string("data.synthetic.generator");
  spec.size = static_cast<std::size_t>(kv.get_int("data.synthetic.size", 1000000));
  spec.seed = static_cast<std::uint64_t>(kv.get_int("data.synthetic.seed", 0));
  spec.alphabet_size = static_cast<std::size_t>(kv.get_int("data.synthetic.alphabet_size", 24));
  spec.branching = static_cast<std::size_t>(kv.get_int("data.synthetic.branching", 4));
  manifest.inputs["corpus"] = "synthetic:" + spec.generator;
  return synth_corpus(spec);
}

std::vector<Batch> training_batches(const TokenStream& stream, BatchPlan plan, std::size_t steps) {
  plan.epochs = epochs_for_steps(stream.size(), plan, steps);
  auto batches = make_batches(stream, plan);
  batches.resize(steps);
  return batches;
}

int cmd_train(const TrainArgs& args, std::ostream& out) {
  Manifest manifest;
  manifest.command = "train";
  KeyValueConfig kv = KeyValueConfig::load(args.config);
  manifest.inputs["config"] = args.config;

  const ModelConfig model = read_model(kv);
  TrainConfig stage1 = TrainConfig::read(kv, "train.");
  // With --two-stage the flag applies to stage 2; stage 1 has no streams.
  if (args.freeze_backbone && !args.two_stage) stage1.freeze_backbone = true;
  stage1.validate();

  BatchPlan plan;
  plan.batch_size = static_cast<std::size_t>(kv.get_int("data.batch_size", 8));
  plan.seq_len = static_cast<std::size_t>(kv.get_int("data.seq_len", 64));
  plan.shuffle = kv.get_bool("data.shuffle", true);
  plan.shuffle_seed = stage1.seed;
  const double holdout = kv.get_double("data.holdout", 0.02);
  const auto val_batches = static_cast<std::size_t>(kv.get_int("data.val_batches", 8));
  const auto eval_every = static_cast<std::size_t>(kv.get_int("train.eval_every", 0));

  // stage2.* keys are parsed either way so a two-stage config also runs
  // single-stage.
  std::optional<TrainConfig> stage2 = TrainConfig::read(kv, "stage2.");
  if (!args.two_stage) {
    stage2.reset();
  } else {
    if (!kv.has("stage2.total_steps")) {
      throw ConfigError(args.config + ": --two-stage needs stage2.total_steps");
    }
    if (args.freeze_backbone) stage2->freeze_backbone = true;
    if (model.num_streams < 2) {
      throw ConfigError("--two-stage needs model.num_streams of at least 2");
    }
  }
  TokenStream stream = load_training_stream(kv, args.corpus, manifest);
  reject_unused(kv, args.config);

  auto [train_split, val_split] = split_stream(stream, holdout);
  std::vector<Batch> validation;
  if (val_batches > 0 && holdout > 0.0) {
    BatchPlan vp{.batch_size = plan.batch_size, .seq_len = plan.seq_len};
    validation = make_batches(val_split, vp);
    if (validation.size() > val_batches) validation.resize(val_batches);
  }
  TrainOptions options{.validation = validation, .eval_every = eval_every};

  const fs::path dir(args.out);
  fs::create_directories(dir);
  const fs::path checkpoint = dir / "checkpoint.psck";
  manifest.seed = stage1.seed;
  manifest.inputs["two_stage"] = args.two_stage;
  manifest.inputs["freeze_backbone"] = args.freeze_backbone;

  ParameterStore<float> final_store;
  double final_ema = 0.0;
  if (stage2) {
    const auto b1 = training_batches(train_split, plan, stage1.total_steps);
    BatchPlan plan2 = plan;
    plan2.shuffle_seed = stage1.seed + 1;
    const auto b2 = training_batches(train_split, plan2, stage2->total_steps);
    TrainOptions options2 = options;
    options2.eval_at_start = !validation.empty();
    auto result = two_stage_train(model, stage1.seed, {stage1, b1, options},
                                  {*stage2, b2, options2});
    write_file_atomic(dir / "stage1_log.csv", result.stage1.to_csv());
    write_file_atomic(dir / "stage1_eval.csv", result.stage1.evals_to_csv());
    write_file_atomic(dir / "stage2_log.csv", result.stage2.to_csv());
    write_file_atomic(dir / "stage2_eval.csv", result.stage2.evals_to_csv());
    manifest.outputs["stage1_log"] = (dir / "stage1_log.csv").string();
    manifest.outputs["stage2_log"] = (dir / "stage2_log.csv").string();
    final_store = std::move(result.store);
    final_ema = result.stage2.steps.back().ema_loss;
    stage2_config(stage1, *stage2).write(kv, "stage2.");
  } else {
    ParameterStore<float> init;
    if (!args.init.empty()) {
      auto loaded = load_checkpoint(args.init);
      manifest.inputs["init"] = args.init;
      if (loaded.config.with_streams(1) != model.with_streams(1)) {
        throw ConfigError("--init checkpoint backbone differs from the configured model");
      }
      init = std::move(loaded.store);
      if (loaded.config.num_streams == 1 && model.num_streams > 1) {
        inject_parallel_parameters(init, model, stage1.seed);
      } else if (loaded.config.num_streams != model.num_streams) {
        throw ConfigError("--init checkpoint has P = " +
                          std::to_string(loaded.config.num_streams) + ", model has P = " +
                          std::to_string(model.num_streams));
      }
    } else {
      init = build_model(model, stage1.seed);
    }
    const auto batches = training_batches(train_split, plan, stage1.total_steps);
    auto result = train(std::move(init), model, stage1, batches, options);
    write_file_atomic(dir / "run_log.csv", result.log.to_csv());
    write_file_atomic(dir / "eval_log.csv", result.log.evals_to_csv());
    manifest.outputs["run_log"] = (dir / "run_log.csv").string();
    manifest.outputs["eval_log"] = (dir / "eval_log.csv").string();
    final_store = std::move(result.store);
    final_ema = result.log.steps.empty() ? 0.0 : result.log.steps.back().ema_loss;
  }
  save_checkpoint(final_store, model, checkpoint);
  manifest.outputs["checkpoint"] = checkpoint.string();

  stage1.write(kv, "train.");
  model.write(kv, "model.");
  write_file_atomic(dir / "config.resolved", kv.to_string());
  manifest.outputs["resolved_config"] = (dir / "config.resolved").string();
  manifest.config = kv;
  manifest.write(dir / "manifest.json");
  out << "final ema loss " << format_real(final_ema) << "\n";
  out << "checkpoint " << checkpoint.string() << "\n";
  return kExitOk;
}

// -------------------------------------------------------------- fit-law

struct FitArgs {
  std::string observations;
  std::string family = "log";
  std::string out;
};

int cmd_fit_law(const FitArgs& args, std::ostream& out) {
  const auto family = parse_law_family(args.family);
  const auto obs = read_observations_csv(args.observations);
  const auto fit = fit_law(obs, family);
  write_file_atomic(args.out, fit_to_json(fit, obs));

  Manifest manifest;
  manifest.command = "fit-law";
  manifest.config.set("family", to_string(family));
  manifest.inputs["observations"] = args.observations;
  manifest.outputs["fit"] = args.out;
  manifest.write(sibling(args.out, ".manifest.json"));

  const auto& p = fit.params;
  out << "family " << to_string(p.family) << "\n";
  out << "A " << format_real(p.A) << "\n";
  if (p.family == LawFamily::logarithmic) {
    out << "k " << format_real(p.k) << "\n";
  } else {
    out << "rho " << format_real(p.rho) << "\n";
  }
  out << "E " << format_real(p.E) << "\n";
  out << "alpha " << format_real(p.alpha) << "\n";
  out << "huber " << format_real(fit.huber_objective) << "\n";
  out << "r_squared " << format_real(fit.r_squared) << "\n";
  return kExitOk;
}

// --------------------------------------------------------- analyze-cost

struct CostArgs {
  std::string sweep;
  std::string out;
};

int cmd_analyze_cost(const CostArgs& args, std::ostream& out) {
  const auto kv = KeyValueConfig::load(args.sweep);
  const auto sweep = CostSweep::read(kv);
  const auto rows = sweep.run();
  const fs::path csv(args.out);
  fs::path json_path = csv;
  json_path.replace_extension(".json");
  if (json_path == csv) json_path = sibling(csv, ".json");
  write_file_atomic(csv, comparison_to_csv(rows));
  write_file_atomic(json_path, comparison_to_json(rows, sweep.hardware));

  Manifest manifest;
  manifest.command = "analyze-cost";
  manifest.config = kv;
  sweep.hardware.write(manifest.config, "hardware.");
  manifest.inputs["sweep"] = args.sweep;
  manifest.outputs["csv"] = csv.string();
  manifest.outputs["json"] = json_path.string();
  manifest.write(sibling(csv, ".manifest.json"));
  out << rows.size() << " rows written to " << csv.string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------- generate

struct GenerateArgs {
  std::string checkpoint;
  std::string prompt;
  std::string prompt_file;
  long long length = 0;
  std::string out;
  std::string attribute;
};

int cmd_generate(const GenerateArgs& args, std::ostream& out) {
  if (args.length <= 0) throw ContractError("--length must be positive");
  const auto loaded = load_checkpoint(args.checkpoint);
  const std::string prompt_text =
      args.prompt_file.empty() ? args.prompt : read_text(args.prompt_file);
  const auto prompt = tokenize(prompt_text);
  const auto gen = generate_greedy(loaded.store, loaded.config, prompt.ids,
                                   static_cast<std::size_t>(args.length));
  const std::string text = detokenize(gen.tokens);
  write_file_atomic(args.out, text);

  Manifest manifest;
  manifest.command = "generate";
  loaded.config.write(manifest.config, "model.");
  manifest.config.set("length", std::to_string(args.length));
  manifest.inputs["checkpoint"] = args.checkpoint;
  if (args.prompt_file.empty()) {
    manifest.inputs["prompt"] = args.prompt;
  } else {
    manifest.inputs["prompt_file"] = args.prompt_file;
  }
  manifest.outputs["text"] = args.out;

  if (!args.attribute.empty()) {
    std::string csv = "position,token,stream";
    for (std::size_t i = 0; i < loaded.config.num_streams; ++i) {
      csv += ",w" + std::to_string(i);
    }
    csv += "\n";
    for (const auto& g : gen.steps) {
      csv += std::to_string(g.position) + "," + std::to_string(g.token) + "," +
             std::to_string(g.stream);
      for (float w : g.weights) csv += "," + format_real(w);
      csv += "\n";
    }
    write_file_atomic(args.attribute, csv);
    manifest.outputs["attribution"] = args.attribute;
  }
  manifest.write(sibling(args.out, ".manifest.json"));
  out << text << "\n";
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ContractError*>(&e)) return kExitContract;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InputError*>(&e) ||
      dynamic_cast<const CheckpointError*>(&e)) {
    return kExitUsage;
  }
  return kExitInternal;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parallel-stream language models: training, scaling-law fits, cost analysis"};
  app.name("parscale");
  app.set_version_flag("--version", PARSCALE_VERSION);
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoint, logs and manifest");
  train->add_option("--config", train_args.config, "key = value config file")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--corpus", train_args.corpus,
                    "Byte corpus; omit to use data.synthetic.* from the config");
  train->add_option("--out", train_args.out, "Output directory")->required();
  train->add_option("--init", train_args.init,
                    "Start from this checkpoint (P = 1 checkpoints get fresh prefixes)");
  train->add_flag("--two-stage", train_args.two_stage,
                  "Train the P = 1 backbone, then inject streams and continue (stage2.* keys)");
  train->add_flag("--freeze-backbone", train_args.freeze_backbone,
                  "Only prefixes and the aggregation head receive updates");

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit-law", "Fit a parallel scaling law to N,P,loss observations");
  fit->add_option("--observations", fit_args.observations, "CSV with header N,P,loss")
      ->required();
  fit->add_option("--family", fit_args.family, "log | theoretical")
      ->check(CLI::IsMember({"log", "logarithmic", "theoretical", "theo"}));
  fit->add_option("--out", fit_args.out, "Fit JSON path")->required();

  CostArgs cost_args;
  auto* cost = app.add_subcommand("analyze-cost", "Memory and latency of parallel vs parameter scaling");
  cost->add_option("--sweep", cost_args.sweep, "key = value sweep file")->required();
  cost->add_option("--out", cost_args.out, "CSV path; JSON goes next to it")->required();

  GenerateArgs gen_args;
  auto* gen = app.add_subcommand("generate", "Greedy decoding from a checkpoint");
  gen->add_option("--checkpoint", gen_args.checkpoint)->required();
  auto* prompt_opt = gen->add_option("--prompt", gen_args.prompt, "Prompt text");
  auto* prompt_file_opt = gen->add_option("--prompt-file", gen_args.prompt_file, "Prompt bytes");
  prompt_opt->excludes(prompt_file_opt);
  gen->add_option("--length", gen_args.length, "Tokens to generate")->required();
  gen->add_option("--out", gen_args.out, "Generated bytes")->required();
  gen->add_option("--attribute", gen_args.attribute,
                  "CSV of position, token, winning stream and weights");

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i >= 1; --i) args.emplace_back(argv[i]);
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << PARSCALE_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "parscale: " << e.what() << "\n";
    for (auto* sub : app.get_subcommands()) {
      err << "run 'parscale " << sub->get_name() << " --help' for usage\n";
    }
    if (app.get_subcommands().empty()) err << "run 'parscale --help' for usage\n";
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(train_args, out);
    if (fit->parsed()) return cmd_fit_law(fit_args, out);
    if (cost->parsed()) return cmd_analyze_cost(cost_args, out);
    if (gen->parsed()) return cmd_generate(gen_args, out);
  } catch (const std::exception& e) {
    err << "parscale: " << e.what() << "\n";
    return exit_code_for(e);
  }
  err << "parscale: no subcommand\n";
  return kExitUsage;
}

}  // namespace parscale::cli
