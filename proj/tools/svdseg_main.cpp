// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line workflow: generate data, pretrain on the source domain, adapt
// with a PEFT method on the target domain, evaluate, run the component
// ablation, and emit report tables/charts.

#include <CLI11.hpp>

#include <iostream>

#include "svdseg/report.hpp"
#include "svdseg/train.hpp"

namespace {

using namespace svdseg;

// Flags shared by the training-style subcommands. Every flag mirrors a
// config-file key; flags override file values.
struct CommonArgs {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> overrides;
};

void add_override_flag(CLI::App* cmd, CommonArgs& args, const std::string& key,
                       const std::string& help) {
  cmd->add_option_function<std::string>(
      "--" + key, [&args, key](const std::string& v) { args.overrides.emplace_back(key, v); },
      help);
}

void add_common_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_file, "key = value config file");
  for (const char* key :
       {"image_size", "patch", "dim", "heads", "blocks", "mlp_hidden", "text_dim", "dec_layers",
        "dec_mlp", "adapt_out_proj", "method", "lora_rank", "toggle_pos_embed", "toggle_layernorm",
        "toggle_tal", "toggle_scale", "toggle_shift", "lr", "pretrain_lr", "steps",
        "pretrain_steps", "batch", "warmup", "clip_norm", "train_images", "eval_images",
        "data_seed", "target_invert", "target_noise", "target_grad", "target_deform", "data_dir",
        "seed", "seeds", "out", "run_name", "pretrained"}) {
    add_override_flag(cmd, args, key, "config key " + std::string(key));
  }
}

RunConfig resolve(const CommonArgs& args, const std::string& command) {
  std::optional<std::filesystem::path> file;
  if (!args.config_file.empty()) file = args.config_file;
  RunConfig cfg = parse_run_config(file, args.overrides);
  check_config_for_command(cfg, command);
  return cfg;
}

void print_eval(const DiceResult& r) {
  for (const auto& [cls, dsc] : r.per_class) {
    std::cout << "  " << cls << ": " << dsc << "\n";
  }
  std::cout << "  Avg.: " << r.average << "\n";
  std::cout << "  blank queries: " << r.blank_cases << ", blank DSC " << r.blank_dsc_average
            << ", blank fg fraction " << r.blank_fg_fraction << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SVD-adapted promptable segmentation workbench"};
  app.require_subcommand(1);

  CommonArgs args;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset on disk");
  std::string gen_out = "dataset";
  std::string gen_domain = "source";
  int gen_n = 32;
  std::uint64_t gen_seed = 9000;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--domain", gen_domain, "source|target");
  gen->add_option("--n", gen_n, "number of images");
  gen->add_option("--seed", gen_seed, "corpus seed");

  auto* pre = app.add_subcommand("pretrain", "train the full toy model on the source domain");
  add_common_flags(pre, args);

  auto* adapt = app.add_subcommand("adapt", "adapt a pretrained checkpoint on the target domain");
  add_common_flags(adapt, args);

  auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint");
  add_common_flags(eval, args);
  std::string eval_ckpt;
  std::string eval_domain = "target";
  eval->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate")->required();
  eval->add_option("--domain", eval_domain, "source|target");

  auto* abl = app.add_subcommand("ablation", "run the 7-row component ablation");
  add_common_flags(abl, args);

  auto* rep = app.add_subcommand("report", "emit tables and charts for completed runs");
  std::vector<std::string> rep_runs;
  std::string rep_out = "report";
  rep->add_option("--runs", rep_runs, "run directories")->required()->expected(-1);
  rep->add_option("--out", rep_out, "report output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      GenSpec spec = gen_domain == "target" ? GenSpec::target_default()
                     : gen_domain == "source"
                         ? GenSpec::source_default()
                         : throw ConfigError("gen-data: domain must be source|target");
      Dataset ds = generate(spec, gen_n, gen_seed);
      write_dataset(ds, gen_out);
      std::cout << "wrote " << ds.samples.size() << " samples (" << gen_n << " images) to "
                << gen_out << "\n";
    } else if (pre->parsed()) {
      RunConfig cfg = resolve(args, "pretrain");
      PretrainOutcome out = run_pretrain(cfg);
      std::cout << "pretrain done, final loss " << out.final_loss << "\n";
      std::cout << "checkpoint: " << out.checkpoint.string() << "\n";
      std::cout << "source eval:\n";
      print_eval(out.source_eval);
      if (out.source_eval.average < 0.85) {
        std::cout << "warning: source DSC below the 0.85 gate for downstream experiments\n";
      }
    } else if (adapt->parsed()) {
      RunConfig cfg = resolve(args, "adapt");
      AdaptOutcome out = run_adapt(cfg);
      std::cout << "adapt (" << method_name(cfg.method) << ") done\n";
      std::cout << "checkpoint: " << out.checkpoint.string() << "\n";
      std::cout << out.params.to_text();
      if (!out.audit_violations.empty()) {
        std::cerr << "frozen-bitwise audit FAILED for:";
        for (const std::string& name : out.audit_violations) std::cerr << " " << name;
        std::cerr << "\n";
        return 4;
      }
      std::cout << "frozen-bitwise audit passed\n";
      std::cout << "target eval:\n";
      print_eval(out.target_eval);
    } else if (eval->parsed()) {
      RunConfig cfg = resolve(args, "evaluate");
      const Domain domain = eval_domain == "source"   ? Domain::kSource
                            : eval_domain == "target" ? Domain::kTarget
                                                      : throw ConfigError(
                                                            "evaluate: domain must be source|target");
      DiceResult r = evaluate_checkpoint(cfg, eval_ckpt, domain);
      std::cout << "eval (" << eval_domain << "):\n";
      print_eval(r);
    } else if (abl->parsed()) {
      RunConfig cfg = resolve(args, "ablation");
      std::vector<AblationRow> rows = run_ablation(cfg);
      std::cout << "component ablation (mean over " << cfg.seeds.size() << " seeds):\n";
      for (const AblationRow& row : rows) {
        std::cout << "  " << row.name << ": " << row.mean_dsc << "\n";
      }
    } else if (rep->parsed()) {
      std::vector<std::filesystem::path> dirs(rep_runs.begin(), rep_runs.end());
      emit_report(dirs, rep_out);
      std::cout << "report written to " << rep_out << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const TrainError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
