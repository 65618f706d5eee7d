#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "actta/cli.hpp"
#include "actta/config.hpp"
#include "actta/errors.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

actta::ExperimentConfig load_config_or_default(const std::string& path) {
  if (path.empty()) {
    actta::ExperimentConfig cfg;
    actta::validate_experiment_config(cfg);
    return cfg;
  }
  return actta::load_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test-time adaptation with reparameterized activations"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "Experiment config JSON")
      ->envname("ACTTA_CONFIG");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  std::string gen_out;
  bool gen_csv = false;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_flag("--csv", gen_csv, "Also write CSV copies");
  gen->add_option("--seed", gen_seed, "Override dataset seed");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Train the source model");
  std::string pre_data, pre_out;
  std::optional<std::uint64_t> pre_seed;
  pre->add_option("--data", pre_data, "Directory with train/test .acds files");
  pre->add_option("--out", pre_out, "Output directory");
  pre->add_option("--seed", pre_seed, "Override pretraining seed");

  // adapt
  auto* ad = app.add_subcommand("adapt", "Run online test-time adaptation");
  actta::cli::AdaptOptions aopts;
  std::string ad_corruption;
  std::string ad_granularity;
  std::optional<double> ad_depth_ratio;
  std::optional<double> ad_lr;
  std::optional<std::size_t> ad_batch;
  std::optional<std::uint64_t> ad_seed;
  ad->add_option("--checkpoint", aopts.checkpoint, "Source checkpoint")
      ->required();
  ad->add_option("--data", aopts.data_dir, "Dataset directory")->required();
  ad->add_option("--out", aopts.out_dir, "Output directory");
  ad->add_option("--schedule", aopts.schedule,
                 "Schedule: episodic or continual");
  ad->add_option("--corruption", ad_corruption,
                 "Corruption kind for episodic runs");
  ad->add_option("--severity", aopts.severity, "Corruption severity 1..5");
  ad->add_option("--groups", aopts.groups,
                 "Parameter groups: affine, actta, actta_star, or "
                 "custom=<g1,g2,...>");
  ad->add_option("--granularity", ad_granularity,
                 "Re-granularize activations: layer, channel, or element");
  ad->add_option("--depth-ratio", ad_depth_ratio,
                 "Fraction of activation layers to adapt, from the input");
  ad->add_option("--lr", ad_lr, "Override base learning rate");
  ad->add_option("--batch-size", ad_batch, "Override adaptation batch size");
  ad->add_option("--seed", ad_seed, "Override adaptation seed");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Grid sweep of adaptation settings");
  actta::cli::SweepOptions sopts;
  std::string sw_corruption = "additive_gaussian";
  std::optional<std::uint64_t> sw_seed;
  sw->add_option("--checkpoint", sopts.checkpoint, "Source checkpoint")
      ->required();
  sw->add_option("--data", sopts.data_dir, "Dataset directory")->required();
  sw->add_option("--grid", sopts.grid_path, "Grid JSON file")->required();
  sw->add_option("--out", sopts.out_dir, "Output directory");
  sw->add_option("--corruption", sw_corruption, "Corruption kind");
  sw->add_option("--severity", sopts.severity, "Corruption severity 1..5");
  sw->add_option("--seed", sw_seed, "Override sweep seed");
  sw->add_option("--threads", sopts.threads,
                 "Worker threads (0 = ACTTA_THREADS or hardware)");

  // report
  auto* rep = app.add_subcommand("report", "Aggregate metrics CSV files");
  std::vector<std::string> rep_inputs;
  std::string rep_out;
  rep->add_option("inputs", rep_inputs, "metrics.csv files")->required();
  rep->add_option("--out", rep_out, "Output file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (gen->parsed()) {
      auto cfg = load_config_or_default(config_path);
      if (gen_seed) cfg.dataset.seed = *gen_seed;
      const std::string out = gen_out.empty() ? cfg.output_dir : gen_out;
      actta::cli::cmd_gen_data(cfg, out, gen_csv, std::cout);
    } else if (pre->parsed()) {
      auto cfg = load_config_or_default(config_path);
      if (pre_seed) cfg.pretrain.seed = *pre_seed;
      const std::string data = pre_data.empty() ? cfg.output_dir : pre_data;
      const std::string out = pre_out.empty() ? cfg.output_dir : pre_out;
      actta::cli::cmd_pretrain(cfg, data, out, std::cout);
    } else if (ad->parsed()) {
      auto cfg = load_config_or_default(config_path);
      if (!ad_corruption.empty()) {
        aopts.corruption = actta::parse_corruption_kind(ad_corruption);
      }
      if (!ad_granularity.empty()) {
        aopts.granularity = actta::parse_granularity(ad_granularity);
      }
      aopts.depth_ratio = ad_depth_ratio;
      aopts.lr = ad_lr;
      aopts.batch_size = ad_batch;
      aopts.seed = ad_seed;
      if (aopts.out_dir.empty()) aopts.out_dir = cfg.output_dir;
      actta::cli::cmd_adapt(cfg, aopts, std::cout);
    } else if (sw->parsed()) {
      auto cfg = load_config_or_default(config_path);
      sopts.corruption = actta::parse_corruption_kind(sw_corruption);
      sopts.seed = sw_seed;
      if (sopts.out_dir.empty()) sopts.out_dir = cfg.output_dir;
      actta::cli::cmd_sweep(cfg, sopts, std::cout);
    } else if (rep->parsed()) {
      actta::cli::cmd_report_to_file(rep_inputs, rep_out, std::cout);
    }
  } catch (const actta::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const actta::ContractError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
