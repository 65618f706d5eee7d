#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "actta/cli.hpp"
#include "actta/config.hpp"
#include "actta/sweep.hpp"

namespace fs = std::filesystem;

using actta::CorruptionKind;
using actta::ExperimentConfig;
using actta::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("actta_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(ACTTA_BIN) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

ExperimentConfig small_cfg() {
  ExperimentConfig cfg;
  cfg.dataset = {600, 6, 3, 10.0, 1.0, 11};
  cfg.model.hidden_width = 16;
  cfg.model.hidden_blocks = 2;
  cfg.model.init_seed = 3;
  cfg.pretrain.epochs = 15;
  cfg.pretrain.lr = 0.05;
  cfg.pretrain.batch_size = 32;
  cfg.pretrain.seed = 5;
  cfg.adapt.config.batch_size = 32;
  cfg.adapt.config.n_batches = 5;
  cfg.adapt.config.seed = 7;
  cfg.adapt.continual_kinds = {CorruptionKind::kAdditiveGaussian,
                               CorruptionKind::kScale};
  return cfg;
}

}  // namespace

TEST(Config, JsonRoundTripIsExact) {
  ExperimentConfig cfg = small_cfg();
  cfg.model.base = actta::BaseKind::kSigmoidGate;
  cfg.model.base_beta = 1.702;
  cfg.model.granularity = actta::Granularity::kPerElement;
  cfg.model.depth_ratio = 0.34;
  cfg.adapt.config.selection->e0_factor = 0.25;
  cfg.adapt.config.selection->weighting = false;
  cfg.adapt.config.group_lr_multipliers["c"] = 2.5;
  cfg.output_dir = "elsewhere";

  const json j = actta::config_to_json(cfg);
  const ExperimentConfig back = actta::config_from_json(j);
  EXPECT_EQ(actta::config_to_json(back), j);
  EXPECT_EQ(back.model.base, actta::BaseKind::kSigmoidGate);
  EXPECT_DOUBLE_EQ(*back.model.base_beta, 1.702);
  EXPECT_FALSE(back.adapt.config.selection->weighting);
  EXPECT_DOUBLE_EQ(back.adapt.config.group_lr_multipliers.at("c"), 2.5);
  ASSERT_EQ(back.adapt.continual_kinds.size(), 2u);
  EXPECT_EQ(back.adapt.continual_kinds[1], CorruptionKind::kScale);

  // Disabled selection survives the round trip as "enabled": false.
  cfg.adapt.config.selection.reset();
  const json j2 = actta::config_to_json(cfg);
  EXPECT_FALSE(j2.at("adapt").at("selection").at("enabled").get<bool>());
  EXPECT_FALSE(actta::config_from_json(j2).adapt.config.selection.has_value());
}

TEST(Config, DefaultsAreValidAndPartialJsonFillsThem) {
  actta::validate_experiment_config(ExperimentConfig{});
  const ExperimentConfig cfg =
      actta::config_from_json(json::parse(R"({"model": {"hidden_width": 8}})"));
  EXPECT_EQ(cfg.model.hidden_width, 8u);
  EXPECT_EQ(cfg.model.hidden_blocks, 3u);
  EXPECT_EQ(cfg.dataset.n_samples, 6000u);
  EXPECT_TRUE(cfg.adapt.config.selection.has_value());
  EXPECT_EQ(cfg.adapt.continual_kinds.size(), 5u);
}

TEST(Config, ErrorsNameTheOffendingField) {
  auto field_of = [](const json& j) {
    try {
      actta::config_from_json(j);
    } catch (const actta::ValidationError& e) {
      return std::string(e.field());
    }
    return std::string("no error");
  };
  EXPECT_EQ(field_of(json::parse(R"({"modell": {}})")), "config.modell");
  EXPECT_EQ(field_of(json::parse(R"({"model": {"widht": 4}})")),
            "model.widht");
  EXPECT_EQ(field_of(json::parse(R"({"model": {"hidden_width": "big"}})")),
            "model.hidden_width");
  EXPECT_EQ(field_of(json::parse(R"({"dataset": {"dims": 2, "n_classes": 5}})")),
            "dataset.dims");
  EXPECT_EQ(field_of(json::parse(
                R"({"adapt": {"selection": {"e0_factor": 7.0}}})")),
            "adapt.selection.e0_factor");
  EXPECT_EQ(field_of(json::parse(
                R"({"adapt": {"group_lr_multipliers": {"bogus": 2}}})")),
            "adapt.group_lr_multipliers.bogus");
  EXPECT_EQ(field_of(json::parse(
                R"({"adapt": {"group_lr_multipliers": {"c": -1}}})")),
            "adapt.group_lr_multipliers.c");
  EXPECT_EQ(field_of(json::parse(R"({"model": {"base": "sigmoid_gate"}})")),
            "model.base_beta");
  EXPECT_EQ(field_of(json::parse(
                R"({"model": {"base": "relu", "base_beta": -2.0}})")),
            "model.base_beta");
  EXPECT_EQ(field_of(json::parse(R"({"adapt": {"continual_kinds": []}})")),
            "adapt.continual_kinds");
  EXPECT_EQ(field_of(json::parse(R"({"output_dir": ""})")), "output_dir");
  EXPECT_EQ(field_of(json::parse(R"([1, 2])")), "config");
}

TEST(Config, LoadAndSaveFiles) {
  TempDir dir;
  const std::string path = (dir.path / "cfg.json").string();
  ExperimentConfig cfg = small_cfg();
  actta::save_config(cfg, path);
  const ExperimentConfig back = actta::load_config(path);
  EXPECT_EQ(actta::config_to_json(back), actta::config_to_json(cfg));

  EXPECT_THROW(actta::load_config((dir.path / "missing.json").string()),
               actta::IoError);
  const std::string bad = (dir.path / "bad.json").string();
  write_text(bad, "{not json");
  try {
    actta::load_config(bad);
    FAIL() << "expected ValidationError";
  } catch (const actta::ValidationError& e) {
    EXPECT_EQ(e.field(), "config");
  }
}

TEST(Sweep, ExpandGridOrderAndDefaults) {
  actta::MlpSpec spec;
  spec.input_dims = 4;
  spec.n_classes = 3;
  spec.hidden_width = 8;
  spec.hidden_blocks = 1;
  spec.depth_ratio = 0.5;
  actta::Model model = actta::Model::make_mlp(spec);

  actta::AdaptConfig base;
  base.base_lr = 0.002;
  base.batch_size = 48;

  actta::SweepGrid grid;
  grid.base_lrs = {0.001, 0.01};
  grid.selections = {"affine", "actta_star"};
  const auto cells = actta::expand_grid(grid, base, model);
  ASSERT_EQ(cells.size(), 4u);
  // Nested-loop order: lr is the outer axis, selection the inner one.
  EXPECT_DOUBLE_EQ(cells[0].base_lr, 0.001);
  EXPECT_EQ(cells[0].selection, "affine");
  EXPECT_EQ(cells[1].selection, "actta_star");
  EXPECT_DOUBLE_EQ(cells[2].base_lr, 0.01);
  EXPECT_EQ(cells[2].selection, "affine");
  for (size_t i = 0; i < cells.size(); ++i) {
    EXPECT_EQ(cells[i].index, i);
    // Empty axes collapse to the base config and source model values.
    EXPECT_EQ(cells[i].batch_size, 48u);
    EXPECT_DOUBLE_EQ(cells[i].depth_ratio, 0.5);
    EXPECT_EQ(cells[i].granularity, actta::Granularity::kPerChannel);
  }
  EXPECT_EQ(actta::sweep_run_id(cells[1]), "cell1:actta_star");
}

TEST(Sweep, ResolveThreadCount) {
  const char* saved = std::getenv("ACTTA_THREADS");
  const std::string saved_value = saved ? saved : "";

  ::unsetenv("ACTTA_THREADS");
  EXPECT_EQ(actta::resolve_thread_count(3), 3u);
  EXPECT_GE(actta::resolve_thread_count(0), 1u);

  ::setenv("ACTTA_THREADS", "2", 1);
  EXPECT_EQ(actta::resolve_thread_count(0), 2u);
  EXPECT_EQ(actta::resolve_thread_count(5), 5u);  // explicit beats env

  ::setenv("ACTTA_THREADS", "zero", 1);
  EXPECT_THROW(actta::resolve_thread_count(0), actta::ValidationError);
  ::setenv("ACTTA_THREADS", "0", 1);
  EXPECT_THROW(actta::resolve_thread_count(0), actta::ValidationError);
  ::setenv("ACTTA_THREADS", "2x", 1);
  EXPECT_THROW(actta::resolve_thread_count(0), actta::ValidationError);

  if (saved) {
    ::setenv("ACTTA_THREADS", saved_value.c_str(), 1);
  } else {
    ::unsetenv("ACTTA_THREADS");
  }
}

TEST(Sweep, ParallelRunMatchesSerialRun) {
  actta::DatasetSpec dspec{200, 6, 3, 10.0, 1.0, 21};
  const actta::Dataset ds = actta::generate(dspec);
  actta::MlpSpec spec;
  spec.input_dims = 6;
  spec.n_classes = 3;
  spec.hidden_width = 8;
  spec.hidden_blocks = 2;
  spec.init_seed = 9;
  const actta::Model model = actta::Model::make_mlp(spec);

  actta::AdaptConfig base;
  base.batch_size = 20;
  base.n_batches = 3;
  base.selection = std::nullopt;

  actta::SweepGrid grid;
  grid.base_lrs = {1e-3, 1e-2};
  grid.selections = {"affine", "actta_star"};
  actta::CorruptionSpec corr;
  corr.kind = CorruptionKind::kAdditiveGaussian;
  corr.severity = 2;

  const auto serial = actta::run_sweep(model, ds.test, base, grid, corr, 17, 1);
  const auto parallel =
      actta::run_sweep(model, ds.test, base, grid, corr, 17, 4);
  ASSERT_EQ(serial.cells.size(), 4u);
  ASSERT_EQ(parallel.cells.size(), 4u);
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(serial.cells[i].status, "ok");
    EXPECT_EQ(parallel.cells[i].status, "ok");
    EXPECT_EQ(serial.cells[i].mean_target_error,
              parallel.cells[i].mean_target_error)
        << "cell " << i;
    EXPECT_EQ(serial.cells[i].mean_entropy, parallel.cells[i].mean_entropy);
    EXPECT_EQ(serial.cells[i].n_act_params, parallel.cells[i].n_act_params);
  }
  // Width 8, two adaptable layers, per-channel, three activation arrays.
  EXPECT_EQ(serial.cells[0].n_act_params, 0u);  // affine selects none
  EXPECT_EQ(serial.cells[1].n_act_params, 2u * 3u * 8u);
}

TEST(Sweep, FailingCellIsContained) {
  actta::DatasetSpec dspec{100, 6, 3, 10.0, 1.0, 21};
  const actta::Dataset ds = actta::generate(dspec);
  actta::MlpSpec spec;
  spec.input_dims = 6;
  spec.n_classes = 3;
  spec.hidden_width = 8;
  spec.hidden_blocks = 1;
  const actta::Model model = actta::Model::make_mlp(spec);

  actta::AdaptConfig base;
  base.batch_size = 10;
  base.n_batches = 2;
  base.selection = std::nullopt;

  actta::SweepGrid grid;
  grid.selections = {"actta_star", "affine"};
  grid.depth_ratios = {0.0};  // no adaptable activation layers
  actta::CorruptionSpec corr;
  corr.kind = CorruptionKind::kScale;
  corr.severity = 1;

  const auto result = actta::run_sweep(model, ds.test, base, grid, corr, 1, 1);
  ASSERT_EQ(result.cells.size(), 2u);
  EXPECT_EQ(result.cells[0].status.rfind("error: ", 0), 0u)
      << result.cells[0].status;
  EXPECT_EQ(result.cells[1].status, "ok");
}

TEST(Sweep, SummaryCsvKeepsElevenFields) {
  actta::SweepResult result;
  actta::SweepCellResult cell;
  cell.cell.index = 2;
  cell.cell.base_lr = 0.01;
  cell.cell.batch_size = 32;
  cell.cell.selection = "actta";
  cell.cell.depth_ratio = 0.5;
  cell.cell.granularity = actta::Granularity::kPerLayer;
  cell.n_act_params = 6;
  cell.mean_target_error = 0.125;
  cell.mean_entropy = 0.5;
  cell.status = "error: rows 3, cols 4";  // commas must not add fields
  result.cells.push_back(cell);

  std::ostringstream os;
  actta::write_sweep_summary_csv(result, os);
  std::istringstream is(os.str());
  std::string line;
  ASSERT_TRUE(std::getline(is, line));
  EXPECT_EQ(line, actta::kSweepCsvHeader);
  EXPECT_EQ(actta::split_csv_line(line).size(), 11u);
  ASSERT_TRUE(std::getline(is, line));
  const auto row = actta::split_csv_line(line);
  ASSERT_EQ(row.size(), 11u);
  EXPECT_EQ(row[0], "2");
  EXPECT_EQ(row[1], "cell2:actta");
  EXPECT_EQ(row[4], "actta");
  EXPECT_EQ(row[6], "layer");
  EXPECT_EQ(row[10], "error: rows 3; cols 4");
}

TEST(Cli, ParseGroupsFlagAndLabel) {
  EXPECT_EQ(actta::cli::parse_groups_flag("affine").groups,
            actta::selection_preset("affine").groups);
  const auto custom = actta::cli::parse_groups_flag("custom=lambda_pos,c");
  EXPECT_EQ(custom.groups,
            (std::set<std::string>{"lambda_pos", "c"}));
  EXPECT_EQ(actta::cli::groups_label("custom=lambda_pos,c"),
            "custom[lambda_pos+c]");
  EXPECT_EQ(actta::cli::groups_label("actta_star"), "actta_star");
  EXPECT_THROW(actta::cli::parse_groups_flag("custom="),
               actta::ValidationError);
  EXPECT_THROW(actta::cli::parse_groups_flag("custom=bogus"),
               actta::ValidationError);
  EXPECT_THROW(actta::cli::parse_groups_flag("nonsense"),
               actta::ValidationError);
}

TEST(Cli, MethodOfRunId) {
  EXPECT_EQ(actta::cli::method_of_run_id("affine:3"), "affine");
  EXPECT_EQ(actta::cli::method_of_run_id("custom[lambda_pos+c]:12"),
            "custom[lambda_pos+c]");
  EXPECT_EQ(actta::cli::method_of_run_id("plain"), "plain");
}

TEST(Cli, ReadMetricsCsvRejectsMalformedFiles) {
  TempDir dir;
  const auto p = [&](const char* name) {
    return (dir.path / name).string();
  };
  EXPECT_THROW(actta::cli::read_metrics_csv(p("missing.csv")),
               actta::IoError);

  write_text(p("empty.csv"), "");
  try {
    actta::cli::read_metrics_csv(p("empty.csv"));
    FAIL() << "expected FormatError";
  } catch (const actta::FormatError& e) {
    EXPECT_EQ(e.kind(), actta::FormatError::Kind::kTruncated);
  }

  write_text(p("header.csv"), "run,id\n");
  try {
    actta::cli::read_metrics_csv(p("header.csv"));
    FAIL() << "expected FormatError";
  } catch (const actta::FormatError& e) {
    EXPECT_EQ(e.kind(), actta::FormatError::Kind::kBadHeader);
  }

  write_text(p("short.csv"),
             std::string(actta::kMetricsCsvHeader) + "\na,b,c\n");
  try {
    actta::cli::read_metrics_csv(p("short.csv"));
    FAIL() << "expected FormatError";
  } catch (const actta::FormatError& e) {
    EXPECT_EQ(e.kind(), actta::FormatError::Kind::kInconsistent);
  }
}

TEST(Cli, ReportAggregatesRunsByMethod) {
  TempDir dir;
  auto make_run = [](const std::string& run_id, double err0, double err1,
                     std::optional<double> final_source) {
    actta::RunMetrics rm;
    rm.run_id = run_id;
    for (int b = 0; b < 2; ++b) {
      actta::StepMetrics s;
      s.batch_index = static_cast<size_t>(b);
      s.schedule_kind = "episodic";
      s.corruption_kind = "scale";
      s.severity = 3;
      s.target_error = b == 0 ? err0 : err1;
      s.mean_entropy = 0.5;
      s.selected_fraction = 1.0;
      s.pass_through_ratio = 1.0;
      s.status = "ok";
      if (b == 1) s.source_error = final_source;
      rm.steps.push_back(s);
    }
    return rm;
  };
  const std::string csv1 = (dir.path / "m1.csv").string();
  const std::string csv2 = (dir.path / "m2.csv").string();
  actta::write_metrics_csv(
      {make_run("affine:0", 0.5, 0.25, 0.125), make_run("actta:0", 0.25, 0.0,
                                                        std::nullopt)},
      csv1);
  actta::write_metrics_csv({make_run("affine:1", 0.25, 0.0, 0.25)}, csv2);

  std::ostringstream report;
  actta::cli::cmd_report({csv1, csv2}, report);
  const std::string text = report.str();
  // Per-run means: affine 0.375 and 0.125 -> mean 0.25; actta 0.125.
  EXPECT_NE(text.find("| affine | 0.25 +/-"), std::string::npos) << text;
  EXPECT_NE(text.find("| actta | 0.125 +/-"), std::string::npos) << text;
  EXPECT_NE(text.find("scale"), std::string::npos);
  // Final source errors: affine probed twice, mean 0.1875.
  EXPECT_NE(text.find("| affine | 0.1875 +/-"), std::string::npos) << text;
}

class CliPipeline : public ::testing::Test {
 protected:
  static TempDir* dir_;

  static std::string cfg_path() { return (dir_->path / "cfg.json").string(); }
  static std::string data_dir() { return (dir_->path / "data").string(); }
  static std::string model_dir() { return (dir_->path / "model").string(); }

  static void SetUpTestSuite() {
    dir_ = new TempDir();
    ExperimentConfig cfg = small_cfg();
    cfg.output_dir = (dir_->path / "out").string();
    actta::save_config(cfg, cfg_path());
    std::ostringstream log;
    actta::cli::cmd_gen_data(cfg, data_dir(), /*also_csv=*/true, log);
    actta::cli::cmd_pretrain(cfg, data_dir(), model_dir(), log);
  }

  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
};

TempDir* CliPipeline::dir_ = nullptr;

TEST_F(CliPipeline, GenDataWritesBinariesCsvAndManifest) {
  const auto train = actta::load_batch(data_dir() + "/train.acds");
  const auto test = actta::load_batch(data_dir() + "/test.acds");
  EXPECT_EQ(train.size(), 480u);
  EXPECT_EQ(test.size(), 120u);
  EXPECT_EQ(train.dims(), 6u);

  const auto train_csv = actta::load_batch_csv(data_dir() + "/train.csv");
  EXPECT_EQ(train_csv.x.values(), train.x.values());
  EXPECT_EQ(train_csv.y, train.y);

  std::ifstream ms(data_dir() + "/manifest.json");
  ASSERT_TRUE(ms.good());
  json manifest;
  ms >> manifest;
  EXPECT_EQ(manifest.at("command"), "gen-data");
  EXPECT_EQ(manifest.at("counts").at("train").get<size_t>(), 480u);
  EXPECT_EQ(manifest.at("files").at("train_csv"), "train.csv");
}

TEST_F(CliPipeline, PretrainReachesLowSourceError) {
  std::ifstream ms(model_dir() + "/manifest.json");
  ASSERT_TRUE(ms.good());
  json manifest;
  ms >> manifest;
  const double source_error = manifest.at("source_test_error").get<double>();
  // Classes sit 10 noise sigmas apart, so the source task is easy.
  EXPECT_LE(source_error, 0.03) << "pretraining underperformed";

  actta::Model model = actta::load_checkpoint(model_dir() + "/model.acta");
  const auto test = actta::load_batch(data_dir() + "/test.acds");
  EXPECT_DOUBLE_EQ(actta::eval_error(model, test), source_error);
}

TEST_F(CliPipeline, AdaptEpisodicProducesMetricsAndCheckpoint) {
  ExperimentConfig cfg = actta::load_config(cfg_path());
  actta::cli::AdaptOptions opts;
  opts.checkpoint = model_dir() + "/model.acta";
  opts.data_dir = data_dir();
  opts.out_dir = (dir_->path / "adapt_ep").string();
  opts.corruption = CorruptionKind::kAdditiveGaussian;
  opts.severity = 3;
  opts.groups = "actta_star";
  std::ostringstream log;
  actta::cli::cmd_adapt(cfg, opts, log);

  const auto rows = actta::cli::read_metrics_csv(opts.out_dir + "/metrics.csv");
  ASSERT_EQ(rows.size(), 5u);
  for (size_t b = 0; b < rows.size(); ++b) {
    EXPECT_EQ(rows[b].run_id, "actta_star:7");
    EXPECT_EQ(rows[b].schedule_kind, "episodic");
    EXPECT_EQ(rows[b].corruption_kind, "additive_gaussian");
    EXPECT_EQ(rows[b].severity, 3);
    EXPECT_EQ(rows[b].batch_index, b);
    EXPECT_FALSE(rows[b].source_error.has_value());
  }
  EXPECT_TRUE(fs::exists(opts.out_dir + "/summary.txt"));
  const actta::Model adapted =
      actta::load_checkpoint(opts.out_dir + "/adapted.acta");
  EXPECT_EQ(adapted.signature(),
            actta::load_checkpoint(opts.checkpoint).signature());
}

TEST_F(CliPipeline, AdaptContinualProbesSourcePerSegment) {
  ExperimentConfig cfg = actta::load_config(cfg_path());
  actta::cli::AdaptOptions opts;
  opts.checkpoint = model_dir() + "/model.acta";
  opts.data_dir = data_dir();
  opts.out_dir = (dir_->path / "adapt_ct").string();
  opts.schedule = "continual";
  opts.severity = 2;
  opts.groups = "affine";
  std::ostringstream log;
  actta::cli::cmd_adapt(cfg, opts, log);

  // Two segments of five batches each, source probed at each segment end.
  const auto rows = actta::cli::read_metrics_csv(opts.out_dir + "/metrics.csv");
  ASSERT_EQ(rows.size(), 10u);
  for (size_t b = 0; b < rows.size(); ++b) {
    EXPECT_EQ(rows[b].schedule_kind, "continual");
    EXPECT_EQ(rows[b].source_error.has_value(), b == 4 || b == 9)
        << "row " << b;
  }
  EXPECT_EQ(rows[0].corruption_kind, "additive_gaussian");
  EXPECT_EQ(rows[5].corruption_kind, "scale");

  std::ifstream summary(opts.out_dir + "/summary.txt");
  std::stringstream buf;
  buf << summary.rdbuf();
  EXPECT_NE(buf.str().find("segment"), std::string::npos);
  EXPECT_NE(buf.str().find("scale"), std::string::npos);
}

TEST_F(CliPipeline, BinaryRunsFullFlow) {
  const std::string out = (dir_->path / "cli_out").string();
  EXPECT_EQ(run_cli("--config " + cfg_path() + " adapt --checkpoint " +
                    model_dir() + "/model.acta --data " + data_dir() +
                    " --out " + out +
                    " --corruption mean_shift --severity 4 --groups actta" +
                    " --granularity layer --seed 2"),
            0);
  const auto rows = actta::cli::read_metrics_csv(out + "/metrics.csv");
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0].run_id, "actta:2");
  EXPECT_EQ(rows[0].corruption_kind, "mean_shift");

  const std::string grid = (dir_->path / "grid.json").string();
  write_text(grid,
             R"({"base_lrs": [0.001], "selections": ["affine", "actta"]})");
  const std::string sweep_out = (dir_->path / "sweep_out").string();
  EXPECT_EQ(run_cli("--config " + cfg_path() + " sweep --checkpoint " +
                    model_dir() + "/model.acta --data " + data_dir() +
                    " --grid " + grid + " --out " + sweep_out +
                    " --severity 2 --threads 2"),
            0);
  std::ifstream ss(sweep_out + "/sweep_summary.csv");
  std::string line;
  ASSERT_TRUE(std::getline(ss, line));
  EXPECT_EQ(line, actta::kSweepCsvHeader);
  size_t cell_rows = 0;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    EXPECT_EQ(actta::split_csv_line(line).size(), 11u);
    ++cell_rows;
  }
  EXPECT_EQ(cell_rows, 2u);

  const std::string report = (dir_->path / "report.md").string();
  EXPECT_EQ(run_cli("report " + out + "/metrics.csv " + sweep_out +
                    "/sweep_metrics.csv --out " + report),
            0);
  std::ifstream rp(report);
  std::stringstream buf;
  buf << rp.rdbuf();
  EXPECT_NE(buf.str().find("# Adaptation report"), std::string::npos);
  EXPECT_NE(buf.str().find("mean_shift"), std::string::npos);
}

TEST_F(CliPipeline, ExitCodesSeparateValidationFromRuntime) {
  EXPECT_EQ(run_cli(""), 1);                     // missing subcommand
  EXPECT_EQ(run_cli("adapt"), 1);                // missing required flags
  EXPECT_EQ(run_cli("--config " + cfg_path() + " adapt --checkpoint " +
                    model_dir() + "/model.acta --data " + data_dir() +
                    " --schedule sometimes"),
            1);
  EXPECT_EQ(run_cli("--config " + cfg_path() + " adapt --checkpoint " +
                    model_dir() + "/model.acta --data " + data_dir() +
                    " --corruption fog"),
            1);
  EXPECT_EQ(run_cli("--config " + cfg_path() + " adapt --checkpoint " +
                    (dir_->path / "nope.acta").string() + " --data " +
                    data_dir() + " --out " + (dir_->path / "x").string() +
                    " --corruption scale"),
            2);
  EXPECT_EQ(run_cli("report " + (dir_->path / "nope.csv").string()), 2);

  const std::string bad_cfg = (dir_->path / "bad_cfg.json").string();
  write_text(bad_cfg, R"({"model": {"hidden_width": 1}})");
  EXPECT_EQ(run_cli("--config " + bad_cfg + " gen-data --out " +
                    (dir_->path / "g").string()),
            1);
}
