#include "sparsearch/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "sparsearch/budget.hpp"
#include "sparsearch/checkpoint.hpp"
#include "sparsearch/config.hpp"
#include "sparsearch/descriptor.hpp"
#include "sparsearch/pipeline.hpp"

namespace sparsearch {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string precision;
  bool deterministic = false;
  std::string descriptor_path;
  std::string checkpoint_path;
};

// Config problems map to exit code 2.
struct UsageFailure {
  std::string message;
};

const char* kPretrainCkpt = "pretrain.ckpt.json";
const char* kSearchCkpt = "search.ckpt.json";
const char* kModelCkpt = "model.ckpt.json";
const char* kDescriptor = "architecture.json";
const char* kDot = "architecture.dot";
const char* kMetrics = "metrics.csv";
const char* kResult = "result.json";

ExperimentConfig load_experiment(const Options& opt) {
  ExperimentConfig cfg;
  try {
    if (!opt.config_path.empty()) cfg = load_config(opt.config_path);
    if (opt.seed) {
      cfg.seed = *opt.seed;
      cfg.pipeline.schedule.seed = *opt.seed;
    }
    if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
    if (!opt.precision.empty()) {
      cfg.pipeline.precision = opt.precision == "f32" ? Precision::F32 : Precision::F64;
    }
    if (opt.deterministic) cfg.deterministic = true;
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageFailure{"invalid config: " + std::string(e.what())};
  } catch (const ParseError& e) {
    throw UsageFailure{"invalid config: JSON syntax error at byte " + std::to_string(e.position()) +
                       ": " + e.what()};
  } catch (const std::runtime_error& e) {
    throw UsageFailure{e.what()};
  }
  return cfg;
}

fs::path out_dir_of(const Options& opt, const ExperimentConfig* cfg) {
  if (!opt.out_dir.empty()) return opt.out_dir;
  if (cfg) return cfg->out_dir;
  return "out";
}

void apply_runtime(const ExperimentConfig& cfg, std::ostream& err) {
  int threads = cfg.threads;
  if (const char* env = std::getenv("SPARSEARCH_THREADS")) {
    try {
      threads = std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      err << "warning: ignoring SPARSEARCH_THREADS='" << env << "'\n";
    }
  }
  if (cfg.deterministic) threads = 1;
  set_num_threads(threads);
}

// Per-epoch sink: appends to the CSV and prints a progress line.
MetricsSink make_sink(MetricsCsv& csv, std::ostream& err) {
  return [&csv, &err](const EpochMetrics& m) {
    csv.append(m);
    err << m.stage << " epoch " << m.epoch << "  loss " << std::fixed << std::setprecision(4) << m.loss
        << "  acc " << m.accuracy << "  edges " << m.active_edges << std::defaultfloat << "\n";
  };
}

int run_pretrain(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& err) {
  apply_runtime(cfg, err);
  LoadedData data = load_data(cfg.dataset);
  const DataSplit split =
      split_dataset(data.train.labels, data.train.num_classes, cfg.pipeline.split_ratio, cfg.seed);
  SearchState state(cfg.pipeline, cfg.seed);
  fs::create_directories(dir);
  fs::remove(dir / kMetrics);
  MetricsCsv csv(dir / kMetrics, cfg.pipeline.network.block_count());
  if (cfg.pipeline.pretrain) {
    pretrain(state, data.train, split.weight_set, cfg.pipeline.schedule.pretrain_epochs, cfg.pipeline,
             make_sink(csv, err));
  }
  write_file_atomic(dir / kPretrainCkpt,
                    serialize_search_checkpoint(cfg, "pretrain", data.normalization, state));
  err << "wrote " << (dir / kPretrainCkpt).string() << "\n";
  return 0;
}

int run_search(const fs::path& dir, std::ostream& err) {
  SearchCheckpoint ck = parse_search_checkpoint(read_text_file(dir / kPretrainCkpt));
  const ExperimentConfig& cfg = ck.config;
  apply_runtime(cfg, err);
  LoadedData data = load_data(cfg.dataset, &ck.normalization);
  const DataSplit split =
      split_dataset(data.train.labels, data.train.num_classes, cfg.pipeline.split_ratio, cfg.seed);
  MetricsCsv csv(dir / kMetrics, cfg.pipeline.network.block_count());
  csv.load_existing();
  const SearchResult r = search(ck.state, data.train, split, cfg.pipeline, make_sink(csv, err));
  if (r.degenerate) {
    err << "warning: every block was pruned to identity; the architecture is degenerate\n";
  }
  err << "search finished after " << r.epochs << " epochs"
      << (r.early_stopped ? " (early stop)" : "") << ", " << r.active_edges << " active edges\n";
  write_file_atomic(dir / kSearchCkpt,
                    serialize_search_checkpoint(cfg, "search", ck.normalization, ck.state));
  err << "wrote " << (dir / kSearchCkpt).string() << "\n";
  return 0;
}

int run_finalize(const fs::path& dir, std::ostream& out, std::ostream& err) {
  SearchCheckpoint ck = parse_search_checkpoint(read_text_file(dir / kSearchCkpt));
  const ExperimentConfig& cfg = ck.config;
  const auto& graphs = ck.state.network.graphs();
  const std::int64_t target = cfg.pipeline.target_flops > 0
                                  ? cfg.pipeline.target_flops
                                  : flops_of_network(cfg.pipeline.network, graphs);
  const FinalizeResult r = finalize(cfg.pipeline.network, graphs, target,
                                    config_fingerprint(serialize_config(cfg)), cfg.seed);
  write_file_atomic(dir / kDescriptor, serialize_descriptor(r.descriptor));
  out << "width_multiplier " << r.width_multiplier << "\nflops " << r.flops << "\nactive_edges "
      << r.descriptor.active_edges() << "\n";
  err << "wrote " << (dir / kDescriptor).string() << "\n";
  return 0;
}

int run_retrain(const ExperimentConfig& cfg, const fs::path& dir, const fs::path& descriptor_path,
                std::ostream& out, std::ostream& err) {
  apply_runtime(cfg, err);
  const ArchitectureDescriptor desc = deserialize_descriptor(read_text_file(descriptor_path));
  LoadedData data = load_data(cfg.dataset);
  MetricsCsv csv(dir / kMetrics, desc.network.block_count());
  csv.load_existing();
  PipelineConfig pc = cfg.pipeline;
  pc.network = desc.network;
  RetrainResult r = retrain(desc, data.train, data.test, pc.retrain_epochs, pc, cfg.seed,
                            make_sink(csv, err));
  write_file_atomic(dir / kModelCkpt,
                    serialize_model_checkpoint(cfg, desc, data.normalization, cfg.seed, r.network));
  std::ostringstream res;
  res << std::setprecision(17) << "{\n  \"test_accuracy\": " << r.test_accuracy
      << ",\n  \"train_loss\": " << r.train_loss << "\n}\n";
  write_file_atomic(dir / kResult, res.str());
  out << "test_accuracy " << std::setprecision(17) << r.test_accuracy << "\n";
  return 0;
}

int run_eval(const fs::path& checkpoint, std::ostream& out, std::ostream& err) {
  ModelCheckpoint ck = parse_model_checkpoint(read_text_file(checkpoint));
  apply_runtime(ck.config, err);
  LoadedData data = load_data(ck.config.dataset, &ck.normalization);
  const EvalResult r = evaluate(ck.network, data.test.read(),
                                static_cast<std::size_t>(ck.config.pipeline.schedule.batch_size),
                                ck.config.pipeline.precision);
  out << std::setprecision(17) << "test_accuracy " << r.accuracy << "\ntest_loss " << r.loss << "\n";
  return 0;
}

int run_export_dot(const fs::path& descriptor_path, const fs::path& dir, std::ostream& err) {
  const ArchitectureDescriptor desc = deserialize_descriptor(read_text_file(descriptor_path));
  write_file_atomic(dir / kDot, to_dot(desc));
  err << "wrote " << (dir / kDot).string() << "\n";
  return 0;
}

int run_costs(const ExperimentConfig& cfg, std::ostream& out) {
  out << "kind,C_in,C_out,H,W,flops,mac\n";
  for (const auto& row : cost_table(cfg.pipeline.network)) {
    out << op_kind_name(row.kind) << ',' << row.c_in << ',' << row.c_out << ',' << row.h << ','
        << row.w << ',' << row.flops << ',' << row.mac << "\n";
  }
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Differentiable architecture search by sparse optimization", "sparsearch"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Options opt;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for initialization, splits and batches");
  app.add_option("--config", opt.config_path, "Experiment config (JSON)");
  app.add_option("--out", opt.out_dir, "Output directory");
  app.add_option("--precision", opt.precision, "Arithmetic precision")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_flag("--deterministic", opt.deterministic, "Single-threaded, fixed-order execution");
  app.add_option("--descriptor", opt.descriptor_path, "Architecture descriptor to read");
  app.add_option("--checkpoint", opt.checkpoint_path, "Model checkpoint to read (eval)");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"pretrain", "Train the complete network's weights with lambda fixed"},
      {"search", "Jointly optimize weights and lambda with periodic pruning"},
      {"finalize", "Fit the width multiplier to the FLOPs target and write the descriptor"},
      {"retrain", "Train the found architecture from scratch and report test accuracy"},
      {"eval", "Evaluate a retrained model checkpoint on the test split"},
      {"export-dot", "Write the descriptor as a Graphviz DOT file"},
      {"costs", "Print the FLOPs / MAC cost table of the configured network as CSV"},
      {"run-all", "Run every stage in order"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  if (seed_opt->count() > 0) opt.seed = seed;
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    if (cmd == "costs") return run_costs(load_experiment(opt), out);
    if (cmd == "pretrain") {
      const ExperimentConfig cfg = load_experiment(opt);
      return run_pretrain(cfg, out_dir_of(opt, &cfg), err);
    }
    if (cmd == "run-all") {
      const ExperimentConfig cfg = load_experiment(opt);
      const fs::path dir = out_dir_of(opt, &cfg);
      run_pretrain(cfg, dir, err);
      run_search(dir, err);
      run_finalize(dir, out, err);
      run_retrain(cfg, dir, dir / kDescriptor, out, err);
      run_export_dot(dir / kDescriptor, dir, err);
      return 0;
    }

    std::optional<ExperimentConfig> given;
    if (!opt.config_path.empty()) given = load_experiment(opt);
    const fs::path dir = out_dir_of(opt, given ? &*given : nullptr);
    const fs::path descriptor = opt.descriptor_path.empty() ? dir / kDescriptor : fs::path(opt.descriptor_path);
    if (cmd == "search") return run_search(dir, err);
    if (cmd == "finalize") return run_finalize(dir, out, err);
    if (cmd == "export-dot") return run_export_dot(descriptor, dir, err);
    if (cmd == "eval") {
      return run_eval(opt.checkpoint_path.empty() ? dir / kModelCkpt : fs::path(opt.checkpoint_path),
                      out, err);
    }
    if (cmd == "retrain") {
      const ExperimentConfig cfg =
          given ? *given : parse_search_checkpoint(read_text_file(dir / kSearchCkpt)).config;
      return run_retrain(cfg, dir, descriptor, out, err);
    }
  } catch (const UsageFailure& e) {
    err << "error: " << e.message << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << cmd << " failed: " << e.what() << "\n";
    return 1;
  }
  err << "error: unhandled subcommand " << cmd << "\n";
  return 2;
}

int cli_main(int argc, const char* const* argv) { return cli_main(argc, argv, std::cout, std::cerr); }

}  // namespace sparsearch
