// fednids command line: data preparation, synthetic silos and the three
// experiment kinds (local, naive cross, federated).

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fednids/experiment.hpp"

namespace fs = std::filesystem;
using namespace fednids;
using nlohmann::json;

namespace {

std::string default_output_dir() {
  if (const char* env = std::getenv("FEDNIDS_OUT"); env && *env) return env;
  return "results";
}

// Flags mirror ExperimentConfig. Each flag overrides the config file only
// when it was given on the command line.
struct RunFlags {
  std::string config;
  std::vector<std::string> csv_silos;
  std::vector<std::string> cache_silos;
  std::string schema;
  std::size_t synthetic_rows = 10000;
  std::uint64_t synthetic_seed = 7;
  std::string tag;
  std::size_t sample_size = 0;
  std::string strategy;
  int rounds = 10;
  std::string mode;
  bool no_stacking = false;
  std::uint64_t seed = 42;
  int efc_bins = 30;
  double efc_alpha = 0.5;
  double efc_quantile = 0.95;
  double lr = 0.001;
  Index batch = 128;
  int epochs = 10;
  double baseline_quantile = 0.95;
  int warmup_rounds = 0;
  bool parallel = false;
  bool export_energy = false;
  std::string out;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool with_strategy) {
  cmd->add_option("-c,--config", f.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--csv", f.csv_silos, "silo as name=path.csv (repeatable)");
  cmd->add_option("--cache", f.cache_silos, "silo as name=path.fnds (repeatable)");
  cmd->add_option("--schema", f.schema, "schema JSON applied to --csv/--cache silos");
  cmd->add_option("--synthetic-rows", f.synthetic_rows, "use the built-in synthetic silos with this many rows");
  cmd->add_option("--synthetic-seed", f.synthetic_seed, "seed of the built-in synthetic silos");
  cmd->add_option("--tag", f.tag, "config tag: original, sampled, reduced, synthetic");
  cmd->add_option("--sample-size", f.sample_size, "uniformly sample this many rows per silo");
  if (with_strategy) {
    cmd->add_option("--strategy", f.strategy, "fedavg, fedavgm, fedadagrad, fedyogi, fedadam or all");
    cmd->add_option("--rounds", f.rounds, "federated rounds")->check(CLI::PositiveNumber);
    cmd->add_option("--warmup-rounds", f.warmup_rounds, "rounds in which only half the clients train");
    cmd->add_flag("--parallel", f.parallel, "train clients concurrently");
  }
  cmd->add_option("--mode", f.mode, "dual or benign-only");
  cmd->add_flag("--no-stacking", f.no_stacking, "disable the EFC feature");
  cmd->add_option("--seed", f.seed, "experiment seed");
  cmd->add_option("--efc-bins", f.efc_bins, "EFC quantile bins per feature");
  cmd->add_option("--efc-alpha", f.efc_alpha, "EFC pseudocount weight");
  cmd->add_option("--efc-quantile", f.efc_quantile, "EFC energy cutoff quantile");
  cmd->add_option("--lr", f.lr, "autoencoder learning rate");
  cmd->add_option("--batch", f.batch, "autoencoder batch size");
  cmd->add_option("--epochs", f.epochs, "local epochs per round");
  cmd->add_option("--baseline-quantile", f.baseline_quantile, "threshold quantile without stacking");
  cmd->add_flag("--export-energy", f.export_energy, "add EFC energies to the per-row score files");
  cmd->add_option("-o,--out", f.out, "output directory (default $FEDNIDS_OUT or ./results)");
}

std::pair<std::string, std::string> name_path(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    const fs::path p(spec);
    return {p.stem().string(), spec};
  }
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

ExperimentConfig build_config(const CLI::App& cmd, const RunFlags& f) {
  ExperimentConfig cfg;
  if (!f.config.empty()) {
    cfg = load_config(f.config);
  } else {
    cfg.output_dir = default_output_dir();
  }
  auto given = [&](const char* name) {
    const CLI::Option* opt = cmd.get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };

  for (const auto& s : f.csv_silos) {
    auto [name, path] = name_path(s);
    cfg.silos.push_back({name, path, "", f.schema, std::nullopt});
  }
  for (const auto& s : f.cache_silos) {
    auto [name, path] = name_path(s);
    cfg.silos.push_back({name, "", path, f.schema, std::nullopt});
  }
  if (given("--synthetic-rows") || given("--synthetic-seed") ||
      (cfg.silos.empty() && !cfg.synthetic_preset)) {
    cfg.synthetic_preset = SyntheticPreset{f.synthetic_rows, f.synthetic_seed};
  }
  if (given("--tag")) cfg.config_tag = f.tag;
  if (given("--sample-size")) cfg.sample_size = f.sample_size;
  if (given("--strategy") && f.strategy != "all") cfg.strategy = parse_strategy(f.strategy);
  if (given("--rounds")) cfg.rounds = f.rounds;
  if (given("--warmup-rounds")) cfg.warmup_rounds = f.warmup_rounds;
  if (given("--parallel")) cfg.parallel_clients = true;
  if (given("--mode")) cfg.mode = parse_detection_mode(f.mode);
  if (given("--no-stacking")) cfg.stacking = false;
  if (given("--seed")) cfg.seed = f.seed;
  if (given("--efc-bins")) cfg.efc.bins = f.efc_bins;
  if (given("--efc-alpha")) cfg.efc.pseudocount = f.efc_alpha;
  if (given("--efc-quantile")) cfg.efc.quantile = f.efc_quantile;
  if (given("--lr")) cfg.train.learning_rate = f.lr;
  if (given("--batch")) cfg.train.batch_size = f.batch;
  if (given("--epochs")) cfg.train.epochs = f.epochs;
  if (given("--baseline-quantile")) cfg.baseline_quantile = f.baseline_quantile;
  if (given("--export-energy")) cfg.export_energy = true;
  if (given("--out")) cfg.output_dir = f.out;
  cfg.validate();
  return cfg;
}

void print_metrics_row(const std::string& name, const MetricsReport& m) {
  std::cout << "  " << std::left << std::setw(18) << name << std::right << std::fixed << std::setprecision(4)
            << " acc " << m.accuracy << "  prec " << m.precision << "  rec " << m.recall << "  f1 " << m.f1
            << "  fallout " << m.fallout << '\n';
}

void print_written(const std::vector<fs::path>& files) {
  for (const auto& f : files) std::cout << "wrote " << f.string() << '\n';
}

int cmd_run_local(const ExperimentConfig& cfg) {
  const auto silos = load_silos(cfg);
  const LocalResult r = run_local(cfg, silos);
  std::cout << "local evaluation (" << (cfg.stacking ? "EFC stacking, " + to_string(cfg.mode) : "no stacking")
            << ")\n";
  for (const auto& s : r.silos) print_metrics_row(s.name, s.eval.metrics);
  std::cout << "  average f1 " << r.average.f1 << " (stddev " << r.f1_stddev << ")\n";
  print_written(write_local_report(r, cfg, cfg.output_dir));
  return 0;
}

int cmd_run_cross(const ExperimentConfig& cfg) {
  const auto silos = load_silos(cfg);
  const CrossResult r = run_cross(cfg, silos);
  std::cout << "naive cross evaluation, F1 (rows train, columns test)\n";
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    std::cout << "  " << std::left << std::setw(18) << r.names[i] << std::right;
    for (const auto& cell : r.cells[i]) std::cout << ' ' << std::fixed << std::setprecision(4) << cell.f1;
    std::cout << '\n';
  }
  std::cout << "  average cross f1 " << r.average_cross_f1 << " (stddev " << r.stddev_cross_f1
            << "), average local f1 " << r.average_local_f1 << '\n';
  print_written(write_cross_report(r, cfg, cfg.output_dir));
  return 0;
}

double federated_once(const ExperimentConfig& cfg, const std::vector<FlowDataset>& silos) {
  const FederatedResult r = run_federated(cfg, silos);
  const RoundReport& last = r.rounds.back();
  std::cout << to_string(cfg.strategy) << ", " << r.rounds.size() << " rounds, "
            << (cfg.stacking ? "EFC stacking" : "no stacking") << ", " << to_string(cfg.mode) << '\n';
  for (const auto& rr : r.rounds) {
    std::cout << "  round " << std::setw(2) << rr.round << "  average f1 " << std::fixed << std::setprecision(4)
              << rr.average.f1 << '\n';
  }
  for (const auto& c : last.clients) {
    print_metrics_row(c.name, c.metrics);
    if (c.thresholds.inverted()) {
      std::cerr << "warning: " << c.name << ": attack threshold " << *c.thresholds.attack
                << " is below benign threshold " << c.thresholds.benign << '\n';
    }
  }
  print_written(write_federated_report(r, cfg, cfg.output_dir));
  return last.average.f1;
}

int cmd_run_fed(ExperimentConfig cfg, const std::string& strategy) {
  const auto silos = load_silos(cfg);
  if (strategy != "all") {
    federated_once(cfg, silos);
    return 0;
  }
  const fs::path root = cfg.output_dir;
  std::vector<std::pair<std::string, double>> finals;
  for (Strategy s : kAllStrategies) {
    cfg.strategy = s;
    cfg.output_dir = (root / to_string(s)).string();
    finals.emplace_back(to_string(s), federated_once(cfg, silos));
  }
  double lo = finals.front().second, hi = lo;
  std::cout << "final-round average f1 by strategy\n";
  for (const auto& [name, f1] : finals) {
    std::cout << "  " << std::left << std::setw(12) << name << std::right << ' ' << f1 << '\n';
    lo = std::min(lo, f1);
    hi = std::max(hi, f1);
  }
  std::cout << "  spread " << hi - lo << '\n';
  return 0;
}

int cmd_prepare(const std::string& csv, const std::string& schema_path, const std::string& cache,
                std::size_t chunk_rows) {
  const FlowSchema schema = schema_path.empty() ? FlowSchema{} : load_schema(schema_path);
  const ScalerParams sc = prepare_streaming(csv, schema, cache, chunk_rows);
  // The cache stores no column names, so a schema sidecar records them.
  FlowSchema out_schema = schema;
  out_schema.feature_names = sc.feature_names;
  const fs::path sidecar = fs::path(cache).replace_extension(".schema.json");
  save_schema(out_schema, sidecar);
  json scaler{{"features", sc.feature_names},
              {"min", std::vector<double>(sc.min.data(), sc.min.data() + sc.min.size())},
              {"max", std::vector<double>(sc.max.data(), sc.max.data() + sc.max.size())}};
  const fs::path scaler_path = fs::path(cache).replace_extension(".scaler.json");
  std::ofstream(scaler_path) << scaler.dump(2) << '\n';
  std::cout << "wrote " << cache << '\n' << "wrote " << sidecar.string() << '\n' << "wrote " << scaler_path.string() << '\n';
  return 0;
}

int cmd_synth(std::size_t rows, std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir);
  const auto specs = table3_synthetic_specs(rows, seed);
  const auto silos = generate_synthetic_silos(specs);
  ExperimentConfig cfg;
  cfg.output_dir = (dir / "results").string();
  // The bot_iot silo is 0.4% benign; 30 bins would need 300 benign training rows.
  cfg.efc.bins = 10;
  for (const auto& ds : silos) {
    const std::string file = ds.provenance().silo + ".csv";
    write_csv(ds, dir / file);
    cfg.silos.push_back({ds.provenance().silo, file, "", "", std::nullopt});
    std::cout << "wrote " << (dir / file).string() << "  (" << ds.rows() << " rows, "
              << ds.count_label(0) << " benign)\n";
  }
  std::ofstream(dir / "config.json") << json(cfg).dump(2) << '\n';
  std::cout << "wrote " << (dir / "config.json").string() << '\n';
  return 0;
}

int cmd_report(const fs::path& dir) {
  std::ifstream in(dir / "summary.json");
  if (!in) throw std::runtime_error("no summary.json in " + dir.string());
  json s;
  in >> s;
  const std::string kind = s.value("kind", "");
  std::cout << kind << " report, tag " << s.value("config_tag", "") << '\n';
  auto row = [](const json& silo) {
    const auto& m = silo.at("metrics");
    std::cout << "  " << std::left << std::setw(18) << silo.at("name").get<std::string>() << std::right
              << std::fixed << std::setprecision(4) << " f1 " << m.at("f1").get<double>() << "  acc "
              << m.at("accuracy").get<double>() << "  fallout " << m.at("fallout").get<double>() << '\n';
  };
  if (kind == "local") {
    for (const auto& silo : s.at("silos")) row(silo);
    std::cout << "  average f1 " << s.at("average").at("f1").get<double>() << '\n';
  } else if (kind == "cross") {
    std::cout << "  average cross f1 " << s.at("average_cross_f1").get<double>() << ", average local f1 "
              << s.at("average_local_f1").get<double>() << '\n';
  } else if (kind == "federated") {
    std::cout << "  " << s.at("strategy").get<std::string>() << ", " << s.at("rounds").get<int>() << " rounds\n";
    for (const auto& silo : s.at("final_round").at("silos")) row(silo);
    std::cout << "  average f1 " << s.at("final_round").at("average").at("f1").get<double>() << '\n';
  } else {
    throw std::runtime_error("unknown report kind '" + kind + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated stacked-autoencoder intrusion detection experiments"};
  app.require_subcommand(1);

  std::string csv, schema, cache;
  std::size_t chunk_rows = 100000;
  auto* prepare = app.add_subcommand("prepare", "min-max scale a flow CSV into a binary cache");
  prepare->add_option("csv", csv, "input CSV")->required()->check(CLI::ExistingFile);
  prepare->add_option("-o,--out", cache, "output cache file")->required();
  prepare->add_option("--schema", schema, "schema JSON")->check(CLI::ExistingFile);
  prepare->add_option("--chunk-rows", chunk_rows, "rows per streamed chunk")->check(CLI::PositiveNumber);

  std::size_t synth_rows = 10000;
  std::uint64_t synth_seed = 7;
  std::string synth_dir = "synthetic";
  auto* synth = app.add_subcommand("synth", "write the built-in synthetic silos as CSV plus a config");
  synth->add_option("--rows", synth_rows, "rows per silo")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("-o,--out", synth_dir, "output directory");

  RunFlags local_flags, cross_flags, fed_flags;
  auto* local = app.add_subcommand("run-local", "train and evaluate each silo on its own");
  add_run_flags(local, local_flags, false);
  auto* cross = app.add_subcommand("run-cross", "train on one silo, test on every other");
  add_run_flags(cross, cross_flags, false);
  auto* fed = app.add_subcommand("run-fed", "federated training across all silos");
  add_run_flags(fed, fed_flags, true);

  std::string report_dir;
  auto* report = app.add_subcommand("report", "summarise a results directory");
  report->add_option("dir", report_dir, "results directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prepare) return cmd_prepare(csv, schema, cache, chunk_rows);
    if (*synth) return cmd_synth(synth_rows, synth_seed, synth_dir);
    if (*local) return cmd_run_local(build_config(*local, local_flags));
    if (*cross) return cmd_run_cross(build_config(*cross, cross_flags));
    if (*fed) return cmd_run_fed(build_config(*fed, fed_flags), fed_flags.strategy.empty() ? "" : fed_flags.strategy);
    if (*report) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
