#include "fednids/experiment.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "fednids/random.hpp"

namespace fednids {

using nlohmann::json;

namespace {

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

json spec_json(const SyntheticSiloSpec& s) {
  return {{"n_samples", s.n_samples},
          {"benign_fraction", s.benign_fraction},
          {"benign", {{"mean", vector_json(s.benign.mean)}, {"spread", vector_json(s.benign.spread)}}},
          {"attack", {{"mean", vector_json(s.attack.mean)}, {"spread", vector_json(s.attack.spread)}}},
          {"seed", s.seed}};
}

SyntheticSiloSpec spec_from(const json& j, const std::string& name) {
  SyntheticSiloSpec s;
  s.name = name;
  s.n_samples = j.at("n_samples").get<std::size_t>();
  s.benign_fraction = j.at("benign_fraction").get<double>();
  s.benign = {vector_from(j.at("benign").at("mean")), vector_from(j.at("benign").at("spread"))};
  s.attack = {vector_from(j.at("attack").at("mean")), vector_from(j.at("attack").at("spread"))};
  s.seed = j.value("seed", std::uint64_t{0});
  return s;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (silos.empty() && !synthetic_preset) throw std::invalid_argument("at least one silo is required");
  if (!(efc.quantile > 0.0 && efc.quantile < 1.0)) throw std::invalid_argument("EFC quantile must be in (0, 1)");
  if (!(baseline_quantile > 0.0 && baseline_quantile < 1.0)) {
    throw std::invalid_argument("baseline quantile must be in (0, 1)");
  }
  if (efc.bins < 2) throw std::invalid_argument("EFC bins must be >= 2");
  train.validate();
  for (const auto& s : silos) {
    const int sources = !s.csv.empty() + !s.cache.empty() + s.synthetic.has_value();
    if (sources != 1) {
      throw std::invalid_argument("silo '" + s.name + "' needs exactly one of csv, cache, synthetic");
    }
  }
}

void to_json(json& j, const ExperimentConfig& c) {
  json silos = json::array();
  for (const auto& s : c.silos) {
    json e{{"name", s.name}};
    if (!s.csv.empty()) e["csv"] = s.csv;
    if (!s.cache.empty()) e["cache"] = s.cache;
    if (!s.schema.empty()) e["schema"] = s.schema;
    if (s.synthetic) e["synthetic"] = spec_json(*s.synthetic);
    silos.push_back(std::move(e));
  }
  j = json{{"silos", std::move(silos)},
           {"config_tag", c.config_tag},
           {"sample_size", c.sample_size ? json(*c.sample_size) : json(nullptr)},
           {"strategy", to_string(c.strategy)},
           {"strategy_config",
            {{"avgm_lr", c.strategy_config.avgm_lr},
             {"avgm_momentum", c.strategy_config.avgm_momentum},
             {"opt_lr", c.strategy_config.opt_lr},
             {"beta1", c.strategy_config.beta1},
             {"beta2", c.strategy_config.beta2},
             {"tau", c.strategy_config.tau}}},
           {"rounds", c.rounds},
           {"mode", to_string(c.mode)},
           {"stacking", c.stacking},
           {"seed", c.seed},
           {"efc",
            {{"bins", c.efc.bins},
             {"pseudocount", c.efc.pseudocount},
             {"quantile", c.efc.quantile},
             {"ridge", c.efc.ridge}}},
           {"train",
            {{"learning_rate", c.train.learning_rate},
             {"batch_size", c.train.batch_size},
             {"epochs", c.train.epochs},
             {"beta1", c.train.beta1},
             {"beta2", c.train.beta2},
             {"epsilon", c.train.epsilon}}},
           {"baseline_quantile", c.baseline_quantile},
           {"warmup_rounds", c.warmup_rounds},
           {"parallel_clients", c.parallel_clients},
           {"export_energy", c.export_energy},
           {"output_dir", c.output_dir}};
  if (c.synthetic_preset) {
    j["synthetic_preset"] = {{"rows", c.synthetic_preset->rows}, {"seed", c.synthetic_preset->seed}};
  }
}

void from_json(const json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  for (const auto& e : j.value("silos", json::array())) {
    SiloSource s;
    s.name = e.value("name", std::string{});
    s.csv = e.value("csv", std::string{});
    s.cache = e.value("cache", std::string{});
    s.schema = e.value("schema", std::string{});
    if (e.contains("synthetic")) s.synthetic = spec_from(e.at("synthetic"), s.name);
    c.silos.push_back(std::move(s));
  }
  if (j.contains("synthetic_preset") && !j.at("synthetic_preset").is_null()) {
    const auto& p = j.at("synthetic_preset");
    c.synthetic_preset = SyntheticPreset{p.value("rows", std::size_t{10000}), p.value("seed", std::uint64_t{7})};
  }
  c.config_tag = j.value("config_tag", c.config_tag);
  if (j.contains("sample_size") && !j.at("sample_size").is_null()) c.sample_size = j.at("sample_size").get<std::size_t>();
  c.strategy = parse_strategy(j.value("strategy", to_string(c.strategy)));
  if (j.contains("strategy_config")) {
    const auto& s = j.at("strategy_config");
    auto& d = c.strategy_config;
    d.avgm_lr = s.value("avgm_lr", d.avgm_lr);
    d.avgm_momentum = s.value("avgm_momentum", d.avgm_momentum);
    d.opt_lr = s.value("opt_lr", d.opt_lr);
    d.beta1 = s.value("beta1", d.beta1);
    d.beta2 = s.value("beta2", d.beta2);
    d.tau = s.value("tau", d.tau);
  }
  c.rounds = j.value("rounds", c.rounds);
  c.mode = parse_detection_mode(j.value("mode", to_string(c.mode)));
  c.stacking = j.value("stacking", c.stacking);
  c.seed = j.value("seed", c.seed);
  if (j.contains("efc")) {
    const auto& e = j.at("efc");
    c.efc.bins = e.value("bins", c.efc.bins);
    c.efc.pseudocount = e.value("pseudocount", c.efc.pseudocount);
    c.efc.quantile = e.value("quantile", c.efc.quantile);
    c.efc.ridge = e.value("ridge", c.efc.ridge);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.beta1 = t.value("beta1", c.train.beta1);
    c.train.beta2 = t.value("beta2", c.train.beta2);
    c.train.epsilon = t.value("epsilon", c.train.epsilon);
  }
  c.baseline_quantile = j.value("baseline_quantile", c.baseline_quantile);
  c.warmup_rounds = j.value("warmup_rounds", c.warmup_rounds);
  c.parallel_clients = j.value("parallel_clients", c.parallel_clients);
  c.export_energy = j.value("export_energy", c.export_energy);
  c.output_dir = j.value("output_dir", c.output_dir);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed config " + path.string() + ": " + e.what());
  }
  ExperimentConfig c = j.get<ExperimentConfig>();
  // Relative data paths are resolved against the config file's directory.
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  for (auto& s : c.silos) {
    resolve(s.csv);
    resolve(s.cache);
    resolve(s.schema);
  }
  c.validate();
  return c;
}

std::vector<FlowDataset> load_silos(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<SiloSource> sources = cfg.silos;
  if (cfg.synthetic_preset) {
    for (auto& spec : table3_synthetic_specs(cfg.synthetic_preset->rows, cfg.synthetic_preset->seed)) {
      SiloSource s;
      s.name = spec.name;
      s.synthetic = std::move(spec);
      sources.push_back(std::move(s));
    }
  }
  std::vector<FlowDataset> out;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    const auto& src = sources[k];
    const FlowSchema schema = src.schema.empty() ? FlowSchema{} : load_schema(src.schema);
    FlowDataset ds;
    bool needs_scaling = false;
    if (!src.csv.empty()) {
      ds = load_csv(src.csv, schema, src.name);
      needs_scaling = true;
    } else if (!src.cache.empty()) {
      ds = load_cache(src.cache, schema, src.name);
    } else {
      SyntheticSiloSpec spec = *src.synthetic;
      if (spec.name.empty()) spec.name = src.name;
      ds = generate_synthetic_silos({spec}).front();
    }
    if (cfg.sample_size) ds = sample_uniform(ds, *cfg.sample_size, mix_seed(cfg.seed, 500 + k));
    if (needs_scaling) ds = apply_minmax(ds, fit_minmax(ds));
    Provenance prov = ds.provenance();
    if (!src.name.empty()) prov.silo = src.name;
    prov.config_tag = cfg.config_tag;
    ds = ds.with_provenance(std::move(prov));
    if (!out.empty() && ds.schema().feature_names != out.front().schema().feature_names) {
      throw DatasetError("silo " + ds.provenance().silo + " does not share the feature set of silo " +
                         out.front().provenance().silo);
    }
    out.push_back(std::move(ds));
  }
  return out;
}

PipelineConfig pipeline_config(const ExperimentConfig& cfg, bool baseline_threshold) {
  PipelineConfig p;
  p.stacking = cfg.stacking;
  p.efc = cfg.efc;
  p.train = cfg.train;
  p.mode = cfg.mode;
  if (baseline_threshold) p.baseline_quantile = cfg.baseline_quantile;
  return p;
}

std::uint64_t client_seed(const ExperimentConfig& cfg, std::size_t silo_index) {
  return mix_seed(cfg.seed, 100 + silo_index);
}

AeParams initial_params(const ExperimentConfig& cfg, Index input_dim) {
  return init_params(AeArchitecture{input_dim}, mix_seed(cfg.seed, 7));
}

namespace {

std::vector<ClientState> prepare_clients(const ExperimentConfig& cfg, const std::vector<FlowDataset>& silos,
                                         bool baseline_threshold) {
  if (silos.empty()) throw std::invalid_argument("no silos loaded");
  const PipelineConfig pipe = pipeline_config(cfg, baseline_threshold);
  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < silos.size(); ++k) clients.push_back(prepare_client(silos[k], pipe, client_seed(cfg, k)));
  return clients;
}

double stddev(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

// Local training equals round 1 of a federation with this client alone.
std::pair<AeParams, ClientEvaluation> train_and_evaluate_local(const ExperimentConfig& cfg,
                                                               const ClientState& client) {
  const AeParams init = initial_params(cfg, client.input_dim());
  const ClientUpdate upd = client_fit(init, client, 1);
  AeParams params = set_parameters(init, upd.params);
  ClientEvaluation eval = client_evaluate(params, client, 1);
  return {std::move(params), std::move(eval)};
}

FlowDataset restack(const ClientState& trained_on, const FlowDataset& raw_test) {
  if (!trained_on.efc) return raw_test;
  return stack_feature(raw_test, predict(*trained_on.efc, raw_test));
}

}  // namespace

LocalResult run_local(const ExperimentConfig& cfg, const std::vector<FlowDataset>& silos) {
  const auto clients = prepare_clients(cfg, silos, !cfg.stacking);
  LocalResult r;
  r.input_dim = clients.front().input_dim();
  std::vector<MetricsReport> metrics;
  std::vector<double> f1s;
  for (const auto& c : clients) {
    auto [params, eval] = train_and_evaluate_local(cfg, c);
    metrics.push_back(eval.metrics);
    f1s.push_back(eval.metrics.f1);
    SiloEvaluation se{c.name, std::move(eval), std::nullopt};
    if (cfg.export_energy && c.efc) se.efc_energy = energies(*c.efc, c.raw_test);
    r.silos.push_back(std::move(se));
    r.models.push_back(std::move(params));
  }
  r.average = average_metrics(metrics);
  r.f1_stddev = stddev(f1s);
  return r;
}

CrossResult run_cross(const ExperimentConfig& cfg, const std::vector<FlowDataset>& silos) {
  if (silos.size() < 2) throw std::invalid_argument("cross evaluation needs at least two silos");
  const auto clients = prepare_clients(cfg, silos, !cfg.stacking);
  const std::size_t n = clients.size();
  CrossResult r;
  r.cells.assign(n, std::vector<MetricsReport>(n));
  std::vector<double> cross_f1, local_f1;
  for (std::size_t i = 0; i < n; ++i) {
    r.names.push_back(clients[i].name);
    auto [params, local_eval] = train_and_evaluate_local(cfg, clients[i]);
    r.cells[i][i] = local_eval.metrics;
    local_f1.push_back(local_eval.metrics.f1);
    const ThresholdPair th = local_eval.thresholds;
    const DetectionMode mode = clients[i].baseline_quantile ? DetectionMode::BenignOnly : clients[i].mode;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const FlowDataset test = restack(clients[i], clients[j].raw_test);
      r.cells[i][j] = evaluate_with(params, th, mode, test).metrics;
      cross_f1.push_back(r.cells[i][j].f1);
    }
  }
  r.cross_evaluations = cross_f1.size();
  for (double f : cross_f1) r.average_cross_f1 += f;
  r.average_cross_f1 /= static_cast<double>(cross_f1.size());
  r.stddev_cross_f1 = stddev(cross_f1);
  for (double f : local_f1) r.average_local_f1 += f;
  r.average_local_f1 /= static_cast<double>(local_f1.size());
  return r;
}

FederatedResult run_federated(const ExperimentConfig& cfg, const std::vector<FlowDataset>& silos) {
  FederatedResult r;
  r.clients = prepare_clients(cfg, silos, false);
  ServerState server = ServerState::make(initial_params(cfg, r.clients.front().input_dim()), cfg.strategy,
                                         cfg.strategy_config);
  SimulationOptions opts;
  opts.rounds = cfg.rounds;
  opts.warmup_rounds = cfg.warmup_rounds;
  opts.parallel_clients = cfg.parallel_clients;
  r.rounds = run_simulation(r.clients, server, opts);
  r.final_global = server.global;
  return r;
}

RoundAverages reevaluate(const FederatedResult& fed, DetectionMode mode) {
  std::vector<MetricsReport> metrics;
  for (ClientState c : fed.clients) {
    c.mode = mode;
    metrics.push_back(client_evaluate(fed.final_global, c, static_cast<int>(fed.rounds.size())).metrics);
  }
  return average_metrics(metrics);
}

namespace {

void write_json(const json& j, const std::filesystem::path& path, std::vector<std::filesystem::path>& files) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  files.push_back(path);
}

void write_scores_csv(const SiloEvaluation& se, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "row,loss,predicted,actual";
  if (se.efc_energy) out << ",efc_energy";
  out << '\n';
  const auto& e = se.eval;
  for (std::size_t i = 0; i < e.actual.size(); ++i) {
    out << e.row_ids[i] << ',' << e.scores(static_cast<Index>(i)) << ',' << int(e.predicted[i]) << ','
        << int(e.actual[i]);
    if (se.efc_energy) out << ',' << (*se.efc_energy)(static_cast<Index>(i));
    out << '\n';
  }
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
  return out.empty() ? "silo" : out;
}

void write_config(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                  std::vector<std::filesystem::path>& files) {
  write_json(json(cfg), dir / "config.json", files);
}

}  // namespace

void write_misclassified_csv(const ClientEvaluation& e, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "row,loss,predicted,actual\n";
  for (std::size_t i = 0; i < e.actual.size(); ++i) {
    if (e.predicted[i] == e.actual[i]) continue;
    out << e.row_ids[i] << ',' << e.scores(static_cast<Index>(i)) << ',' << int(e.predicted[i]) << ','
        << int(e.actual[i]) << '\n';
  }
}

std::vector<std::filesystem::path> write_local_report(const LocalResult& r, const ExperimentConfig& cfg,
                                                      const std::filesystem::path& dir) {
  if (r.silos.empty()) throw std::invalid_argument("empty local result");
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  json silos = json::array();
  for (const auto& s : r.silos) {
    silos.push_back({{"name", s.name}, {"thresholds", s.eval.thresholds}, {"metrics", s.eval.metrics}});
    const auto stem = safe_name(s.name);
    write_misclassified_csv(s.eval, dir / ("misclassified_" + stem + ".csv"));
    files.push_back(dir / ("misclassified_" + stem + ".csv"));
    write_scores_csv(s, dir / ("scores_" + stem + ".csv"));
    files.push_back(dir / ("scores_" + stem + ".csv"));
  }
  write_json({{"kind", "local"},
              {"config_tag", cfg.config_tag},
              {"stacking", cfg.stacking},
              {"threshold_rule", cfg.stacking ? to_string(cfg.mode) : "validation-quantile"},
              {"input_dim", r.input_dim},
              {"average", r.average},
              {"f1_stddev", r.f1_stddev},
              {"silos", std::move(silos)}},
             dir / "summary.json", files);
  write_config(cfg, dir, files);
  return files;
}

std::vector<std::filesystem::path> write_cross_report(const CrossResult& r, const ExperimentConfig& cfg,
                                                      const std::filesystem::path& dir) {
  if (r.names.empty()) throw std::invalid_argument("empty cross result");
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  json cells = json::array();
  json f1 = json::array();
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < r.names.size(); ++j) {
      cells.push_back({{"train", r.names[i]}, {"test", r.names[j]}, {"metrics", r.cells[i][j]}});
      row.push_back(r.cells[i][j].f1);
    }
    f1.push_back(std::move(row));
  }
  write_json({{"kind", "cross"},
              {"config_tag", cfg.config_tag},
              {"stacking", cfg.stacking},
              {"silos", r.names},
              {"f1_matrix", std::move(f1)},
              {"average_cross_f1", r.average_cross_f1},
              {"stddev_cross_f1", r.stddev_cross_f1},
              {"average_local_f1", r.average_local_f1},
              {"cross_evaluations", r.cross_evaluations},
              {"cells", std::move(cells)}},
             dir / "summary.json", files);
  write_config(cfg, dir, files);
  return files;
}

std::vector<std::filesystem::path> write_federated_report(const FederatedResult& r,
                                                          const ExperimentConfig& cfg,
                                                          const std::filesystem::path& dir) {
  if (r.rounds.empty()) throw std::invalid_argument("empty federated result");
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;

  {
    std::ofstream out(dir / "rounds.jsonl");
    if (!out) throw std::runtime_error("cannot write rounds.jsonl");
    for (const auto& rr : r.rounds) out << json(rr).dump() << '\n';
    files.push_back(dir / "rounds.jsonl");
  }
  {
    std::ofstream out(dir / "rounds.csv");
    if (!out) throw std::runtime_error("cannot write rounds.csv");
    out.precision(17);
    out << "round,client,participated,t_benign,t_attack,accuracy,precision,recall,f1,missrate_paper,"
           "fnr_standard,fallout,auc,tp,fp,fn,tn\n";
    for (const auto& rr : r.rounds) {
      for (const auto& c : rr.clients) {
        const auto& m = c.metrics;
        out << rr.round << ',' << csv::escape(c.name) << ',' << (c.participated ? 1 : 0) << ','
            << c.thresholds.benign << ',';
        if (c.thresholds.attack) out << *c.thresholds.attack;
        out << ',' << m.accuracy << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ','
            << m.missrate_paper << ',' << m.fnr_standard << ',' << m.fallout << ',';
        if (m.auc) out << *m.auc;
        out << ',' << m.confusion.tp << ',' << m.confusion.fp << ',' << m.confusion.fn << ','
            << m.confusion.tn << '\n';
      }
    }
    files.push_back(dir / "rounds.csv");
  }

  const RoundReport& last = r.rounds.back();
  json silos = json::array();
  for (std::size_t k = 0; k < last.clients.size(); ++k) {
    const auto& c = last.clients[k];
    silos.push_back({{"name", c.name}, {"thresholds", c.thresholds}, {"metrics", c.metrics}});
    if (c.detail) {
      const auto stem = safe_name(c.name);
      write_misclassified_csv(*c.detail, dir / ("misclassified_" + stem + ".csv"));
      files.push_back(dir / ("misclassified_" + stem + ".csv"));
      SiloEvaluation se{c.name, *c.detail, std::nullopt};
      if (cfg.export_energy && k < r.clients.size() && r.clients[k].efc) {
        se.efc_energy = energies(*r.clients[k].efc, r.clients[k].raw_test);
      }
      write_scores_csv(se, dir / ("scores_" + stem + ".csv"));
      files.push_back(dir / ("scores_" + stem + ".csv"));
    }
  }
  write_json({{"kind", "federated"},
              {"config_tag", cfg.config_tag},
              {"strategy", to_string(cfg.strategy)},
              {"mode", to_string(cfg.mode)},
              {"stacking", cfg.stacking},
              {"rounds", r.rounds.size()},
              {"evaluated_model", "post-aggregation global"},
              {"final_global_digest", last.global_digest},
              {"final_round", {{"average", last.average}, {"silos", std::move(silos)}}}},
             dir / "summary.json", files);
  save_checkpoint(r.final_global, dir / "global.aeck");
  files.push_back(dir / "global.aeck");
  write_config(cfg, dir, files);
  return files;
}

ScalerParams prepare_streaming(const std::filesystem::path& csv_path, const FlowSchema& schema,
                               const std::filesystem::path& cache, std::size_t chunk_rows) {
  if (chunk_rows == 0) throw std::invalid_argument("chunk size must be positive");
  ScalerParams sc;
  stream_csv(csv_path, schema, chunk_rows, [&](FlowDataset chunk) {
    if (!chunk.empty()) merge_minmax(sc, fit_minmax(chunk));
  });
  if (sc.feature_names.empty()) throw DatasetError("CSV " + csv_path.string() + " has no rows");
  CacheWriter writer(cache, static_cast<Index>(sc.feature_names.size()));
  stream_csv(csv_path, schema, chunk_rows, [&](FlowDataset chunk) {
    if (!chunk.empty()) writer.append(apply_minmax(chunk, sc));
  });
  writer.finish();
  return sc;
}

}  // namespace fednids
