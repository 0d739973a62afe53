#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fednids/experiment.hpp"
#include "helpers.hpp"

using namespace fednids;
using nlohmann::json;
using testutil::read_text;
using testutil::TempDir;

namespace {

SyntheticSiloSpec small_spec(const std::string& name, double benign_fraction, double shift, std::uint64_t seed) {
  SyntheticSiloSpec s;
  s.name = name;
  s.n_samples = 1500;
  s.benign_fraction = benign_fraction;
  s.benign = {Vector::Constant(5, 0.3 + shift), Vector::Constant(5, 0.03)};
  s.attack = {Vector::Constant(5, 0.65 - shift), Vector::Constant(5, 0.15)};
  s.seed = seed;
  return s;
}

ExperimentConfig small_config(int n_silos) {
  ExperimentConfig c;
  const double fractions[] = {0.6, 0.3, 0.8, 0.5};
  for (int k = 0; k < n_silos; ++k) {
    const std::string name = "s" + std::to_string(k);
    c.silos.push_back({name, "", "", "", small_spec(name, fractions[k], 0.05 * k, 10 + k)});
  }
  c.efc.bins = 10;
  c.rounds = 2;
  c.train.epochs = 2;
  return c;
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("config JSON round trip and validation") {
  ExperimentConfig c = small_config(2);
  c.synthetic_preset = SyntheticPreset{2000, 3};
  c.strategy = Strategy::FedYogi;
  c.mode = DetectionMode::BenignOnly;
  c.sample_size = 400;
  c.strategy_config.tau = 1e-6;
  const json j = c;
  const ExperimentConfig r = j.get<ExperimentConfig>();
  CHECK(json(r).dump() == j.dump());
  CHECK(r.silos.size() == 2);
  CHECK(r.silos[1].synthetic->benign.mean == c.silos[1].synthetic->benign.mean);

  ExperimentConfig bad = c;
  bad.rounds = 0;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.efc.quantile = 1.0;
  CHECK_THROWS(bad.validate());
  bad = ExperimentConfig{};
  CHECK_THROWS(bad.validate());  // no silos
  bad = c;
  bad.silos[0].csv = "x.csv";  // csv and synthetic at once
  CHECK_THROWS(bad.validate());
}

TEST_CASE("load_config resolves paths against the config file") {
  TempDir dir("cfg");
  std::filesystem::create_directories(dir / "data");
  testutil::write_text(dir / "data" / "cfg.json",
                       R"({"silos":[{"name":"a","csv":"a.csv"}],"rounds":3,"strategy":"fedadam","mode":"benign-only"})");
  const ExperimentConfig c = load_config(dir / "data" / "cfg.json");
  CHECK(c.rounds == 3);
  CHECK(c.strategy == Strategy::FedAdam);
  CHECK(c.mode == DetectionMode::BenignOnly);
  CHECK(std::filesystem::path(c.silos[0].csv) == (dir / "data" / "a.csv").lexically_normal());
  testutil::write_text(dir / "broken.json", "{\"rounds\": ");
  CHECK_THROWS(load_config(dir / "broken.json"));
}

TEST_CASE("load_silos scales CSV silos and samples") {
  TempDir dir("silos");
  testutil::write_text(dir / "a.csv", "x,y,Label\n0,10,0\n5,20,1\n10,30,0\n2,12,1\n");
  ExperimentConfig c;
  c.silos.push_back({"a", (dir / "a.csv").string(), "", "", std::nullopt});
  const auto silos = load_silos(c);
  CHECK(silos[0].features()(1, 0) == 0.5);
  CHECK(silos[0].features().maxCoeff() == 1.0);
  CHECK(silos[0].provenance().silo == "a");
  c.sample_size = 3;
  CHECK(load_silos(c)[0].rows() == 3);

  testutil::write_text(dir / "b.csv", "x,z,Label\n0,1,0\n1,2,1\n");
  c.sample_size.reset();
  c.silos.push_back({"b", (dir / "b.csv").string(), "", "", std::nullopt});
  CHECK_THROWS_AS(load_silos(c), DatasetError);
}

TEST_CASE("the synthetic preset mirrors the class skews") {
  const auto specs = table3_synthetic_specs(10000, 7);
  REQUIRE(specs.size() == 4);
  CHECK(specs[0].benign_fraction == 0.004);
  for (const auto& s : specs) {
    CHECK(s.n_samples >= 10000);
    CHECK(s.benign.mean.minCoeff() >= 0.0);
    CHECK(s.benign.mean.maxCoeff() <= 1.0);
    CHECK(s.attack.mean.minCoeff() >= 0.0);
    CHECK(s.attack.mean.maxCoeff() <= 1.0);
  }
  CHECK(table3_synthetic_specs(10000, 7)[2].attack.mean == specs[2].attack.mean);
}

TEST_CASE("run_local: stacking changes the input dimension by one") {
  ExperimentConfig c = small_config(2);
  const auto silos = load_silos(c);
  const LocalResult on = run_local(c, silos);
  c.stacking = false;
  const LocalResult off = run_local(c, silos);
  CHECK(on.input_dim == off.input_dim + 1);
  CHECK(on.silos.size() == 2);
  CHECK(!off.silos[0].eval.thresholds.attack);  // quantile baseline
  CHECK(on.silos[0].eval.thresholds.attack);
  CHECK(json(run_local(c, silos).silos[1].eval.metrics).dump() == json(off.silos[1].eval.metrics).dump());
}

TEST_CASE("a one-silo, one-round federation equals the local run") {
  ExperimentConfig c = small_config(1);
  c.rounds = 1;
  const auto silos = load_silos(c);
  const LocalResult local = run_local(c, silos);
  const FederatedResult fed = run_federated(c, silos);
  CHECK(fed.final_global == local.models.front());
  CHECK(fed.rounds.back().clients.front().metrics == local.silos.front().eval.metrics);
}

TEST_CASE("run_cross") {
  SUBCASE("4 silos give 12 off-diagonal evaluations") {
    ExperimentConfig c = small_config(4);
    const CrossResult r = run_cross(c, load_silos(c));
    CHECK(r.cross_evaluations == 12);
    CHECK(r.cells.size() == 4);
    CHECK(r.names[3] == "s3");
  }
  SUBCASE("identical silos: cross equals local") {
    ExperimentConfig c = small_config(1);
    c.silos.push_back(c.silos.front());
    c.silos[1].name = "twin";
    const CrossResult r = run_cross(c, load_silos(c));
    // Each silo draws its own split and training seed, so the twins agree
    // only up to sampling noise.
    CHECK(std::abs(r.average_cross_f1 - r.average_local_f1) < 0.05);
  }
  SUBCASE("one silo is an error") {
    ExperimentConfig c = small_config(1);
    CHECK_THROWS(run_cross(c, load_silos(c)));
  }
}

TEST_CASE("report writers") {
  TempDir dir("reports");
  ExperimentConfig c = small_config(2);
  c.export_energy = true;
  const auto silos = load_silos(c);

  const FederatedResult fed = run_federated(c, silos);
  write_federated_report(fed, c, dir / "fed");
  CHECK(count_lines(dir / "fed" / "rounds.jsonl") == 2);
  for (const auto& line : {std::string("round"), std::string("clients")}) {
    CHECK(read_text(dir / "fed" / "rounds.jsonl").find(line) != std::string::npos);
  }
  CHECK(count_lines(dir / "fed" / "rounds.csv") == 1 + 2 * 2);
  const json summary = json::parse(read_text(dir / "fed" / "summary.json"));
  CHECK(summary.at("rounds") == 2);
  CHECK(summary.at("evaluated_model") == "post-aggregation global");
  const auto& last = fed.rounds.back().clients;
  for (const auto& cr : last) {
    const auto& m = cr.metrics;
    // Header plus one row per misclassified sample.
    CHECK(count_lines(dir / "fed" / ("misclassified_" + cr.name + ".csv")) == 1 + m.confusion.fp + m.confusion.fn);
    CHECK(read_text(dir / "fed" / ("scores_" + cr.name + ".csv")).rfind("row,loss,predicted,actual,efc_energy", 0) == 0);
  }
  CHECK(load_checkpoint(dir / "fed" / "global.aeck") == fed.final_global);
  const ExperimentConfig again = load_config(dir / "fed" / "config.json");
  CHECK(json(again).dump() == json(c).dump());

  // Same seeds, byte-identical JSON.
  write_federated_report(run_federated(c, silos), c, dir / "fed2");
  CHECK(read_text(dir / "fed" / "summary.json") == read_text(dir / "fed2" / "summary.json"));
  CHECK(read_text(dir / "fed" / "rounds.jsonl") == read_text(dir / "fed2" / "rounds.jsonl"));

  write_local_report(run_local(c, silos), c, dir / "local");
  CHECK(json::parse(read_text(dir / "local" / "summary.json")).at("silos").size() == 2);
  write_cross_report(run_cross(c, silos), c, dir / "cross");
  CHECK(json::parse(read_text(dir / "cross" / "summary.json")).at("f1_matrix").size() == 2);

  CHECK_THROWS(write_federated_report(FederatedResult{}, c, dir / "empty"));
}

TEST_CASE("reevaluate re-scores the final global model") {
  ExperimentConfig c = small_config(2);
  const FederatedResult fed = run_federated(c, load_silos(c));
  const RoundAverages dual = reevaluate(fed, DetectionMode::DualThreshold);
  CHECK(dual.f1 == doctest::Approx(fed.rounds.back().average.f1));
  const RoundAverages benign = reevaluate(fed, DetectionMode::BenignOnly);
  CHECK(benign.f1 >= 0.0);
}

TEST_CASE("prepare_streaming matches the in-memory pipeline") {
  TempDir dir("stream");
  const FlowDataset raw = testutil::random_dataset(103, 3, 0.4, 5);
  Matrix wide = raw.features() * 50.0;
  const FlowDataset big = testutil::make_dataset(wide, raw.labels());
  write_csv(big, dir / "in.csv");
  const ScalerParams sc = prepare_streaming(dir / "in.csv", FlowSchema{}, dir / "out.fnds", 10);
  const FlowDataset loaded = load_csv(dir / "in.csv", FlowSchema{});
  const FlowDataset expect = apply_minmax(loaded, fit_minmax(loaded));
  const FlowDataset cached = load_cache(dir / "out.fnds", loaded.schema());
  CHECK(sc.min == fit_minmax(loaded).min);
  CHECK(cached.features() == expect.features());
  CHECK(cached.labels() == expect.labels());
}

#ifdef FEDNIDS_CLI
namespace {

int run_cli(const std::string& args, const std::string& env = {}) {
  const std::string cmd = env + " \"" FEDNIDS_CLI "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("cli") {
  TempDir dir("cli");
  const std::string d = dir.path().string();

  CHECK(run_cli("") != 0);
  CHECK(run_cli("run-fed --strategy fedsgd -o " + d + "/x") != 0);
  CHECK(run_cli("run-local --csv missing=" + d + "/nope.csv -o " + d + "/x") != 0);
  CHECK(run_cli("report " + d) != 0);

  // synth writes CSVs and a config that run-* can consume.
  REQUIRE(run_cli("synth --rows 1000 -o " + d + "/syn") == 0);
  CHECK(std::filesystem::exists(dir / "syn/bot_iot.csv"));
  json cfg = json::parse(read_text(dir / "syn/config.json"));
  CHECK(cfg.at("silos").size() == 4);

  // Small CSV silos that satisfy the EFC row requirement.
  ExperimentConfig c = small_config(2);
  const auto silos = load_silos(c);
  write_csv(silos[0], dir / "a.csv");
  write_csv(silos[1], dir / "b.csv");
  const std::string silo_args = "--csv a=" + d + "/a.csv --csv b=" + d + "/b.csv --efc-bins 10 --epochs 1";

  CHECK(run_cli("run-local " + silo_args + " -o " + d + "/local") == 0);
  CHECK(std::filesystem::exists(dir / "local/summary.json"));
  CHECK(run_cli("report " + d + "/local") == 0);
  CHECK(run_cli("run-cross " + silo_args + " -o " + d + "/cross") == 0);
  CHECK(run_cli("report " + d + "/cross") == 0);
  CHECK(run_cli("run-fed " + silo_args + " --rounds 2 --strategy all -o " + d + "/sweep") == 0);
  for (Strategy s : kAllStrategies) CHECK(std::filesystem::exists(dir / ("sweep/" + to_string(s) + "/summary.json")));
  CHECK(run_cli("report " + d + "/sweep/fedadam") == 0);

  // The environment variable sets the default output directory.
  CHECK(run_cli("run-fed " + silo_args + " --rounds 1", "FEDNIDS_OUT=" + d + "/envout") == 0);
  CHECK(std::filesystem::exists(dir / "envout/rounds.jsonl"));

  // A config file plus overriding flags.
  write_local_report(run_local(c, silos), c, dir / "seed");
  CHECK(run_cli("run-fed -c " + d + "/seed/config.json --rounds 1 --strategy fedavgm -o " + d + "/fromcfg") == 0);
  const json s = json::parse(read_text(dir / "fromcfg/summary.json"));
  CHECK(s.at("strategy") == "fedavgm");
  CHECK(s.at("rounds") == 1);

  // prepare streams a CSV into the cache format.
  CHECK(run_cli("prepare " + d + "/a.csv -o " + d + "/a.fnds --chunk-rows 100") == 0);
  CHECK(load_cache(dir / "a.fnds", load_schema(dir / "a.schema.json")).rows() == silos[0].rows());
}
#endif
