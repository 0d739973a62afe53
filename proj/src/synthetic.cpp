#include <cmath>
#include <fstream>
#include <random>

#include "csv.hpp"
#include "fednids/experiment.hpp"
#include "fednids/random.hpp"

namespace fednids {

namespace {

constexpr Index kSyntheticFeatures = 10;

struct SiloProfile {
  const char* name;
  double benign_fraction;
  std::size_t size_factor;
};

// Benign shares from the sampled NetFlow silos. The Bot-IoT-like silo is
// four times larger so that its 0.4% benign share still leaves enough benign
// training rows for the energy model.
constexpr SiloProfile kProfiles[] = {
    {"bot_iot", 0.004, 4},
    {"ton_iot", 0.36, 1},
    {"unsw_nb15", 0.96, 1},
    {"cse_cic_ids2018", 0.88, 1},
};

}  // namespace

// Each silo has its own benign and attack archetype. Archetypes are chained:
// the benign traffic of silo k+1 sits close to the attack traffic of silo k,
// so what one network calls an attack is ordinary traffic elsewhere. Local
// detectors then fail to transfer across silos.
std::vector<SyntheticSiloSpec> table3_synthetic_specs(std::size_t rows, std::uint64_t seed) {
  constexpr std::size_t n_silos = std::size(kProfiles);
  Rng rng(mix_seed(seed, 77));
  std::uniform_real_distribution<double> centre(0.2, 0.8);
  std::uniform_real_distribution<double> spread(0.04, 0.08);
  std::bernoulli_distribution flip(0.5);

  auto random_mean = [&] {
    Vector m(kSyntheticFeatures);
    for (Index j = 0; j < m.size(); ++j) m(j) = centre(rng);
    return m;
  };
  auto random_spread = [&] {
    Vector s(kSyntheticFeatures);
    for (Index j = 0; j < s.size(); ++j) s(j) = spread(rng);
    return s;
  };
  // Moves a subset of features far from the base archetype.
  auto displaced = [&](const Vector& base, Index n_moved) {
    Vector m = base;
    std::vector<Index> idx(kSyntheticFeatures);
    for (Index j = 0; j < kSyntheticFeatures; ++j) idx[j] = j;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (Index k = 0; k < n_moved; ++k) {
      const Index j = idx[k];
      const double shift = 0.3 + 0.15 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      m(j) = m(j) + (m(j) < 0.5 ? shift : -shift);
    }
    return m;
  };

  std::vector<SyntheticSiloSpec> specs;
  Vector benign_mean = random_mean();
  for (std::size_t s = 0; s < n_silos; ++s) {
    SyntheticSiloSpec spec;
    spec.name = kProfiles[s].name;
    spec.n_samples = rows * kProfiles[s].size_factor;
    spec.benign_fraction = kProfiles[s].benign_fraction;
    spec.benign = {benign_mean, random_spread()};
    const Vector attack_mean = displaced(benign_mean, 4);
    spec.attack = {attack_mean, random_spread()};
    spec.seed = mix_seed(seed, s);
    specs.push_back(std::move(spec));
    // Next silo's benign archetype: near this silo's attack archetype.
    Vector next = attack_mean;
    for (Index j = 0; j < next.size(); ++j) next(j) += 0.05 * (flip(rng) ? 1.0 : -1.0);
    benign_mean = next;
  }
  return specs;
}

void write_csv(const FlowDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write CSV " + path.string());
  out.precision(17);
  const auto& names = ds.schema().feature_names;
  const auto& meta = ds.provenance().metadata;
  bool first = true;
  auto sep = [&] {
    if (!first) out << ',';
    first = false;
  };
  for (const auto& [name, _] : meta) {
    sep();
    out << csv::escape(name);
  }
  for (const auto& n : names) {
    sep();
    out << csv::escape(n);
  }
  sep();
  out << ds.schema().label_column << '\n';
  for (Index i = 0; i < ds.rows(); ++i) {
    first = true;
    for (const auto& [_, values] : meta) {
      sep();
      out << csv::escape(values[i]);
    }
    for (Index j = 0; j < ds.cols(); ++j) {
      sep();
      out << ds.features()(i, j);
    }
    sep();
    out << static_cast<int>(ds.labels()[i]) << '\n';
  }
}

}  // namespace fednids
