#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fednids/efc.hpp"
#include "helpers.hpp"

using namespace fednids;
using testutil::make_dataset;
using testutil::TempDir;

namespace {

// Continuous, mildly correlated benign sample: energies are distinct.
FlowDataset benign_sample(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix x(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const double shared = n(rng);
    for (Index j = 0; j < cols; ++j) x(i, j) = 1.0 / (1.0 + std::exp(-(0.6 * shared + n(rng))));
  }
  return make_dataset(std::move(x), Labels(static_cast<std::size_t>(rows), 0));
}

// Two binary features taking values in {0, 1}.
FlowDataset binary_pair(Index rows, bool correlated, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution coin(0.5);
  Matrix x(rows, 2);
  for (Index i = 0; i < rows; ++i) {
    x(i, 0) = coin(rng);
    x(i, 1) = correlated ? x(i, 0) : coin(rng);
  }
  return make_dataset(std::move(x), Labels(static_cast<std::size_t>(rows), 0));
}

double max_cross_coupling(const EfcModel& m) {
  double worst = 0.0;
  for (Index i = 0; i < m.discretizer.n_features(); ++i) {
    for (Index j = 0; j < m.discretizer.n_features(); ++j) {
      if (i == j) continue;
      for (int a = 0; a < m.discretizer.states(i); ++a) {
        for (int b = 0; b < m.discretizer.states(j); ++b) worst = std::max(worst, std::abs(m.coupling(i, a, j, b)));
      }
    }
  }
  return worst;
}

EfcConfig config(int bins, double alpha, double q = 0.95) {
  EfcConfig c;
  c.bins = bins;
  c.pseudocount = alpha;
  c.quantile = q;
  return c;
}

}  // namespace

TEST_CASE("discretizer edges") {
  SUBCASE("column 0..99, Q=2 gives one edge at the median") {
    Matrix x(100, 1);
    for (Index i = 0; i < 100; ++i) x(i, 0) = static_cast<double>(i);
    const Discretizer d = fit_discretizer(x, 2);
    REQUIRE(d.edges[0].size() == 1);
    CHECK(d.edges[0][0] == doctest::Approx(50.0).epsilon(0.02));
    CHECK(d.states(0) == 2);
  }
  SUBCASE("constant column has one state") {
    const Discretizer d = fit_discretizer(Matrix::Constant(50, 1, 0.3), 10);
    CHECK(d.states(0) == 1);
    CHECK(d.bin(0, 0.3) == 0);
    CHECK(d.bin(0, -5.0) == 0);
    CHECK(d.bin(0, 5.0) == 0);
  }
  SUBCASE("uniform sample, Q=4: fresh data lands 25% +- 5% per bin") {
    Rng rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix fit(4000, 1), fresh(4000, 1);
    for (Index i = 0; i < 4000; ++i) {
      fit(i, 0) = u(rng);
      fresh(i, 0) = u(rng);
    }
    const Discretizer d = fit_discretizer(fit, 4);
    std::vector<int> counts(4, 0);
    for (Index i = 0; i < 4000; ++i) ++counts[d.bin(0, fresh(i, 0))];
    for (int c : counts) CHECK(std::abs(c / 4000.0 - 0.25) <= 0.05);
  }
  SUBCASE("edges strictly increasing and every value maps to a valid bin") {
    Matrix x(300, 3);
    for (Index i = 0; i < 300; ++i) {
      x(i, 0) = i % 7;   // heavy duplicates collapse edges
      x(i, 1) = i * 0.01;
      x(i, 2) = (i % 2) * 1.0;
    }
    const Discretizer d = fit_discretizer(x, 30);
    for (Index j = 0; j < 3; ++j) {
      CHECK(d.states(j) <= 30);
      for (std::size_t k = 1; k < d.edges[j].size(); ++k) CHECK(d.edges[j][k] > d.edges[j][k - 1]);
      for (double v : {-1e9, -1.0, 0.0, 0.5, 3.0, 1e9}) {
        const int b = d.bin(j, v);
        CHECK(b >= 0);
        CHECK(b < d.states(j));
      }
    }
    CHECK(d.states(0) == 7);
    CHECK(d.states(2) == 2);
  }
  SUBCASE("a column mostly at its minimum keeps the minimum in its own bin") {
    Matrix x(100, 1);
    for (Index i = 0; i < 100; ++i) x(i, 0) = i < 90 ? 0.0 : 1.0;
    const Discretizer d = fit_discretizer(x, 2);
    REQUIRE(d.states(0) == 2);
    CHECK(d.bin(0, 0.0) == 0);
    CHECK(d.bin(0, 1.0) == 1);
    CHECK(fit_discretizer(Matrix::Zero(10, 1), 4).states(0) == 1);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(fit_discretizer(Matrix(0, 2), 4), EfcError);
    CHECK_THROWS_AS(fit_discretizer(Matrix::Zero(5, 2), 1), EfcError);
  }
}

TEST_CASE("nearest-rank quantile") {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i + 1;
  CHECK(nearest_rank_quantile(v, 0.95) == 95.0);
  CHECK(nearest_rank_quantile(v, 0.951) == 96.0);
  CHECK(nearest_rank_quantile({3.0}, 0.5) == 3.0);
  CHECK(nearest_rank_quantile({1, 2, 3, 4}, 0.5) == 2.0);
  CHECK_THROWS_AS(nearest_rank_quantile({}, 0.5), EfcError);
  CHECK_THROWS_AS(nearest_rank_quantile({1.0}, 1.0), EfcError);
}

TEST_CASE("cutoff leaves exactly 5 of 100 training energies above it") {
  const FlowDataset ds = benign_sample(100, 4, 17);
  const EfcModel m = fit_efc(ds, config(10, 0.5));
  const Vector e = energies(m, ds);
  CHECK((e.array() > m.cutoff).count() == 5);
  const Labels p = predict(m, ds);
  CHECK(std::count(p.begin(), p.end(), 1) == 5);
}

TEST_CASE("cutoff property holds across sizes and quantiles") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const Index n = 60 + static_cast<Index>(seed) * 37;
    const double q = 0.8 + 0.015 * static_cast<double>(seed);
    const FlowDataset ds = benign_sample(n, 3, seed);
    const EfcModel m = fit_efc(ds, config(6, 0.4, q));
    const Vector e = energies(m, ds);
    const auto rank = static_cast<Index>(std::ceil(q * static_cast<double>(n) - 1e-9));
    // Nearest rank: at least ceil(qN) energies sit at or below the cutoff and
    // fewer than that strictly below it. Ties make the count above smaller.
    CHECK((e.array() <= m.cutoff).count() >= rank);
    CHECK((e.array() < m.cutoff).count() < rank);
    const double above = static_cast<double>((e.array() > m.cutoff).count()) / static_cast<double>(n);
    CHECK(above <= 1.0 - q + 1e-12);
    std::vector<double> sorted(e.data(), e.data() + e.size());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end()) {
      CHECK(above >= 1.0 - q - 1.0 / static_cast<double>(n) - 1e-12);
    }
  }
}

TEST_CASE("couplings are exactly symmetric and finite") {
  const EfcModel m = fit_efc(benign_sample(600, 5, 4), config(8, 0.3));
  CHECK(m.couplings == m.couplings.transpose());
  CHECK(m.couplings.allFinite());
  CHECK(m.fields.allFinite());
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 5; ++j) {
      for (int a = 0; a < m.discretizer.states(i); ++a) {
        for (int b = 0; b < m.discretizer.states(j); ++b) CHECK(m.coupling(i, a, j, b) == m.coupling(j, b, i, a));
      }
    }
  }
}

TEST_CASE("independent binary features: couplings near zero, shrinking with alpha") {
  const FlowDataset ds = binary_pair(4000, false, 21);
  for (double alpha : {0.05, 0.2, 0.5}) {
    const EfcModel m = fit_efc(ds, config(2, alpha));
    CHECK(max_cross_coupling(m) <= 10.0 * alpha);
  }
  const double loose = max_cross_coupling(fit_efc(ds, config(2, 0.05)));
  const double tight = max_cross_coupling(fit_efc(ds, config(2, 0.5)));
  CHECK(tight < loose);
}

TEST_CASE("independent continuous features: couplings shrink as alpha grows") {
  Rng rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix x(2000, 4);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  const FlowDataset ds = make_dataset(x, Labels(2000, 0));
  CHECK(max_cross_coupling(fit_efc(ds, config(5, 0.5))) < max_cross_coupling(fit_efc(ds, config(5, 0.05))));
}

TEST_CASE("a perfectly correlated pair couples more strongly than an independent one") {
  const double indep = max_cross_coupling(fit_efc(binary_pair(2000, false, 1), config(2, 0.5)));
  const double corr = max_cross_coupling(fit_efc(binary_pair(2000, true, 1), config(2, 0.5)));
  CHECK(corr > indep);
}

TEST_CASE("bin edges from the whole training split") {
  // Benign rows near 0.3; shifted rows near 0.7 on the first feature only.
  Rng rng(31);
  std::normal_distribution<double> n(0.0, 0.03);
  Matrix benign(600, 3), shifted(200, 3);
  for (Index i = 0; i < 600; ++i) {
    for (Index j = 0; j < 3; ++j) benign(i, j) = 0.3 + n(rng);
  }
  for (Index i = 0; i < 200; ++i) {
    shifted(i, 0) = 0.7 + n(rng);
    for (Index j = 1; j < 3; ++j) shifted(i, j) = 0.3 + n(rng);
  }
  Matrix all(800, 3);
  all << benign, shifted;
  const FlowDataset b = make_dataset(benign, Labels(600, 0));
  const FlowDataset a = make_dataset(shifted, Labels(200, 0));

  const EfcModel own = fit_efc(b, config(10, 0.5));
  const EfcModel split = fit_efc(b, config(10, 0.5), &all);
  // Benign-only edges put every shifted value in the open top bin, which
  // holds a tenth of the benign mass; split edges give it bins of its own.
  CHECK(own.discretizer.bin(0, 0.7) == own.discretizer.states(0) - 1);
  CHECK(split.discretizer.edges[0].back() > 0.5);
  const Labels p_own = predict(own, a);
  const Labels p_split = predict(split, a);
  const auto flagged = [](const Labels& p) { return std::count(p.begin(), p.end(), 1); };
  CHECK(flagged(p_split) > 160);
  CHECK(flagged(p_own) < 60);
  // The cutoff still comes from benign energies only.
  CHECK((energies(split, b).array() > split.cutoff).count() == 30);

  const Matrix narrow = all.leftCols(2);
  CHECK_THROWS_AS(fit_efc(b, config(10, 0.5), &narrow), EfcError);
}

TEST_CASE("energy") {
  const FlowDataset ds = benign_sample(400, 3, 5);
  EfcModel m = fit_efc(ds, config(6, 0.5));

  SUBCASE("invariant inside a bin") {
    RowVector row = ds.features().row(0);
    const double e = energy(m, row);
    const int b = m.discretizer.bin(1, row(1));
    const auto& edges = m.discretizer.edges[1];
    const double lo = b == 0 ? row(1) - 0.01 : edges[static_cast<std::size_t>(b - 1)];
    const double hi = b == static_cast<int>(edges.size()) ? row(1) + 0.01 : edges[static_cast<std::size_t>(b)];
    for (double t : {0.0, 0.25, 0.5, 0.75}) {
      row(1) = lo + t * (hi - lo);
      if (m.discretizer.bin(1, row(1)) == b) CHECK(energy(m, row) == e);
    }
  }
  SUBCASE("zero model scores every row 0 and predicts benign at cutoff 0") {
    m.fields.setZero();
    m.couplings.setZero();
    m.cutoff = 0.0;
    CHECK(energies(m, ds).isZero());
    const Labels p = predict(m, ds);
    CHECK(std::count(p.begin(), p.end(), 1) == 0);
  }
  SUBCASE("energy equal to the cutoff is benign") {
    const Vector e = energies(m, ds);
    m.cutoff = e(3);
    CHECK(predict(m, ds)[3] == 0);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(energy(m, RowVector::Zero(2)), EfcError);
    CHECK_THROWS_AS(predict(m, testutil::random_dataset(4, 2, 0.0, 1)), EfcError);
  }
  SUBCASE("agrees with the explicit field and coupling sum") {
    const RowVector row = ds.features().row(7);
    double h = 0.0;
    for (Index i = 0; i < 3; ++i) {
      const int a = m.discretizer.bin(i, row(i));
      h -= m.field(i, a);
      for (Index j = i + 1; j < 3; ++j) h -= m.coupling(i, a, j, m.discretizer.bin(j, row(j)));
    }
    CHECK(energy(m, row) == doctest::Approx(h).epsilon(1e-12));
  }
}

TEST_CASE("fresh benign rows fall below the cutoff with probability near q") {
  const EfcModel m = fit_efc(benign_sample(3000, 4, 10), config(10, 0.5));
  const Labels p = predict(m, benign_sample(3000, 4, 11));
  const double rate = static_cast<double>(std::count(p.begin(), p.end(), 1)) / 3000.0;
  CHECK(rate == doctest::Approx(0.05).epsilon(0.6));  // 0.02..0.08
}

TEST_CASE("fit_efc preconditions") {
  CHECK_THROWS_WITH_AS(fit_efc(benign_sample(50, 3, 1), config(10, 0.5)), doctest::Contains("100"), EfcError);
  FlowDataset mixed = testutil::random_dataset(400, 3, 0.5, 2);
  CHECK_THROWS_AS(fit_efc(mixed, config(10, 0.5)), EfcError);
  CHECK_THROWS_AS(fit_efc(benign_sample(400, 3, 1), config(10, 0.0)), EfcError);
  CHECK_THROWS_AS(fit_efc(benign_sample(400, 3, 1), config(10, 0.5, 1.0)), EfcError);
}

TEST_CASE("fitting is deterministic") {
  const FlowDataset ds = benign_sample(500, 4, 12);
  const EfcModel a = fit_efc(ds, config(8, 0.5));
  const EfcModel b = fit_efc(ds, config(8, 0.5));
  CHECK(a.couplings == b.couplings);
  CHECK(a.fields == b.fields);
  CHECK(a.cutoff == b.cutoff);
}

TEST_CASE("stack_feature") {
  Matrix x(3, 2);
  x.setConstant(0.5);
  const FlowDataset ds = make_dataset(x, {0, 1, 0});
  const FlowDataset s = stack_feature(ds, {0, 1, 0});
  CHECK(s.cols() == 3);
  CHECK(s.features().col(2) == Vector{{0.0, 1.0, 0.0}});
  CHECK(s.schema().feature_names.back() == kEfcColumn);
  CHECK(s.features().minCoeff() >= 0.0);
  CHECK(s.features().maxCoeff() <= 1.0);
  CHECK_THROWS_AS(stack_feature(s, {0, 1, 0}), EfcError);
  CHECK_THROWS_AS(stack_feature(ds, {0, 1}), EfcError);
}

TEST_CASE("model persistence round-trips bit exactly") {
  TempDir dir("efc");
  const FlowDataset ds = benign_sample(500, 4, 13);
  const EfcModel m = fit_efc(ds, config(8, 0.5));
  save_efc(m, dir / "m.efc");
  const EfcModel r = load_efc(dir / "m.efc");
  CHECK(r.couplings == m.couplings);
  CHECK(r.fields == m.fields);
  CHECK(r.cutoff == m.cutoff);
  CHECK(r.discretizer.edges == m.discretizer.edges);
  CHECK(r.feature_names == m.feature_names);
  CHECK(r.config.pseudocount == m.config.pseudocount);
  CHECK(energies(r, ds) == energies(m, ds));
  testutil::write_text(dir / "junk.efc", "EFCM");
  CHECK_THROWS_AS(load_efc(dir / "junk.efc"), EfcError);
}
