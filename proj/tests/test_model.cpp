// Parameters, layer propagation, forward pass and scoring.

#include <catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "wavecf/graph.hpp"
#include "wavecf/model.hpp"

using namespace wavecf;

namespace {

struct Fixture {
  InteractionSet data;
  SpectralDecomposition decomp;
  BoxCoxResult bc;
  AdaptiveFilter filter;

  Fixture(std::size_t m, std::size_t k, double density, Index q, double t, std::uint64_t seed,
          FilterOptions opt = {}) {
    std::mt19937_64 rng(seed);
    data = oracle::random_bipartite(m, k, density, rng);
    LanczosOptions lo;
    lo.seed = seed;
    decomp = eigensolve(build_laplacian(data), q, lo);
    bc = boxcox_fit(decomp.shifted);
    filter = make_filter(decomp, bc, t, opt);
  }
};

ModelConfig config(Index layers, Index dim, std::uint64_t seed = 3) {
  ModelConfig c;
  c.layers = layers;
  c.dim = dim;
  c.seed = seed;
  return c;
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("initialization is deterministic and well scaled", "[model][init]") {
  auto a = init_params(config(3, 8), 30, 20, 12);
  auto b = init_params(config(3, 8), 30, 20, 12);
  CHECK(a == b);
  auto c = init_params(config(3, 8, 4), 30, 20, 12);
  CHECK_FALSE(a == c);
  REQUIRE(a.w.size() == 3);
  const double bound = std::sqrt(6.0 / 16.0);
  for (const auto& w : a.w) {
    CHECK(w.rows() == 8);
    CHECK(w.cols() == 8);
    CHECK(w.cwiseAbs().maxCoeff() <= bound);
  }
  for (const auto& t : a.theta) CHECK(t == Vector::Ones(12));
  CHECK(a.x0.rows() == 30);
  CHECK(a.y0.rows() == 20);
}

TEST_CASE("embedding sample mean is within three standard errors", "[model][init]") {
  auto p = init_params(config(1, 100), 10000, 10, 2);
  REQUIRE(p.x0.size() == 1000000);
  CHECK(std::abs(p.x0.mean()) <= 3 * 0.01 / 1e3);
  const double var = (p.x0.array() - p.x0.mean()).square().mean();
  CHECK(std::sqrt(var) == Catch::Approx(0.01).epsilon(0.01));
}

TEST_CASE("saturated attenuation gives one half everywhere", "[model][layer]") {
  Fixture f(12, 10, 0.2, 22, 0.5, 1);
  SpectralPropagator prop(f.decomp, f.filter);
  auto p = init_params(config(1, 4), 12, 10, f.decomp.q());
  p.theta[0].setConstant(-1e6);
  Matrix out = propagate_layer(stack_embeddings(p), 0, p, prop);
  CHECK((out.array() == 0.5).all());
}

TEST_CASE("two-node layer matches a dense evaluation", "[model][layer]") {
  auto data = make_interaction_set({{0, 0}}, {"u"}, {"i"});
  auto decomp = eigensolve(build_laplacian(data), 2, {});
  auto bc = boxcox_fit(decomp.shifted);
  const double t = 0.4;
  auto filter = make_filter(decomp, bc, t);

  // Independent pieces: oracle eigenvectors, response recomputed from the formula.
  auto ref = oracle::jacobi(oracle::dense_laplacian(data));
  Vector g(2), shifted = ref.values.array() + 1.0;
  for (Index i = 0; i < 2; ++i) {
    const double y = bc.kappa == 0.0 ? std::log(shifted[i])
                                     : (std::pow(shifted[i], bc.kappa) - 1.0) / bc.kappa;
    const int band = y < bc.mean ? 0 : y < bc.mean + bc.stddev ? 1 : y < bc.mean + 2 * bc.stddev ? 2 : 3;
    const double mult = band == 0 ? 1 + 2 * t / bc.sum : 1 + (band + 2) * t / bc.sum + bc.stddev;
    g[i] = std::exp(-std::pow(shifted[i], bc.kappa) * mult);
  }
  Vector theta(2);
  theta << 0.7, -1.3;
  Vector h = (g.cwiseProduct(theta)).unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
  Matrix g_mat = Matrix::Zero(2, 2), g_inv = Matrix::Zero(2, 2), mid = Matrix::Zero(2, 2);
  for (Index i = 0; i < 2; ++i) {
    g_mat(i, i) = g[i];
    g_inv(i, i) = 1.0 / g[i];
    mid(i, i) = shifted[i] * h[i];
  }
  const Matrix& v = ref.vectors;
  Matrix psi = v * g_mat * v.transpose();
  Matrix psi_inv = v * g_inv * v.transpose();
  Matrix op = psi * (v * mid * v.transpose()) * psi_inv;

  ModelParams p;
  p.x0 = Matrix::Constant(1, 1, 0.3);
  p.y0 = Matrix::Constant(1, 1, -0.8);
  p.w = {Matrix::Constant(1, 1, 1.7)};
  p.theta = {theta};
  Matrix z = stack_embeddings(p);
  Matrix want = (op * z * p.w[0]).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });

  SpectralPropagator fused(decomp, filter);
  CHECK(max_abs(propagate_layer(z, 0, p, fused) - want) <= 1e-10);
  auto pair = build_wavelet_pair(decomp, filter, 0.0);
  SpectralPropagator mat(decomp, filter, &pair);
  CHECK(max_abs(propagate_layer(z, 0, p, mat) - want) <= 1e-10);
}

TEST_CASE("full-spectrum operator equals the diagonal conjugation", "[model][layer]") {
  for (auto mode : {InverseMode::reciprocal, InverseMode::negated_scale}) {
    FilterOptions opt;
    opt.inverse = mode;
    Fixture f(14, 11, 0.2, 25, 0.9, 8, opt);
    auto pair = build_wavelet_pair(f.decomp, f.filter, 0.0);
    SpectralPropagator fused(f.decomp, f.filter), mat(f.decomp, f.filter, &pair);
    Vector theta = Vector::LinSpaced(25, -1.0, 2.0);
    Vector h = fused.attenuation(theta);
    Matrix a = Matrix::Random(25, 3), sin;
    Matrix lhs = mat.apply(a, mat.diagonal(h), sin);
    Matrix dense = f.decomp.phi *
                   (f.filter.response.cwiseProduct(f.decomp.shifted).cwiseProduct(h).cwiseProduct(
                        f.filter.inverse_response))
                       .asDiagonal() *
                   f.decomp.phi.transpose();
    CHECK(max_abs(lhs - dense * a) <= 1e-8);
    CHECK(max_abs(fused.apply(a, fused.diagonal(h), sin) - dense * a) <= 1e-8);
  }
}

TEST_CASE("forward pass shapes, range and determinism", "[model][forward]") {
  Fixture f(60, 50, 0.08, 40, 1.0, 5);
  SpectralPropagator prop(f.decomp, f.filter);
  auto p = init_params(config(3, 64), 60, 50, f.decomp.q());
  auto tr = forward(p, prop);
  CHECK(tr.users.rows() == 60);
  CHECK(tr.users.cols() == 256);
  CHECK(tr.items.cols() == 256);
  CHECK(tr.users.leftCols(64) == p.x0);
  CHECK(tr.items.leftCols(64) == p.y0);
  for (Index l = 1; l <= 3; ++l) {
    const auto& z = tr.z[static_cast<std::size_t>(l)];
    CHECK((z.array() > 0).all());
    CHECK((z.array() < 1).all());
    CHECK(z.allFinite());
  }
  auto again = forward(p, prop);
  CHECK(again.users == tr.users);
  CHECK(again.items == tr.items);
}

TEST_CASE("zero-layer seam returns the inputs", "[model][forward]") {
  Fixture f(10, 8, 0.3, 18, 1.0, 2);
  SpectralPropagator prop(f.decomp, f.filter);
  auto p = init_params(config(1, 4), 10, 8, f.decomp.q());
  p.w.clear();
  p.theta.clear();
  auto tr = forward(p, prop);
  CHECK(tr.users == p.x0);
  CHECK(tr.items == p.y0);
}

TEST_CASE("layer shape mismatches are reported", "[model][layer]") {
  Fixture f(10, 8, 0.3, 18, 1.0, 2);
  SpectralPropagator prop(f.decomp, f.filter);
  auto p = init_params(config(1, 4), 10, 8, f.decomp.q());
  CHECK_THROWS_AS(propagate_layer(Matrix::Zero(17, 4), 0, p, prop), ConfigError);
  CHECK_THROWS_AS(propagate_layer(Matrix::Zero(18, 5), 0, p, prop), ConfigError);
  CHECK_THROWS_AS(propagate_layer(Matrix::Zero(18, 4), 1, p, prop), ConfigError);
  p.theta[0] = Vector::Ones(3);
  CHECK_THROWS_AS(propagate_layer(Matrix::Zero(18, 4), 0, p, prop), ConfigError);
}

TEST_CASE("scoring by pair and by row agree", "[model][score]") {
  Fixture f(40, 30, 0.1, 30, 0.6, 9);
  SpectralPropagator prop(f.decomp, f.filter);
  auto p = init_params(config(2, 8), 40, 30, f.decomp.q());
  auto tr = forward(p, prop);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::uint32_t> uu(0, 39), ii(0, 29);
  std::vector<double> row(30);
  for (int n = 0; n < 100; ++n) {
    auto u = uu(rng), i = ii(rng);
    score_row(tr, u, row);
    CHECK(std::abs(row[i] - score(tr, u, i)) <= 1e-12);
  }
  tr.items.row(3).setZero();
  CHECK(score(tr, 5, 3) == 0.0);
  tr.items.row(4) = tr.users.row(6);
  CHECK(score(tr, 6, 4) == Catch::Approx(tr.users.row(6).squaredNorm()));
  CHECK(score(tr, 6, 4) >= 0);
}

TEST_CASE("embedding width above half the smaller side warns", "[model]") {
  ModelConfig c = config(3, 64);
  CHECK_NOTHROW(c.validate(300, 200));
  c.layers = 0;
  CHECK_THROWS_AS(c.validate(300, 200), ConfigError);
}
