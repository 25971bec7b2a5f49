#include <doctest.h>

#include <cmath>

#include "collapse/diagnostics.hpp"
#include "oracles.hpp"

using namespace collapse;

namespace {

TheoryParams make_params(int n_c, int s_c, int L, int K, int d, double lambda) {
    TheoryParams p;
    p.n_c = n_c;
    p.s_c = s_c;
    p.L = L;
    p.K = K;
    p.d = d;
    p.lambda = lambda;
    p.mu = word_distribution(DistributionKind::uniform, s_c);
    return p;
}

}  // namespace

TEST_CASE("embedding norm stats at constructed configurations") {
    const TheoryParams p = make_params(2, 3, 2, 4, 8, 0.01);
    const LatentSet full = full_latent_set(2, 2);
    Rng rng(1);

    CollapseConfig one;
    one.kind = CollapseKind::type1;
    one.c = 1.3;
    one.c_prime = 0.5;
    one.frame = equiangular_frame(2, 8, false, rng);
    const Weights w1 = build_collapse_config(one, full, p);
    const NormStats s1 = embedding_norm_stats(w1.W, false, p.s_c);
    CHECK(s1.mean == doctest::Approx(1.3).epsilon(1e-12));
    CHECK(s1.stddev < 1e-12);

    CollapseConfig three;
    three.kind = CollapseKind::type3;
    three.c = 0.4;
    three.r = Eigen::Vector3d(1.5, 1.0, 0.5);
    three.frame = one.frame;
    const Weights w3 = build_collapse_config(three, full, p);
    const NormStats s3 = embedding_norm_stats(w3.W, true, p.s_c);
    REQUIRE(s3.per_rank_mean.size() == 3);
    for (int b = 0; b < 3; ++b) {
        CHECK(s3.per_rank_mean[b] == doctest::Approx(three.r[b]).epsilon(1e-12));
        CHECK(s3.per_rank_std[b] < 1e-12);
    }
}

TEST_CASE("concept alignment separates collapsed from random embeddings") {
    const TheoryParams p = make_params(3, 4, 2, 9, 32, 0.01);
    const LatentSet full = full_latent_set(3, 2);
    Rng rng(2);
    CollapseConfig cfg;
    cfg.kind = CollapseKind::type1;
    cfg.c = 0.9;
    cfg.c_prime = 0.7;
    cfg.frame = equiangular_frame(3, 32, false, rng);
    const Weights w = build_collapse_config(cfg, full, p);

    const AlignmentStats aligned = concept_alignment(w.W, p.n_c, p.s_c);
    for (double cosine : aligned.within_cosine) CHECK(cosine == doctest::Approx(1.0).epsilon(1e-12));
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            if (a != b)
                CHECK(aligned.cross_cosine(a, b) == doctest::Approx(-0.5).epsilon(1e-10));

    Eigen::MatrixXd random(100, 300);
    for (Eigen::Index j = 0; j < random.size(); ++j) random.data()[j] = rng.gaussian();
    const AlignmentStats iso = concept_alignment(random, 3, 100);
    CHECK(std::abs(iso.within_mean) < 0.05);

    // zero columns are excluded and counted
    Eigen::MatrixXd with_zero = w.W;
    with_zero.col(0).setZero();
    CHECK(concept_alignment(with_zero, p.n_c, p.s_c).excluded_zero_columns == 1);
}

TEST_CASE("equiangularity residual") {
    Rng rng(3);
    const Frame frame = equiangular_frame(4, 16, false, rng);
    const EquiangularityResidual exact = equiangularity_residual(frame.F);
    CHECK(exact.gram <= 1e-12);
    CHECK(exact.sum_norm <= 1e-12);

    // an orthonormal basis misses the target by +1/2 in every off-diagonal
    const EquiangularityResidual ortho =
        equiangularity_residual(Eigen::MatrixXd::Identity(5, 3));
    CHECK(ortho.gram == doctest::Approx(std::sqrt(6.0) / 2.0).epsilon(1e-12));
    CHECK(ortho.sum_norm == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));

    // small perturbations move the residual by O(eps)
    for (double eps : {1e-6, 1e-4, 1e-2}) {
        Eigen::MatrixXd perturbed = frame.F;
        perturbed(0, 0) += eps;
        const EquiangularityResidual r = equiangularity_residual(perturbed);
        CHECK(r.gram > 0.0);
        CHECK(r.gram < 10.0 * eps);
    }

    // rotation invariance
    Eigen::MatrixXd gauss(16, 16);
    for (Eigen::Index j = 0; j < gauss.size(); ++j) gauss.data()[j] = rng.gaussian();
    const Eigen::MatrixXd Q =
        Eigen::HouseholderQR<Eigen::MatrixXd>(gauss).householderQ() *
        Eigen::MatrixXd::Identity(16, 16);
    Eigen::MatrixXd some = gauss.leftCols(4);
    const double before = equiangularity_residual(some).gram;
    const double after = equiangularity_residual(Q * some).gram;
    CHECK(std::abs(before - after) < 1e-10);

    CHECK_THROWS_AS(equiangularity_residual(Eigen::MatrixXd::Zero(4, 2)), config_error);
}

TEST_CASE("pca singular values: collapse geometry and rank") {
    // type-I at full scale: two equal singular values, nothing else
    const TheoryParams p = make_params(3, 400, 15, 1000, 100, 0.001);
    Rng rng(4);
    Rng lat_rng(5);
    const LatentSet latents = sample_latents(p.data_config(), true, lat_rng);
    const double c = 1.42214;
    CollapseConfig cfg;
    cfg.kind = CollapseKind::type1;
    cfg.c = c;
    cfg.c_prime = 0.4;
    cfg.frame = equiangular_frame(3, 100, false, rng);
    const Weights w = build_collapse_config(cfg, latents, p);
    const auto sv = pca_singular_values(w.W, 3);
    const double expected = c * std::sqrt(1200.0 / 2.0);  // ~34.84, cf. 34.9/34.7 observed
    CHECK(std::abs(sv[0] - expected) <= 1e-8);
    CHECK(std::abs(sv[1] - expected) <= 1e-8);
    CHECK(sv[2] <= 1e-10);

    Eigen::MatrixXd rank1 = Eigen::VectorXd::LinSpaced(6, 1.0, 6.0) *
                            Eigen::RowVectorXd::LinSpaced(4, 1.0, 4.0);
    rank1.colwise() -= rank1.rowwise().mean().eval();
    const auto sv1 = pca_singular_values(rank1, 4);
    CHECK(sv1[0] > 0.0);
    for (int i = 1; i < 4; ++i) CHECK(sv1[i] <= 1e-12 * sv1[0]);
}

TEST_CASE("pca matches a one-sided Jacobi oracle") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd M(10, 20);
        for (Eigen::Index j = 0; j < M.size(); ++j) M.data()[j] = rng.gaussian();
        Eigen::MatrixXd centered = M;
        centered.colwise() -= M.rowwise().mean().eval();
        const auto ours = pca_singular_values(M, 10);
        const auto reference = oracles::jacobi_singular_values(centered);
        for (int i = 0; i < 10; ++i) CHECK(std::abs(ours[i] - reference[i]) <= 1e-9);
    }
}

TEST_CASE("collapse_report and compare_to_theory") {
    const TheoryParams p = make_params(3, 4, 2, 9, 16, 0.01);
    const LatentSet full = full_latent_set(3, 2);
    Rng rng(7);
    const TheoryPrediction pred = minimize_h(p);
    CollapseConfig cfg;
    cfg.kind = CollapseKind::type1;
    cfg.c = pred.c;
    cfg.c_prime = pred.c_prime;
    cfg.frame = equiangular_frame(3, 16, false, rng);
    const Weights w = build_collapse_config(cfg, full, p);
    const DataModelConfig data = p.data_config();
    const CollapseReport report = collapse_report(NetworkKind::plain(), w, data, full);
    CHECK(report.embedding_norms.mean == doctest::Approx(pred.c).epsilon(1e-12));
    CHECK(report.embedding_equiangularity.gram <= 1e-10);
    CHECK(report.u_equiangularity.gram <= 1e-10);

    const auto rows = compare_to_theory(report, pred, 3, {});
    for (const auto& row : rows) CHECK(row.pass);

    // comparisons at the reference observation values
    CollapseReport observed = report;
    observed.embedding_norms.mean = 1.41;
    TheoryPrediction predicted = pred;
    predicted.predicted_norm = 1.42214;
    ComparisonTolerances tol;
    tol.norm = 0.15;
    CHECK(compare_to_theory(observed, predicted, 3, tol).front().pass);
    observed.embedding_norms.mean = 0.61;
    predicted.predicted_norm = 0.61602;
    tol.norm = 0.06;
    CHECK(compare_to_theory(observed, predicted, 3, tol).front().pass);

    // a zero report against a nonzero prediction must fail
    Weights zero = w;
    zero.W.setZero();
    zero.Uhat.setZero();
    // zero vectors cannot be analyzed for directions; norms alone suffice
    CollapseReport zero_report;
    zero_report.embedding_norms = embedding_norm_stats(zero.W, false, p.s_c);
    const auto zero_rows = compare_to_theory(zero_report, predicted, 3, tol);
    CHECK_FALSE(zero_rows.front().pass);
}
