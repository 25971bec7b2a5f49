#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "collapse/network.hpp"
#include "collapse/trainer.hpp"
#include "oracles.hpp"

using namespace collapse;

namespace {

DataModelConfig small_config(int n_c, int s_c, int L, int K) {
    DataModelConfig c;
    c.n_c = n_c;
    c.s_c = s_c;
    c.L = L;
    c.K = K;
    c.mu = word_distribution(DistributionKind::uniform, s_c);
    c.lambda = 0.01;
    return c;
}

Sentence random_sentence(const DataModelConfig& c, Rng& rng) {
    Sentence x;
    for (int l = 0; l < c.L; ++l)
        x.words.push_back(Word{rng.uniform_int(c.n_c), rng.uniform_int(c.s_c)});
    return x;
}

}  // namespace

TEST_CASE("layer_norm fixed points, shift/scale removal, degenerate input") {
    Eigen::VectorXd v(4);
    v << 1, -1, 1, -1;
    CHECK((layer_norm(v, 0.0) - v).lpNorm<Eigen::Infinity>() < 1e-15);

    Eigen::VectorXd shifted(4);
    shifted << 2, 0, 2, 0;
    CHECK((layer_norm(shifted, 0.0) - v).lpNorm<Eigen::Infinity>() < 1e-15);

    Eigen::VectorXd constant = Eigen::VectorXd::Constant(4, 5.0);
    CHECK_THROWS_AS(layer_norm(constant, 0.0), degenerate_input_error);
    CHECK_NOTHROW(layer_norm(constant, 1e-8));
}

TEST_CASE("layer_norm invariance and normalization properties") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 2 + rng.uniform_int(30);
        Eigen::VectorXd v(d);
        for (int i = 0; i < d; ++i) v[i] = rng.gaussian();
        const Eigen::VectorXd base = layer_norm(v, 0.0);
        CHECK(std::abs(base.mean()) < 1e-12);
        CHECK(base.squaredNorm() == doctest::Approx(double(d)).epsilon(1e-12));

        const double a = 0.1 + 5.0 * rng.uniform01();
        const double b = 3.0 * rng.gaussian();
        const Eigen::VectorXd affine =
            layer_norm((a * v.array() + b).matrix(), 0.0);
        CHECK((affine - base).lpNorm<Eigen::Infinity>() < 1e-12);
    }
}

TEST_CASE("forward basics") {
    const DataModelConfig c = small_config(2, 2, 1, 1);
    Rng rng(5);
    Weights w = init_weights(6, c.n_w(), 1, 1, rng);

    // single word, single class: plain score is the inner product
    Sentence x{{Word{1, 0}}};
    const Eigen::VectorXd y = forward(NetworkKind::plain(), w, x, c);
    CHECK(y[0] == doctest::Approx(w.u(0, 0).dot(w.W.col(2))).epsilon(1e-15));

    // zero embeddings give zero scores
    w.W.setZero();
    CHECK(forward(NetworkKind::plain(), w, x, c).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("forward is separately linear in W and U for the plain network") {
    const DataModelConfig c = small_config(3, 2, 4, 5);
    Rng rng(6);
    Weights w = init_weights(8, c.n_w(), c.K, c.L, rng);
    const Sentence x = random_sentence(c, rng);
    const Eigen::VectorXd y = forward(NetworkKind::plain(), w, x, c);

    Weights w2 = w;
    w2.W *= 2.0;
    CHECK((forward(NetworkKind::plain(), w2, x, c) - 2.0 * y).lpNorm<Eigen::Infinity>() < 1e-12);
    Weights w3 = w;
    w3.Uhat *= -3.0;
    CHECK((forward(NetworkKind::plain(), w3, x, c) + 3.0 * y).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("cross_entropy values and shift invariance") {
    Eigen::VectorXd zeros = Eigen::VectorXd::Zero(7);
    CHECK(cross_entropy(zeros, 3) == doctest::Approx(std::log(7.0)).epsilon(1e-14));

    Eigen::VectorXd two(2);
    two << 10.0, 0.0;
    CHECK(cross_entropy(two, 0) == doctest::Approx(4.5398899216870535e-05).epsilon(1e-12));

    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd y(5);
        for (int i = 0; i < 5; ++i) y[i] = 3.0 * rng.gaussian();
        const double a = 10.0 * rng.gaussian();
        const int k = rng.uniform_int(5);
        CHECK(std::abs(cross_entropy(y, k) -
                       cross_entropy((y.array() + a).matrix(), k)) < 1e-12);
    }
}

TEST_CASE("classify breaks ties toward the lowest index") {
    Eigen::VectorXd y(2);
    y << 0.1, 0.9;
    CHECK(classify(y) == 1);
    y << 0.5, 0.5;
    CHECK(classify(y) == 0);
    Eigen::VectorXd one(1);
    one << -2.0;
    CHECK(classify(one) == 0);
    // score shifts leave the decision unchanged
    y << 1.0, 2.0;
    CHECK(classify((y.array() + 123.0).matrix()) == classify(y));
}

TEST_CASE("margin is the forward score difference") {
    const DataModelConfig c = small_config(2, 3, 3, 4);
    Rng rng(11);
    Weights w = init_weights(5, c.n_w(), c.K, c.L, rng);
    for (auto kind : {NetworkKind::plain(), NetworkKind::layernorm(0.0)}) {
        for (int trial = 0; trial < 10; ++trial) {
            const Sentence x = random_sentence(c, rng);
            const Eigen::VectorXd y = forward(kind, w, x, c);
            const int k = rng.uniform_int(c.K);
            const int j = rng.uniform_int(c.K);
            CHECK(margin(kind, w, x, k, j, c) == doctest::Approx(y[k] - y[j]).epsilon(1e-12));
            CHECK(margin(kind, w, x, k, k, c) == doctest::Approx(0.0));
        }
    }
}

TEST_CASE("backward matches central finite differences on random instances") {
    Rng rng(13);
    int checked = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const int n_c = 2 + rng.uniform_int(2);
        const int s_c = 2 + rng.uniform_int(2);
        const int L = 2 + rng.uniform_int(2);
        const int K = 2 + rng.uniform_int(4);
        const int d = 5 + rng.uniform_int(5);
        DataModelConfig c = small_config(n_c, s_c, L, K);
        const Weights w = init_weights(d, c.n_w(), K, L, rng);

        std::vector<Sample> batch;
        for (int i = 0; i < 6; ++i) batch.push_back({random_sentence(c, rng), rng.uniform_int(K)});

        const NetworkKind kind =
            trial % 2 == 0 ? NetworkKind::plain() : NetworkKind::layernorm(0.0);
        const double lambda_W = kind.is_layernorm() ? 0.0 : 0.013;
        const double lambda_U = 0.007;
        const Gradients analytic = backward(kind, w, batch, lambda_W, lambda_U, c);
        const Gradients numeric = oracles::finite_difference(
            w,
            [&](const Weights& ww) {
                double loss = 0.0;
                for (const Sample& s : batch)
                    loss += cross_entropy(forward(kind, ww, s.x, c), s.label);
                loss /= batch.size();
                return loss + 0.5 * lambda_W * ww.W.squaredNorm() +
                       0.5 * lambda_U * ww.Uhat.squaredNorm();
            });
        CHECK(oracles::relative_gradient_error(analytic, numeric) <= 1e-6);
        ++checked;
    }
    CHECK(checked >= 40);  // 20 instances per network variant
}

TEST_CASE("backward matches the spec instance d=7 n_c=2 s_c=2 L=3 K=4") {
    DataModelConfig c = small_config(2, 2, 3, 4);
    Rng rng(17);
    const Weights w = init_weights(7, c.n_w(), 4, 3, rng);
    std::vector<Sample> batch;
    for (int i = 0; i < 8; ++i) batch.push_back({random_sentence(c, rng), rng.uniform_int(4)});
    // the 1e-8 epsilon is what training uses; its Jacobian differs from the
    // epsilon-free one and gets its own finite-difference pass
    for (auto kind :
         {NetworkKind::plain(), NetworkKind::layernorm(0.0), NetworkKind::layernorm(1e-8)}) {
        const double lambda_W = kind.is_layernorm() ? 0.0 : 0.01;
        const Gradients analytic = backward(kind, w, batch, lambda_W, 0.01, c);
        const Gradients numeric = oracles::finite_difference(
            w,
            [&](const Weights& ww) {
                double loss = 0.0;
                for (const Sample& s : batch)
                    loss += cross_entropy(forward(kind, ww, s.x, c), s.label);
                loss /= batch.size();
                return loss + 0.5 * lambda_W * ww.W.squaredNorm() +
                       0.5 * 0.01 * ww.Uhat.squaredNorm();
            });
        CHECK(oracles::relative_gradient_error(analytic, numeric) <= 1e-6);
    }
}

TEST_CASE("regularizer enters the gradient linearly; saturated losses vanish") {
    DataModelConfig c = small_config(2, 2, 2, 3);
    Rng rng(19);
    const Weights w = init_weights(6, c.n_w(), 3, 2, rng);
    std::vector<Sample> batch{{random_sentence(c, rng), 1}};

    const Gradients without = backward(NetworkKind::plain(), w, batch, 0.0, 0.0, c);
    const Gradients with = backward(NetworkKind::plain(), w, batch, 0.0, 0.25, c);
    CHECK((with.dUhat - without.dUhat - 0.25 * w.Uhat).lpNorm<Eigen::Infinity>() < 1e-15);
    CHECK((with.dW - without.dW).lpNorm<Eigen::Infinity>() == 0.0);

    // enormous separating weights saturate the softmax and kill the loss term
    Weights big = w;
    big.W *= 50.0;
    big.Uhat *= 50.0;
    std::vector<Sample> sep;
    Sentence x{{Word{0, 0}, Word{1, 1}}};
    const Eigen::VectorXd y = forward(NetworkKind::plain(), big, x, c);
    sep.push_back({x, classify(y)});
    const Gradients g = backward(NetworkKind::plain(), big, sep, 0.0, 0.0, c);
    CHECK(std::sqrt(g.squared_norm()) < 1e-8);
}

TEST_CASE("weights round-trip through the binary format bitwise") {
    Rng rng(23);
    const Weights w = init_weights(5, 6, 3, 2, rng);
    const auto path = std::filesystem::temp_directory_path() / "collapse_test_weights.bin";
    save_weights(path, w, NetworkKind::layernorm(1e-8));
    const LoadedWeights loaded = load_weights(path);
    CHECK(loaded.kind.is_layernorm());
    CHECK(loaded.kind.layernorm_epsilon == 1e-8);
    CHECK(loaded.weights.K == 3);
    CHECK(loaded.weights.L == 2);
    REQUIRE(loaded.weights.W.size() == w.W.size());
    CHECK((loaded.weights.W.array() == w.W.array()).all());
    CHECK((loaded.weights.Uhat.array() == w.Uhat.array()).all());

    // truncated file is rejected
    std::filesystem::resize_file(path, 40);
    CHECK_THROWS_AS(load_weights(path), config_error);
    std::filesystem::remove(path);
}

TEST_CASE("the row-major U view is the reshape of Uhat") {
    Rng rng(29);
    Weights w = init_weights(4, 4, 3, 2, rng);
    const auto rows = w.u_rows();
    for (int k = 0; k < w.K; ++k)
        for (int l = 0; l < w.L; ++l)
            for (int i = 0; i < w.d(); ++i)
                CHECK(rows(k, l * w.d() + i) == w.u(k, l)[i]);
}
