#include "collapse/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace collapse {

void TrainConfig::validate() const {
    if (n_spl < 1) throw config_error("train: n_spl must be >= 1");
    if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw config_error("train: learning_rate must be positive");
    if (lambda < 0.0) throw config_error("train: lambda must be non-negative");
    if (max_epochs < 1) throw config_error("train: max_epochs must be >= 1");
    if (plateau_tol < 0.0) throw config_error("train: plateau_tol must be non-negative");
}

Dataset make_dataset(const LatentSet& latents, const DataModelConfig& config, int n_spl,
                     Rng& rng) {
    Dataset ds;
    ds.n_spl = n_spl;
    ds.samples.reserve(static_cast<size_t>(latents.K()) * n_spl);
    for (int k = 0; k < latents.K(); ++k) {
        Rng stream = rng.fork(static_cast<std::uint64_t>(k));
        for (int i = 0; i < n_spl; ++i)
            ds.samples.push_back(Sample{sample_sentence(latents.latents[k], config, stream), k});
    }
    return ds;
}

double empirical_risk(NetworkKind kind, const Weights& weights, const Dataset& dataset,
                      double lambda, const DataModelConfig& config) {
    double loss = 0.0;
    for (const Sample& s : dataset.samples)
        loss += cross_entropy(forward(kind, weights, s.x, config), s.label);
    loss /= static_cast<double>(dataset.samples.size());
    loss += 0.5 * lambda * weights.Uhat.squaredNorm();
    if (!kind.is_layernorm()) loss += 0.5 * lambda * weights.W.squaredNorm();
    return loss;
}

TrainResult sgd_train(NetworkKind kind, const Dataset& dataset, const TrainConfig& config,
                      int embedding_dim, const DataModelConfig& data,
                      const EpochCallback& on_epoch) {
    config.validate();
    if (dataset.samples.empty()) throw config_error("sgd_train: empty dataset");

    Rng rng(config.seed);
    TrainResult result;
    result.weights = init_weights(embedding_dim, data.n_w(), data.K, data.L, rng);
    Weights& w = result.weights;

    const double lambda_W = kind.is_layernorm() ? 0.0 : config.lambda;
    const int n = static_cast<int>(dataset.samples.size());
    const double initial_risk = empirical_risk(kind, w, dataset, config.lambda, data);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<Sample> batch;
    batch.reserve(config.batch_size);

    double previous = initial_risk;
    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);

        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += config.batch_size) {
            const int stop = std::min(start + config.batch_size, n);
            batch.clear();
            for (int i = start; i < stop; ++i) batch.push_back(dataset.samples[order[i]]);
            double batch_loss = 0.0;
            Gradients g = backward(kind, w, batch, lambda_W, config.lambda, data, &batch_loss);
            epoch_loss += batch_loss * (stop - start);
            w.W -= config.learning_rate * g.dW;
            w.Uhat -= config.learning_rate * g.dUhat;
        }
        double risk = epoch_loss / n + 0.5 * config.lambda * w.Uhat.squaredNorm();
        if (!kind.is_layernorm()) risk += 0.5 * config.lambda * w.W.squaredNorm();
        result.risk_history.push_back(risk);
        if (on_epoch) on_epoch(epoch + 1, risk);

        if (risk > 10.0 * initial_risk)
            throw diverged_error("sgd_train: risk exceeded 10x its initial value");
        if (std::abs(previous - risk) < config.plateau_tol) break;
        previous = risk;
    }
    return result;
}

namespace {

// Correct classifications among n_test fresh draws for classes [k_begin, k_end).
long evaluate_range(NetworkKind kind, const Weights& weights, const LatentSet& latents,
                    const DataModelConfig& config, int n_test, const Rng& base, int k_begin,
                    int k_end) {
    const int d = weights.d();
    const int L = weights.L;
    const int chunk = std::max(1, 4096 / std::max(1, n_test));  // classes per GEMM
    Eigen::MatrixXd X(static_cast<Eigen::Index>(L) * d, 0);
    long correct = 0;
    for (int k0 = k_begin; k0 < k_end; k0 += chunk) {
        const int k1 = std::min(k0 + chunk, k_end);
        const int cols = (k1 - k0) * n_test;
        X.resize(Eigen::NoChange, cols);
        for (int k = k0; k < k1; ++k) {
            Rng stream = base.fork(static_cast<std::uint64_t>(k));
            for (int i = 0; i < n_test; ++i) {
                const Sentence x = sample_sentence(latents.latents[k], config, stream);
                const Eigen::Index col = static_cast<Eigen::Index>(k - k0) * n_test + i;
                for (int l = 0; l < L; ++l) {
                    Eigen::VectorXd v =
                        weights.W.col(word_column(x.words[l].alpha, x.words[l].beta, config.s_c));
                    if (kind.is_layernorm()) v = layer_norm(v, kind.layernorm_epsilon);
                    X.col(col).segment(static_cast<Eigen::Index>(l) * d, d) = v;
                }
            }
        }
        const Eigen::MatrixXd scores = weights.u_rows() * X;  // K x cols
        for (int j = 0; j < cols; ++j) {
            const int k = k0 + j / n_test;
            correct += classify(scores.col(j)) == k;
        }
    }
    return correct;
}

}  // namespace

double evaluate_accuracy(NetworkKind kind, const Weights& weights, const LatentSet& latents,
                         const DataModelConfig& config, int n_test, Rng& rng, int threads) {
    if (n_test < 1) throw config_error("evaluate_accuracy: n_test must be >= 1");
    const int K = latents.K();
    const Rng base = rng.fork(0x657661ULL);  // single derivation, then per-class substreams

    long correct = 0;
    if (threads <= 1 || K < 2 * threads) {
        correct = evaluate_range(kind, weights, latents, config, n_test, base, 0, K);
    } else {
        std::vector<long> partial(threads, 0);
        std::vector<std::thread> pool;
        const int per = (K + threads - 1) / threads;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                const int k0 = t * per;
                const int k1 = std::min(K, k0 + per);
                if (k0 < k1)
                    partial[t] = evaluate_range(kind, weights, latents, config, n_test, base,
                                                k0, k1);
            });
        for (auto& th : pool) th.join();
        for (long c : partial) correct += c;
    }
    return static_cast<double>(correct) / (static_cast<double>(K) * n_test);
}

}  // namespace collapse
