#pragma once

#include <functional>
#include <vector>

#include "collapse/data_model.hpp"
#include "collapse/network.hpp"

namespace collapse {

struct TrainConfig {
    int n_spl = 5;
    int batch_size = 100;
    double learning_rate = 0.1;
    double lambda = 0.001;
    int max_epochs = 500;
    double plateau_tol = 1e-6;  // on the change of epoch-mean risk
    std::uint64_t seed = 0;

    void validate() const;
};

struct Dataset {
    std::vector<Sample> samples;  // grouped by class, n_spl per class
    int n_spl = 0;
};

// n_spl i.i.d. draws from D_{z_k} for every class, each class on its own
// RNG substream.
Dataset make_dataset(const LatentSet& latents, const DataModelConfig& config, int n_spl,
                     Rng& rng);

// (1/(K n_spl)) sum loss + (lambda/2)(||U||^2 + ||W||^2); the W term is
// omitted for the layernorm variant.
double empirical_risk(NetworkKind kind, const Weights& weights, const Dataset& dataset,
                      double lambda, const DataModelConfig& config);

struct TrainResult {
    Weights weights;
    std::vector<double> risk_history;  // one entry per completed epoch
};

using EpochCallback = std::function<void(int epoch, double risk)>;

// Shuffled minibatch SGD at a constant step size. One epoch is one pass; the
// last incomplete minibatch is used with the gradient normalized by its
// actual size. Stops at max_epochs or when the epoch-mean risk changes by
// less than plateau_tol; aborts if the risk exceeds 10x its initial value.
TrainResult sgd_train(NetworkKind kind, const Dataset& dataset, const TrainConfig& config,
                      int embedding_dim, const DataModelConfig& data,
                      const EpochCallback& on_epoch = {});

// Fraction of fresh samples (n_test per class, per-class substreams of the
// given rng) classified correctly. threads > 1 splits classes across workers;
// the result does not depend on the split.
double evaluate_accuracy(NetworkKind kind, const Weights& weights, const LatentSet& latents,
                         const DataModelConfig& config, int n_test, Rng& rng, int threads = 1);

}  // namespace collapse
