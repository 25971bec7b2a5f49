#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <span>
#include <vector>

#include "collapse/common.hpp"
#include "collapse/data_model.hpp"

namespace collapse {

struct NetworkKind {
    enum class Variant { plain, layernorm };
    Variant variant = Variant::plain;
    double layernorm_epsilon = 0.0;

    static NetworkKind plain() { return {Variant::plain, 0.0}; }
    static NetworkKind layernorm(double epsilon = 0.0) { return {Variant::layernorm, epsilon}; }
    bool is_layernorm() const { return variant == Variant::layernorm; }
};

// Learnable parameters. W holds one word embedding per column. The head is
// stored as Uhat (d x KL) whose columns are the vectors u_{k,l}; the K x Ld
// matrix U of the score map is the row-major view of the same buffer, so the
// reshape between the two layouts round-trips bitwise.
struct Weights {
    Eigen::MatrixXd W;     // d x n_w
    Eigen::MatrixXd Uhat;  // d x K*L
    int K = 0;
    int L = 0;

    int d() const { return static_cast<int>(W.rows()); }
    int n_w() const { return static_cast<int>(W.cols()); }

    Eigen::MatrixXd::ColXpr u(int k, int l) { return Uhat.col(static_cast<Eigen::Index>(k) * L + l); }
    Eigen::MatrixXd::ConstColXpr u(int k, int l) const {
        return Uhat.col(static_cast<Eigen::Index>(k) * L + l);
    }
    // d x L block of head vectors seeing class k.
    auto uhat_k(int k) const { return Uhat.middleCols(static_cast<Eigen::Index>(k) * L, L); }

    // Row-major K x (L d) view; row k is the concatenation u_{k,1},...,u_{k,L}.
    using RowMajorView =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using MutableRowMajorView =
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    RowMajorView u_rows() const {
        return RowMajorView(Uhat.data(), K, static_cast<Eigen::Index>(L) * d());
    }
    MutableRowMajorView u_rows() {
        return MutableRowMajorView(Uhat.data(), K, static_cast<Eigen::Index>(L) * d());
    }
};

// i.i.d. Gaussian entries with standard deviation 1/sqrt(d) for both matrices,
// which keeps initial scores O(1).
Weights init_weights(int d, int n_w, int K, int L, Rng& rng);

// Parameter-free LayerNorm: (v - mean) / sqrt(var + epsilon). With epsilon = 0
// the output has zero mean and norm exactly sqrt(d); a constant input is then
// rejected as degenerate.
Eigen::VectorXd layer_norm(const Eigen::VectorXd& v, double epsilon);

// d x L feature matrix the head sees: word embeddings of x, LayerNormed
// column-wise for the h* variant.
Eigen::MatrixXd features(NetworkKind kind, const Weights& weights, const std::vector<int>& cols);

Eigen::VectorXd forward(NetworkKind kind, const Weights& weights, const Sentence& x,
                        const DataModelConfig& config);

double cross_entropy(const Eigen::VectorXd& scores, int label);

// argmax with ties broken toward the lowest index
int classify(const Eigen::VectorXd& scores);

// <Uhat_k - Uhat_j, features(x)> for x in class k.
double margin(NetworkKind kind, const Weights& weights, const Sentence& x, int k, int j,
              const DataModelConfig& config);

struct Sample {
    Sentence x;
    int label = 0;
};

struct Gradients {
    Eigen::MatrixXd dW;
    Eigen::MatrixXd dUhat;
    double squared_norm() const { return dW.squaredNorm() + dUhat.squaredNorm(); }
};

// Exact gradient of
//   (1/|batch|) sum cross_entropy(forward(x), k)
//   + (lambda_W/2) ||W||_F^2 + (lambda_U/2) ||U||_F^2.
// The h* variant backpropagates through the LayerNorm Jacobian
// J = (I - 1 1^T/d - phi(v) phi(v)^T/d) / sqrt(var + eps); its callers pass
// lambda_W = 0 since that risk does not penalize W.
// mean_loss, when given, receives the batch-mean data loss (no regularizer).
Gradients backward(NetworkKind kind, const Weights& weights, std::span<const Sample> batch,
                   double lambda_W, double lambda_U, const DataModelConfig& config,
                   double* mean_loss = nullptr);

// Flat binary checkpoint: six little-endian u64/f64 header fields
// (d, n_w, K, L, kind, epsilon) followed by row-major W then U.
void save_weights(const std::filesystem::path& path, const Weights& weights, NetworkKind kind);
struct LoadedWeights {
    Weights weights;
    NetworkKind kind;
};
LoadedWeights load_weights(const std::filesystem::path& path);

}  // namespace collapse
