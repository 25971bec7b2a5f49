#include "collapse/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace collapse {

static_assert(std::endian::native == std::endian::little,
              "weight checkpoints are little-endian");

Weights init_weights(int d, int n_w, int K, int L, Rng& rng) {
    Weights w;
    w.K = K;
    w.L = L;
    w.W.resize(d, n_w);
    w.Uhat.resize(d, static_cast<Eigen::Index>(K) * L);
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(d));
    for (Eigen::Index j = 0; j < w.W.cols(); ++j)
        for (Eigen::Index i = 0; i < w.W.rows(); ++i) w.W(i, j) = std_dev * rng.gaussian();
    for (Eigen::Index j = 0; j < w.Uhat.cols(); ++j)
        for (Eigen::Index i = 0; i < w.Uhat.rows(); ++i) w.Uhat(i, j) = std_dev * rng.gaussian();
    return w;
}

namespace {

struct LayerNormStats {
    double mean;
    double inv_std;  // 1 / sqrt(var + eps)
};

LayerNormStats layer_norm_stats(const Eigen::VectorXd& v, double epsilon) {
    const int d = static_cast<int>(v.size());
    if (d < 2) throw degenerate_input_error("layer_norm: input dimension must be >= 2");
    const double mean = v.mean();
    const double var = (v.array() - mean).square().sum() / d;
    if (epsilon == 0.0 && std::sqrt(var) < 1e-12)
        throw degenerate_input_error("layer_norm: constant vector has no normalized direction");
    return {mean, 1.0 / std::sqrt(var + epsilon)};
}

}  // namespace

Eigen::VectorXd layer_norm(const Eigen::VectorXd& v, double epsilon) {
    if (epsilon < 0.0) throw config_error("layer_norm: epsilon must be non-negative");
    const auto [mean, inv_std] = layer_norm_stats(v, epsilon);
    return (v.array() - mean).matrix() * inv_std;
}

Eigen::MatrixXd features(NetworkKind kind, const Weights& weights, const std::vector<int>& cols) {
    const int L = static_cast<int>(cols.size());
    Eigen::MatrixXd M(weights.d(), L);
    for (int l = 0; l < L; ++l) M.col(l) = weights.W.col(cols[l]);
    if (kind.is_layernorm())
        for (int l = 0; l < L; ++l)
            M.col(l) = layer_norm(M.col(l), kind.layernorm_epsilon);
    return M;
}

Eigen::VectorXd forward(NetworkKind kind, const Weights& weights, const Sentence& x,
                        const DataModelConfig& config) {
    const Eigen::MatrixXd M = features(kind, weights, word_columns(x, config));
    Eigen::VectorXd y(weights.K);
    for (int k = 0; k < weights.K; ++k)
        y[k] = (weights.uhat_k(k).array() * M.array()).sum();
    return y;
}

double cross_entropy(const Eigen::VectorXd& scores, int label) {
    if (label < 0 || label >= scores.size())
        throw config_error("cross_entropy: label out of range");
    const double top = scores.maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < scores.size(); ++j) sum += std::exp(scores[j] - top);
    return std::log(sum) - (scores[label] - top);
}

int classify(const Eigen::VectorXd& scores) {
    int best = 0;
    for (Eigen::Index j = 1; j < scores.size(); ++j)
        if (scores[j] > scores[best]) best = static_cast<int>(j);
    return best;
}

double margin(NetworkKind kind, const Weights& weights, const Sentence& x, int k, int j,
              const DataModelConfig& config) {
    const Eigen::MatrixXd M = features(kind, weights, word_columns(x, config));
    return ((weights.uhat_k(k) - weights.uhat_k(j)).array() * M.array()).sum();
}

Gradients backward(NetworkKind kind, const Weights& weights, std::span<const Sample> batch,
                   double lambda_W, double lambda_U, const DataModelConfig& config,
                   double* mean_loss) {
    if (batch.empty()) throw config_error("backward: batch must be non-empty");
    const int B = static_cast<int>(batch.size());
    const int d = weights.d();
    const int L = weights.L;
    const int K = weights.K;

    // Gather features column-stacked per sample: Xb(:, i) = vec(features(x_i)).
    Eigen::MatrixXd Xb(static_cast<Eigen::Index>(L) * d, B);
    // Kept only for the h* variant: normalized columns and their inverse stds.
    Eigen::MatrixXd inv_std;
    if (kind.is_layernorm()) inv_std.resize(L, B);
    std::vector<std::vector<int>> cols(B);
    for (int i = 0; i < B; ++i) {
        if (batch[i].label < 0 || batch[i].label >= K)
            throw config_error("backward: sample label out of range");
        cols[i] = word_columns(batch[i].x, config);
        for (int l = 0; l < L; ++l) {
            Eigen::VectorXd v = weights.W.col(cols[i][l]);
            if (kind.is_layernorm()) {
                const auto [mean, is] = layer_norm_stats(v, kind.layernorm_epsilon);
                v = (v.array() - mean).matrix() * is;
                inv_std(l, i) = is;
            }
            Xb.col(i).segment(static_cast<Eigen::Index>(l) * d, d) = v;
        }
    }

    // Scores and softmax residual G = p - onehot, divided by batch size.
    Eigen::MatrixXd S = weights.u_rows() * Xb;  // K x B
    double loss_sum = 0.0;
    for (int i = 0; i < B; ++i) {
        const double top = S.col(i).maxCoeff();
        Eigen::ArrayXd e = (S.col(i).array() - top).exp();
        const double denom = e.sum();
        loss_sum += std::log(denom) - (S(batch[i].label, i) - top);
        S.col(i) = (e / denom).matrix();
        S(batch[i].label, i) -= 1.0;
    }
    S /= static_cast<double>(B);
    if (mean_loss) *mean_loss = loss_sum / B;

    Gradients g;
    g.dUhat.resize(d, static_cast<Eigen::Index>(K) * L);
    Weights::MutableRowMajorView dU_rows(g.dUhat.data(), K, static_cast<Eigen::Index>(L) * d);
    dU_rows.noalias() = S * Xb.transpose();
    if (lambda_U != 0.0) g.dUhat += lambda_U * weights.Uhat;

    Eigen::MatrixXd dXb = weights.u_rows().transpose() * S;  // (L d) x B
    g.dW = lambda_W != 0.0 ? Eigen::MatrixXd(lambda_W * weights.W)
                           : Eigen::MatrixXd::Zero(d, weights.n_w());
    for (int i = 0; i < B; ++i)
        for (int l = 0; l < L; ++l) {
            Eigen::VectorXd grad = dXb.col(i).segment(static_cast<Eigen::Index>(l) * d, d);
            if (kind.is_layernorm()) {
                // J^T grad = (grad - mean(grad) 1 - phi <phi, grad>/d) / std
                const auto phi = Xb.col(i).segment(static_cast<Eigen::Index>(l) * d, d);
                const double gm = grad.mean();
                const double gp = phi.dot(grad) / d;
                grad = ((grad.array() - gm) - gp * phi.array()).matrix() * inv_std(l, i);
            }
            g.dW.col(cols[i][l]) += grad;
        }
    return g;
}

namespace {

void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_f64(std::ofstream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

double read_f64(std::ifstream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const Weights& weights, NetworkKind kind) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("save_weights: cannot open " + path.string());
    write_u64(out, static_cast<std::uint64_t>(weights.d()));
    write_u64(out, static_cast<std::uint64_t>(weights.n_w()));
    write_u64(out, static_cast<std::uint64_t>(weights.K));
    write_u64(out, static_cast<std::uint64_t>(weights.L));
    write_u64(out, kind.is_layernorm() ? 1 : 0);
    write_f64(out, kind.layernorm_epsilon);
    // row-major W
    for (int i = 0; i < weights.d(); ++i)
        for (int j = 0; j < weights.n_w(); ++j) write_f64(out, weights.W(i, j));
    // row-major U: row k is the concatenation of the u_{k,l}, i.e. the
    // column-major buffer of Uhat in order.
    out.write(reinterpret_cast<const char*>(weights.Uhat.data()),
              static_cast<std::streamsize>(sizeof(double)) * weights.Uhat.size());
    if (!out) throw config_error("save_weights: write failed for " + path.string());
}

LoadedWeights load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("load_weights: cannot open " + path.string());
    const std::uint64_t d = read_u64(in);
    const std::uint64_t n_w = read_u64(in);
    const std::uint64_t K = read_u64(in);
    const std::uint64_t L = read_u64(in);
    const std::uint64_t kind_tag = read_u64(in);
    const double epsilon = read_f64(in);
    if (!in || d == 0 || n_w == 0 || K == 0 || L == 0 || kind_tag > 1 ||
        d > (1u << 20) || n_w > (1u << 24) || K > (1u << 24) || L > (1u << 16) ||
        !(epsilon >= 0.0))
        throw config_error("load_weights: corrupted header in " + path.string());

    std::error_code ec;
    const auto file_size = std::filesystem::file_size(path, ec);
    const std::uintmax_t expected =
        6 * 8 + sizeof(double) * (d * n_w + K * L * d);
    if (ec || file_size != expected)
        throw config_error("load_weights: truncated or oversized file " + path.string());

    LoadedWeights loaded;
    loaded.kind = kind_tag == 1 ? NetworkKind::layernorm(epsilon) : NetworkKind::plain();
    Weights& w = loaded.weights;
    w.K = static_cast<int>(K);
    w.L = static_cast<int>(L);
    w.W.resize(d, n_w);
    for (std::uint64_t i = 0; i < d; ++i)
        for (std::uint64_t j = 0; j < n_w; ++j) w.W(i, j) = read_f64(in);
    w.Uhat.resize(d, static_cast<Eigen::Index>(K) * L);
    in.read(reinterpret_cast<char*>(w.Uhat.data()),
            static_cast<std::streamsize>(sizeof(double)) * w.Uhat.size());
    if (!in) throw config_error("load_weights: read failed for " + path.string());
    return loaded;
}

}  // namespace collapse
