#include "collapse/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace collapse {

void DataModelConfig::validate() const {
    if (n_c < 1 || s_c < 1 || L < 1 || K < 1)
        throw config_error("data model: n_c, s_c, L, K must all be positive");
    if (mu.size() != s_c) throw config_error("data model: mu must have length s_c");
    double sum = 0.0;
    for (int b = 0; b < s_c; ++b) {
        if (!(mu[b] > 0.0)) throw config_error("data model: mu entries must be positive");
        sum += mu[b];
    }
    if (std::abs(sum - 1.0) > 1e-12) throw config_error("data model: mu must sum to 1");
    if (lambda < 0.0) throw config_error("data model: lambda must be non-negative");
}

Eigen::VectorXd word_distribution(DistributionKind kind, int s_c,
                                  const std::vector<double>& custom) {
    if (s_c < 1) throw config_error("word_distribution: s_c must be >= 1");
    Eigen::VectorXd mu(s_c);
    switch (kind) {
        case DistributionKind::uniform:
            mu.setConstant(1.0 / s_c);
            break;
        case DistributionKind::zipf: {
            for (int b = 0; b < s_c; ++b) mu[b] = 1.0 / (b + 1);
            mu /= mu.sum();
            break;
        }
        case DistributionKind::custom: {
            if (static_cast<int>(custom.size()) != s_c)
                throw config_error("word_distribution: custom values must have length s_c");
            for (int b = 0; b < s_c; ++b) {
                if (!(custom[b] > 0.0))
                    throw config_error("word_distribution: custom values must be positive");
                mu[b] = custom[b];
            }
            mu /= mu.sum();
            break;
        }
    }
    return mu;
}

Eigen::MatrixXd LatentSet::dense_Z_k(int k) const {
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n_c, L);
    for (int l = 0; l < L; ++l) Z(latents[k].concepts[l], l) = 1.0;
    return Z;
}

Eigen::MatrixXd LatentSet::dense_Z() const {
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n_c, static_cast<Eigen::Index>(K()) * L);
    for (int k = 0; k < K(); ++k)
        for (int l = 0; l < L; ++l) Z(latents[k].concepts[l], k * L + l) = 1.0;
    return Z;
}

EncodingMatrices encoding_matrices(const DataModelConfig& config) {
    EncodingMatrices m;
    m.P = Eigen::MatrixXd::Zero(config.n_c, config.n_w());
    m.Q = Eigen::MatrixXd::Zero(config.n_c, config.n_w());
    for (int a = 0; a < config.n_c; ++a)
        for (int b = 0; b < config.s_c; ++b) {
            const int j = word_column(a, b, config.s_c);
            m.P(a, j) = 1.0;
            m.Q(a, j) = config.mu[b];
        }
    return m;
}

std::vector<int> word_columns(const Sentence& x, const DataModelConfig& config) {
    if (x.length() != config.L)
        throw config_error("encode: sentence length does not match the configured L");
    std::vector<int> cols;
    cols.reserve(x.words.size());
    for (const Word& w : x.words) {
        if (w.alpha < 0 || w.alpha >= config.n_c || w.beta < 0 || w.beta >= config.s_c)
            throw config_error("encode: word index out of bounds");
        cols.push_back(word_column(w.alpha, w.beta, config.s_c));
    }
    return cols;
}

Eigen::MatrixXd encode_sentence(const Sentence& x, const DataModelConfig& config) {
    const std::vector<int> cols = word_columns(x, config);
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(config.n_w(), x.length());
    for (int l = 0; l < x.length(); ++l) Z(cols[l], l) = 1.0;
    return Z;
}

namespace {
double pow_int(double base, int e) {
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= base;
    return r;
}
}  // namespace

LatentSet sample_latents(const DataModelConfig& config, bool distinct, Rng& rng) {
    const double total = pow_int(static_cast<double>(config.n_c), config.L);
    if (distinct && static_cast<double>(config.K) > total)
        throw infeasible_error("sample_latents: K > n_c^L, cannot draw distinct latents");

    LatentSet set;
    set.n_c = config.n_c;
    set.L = config.L;
    set.distinct = distinct;
    std::set<std::vector<int>> seen;
    while (set.K() < config.K) {
        LatentVariable z;
        z.concepts.resize(config.L);
        for (int l = 0; l < config.L; ++l) z.concepts[l] = rng.uniform_int(config.n_c);
        if (distinct) {
            if (!seen.insert(z.concepts).second) continue;  // rejection resample
        }
        set.latents.push_back(std::move(z));
    }
    return set;
}

LatentSet full_latent_set(int n_c, int L) {
    if (n_c < 1 || L < 1) throw config_error("full_latent_set: n_c and L must be positive");
    double total = 1.0;
    for (int l = 0; l < L; ++l) {
        total *= n_c;
        if (total > 1e6) throw infeasible_error("full_latent_set: n_c^L exceeds memory budget");
    }
    const long long count = static_cast<long long>(total);
    LatentSet set;
    set.n_c = n_c;
    set.L = L;
    set.distinct = true;
    set.latents.reserve(count);
    LatentVariable z;
    z.concepts.assign(L, 0);
    for (long long i = 0; i < count; ++i) {
        set.latents.push_back(z);
        // lexicographic successor, last position fastest
        for (int l = L - 1; l >= 0; --l) {
            if (++z.concepts[l] < n_c) break;
            z.concepts[l] = 0;
        }
    }
    return set;
}

Sentence sample_sentence(const LatentVariable& z, const DataModelConfig& config, Rng& rng) {
    Sentence x;
    x.words.reserve(z.concepts.size());
    for (int alpha : z.concepts) {
        // inverse-CDF draw from mu
        const double u = rng.uniform01();
        double acc = 0.0;
        int beta = config.s_c - 1;
        for (int b = 0; b < config.s_c; ++b) {
            acc += config.mu[b];
            if (u < acc) {
                beta = b;
                break;
            }
        }
        x.words.push_back(Word{alpha, beta});
    }
    return x;
}

double sentence_probability(const Sentence& x, const LatentVariable& z,
                            const DataModelConfig& config) {
    if (x.length() != z.length()) return 0.0;
    double p = 1.0;
    for (int l = 0; l < x.length(); ++l) {
        if (x.words[l].alpha != z.concepts[l]) return 0.0;
        p *= config.mu[x.words[l].beta];
    }
    return p;
}

int hamming_distance(const LatentVariable& a, const LatentVariable& b) {
    if (a.length() != b.length())
        throw config_error("hamming_distance: latent variables must have equal length");
    int d = 0;
    for (int l = 0; l < a.length(); ++l) d += a.concepts[l] != b.concepts[l];
    return d;
}

namespace {
double binomial(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (int i = 0; i < k; ++i) r = r * (n - i) / (i + 1);
    return r;
}
}  // namespace

SymmetryReport check_symmetry_assumption(const LatentSet& latents) {
    const int K = latents.K();
    const int L = latents.L;
    const int n_c = latents.n_c;
    const double ratio = static_cast<double>(K) / pow_int(static_cast<double>(n_c), L);

    SymmetryReport report;
    report.worst_violation = 0.0;
    // counts[r-1][l][a] = |{ j : dist(z_j, z_k) = r and z_{j,l} = a }|
    std::vector<long long> counts(static_cast<size_t>(L) * L * n_c);
    for (int k = 0; k < K; ++k) {
        std::fill(counts.begin(), counts.end(), 0);
        for (int j = 0; j < K; ++j) {
            const int r = hamming_distance(latents.latents[j], latents.latents[k]);
            if (r == 0) continue;
            for (int l = 0; l < L; ++l)
                ++counts[(static_cast<size_t>(r - 1) * L + l) * n_c +
                         latents.latents[j].concepts[l]];
        }
        for (int r = 1; r <= L; ++r)
            for (int l = 0; l < L; ++l)
                for (int a = 0; a < n_c; ++a) {
                    const bool same = latents.latents[k].concepts[l] == a;
                    const double expected =
                        same ? ratio * binomial(L - 1, r) * pow_int(n_c - 1.0, r)
                             : ratio * binomial(L - 1, r - 1) * pow_int(n_c - 1.0, r - 1);
                    const double got = static_cast<double>(
                        counts[(static_cast<size_t>(r - 1) * L + l) * n_c + a]);
                    report.worst_violation =
                        std::max(report.worst_violation, std::abs(got - expected));
                }
    }
    report.holds = report.worst_violation == 0.0;
    return report;
}

double sphere_mean_coefficient(int n_c, int L, int r) {
    return (static_cast<double>(n_c) / (n_c - 1)) * (static_cast<double>(r) / L);
}

SymmetryConsequences check_symmetry_consequences(const LatentSet& latents) {
    const int K = latents.K();
    const int L = latents.L;
    const int n_c = latents.n_c;
    constexpr double tol = 1e-12;

    SymmetryConsequences report;
    report.sphere_sizes.assign(K, std::vector<long long>(L, 0));
    std::vector<std::vector<std::vector<int>>> spheres(
        K, std::vector<std::vector<int>>(L));
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < K; ++j) {
            const int r = hamming_distance(latents.latents[j], latents.latents[k]);
            if (r == 0) continue;
            spheres[k][r - 1].push_back(j);
            ++report.sphere_sizes[k][r - 1];
        }

    double worst = 0.0;
    // (i) sphere sizes do not depend on the center
    for (int r = 0; r < L; ++r)
        for (int k = 1; k < K; ++k)
            worst = std::max(worst, std::abs(static_cast<double>(report.sphere_sizes[k][r] -
                                                                 report.sphere_sizes[0][r])));

    // (ii) sum_k Z_k = (K/n_c) 1 1^T and Z Z^T = (KL/n_c) I
    Eigen::MatrixXd sumZ = Eigen::MatrixXd::Zero(n_c, L);
    for (int k = 0; k < K; ++k) sumZ += latents.dense_Z_k(k);
    worst = std::max(worst,
                     (sumZ.array() - static_cast<double>(K) / n_c).abs().maxCoeff());
    const Eigen::MatrixXd Z = latents.dense_Z();
    Eigen::MatrixXd G = Z * Z.transpose();
    G.diagonal().array() -= static_cast<double>(K) * L / n_c;
    worst = std::max(worst, G.array().abs().maxCoeff());

    // (iii) mean over each non-empty sphere
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(n_c, L);
    for (int k = 0; k < K; ++k) {
        const Eigen::MatrixXd Zk = latents.dense_Z_k(k);
        for (int r = 1; r <= L; ++r) {
            if (spheres[k][r - 1].empty()) continue;
            Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(n_c, L);
            for (int j : spheres[k][r - 1]) mean += latents.dense_Z_k(j);
            mean /= static_cast<double>(spheres[k][r - 1].size());
            const double theta = sphere_mean_coefficient(n_c, L, r);
            const Eigen::MatrixXd A =
                -(1.0 / (n_c - 1)) * (static_cast<double>(r) / L) * ones;
            const Eigen::MatrixXd residual = (Zk - mean) - (theta * Zk + A);
            worst = std::max(worst, residual.array().abs().maxCoeff());
        }
    }

    report.worst_violation = worst;
    report.holds = worst <= tol;
    return report;
}

}  // namespace collapse
