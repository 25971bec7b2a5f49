#pragma once

#include <Eigen/Dense>
#include <vector>

#include "collapse/common.hpp"

namespace collapse {

enum class DistributionKind { uniform, zipf, custom };

// Task parameters: n_c concepts of s_c words each, sentences of length L,
// K classes, within-concept word frequencies mu (shared across concepts).
struct DataModelConfig {
    int n_c = 0;
    int s_c = 0;
    int L = 0;
    int K = 0;
    Eigen::VectorXd mu;     // length s_c, positive, sums to 1
    double lambda = 0.0;    // weight decay used by risks built on this task

    int n_w() const { return n_c * s_c; }
    void validate() const;
};

// mu_beta = 1/s_c (uniform), C/beta (zipf), or normalized custom values.
Eigen::VectorXd word_distribution(DistributionKind kind, int s_c,
                                  const std::vector<double>& custom = {});

struct Word {
    int alpha = 0;  // concept, 0-based
    int beta = 0;   // rank within concept, 0-based
    bool operator==(const Word&) const = default;
};

struct Sentence {
    std::vector<Word> words;
    int length() const { return static_cast<int>(words.size()); }
};

struct LatentVariable {
    std::vector<int> concepts;  // length L, entries in [0, n_c)
    int length() const { return static_cast<int>(concepts.size()); }
    bool operator==(const LatentVariable&) const = default;
};

// K latent variables plus the dense one-hot views Z_k (n_c x L) and their
// concatenation Z (n_c x KL). The latents themselves are the sparse storage;
// dense matrices are materialized only at the linear-algebra boundary.
struct LatentSet {
    int n_c = 0;
    int L = 0;
    bool distinct = false;
    std::vector<LatentVariable> latents;

    int K() const { return static_cast<int>(latents.size()); }
    Eigen::MatrixXd dense_Z_k(int k) const;
    Eigen::MatrixXd dense_Z() const;
};

// P (zeros/ones) and Q (word frequencies) with P zeta(a,b) = e_a and
// Q zeta(a,b) = mu_b e_a; P Q^T = I.
struct EncodingMatrices {
    Eigen::MatrixXd P;
    Eigen::MatrixXd Q;
};
EncodingMatrices encoding_matrices(const DataModelConfig& config);

// Sparse one-hot form: vocabulary column index per position.
std::vector<int> word_columns(const Sentence& x, const DataModelConfig& config);
// Dense n_w x L one-hot matrix; column l is e_{word_column}.
Eigen::MatrixXd encode_sentence(const Sentence& x, const DataModelConfig& config);

LatentSet sample_latents(const DataModelConfig& config, bool distinct, Rng& rng);
LatentSet full_latent_set(int n_c, int L);

Sentence sample_sentence(const LatentVariable& z, const DataModelConfig& config, Rng& rng);
double sentence_probability(const Sentence& x, const LatentVariable& z,
                            const DataModelConfig& config);

int hamming_distance(const LatentVariable& a, const LatentVariable& b);

// Exact comparison of neighbor counts against the idealized combinatorics
// (K/n_c^L) C(L-1,r) (n_c-1)^r  /  (K/n_c^L) C(L-1,r-1) (n_c-1)^{r-1}.
// holds is true only when every count matches exactly; worst_violation is the
// largest absolute deviation, so approximately-symmetric random sets can be
// quantified.
struct SymmetryReport {
    bool holds = false;
    double worst_violation = 0.0;
};
SymmetryReport check_symmetry_assumption(const LatentSet& latents);

// Properties every symmetric latent set satisfies:
//   (i)  |S_r(j)| = |S_r(k)| for all r and j,k
//   (ii) sum_k Z_k = (K/n_c) 1 1^T  and  Z Z^T = (KL/n_c) I
//   (iii) Z_k - mean_{j in S_r(k)} Z_j = theta_r Z_k + A_r with
//         theta_r = (n_c/(n_c-1)) (r/L), A_r = -(1/(n_c-1)) (r/L) 1 1^T.
// Empty spheres skip property (iii) for that radius.
struct SymmetryConsequences {
    bool holds = false;
    double worst_violation = 0.0;
    std::vector<std::vector<long long>> sphere_sizes;  // [k][r-1]
};
SymmetryConsequences check_symmetry_consequences(const LatentSet& latents);

double sphere_mean_coefficient(int n_c, int L, int r);

}  // namespace collapse
