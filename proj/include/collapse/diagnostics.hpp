#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "collapse/network.hpp"
#include "collapse/theory.hpp"

namespace collapse {

struct NormStats {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> per_rank_mean;  // empty unless per-rank requested
    std::vector<double> per_rank_std;
};

// Column-norm statistics of W, optionally grouped by within-concept rank beta.
NormStats embedding_norm_stats(const Eigen::MatrixXd& W, bool per_rank, int s_c);

struct AlignmentStats {
    std::vector<double> within_cosine;  // mean pairwise cosine per concept
    Eigen::MatrixXd cross_cosine;       // cosines between concept mean directions
    double within_mean = 0.0;
    double cross_mean = 0.0;  // mean off-diagonal cross cosine
    int excluded_zero_columns = 0;
};

// Directional collapse by concept: columns of M grouped by the given concept
// labels (one per column). Zero columns are excluded and counted.
AlignmentStats concept_alignment(const Eigen::MatrixXd& M, const std::vector<int>& concept_of,
                                 int n_c);
// Convenience overload for W, whose columns are partitioned into contiguous
// blocks of s_c words per concept.
AlignmentStats concept_alignment(const Eigen::MatrixXd& W, int n_c, int s_c);

struct EquiangularityResidual {
    double gram = 0.0;      // || Ghat^T Ghat - ideal ||_F over normalized directions
    double sum_norm = 0.0;  // || sum of normalized directions ||
};
EquiangularityResidual equiangularity_residual(const Eigen::MatrixXd& G);

// Top singular values of the column-mean-centered matrix, descending.
std::vector<double> pca_singular_values(const Eigen::MatrixXd& M, int top_k);

struct CollapseReport {
    NormStats embedding_norms;
    AlignmentStats embedding_alignment;
    EquiangularityResidual embedding_equiangularity;
    std::vector<double> embedding_singular_values;
    NormStats u_norms;
    AlignmentStats u_alignment;
    EquiangularityResidual u_equiangularity;
    std::vector<double> u_singular_values;
};

// Full collapse diagnostics for a trained or constructed network. For the
// layernorm variant the word representations phi(W) are analyzed in place of
// the raw embeddings, matching what that network's head actually sees.
CollapseReport collapse_report(NetworkKind kind, const Weights& weights,
                               const DataModelConfig& config, const LatentSet& latents,
                               int top_k = 4);

struct ComparisonRow {
    std::string metric;
    double actual = 0.0;
    double expected = 0.0;
    double deviation = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct ComparisonTolerances {
    double norm = 0.15;
    double within_cosine = 0.05;
    double singular_ratio = 1e-3;  // sigma_{n_c} / sigma_1
};

std::vector<ComparisonRow> compare_to_theory(const CollapseReport& report,
                                             const TheoryPrediction& prediction, int n_c,
                                             const ComparisonTolerances& tol);

}  // namespace collapse
