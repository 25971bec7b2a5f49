#include "collapse/diagnostics.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace collapse {

namespace {

NormStats stats_of(const std::vector<double>& values) {
    NormStats s;
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / values.size();
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / values.size());
    return s;
}

}  // namespace

NormStats embedding_norm_stats(const Eigen::MatrixXd& W, bool per_rank, int s_c) {
    std::vector<double> norms(W.cols());
    for (Eigen::Index j = 0; j < W.cols(); ++j) norms[j] = W.col(j).norm();
    NormStats s = stats_of(norms);
    if (per_rank) {
        if (s_c < 1 || W.cols() % s_c != 0)
            throw config_error("embedding_norm_stats: column count is not a multiple of s_c");
        const int n_c = static_cast<int>(W.cols()) / s_c;
        s.per_rank_mean.resize(s_c);
        s.per_rank_std.resize(s_c);
        for (int b = 0; b < s_c; ++b) {
            std::vector<double> rank_norms(n_c);
            for (int a = 0; a < n_c; ++a) rank_norms[a] = norms[word_column(a, b, s_c)];
            const NormStats rs = stats_of(rank_norms);
            s.per_rank_mean[b] = rs.mean;
            s.per_rank_std[b] = rs.stddev;
        }
    }
    return s;
}

AlignmentStats concept_alignment(const Eigen::MatrixXd& M, const std::vector<int>& concept_of,
                                 int n_c) {
    if (static_cast<Eigen::Index>(concept_of.size()) != M.cols())
        throw config_error("concept_alignment: one concept label per column required");
    AlignmentStats out;
    out.within_cosine.assign(n_c, 0.0);
    out.cross_cosine = Eigen::MatrixXd::Zero(n_c, n_c);

    std::vector<std::vector<Eigen::Index>> groups(n_c);
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
        if (M.col(j).norm() == 0.0) {
            ++out.excluded_zero_columns;
            continue;
        }
        groups.at(concept_of[j]).push_back(j);
    }

    Eigen::MatrixXd mean_dir = Eigen::MatrixXd::Zero(M.rows(), n_c);
    double within_sum = 0.0;
    int within_groups = 0;
    for (int a = 0; a < n_c; ++a) {
        const auto& g = groups[a];
        Eigen::VectorXd dir_sum = Eigen::VectorXd::Zero(M.rows());
        for (Eigen::Index j : g) dir_sum += M.col(j).normalized();
        if (!g.empty()) mean_dir.col(a) = dir_sum / static_cast<double>(g.size());
        // sum over ordered pairs i != j of <n_i, n_j> equals ||sum n||^2 - g
        const double count = static_cast<double>(g.size());
        out.within_cosine[a] =
            g.size() > 1 ? (dir_sum.squaredNorm() - count) / (count * (count - 1.0)) : 1.0;
        if (g.size() > 1) {
            within_sum += out.within_cosine[a];
            ++within_groups;
        }
    }
    out.within_mean = within_groups > 0 ? within_sum / within_groups : 1.0;

    double cross_sum = 0.0;
    int cross_pairs = 0;
    for (int a = 0; a < n_c; ++a)
        for (int b = 0; b < n_c; ++b) {
            const double na = mean_dir.col(a).norm();
            const double nb = mean_dir.col(b).norm();
            out.cross_cosine(a, b) =
                na > 0.0 && nb > 0.0 ? mean_dir.col(a).dot(mean_dir.col(b)) / (na * nb) : 0.0;
            if (a < b) {
                cross_sum += out.cross_cosine(a, b);
                ++cross_pairs;
            }
        }
    out.cross_mean = cross_pairs > 0 ? cross_sum / cross_pairs : 0.0;
    return out;
}

AlignmentStats concept_alignment(const Eigen::MatrixXd& W, int n_c, int s_c) {
    std::vector<int> concept_of(W.cols());
    for (Eigen::Index j = 0; j < W.cols(); ++j) concept_of[j] = static_cast<int>(j) / s_c;
    return concept_alignment(W, concept_of, n_c);
}

EquiangularityResidual equiangularity_residual(const Eigen::MatrixXd& G) {
    const int n_c = static_cast<int>(G.cols());
    Eigen::MatrixXd unit(G.rows(), n_c);
    for (int a = 0; a < n_c; ++a) {
        const double norm = G.col(a).norm();
        if (norm == 0.0) throw config_error("equiangularity_residual: zero direction vector");
        unit.col(a) = G.col(a) / norm;
    }
    Eigen::MatrixXd ideal = Eigen::MatrixXd::Constant(n_c, n_c, -1.0 / (n_c - 1));
    ideal.diagonal().setOnes();
    EquiangularityResidual r;
    r.gram = (unit.transpose() * unit - ideal).norm();
    r.sum_norm = (unit * Eigen::VectorXd::Ones(n_c)).norm();
    return r;
}

std::vector<double> pca_singular_values(const Eigen::MatrixXd& M, int top_k) {
    if (top_k < 0 || top_k > std::min(M.rows(), M.cols()))
        throw config_error("pca_singular_values: top_k out of range");
    Eigen::MatrixXd centered = M;
    const Eigen::VectorXd column_mean = M.rowwise().mean();
    centered.colwise() -= column_mean;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
    std::vector<double> out(top_k);
    for (int i = 0; i < top_k; ++i) out[i] = svd.singularValues()[i];
    return out;
}

CollapseReport collapse_report(NetworkKind kind, const Weights& weights,
                               const DataModelConfig& config, const LatentSet& latents,
                               int top_k) {
    CollapseReport report;
    Eigen::MatrixXd words = weights.W;
    if (kind.is_layernorm())
        for (Eigen::Index j = 0; j < words.cols(); ++j)
            words.col(j) = layer_norm(words.col(j), kind.layernorm_epsilon);

    const int k_words = std::min<int>(top_k, std::min(words.rows(), words.cols()));
    report.embedding_norms = embedding_norm_stats(words, true, config.s_c);
    report.embedding_alignment = concept_alignment(words, config.n_c, config.s_c);
    report.embedding_singular_values = pca_singular_values(words, k_words);

    std::vector<int> concept_of(weights.Uhat.cols());
    for (int k = 0; k < weights.K; ++k)
        for (int l = 0; l < weights.L; ++l)
            concept_of[static_cast<size_t>(k) * weights.L + l] = latents.latents[k].concepts[l];
    std::vector<double> u_norms(weights.Uhat.cols());
    for (Eigen::Index j = 0; j < weights.Uhat.cols(); ++j) u_norms[j] = weights.Uhat.col(j).norm();
    report.u_norms = stats_of(u_norms);
    report.u_alignment = concept_alignment(weights.Uhat, concept_of, config.n_c);
    const int k_u = std::min<int>(top_k, std::min(weights.Uhat.rows(), weights.Uhat.cols()));
    report.u_singular_values = pca_singular_values(weights.Uhat, k_u);

    // Equiangularity of the per-concept mean directions.
    Eigen::MatrixXd word_means = Eigen::MatrixXd::Zero(words.rows(), config.n_c);
    for (int a = 0; a < config.n_c; ++a) {
        for (int b = 0; b < config.s_c; ++b)
            word_means.col(a) += words.col(word_column(a, b, config.s_c));
        word_means.col(a) /= config.s_c;
    }
    report.embedding_equiangularity = equiangularity_residual(word_means);
    Eigen::MatrixXd u_means = Eigen::MatrixXd::Zero(weights.Uhat.rows(), config.n_c);
    Eigen::VectorXd u_counts = Eigen::VectorXd::Zero(config.n_c);
    for (Eigen::Index j = 0; j < weights.Uhat.cols(); ++j) {
        u_means.col(concept_of[j]) += weights.Uhat.col(j);
        u_counts[concept_of[j]] += 1.0;
    }
    for (int a = 0; a < config.n_c; ++a)
        if (u_counts[a] > 0.0) u_means.col(a) /= u_counts[a];
    report.u_equiangularity = equiangularity_residual(u_means);
    return report;
}

std::vector<ComparisonRow> compare_to_theory(const CollapseReport& report,
                                             const TheoryPrediction& prediction, int n_c,
                                             const ComparisonTolerances& tol) {
    std::vector<ComparisonRow> rows;
    const auto add = [&](const std::string& metric, double actual, double expected,
                         double tolerance) {
        ComparisonRow r;
        r.metric = metric;
        r.actual = actual;
        r.expected = expected;
        r.deviation = std::abs(actual - expected);
        r.tolerance = tolerance;
        r.pass = r.deviation <= tolerance;
        rows.push_back(r);
    };
    add("embedding_norm_mean", report.embedding_norms.mean, prediction.predicted_norm, tol.norm);
    add("within_concept_cosine", report.embedding_alignment.within_mean, 1.0, tol.within_cosine);
    add("cross_concept_cosine", report.embedding_alignment.cross_mean, -1.0 / (n_c - 1),
        tol.within_cosine);
    if (static_cast<int>(report.embedding_singular_values.size()) >= n_c) {
        const double ratio =
            report.embedding_singular_values[n_c - 1] / report.embedding_singular_values[0];
        add("embedding_sigma_ratio", ratio, 0.0, tol.singular_ratio);
    }
    if (static_cast<int>(report.u_singular_values.size()) >= n_c) {
        const double ratio = report.u_singular_values[n_c - 1] / report.u_singular_values[0];
        add("u_sigma_ratio", ratio, 0.0, tol.singular_ratio);
    }
    return rows;
}

}  // namespace collapse
