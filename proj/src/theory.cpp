#include "collapse/theory.hpp"

#include <cmath>
#include <limits>

namespace collapse {

namespace {

double pow_int(double base, int e) {
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= base;
    return r;
}

// log(1 - K/n_c^L + (K/n_c^L)(1 + (n_c-1) e^{-s})^L) and its derivative in s.
struct Logistic {
    int n_c, L;
    double ratio;  // K / n_c^L

    double value(double s) const {
        const double base = 1.0 + (n_c - 1) * std::exp(-s);
        return std::log(1.0 - ratio + ratio * std::pow(base, L));
    }
    double derivative(double s) const {
        const double e = std::exp(-s);
        const double base = 1.0 + (n_c - 1) * e;
        const double inner = 1.0 - ratio + ratio * std::pow(base, L);
        return -ratio * L * std::pow(base, L - 1) * (n_c - 1) * e / inner;
    }
};

Logistic logistic_for(const TheoryParams& p) {
    return Logistic{p.n_c, p.L, static_cast<double>(p.K) / pow_int(p.n_c, p.L)};
}

// Root of an increasing function on [0, inf): bracket by doubling, then
// bisect down to machine resolution.
template <typename F>
double bisect_increasing(F f, double hi0 = 1.0) {
    double lo = 0.0;
    double hi = hi0;
    while (f(hi) < 0.0) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e200) throw no_guarantee_error("bisection: failed to bracket root");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;  // interval at double resolution
        if (f(mid) < 0.0)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TheoryParams TheoryParams::from(const DataModelConfig& config, int d) {
    TheoryParams p;
    p.n_c = config.n_c;
    p.s_c = config.s_c;
    p.L = config.L;
    p.K = config.K;
    p.d = d;
    p.lambda = config.lambda;
    p.mu = config.mu;
    return p;
}

DataModelConfig TheoryParams::data_config() const {
    DataModelConfig c;
    c.n_c = n_c;
    c.s_c = s_c;
    c.L = L;
    c.K = K;
    c.mu = mu;
    c.lambda = lambda;
    return c;
}

Frame equiangular_frame(int n_c, int d, bool mean_zero, Rng& rng) {
    if (n_c < 2) throw config_error("equiangular_frame: n_c must be >= 2");
    if (d < n_c || (mean_zero && d < n_c + 1))
        throw infeasible_error("equiangular_frame: embedding dimension too small");

    // Centered scaled basis in R^{n_c}; Gram is the equiangular one.
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(n_c, n_c);
    B.array() -= 1.0 / n_c;
    B *= std::sqrt(static_cast<double>(n_c) / (n_c - 1));

    // Seeded orthonormal map whose range avoids 1_d when requested: a random
    // rotation of the base frame.
    for (int attempt = 0; attempt < 16; ++attempt) {
        Eigen::MatrixXd G(d, n_c);
        for (int j = 0; j < n_c; ++j)
            for (int i = 0; i < d; ++i) G(i, j) = rng.gaussian();
        if (mean_zero) {
            const Eigen::RowVectorXd colmean = G.colwise().mean();
            G.rowwise() -= colmean;
        }
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
        Eigen::MatrixXd M = qr.householderQ() * Eigen::MatrixXd::Identity(d, n_c);
        // Householder Q columns can flip sign relative to G; irrelevant here,
        // only orthonormality and the span matter.
        Frame frame{M * B, mean_zero};
        Eigen::MatrixXd gram_err = frame.F.transpose() * frame.F - B.transpose() * B;
        double err = gram_err.array().abs().maxCoeff();
        err = std::max(err, (frame.F * Eigen::VectorXd::Ones(n_c)).array().abs().maxCoeff());
        if (mean_zero)
            err = std::max(
                err, (Eigen::RowVectorXd::Ones(d) * frame.F).array().abs().maxCoeff());
        if (err <= 1e-12) return frame;
    }
    throw degenerate_input_error("equiangular_frame: could not build a frame to tolerance");
}

Weights build_collapse_config(const CollapseConfig& config, const LatentSet& latents,
                              const TheoryParams& params) {
    const Eigen::MatrixXd& F = config.frame.F;
    if (F.cols() != params.n_c) throw config_error("build_collapse_config: frame size mismatch");
    const int d = static_cast<int>(F.rows());
    if (d != params.d) throw config_error("build_collapse_config: frame dimension != params.d");
    if (latents.n_c != params.n_c || latents.L != params.L || latents.K() != params.K)
        throw config_error("build_collapse_config: latent set does not match params");
    if (config.kind == CollapseKind::type2 && !config.frame.mean_zero)
        throw config_error("build_collapse_config: type-II requires a mean-zero frame");
    if (config.kind == CollapseKind::type3 && config.r.size() != params.s_c)
        throw config_error("build_collapse_config: type-III needs s_c radii");

    Weights w;
    w.K = params.K;
    w.L = params.L;
    w.W.resize(d, params.n_w());
    for (int a = 0; a < params.n_c; ++a)
        for (int b = 0; b < params.s_c; ++b) {
            const double scale = config.kind == CollapseKind::type1   ? config.c
                                 : config.kind == CollapseKind::type2 ? std::sqrt(double(d))
                                                                      : config.r[b];
            w.W.col(word_column(a, b, params.s_c)) = scale * F.col(a);
        }
    const double head_scale =
        config.kind == CollapseKind::type1 ? config.c_prime : config.c;
    w.Uhat.resize(d, static_cast<Eigen::Index>(params.K) * params.L);
    for (int k = 0; k < params.K; ++k)
        for (int l = 0; l < params.L; ++l)
            w.u(k, l) = head_scale * F.col(latents.latents[k].concepts[l]);
    return w;
}

double h_objective(const TheoryParams& p, double t) {
    const double eta =
        (static_cast<double>(p.n_c) / (p.n_c - 1)) / std::sqrt(double(p.n_w()) * p.K * p.L);
    return logistic_for(p).value(eta * t) + p.lambda * t;
}

double hstar_objective(const TheoryParams& p, double t) {
    const double eta_star =
        (static_cast<double>(p.n_c) / (p.n_c - 1)) / std::sqrt(double(p.K) * p.L / p.d);
    return logistic_for(p).value(eta_star * t) + 0.5 * p.lambda * t * t;
}

TheoryPrediction minimize_h(const TheoryParams& p) {
    if (p.lambda <= 0.0) throw config_error("minimize_h: lambda must be positive");
    if (static_cast<double>(p.K) > pow_int(p.n_c, p.L))
        throw config_error("minimize_h: requires K <= n_c^L");
    const double eta =
        (static_cast<double>(p.n_c) / (p.n_c - 1)) / std::sqrt(double(p.n_w()) * p.K * p.L);
    const Logistic lg = logistic_for(p);
    const auto dH = [&](double t) { return eta * lg.derivative(eta * t) + p.lambda; };

    TheoryPrediction out;
    out.eta = eta;
    out.tau = dH(0.0) >= 0.0 ? 0.0 : bisect_increasing(dH);
    out.c = std::sqrt(out.tau / p.n_w());
    out.c_prime = std::sqrt(out.tau / (static_cast<double>(p.K) * p.L));
    out.predicted_norm = out.c;
    out.predicted_risk = closed_form_risk(CollapseKind::type1, out.c, p);
    out.margin_per_distance = predicted_margin(CollapseKind::type1, out.c, out.c_prime, p, 1);
    return out;
}

TheoryPrediction minimize_hstar(const TheoryParams& p) {
    if (p.lambda <= 0.0) throw config_error("minimize_hstar: lambda must be positive");
    for (int b = 0; b < p.mu.size(); ++b)
        if (!(p.mu[b] > 0.0)) throw config_error("minimize_hstar: mu must be positive");
    const double eta_star =
        (static_cast<double>(p.n_c) / (p.n_c - 1)) / std::sqrt(double(p.K) * p.L / p.d);
    const Logistic lg = logistic_for(p);
    const auto dH = [&](double t) { return eta_star * lg.derivative(eta_star * t) + p.lambda * t; };

    TheoryPrediction out;
    out.eta = eta_star;
    out.tau = dH(0.0) >= 0.0 ? 0.0 : bisect_increasing(dH);
    out.c = out.tau / std::sqrt(static_cast<double>(p.K) * p.L);
    out.c_prime = out.c;
    out.predicted_norm = out.c;
    out.predicted_risk = closed_form_risk(CollapseKind::type2, out.c, p);
    out.margin_per_distance = predicted_margin(CollapseKind::type2, out.c, out.c, p, 1);
    return out;
}

bool uniqueness_bound(const TheoryParams& p) {
    const double rhs = (static_cast<double>(p.L) / pow_int(p.n_c, p.L + 1)) * p.mu.squaredNorm();
    return p.lambda * p.lambda < rhs;
}

namespace {

// g(c, x) = x (1 + gamma e^{(1+gamma) c^2 x}) / (1+gamma); strictly increasing
// in x on [0, inf).
double type3_g(double gamma, double c, double x) {
    const double a = (1.0 + gamma) * c * c * x;
    if (a > 700.0) return std::numeric_limits<double>::infinity();
    return x * (1.0 + gamma * std::exp(a)) / (1.0 + gamma);
}

}  // namespace

Type3Solution solve_type3_system(const TheoryParams& p) {
    if (!uniqueness_bound(p))
        throw no_guarantee_error(
            "solve_type3_system: lambda outside the uniqueness bound, refusing to solve");
    const double gamma = 1.0 / (p.n_c - 1);
    const double sphere = static_cast<double>(p.L) * pow_int(p.n_c, p.L - 1);

    const auto rho_of = [&](double c, double target) {
        return bisect_increasing([&](double x) { return type3_g(gamma, c, x) - target; },
                                 std::max(1.0, target));
    };
    const auto big_phi = [&](double c) {
        double sum = 0.0;
        for (int b = 0; b < p.s_c; ++b) {
            const double rho = rho_of(c, p.L * p.mu[b] / (p.lambda * p.n_c));
            sum += rho * rho;
        }
        return sum - sphere;
    };
    // Phi is strictly decreasing with Phi(0) > 0 inside the bound.
    const double c = bisect_increasing([&](double x) { return -big_phi(x); });

    Type3Solution sol;
    sol.c = c;
    sol.r.resize(p.s_c);
    double worst = 0.0;
    for (int b = 0; b < p.s_c; ++b) {
        const double rho = rho_of(c, p.L * p.mu[b] / (p.lambda * p.n_c));
        sol.r[b] = c * rho;
        const double lhs = (p.lambda / p.L) * rho *
                           (p.n_c - 1 + std::exp((double(p.n_c) / (p.n_c - 1)) * c * sol.r[b]));
        worst = std::max(worst, std::abs(lhs - p.mu[b]));
    }
    double sum = 0.0;
    for (int b = 0; b < p.s_c; ++b) sum += (sol.r[b] / c) * (sol.r[b] / c);
    worst = std::max(worst, std::abs(sum - sphere));
    sol.residual_scale = worst;
    if (worst > 1e-10)
        throw no_guarantee_error("solve_type3_system: residuals did not reach tolerance");
    return sol;
}

double closed_form_risk(CollapseKind kind, double c, const TheoryParams& p) {
    const Logistic lg = logistic_for(p);
    switch (kind) {
        case CollapseKind::type1: {
            const double eta = (static_cast<double>(p.n_c) / (p.n_c - 1)) /
                               std::sqrt(double(p.n_w()) * p.K * p.L);
            return lg.value(eta * p.n_w() * c * c) + p.lambda * p.n_w() * c * c;
        }
        case CollapseKind::type2: {
            const double eta_star = (static_cast<double>(p.n_c) / (p.n_c - 1)) /
                                    std::sqrt(double(p.K) * p.L / p.d);
            const double kl = static_cast<double>(p.K) * p.L;
            return lg.value(eta_star * std::sqrt(kl) * c) + 0.5 * p.lambda * kl * c * c;
        }
        default:
            throw config_error("closed_form_risk: only type-I and type-II have closed forms");
    }
}

namespace {

// Visit every sentence of X_k as (column indices, probability weight).
template <typename Visitor>
void enumerate_support(const LatentVariable& z, const TheoryParams& p, Visitor&& visit) {
    const int L = z.length();
    std::vector<int> beta(L, 0);
    std::vector<int> cols(L);
    for (;;) {
        double prob = 1.0;
        for (int l = 0; l < L; ++l) {
            prob *= p.mu[beta[l]];
            cols[l] = word_column(z.concepts[l], beta[l], p.s_c);
        }
        visit(cols, beta, prob);
        int l = L - 1;
        for (; l >= 0; --l) {
            if (++beta[l] < p.s_c) break;
            beta[l] = 0;
        }
        if (l < 0) break;
    }
}

void check_budget(const TheoryParams& p) {
    double count = 1.0;
    for (int l = 0; l < p.L; ++l) {
        count *= p.s_c;
        if (count > 1e6) throw budget_error("exact risk: s_c^L exceeds the enumeration budget");
    }
}

Eigen::VectorXd scores_for(NetworkKind kind, const Weights& w, const std::vector<int>& cols) {
    const int d = w.d();
    Eigen::MatrixXd M(d, w.L);
    for (int l = 0; l < w.L; ++l) M.col(l) = w.W.col(cols[l]);
    if (kind.is_layernorm())
        for (int l = 0; l < w.L; ++l) M.col(l) = layer_norm(M.col(l), kind.layernorm_epsilon);
    Eigen::VectorXd y(w.K);
    for (int k = 0; k < w.K; ++k) y[k] = (w.uhat_k(k).array() * M.array()).sum();
    return y;
}

}  // namespace

double exact_risk(NetworkKind kind, const Weights& weights, const LatentSet& latents,
                  const TheoryParams& p) {
    check_budget(p);
    const int K = latents.K();
    double risk = 0.0;
    for (int k = 0; k < K; ++k)
        enumerate_support(latents.latents[k], p,
                          [&](const std::vector<int>& cols, const std::vector<int>&, double prob) {
                              risk += prob * cross_entropy(scores_for(kind, weights, cols), k);
                          });
    risk /= K;
    risk += 0.5 * p.lambda * weights.Uhat.squaredNorm();
    if (!kind.is_layernorm()) risk += 0.5 * p.lambda * weights.W.squaredNorm();
    return risk;
}

Gradients exact_risk_gradient(NetworkKind kind, const Weights& weights, const LatentSet& latents,
                              const TheoryParams& p) {
    check_budget(p);
    const int K = latents.K();
    const int d = weights.d();
    const int L = weights.L;

    Gradients g;
    g.dW = Eigen::MatrixXd::Zero(d, weights.n_w());
    g.dUhat = Eigen::MatrixXd::Zero(d, weights.Uhat.cols());

    Eigen::MatrixXd M(d, L), Phi(d, L);
    Eigen::VectorXd inv_std(L);
    for (int k = 0; k < K; ++k)
        enumerate_support(
            latents.latents[k], p,
            [&](const std::vector<int>& cols, const std::vector<int>&, double prob) {
                for (int l = 0; l < L; ++l) M.col(l) = weights.W.col(cols[l]);
                if (kind.is_layernorm()) {
                    for (int l = 0; l < L; ++l) {
                        const double mean = M.col(l).mean();
                        const double var = (M.col(l).array() - mean).square().sum() / d;
                        if (kind.layernorm_epsilon == 0.0 && std::sqrt(var) < 1e-12)
                            throw degenerate_input_error("exact_risk_gradient: degenerate column");
                        inv_std[l] = 1.0 / std::sqrt(var + kind.layernorm_epsilon);
                        Phi.col(l) = (M.col(l).array() - mean).matrix() * inv_std[l];
                    }
                }
                const Eigen::MatrixXd& feats = kind.is_layernorm() ? Phi : M;
                Eigen::VectorXd y(weights.K);
                for (int j = 0; j < weights.K; ++j)
                    y[j] = (weights.uhat_k(j).array() * feats.array()).sum();
                const double top = y.maxCoeff();
                Eigen::ArrayXd q = (y.array() - top).exp();
                q /= q.sum();
                q[k] -= 1.0;  // softmax - onehot
                const double scale = prob / K;

                // dUhat_{j,l} += scale * q_j * feats_l
                for (int j = 0; j < weights.K; ++j)
                    for (int l = 0; l < L; ++l)
                        g.dUhat.col(static_cast<Eigen::Index>(j) * L + l) +=
                            (scale * q[j]) * feats.col(l);
                // dfeats_l = sum_j q_j u_{j,l}; push through LayerNorm if any.
                for (int l = 0; l < L; ++l) {
                    Eigen::VectorXd df = Eigen::VectorXd::Zero(d);
                    for (int j = 0; j < weights.K; ++j)
                        df += q[j] * weights.Uhat.col(static_cast<Eigen::Index>(j) * L + l);
                    if (kind.is_layernorm()) {
                        const double gm = df.mean();
                        const double gp = Phi.col(l).dot(df) / d;
                        df = ((df.array() - gm) - gp * Phi.col(l).array()).matrix() * inv_std[l];
                    }
                    g.dW.col(cols[l]) += scale * df;
                }
            });

    g.dUhat += p.lambda * weights.Uhat;
    if (!kind.is_layernorm()) g.dW += p.lambda * weights.W;
    return g;
}

Gradients exact_risk_gradient_phi(const Weights& weights, const LatentSet& latents,
                                  const TheoryParams& p) {
    check_budget(p);
    const int K = latents.K();
    const int L = weights.L;
    const int n_w = weights.n_w();

    // coupling[(a,b)][ (k,l) ] with (a,b) flattened to the vocabulary column
    Eigen::MatrixXd coupling =
        Eigen::MatrixXd::Zero(n_w, static_cast<Eigen::Index>(K) * L);
    for (int j = 0; j < K; ++j)
        enumerate_support(
            latents.latents[j], p,
            [&](const std::vector<int>& cols, const std::vector<int>&, double prob) {
                Eigen::VectorXd y = scores_for(NetworkKind::plain(), weights, cols);
                const double top = y.maxCoeff();
                Eigen::ArrayXd q = (y.array() - top).exp();
                q /= q.sum();
                const double scale = prob / K;
                for (int l = 0; l < L; ++l)
                    for (int k = 0; k < K; ++k)
                        coupling(cols[l], static_cast<Eigen::Index>(k) * L + l) +=
                            scale * ((j == k ? 1.0 : 0.0) - q[k]);
            });

    Gradients g;
    //  -dR0/du_{k,l} = sum_w coupling(w, (k,l)) w_col  ->  dUhat = -W * coupling
    g.dUhat = -(weights.W * coupling) + p.lambda * weights.Uhat;
    //  -dR0/dw = sum_{k,l} coupling(w,(k,l)) u_{k,l}   ->  dW = -Uhat * coupling^T
    g.dW = -(weights.Uhat * coupling.transpose()) + p.lambda * weights.W;
    return g;
}

double predicted_margin(CollapseKind kind, double c, double c_prime, const TheoryParams& p,
                        int dist) {
    if (dist < 0 || dist > p.L) throw config_error("predicted_margin: dist out of range");
    const double angular = static_cast<double>(p.n_c) / (p.n_c - 1);
    switch (kind) {
        case CollapseKind::type1:
            return c * c_prime * angular * dist;
        case CollapseKind::type2:
            return c * std::sqrt(static_cast<double>(p.d)) * angular * dist;
        default:
            throw config_error("predicted_margin: type-III margins are word-dependent");
    }
}

}  // namespace collapse
