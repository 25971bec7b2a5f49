#pragma once

#include <Eigen/Dense>

#include "collapse/data_model.hpp"
#include "collapse/network.hpp"

namespace collapse {

struct TheoryParams {
    int n_c = 0;
    int s_c = 0;
    int L = 0;
    int K = 0;
    int d = 0;
    double lambda = 0.0;
    Eigen::VectorXd mu;

    int n_w() const { return n_c * s_c; }
    static TheoryParams from(const DataModelConfig& config, int d);
    DataModelConfig data_config() const;
};

// n_c unit vectors in R^d that sum to zero with pairwise inner products
// -1/(n_c-1); the mean-zero variant is additionally orthogonal to 1_d.
struct Frame {
    Eigen::MatrixXd F;  // d x n_c
    bool mean_zero = false;
};

// Centered scaled basis embedded through a seeded random orthonormal map.
// Requires d >= n_c, and d >= n_c + 1 when mean_zero.
Frame equiangular_frame(int n_c, int d, bool mean_zero, Rng& rng);

enum class CollapseKind { type1, type2, type3 };

// Constants materializing a collapsed (W, U):
//   type1:  w_(a,b) = c f_a,          u_(k,l) = c_prime f_{z_kl}
//   type2:  phi(w_(a,b)) = sqrt(d) f_a, u_(k,l) = c f_{z_kl}   (mean-zero frame)
//   type3:  w_(a,b) = r_b f_a,        u_(k,l) = c f_{z_kl}
struct CollapseConfig {
    CollapseKind kind = CollapseKind::type1;
    double c = 0.0;
    double c_prime = 0.0;   // type1 only
    Eigen::VectorXd r;      // type3 only, length s_c
    Frame frame;
};

Weights build_collapse_config(const CollapseConfig& config, const LatentSet& latents,
                              const TheoryParams& params);

struct TheoryPrediction {
    double tau = 0.0;
    double c = 0.0;
    double c_prime = 0.0;
    double eta = 0.0;
    double predicted_norm = 0.0;         // embedding norm (h) or head norm (h*)
    double predicted_risk = 0.0;
    double margin_per_distance = 0.0;
};

// The strictly convex scalar objectives whose minimizers set the collapse
// scales. t >= 0.
double h_objective(const TheoryParams& params, double t);
double hstar_objective(const TheoryParams& params, double t);

// tau = argmin H(t); returns c = sqrt(tau/n_w), c' = sqrt(tau/(KL)).
TheoryPrediction minimize_h(const TheoryParams& params);
// tau = argmin H*(t); returns c = tau/sqrt(KL).
TheoryPrediction minimize_hstar(const TheoryParams& params);

// lambda^2 < (L / n_c^{L+1}) sum_b mu_b^2, the regime where the type-III
// system has a unique positive solution.
bool uniqueness_bound(const TheoryParams& params);

// Unique positive solution of
//   (lambda/L) (r_b/c) (n_c - 1 + exp((n_c/(n_c-1)) c r_b)) = mu_b
//   sum_b (r_b/c)^2 = L n_c^{L-1}
// via the constructive route: inner bisection for rho_b = r_b/c at fixed c
// (the left side is strictly increasing in rho), outer bisection on the
// strictly decreasing  Phi(c) = sum rho_b^2 - L n_c^{L-1}, brackets grown by
// doubling. Refuses to run outside uniqueness_bound.
struct Type3Solution {
    double c = 0.0;
    Eigen::VectorXd r;
    double residual_scale = 0.0;   // worst equation residual
};
Type3Solution solve_type3_system(const TheoryParams& params);

// Closed-form regularized risk of a collapse configuration under the
// idealized |S_r| counts (exact when K = n_c^L):
//   type1: log(1 - K/n_c^L + (K/n_c^L)(1 + (n_c-1) e^{-eta n_w c^2})^L) + lambda n_w c^2
//   type2: same logistic with eta* sqrt(KL) c, plus (lambda/2) KL c^2
double closed_form_risk(CollapseKind kind, double c, const TheoryParams& params);

// True (population) regularized risk by full enumeration of every support
// X_k; plain penalizes both matrices, layernorm penalizes U only.
// Requires s_c^L within the enumeration budget.
double exact_risk(NetworkKind kind, const Weights& weights, const LatentSet& latents,
                  const TheoryParams& params);

// Full gradient of exact_risk (regularizer included), by the same weighted
// enumeration as the risk itself.
Gradients exact_risk_gradient(NetworkKind kind, const Weights& weights, const LatentSet& latents,
                              const TheoryParams& params);

// Independent second route for the plain network: assembles the gradient from
// the coupling coefficients
//   Phi_{(a,b),(k,l)} = (1/K) sum_j sum_{x in X_j} 1{x_l = (a,b)}
//                       (1{j=k} - q_k(x)) D_j(x)
// via  -dR0/du_{k,l} = sum_{a,b} Phi w_(a,b)  and
//      -dR0/dw_(a,b) = sum_{k,l} Phi u_{k,l}, regularizer added on top.
Gradients exact_risk_gradient_phi(const Weights& weights, const LatentSet& latents,
                                  const TheoryParams& params);

// Margin between a point of class k and a class at Hamming distance dist:
//   type1: c c' (n_c/(n_c-1)) dist
//   type2: c sqrt(d) (n_c/(n_c-1)) dist
double predicted_margin(CollapseKind kind, double c, double c_prime, const TheoryParams& params,
                        int dist);

}  // namespace collapse
