#pragma once

// Style mixture density head: maps a style semantic vector to a Gaussian
// mixture over style vectors, with the variance tying pattern selected by a
// noise mode. Everything here runs in double precision with analytic
// gradients.

#include <Eigen/Dense>

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stylecodec/rng.h"

namespace stylecodec {

enum class NoiseMode { FullyFactored, Isotropic, IsotropicAcrossClusters, FixedIsotropic };

std::string_view noise_mode_name(NoiseMode m);
NoiseMode parse_noise_mode(std::string_view s);

struct SmsdConfig {
    int input_dim = 16;
    int output_dim = 16;
    int hidden_dim = 64;
    int components = 5;
    NoiseMode mode = NoiseMode::IsotropicAcrossClusters;
    double fixed_sigma = 0.5;
    double var_floor = 1e-6;
    // Include -(d/2) log 2pi so the loss is the exact negative log density.
    bool exact_constant = true;
    // Drop the log-determinant term, matching the reduced closed form.
    bool reduced_form = false;
    // Draw the noise branch input at inference as well as in training.
    bool inference_noise = false;

    void validate() const;
};

struct MixtureParams {
    NoiseMode mode = NoiseMode::IsotropicAcrossClusters;
    Eigen::VectorXd weights;     // K, on the simplex
    Eigen::VectorXd log_weights; // K, log-softmax of the logits
    Eigen::MatrixXd means;       // K x d
    // Shape by mode: FullyFactored K*d (row-major k, j), Isotropic K,
    // IsotropicAcrossClusters 1, FixedIsotropic 1.
    Eigen::VectorXd variances;

    int components() const { return static_cast<int>(weights.size()); }
    int dim() const { return static_cast<int>(means.cols()); }
    double variance(int k, int j) const;
    void validate() const;
};

// Head weights. Rows index inputs, columns outputs (x W + b convention).
struct SmsdHead {
    SmsdConfig cfg;
    Eigen::MatrixXd w1;       // input_dim x hidden
    Eigen::MatrixXd b1;       // 1 x hidden
    Eigen::MatrixXd w_logit;  // hidden x K
    Eigen::MatrixXd b_logit;
    Eigen::MatrixXd w_mean;   // hidden x K*d
    Eigen::MatrixXd b_mean;
    Eigen::MatrixXd w_var;    // hidden x K*d (data branch)
    Eigen::MatrixXd b_var;
    Eigen::MatrixXd w_noise;  // d x K*d (noise branch)
    Eigen::MatrixXd b_noise;
    double fixed_sigma = 0.5; // FixedIsotropic constant, never updated

    static SmsdHead init(const SmsdConfig& cfg, Rng& rng);
    static SmsdHead zeros_like(const SmsdHead& h);

    // Named views of every weight block, in a fixed order.
    std::vector<std::pair<std::string, Eigen::MatrixXd*>> groups();
    std::vector<std::pair<std::string, const Eigen::MatrixXd*>> groups() const;
};

// Intermediate values reused by the backward pass.
struct SmsdCache {
    Eigen::RowVectorXd x;
    Eigen::RowVectorXd hidden;  // tanh activations
    Eigen::RowVectorXd noise;   // epsilon fed to the noise branch
    Eigen::RowVectorXd raw_var; // data + noise branch, pre-softplus (K*d)
};

// `noise` may be empty (zero noise). Throws on dimension mismatch.
MixtureParams mdn_forward(const Eigen::VectorXd& x, const SmsdHead& head, const Eigen::VectorXd& noise = {},
                          SmsdCache* cache = nullptr);

double smsd_nll(const Eigen::VectorXd& y, const MixtureParams& mp, const SmsdConfig& cfg);

struct SmsdGradients {
    SmsdHead params;        // same layout as the head; fixed_sigma slot holds 0
    Eigen::VectorXd input;  // d loss / d x
    double loss = 0.0;
};

// Loss and gradients w.r.t. all head weights and the input vector.
SmsdGradients smsd_nll_grad(const Eigen::VectorXd& y, const MixtureParams& mp, const SmsdHead& head,
                            const SmsdCache& cache);

struct SmsdSample {
    Eigen::VectorXd value;
    int component = 0;
};

SmsdSample smsd_sample(const MixtureParams& mp, Rng& rng);

// Mixture mean sum_k pi_k mu_k.
Eigen::VectorXd mixture_mean(const MixtureParams& mp);
// Mean of the highest-weight component.
Eigen::VectorXd mixture_mode_mean(const MixtureParams& mp);

}  // namespace stylecodec
