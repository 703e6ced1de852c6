#pragma once
// Infinite-width oracle for the random-features MLP: the closed-form
// arc-cosine kernel, its Monte-Carlo counterpart at finite width, and the
// analytic prediction of combined-adapter outputs on two-hop prompts.

#include <Eigen/Dense>

#include "loralab/model.hpp"
#include "loralab/types.hpp"
#include "loralab/world.hpp"

namespace loralab {

// k(x, x') = (|x||x'| / (2(d+1)pi)) * ((pi - eta) cos eta + sin eta),
// cos eta = x.x' / (|x||x'|). The prefactor matches the bias-term kernel
// convention; everything downstream uses ratios, where it cancels.
double arccos_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& x_prime,
                     std::int32_t width);
double arccos_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& x_prime);

// k(x, x') / k(x, x); the global prefactor cancels.
double kernel_ratio(const Eigen::VectorXd& x, const Eigen::VectorXd& x_prime);

// Finite-width empirical ratio ReLU(Ux).ReLU(Ux') / |ReLU(Ux)|^2.
double mc_kernel_ratio(const ModelParams& params, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& x_prime);

struct KernelPrediction {
    double c1 = 0.0; // coefficient on i_y - i_{r1(x)}
    double c2 = 0.0; // coefficient on i_z - i_{r2(y)}
    Eigen::VectorXd eta1; // first edit prompt's mixed input
    Eigen::VectorXd eta2; // second edit prompt's mixed input
    Eigen::VectorXd xi;   // two-hop prompt's mixed input
};

// Analytic coefficients of the two one-hop adapters' contributions on the
// two-hop prompt (subject, r1, r2). edit1 must redirect r1 on the subject
// and edit2 must redirect r2 on edit1's new target.
KernelPrediction predict_two_hop(const ModelParams& params, EntityId subject,
                                 RelationId r1, RelationId r2,
                                 const FactEdit& edit1, const FactEdit& edit2);

struct MixtureDecomposition {
    double c1_hat = 0.0;
    double c2_hat = 0.0;
    double residual_rel = 0.0; // |output - c1 w1 - c2 w2| / |output|
};

// Least-squares projection of an output vector onto span{w1, w2}.
MixtureDecomposition mixture_decompose(const OutputVec& output,
                                       const Eigen::VectorXd& w1,
                                       const Eigen::VectorXd& w2);

} // namespace loralab
