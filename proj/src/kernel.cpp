#include "loralab/kernel.hpp"

#include <algorithm>
#include <cmath>

#include "loralab/errors.hpp"
#include "loralab/lora.hpp"

namespace loralab {

double arccos_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& x_prime,
                     std::int32_t width) {
    const double nx = x.norm();
    const double nxp = x_prime.norm();
    if (nx == 0.0 || nxp == 0.0) {
        throw DegenerateInput("arccos_kernel: zero-norm input");
    }
    const double cos_eta = std::clamp(x.dot(x_prime) / (nx * nxp), -1.0, 1.0);
    const double eta = std::acos(cos_eta);
    const double angular = (M_PI - eta) * cos_eta + std::sin(eta);
    return nx * nxp / (2.0 * (static_cast<double>(width) + 1.0) * M_PI) * angular;
}

double arccos_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& x_prime) {
    return arccos_kernel(x, x_prime, static_cast<std::int32_t>(x.size()));
}

double kernel_ratio(const Eigen::VectorXd& x, const Eigen::VectorXd& x_prime) {
    return arccos_kernel(x, x_prime) / arccos_kernel(x, x);
}

double mc_kernel_ratio(const ModelParams& params, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& x_prime) {
    if (x.size() != params.dims.d || x_prime.size() != params.dims.d) {
        throw ContractError("mc_kernel_ratio: input length does not match model d");
    }
    const Eigen::VectorXd fx = (params.U * x).cwiseMax(0.0);
    const double denom = fx.squaredNorm();
    if (std::sqrt(denom) <= kFeatureEpsilon) {
        throw DegenerateFeatures("mc_kernel_ratio: dead features on x");
    }
    const Eigen::VectorXd fxp = (params.U * x_prime).cwiseMax(0.0);
    return fx.dot(fxp) / denom;
}

KernelPrediction predict_two_hop(const ModelParams& params, EntityId subject,
                                 RelationId r1, RelationId r2,
                                 const FactEdit& edit1, const FactEdit& edit2) {
    if (edit1.rel != r1 || edit1.subject != subject) {
        throw ParameterError("predict_two_hop: first edit must redirect r1 on the subject");
    }
    if (edit2.rel != r2 || edit2.subject != edit1.new_target) {
        throw ParameterError(
            "predict_two_hop: second edit must redirect r2 on the first edit's new target");
    }
    KernelPrediction pred;
    pred.eta1 = mix(params, Prompt::one_hop(subject, r1));
    pred.eta2 = mix(params, Prompt::one_hop(edit1.new_target, r2));
    pred.xi = mix(params, Prompt::two_hop(subject, r1, r2));
    pred.c1 = kernel_ratio(pred.eta1, pred.xi);
    pred.c2 = kernel_ratio(pred.eta2, pred.xi);
    return pred;
}

MixtureDecomposition mixture_decompose(const OutputVec& output,
                                       const Eigen::VectorXd& w1,
                                       const Eigen::VectorXd& w2) {
    if (w1.size() != output.size() || w2.size() != output.size()) {
        throw ContractError("mixture_decompose: length mismatch");
    }
    const double g11 = w1.squaredNorm();
    const double g22 = w2.squaredNorm();
    const double g12 = w1.dot(w2);
    const double det = g11 * g22 - g12 * g12;
    if (g11 == 0.0 || g22 == 0.0 || det <= 1e-12 * g11 * g22) {
        throw DegenerateBasis("mixture_decompose: w1, w2 are (close to) linearly dependent");
    }
    const double b1 = w1.dot(output);
    const double b2 = w2.dot(output);
    MixtureDecomposition mix;
    mix.c1_hat = (g22 * b1 - g12 * b2) / det;
    mix.c2_hat = (g11 * b2 - g12 * b1) / det;
    const double out_norm = output.norm();
    if (out_norm == 0.0) {
        mix.residual_rel = 0.0;
    } else {
        mix.residual_rel = (output - mix.c1_hat * w1 - mix.c2_hat * w2).norm() / out_norm;
    }
    return mix;
}

} // namespace loralab
