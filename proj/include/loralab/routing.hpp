#pragma once
// Adapter combination strategies: plain sum, uniform merge, weighted
// linear merge, weighted output combination with fitted scalars, and
// prototype-similarity routing.

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "loralab/lora.hpp"
#include "loralab/model.hpp"

namespace loralab {

enum class CombineStrategy { Sum, UniformMerge, LinearMerge, Cat, Arrow };

struct Combinator {
    CombineStrategy strategy = CombineStrategy::Sum;
    std::vector<double> weights; // LinearMerge / Cat: one weight per adapter
    double temperature = 1.0;    // Arrow softmax temperature
    bool use_abs = true;         // Arrow: score on |proto . phi|

    static Combinator sum() { return {CombineStrategy::Sum, {}, 1.0, true}; }
    static Combinator uniform_merge() { return {CombineStrategy::UniformMerge, {}, 1.0, true}; }
    static Combinator linear_merge(std::vector<double> w) {
        return {CombineStrategy::LinearMerge, std::move(w), 1.0, true};
    }
    static Combinator cat(std::vector<double> w) {
        return {CombineStrategy::Cat, std::move(w), 1.0, true};
    }
    static Combinator arrow(double temperature = 1.0, bool use_abs = true) {
        return {CombineStrategy::Arrow, {}, temperature, use_abs};
    }
};

const char* strategy_name(CombineStrategy s);

struct RoutedDelta {
    Eigen::MatrixXd delta; // num_entities x m effective update
    std::vector<double> per_adapter_weights;
    std::vector<double> prototype_similarities; // Arrow only
};

// Effective update under the given strategy. Arrow requires the query's
// feature vector; merge variants zero-pad factors to the largest rank.
RoutedDelta combine(std::span<const Adapter> adapters, const Combinator& combinator,
                    const std::optional<FeatureVec>& query_features = std::nullopt);

// Unit top right-singular direction of the adapter's update, sign chosen
// so the largest-magnitude entry is positive.
Eigen::VectorXd arrow_prototype(const Adapter& adapter);

// softmax(score / temperature) with score_i = proto_i . phi (abs optional).
std::vector<double> arrow_route(std::span<const Adapter> adapters,
                                const FeatureVec& query_features,
                                double temperature, bool use_abs);

struct CatFit {
    std::vector<double> weights;
    bool degenerate = false; // rank-deficient system, minimum-norm answer
};

// Least-squares scalar weights minimizing the probe-set output error of
// W + sum_i alpha_i * delta_i.
CatFit fit_cat_weights(const ModelParams& params, std::span<const Adapter> adapters,
                       std::span<const Fact> probes);

} // namespace loralab
