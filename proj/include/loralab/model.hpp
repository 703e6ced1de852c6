#pragma once
// The simplified one-layer transformer: frozen random token embeddings,
// a frozen random-features ReLU MLP, single-head attention hard-coded to
// uniform weights, and a trainable linear output map.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "loralab/types.hpp"

namespace loralab {

using FeatureVec = Eigen::VectorXd; // length-m post-ReLU activation
using OutputVec = Eigen::VectorXd;  // length-num_entities score vector

struct ModelDims {
    std::int32_t d = 0; // embedding width
    std::int32_t m = 0; // MLP hidden width
    std::int32_t num_entities = 0;
    std::int32_t num_relations = 0;

    std::int32_t vocab() const { return num_entities + num_relations; }
    bool operator==(const ModelDims&) const = default;
};

// E, U, V are frozen after init; W is the only trainable matrix.
struct ModelParams {
    Eigen::MatrixXd E; // vocab x d token embeddings
    Eigen::MatrixXd U; // m x d MLP input map
    Eigen::MatrixXd V; // d x d attention value projection
    Eigen::MatrixXd W; // num_entities x m output map
    ModelDims dims;
    std::uint64_t seed = 0;

    Eigen::VectorXd entity_embedding(EntityId e) const;
    Eigen::VectorXd relation_embedding(RelationId r) const;
};

using Fact = std::pair<Prompt, EntityId>;

// E, U, V entries i.i.d. Gaussian with standard deviation 1/sqrt(d);
// W starts at zero. Deterministic per seed.
ModelParams init_params(const ModelDims& dims, std::uint64_t seed);

// Attention-mixed final-token input: the last token's embedding plus V
// applied to the uniform mean of the preceding tokens' embeddings.
Eigen::VectorXd mix(const ModelParams& params, const Prompt& prompt);

// phi = ReLU(U * mix(prompt)).
FeatureVec features(const ModelParams& params, const Prompt& prompt);

// Feature vectors of several prompts as the columns of an m x n matrix.
Eigen::MatrixXd features_matrix(const ModelParams& params,
                                std::span<const Fact> facts);

// (W + delta) * features(prompt); delta defaults to zero.
OutputVec forward(const ModelParams& params, const Prompt& prompt,
                  const Eigen::MatrixXd* applied_delta = nullptr);

// Ridge / minimum-norm least-squares fit of W to the given facts.
// Solves the smaller of the primal (m x m) and dual (n x n) normal
// equations; lambda = 0 uses an eigendecomposition pseudo-inverse.
Eigen::MatrixXd fit_w(const ModelParams& params, std::span<const Fact> facts,
                      double ridge);

// Lowest entity index among the entries tied for the maximum score.
EntityId argmax_prediction(const OutputVec& output, bool* tied = nullptr);

struct RecallStats {
    double accuracy = 0.0;
    std::int64_t ties = 0; // prompts whose argmax was not unique
    std::int64_t total = 0;
};

RecallStats recall_stats(const ModelParams& params, std::span<const Fact> eval,
                         const Eigen::MatrixXd* applied_delta = nullptr);

double recall_accuracy(const ModelParams& params, std::span<const Fact> eval,
                       const Eigen::MatrixXd* applied_delta = nullptr);

// Order-insensitive content hash of the frozen matrices (E, U, V).
std::uint64_t frozen_hash(const ModelParams& params);

// Versioned binary dump of the full parameter set.
void save_params(const ModelParams& params, const std::string& path);
ModelParams load_params(const std::string& path);

} // namespace loralab
