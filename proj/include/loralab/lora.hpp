#pragma once
// Closed-form low-rank edits of the output map: the rank-one single-fact
// update, the multi-fact Gram-matrix interpolant, penalty accounting, and
// an independent numerical-minimality oracle.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "loralab/model.hpp"
#include "loralab/types.hpp"

namespace loralab {

// StrictOneHot applies the textbook update (i_new - i_old) along the edit
// prompt's feature direction and requires the base model to currently
// predict old_target. ExactRedirect replaces i_old with the model's
// actual output W*phi so the post-edit output is exact even when the
// base fit is approximate.
enum class EditMode { StrictOneHot, ExactRedirect };

struct EditProvenance {
    Prompt prompt;
    EntityId old_target;
    EntityId new_target;
};

struct Adapter {
    Eigen::MatrixXd out_factor; // num_entities x s
    Eigen::MatrixXd in_factor;  // m x s
    EditMode mode = EditMode::ExactRedirect;
    std::vector<EditProvenance> provenance;

    Eigen::Index rank() const { return out_factor.cols(); }
    Eigen::MatrixXd delta() const { return out_factor * in_factor.transpose(); }
    // delta * phi without materializing the full matrix.
    Eigen::VectorXd apply(const Eigen::VectorXd& phi) const {
        return out_factor * (in_factor.transpose() * phi);
    }
};

inline constexpr double kFeatureEpsilon = 1e-10; // dead-feature floor
inline constexpr double kGramConditionCap = 1e12;

struct EditSpec {
    Prompt prompt;
    EntityId old_target;
    EntityId new_target;
};

// Single-fact closed-form update; rank one, factors stored with balanced
// column norms.
Adapter rank_one_edit(const ModelParams& params, const Prompt& prompt,
                      EntityId old_target, EntityId new_target, EditMode mode);

// Minimum-penalty interpolant of several edits at once:
// delta = D * G^-1 * P^T over the edit prompts' feature columns P.
Adapter multi_fact_edit(const ModelParams& params, std::span<const EditSpec> edits,
                        EditMode mode);

// ||out_factor||_F^2 + ||in_factor||_F^2 (squared-norm convention).
double penalty(const Adapter& adapter);

struct OracleResult {
    double numeric_penalty = 0.0;
    double cosine_q_phi = 0.0; // |cos angle(q, phi)| at convergence
    std::int32_t iterations = 0;
};

// Independent numerical minimization of ||p||^2 + ||q||^2 subject to
// p q^T phi = i_new - i_old, by gradient descent on the reduced objective.
// Never consults the closed form; used to certify its optimality.
OracleResult minimality_oracle(const ModelParams& params, const Prompt& prompt,
                               EntityId old_target, EntityId new_target,
                               std::uint64_t oracle_seed = 0);

void save_adapter(const Adapter& adapter, const std::string& path);
Adapter load_adapter(const std::string& path);

} // namespace loralab
