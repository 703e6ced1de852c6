#include "loralab/lora.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "loralab/errors.hpp"
#include "loralab/rng.hpp"

namespace loralab {

namespace {

Eigen::VectorXd one_hot(std::int32_t index, std::int32_t size) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(size);
    v(index) = 1.0;
    return v;
}

void check_target(const ModelParams& params, EntityId e, const char* what) {
    if (e.value < 0 || e.value >= params.dims.num_entities) {
        throw ParameterError(std::string(what) + " entity out of range: " +
                             std::to_string(e.value));
    }
}

// Scale each out/in column pair so the two norms match; leaves the
// product unchanged and makes the stored penalty well defined.
void balance_columns(Eigen::MatrixXd& out_factor, Eigen::MatrixXd& in_factor) {
    for (Eigen::Index j = 0; j < out_factor.cols(); ++j) {
        const double no = out_factor.col(j).norm();
        const double ni = in_factor.col(j).norm();
        if (no == 0.0 || ni == 0.0) {
            out_factor.col(j).setZero();
            in_factor.col(j).setZero();
            continue;
        }
        const double s = std::sqrt(ni / no);
        out_factor.col(j) *= s;
        in_factor.col(j) /= s;
    }
}

} // namespace

Adapter rank_one_edit(const ModelParams& params, const Prompt& prompt,
                      EntityId old_target, EntityId new_target, EditMode mode) {
    check_target(params, old_target, "rank_one_edit: old");
    check_target(params, new_target, "rank_one_edit: new");
    const FeatureVec phi = features(params, prompt);
    const double norm2 = phi.squaredNorm();
    if (std::sqrt(norm2) <= kFeatureEpsilon) {
        throw DegenerateFeatures("rank_one_edit: dead features on prompt " +
                                 to_string(prompt));
    }

    Eigen::VectorXd direction;
    if (mode == EditMode::StrictOneHot) {
        const EntityId predicted = argmax_prediction(params.W * phi);
        if (predicted != old_target) {
            throw StaleBaseFact("rank_one_edit: model predicts entity " +
                                std::to_string(predicted.value) + " on prompt " +
                                to_string(prompt) + ", not the stated old target " +
                                std::to_string(old_target.value));
        }
        direction = one_hot(new_target.value, params.dims.num_entities) -
                    one_hot(old_target.value, params.dims.num_entities);
    } else {
        direction = one_hot(new_target.value, params.dims.num_entities) - params.W * phi;
    }

    Adapter adapter;
    adapter.mode = mode;
    adapter.provenance.push_back({prompt, old_target, new_target});
    adapter.out_factor = direction / norm2;
    adapter.in_factor = phi;
    balance_columns(adapter.out_factor, adapter.in_factor);
    return adapter;
}

Adapter multi_fact_edit(const ModelParams& params, std::span<const EditSpec> edits,
                        EditMode mode) {
    if (edits.empty()) throw ParameterError("multi_fact_edit: no edits given");
    const auto k = static_cast<Eigen::Index>(edits.size());

    Eigen::MatrixXd feature_cols(params.dims.m, k); // P
    Eigen::MatrixXd directions(params.dims.num_entities, k); // D
    for (Eigen::Index i = 0; i < k; ++i) {
        const auto& e = edits[static_cast<std::size_t>(i)];
        check_target(params, e.old_target, "multi_fact_edit: old");
        check_target(params, e.new_target, "multi_fact_edit: new");
        const FeatureVec phi = features(params, e.prompt);
        if (phi.norm() <= kFeatureEpsilon) {
            throw DegenerateFeatures("multi_fact_edit: dead features on prompt " +
                                     to_string(e.prompt));
        }
        feature_cols.col(i) = phi;
        if (mode == EditMode::StrictOneHot) {
            const EntityId predicted = argmax_prediction(params.W * phi);
            if (predicted != e.old_target) {
                throw StaleBaseFact("multi_fact_edit: stale old target on prompt " +
                                    to_string(e.prompt));
            }
            directions.col(i) =
                one_hot(e.new_target.value, params.dims.num_entities) -
                one_hot(e.old_target.value, params.dims.num_entities);
        } else {
            directions.col(i) =
                one_hot(e.new_target.value, params.dims.num_entities) - params.W * phi;
        }
    }

    const Eigen::MatrixXd gram = feature_cols.transpose() * feature_cols;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) {
        throw NumericalError("multi_fact_edit: Gram eigensolver failed");
    }
    const double emin = eig.eigenvalues()(0);
    const double emax = eig.eigenvalues()(k - 1);
    const double condition = emin > 0.0 ? emax / emin :
                             std::numeric_limits<double>::infinity();
    if (!(condition < kGramConditionCap)) {
        std::ostringstream os;
        os << "multi_fact_edit: Gram condition " << condition
           << " exceeds cap " << kGramConditionCap
           << "; edit prompts are (close to) linearly dependent";
        throw SingularGram(os.str());
    }

    Adapter adapter;
    adapter.mode = mode;
    for (const auto& e : edits) {
        adapter.provenance.push_back({e.prompt, e.old_target, e.new_target});
    }
    adapter.out_factor = eig.eigenvectors() *
                         eig.eigenvalues().cwiseInverse().asDiagonal() *
                         eig.eigenvectors().transpose();
    adapter.out_factor = directions * adapter.out_factor; // D * G^-1
    adapter.in_factor = feature_cols;
    balance_columns(adapter.out_factor, adapter.in_factor);
    return adapter;
}

double penalty(const Adapter& adapter) {
    return adapter.out_factor.squaredNorm() + adapter.in_factor.squaredNorm();
}

OracleResult minimality_oracle(const ModelParams& params, const Prompt& prompt,
                               EntityId old_target, EntityId new_target,
                               std::uint64_t oracle_seed) {
    check_target(params, old_target, "minimality_oracle: old");
    check_target(params, new_target, "minimality_oracle: new");
    const FeatureVec phi = features(params, prompt);
    if (phi.norm() <= kFeatureEpsilon) {
        throw DegenerateFeatures("minimality_oracle: dead features");
    }
    const Eigen::VectorXd w =
        one_hot(new_target.value, params.dims.num_entities) -
        one_hot(old_target.value, params.dims.num_entities);
    const double w_norm2 = w.squaredNorm();
    if (w_norm2 == 0.0) return OracleResult{0.0, 1.0, 0};

    // Eliminating p = w / (q^T phi) enforces the constraint exactly and
    // leaves J(q) = ||w||^2 / (q^T phi)^2 + ||q||^2 to minimize over q.
    Rng rng(oracle_seed);
    Eigen::VectorXd q(params.dims.m);
    for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = rng.gaussian();
    q.normalize();
    if (q.dot(phi) < 0.0) q = -q;
    if (q.dot(phi) == 0.0) q = q + 0.5 * phi / phi.norm();

    auto objective = [&](const Eigen::VectorXd& v) {
        const double s = v.dot(phi);
        return w_norm2 / (s * s) + v.squaredNorm();
    };

    const std::int32_t max_iters = 200000;
    double value = objective(q);
    std::int32_t iter = 0;
    for (; iter < max_iters; ++iter) {
        const double s = q.dot(phi);
        const Eigen::VectorXd grad = -2.0 * w_norm2 / (s * s * s) * phi + 2.0 * q;
        const double grad_norm = grad.norm();
        if (grad_norm <= 1e-12 * std::max(1.0, value)) break;
        // Backtracking line search.
        double step = 1.0;
        bool moved = false;
        for (std::int32_t half = 0; half < 60; ++half) {
            const Eigen::VectorXd cand = q - step * grad;
            const double cs = cand.dot(phi);
            if (cs > 0.0) {
                const double cv = objective(cand);
                if (cv < value - 1e-4 * step * grad_norm * grad_norm) {
                    q = cand;
                    value = cv;
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!moved) break;
    }

    const double s = q.dot(phi);
    const double grad_norm =
        (-2.0 * w_norm2 / (s * s * s) * phi + 2.0 * q).norm();
    if (grad_norm > 1e-6 * std::max(1.0, value)) {
        std::ostringstream os;
        os << "minimality_oracle: no convergence after " << iter
           << " iterations; |grad| = " << grad_norm << ", objective = " << value;
        throw OracleFailed(os.str());
    }

    OracleResult result;
    result.numeric_penalty = value;
    result.cosine_q_phi = std::abs(q.dot(phi)) / (q.norm() * phi.norm());
    result.iterations = iter;
    return result;
}

// --- serialization ---------------------------------------------------------

namespace {

constexpr char kAdapterMagic[4] = {'L', 'L', 'A', 'B'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kKindAdapter = 2;

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_i32(std::ostream& out, std::int32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_matrix(std::ostream& out, const Eigen::MatrixXd& mat) {
    for (Eigen::Index r = 0; r < mat.rows(); ++r) {
        for (Eigen::Index c = 0; c < mat.cols(); ++c) {
            const double v = mat(r, c);
            out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    }
}
std::uint32_t read_u32(std::istream& in, const std::string& path) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw ParseError(path + ": truncated adapter file");
    return v;
}
std::int32_t read_i32(std::istream& in, const std::string& path) {
    std::int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw ParseError(path + ": truncated adapter file");
    return v;
}
Eigen::MatrixXd read_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols,
                            const std::string& path) {
    Eigen::MatrixXd mat(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            double v = 0.0;
            in.read(reinterpret_cast<char*>(&v), sizeof(v));
            if (!in) throw ParseError(path + ": truncated adapter matrix");
            mat(r, c) = v;
        }
    }
    return mat;
}

} // namespace

void save_adapter(const Adapter& adapter, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParameterError("cannot open for writing: " + path);
    out.write(kAdapterMagic, sizeof(kAdapterMagic));
    write_u32(out, kFormatVersion);
    write_u32(out, kKindAdapter);
    write_u32(out, static_cast<std::uint32_t>(adapter.out_factor.rows()));
    write_u32(out, static_cast<std::uint32_t>(adapter.in_factor.rows()));
    write_u32(out, static_cast<std::uint32_t>(adapter.rank()));
    write_u32(out, adapter.mode == EditMode::StrictOneHot ? 0u : 1u);
    write_u32(out, static_cast<std::uint32_t>(adapter.provenance.size()));
    for (const auto& prov : adapter.provenance) {
        write_i32(out, prov.prompt.subject.value);
        write_i32(out, prov.prompt.rel1.value);
        write_i32(out, prov.prompt.rel2 ? prov.prompt.rel2->value : -1);
        write_i32(out, prov.old_target.value);
        write_i32(out, prov.new_target.value);
    }
    write_matrix(out, adapter.out_factor);
    write_matrix(out, adapter.in_factor);
    if (!out) throw ParameterError("write failed: " + path);
}

Adapter load_adapter(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open: " + path);
    char magic[4] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kAdapterMagic, sizeof(magic)) != 0) {
        throw ParseError(path + ": bad magic, not an adapter file");
    }
    const auto version = read_u32(in, path);
    if (version != kFormatVersion) {
        throw ParseError(path + ": unsupported format version " + std::to_string(version));
    }
    if (read_u32(in, path) != kKindAdapter) throw ParseError(path + ": not an adapter file");
    const auto num_entities = static_cast<Eigen::Index>(read_u32(in, path));
    const auto m = static_cast<Eigen::Index>(read_u32(in, path));
    const auto rank = static_cast<Eigen::Index>(read_u32(in, path));
    Adapter adapter;
    adapter.mode = read_u32(in, path) == 0 ? EditMode::StrictOneHot : EditMode::ExactRedirect;
    const auto prov_count = read_u32(in, path);
    for (std::uint32_t i = 0; i < prov_count; ++i) {
        EditProvenance prov;
        prov.prompt.subject.value = read_i32(in, path);
        prov.prompt.rel1.value = read_i32(in, path);
        const auto rel2 = read_i32(in, path);
        if (rel2 >= 0) prov.prompt.rel2 = RelationId{rel2};
        prov.old_target.value = read_i32(in, path);
        prov.new_target.value = read_i32(in, path);
        adapter.provenance.push_back(prov);
    }
    if (adapter.provenance.empty()) throw ParseError(path + ": adapter without provenance");
    adapter.out_factor = read_matrix(in, num_entities, rank, path);
    adapter.in_factor = read_matrix(in, m, rank, path);
    return adapter;
}

} // namespace loralab
