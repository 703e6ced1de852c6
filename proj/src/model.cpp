#include "loralab/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "loralab/errors.hpp"
#include "loralab/rng.hpp"

namespace loralab {

namespace {

void check_dims(const ModelDims& dims) {
    if (dims.d < 2) throw ParameterError("model dims: d must be >= 2");
    if (dims.m < 1) throw ParameterError("model dims: m must be >= 1");
    if (dims.num_entities < 2) throw ParameterError("model dims: num_entities must be >= 2");
    if (dims.num_relations < 1) throw ParameterError("model dims: num_relations must be >= 1");
}

void check_prompt(const ModelDims& dims, const Prompt& prompt) {
    auto entity_ok = [&](EntityId e) { return e.value >= 0 && e.value < dims.num_entities; };
    auto relation_ok = [&](RelationId r) { return r.value >= 0 && r.value < dims.num_relations; };
    if (!entity_ok(prompt.subject) || !relation_ok(prompt.rel1) ||
        (prompt.rel2 && !relation_ok(*prompt.rel2))) {
        throw ParameterError("prompt ids out of range: " + to_string(prompt));
    }
}

Eigen::MatrixXd gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                                double stddev) {
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            out(r, c) = rng.gaussian(stddev);
        }
    }
    return out;
}

} // namespace

Eigen::VectorXd ModelParams::entity_embedding(EntityId e) const {
    if (e.value < 0 || e.value >= dims.num_entities) {
        throw ParameterError("entity id out of range: " + std::to_string(e.value));
    }
    return E.row(e.value).transpose();
}

Eigen::VectorXd ModelParams::relation_embedding(RelationId r) const {
    if (r.value < 0 || r.value >= dims.num_relations) {
        throw ParameterError("relation id out of range: " + std::to_string(r.value));
    }
    return E.row(dims.num_entities + r.value).transpose();
}

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
    check_dims(dims);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(dims.d));
    Rng rng(seed);
    ModelParams p;
    p.dims = dims;
    p.seed = seed;
    p.E = gaussian_matrix(rng, dims.vocab(), dims.d, stddev);
    p.U = gaussian_matrix(rng, dims.m, dims.d, stddev);
    p.V = gaussian_matrix(rng, dims.d, dims.d, stddev);
    p.W = Eigen::MatrixXd::Zero(dims.num_entities, dims.m);
    return p;
}

Eigen::VectorXd mix(const ModelParams& params, const Prompt& prompt) {
    check_prompt(params.dims, prompt);
    const Eigen::VectorXd ex = params.entity_embedding(prompt.subject);
    if (!prompt.is_two_hop()) {
        return params.V * ex + params.relation_embedding(prompt.rel1);
    }
    const Eigen::VectorXd er1 = params.relation_embedding(prompt.rel1);
    return params.V * (0.5 * (ex + er1)) + params.relation_embedding(*prompt.rel2);
}

FeatureVec features(const ModelParams& params, const Prompt& prompt) {
    return (params.U * mix(params, prompt)).cwiseMax(0.0);
}

Eigen::MatrixXd features_matrix(const ModelParams& params,
                                std::span<const Fact> facts) {
    Eigen::MatrixXd mixes(params.dims.d, static_cast<Eigen::Index>(facts.size()));
    for (std::size_t k = 0; k < facts.size(); ++k) {
        mixes.col(static_cast<Eigen::Index>(k)) = mix(params, facts[k].first);
    }
    return (params.U * mixes).cwiseMax(0.0);
}

OutputVec forward(const ModelParams& params, const Prompt& prompt,
                  const Eigen::MatrixXd* applied_delta) {
    const FeatureVec phi = features(params, prompt);
    if (applied_delta == nullptr) return params.W * phi;
    if (applied_delta->rows() != params.W.rows() ||
        applied_delta->cols() != params.W.cols()) {
        std::ostringstream os;
        os << "forward: delta shape " << applied_delta->rows() << "x"
           << applied_delta->cols() << " does not match W " << params.W.rows()
           << "x" << params.W.cols();
        throw ContractError(os.str());
    }
    return (params.W + *applied_delta) * phi;
}

namespace {

// At lambda = 0 a rank-deficient Gram usually means colliding feature
// vectors; report the prompts so the caller can fix the fact list.
[[noreturn]] void throw_collisions(std::span<const Fact> facts,
                                   const Eigen::MatrixXd& phi) {
    std::ostringstream os;
    os << "fit_w: singular system at lambda=0";
    bool found = false;
    for (Eigen::Index i = 0; i < phi.cols(); ++i) {
        for (Eigen::Index j = i + 1; j < phi.cols(); ++j) {
            const double scale = std::max(phi.col(i).norm(), phi.col(j).norm());
            if ((phi.col(i) - phi.col(j)).norm() <= 1e-9 * std::max(1.0, scale)) {
                os << (found ? ", " : "; colliding prompts: ");
                os << to_string(facts[static_cast<std::size_t>(i)].first) << " ~ "
                   << to_string(facts[static_cast<std::size_t>(j)].first);
                found = true;
            }
        }
    }
    if (!found) os << "; no duplicate feature vectors found (rank-deficient Gram)";
    throw NumericalError(os.str());
}

} // namespace

Eigen::MatrixXd fit_w(const ModelParams& params, std::span<const Fact> facts,
                      double ridge) {
    if (ridge < 0.0) throw ParameterError("fit_w: ridge must be >= 0");
    if (facts.empty()) return params.W;
    const auto n = static_cast<Eigen::Index>(facts.size());
    const Eigen::Index m = params.dims.m;
    if (m < n) {
        std::cerr << "[loralab] warning: fitting " << n << " facts with only " << m
                  << " hidden units; interpolation is not guaranteed\n";
    }

    Eigen::MatrixXd phi = features_matrix(params, facts); // m x n
    Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(params.dims.num_entities, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const EntityId y = facts[static_cast<std::size_t>(k)].second;
        if (y.value < 0 || y.value >= params.dims.num_entities) {
            throw ParameterError("fit_w: target entity out of range");
        }
        targets(y.value, k) = 1.0;
    }

    if (n <= m) {
        // Dual normal equations over the n x n feature Gram.
        Eigen::MatrixXd gram = phi.transpose() * phi;
        if (ridge > 0.0) {
            gram.diagonal().array() += ridge;
            Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
            if (ldlt.info() != Eigen::Success) throw_collisions(facts, phi);
            return targets * ldlt.solve(phi.transpose());
        }
        // lambda = 0: spectral pseudo-inverse, exact minimum-norm solution.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
        if (eig.info() != Eigen::Success) throw NumericalError("fit_w: eigensolver failed");
        const Eigen::VectorXd& evals = eig.eigenvalues();
        const double cutoff = evals(n - 1) * static_cast<double>(n) * 1e-14;
        if (evals(0) <= cutoff) throw_collisions(facts, phi);
        const Eigen::VectorXd inv = evals.cwiseInverse();
        return targets *
               (eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose()) *
               phi.transpose();
    }

    // More facts than hidden units: primal m x m normal equations.
    Eigen::MatrixXd gram = phi * phi.transpose();
    gram.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ridge > 0.0 && ldlt.info() == Eigen::Success) {
        return ldlt.solve(phi * targets.transpose()).transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) throw NumericalError("fit_w: eigensolver failed");
    const Eigen::VectorXd& evals = eig.eigenvalues();
    const double cutoff = evals(m - 1) * static_cast<double>(m) * 1e-14;
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        if (evals(i) > cutoff) inv(i) = 1.0 / evals(i);
    }
    return (eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose() *
            (phi * targets.transpose()))
        .transpose();
}

EntityId argmax_prediction(const OutputVec& output, bool* tied) {
    if (output.size() == 0) throw ParameterError("argmax of empty output");
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < output.size(); ++i) {
        if (output(i) > output(best)) best = i;
    }
    if (tied != nullptr) {
        std::int64_t hits = 0;
        for (Eigen::Index i = 0; i < output.size(); ++i) {
            if (output(i) == output(best)) ++hits;
        }
        *tied = hits > 1;
    }
    return EntityId{static_cast<std::int32_t>(best)};
}

RecallStats recall_stats(const ModelParams& params, std::span<const Fact> eval,
                         const Eigen::MatrixXd* applied_delta) {
    if (eval.empty()) throw ParameterError("recall: empty evaluation list");
    RecallStats stats;
    stats.total = static_cast<std::int64_t>(eval.size());
    std::int64_t correct = 0;
    for (const auto& [prompt, target] : eval) {
        bool tied = false;
        const EntityId pred = argmax_prediction(forward(params, prompt, applied_delta), &tied);
        if (tied) ++stats.ties;
        if (pred == target) ++correct;
    }
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(stats.total);
    return stats;
}

double recall_accuracy(const ModelParams& params, std::span<const Fact> eval,
                       const Eigen::MatrixXd* applied_delta) {
    return recall_stats(params, eval, applied_delta).accuracy;
}

namespace {

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t hash) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        hash ^= p[i];
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::uint64_t hash_matrix(const Eigen::MatrixXd& mat, std::uint64_t hash) {
    for (Eigen::Index r = 0; r < mat.rows(); ++r) {
        for (Eigen::Index c = 0; c < mat.cols(); ++c) {
            const double v = mat(r, c);
            hash = fnv1a(&v, sizeof(v), hash);
        }
    }
    return hash;
}

constexpr char kParamsMagic[4] = {'L', 'L', 'A', 'B'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kKindParams = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& out, std::uint64_t v) {
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
    if (!in) throw ParseError(path + ": truncated header");
    return v;
}
std::uint64_t read_u64(std::istream& in, const std::string& path) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw ParseError(path + ": truncated header");
    return v;
}
Eigen::MatrixXd read_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols,
                            const std::string& path) {
    Eigen::MatrixXd mat(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            double v = 0.0;
            in.read(reinterpret_cast<char*>(&v), sizeof(v));
            if (!in) throw ParseError(path + ": truncated matrix data");
            mat(r, c) = v;
        }
    }
    return mat;
}

} // namespace

std::uint64_t frozen_hash(const ModelParams& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = hash_matrix(params.E, h);
    h = hash_matrix(params.U, h);
    h = hash_matrix(params.V, h);
    return h;
}

void save_params(const ModelParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParameterError("cannot open for writing: " + path);
    out.write(kParamsMagic, sizeof(kParamsMagic));
    write_u32(out, kFormatVersion);
    write_u32(out, kKindParams);
    write_u32(out, static_cast<std::uint32_t>(params.dims.d));
    write_u32(out, static_cast<std::uint32_t>(params.dims.m));
    write_u32(out, static_cast<std::uint32_t>(params.dims.num_entities));
    write_u32(out, static_cast<std::uint32_t>(params.dims.num_relations));
    write_u64(out, params.seed);
    write_matrix(out, params.E);
    write_matrix(out, params.U);
    write_matrix(out, params.V);
    write_matrix(out, params.W);
    if (!out) throw ParameterError("write failed: " + path);
}

ModelParams load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open: " + path);
    char magic[4] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kParamsMagic, sizeof(magic)) != 0) {
        throw ParseError(path + ": bad magic, not a parameter dump");
    }
    const auto version = read_u32(in, path);
    if (version != kFormatVersion) {
        throw ParseError(path + ": unsupported format version " + std::to_string(version));
    }
    const auto kind = read_u32(in, path);
    if (kind != kKindParams) throw ParseError(path + ": not a parameter dump");
    ModelParams p;
    p.dims.d = static_cast<std::int32_t>(read_u32(in, path));
    p.dims.m = static_cast<std::int32_t>(read_u32(in, path));
    p.dims.num_entities = static_cast<std::int32_t>(read_u32(in, path));
    p.dims.num_relations = static_cast<std::int32_t>(read_u32(in, path));
    p.seed = read_u64(in, path);
    check_dims(p.dims);
    p.E = read_matrix(in, p.dims.vocab(), p.dims.d, path);
    p.U = read_matrix(in, p.dims.m, p.dims.d, path);
    p.V = read_matrix(in, p.dims.d, p.dims.d, path);
    p.W = read_matrix(in, p.dims.num_entities, p.dims.m, path);
    return p;
}

} // namespace loralab
