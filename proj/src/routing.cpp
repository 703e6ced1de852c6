#include "loralab/routing.hpp"

#include <cmath>
#include <sstream>

#include "loralab/errors.hpp"

namespace loralab {

const char* strategy_name(CombineStrategy s) {
    switch (s) {
        case CombineStrategy::Sum: return "sum";
        case CombineStrategy::UniformMerge: return "uniform_merge";
        case CombineStrategy::LinearMerge: return "linear_merge";
        case CombineStrategy::Cat: return "cat";
        case CombineStrategy::Arrow: return "arrow";
    }
    return "unknown";
}

namespace {

void check_adapters(std::span<const Adapter> adapters) {
    if (adapters.empty()) throw ParameterError("combine: empty adapter list");
    const auto rows = adapters.front().out_factor.rows();
    const auto mid = adapters.front().in_factor.rows();
    for (const auto& a : adapters) {
        if (a.out_factor.rows() != rows || a.in_factor.rows() != mid) {
            std::ostringstream os;
            os << "combine: adapter dims mismatch (" << a.out_factor.rows() << "x"
               << a.in_factor.rows() << " vs " << rows << "x" << mid << ")";
            throw ContractError(os.str());
        }
    }
}

void check_weights(std::span<const Adapter> adapters, const std::vector<double>& w,
                   const char* what) {
    if (w.size() != adapters.size()) {
        throw ParameterError(std::string(what) + ": need one weight per adapter, got " +
                             std::to_string(w.size()) + " for " +
                             std::to_string(adapters.size()));
    }
}

// Weighted sum of the full updates, accumulated in adapter order.
Eigen::MatrixXd weighted_delta_sum(std::span<const Adapter> adapters,
                                   const std::vector<double>& weights) {
    Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(adapters.front().out_factor.rows(),
                                                  adapters.front().in_factor.rows());
    for (std::size_t i = 0; i < adapters.size(); ++i) {
        delta.noalias() += weights[i] * (adapters[i].out_factor *
                                         adapters[i].in_factor.transpose());
    }
    return delta;
}

// (sum_i a_i O_i)(sum_i a_i I_i)^T with factors zero-padded to max rank.
Eigen::MatrixXd merged_delta(std::span<const Adapter> adapters,
                             const std::vector<double>& weights) {
    Eigen::Index max_rank = 0;
    for (const auto& a : adapters) max_rank = std::max(max_rank, a.rank());
    Eigen::MatrixXd out_sum =
        Eigen::MatrixXd::Zero(adapters.front().out_factor.rows(), max_rank);
    Eigen::MatrixXd in_sum =
        Eigen::MatrixXd::Zero(adapters.front().in_factor.rows(), max_rank);
    for (std::size_t i = 0; i < adapters.size(); ++i) {
        const auto r = adapters[i].rank();
        out_sum.leftCols(r) += weights[i] * adapters[i].out_factor;
        in_sum.leftCols(r) += weights[i] * adapters[i].in_factor;
    }
    return out_sum * in_sum.transpose();
}

} // namespace

Eigen::VectorXd arrow_prototype(const Adapter& adapter) {
    if (adapter.out_factor.norm() == 0.0 || adapter.in_factor.norm() == 0.0) {
        throw DegenerateAdapter("arrow_prototype: adapter update is zero");
    }
    // delta = O I^T = (Qo Ro)(Qi Ri)^T; the right-singular vectors of the
    // small core Ro Ri^T lift through Qi, so the SVD cost is rank-sized.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr_out(adapter.out_factor);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr_in(adapter.in_factor);
    const auto r = adapter.rank();
    const Eigen::MatrixXd r_out =
        qr_out.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd r_in =
        qr_in.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(r_out * r_in.transpose(),
                                          Eigen::ComputeFullV);
    const Eigen::MatrixXd q_in = qr_in.householderQ() *
                                 Eigen::MatrixXd::Identity(adapter.in_factor.rows(), r);
    Eigen::VectorXd proto = q_in * svd.matrixV().col(0);
    proto.normalize();

    Eigen::Index top = 0;
    for (Eigen::Index i = 1; i < proto.size(); ++i) {
        if (std::abs(proto(i)) > std::abs(proto(top))) top = i;
    }
    if (proto(top) < 0.0) proto = -proto;
    return proto;
}

std::vector<double> arrow_route(std::span<const Adapter> adapters,
                                const FeatureVec& query_features,
                                double temperature, bool use_abs) {
    check_adapters(adapters);
    if (!(temperature > 0.0)) throw ParameterError("arrow_route: temperature must be > 0");
    std::vector<double> scores(adapters.size());
    for (std::size_t i = 0; i < adapters.size(); ++i) {
        const double s = arrow_prototype(adapters[i]).dot(query_features);
        scores[i] = use_abs ? std::abs(s) : s;
    }
    double max_score = scores[0];
    for (double s : scores) max_score = std::max(max_score, s);
    double total = 0.0;
    std::vector<double> weights(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        weights[i] = std::exp((scores[i] - max_score) / temperature);
        total += weights[i];
    }
    for (double& w : weights) w /= total;
    return weights;
}

RoutedDelta combine(std::span<const Adapter> adapters, const Combinator& combinator,
                    const std::optional<FeatureVec>& query_features) {
    check_adapters(adapters);
    RoutedDelta routed;
    switch (combinator.strategy) {
        case CombineStrategy::Sum: {
            routed.per_adapter_weights.assign(adapters.size(), 1.0);
            routed.delta = weighted_delta_sum(adapters, routed.per_adapter_weights);
            break;
        }
        case CombineStrategy::Cat: {
            check_weights(adapters, combinator.weights, "cat");
            routed.per_adapter_weights = combinator.weights;
            routed.delta = weighted_delta_sum(adapters, routed.per_adapter_weights);
            break;
        }
        case CombineStrategy::LinearMerge: {
            check_weights(adapters, combinator.weights, "linear_merge");
            routed.per_adapter_weights = combinator.weights;
            routed.delta = merged_delta(adapters, routed.per_adapter_weights);
            break;
        }
        case CombineStrategy::UniformMerge: {
            routed.per_adapter_weights.assign(adapters.size(),
                                              1.0 / static_cast<double>(adapters.size()));
            routed.delta = merged_delta(adapters, routed.per_adapter_weights);
            break;
        }
        case CombineStrategy::Arrow: {
            if (!query_features.has_value()) {
                throw ParameterError("combine: arrow routing requires query features");
            }
            routed.per_adapter_weights = arrow_route(adapters, *query_features,
                                                     combinator.temperature,
                                                     combinator.use_abs);
            for (const auto& a : adapters) {
                routed.prototype_similarities.push_back(
                    arrow_prototype(a).dot(*query_features));
            }
            routed.delta = weighted_delta_sum(adapters, routed.per_adapter_weights);
            break;
        }
    }
    return routed;
}

CatFit fit_cat_weights(const ModelParams& params, std::span<const Adapter> adapters,
                       std::span<const Fact> probes) {
    if (adapters.empty()) throw ParameterError("fit_cat_weights: empty adapter list");
    if (probes.empty()) throw ParameterError("fit_cat_weights: need at least one probe");
    const auto n = static_cast<Eigen::Index>(adapters.size());
    const auto entities = params.dims.num_entities;
    const auto rows = static_cast<Eigen::Index>(probes.size()) * entities;

    Eigen::MatrixXd design(rows, n);
    Eigen::VectorXd residual(rows);
    for (std::size_t p = 0; p < probes.size(); ++p) {
        const FeatureVec phi = features(params, probes[p].first);
        const auto offset = static_cast<Eigen::Index>(p) * entities;
        Eigen::VectorXd target = Eigen::VectorXd::Zero(entities);
        target(probes[p].second.value) = 1.0;
        residual.segment(offset, entities) = target - params.W * phi;
        for (Eigen::Index i = 0; i < n; ++i) {
            design.col(i).segment(offset, entities) =
                adapters[static_cast<std::size_t>(i)].apply(phi);
        }
    }

    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(design);
    CatFit fit;
    fit.degenerate = cod.rank() < n;
    const Eigen::VectorXd alpha = cod.solve(residual);
    fit.weights.assign(alpha.data(), alpha.data() + alpha.size());
    return fit;
}

} // namespace loralab
