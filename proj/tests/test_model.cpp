#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "loralab/errors.hpp"
#include "loralab/model.hpp"
#include "loralab/world.hpp"

using namespace loralab;

namespace {

std::vector<Fact> world_facts(const World& w) {
    std::vector<Fact> facts;
    for (const auto& [key, target] : w.facts) {
        facts.push_back({Prompt::one_hop(EntityId{key.second}, RelationId{key.first}),
                         EntityId{target}});
    }
    return facts;
}

} // namespace

TEST_CASE("init_params: Gaussian scale, zero W, determinism") {
    // Enough embedding entries for a tight sample-std check: 104 * 128.
    const ModelDims dims{128, 64, 100, 4};
    const ModelParams p = init_params(dims, 3);

    const double expected_std = 1.0 / std::sqrt(128.0);
    const auto n = static_cast<double>(p.E.size());
    REQUIRE(n >= 1e4);
    const double mean = p.E.sum() / n;
    const double var = (p.E.array() - mean).square().sum() / n;
    const double std = std::sqrt(var);
    CHECK(std > 0.8 * expected_std);
    CHECK(std < 1.2 * expected_std);
    CHECK(std::abs(mean) < 5.0 * expected_std / std::sqrt(n));

    CHECK(p.W.isZero(0.0));

    const ModelParams q = init_params(dims, 3);
    CHECK(p.E == q.E);
    CHECK(p.U == q.U);
    CHECK(p.V == q.V);
    const ModelParams r = init_params(dims, 4);
    CHECK(p.E != r.E);
}

TEST_CASE("mix: identity value map and collapsed two-hop") {
    const ModelDims dims{8, 4, 3, 2};
    ModelParams p = init_params(dims, 1);
    p.V = Eigen::MatrixXd::Identity(8, 8);
    const Eigen::VectorXd ex = p.entity_embedding(EntityId{1});
    const Eigen::VectorXd er = p.relation_embedding(RelationId{0});
    CHECK((mix(p, Prompt::one_hop(EntityId{1}, RelationId{0})) - (ex + er)).norm() ==
          doctest::Approx(0.0));

    // Two-hop with e_x == e_r1 collapses the halves: V e_x + e_r2.
    ModelParams q = init_params(dims, 2);
    q.E.row(dims.num_entities + 0) = q.E.row(1); // relation 0 shares entity 1's embedding
    const Eigen::VectorXd expected =
        q.V * q.E.row(1).transpose() + q.E.row(dims.num_entities + 1).transpose();
    const Eigen::VectorXd got =
        mix(q, Prompt::two_hop(EntityId{1}, RelationId{0}, RelationId{1}));
    CHECK((got - expected).norm() < 1e-14);
}

TEST_CASE("mix: matches an independent dense recomputation") {
    const ModelDims dims{16, 8, 5, 3};
    const ModelParams p = init_params(dims, 7);
    const Prompt one = Prompt::one_hop(EntityId{2}, RelationId{1});
    const Prompt two = Prompt::two_hop(EntityId{4}, RelationId{0}, RelationId{2});

    // Loop-based recomputation, no Eigen products.
    Eigen::VectorXd one_expected(dims.d), two_expected(dims.d);
    for (std::int32_t i = 0; i < dims.d; ++i) {
        double vex = 0.0;
        for (std::int32_t j = 0; j < dims.d; ++j) vex += p.V(i, j) * p.E(2, j);
        one_expected(i) = vex + p.E(dims.num_entities + 1, i);

        double vmean = 0.0;
        for (std::int32_t j = 0; j < dims.d; ++j) {
            vmean += p.V(i, j) * 0.5 * (p.E(4, j) + p.E(dims.num_entities + 0, j));
        }
        two_expected(i) = vmean + p.E(dims.num_entities + 2, i);
    }
    CHECK((mix(p, one) - one_expected).norm() < 1e-14);
    CHECK((mix(p, two) - two_expected).norm() < 1e-14);
}

TEST_CASE("mix: zeroing the rel1 slot leaves (V/2) e_x + e_r2") {
    const ModelDims dims{12, 6, 4, 2};
    const ModelParams p = init_params(dims, 5);
    const Prompt two = Prompt::two_hop(EntityId{0}, RelationId{0}, RelationId{1});
    ModelParams q = p;
    q.E.row(dims.num_entities + 0).setZero();
    const Eigen::VectorXd expected =
        q.V * (0.5 * q.E.row(0).transpose()) + q.E.row(dims.num_entities + 1).transpose();
    CHECK((mix(q, two) - expected).norm() < 1e-14);
}

TEST_CASE("features: zero map, positivity fraction, homogeneity") {
    const ModelDims dims{8, 16, 3, 1};
    ModelParams p = init_params(dims, 2);
    p.U.setZero();
    CHECK(features(p, Prompt::one_hop(EntityId{0}, RelationId{0})).isZero(0.0));

    const ModelDims big{128, 8192, 4, 2};
    const ModelParams q = init_params(big, 11);
    const FeatureVec phi = features(q, Prompt::one_hop(EntityId{1}, RelationId{0}));
    CHECK((phi.array() >= 0.0).all());
    const double positive =
        static_cast<double>((phi.array() > 0.0).count()) / static_cast<double>(phi.size());
    CHECK(positive > 0.4);
    CHECK(positive < 0.6);

    // ReLU positive homogeneity: doubling the mixed input doubles phi.
    const Eigen::VectorXd x = mix(q, Prompt::one_hop(EntityId{1}, RelationId{0}));
    const FeatureVec doubled = (q.U * (2.0 * x)).cwiseMax(0.0);
    CHECK((doubled - 2.0 * phi).norm() < 1e-12);
}

TEST_CASE("forward: zero map, delta distributivity, shape check") {
    const ModelDims dims{16, 32, 5, 2};
    ModelParams p = init_params(dims, 3);
    const Prompt prompt = Prompt::one_hop(EntityId{2}, RelationId{1});
    CHECK(forward(p, prompt).isZero(0.0));

    const World w = gen_world(5, 2, 1.0, 1);
    p.W = fit_w(p, world_facts(w), 1e-10);
    Eigen::MatrixXd delta = Eigen::MatrixXd::Random(5, 32);
    const OutputVec lhs = forward(p, prompt, &delta);
    const OutputVec rhs = forward(p, prompt) + delta * features(p, prompt);
    CHECK((lhs - rhs).lpNorm<Eigen::Infinity>() < 1e-12);

    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(4, 32);
    CHECK_THROWS_AS(forward(p, prompt, &bad), ContractError);
}

TEST_CASE("fit_w: single fact closed form and exact interpolation") {
    const ModelDims dims{32, 64, 6, 2};
    ModelParams p = init_params(dims, 9);
    const Prompt prompt = Prompt::one_hop(EntityId{3}, RelationId{0});
    const std::vector<Fact> facts{{prompt, EntityId{4}}};
    p.W = fit_w(p, facts, 0.0);

    const FeatureVec phi = features(p, prompt);
    Eigen::VectorXd target = Eigen::VectorXd::Zero(6);
    target(4) = 1.0;
    const Eigen::MatrixXd expected = target * phi.transpose() / phi.squaredNorm();
    CHECK((p.W - expected).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((forward(p, prompt) - target).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("fit_w: empty fact list leaves W unchanged") {
    const ModelDims dims{8, 16, 3, 1};
    ModelParams p = init_params(dims, 1);
    const std::vector<Fact> none;
    CHECK(fit_w(p, none, 0.0).isZero(0.0));
}

TEST_CASE("fit_w: interpolates independent features to 1e-8") {
    const ModelDims dims{64, 2048, 20, 3};
    ModelParams p = init_params(dims, 17);
    const World w = gen_world(20, 3, 1.0, 17);
    const auto facts = world_facts(w);
    p.W = fit_w(p, facts, 0.0);
    double worst = 0.0;
    for (const auto& [prompt, target] : facts) {
        Eigen::VectorXd expected = Eigen::VectorXd::Zero(20);
        expected(target.value) = 1.0;
        worst = std::max(worst,
                         (forward(p, prompt) - expected).lpNorm<Eigen::Infinity>());
    }
    CHECK(worst <= 1e-8);
}

TEST_CASE("fit_w: duplicate prompts at lambda 0 name the collision") {
    const ModelDims dims{16, 64, 5, 2};
    ModelParams p = init_params(dims, 4);
    const Prompt prompt = Prompt::one_hop(EntityId{1}, RelationId{0});
    const std::vector<Fact> facts{{prompt, EntityId{2}}, {prompt, EntityId{3}}};
    CHECK_THROWS_WITH_AS(p.W = fit_w(p, facts, 0.0),
                         doctest::Contains("colliding prompts"), NumericalError);
}

TEST_CASE("fit_w: more facts than hidden units still solves (primal branch)") {
    const ModelDims dims{32, 16, 8, 4};
    ModelParams p = init_params(dims, 6);
    const World w = gen_world(8, 4, 1.0, 6);
    const auto facts = world_facts(w); // 32 facts > m = 16
    p.W = fit_w(p, facts, 1e-8);
    CHECK(p.W.allFinite());
}

TEST_CASE("recall: tie-break artifact at W = 0 and single-fact miss") {
    const ModelDims dims{16, 32, 6, 2};
    const ModelParams p = init_params(dims, 8);
    const World w = gen_world(6, 2, 1.0, 8);
    const auto facts = world_facts(w);

    // W = 0: every output is all-zero, argmax tie-breaks to entity 0.
    const RecallStats stats = recall_stats(p, facts);
    std::int64_t zero_targets = 0;
    for (const auto& [prompt, target] : facts) zero_targets += target.value == 0;
    CHECK(stats.accuracy ==
          doctest::Approx(static_cast<double>(zero_targets) /
                          static_cast<double>(facts.size())));
    CHECK(stats.ties == static_cast<std::int64_t>(facts.size()));

    ModelParams q = p;
    const std::vector<Fact> first(facts.begin(), facts.begin() + 1);
    q.W = fit_w(q, first, 0.0);
    const std::vector<Fact> wrong{
        {facts[0].first, EntityId{(facts[0].second.value + 1) % 6}}};
    CHECK(recall_accuracy(q, wrong) == 0.0);

    const std::vector<Fact> empty;
    CHECK_THROWS_AS(recall_stats(p, empty), ParameterError);
}

TEST_CASE("frozen matrices: fit does not touch E, U, V") {
    const ModelDims dims{32, 128, 10, 2};
    ModelParams p = init_params(dims, 12);
    const auto before = frozen_hash(p);
    const World w = gen_world(10, 2, 1.0, 12);
    p.W = fit_w(p, world_facts(w), 1e-8);
    CHECK(frozen_hash(p) == before);
}

TEST_CASE("params dump round-trip") {
    const ModelDims dims{16, 32, 5, 2};
    ModelParams p = init_params(dims, 15);
    const World w = gen_world(5, 2, 1.0, 15);
    p.W = fit_w(p, world_facts(w), 1e-9);
    const auto path = std::filesystem::temp_directory_path() / "loralab_params_test.bin";
    save_params(p, path.string());
    const ModelParams q = load_params(path.string());
    CHECK(q.dims == p.dims);
    CHECK(q.seed == p.seed);
    CHECK(q.E == p.E);
    CHECK(q.U == p.U);
    CHECK(q.V == p.V);
    CHECK(q.W == p.W);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_params("/nonexistent/params.bin"), ParseError);
}

TEST_CASE("prompts with out-of-range ids are rejected") {
    const ModelDims dims{8, 16, 3, 2};
    const ModelParams p = init_params(dims, 1);
    CHECK_THROWS_AS(features(p, Prompt::one_hop(EntityId{3}, RelationId{0})),
                    ParameterError);
    CHECK_THROWS_AS(features(p, Prompt::one_hop(EntityId{0}, RelationId{2})),
                    ParameterError);
    CHECK_THROWS_AS(features(p, Prompt::two_hop(EntityId{0}, RelationId{0}, RelationId{5})),
                    ParameterError);
}
