#include "loralab/world.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "loralab/errors.hpp"
#include "loralab/rng.hpp"

namespace loralab {

using nlohmann::json;

std::string to_string(const Prompt& p) {
    std::ostringstream os;
    os << "(subject=" << p.subject.value << ", rel1=" << p.rel1.value;
    if (p.rel2) os << ", rel2=" << p.rel2->value;
    os << ")";
    return os.str();
}

EntityId World::target(RelationId rel, EntityId subject) const {
    auto it = facts.find({rel.value, subject.value});
    if (it == facts.end()) {
        throw ParameterError("no fact for relation " + std::to_string(rel.value) +
                             " on subject " + std::to_string(subject.value));
    }
    return EntityId{it->second};
}

void World::add_fact(RelationId rel, EntityId subject, EntityId target) {
    if (rel.value < 0 || rel.value >= num_relations || subject.value < 0 ||
        subject.value >= num_entities || target.value < 0 ||
        target.value >= num_entities) {
        throw ParameterError("fact ids out of range: rel=" + std::to_string(rel.value) +
                             " subject=" + std::to_string(subject.value) +
                             " target=" + std::to_string(target.value));
    }
    auto [it, inserted] = facts.insert({{rel.value, subject.value}, target.value});
    if (!inserted && it->second != target.value) {
        throw ParameterError("partial-function violation: relation " +
                             std::to_string(rel.value) + " already maps subject " +
                             std::to_string(subject.value));
    }
}

std::int32_t GraphConfig::partition_of(EntityId e) const {
    if (e.value < partition_sizes[0]) return 0;
    if (e.value < partition_sizes[0] + partition_sizes[1]) return 1;
    return 2;
}

World gen_world(std::int32_t num_entities, std::int32_t num_relations,
                double density, std::uint64_t seed) {
    if (num_entities < 2) throw ParameterError("gen_world: num_entities must be >= 2");
    if (num_relations < 1) throw ParameterError("gen_world: num_relations must be >= 1");
    if (!(density > 0.0) || density > 1.0) {
        throw ParameterError("gen_world: density must lie in (0, 1]");
    }
    World w;
    w.num_entities = num_entities;
    w.num_relations = num_relations;
    w.seed = seed;
    Rng rng(seed);
    for (std::int32_t rel = 0; rel < num_relations; ++rel) {
        for (std::int32_t subject = 0; subject < num_entities; ++subject) {
            if (!rng.bernoulli(density)) continue;
            const auto target =
                static_cast<std::int32_t>(rng.uniform_index(static_cast<std::uint64_t>(num_entities)));
            w.add_fact(RelationId{rel}, EntityId{subject}, EntityId{target});
        }
    }
    return w;
}

std::map<EntityId, EntityId> compose(const World& world, RelationId r1,
                                     RelationId r2) {
    if (r1.value < 0 || r1.value >= world.num_relations || r2.value < 0 ||
        r2.value >= world.num_relations) {
        throw ParameterError("compose: relation id out of range");
    }
    std::map<EntityId, EntityId> out;
    for (const auto& [key, mid] : world.facts) {
        if (key.first != r1.value) continue;
        auto second = world.facts.find({r2.value, mid});
        if (second == world.facts.end()) continue;
        out[EntityId{key.second}] = EntityId{second->second};
    }
    return out;
}

std::vector<FactEdit> gen_edits(const World& world, RelationId rel,
                                std::int32_t count, std::uint64_t seed) {
    if (count < 0) throw ParameterError("gen_edits: count must be >= 0");
    std::vector<std::int32_t> subjects;
    for (const auto& [key, target] : world.facts) {
        if (key.first == rel.value) subjects.push_back(key.second);
    }
    if (static_cast<std::int32_t>(subjects.size()) < count) {
        throw ParameterError("gen_edits: relation " + std::to_string(rel.value) +
                             " has only " + std::to_string(subjects.size()) +
                             " facts, need " + std::to_string(count));
    }
    Rng rng(seed);
    // Partial Fisher-Yates over the (sorted) subject list.
    for (std::int32_t i = 0; i < count; ++i) {
        const auto j = i + static_cast<std::int32_t>(
                               rng.uniform_index(subjects.size() - static_cast<std::size_t>(i)));
        std::swap(subjects[static_cast<std::size_t>(i)], subjects[static_cast<std::size_t>(j)]);
    }
    subjects.resize(static_cast<std::size_t>(count));
    std::sort(subjects.begin(), subjects.end());

    std::vector<FactEdit> edits;
    edits.reserve(subjects.size());
    for (std::int32_t subject : subjects) {
        const auto old_target = world.facts.at({rel.value, subject});
        // Uniform over entities != old_target.
        auto draw = static_cast<std::int32_t>(
            rng.uniform_index(static_cast<std::uint64_t>(world.num_entities - 1)));
        if (draw >= old_target) ++draw;
        edits.push_back(FactEdit{rel, EntityId{subject}, EntityId{old_target},
                                 EntityId{draw}});
    }
    return edits;
}

namespace {

constexpr std::array<std::pair<std::int32_t, std::int32_t>, 5> kTrainedCompositions = {{
    {0, 3}, // Rel1 . Rel4
    {2, 3}, // Rel3 . Rel4
    {2, 1}, // Rel3 . Rel2
    {4, 1}, // Rel5 . Rel2
    {4, 3}, // Rel5 . Rel4
}};
constexpr std::pair<std::int32_t, std::int32_t> kHeldOutComposition = {0, 1};

// All six (first-hop, second-hop) pairs, held-out last so every pair gets
// a chain before any gets a second one.
std::array<std::pair<std::int32_t, std::int32_t>, 6> all_compositions() {
    return {{{0, 3}, {2, 3}, {2, 1}, {4, 1}, {4, 3}, {0, 1}}};
}

} // namespace

GraphConfig gen_graph_config(GraphMode mode,
                             std::array<std::int32_t, 3> partition_sizes,
                             std::uint64_t seed) {
    for (auto n : partition_sizes) {
        if (n < 1) throw ParameterError("gen_graph_config: partition sizes must be >= 1");
    }
    const std::int32_t chains =
        std::min({partition_sizes[0], partition_sizes[1], partition_sizes[2]});
    if (chains < 6) {
        throw ParameterError(
            "gen_graph_config: partitions too small; need at least 6 entities per "
            "partition so every composition receives a chain");
    }

    GraphConfig cfg;
    cfg.mode = mode;
    cfg.partition_sizes = partition_sizes;
    cfg.world.num_entities = partition_sizes[0] + partition_sizes[1] + partition_sizes[2];
    cfg.world.num_relations = 5;
    cfg.world.seed = seed;
    for (auto [a, b] : kTrainedCompositions) {
        cfg.trained_compositions.push_back({RelationId{a}, RelationId{b}});
    }
    cfg.held_out = {RelationId{kHeldOutComposition.first},
                    RelationId{kHeldOutComposition.second}};

    const std::int32_t base1 = 0;
    const std::int32_t base2 = partition_sizes[0];
    const std::int32_t base3 = partition_sizes[0] + partition_sizes[1];

    Rng rng(seed);
    const auto comps = all_compositions();

    auto shuffled = [&](std::int32_t base, std::int32_t n) {
        std::vector<std::int32_t> ids(static_cast<std::size_t>(n));
        std::iota(ids.begin(), ids.end(), base);
        for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
            const auto j = i + rng.uniform_index(ids.size() - i);
            std::swap(ids[i], ids[j]);
        }
        return ids;
    };

    if (mode == GraphMode::Disjoint) {
        // One exclusive entity per partition per chain.
        const auto u1 = shuffled(base1, partition_sizes[0]);
        const auto u2 = shuffled(base2, partition_sizes[1]);
        const auto u3 = shuffled(base3, partition_sizes[2]);
        for (std::int32_t i = 0; i < chains; ++i) {
            const auto [ra, rb] = comps[static_cast<std::size_t>(i) % comps.size()];
            const auto a = u1[static_cast<std::size_t>(i)];
            const auto b = u2[static_cast<std::size_t>(i)];
            const auto c = u3[static_cast<std::size_t>(i)];
            cfg.world.add_fact(RelationId{ra}, EntityId{a}, EntityId{b});
            cfg.world.add_fact(RelationId{rb}, EntityId{b}, EntityId{c});
        }
    } else {
        // Same chain count and composition skeleton, but entities are drawn
        // from the shared pools and may participate in several triples.
        for (std::int32_t i = 0; i < chains; ++i) {
            const auto [ra, rb] = comps[static_cast<std::size_t>(i) % comps.size()];
            std::int32_t a = 0;
            do { // subject must be fresh for ra to stay a partial function
                a = base1 + static_cast<std::int32_t>(
                                rng.uniform_index(static_cast<std::uint64_t>(partition_sizes[0])));
            } while (cfg.world.has_fact(RelationId{ra}, EntityId{a}));
            std::int32_t b = 0;
            do {
                b = base2 + static_cast<std::int32_t>(
                                rng.uniform_index(static_cast<std::uint64_t>(partition_sizes[1])));
            } while (cfg.world.has_fact(RelationId{rb}, EntityId{b}));
            const auto c = base3 + static_cast<std::int32_t>(
                                       rng.uniform_index(static_cast<std::uint64_t>(partition_sizes[2])));
            cfg.world.add_fact(RelationId{ra}, EntityId{a}, EntityId{b});
            cfg.world.add_fact(RelationId{rb}, EntityId{b}, EntityId{c});
        }
    }
    return cfg;
}

std::vector<std::pair<Prompt, EntityId>> composition_prompts(
    const GraphConfig& config, std::pair<RelationId, RelationId> composition) {
    std::vector<std::pair<Prompt, EntityId>> prompts;
    for (const auto& [subject, target] :
         compose(config.world, composition.first, composition.second)) {
        prompts.push_back(
            {Prompt::two_hop(subject, composition.first, composition.second), target});
    }
    return prompts;
}

void validate_library(const LibrarySpec& lib, const World& world) {
    if (lib.adapters.empty()) throw ParameterError("library has no adapters");
    std::set<Prompt> seen;
    for (const auto& spec : lib.adapters) {
        std::vector<Prompt> prompts;
        for (const auto& e : spec.one_hop_edits) {
            if (e.rel.value < 0 || e.rel.value >= world.num_relations ||
                e.subject.value < 0 || e.subject.value >= world.num_entities ||
                e.new_target.value < 0 || e.new_target.value >= world.num_entities) {
                throw ParameterError("library edit ids out of range");
            }
            prompts.push_back(Prompt::one_hop(e.subject, e.rel));
        }
        for (const auto& [p, target] : spec.two_hop_targets) {
            if (target.value < 0 || target.value >= world.num_entities) {
                throw ParameterError("library two-hop target out of range");
            }
            prompts.push_back(p);
        }
        for (const auto& p : prompts) {
            if (!seen.insert(p).second && !lib.allow_overlap) {
                throw ParameterError("adapter training prompts overlap on " +
                                     to_string(p) + " and overlap is not allowed");
            }
        }
    }
}

// --- serialization ---------------------------------------------------------

namespace {

json world_to_json_obj(const World& world) {
    json facts = json::array();
    for (const auto& [key, target] : world.facts) {
        facts.push_back({{"rel", key.first}, {"subject", key.second}, {"target", target}});
    }
    std::vector<std::int32_t> relations(static_cast<std::size_t>(world.num_relations));
    std::iota(relations.begin(), relations.end(), 0);
    return json{{"schema_version", 1},
                {"num_entities", world.num_entities},
                {"relations", relations},
                {"facts", std::move(facts)},
                {"seed", world.seed}};
}

World world_from_json_obj(const json& j) {
    World w;
    try {
        w.num_entities = j.at("num_entities").get<std::int32_t>();
        w.num_relations = static_cast<std::int32_t>(j.at("relations").size());
        w.seed = j.at("seed").get<std::uint64_t>();
        std::size_t index = 0;
        for (const auto& f : j.at("facts")) {
            const auto rel = f.at("rel").get<std::int32_t>();
            const auto subject = f.at("subject").get<std::int32_t>();
            const auto target = f.at("target").get<std::int32_t>();
            if (w.facts.count({rel, subject}) > 0) {
                throw ParseError("facts[" + std::to_string(index) +
                                 "]: duplicate key (rel=" + std::to_string(rel) +
                                 ", subject=" + std::to_string(subject) + ")");
            }
            w.add_fact(RelationId{rel}, EntityId{subject}, EntityId{target});
            ++index;
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("world: ") + e.what());
    } catch (const ParameterError& e) {
        throw ParseError(std::string("world: ") + e.what());
    }
    return w;
}

json graph_to_json_obj(const GraphConfig& cfg) {
    json trained = json::array();
    for (auto [a, b] : cfg.trained_compositions) trained.push_back({a.value, b.value});
    json j = world_to_json_obj(cfg.world);
    j["mode"] = cfg.mode == GraphMode::Disjoint ? "disjoint" : "shared";
    j["partition_sizes"] = cfg.partition_sizes;
    j["trained_compositions"] = std::move(trained);
    j["held_out"] = {cfg.held_out.first.value, cfg.held_out.second.value};
    return j;
}

GraphConfig graph_from_json_obj(const json& j) {
    GraphConfig cfg;
    try {
        cfg.world = world_from_json_obj(j);
        const auto mode = j.at("mode").get<std::string>();
        if (mode == "disjoint") {
            cfg.mode = GraphMode::Disjoint;
        } else if (mode == "shared") {
            cfg.mode = GraphMode::Shared;
        } else {
            throw ParseError("graph config: unknown mode '" + mode + "'");
        }
        const auto sizes = j.at("partition_sizes");
        for (std::size_t i = 0; i < 3; ++i) {
            cfg.partition_sizes[i] = sizes.at(i).get<std::int32_t>();
        }
        cfg.trained_compositions.clear();
        for (const auto& c : j.at("trained_compositions")) {
            cfg.trained_compositions.push_back(
                {RelationId{c.at(0).get<std::int32_t>()}, RelationId{c.at(1).get<std::int32_t>()}});
        }
        cfg.held_out = {RelationId{j.at("held_out").at(0).get<std::int32_t>()},
                        RelationId{j.at("held_out").at(1).get<std::int32_t>()}};
    } catch (const json::exception& e) {
        throw ParseError(std::string("graph config: ") + e.what());
    }
    return cfg;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParameterError("cannot open for writing: " + path);
    out << text;
    if (!out) throw ParameterError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

json parse_json_text(const std::string& text, const std::string& context) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ParseError(context + ": not valid JSON");
    return j;
}

} // namespace

std::string world_to_json(const World& world) { return world_to_json_obj(world).dump(2) + "\n"; }

World world_from_json(const std::string& text) {
    return world_from_json_obj(parse_json_text(text, "world"));
}

void save_world(const World& world, const std::string& path) {
    write_text_file(path, world_to_json(world));
}

World load_world(const std::string& path) {
    try {
        return world_from_json(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void save_graph_config(const GraphConfig& config, const std::string& path) {
    write_text_file(path, graph_to_json_obj(config).dump(2) + "\n");
}

GraphConfig load_graph_config(const std::string& path) {
    try {
        return graph_from_json_obj(parse_json_text(read_text_file(path), path));
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

} // namespace loralab
