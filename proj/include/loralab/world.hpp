#pragma once
// Synthetic universes: entities, partial-function relations, one- and
// two-hop facts, fact edits, and the partitioned graph configurations
// used by the adapter-library experiments.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "loralab/types.hpp"

namespace loralab {

struct World {
    std::int32_t num_entities = 0;
    std::int32_t num_relations = 0;
    // (relation, subject) -> target. std::map keeps serialization order
    // stable; at most one target per key is the partial-function invariant.
    std::map<std::pair<std::int32_t, std::int32_t>, std::int32_t> facts;
    std::uint64_t seed = 0;

    bool has_fact(RelationId rel, EntityId subject) const {
        return facts.count({rel.value, subject.value}) > 0;
    }
    EntityId target(RelationId rel, EntityId subject) const;
    void add_fact(RelationId rel, EntityId subject, EntityId target);
    std::size_t fact_count() const { return facts.size(); }

    bool operator==(const World&) const = default;
};

struct FactEdit {
    RelationId rel;
    EntityId subject;
    EntityId old_target;
    EntityId new_target;

    bool operator==(const FactEdit&) const = default;
};

enum class GraphMode { Disjoint, Shared };

// Five atomic relations over three entity partitions, five trained
// two-hop compositions and one held-out composition.
struct GraphConfig {
    GraphMode mode = GraphMode::Disjoint;
    std::array<std::int32_t, 3> partition_sizes{};
    World world; // relations 0..4 over the partitioned entity space
    std::vector<std::pair<RelationId, RelationId>> trained_compositions;
    std::pair<RelationId, RelationId> held_out{RelationId{0}, RelationId{1}};

    // Partition membership: U1 = [0,n1), U2 = [n1,n1+n2), U3 = rest.
    std::int32_t partition_of(EntityId e) const;

    bool operator==(const GraphConfig&) const = default;
};

// Training description for one adapter in a library: the fact edits
// (one- or two-hop prompts with old/new targets) it must encode.
struct AdapterTrainSpec {
    std::vector<FactEdit> one_hop_edits;
    // Two-hop entries: prompt plus the target to store.
    std::vector<std::pair<Prompt, EntityId>> two_hop_targets;
};

struct LibrarySpec {
    std::vector<AdapterTrainSpec> adapters;
    std::vector<std::pair<Prompt, EntityId>> eval_prompts;
    bool allow_overlap = false;
};

// --- generators -----------------------------------------------------------

// Each (relation, subject) pair independently receives a uniformly random
// target with probability `density`. Deterministic per seed.
World gen_world(std::int32_t num_entities, std::int32_t num_relations,
                double density, std::uint64_t seed);

// x -> r2(r1(x)) wherever both hops are defined.
std::map<EntityId, EntityId> compose(const World& world, RelationId r1,
                                     RelationId r2);

// `count` distinct subjects of `rel`; each new target drawn uniformly
// from entities other than the old target.
std::vector<FactEdit> gen_edits(const World& world, RelationId rel,
                                std::int32_t count, std::uint64_t seed);

GraphConfig gen_graph_config(GraphMode mode,
                             std::array<std::int32_t, 3> partition_sizes,
                             std::uint64_t seed);

// Two-hop chains of the held-out or a trained composition, with expected
// targets; used as evaluation prompts for the graph experiments.
std::vector<std::pair<Prompt, EntityId>> composition_prompts(
    const GraphConfig& config, std::pair<RelationId, RelationId> composition);

// Throws ParameterError when training prompt sets overlap without the
// overlap flag, or ids are out of range.
void validate_library(const LibrarySpec& lib, const World& world);

// --- serialization --------------------------------------------------------

void save_world(const World& world, const std::string& path);
World load_world(const std::string& path);
std::string world_to_json(const World& world);
World world_from_json(const std::string& text);

void save_graph_config(const GraphConfig& config, const std::string& path);
GraphConfig load_graph_config(const std::string& path);

} // namespace loralab
