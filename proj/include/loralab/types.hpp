#pragma once
// Core identifiers and prompt shapes shared by every module.

#include <compare>
#include <cstdint>
#include <optional>
#include <string>

namespace loralab {

// Dense entity index, 0 <= value < num_entities.
struct EntityId {
    std::int32_t value = 0;
    auto operator<=>(const EntityId&) const = default;
};

// Dense relation index, 0 <= value < num_relations.
struct RelationId {
    std::int32_t value = 0;
    auto operator<=>(const RelationId&) const = default;
};

// A query the model completes with an entity. One-hop prompts are the
// token pair (subject, rel1); two-hop prompts are (subject, rel1, rel2)
// and ask for rel2(rel1(subject)). No other shapes exist.
struct Prompt {
    EntityId subject;
    RelationId rel1;
    std::optional<RelationId> rel2;

    static Prompt one_hop(EntityId subject, RelationId rel) {
        return Prompt{subject, rel, std::nullopt};
    }
    static Prompt two_hop(EntityId subject, RelationId r1, RelationId r2) {
        return Prompt{subject, r1, r2};
    }
    bool is_two_hop() const { return rel2.has_value(); }

    auto operator<=>(const Prompt&) const = default;
};

std::string to_string(const Prompt& p);

} // namespace loralab
