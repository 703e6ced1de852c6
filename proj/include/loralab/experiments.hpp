#pragma once
// Configured, seeded experiment pipelines with CSV / JSON / markdown
// reports. Each run is a pure function of its config; trials may execute
// in parallel without changing the output bytes.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "loralab/model.hpp"
#include "loralab/report.hpp"
#include "loralab/routing.hpp"
#include "loralab/world.hpp"

namespace loralab {

struct ExperimentConfig {
    std::string experiment;
    ModelDims dims{128, 8192, 30, 4};
    double density = 1.0;
    double ridge = 1e-8;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::int32_t threads = 1;
    std::string out_dir = "out";

    std::int32_t edit_count = 5;        // edit_locality
    std::int32_t chains = 5;            // library: facts per adapter
    std::vector<Combinator> combinators{Combinator::sum(), Combinator::uniform_merge(),
                                        Combinator::cat({}), Combinator::arrow()};
    bool cat_fit_weights = true; // empty cat weights are fitted on probes
    bool arrow_pre_relu = false; // route on U*mix instead of ReLU(U*mix)

    // Graph pools sized so shared-mode entity coincidences stay rare.
    std::array<std::int32_t, 3> partition_sizes{40, 40, 40};

    std::int32_t kernel_d = 64; // kernel convergence sweep
    std::int32_t kernel_pairs = 20;
    std::vector<std::int32_t> m_sweep{1024, 2048, 4096, 8192, 16384, 32768, 65536};

    std::int32_t same_multiple_d = 512;
    std::int32_t same_multiple_m = 32768;
};

// Built-in defaults for a named experiment (desk-scale sizes).
ExperimentConfig default_config(const std::string& experiment);

// Parse a JSON config file; missing keys fall back to the defaults for
// the named experiment.
ExperimentConfig load_config(const std::string& path);
std::uint64_t config_hash(const ExperimentConfig& config);

// Single-fact edits: edited-fact accuracy and retention on untouched
// facts, in both edit modes.
Report run_edit_locality(const ExperimentConfig& config);

// Two one-hop adapters on a chain, combined under every configured
// strategy and evaluated on the two-hop prompt; mixture decomposition
// against the kernel prediction; oracle adapter baseline.
Report run_theorem1(const ExperimentConfig& config);

// 2-combination vs 3-combination adapter libraries (third = oracle).
Report run_library_comparison(const ExperimentConfig& config);

// Ten adapters over a partitioned relation graph; held-out composition
// routing in Disjoint and Shared modes.
Report run_graph_library(const ExperimentConfig& config);

// Multi-fact adapter's contribution on two different two-hop probes,
// projected onto its predicted output direction.
Report run_same_multiple(const ExperimentConfig& config);

// Monte-Carlo kernel-ratio error across the width sweep plus the fitted
// convergence exponent.
Report run_kernel_convergence(const ExperimentConfig& config);

// Dispatch by config.experiment name.
Report run_experiment(const ExperimentConfig& config);

// Derived per-trial stream seeds; distinct salts give independent draws.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

} // namespace loralab
