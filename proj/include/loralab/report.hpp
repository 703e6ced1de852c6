#pragma once
// Experiment report container and deterministic CSV / JSON / markdown
// writers. Cells are pre-formatted strings so repeated runs emit
// byte-identical files.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace loralab {

// Round-trip formatting for doubles ("%.17g"); integers print plainly.
std::string format_double(double v);

std::uint64_t fnv1a_hash(const std::string& data);

struct Report {
    std::string experiment;
    std::uint64_t config_hash = 0;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
    // name -> value, recomputable from the rows.
    std::vector<std::pair<std::string, double>> aggregates;
    // One line per claim the run checks, for the markdown summary.
    std::vector<std::string> claims;
    std::vector<std::string> notes;

    void add_row(std::vector<std::string> cells);
    void add_aggregate(const std::string& name, double value);
    double aggregate(const std::string& name) const;
};

std::string report_to_csv(const Report& report);
std::string report_to_json(const Report& report);
std::string report_to_markdown(const Report& report);

// Writes <out_dir>/<experiment>.csv/.json/.md; creates out_dir.
void write_report_files(const Report& report, const std::string& out_dir);

// Runs fn(0..count-1) on up to `threads` workers; results keep index
// order, so downstream output is independent of the thread count.
void parallel_for_ordered(std::int32_t count, std::int32_t threads,
                          const std::function<void(std::int32_t)>& fn);

} // namespace loralab
