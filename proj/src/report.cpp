#include "loralab/report.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include <json.hpp>

#include "loralab/errors.hpp"

namespace loralab {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::uint64_t fnv1a_hash(const std::string& data) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

void Report::add_row(std::vector<std::string> cells) {
    if (cells.size() != columns.size()) {
        throw ContractError("report row width " + std::to_string(cells.size()) +
                            " does not match " + std::to_string(columns.size()) +
                            " columns");
    }
    rows.push_back(std::move(cells));
}

void Report::add_aggregate(const std::string& name, double value) {
    aggregates.emplace_back(name, value);
}

double Report::aggregate(const std::string& name) const {
    for (const auto& [k, v] : aggregates) {
        if (k == name) return v;
    }
    throw ParameterError("no aggregate named '" + name + "'");
}

namespace {

// RFC-4180: quote when a cell contains comma, quote, or newline.
std::string csv_escape(const std::string& cell) {
    if (cell.find_first_of(",\"\n\r") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

} // namespace

std::string report_to_csv(const Report& report) {
    std::ostringstream os;
    for (std::size_t i = 0; i < report.columns.size(); ++i) {
        if (i) os << ",";
        os << csv_escape(report.columns[i]);
    }
    os << "\r\n";
    for (const auto& row : report.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) os << ",";
            os << csv_escape(row[i]);
        }
        os << "\r\n";
    }
    return os.str();
}

std::string report_to_json(const Report& report) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["experiment"] = report.experiment;
    j["config_hash"] = report.config_hash;
    j["columns"] = report.columns;
    j["rows"] = report.rows;
    nlohmann::json aggs = nlohmann::json::object();
    for (const auto& [k, v] : report.aggregates) aggs[k] = v;
    j["aggregates"] = std::move(aggs);
    j["claims"] = report.claims;
    j["notes"] = report.notes;
    return j.dump(2) + "\n";
}

std::string report_to_markdown(const Report& report) {
    std::ostringstream os;
    os << "# " << report.experiment << "\n\n";
    os << "config hash: `" << report.config_hash << "`\n\n";
    if (!report.claims.empty()) {
        os << "## Checks\n\n";
        for (const auto& c : report.claims) os << "- " << c << "\n";
        os << "\n";
    }
    if (!report.aggregates.empty()) {
        os << "## Aggregates\n\n| metric | value |\n|---|---|\n";
        for (const auto& [k, v] : report.aggregates) {
            os << "| " << k << " | " << format_double(v) << " |\n";
        }
        os << "\n";
    }
    if (!report.notes.empty()) {
        os << "## Notes\n\n";
        for (const auto& n : report.notes) os << "- " << n << "\n";
        os << "\n";
    }
    os << "rows: " << report.rows.size() << " (see CSV)\n";
    return os.str();
}

void write_report_files(const Report& report, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    auto write = [&](const std::string& suffix, const std::string& text) {
        const auto path = std::filesystem::path(out_dir) / (report.experiment + suffix);
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ParameterError("cannot open for writing: " + path.string());
        out << text;
        if (!out) throw ParameterError("write failed: " + path.string());
    };
    write(".csv", report_to_csv(report));
    write(".json", report_to_json(report));
    write(".md", report_to_markdown(report));
}

void parallel_for_ordered(std::int32_t count, std::int32_t threads,
                          const std::function<void(std::int32_t)>& fn) {
    if (count <= 0) return;
    const std::int32_t workers =
        std::max(1, std::min(threads, count));
    if (workers == 1) {
        for (std::int32_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::int32_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    pool.reserve(static_cast<std::size_t>(workers));
    for (std::int32_t t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::int32_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

} // namespace loralab
