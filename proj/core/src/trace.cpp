#include "lw2g/trace.hpp"

#include "lw2g/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

namespace lw2g {

namespace {

using nlohmann::json;

constexpr double kRadPerDeg = std::numbers::pi / 180.0;

json pool_json(const std::vector<std::vector<int>>& assignments) {
    json out = json::array();
    for (const auto& tasks : assignments) {
        out.push_back(tasks);
    }
    return out;
}

double number(const json& row, const char* key, int line) {
    if (!row.contains(key) || !row.at(key).is_number()) {
        throw FormatError("trace line " + std::to_string(line) + ": missing numeric field '" + key + "'");
    }
    const double v = row.at(key).get<double>();
    if (!std::isfinite(v)) {
        throw FormatError("trace line " + std::to_string(line) + ": non-finite '" + key + "'");
    }
    return v;
}

int integer(const json& row, const char* key, int line) {
    if (!row.contains(key) || !row.at(key).is_number_integer()) {
        throw FormatError("trace line " + std::to_string(line) + ": missing integer field '" + key + "'");
    }
    return row.at(key).get<int>();
}

}  // namespace

std::string trace_line(const TaskReport& report) {
    json records = json::array();
    for (const HindranceRecord& r : report.decision.records) {
        records.push_back({{"set", r.set_id},
                           {"hfc_old_deg", r.hfc_old.degrees()},
                           {"hfc_pre_deg", r.hfc_pre.degrees()},
                           {"z", r.z_degrees()}});
    }
    json row{{"task", report.task},
             {"records", records},
             {"decision", report.decision.grow() ? "grow" : "reuse"},
             {"set", report.set_id},
             {"pool_after", pool_json(report.pool_after)}};
    return row.dump();
}

void write_trace(std::ostream& out, const std::vector<TaskReport>& reports) {
    for (const TaskReport& r : reports) {
        out << trace_line(r) << '\n';
    }
}

ReplayResult replay_trace(std::istream& in) {
    ReplayResult result;
    std::string text;
    int line = 0;
    int task = 0;
    while (std::getline(in, text)) {
        ++line;
        if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) {
            continue;
        }
        json row;
        try {
            row = json::parse(text);
        } catch (const json::parse_error& e) {
            throw FormatError("trace line " + std::to_string(line) + ": " + e.what());
        }
        if (!row.is_object()) {
            throw FormatError("trace line " + std::to_string(line) + ": expected an object");
        }
        if (row.contains("task") && integer(row, "task", line) != task) {
            throw FormatError("trace line " + std::to_string(line) + ": expected task " + std::to_string(task));
        }
        const json records = row.value("records", json::array());
        if (!records.is_array()) {
            throw FormatError("trace line " + std::to_string(line) + ": 'records' must be an array");
        }
        const int n_sets = static_cast<int>(result.assignments.size());

        GrowDecision d;
        if (records.empty()) {
            const std::string kind = row.value("decision", std::string(n_sets == 0 ? "grow" : ""));
            if (kind == "grow") {
                d = GrowDecision::forced_grow();
            } else if (kind == "reuse") {
                d = GrowDecision::forced_reuse(integer(row, "set", line));
            } else {
                throw FormatError("trace line " + std::to_string(line) + ": no records and no recorded decision");
            }
        } else {
            std::vector<HindranceRecord> recs;
            std::set<int> seen;
            for (const json& r : records) {
                if (!r.is_object()) {
                    throw FormatError("trace line " + std::to_string(line) + ": record must be an object");
                }
                const int id = integer(r, "set", line);
                if (id < 0 || id >= n_sets || !seen.insert(id).second) {
                    throw FormatError("trace line " + std::to_string(line) + ": unknown or repeated set " +
                                      std::to_string(id));
                }
                HfcValue old_value;
                old_value.angle = number(r, "hfc_old_deg", line) * kRadPerDeg;
                HfcValue pre_value;
                pre_value.angle = number(r, "hfc_pre_deg", line) * kRadPerDeg;
                recs.push_back(HindranceRecord::make(id, old_value, pre_value));
            }
            if (static_cast<int>(seen.size()) != n_sets) {
                throw FormatError("trace line " + std::to_string(line) + ": records must cover every set");
            }
            d = decide(std::move(recs));
        }

        if (d.grow()) {
            result.assignments.push_back({task});
        } else {
            if (d.target < 0 || d.target >= n_sets) {
                throw FormatError("trace line " + std::to_string(line) + ": reuse of unknown set");
            }
            result.assignments[static_cast<std::size_t>(d.target)].push_back(task);
        }
        result.decisions.push_back(std::move(d));
        ++task;
    }
    return result;
}

void print_replay(std::ostream& out, const ReplayResult& result) {
    if (result.decisions.empty()) {
        return;
    }
    for (std::size_t t = 0; t < result.decisions.size(); ++t) {
        const GrowDecision& d = result.decisions[t];
        out << "task " << t << ": ";
        if (d.grow()) {
            out << "grow";
        } else {
            out << "reuse set " << d.target;
        }
        if (!d.records.empty()) {
            const auto best = std::min_element(d.records.begin(), d.records.end(),
                                               [](const auto& a, const auto& b) { return a.z < b.z; });
            std::ostringstream z;
            z << std::fixed << std::setprecision(2) << best->z_degrees();
            out << " (min z " << z.str() << " deg)";
        }
        out << '\n';
    }
    out << "pool:\n";
    for (std::size_t s = 0; s < result.assignments.size(); ++s) {
        out << "  set " << s << ":";
        for (int t : result.assignments[s]) {
            out << ' ' << t;
        }
        out << '\n';
    }
}

}  // namespace lw2g
