#pragma once

// Machine-readable run summaries.

#include "lw2g/trainer.hpp"

#include <iosfwd>
#include <optional>
#include <string>

namespace lw2g {

inline constexpr int kReportSchema = 1;

/// report.json contents: schema, mode, seed, faa/ffm/pra/ssp/oracle_faa,
/// per-task decisions, final pool and the accuracy matrix. No timestamps,
/// so identical runs give identical bytes.
std::string report_json(const Experiment& exp);

struct ReportSummary {
    std::string mode;
    double faa = 0.0;
    std::optional<double> ffm;  // absent for single-task runs
    double pra = 0.0;
    int ssp = 0;
};

ReportSummary parse_report(const std::string& json_text);
ReportSummary read_report(const std::string& path);

struct ReportDelta {
    double faa = 0.0;
    double pra = 0.0;
    std::optional<double> ffm;
    int ssp = 0;
};

/// b - a for every headline metric.
ReportDelta compare_reports(const ReportSummary& a, const ReportSummary& b);
void print_delta(std::ostream& out, const ReportSummary& a, const ReportSummary& b, const ReportDelta& d);

}  // namespace lw2g
