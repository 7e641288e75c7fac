#include "lw2g/report.hpp"

#include "lw2g/errors.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace lw2g {

namespace {

using nlohmann::json;

json cell(const AccuracyMatrix& m, int i, int t, double (AccuracyMatrix::*get)(int, int) const) {
    return i <= t && m.has(i, t) ? json((m.*get)(i, t)) : json(nullptr);
}

}  // namespace

std::string report_json(const Experiment& exp) {
    const AccuracyMatrix& m = exp.accuracy();
    const TrainConfig& cfg = exp.config();
    const int n = m.size();
    require(n > 0 && exp.tasks_trained() == n, "report needs a fully evaluated run");

    json per_task = json::array();
    for (const TaskReport& r : exp.reports()) {
        per_task.push_back({{"task", r.task},
                            {"decision", r.decision.grow() ? "grow" : "reuse"},
                            {"set", r.set_id},
                            {"transfer_sets", r.transfer_sets},
                            {"final_loss", r.final_loss},
                            {"basis_ranks", r.basis_ranks},
                            {"drift_ratio", r.drift_ratio},
                            {"accuracy", m.accuracy(r.task, n - 1)},
                            {"oracle_accuracy", m.oracle(r.task, n - 1)},
                            {"retrieval_hits", m.hits(r.task, n - 1)},
                            {"retrieval_total", m.totals(r.task, n - 1)}});
    }
    json assignments = json::array();
    for (std::size_t s = 0; s < exp.pool().assignments().size(); ++s) {
        assignments.push_back({{"set", s}, {"tasks", exp.pool().assignments()[s]}});
    }
    json acc = json::array();
    json oracle = json::array();
    for (int i = 0; i < n; ++i) {
        json a_row = json::array();
        json o_row = json::array();
        for (int t = 0; t < n; ++t) {
            a_row.push_back(cell(m, i, t, &AccuracyMatrix::accuracy));
            o_row.push_back(cell(m, i, t, &AccuracyMatrix::oracle));
        }
        acc.push_back(std::move(a_row));
        oracle.push_back(std::move(o_row));
    }

    json report{{"schema", kReportSchema},
                {"mode", to_string(cfg.mode)},
                {"seed", cfg.seed},
                {"n_tasks", n},
                {"faa", faa(m)},
                {"ffm", n >= 2 ? json(ffm(m)) : json(nullptr)},
                {"pra", pra(m)},
                {"ssp", ssp(exp.pool())},
                {"oracle_faa", oracle_faa(m)},
                {"config",
                 {{"eps_task", cfg.eps_task},
                  {"eps_pre", cfg.eps_pre},
                  {"phi", cfg.phi},
                  {"n_fft", cfg.n_fft},
                  {"epochs", cfg.epochs},
                  {"batch_size", cfg.batch_size},
                  {"lr", cfg.lr},
                  {"head_lr", cfg.head_lr},
                  {"key_weight", cfg.key_weight},
                  {"key_lr", cfg.key_lr}}},
                {"per_task", per_task},
                {"assignments", assignments},
                {"matrix", {{"accuracy", acc}, {"oracle_accuracy", oracle}}}};
    return report.dump(2) + "\n";
}

ReportSummary parse_report(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("report is not valid JSON: ") + e.what());
    }
    try {
        if (j.at("schema").get<int>() != kReportSchema) {
            throw FormatError("unsupported report schema");
        }
        ReportSummary s;
        s.mode = j.at("mode").get<std::string>();
        s.faa = j.at("faa").get<double>();
        if (!j.at("ffm").is_null()) {
            s.ffm = j.at("ffm").get<double>();
        }
        s.pra = j.at("pra").get<double>();
        s.ssp = j.at("ssp").get<int>();
        return s;
    } catch (const json::exception& e) {
        throw FormatError(std::string("report is missing a field: ") + e.what());
    }
}

ReportSummary read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_report(text.str());
}

ReportDelta compare_reports(const ReportSummary& a, const ReportSummary& b) {
    ReportDelta d;
    d.faa = b.faa - a.faa;
    d.pra = b.pra - a.pra;
    if (a.ffm && b.ffm) {
        d.ffm = *b.ffm - *a.ffm;
    }
    d.ssp = b.ssp - a.ssp;
    return d;
}

void print_delta(std::ostream& out, const ReportSummary& a, const ReportSummary& b, const ReportDelta& d) {
    const auto old_flags = out.flags();
    const auto old_prec = out.precision();
    out << std::fixed << std::setprecision(4);
    out << "metric       a(" << a.mode << ")  b(" << b.mode << ")  delta\n";
    out << "faa     " << std::setw(10) << a.faa << std::setw(10) << b.faa << std::showpos << std::setw(10) << d.faa << std::noshowpos << '\n';
    out << "pra     " << std::setw(10) << a.pra << std::setw(10) << b.pra << std::showpos << std::setw(10) << d.pra << std::noshowpos << '\n';
    out << "ffm     ";
    if (d.ffm) {
        out << std::setw(10) << *a.ffm << std::setw(10) << *b.ffm << std::showpos << std::setw(10) << *d.ffm << std::noshowpos << '\n';
    } else {
        out << "       n/a       n/a       n/a\n";
    }
    out << "ssp     " << std::setw(10) << a.ssp << std::setw(10) << b.ssp << std::showpos << std::setw(10) << d.ssp << std::noshowpos << '\n';
    out.flags(old_flags);
    out.precision(old_prec);
}

}  // namespace lw2g
