#include "lw2g/metrics.hpp"

#include "lw2g/errors.hpp"
#include "lw2g/pool.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace lw2g {

namespace {
constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

void require_complete_final_column(const AccuracyMatrix& m) {
    require(m.size() >= 1, "accuracy matrix is empty");
    const int last = m.size() - 1;
    for (int i = 0; i < m.size(); ++i) {
        require(m.has(i, last), "accuracy matrix is incomplete");
    }
}
}  // namespace

AccuracyMatrix::AccuracyMatrix(int n_tasks) {
    if (n_tasks > 0) {
        resize(n_tasks);
    }
}

void AccuracyMatrix::resize(int n_tasks) {
    require(n_tasks >= n_, "accuracy matrix cannot shrink");
    const auto cells = static_cast<std::size_t>(n_tasks) * static_cast<std::size_t>(n_tasks);
    std::vector<double> acc(cells, kUnset);
    std::vector<double> oracle(cells, kUnset);
    std::vector<int> hits(cells, 0);
    std::vector<int> totals(cells, 0);
    for (int i = 0; i < n_; ++i) {
        for (int t = i; t < n_; ++t) {
            const std::size_t to = static_cast<std::size_t>(i) * n_tasks + t;
            acc[to] = acc_[index(i, t)];
            oracle[to] = oracle_[index(i, t)];
            hits[to] = hits_[index(i, t)];
            totals[to] = totals_[index(i, t)];
        }
    }
    n_ = n_tasks;
    acc_ = std::move(acc);
    oracle_ = std::move(oracle);
    hits_ = std::move(hits);
    totals_ = std::move(totals);
}

std::size_t AccuracyMatrix::index(int i, int t) const {
    require(i >= 0 && t >= 0 && i < n_ && t < n_, "accuracy matrix index out of range");
    require(i <= t, "accuracy entries exist only for i <= t");
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(t);
}

void AccuracyMatrix::set_accuracy(int i, int t, double acc) {
    require(acc >= 0.0 && acc <= 1.0, "accuracy must lie in [0, 1]");
    acc_[index(i, t)] = acc;
}

void AccuracyMatrix::set_oracle(int i, int t, double acc) {
    require(acc >= 0.0 && acc <= 1.0, "accuracy must lie in [0, 1]");
    oracle_[index(i, t)] = acc;
}

void AccuracyMatrix::set_retrieval(int i, int t, int hits, int total) {
    require(hits >= 0 && total >= 0 && hits <= total, "retrieval counters are inconsistent");
    hits_[index(i, t)] = hits;
    totals_[index(i, t)] = total;
}

bool AccuracyMatrix::has(int i, int t) const {
    if (i < 0 || t < 0 || i >= n_ || t >= n_ || i > t) {
        return false;
    }
    return !std::isnan(acc_[index(i, t)]);
}

double AccuracyMatrix::accuracy(int i, int t) const {
    const double v = acc_[index(i, t)];
    require(!std::isnan(v), "accuracy entry was never recorded");
    return v;
}

double AccuracyMatrix::oracle(int i, int t) const {
    const double v = oracle_[index(i, t)];
    require(!std::isnan(v), "oracle accuracy entry was never recorded");
    return v;
}

int AccuracyMatrix::hits(int i, int t) const { return hits_[index(i, t)]; }
int AccuracyMatrix::totals(int i, int t) const { return totals_[index(i, t)]; }

double faa(const AccuracyMatrix& m) {
    require_complete_final_column(m);
    const int last = m.size() - 1;
    double sum = 0.0;
    for (int i = 0; i <= last; ++i) {
        sum += m.accuracy(i, last);
    }
    return sum / static_cast<double>(m.size());
}

double oracle_faa(const AccuracyMatrix& m) {
    require_complete_final_column(m);
    const int last = m.size() - 1;
    double sum = 0.0;
    for (int i = 0; i <= last; ++i) {
        sum += m.oracle(i, last);
    }
    return sum / static_cast<double>(m.size());
}

double ffm(const AccuracyMatrix& m) {
    require(m.size() >= 2, "forgetting needs at least two tasks");
    require_complete_final_column(m);
    const int last = m.size() - 1;
    double sum = 0.0;
    for (int i = 0; i < last; ++i) {
        double worst = -std::numeric_limits<double>::infinity();
        for (int t = i; t < last; ++t) {
            worst = std::max(worst, m.accuracy(i, t) - m.accuracy(i, last));
        }
        sum += worst;
    }
    return sum / static_cast<double>(last);
}

double pra(const AccuracyMatrix& m) {
    require(m.size() >= 1, "accuracy matrix is empty");
    const int last = m.size() - 1;
    double sum = 0.0;
    for (int i = 0; i <= last; ++i) {
        const int total = m.totals(i, last);
        require(total > 0, "retrieval counters are empty");
        sum += static_cast<double>(m.hits(i, last)) / static_cast<double>(total);
    }
    return sum / static_cast<double>(m.size());
}

int ssp(const PromptPool& pool) { return pool.ssp(); }

void write_matrix_csv(std::ostream& out, const AccuracyMatrix& m) {
    out << "task,after_task,accuracy,oracle_accuracy,retrieval_hits,retrieval_total\n";
    out.precision(17);
    for (int t = 0; t < m.size(); ++t) {
        for (int i = 0; i <= t; ++i) {
            if (!m.has(i, t)) {
                continue;
            }
            out << i << ',' << t << ',' << m.accuracy(i, t) << ',' << m.oracle(i, t) << ',' << m.hits(i, t) << ','
                << m.totals(i, t) << '\n';
        }
    }
}

}  // namespace lw2g
