#pragma once

#include <iosfwd>
#include <vector>

namespace lw2g {

class PromptPool;

/// a[i][t]: accuracy on task i's test set after training task t (i <= t).
/// Alongside it: the same accuracy with ground-truth set selection, and the
/// prompt-retrieval hit counters.
class AccuracyMatrix {
public:
    explicit AccuracyMatrix(int n_tasks = 0);

    int size() const noexcept { return n_; }
    void resize(int n_tasks);

    void set_accuracy(int i, int t, double acc);
    void set_oracle(int i, int t, double acc);
    void set_retrieval(int i, int t, int hits, int total);

    bool has(int i, int t) const;
    double accuracy(int i, int t) const;
    double oracle(int i, int t) const;
    int hits(int i, int t) const;
    int totals(int i, int t) const;

private:
    std::size_t index(int i, int t) const;

    int n_ = 0;
    std::vector<double> acc_;
    std::vector<double> oracle_;
    std::vector<int> hits_;
    std::vector<int> totals_;
};

/// Mean of the final column.
double faa(const AccuracyMatrix& m);
/// Same, over the ground-truth-selection accuracies.
double oracle_faa(const AccuracyMatrix& m);
/// 1/(T-1) sum_{i<T} max_{i<=t<T} (a[i][t] - a[i][T]).
double ffm(const AccuracyMatrix& m);
/// Mean over tasks of retrieval hits / totals after the final task.
double pra(const AccuracyMatrix& m);
int ssp(const PromptPool& pool);

/// Long-form CSV: task,after_task,accuracy,oracle_accuracy,retrieval_hits,retrieval_total.
void write_matrix_csv(std::ostream& out, const AccuracyMatrix& m);

}  // namespace lw2g
