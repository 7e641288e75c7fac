#pragma once

#include "lw2g/model.hpp"

#include <vector>

namespace lw2g {

/// Ordered prompt sets plus the set -> tasks registry.
///
/// Set ids are dense pool indices starting at 0. Each task is assigned to
/// exactly one set. Each set may also carry frozen transfer prompts copied
/// from older sets when it was grown.
class PromptPool {
public:
    /// Stores `set` under the next id (its id field is overwritten) and
    /// assigns `task` to it.
    int add_set(PromptSet set, int task);
    void assign_task(int set_id, int task);

    /// argmax_i cos(q, k_i); ties resolve to the lowest id.
    int retrieve(const Vec& query) const;

    int ssp() const noexcept { return static_cast<int>(sets_.size()); }
    bool empty() const noexcept { return sets_.empty(); }

    const PromptSet& set(int id) const;
    PromptSet& set(int id);
    const std::vector<PromptSet>& sets() const noexcept { return sets_; }

    const std::vector<int>& tasks_of(int id) const;
    const std::vector<std::vector<int>>& assignments() const noexcept { return assignments_; }
    /// Set holding `task`, or -1.
    int set_of_task(int task) const;

    const FrozenPrompts& transfer(int id) const;
    void set_transfer(int id, FrozenPrompts prompts);

private:
    void check_id(int id) const;

    std::vector<PromptSet> sets_;
    std::vector<std::vector<int>> assignments_;
    std::vector<FrozenPrompts> transfer_;
};

}  // namespace lw2g
