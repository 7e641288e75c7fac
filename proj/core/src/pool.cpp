#include "lw2g/pool.hpp"

#include "lw2g/errors.hpp"

#include <string>

namespace lw2g {

void PromptPool::check_id(int id) const {
    if (id < 0 || id >= ssp()) {
        throw ContractError("unknown prompt set id " + std::to_string(id));
    }
}

int PromptPool::add_set(PromptSet set, int task) {
    if (set_of_task(task) >= 0) {
        throw ContractError("task " + std::to_string(task) + " is already assigned");
    }
    const int id = ssp();
    set.id = id;
    sets_.push_back(std::move(set));
    assignments_.push_back({task});
    transfer_.emplace_back();
    return id;
}

void PromptPool::assign_task(int set_id, int task) {
    check_id(set_id);
    if (set_of_task(task) >= 0) {
        throw ContractError("task " + std::to_string(task) + " is already assigned");
    }
    assignments_[static_cast<std::size_t>(set_id)].push_back(task);
}

int PromptPool::retrieve(const Vec& query) const {
    if (sets_.empty()) {
        throw ContractError("retrieve on an empty pool");
    }
    const double qn = query.norm();
    int best = 0;
    double best_cos = -2.0;
    for (const PromptSet& s : sets_) {
        const double denom = qn * s.key.norm();
        const double c = denom > 0.0 ? query.dot(s.key) / denom : 0.0;
        if (c > best_cos) {
            best_cos = c;
            best = s.id;
        }
    }
    return best;
}

const PromptSet& PromptPool::set(int id) const {
    check_id(id);
    return sets_[static_cast<std::size_t>(id)];
}

PromptSet& PromptPool::set(int id) {
    check_id(id);
    return sets_[static_cast<std::size_t>(id)];
}

const std::vector<int>& PromptPool::tasks_of(int id) const {
    check_id(id);
    return assignments_[static_cast<std::size_t>(id)];
}

int PromptPool::set_of_task(int task) const {
    for (std::size_t s = 0; s < assignments_.size(); ++s) {
        for (int t : assignments_[s]) {
            if (t == task) {
                return static_cast<int>(s);
            }
        }
    }
    return -1;
}

const FrozenPrompts& PromptPool::transfer(int id) const {
    check_id(id);
    return transfer_[static_cast<std::size_t>(id)];
}

void PromptPool::set_transfer(int id, FrozenPrompts prompts) {
    check_id(id);
    transfer_[static_cast<std::size_t>(id)] = std::move(prompts);
}

}  // namespace lw2g
