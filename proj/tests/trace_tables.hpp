#pragma once

// Expected replay of the two recorded decision traces in data/.
// A task with z = NaN has no records (it grows unconditionally).

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace lw2g::testing {

struct ExpectedStep {
    bool grow;
    int set;       // reused set, or the id the new set receives
    double min_z;  // degrees
};

struct ExpectedTrace {
    std::string file;
    std::vector<ExpectedStep> steps;
    std::vector<std::vector<int>> assignments;
};

inline constexpr double kNoZ = std::numeric_limits<double>::quiet_NaN();

inline const ExpectedTrace& six_set_trace() {
    static const ExpectedTrace t{
        "trace_six_sets.jsonl",
        {{true, 0, kNoZ},
         {true, 1, 1.64},
         {true, 2, 1.21},
         {false, 0, -1.48},
         {true, 3, 0.04},
         {false, 3, -0.11},
         {false, 2, -0.11},
         {true, 4, 1.02},
         {true, 5, 0.48},
         {false, 4, -1.01}},
        {{0, 3}, {1}, {2, 6}, {4, 5}, {7, 9}, {8}}};
    return t;
}

inline const ExpectedTrace& two_set_trace() {
    static const ExpectedTrace t{"trace_two_sets.jsonl",
                                 {{true, 0, kNoZ},
                                  {false, 0, -26.33},
                                  {false, 0, -20.58},
                                  {false, 0, -16.41},
                                  {false, 0, -13.77},
                                  {false, 0, -9.93},
                                  {false, 0, -5.50},
                                  {false, 0, -3.03},
                                  {true, 1, 1.17},
                                  {false, 1, -28.00}},
                                 {{0, 1, 2, 3, 4, 5, 6, 7}, {8, 9}}};
    return t;
}

}  // namespace lw2g::testing
