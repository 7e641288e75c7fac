#pragma once

// Decision trace: one JSON object per task,
//   {"task", "records": [{"set", "hfc_old_deg", "hfc_pre_deg", "z"}],
//    "decision": "grow" | "reuse", "set", "pool_after": [[tasks of set 0], ...]}
// Angles and z are in degrees. Set and task ids are 0-based.

#include "lw2g/decision.hpp"
#include "lw2g/trainer.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace lw2g {

std::string trace_line(const TaskReport& report);
void write_trace(std::ostream& out, const std::vector<TaskReport>& reports);

struct ReplayResult {
    std::vector<GrowDecision> decisions;
    std::vector<std::vector<int>> assignments;  // set id -> tasks
};

/// Re-runs `decide` on the HFC pairs of every row while simulating the pool.
/// A row without records replays its recorded decision (first task, or a
/// run with a forced mode). Blank lines are skipped. Throws FormatError on a
/// malformed row.
ReplayResult replay_trace(std::istream& in);

/// One line per decision ("task 3: reuse set 0 (min z -1.23 deg)"), then the
/// final pool.
void print_replay(std::ostream& out, const ReplayResult& result);

}  // namespace lw2g
