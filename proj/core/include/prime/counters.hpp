#pragma once

#include <map>
#include <string>

namespace prime {

// Instrumented forward-pass ledger; monotone non-decreasing during a run.
struct CostCounter {
    long denoiser_forwards = 0; // every denoiser evaluation
    long cd_forwards = 0;       // subset spent inside prior-attention extraction
    long cfg_branches = 0;      // subset spent on guidance branches
    std::map<std::string, double> wall_seconds; // per phase

    void add_time(const std::string& phase, double seconds) { wall_seconds[phase] += seconds; }
};

} // namespace prime
