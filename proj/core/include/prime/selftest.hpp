#pragma once

#include <optional>
#include <string>
#include <vector>

namespace prime {

struct SelfTestResult {
    std::string name;
    bool pass = false;
    std::string detail; // failure reason or brief stats
};

// Runs every module's property suite on tiny shapes. When a weights path is
// given, the weight checks load and validate that file instead of a
// fresh-seeded set; a corrupted file fails those checks while the rest run.
std::vector<SelfTestResult> run_selftest(const std::optional<std::string>& weights_path = {});

} // namespace prime
