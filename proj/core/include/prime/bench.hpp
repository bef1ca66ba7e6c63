#pragma once

#include <string>
#include <vector>

#include "prime/config.hpp"

namespace prime {

// Forward-count and wall-time comparison between the 2-sampler pipeline and
// the 4-sampler ablation on a synthesized composition instance.
struct BenchVariant {
    std::string name;
    long composition_forwards = 0;
    long total_forwards = 0;
    double total_seconds = 0.0;
    std::vector<double> per_repeat_seconds;
};

struct BenchReport {
    BenchVariant two_sampler;
    BenchVariant four_sampler;
    int repeats = 0;
    bool two_strictly_fewer_forwards = false;
    bool two_faster = false;
};

BenchReport run_bench(const RunConfig& base, int repeats, int image_size = 32);

std::string format_bench_report(const BenchReport& report);

} // namespace prime
