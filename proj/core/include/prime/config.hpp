#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "prime/codec.hpp"
#include "prime/correlation.hpp"
#include "prime/denoiser.hpp"
#include "prime/steering.hpp"

namespace prime {

enum class InitMode { ring_replace, additive };
enum class BgNoiseMode { trajectory, qsample };
enum class SamplerVariant { two, four };

struct ScheduleParams {
    int T = 1000;
    double beta_min = 1e-4;
    double beta_max = 2e-2;
    int num_solver_steps = 20;
};

// Defaults reproduce the photorealism setting: 20 steps, alpha=0.2, scale=2.5.
struct RunConfig {
    ScheduleParams schedule;
    float alpha = 0.2f;
    float guidance_scale = 2.5f;
    uint64_t weight_seed = 1234;
    uint64_t noise_seed = 42;
    uint64_t embed_seed = 7;
    CodecConfig codec;
    WindowMode window = WindowMode::prefix;
    TapStage stage = TapStage::pre_softmax;
    InitMode init = InitMode::ring_replace;
    BgNoiseMode bg_noise = BgNoiseMode::trajectory;
    uint64_t bg_noise_seed = 43;
    bool rca = true;
    bool infusion = true; // off: the f branches run inert (ablation)
    CdFeatureSource cd_features = CdFeatureSource::full_forward;
    SamplerVariant sampler_variant = SamplerVariant::two;
    DenoiserConfig denoiser;
    bool dump_attention = false;
    bool dump_saliency = false;
    std::string vocab_path;   // empty: builtin vocabulary
    std::string weights_path; // empty: init from weight_seed

    void validate() const;
};

// Flat key=value config file; unknown keys are rejected. See the README for
// the documented key list.
RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text, RunConfig base = {});

// Echoes every effective value, sufficient to reproduce a run byte-for-byte.
std::string format_run_config(const RunConfig& cfg);
void save_run_config(const RunConfig& cfg, const std::string& path);

} // namespace prime
