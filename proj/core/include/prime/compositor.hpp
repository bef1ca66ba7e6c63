#pragma once

#include <string>
#include <vector>

#include "prime/config.hpp"
#include "prime/counters.hpp"
#include "prime/guidance.hpp"
#include "prime/scheduler.hpp"

namespace prime {

// Everything a composition run needs: both canvases, both pixel-resolution
// masks (object contained in foreground), the parsed prompt, and the config.
struct CompositionRequest {
    PixelImage background;
    PixelImage object_image;
    BinaryMask obj_mask;              // pixel resolution
    BinaryMask fg_mask;               // pixel resolution
    PromptSpec prompt;
    RunConfig config;

    void validate() const;
};

// Inverted background and object-canvas latents for every solver grid level.
struct TrajectoryStore {
    std::vector<int> levels; // ascending 0..T, aligned with the entries
    std::vector<LatentImage> background;
    std::vector<LatentImage> object_canvas;

    const LatentImage& bg_at(int level) const;
    const LatentImage& fg_at(int level) const;
};

struct AttentionDump {
    LayerId layer;
    int t = 0;
    Eigen::MatrixXf map; // the prior map A at that layer/step, (hw x n)
};

struct Diagnostics {
    CostCounter counters;
    long inversion_forwards = 0;
    long composition_forwards = 0;
    SaliencyMap saliency;                   // averaged over steered steps; empty if none
    std::vector<AttentionDump> attention_dumps;
    double out_of_range_magnitude = 0.0;    // max |excursion| of decoded pixels beyond [0,1]
};

struct ComposeResult {
    PixelImage image;
    LatentImage z0;
    Diagnostics diagnostics;
};

// Resizes the object (bilinear) into the object-mask bounding box on a
// neutral 0.5-gray canvas of the given dims.
PixelImage place_object(const PixelImage& obj, const BinaryMask& m_obj, int canvas_width,
                        int canvas_height);

// Encodes both canvases and inverts them level-by-level with the
// deterministic solver under caption conditioning (taps off), storing every
// intermediate.
TrajectoryStore invert_inputs(const Denoiser& denoiser, const CompositionRequest& req,
                              const NoiseSchedule& sched, const TextEmbedding& caption,
                              CostCounter& counters);

// z_init at level T: object cells from the object trajectory, cells outside
// the foreground from the background trajectory, and seeded Gaussian noise on
// the transition ring (replacing it by default, added on top in additive mode).
LatentImage initial_noise(const TrajectoryStore& store, const BinaryMask& m_obj_latent,
                          const BinaryMask& m_fg_latent, uint64_t seed,
                          InitMode mode = InitMode::ring_replace);

// The full pipeline: dual inversion, initial composite noise, the steered
// denoising loop with background-preserving combining, final decode.
ComposeResult compose(const CompositionRequest& req);
ComposeResult compose(const CompositionRequest& req, const Denoiser& denoiser);

// Counts-only ledger text (deterministic across identical runs; wall times
// are reported separately).
std::string format_ledger(const Diagnostics& diag);

// Closed-form expected composition forwards for a window of `steered` steps
// out of `total`: steered*(2 CD + 4 CFG) + (total-steered)*2, plus 2 dummy
// extractor forwards per steered step in the 4-sampler ablation.
long expected_composition_forwards(int total_steps, int steered_steps, SamplerVariant variant);

} // namespace prime
