#pragma once

#include <map>
#include <vector>

#include <Eigen/Core>

#include "prime/correlation.hpp"
#include "prime/denoiser.hpp"
#include "prime/types.hpp"

namespace prime {

enum class WindowMode { prefix, suffix };

// Where and when prior attention is written into the generator. A^cross goes
// to every self-attention layer; A^obj only to decoder self-attention layers.
struct SteeringPolicy {
    float alpha = 0.2f;
    TapStage stage = TapStage::pre_softmax;
    bool rca_enabled = true;
    WindowMode window = WindowMode::prefix;
    std::vector<LayerId> cross_infusion_layers;
    std::vector<LayerId> obj_infusion_layers; // must sit in the decoder half

    static SteeringPolicy for_denoiser(const Denoiser& d, float alpha, TapStage stage,
                                       bool rca_enabled = true, WindowMode window = WindowMode::prefix);

    bool in_window(int step_index, int total_steps) const;
    void validate() const; // obj_infusion_layers subset of decoder half
};

// ceil(alpha * total_steps) with a small tolerance so binary fractions like
// 0.2f * 20 land on the intended integer.
int steered_step_count(int total_steps, float alpha);

// True iff step_index falls in the steered prefix: the first
// ceil(alpha*total_steps) denoising iterations counted from the highest-noise
// step.
bool infusion_window(int step_index, int total_steps, float alpha);

// Builds self-attention entry replacements from a prior bundle: at each
// layer, object-key columns take A^cross values on non-object query rows (all
// layers) and A^obj values on object query rows (decoder layers only).
AttentionTapSet build_infusion_plan(const PriorAttentionBundle& bundle,
                                    const std::map<int, TokenIndexMap>& maps_by_height,
                                    const SteeringPolicy& policy);

// Eq.-style rectification of cross-attention logits (hw x p): object-token
// columns keep their value where the mask is 1 and drop to the lowest finite
// float where it is 0; other columns pass through bitwise.
Eigen::MatrixXf rectify_cross_attention(const Eigen::MatrixXf& logits, const BinaryMask& mask,
                                        const std::vector<int>& object_token_indices);

} // namespace prime
