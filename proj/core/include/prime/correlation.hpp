#pragma once

#include <map>

#include <Eigen/Core>

#include "prime/counters.hpp"
#include "prime/denoiser.hpp"
#include "prime/prompt.hpp"
#include "prime/types.hpp"

namespace prime {

// Per-layer prior attention between the composite scene (queries) and the
// synthesized object (keys), split by query rows into scene-to-object
// relations (a_cross) and object appearance (a_obj).
struct PriorAttentionLayer {
    Eigen::MatrixXf a_cross; // (hw - n) x n
    Eigen::MatrixXf a_obj;   // n x n
};

struct PriorAttentionBundle {
    TapStage stage = TapStage::pre_softmax;
    int t = 0;
    std::map<LayerId, PriorAttentionLayer> layers; // keyed by self-attention LayerId
};

enum class CdFeatureSource {
    full_forward, // run on the full latent, gather features at object positions
    masked_input  // run on the latent zeroed outside the object mask, then gather
};

struct CorrelationConfig {
    TapStage stage = TapStage::pre_softmax;
    CdFeatureSource feature_source = CdFeatureSource::full_forward;
};

// Token maps for every attention resolution, keyed by spatial height,
// OR-pooled from the latent-resolution object mask.
std::map<int, TokenIndexMap> token_maps_by_height(const BinaryMask& latent_mask, int num_levels);

// z_fg (*) M^obj + z_bg (*) (1 - M^obj), cellwise.
LatentImage pixel_composite(const LatentImage& z_fg, const LatentImage& z_bg, const BinaryMask& m_obj);

// The Correlation Diffuser extraction: two denoiser forwards (queries from
// the pixel composite, keys from the previous step's result gathered at
// object positions), one prior map per self-attention layer. Read-only: it
// performs no solver steps. Costs exactly 2 denoiser forwards.
PriorAttentionBundle extract_prior_attention(const Denoiser& denoiser, const LatentImage& z_prev,
                                             const LatentImage& z_pc, int t, const TextEmbedding& ctx,
                                             const std::map<int, TokenIndexMap>& maps_by_height,
                                             const CorrelationConfig& cfg, CostCounter& counters);

// Inverse of the row partition: puts a_obj rows back at object positions and
// a_cross rows at the remaining positions, reproducing the full map bitwise.
Eigen::MatrixXf reassemble_prior_map(const PriorAttentionLayer& layer, const TokenIndexMap& map);

} // namespace prime
