#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "prime/counters.hpp"
#include "prime/prompt.hpp"
#include "prime/types.hpp"

namespace prime {

struct NoiseSchedule;

// Stable address of one attention block. The set of ids is partitioned into
// encoder / middle / decoder halves; steering's decoder-only rule keys off it.
struct LayerId {
    enum class Half { encoder, middle, decoder };
    Half half = Half::encoder;
    int level = 0; // spatial pyramid level (0 = full latent resolution)
    int index = 0; // within (half, level): 0 = self-attention, 1 = cross-attention

    bool is_decoder() const { return half == Half::decoder; }
    auto operator<=>(const LayerId&) const = default;
    std::string to_string() const;
};

enum class TapStage { pre_softmax, post_softmax_renormalize };

// Entry replacements for one self-attention layer's map. Rows and columns are
// flattened token positions; values are logits (pre-softmax stage) or
// probabilities (post-softmax-renormalize stage).
struct SelfAttnPlan {
    std::vector<int> rows;
    std::vector<int> cols;
    std::vector<float> values;

    void add(int r, int c, float v) {
        rows.push_back(r);
        cols.push_back(c);
        values.push_back(v);
    }
    size_t size() const { return rows.size(); }
};

// Rectification spec for cross-attention layers: object-token columns are
// forced to -inf (lowest finite float) at positions where the mask is 0.
struct CrossRectifySpec {
    std::vector<int> object_token_indices;
    std::map<int, BinaryMask> masks_by_height; // one mask per attention resolution
};

struct AttentionTapSet {
    TapStage stage = TapStage::pre_softmax;
    std::map<LayerId, SelfAttnPlan> self_plans;
    std::optional<CrossRectifySpec> cross_rectify;

    bool empty() const { return self_plans.empty() && !cross_rectify.has_value(); }
};

struct RecordRequest {
    bool self_probs = false;    // post-softmax, post-tap rows (heads stacked vertically)
    bool self_features = false; // normalized block input, the rows q/k/v project from
    bool cross_probs = false;
};

struct ForwardRecord {
    std::map<LayerId, Eigen::MatrixXf> self_probs;
    std::map<LayerId, Eigen::MatrixXf> self_features;
    std::map<LayerId, Eigen::MatrixXf> cross_probs;
};

struct DenoiserConfig {
    int latent_channels = 3;
    int base_width = 32;
    int num_levels = 2;                     // spatial halving per level
    std::vector<int> channel_mult = {1, 2}; // width per level = base_width * mult
    int heads = 1;
    int d_ctx = 32;
    int time_dim = 64;
    uint64_t weight_seed = 1234;
    float output_scale = 0.25f; // init scale of the eps head; keeps the ODE tame
    bool zero_final = false;    // zero-init head for smoke tests (forward == 0)

    int width(int level) const { return base_width * channel_mult.at(level); }
    void validate() const;
};

struct WTensor {
    std::vector<int> shape;   // semantic shape recorded in the manifest
    Eigen::MatrixXf m;        // flattened 2-D storage used by the kernels
};

// Named parameter tensors. Serialized as a flat little-endian float32 binary
// plus a text manifest (name, shape, offset) at <path>.manifest.
struct WeightSet {
    std::map<std::string, WTensor> tensors;

    void save(const std::string& path) const;
    static WeightSet load(const std::string& path);
};

struct ForwardResult {
    LatentImage eps;
    ForwardRecord record;
};

// Toy encoder-decoder denoising network: per level one residual block, one
// self-attention and one cross-attention block in each half, plus a middle
// block. Weights are deterministic per (config, seed). forward is const and
// reentrant; counters are owned per pipeline run.
class Denoiser {
public:
    Denoiser(DenoiserConfig cfg, WeightSet weights);
    explicit Denoiser(const DenoiserConfig& cfg) : Denoiser(cfg, init_weights(cfg)) {}

    static WeightSet init_weights(const DenoiserConfig& cfg);

    ForwardResult forward(const LatentImage& z, int t, const TextEmbedding& ctx,
                          const AttentionTapSet& taps, CostCounter& counters,
                          const RecordRequest& rec = {}) const;

    const DenoiserConfig& config() const { return cfg_; }
    const WeightSet& weights() const { return weights_; }

    std::vector<LayerId> self_attention_layers() const;
    std::vector<LayerId> cross_attention_layers() const;

    struct AttnProjection {
        const Eigen::MatrixXf* wq;
        const Eigen::MatrixXf* wk;
        int heads;
    };
    // q/k projections of one self-attention block, for prior-map extraction.
    AttnProjection self_attn_projection(const LayerId& id) const;

private:
    DenoiserConfig cfg_;
    WeightSet weights_;
};

// Procedural colored-shape dataset for the optional toy training loop.
struct ShapesDataset {
    uint64_t seed = 99;
    int width = 32;
    int height = 32;

    PixelImage sample(long index) const;
};

struct TrainConfig {
    long steps = 2000;
    int batch = 4;
    float learning_rate = 2e-3f;
    uint64_t seed = 7;
};

struct TrainReport {
    double initial_loss = 0.0; // mean over the first 100 steps
    double final_loss = 0.0;   // mean over the last 100 steps
    std::vector<double> loss_history;
};

// Standard eps-prediction denoising objective on the shapes dataset
// (unconditional: empty text context). 0 steps returns the initial weights.
std::pair<WeightSet, TrainReport> train_toy(const DenoiserConfig& cfg, const ShapesDataset& dataset,
                                            const TrainConfig& train, const NoiseSchedule& sched);

// Training-path forward (cached graph); exposed so tests can pin it against
// the inference forward bitwise.
LatentImage forward_training_path(const Denoiser& d, const LatentImage& z, int t);

// Mean-squared eps-objective loss and parameter gradients for one example;
// the finite-difference oracle in the tests checks these.
std::pair<double, std::map<std::string, Eigen::MatrixXf>> training_loss_and_grads(
    const Denoiser& d, const LatentImage& zt, int t, const LatentImage& target);

} // namespace prime
