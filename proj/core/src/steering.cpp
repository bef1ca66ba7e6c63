#include "prime/steering.hpp"

#include <cmath>
#include <limits>

namespace prime {

int steered_step_count(int total_steps, float alpha) {
    const double x = static_cast<double>(alpha) * total_steps;
    return static_cast<int>(std::ceil(x - 1e-6));
}

bool infusion_window(int step_index, int total_steps, float alpha) {
    if (step_index < 0 || step_index >= total_steps)
        throw domain_error("infusion_window: step index outside [0, total_steps)");
    if (alpha < 0.0f || alpha > 1.0f) throw domain_error("infusion_window: alpha outside [0,1]");
    return step_index < steered_step_count(total_steps, alpha);
}

SteeringPolicy SteeringPolicy::for_denoiser(const Denoiser& d, float alpha, TapStage stage,
                                            bool rca_enabled, WindowMode window) {
    SteeringPolicy p;
    p.alpha = alpha;
    p.stage = stage;
    p.rca_enabled = rca_enabled;
    p.window = window;
    for (const auto& id : d.self_attention_layers()) {
        p.cross_infusion_layers.push_back(id);
        if (id.is_decoder()) p.obj_infusion_layers.push_back(id);
    }
    p.validate();
    return p;
}

void SteeringPolicy::validate() const {
    if (alpha < 0.0f || alpha > 1.0f) throw config_error("steering alpha outside [0,1]");
    for (const auto& id : obj_infusion_layers) {
        if (!id.is_decoder())
            throw config_error("obj_infusion_layers contains non-decoder layer " + id.to_string());
    }
}

bool SteeringPolicy::in_window(int step_index, int total_steps) const {
    if (window == WindowMode::prefix) return infusion_window(step_index, total_steps, alpha);
    if (step_index < 0 || step_index >= total_steps)
        throw domain_error("in_window: step index outside [0, total_steps)");
    return step_index >= total_steps - steered_step_count(total_steps, alpha);
}

AttentionTapSet build_infusion_plan(const PriorAttentionBundle& bundle,
                                    const std::map<int, TokenIndexMap>& maps_by_height,
                                    const SteeringPolicy& policy) {
    policy.validate();
    if (bundle.stage != policy.stage)
        throw plan_error("bundle stage does not match steering policy stage");

    AttentionTapSet taps;
    taps.stage = policy.stage;

    auto in_cross = [&](const LayerId& id) {
        for (const auto& l : policy.cross_infusion_layers)
            if (l == id) return true;
        return false;
    };
    auto in_obj = [&](const LayerId& id) {
        for (const auto& l : policy.obj_infusion_layers)
            if (l == id) return true;
        return false;
    };

    for (const auto& [id, layer] : bundle.layers) {
        const int n = static_cast<int>(layer.a_obj.rows());
        if (n == 0) continue; // nothing to write at this level
        const int hw = static_cast<int>(layer.a_cross.rows()) + n;
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(hw))));
        auto mit = maps_by_height.find(side);
        if (mit == maps_by_height.end() || mit->second.tokens() != hw || mit->second.n() != n)
            throw plan_error("infusion plan: token map mismatch at layer " + id.to_string());
        const TokenIndexMap& map = mit->second;

        const bool write_cross = in_cross(id);
        const bool write_obj = in_obj(id);
        if (!write_cross && !write_obj) continue;

        std::vector<int> obj_rank(hw, -1);
        for (int i = 0; i < n; ++i) obj_rank[map.object_positions[i]] = i;

        SelfAttnPlan plan;
        plan.rows.reserve(static_cast<size_t>(hw) * n);
        int cross_row = 0;
        for (int r = 0; r < hw; ++r) {
            const int rank = obj_rank[r];
            if (rank >= 0) {
                if (write_obj) {
                    for (int j = 0; j < n; ++j) plan.add(r, map.object_positions[j], layer.a_obj(rank, j));
                }
            } else {
                if (write_cross) {
                    for (int j = 0; j < n; ++j)
                        plan.add(r, map.object_positions[j], layer.a_cross(cross_row, j));
                }
                ++cross_row;
            }
        }
        if (plan.size() > 0) taps.self_plans.emplace(id, std::move(plan));
    }
    return taps;
}

Eigen::MatrixXf rectify_cross_attention(const Eigen::MatrixXf& logits, const BinaryMask& mask,
                                        const std::vector<int>& object_token_indices) {
    const int hw = static_cast<int>(logits.rows());
    const int p = static_cast<int>(logits.cols());
    if (mask.height * mask.width != hw)
        throw dimension_error("rectify: mask resolution does not match attention rows");
    constexpr float neg_inf = std::numeric_limits<float>::lowest();

    Eigen::MatrixXf out = logits;
    for (int k : object_token_indices) {
        if (k < 0 || k >= p)
            throw plan_error("rectify: object token index " + std::to_string(k) + " outside " +
                             std::to_string(p) + " tokens");
        for (int pos = 0; pos < hw; ++pos) {
            if (!mask.bits[pos]) out(pos, k) = neg_inf;
        }
    }
    return out;
}

} // namespace prime
