#include "prime/correlation.hpp"

#include <cmath>

#include "denoiser_internal.hpp"

namespace prime {

using detail::Mat;

std::map<int, TokenIndexMap> token_maps_by_height(const BinaryMask& latent_mask, int num_levels) {
    std::map<int, TokenIndexMap> maps;
    for (int l = 0; l < num_levels; ++l) {
        BinaryMask m = downsample_mask(latent_mask, 1 << l);
        maps[m.height] = build_token_index_map(m);
    }
    return maps;
}

LatentImage pixel_composite(const LatentImage& z_fg, const LatentImage& z_bg, const BinaryMask& m_obj) {
    if (!z_fg.same_shape(z_bg)) throw dimension_error("pixel_composite: latent shapes differ");
    if (m_obj.height != z_fg.height || m_obj.width != z_fg.width)
        throw dimension_error("pixel_composite: mask resolution does not match latents");
    LatentImage out = z_bg;
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            if (!m_obj.at(y, x)) continue;
            for (int c = 0; c < out.channels; ++c) out.at(c, y, x) = z_fg.at(c, y, x);
        }
    }
    out.timestep_tag = z_fg.timestep_tag;
    return out;
}

PriorAttentionBundle extract_prior_attention(const Denoiser& denoiser, const LatentImage& z_prev,
                                             const LatentImage& z_pc, int t, const TextEmbedding& ctx,
                                             const std::map<int, TokenIndexMap>& maps_by_height,
                                             const CorrelationConfig& cfg, CostCounter& counters) {
    if (!z_prev.same_shape(z_pc)) throw dimension_error("extract_prior_attention: latent shapes differ");
    bool any_object = false;
    for (const auto& [h, map] : maps_by_height) any_object = any_object || map.n() > 0;
    if (!any_object) throw validation_error("extract_prior_attention: object mask is empty at every level");

    // Key-side input: either the full previous latent or its masked-and-zeroed
    // variant; features are gathered at object positions in both modes.
    LatentImage key_input = z_prev;
    if (cfg.feature_source == CdFeatureSource::masked_input) {
        auto it = maps_by_height.find(z_prev.height);
        if (it == maps_by_height.end())
            throw dimension_error("extract_prior_attention: no token map at latent resolution");
        std::vector<uint8_t> keep(static_cast<size_t>(z_prev.height) * z_prev.width, 0);
        for (int pos : it->second.object_positions) keep[pos] = 1;
        for (int y = 0; y < z_prev.height; ++y)
            for (int x = 0; x < z_prev.width; ++x)
                if (!keep[static_cast<size_t>(y) * z_prev.width + x])
                    for (int c = 0; c < z_prev.channels; ++c) key_input.at(c, y, x) = 0.0f;
    }

    RecordRequest want;
    want.self_features = true;
    AttentionTapSet no_taps;
    ForwardResult fq = denoiser.forward(z_pc, t, ctx, no_taps, counters, want);
    ForwardResult fk = denoiser.forward(key_input, t, ctx, no_taps, counters, want);
    counters.cd_forwards += 2;

    PriorAttentionBundle bundle;
    bundle.stage = cfg.stage;
    bundle.t = t;
    for (const LayerId& id : denoiser.self_attention_layers()) {
        const Mat& feat_q = fq.record.self_features.at(id);
        const Mat& feat_k = fk.record.self_features.at(id);
        const int hw = static_cast<int>(feat_q.rows());
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(hw))));

        auto mit = maps_by_height.find(z_pc.height >> id.level);
        if (mit == maps_by_height.end() || mit->second.tokens() != hw)
            throw dimension_error("extract_prior_attention: token map missing for layer " + id.to_string() +
                                  " (side " + std::to_string(side) + ")");
        const TokenIndexMap& map = mit->second;
        const int n = map.n();
        if (n == 0) {
            bundle.layers[id] = PriorAttentionLayer{Mat(hw, 0), Mat(0, 0)};
            continue;
        }

        auto proj = denoiser.self_attn_projection(id);
        const int c = static_cast<int>(feat_q.cols());
        const int hd = c / proj.heads;
        // Single softmax matrix per Eq. 6; with multiple heads the first head
        // defines the prior map (the tap then applies it to every head).
        const Mat q = feat_q * proj.wq->leftCols(hd);
        Mat k_obj(n, hd);
        const Mat k_full = feat_k * proj.wk->leftCols(hd);
        for (int i = 0; i < n; ++i) k_obj.row(i) = k_full.row(map.object_positions[i]);

        Mat a = q * k_obj.transpose() / std::sqrt(static_cast<float>(hd));
        if (cfg.stage == TapStage::post_softmax_renormalize) detail::softmax_rows(a);

        // Row partition: object-position rows (in map order) form a_obj, the
        // remaining rows in raster order form a_cross.
        PriorAttentionLayer layer;
        layer.a_obj.resize(n, n);
        layer.a_cross.resize(hw - n, n);
        std::vector<uint8_t> is_obj(hw, 0);
        for (int pos : map.object_positions) is_obj[pos] = 1;
        for (int i = 0; i < n; ++i) layer.a_obj.row(i) = a.row(map.object_positions[i]);
        int r = 0;
        for (int pos = 0; pos < hw; ++pos) {
            if (!is_obj[pos]) layer.a_cross.row(r++) = a.row(pos);
        }
        bundle.layers[id] = std::move(layer);
    }
    return bundle;
}

Eigen::MatrixXf reassemble_prior_map(const PriorAttentionLayer& layer, const TokenIndexMap& map) {
    const int n = static_cast<int>(layer.a_obj.rows());
    const int hw = static_cast<int>(layer.a_cross.rows()) + n;
    if (map.tokens() != hw || map.n() != n)
        throw dimension_error("reassemble_prior_map: token map does not match layer shapes");
    Eigen::MatrixXf full(hw, layer.a_obj.cols());
    std::vector<int> rank(hw, -1);
    for (int i = 0; i < n; ++i) rank[map.object_positions[i]] = i;
    int r = 0;
    for (int pos = 0; pos < hw; ++pos) {
        if (rank[pos] >= 0) full.row(pos) = layer.a_obj.row(rank[pos]);
        else full.row(pos) = layer.a_cross.row(r++);
    }
    return full;
}

} // namespace prime
