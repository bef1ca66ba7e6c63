#include "prime/compositor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "prime/detail/rng.hpp"

namespace prime {

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point start) {
    return std::chrono::duration<double>(clock_type::now() - start).count();
}

LatentImage gaussian_latent(int channels, int height, int width, uint64_t seed, uint64_t salt) {
    auto rng = detail::seeded_rng(seed, salt);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    LatentImage z(channels, height, width);
    for (float& v : z.data) v = dist(rng);
    return z;
}

// Latent-resolution mask: OR-pooled from the pixel mask by the codec's
// spatial factor.
BinaryMask latent_mask(const BinaryMask& pixel_mask, const CodecConfig& codec) {
    BinaryMask m = pixel_mask.width > 0 && codec.spatial_factor() > 1
                       ? downsample_mask(pixel_mask, codec.spatial_factor())
                       : pixel_mask;
    m.tag.kind = ResolutionTag::Kind::latent;
    m.tag.level = 0;
    return m;
}

} // namespace

void CompositionRequest::validate() const {
    background.validate();
    object_image.validate();
    obj_mask.validate();
    fg_mask.validate();
    config.validate();
    if (obj_mask.height != background.height || obj_mask.width != background.width)
        throw validation_error("object mask dims do not match the background canvas");
    if (fg_mask.height != background.height || fg_mask.width != background.width)
        throw validation_error("foreground mask dims do not match the background canvas");
    if (!mask_contained(obj_mask, fg_mask))
        throw validation_error("mask containment violated: obj-mask must be contained in fg-mask");
}

const LatentImage& TrajectoryStore::bg_at(int level) const {
    for (size_t i = 0; i < levels.size(); ++i)
        if (levels[i] == level) return background[i];
    throw domain_error("trajectory store has no entry for level " + std::to_string(level));
}

const LatentImage& TrajectoryStore::fg_at(int level) const {
    for (size_t i = 0; i < levels.size(); ++i)
        if (levels[i] == level) return object_canvas[i];
    throw domain_error("trajectory store has no entry for level " + std::to_string(level));
}

PixelImage place_object(const PixelImage& obj, const BinaryMask& m_obj, int canvas_width,
                        int canvas_height) {
    int x0 = m_obj.width, x1 = -1, y0 = m_obj.height, y1 = -1;
    for (int y = 0; y < m_obj.height; ++y) {
        for (int x = 0; x < m_obj.width; ++x) {
            if (!m_obj.at(y, x)) continue;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    }
    if (x1 < 0) throw validation_error("place_object: object mask has an empty bounding box");

    const int bw = x1 - x0 + 1;
    const int bh = y1 - y0 + 1;
    PixelImage canvas(canvas_width, canvas_height, 3, 0.5f);

    // Bilinear resample with half-pixel centers; an already-bbox-sized object
    // copies through exactly.
    const double sx = static_cast<double>(obj.width) / bw;
    const double sy = static_cast<double>(obj.height) / bh;
    for (int y = 0; y < bh; ++y) {
        for (int x = 0; x < bw; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const double fy = (y + 0.5) * sy - 0.5;
            const int ix = static_cast<int>(std::floor(fx));
            const int iy = static_cast<int>(std::floor(fy));
            const double ax = fx - ix;
            const double ay = fy - iy;
            for (int c = 0; c < 3; ++c) {
                auto sample = [&](int xx, int yy) {
                    xx = std::clamp(xx, 0, obj.width - 1);
                    yy = std::clamp(yy, 0, obj.height - 1);
                    return static_cast<double>(obj.at(xx, yy, c));
                };
                const double v = (1 - ax) * (1 - ay) * sample(ix, iy) + ax * (1 - ay) * sample(ix + 1, iy) +
                                 (1 - ax) * ay * sample(ix, iy + 1) + ax * ay * sample(ix + 1, iy + 1);
                canvas.at(x0 + x, y0 + y, c) = static_cast<float>(v);
            }
        }
    }
    return canvas;
}

TrajectoryStore invert_inputs(const Denoiser& denoiser, const CompositionRequest& req,
                              const NoiseSchedule& sched, const TextEmbedding& caption,
                              CostCounter& counters) {
    const auto t_start = clock_type::now();
    TrajectoryStore store;
    store.levels.assign(sched.timesteps.rbegin(), sched.timesteps.rend());

    // An empty object mask degrades to a neutral canvas (no placement, no steering).
    const PixelImage placed =
        req.obj_mask.popcount() > 0
            ? place_object(req.object_image, req.obj_mask, req.background.width, req.background.height)
            : PixelImage(req.background.width, req.background.height, 3, 0.5f);
    const LatentImage z_bg = encode(req.background, req.config.codec);
    const LatentImage z_fg = encode(placed, req.config.codec);

    AttentionTapSet no_taps;
    for (const LatentImage* start : {&z_bg, &z_fg}) {
        SolverState state(sched, SolverDirection::invert, *start);
        std::vector<LatentImage>& dst = start == &z_bg ? store.background : store.object_canvas;
        dst.push_back(state.current());
        while (!state.done()) {
            const LatentImage z = state.current();
            ForwardResult r = denoiser.forward(z, state.current_level(), caption, no_taps, counters);
            state.step(r.eps);
            dst.push_back(state.current());
        }
    }
    counters.add_time("inversion", seconds_since(t_start));
    return store;
}

LatentImage initial_noise(const TrajectoryStore& store, const BinaryMask& m_obj_latent,
                          const BinaryMask& m_fg_latent, uint64_t seed, InitMode mode) {
    const int T = store.levels.back();
    const LatentImage& fg = store.fg_at(T);
    const LatentImage& bg = store.bg_at(T);
    if (m_obj_latent.height != fg.height || m_obj_latent.width != fg.width ||
        !m_obj_latent.same_shape(m_fg_latent))
        throw dimension_error("initial_noise: mask resolution does not match latents");

    const LatentImage g = gaussian_latent(fg.channels, fg.height, fg.width, seed, detail::hash_str("init"));
    LatentImage z(fg.channels, fg.height, fg.width);
    for (int y = 0; y < z.height; ++y) {
        for (int x = 0; x < z.width; ++x) {
            const bool in_obj = m_obj_latent.at(y, x) != 0;
            const bool in_fg = m_fg_latent.at(y, x) != 0;
            for (int c = 0; c < z.channels; ++c) {
                float v;
                if (mode == InitMode::ring_replace) {
                    if (in_obj) v = fg.at(c, y, x);
                    else if (!in_fg) v = bg.at(c, y, x);
                    else v = g.at(c, y, x); // transition ring: noise replaces
                } else {
                    // literal additive form: fg-composite base plus ring noise
                    v = in_fg ? fg.at(c, y, x) : bg.at(c, y, x);
                    if (in_fg != in_obj) v += g.at(c, y, x);
                }
                z.at(c, y, x) = v;
            }
        }
    }
    z.timestep_tag = T;
    return z;
}

long expected_composition_forwards(int total_steps, int steered_steps, SamplerVariant variant) {
    const long per_steered = variant == SamplerVariant::two ? 6 : 8;
    return steered_steps * per_steered + static_cast<long>(total_steps - steered_steps) * 2;
}

ComposeResult compose(const CompositionRequest& req) {
    DenoiserConfig dc = req.config.denoiser;
    dc.weight_seed = req.config.weight_seed;
    WeightSet weights = req.config.weights_path.empty() ? Denoiser::init_weights(dc)
                                                        : WeightSet::load(req.config.weights_path);
    Denoiser denoiser(dc, std::move(weights));
    return compose(req, denoiser);
}

ComposeResult compose(const CompositionRequest& req, const Denoiser& denoiser) {
    req.validate();
    const RunConfig& cfg = req.config;
    const NoiseSchedule sched = build_schedule(cfg.schedule.T, cfg.schedule.beta_min,
                                               cfg.schedule.beta_max, cfg.schedule.num_solver_steps);

    const TextEmbedding caption = embed(req.prompt.tokens, cfg.denoiser.d_ctx, cfg.embed_seed);
    const TextEmbedding empty_ctx = TextEmbedding::empty(cfg.denoiser.d_ctx);

    ComposeResult result;
    Diagnostics& diag = result.diagnostics;

    TrajectoryStore store = invert_inputs(denoiser, req, sched, caption, diag.counters);
    diag.inversion_forwards = diag.counters.denoiser_forwards;

    const BinaryMask m_obj = latent_mask(req.obj_mask, cfg.codec);
    const BinaryMask m_fg = latent_mask(req.fg_mask, cfg.codec);
    const auto maps = token_maps_by_height(m_obj, cfg.denoiser.num_levels);

    SteeringPolicy policy = SteeringPolicy::for_denoiser(denoiser, cfg.alpha, cfg.stage, cfg.rca,
                                                         cfg.window);
    if (!cfg.infusion) {
        policy.cross_infusion_layers.clear();
        policy.obj_infusion_layers.clear();
    }
    CorrelationConfig cd_cfg{cfg.stage, cfg.cd_features};

    // RCA rides with the caption on every step; it is inert without tagged tokens.
    AttentionTapSet rca_only;
    const bool rca_active = cfg.rca && !req.prompt.object_token_indices.empty();
    if (rca_active) {
        CrossRectifySpec spec;
        spec.object_token_indices = req.prompt.object_token_indices;
        for (const auto& [h, map] : maps) {
            BinaryMask m = downsample_mask(m_obj, m_obj.height / h);
            spec.masks_by_height[h] = std::move(m);
        }
        rca_only.cross_rectify = spec;
    }

    const auto t_comp = std::chrono::steady_clock::now();
    LatentImage z_init = initial_noise(store, m_obj, m_fg, cfg.noise_seed, cfg.init);
    SolverState state(sched, SolverDirection::denoise, z_init);
    const int total_steps = sched.num_solver_steps();
    const long forwards_before = diag.counters.denoiser_forwards;

    const bool have_object = m_obj.popcount() > 0;
    std::vector<SaliencyMap> saliency_steps;
    while (!state.done()) {
        const int i = state.step_index();
        const int t = state.current_level();
        const int t_next = state.grid()[i + 1];
        const LatentImage z_t = state.current();
        const bool steered = have_object && policy.in_window(i, total_steps);

        LatentImage eps;
        if (steered) {
            const LatentImage z_pc = pixel_composite(store.fg_at(t), store.bg_at(t), m_obj);
            PriorAttentionBundle bundle = extract_prior_attention(denoiser, z_t, z_pc, t, caption, maps,
                                                                  cd_cfg, diag.counters);
            if (cfg.sampler_variant == SamplerVariant::four) {
                // Ablation: the extra samplers of the 4-sampler scheme cost two
                // more extractor forwards per steered step; outputs are discarded.
                extract_prior_attention(denoiser, z_t, z_pc, t, caption, maps, cd_cfg, diag.counters);
            }
            if (cfg.dump_attention) {
                for (const auto& [lid, layer] : bundle.layers) {
                    const int hw = static_cast<int>(layer.a_cross.rows() + layer.a_obj.rows());
                    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(hw))));
                    diag.attention_dumps.push_back({lid, t, reassemble_prior_map(layer, maps.at(side))});
                }
            }
            AttentionTapSet taps = build_infusion_plan(bundle, maps, policy);
            taps.cross_rectify = rca_only.cross_rectify;

            const LatentImage eps_null =
                denoiser.forward(z_t, t, empty_ctx, AttentionTapSet{}, diag.counters).eps;
            const LatentImage eps_c = denoiser.forward(z_t, t, caption, rca_only, diag.counters).eps;
            AttentionTapSet taps_f = taps;
            taps_f.cross_rectify.reset(); // no caption tokens on the f branch
            const LatentImage eps_f = denoiser.forward(z_t, t, empty_ctx, taps_f, diag.counters).eps;
            const LatentImage eps_cf = denoiser.forward(z_t, t, caption, taps, diag.counters).eps;
            diag.counters.cfg_branches += 4;
            eps = extended_cfg(eps_null, eps_cf, eps_f, eps_c, cfg.guidance_scale);
            saliency_steps.push_back(saliency_map(eps_cf, eps_c));
        } else {
            const LatentImage eps_null =
                denoiser.forward(z_t, t, empty_ctx, AttentionTapSet{}, diag.counters).eps;
            const LatentImage eps_c = denoiser.forward(z_t, t, caption, rca_only, diag.counters).eps;
            diag.counters.cfg_branches += 2;
            eps = standard_cfg(eps_null, eps_c, cfg.guidance_scale);
        }

        state.step(eps);

        // Background-preserving combining: outside the foreground mask the new
        // latent is the stored (or freshly q-sampled) background, bitwise.
        LatentImage z_next = state.current();
        LatentImage bg_next;
        if (cfg.bg_noise == BgNoiseMode::trajectory) {
            bg_next = store.bg_at(t_next);
        } else {
            const LatentImage eps_bg = gaussian_latent(z_next.channels, z_next.height, z_next.width,
                                                       cfg.bg_noise_seed,
                                                       detail::hash_combine(0x6267, t_next));
            bg_next = add_noise(store.bg_at(0), t_next, eps_bg, sched);
        }
        for (int y = 0; y < z_next.height; ++y) {
            for (int x = 0; x < z_next.width; ++x) {
                if (m_fg.at(y, x)) continue;
                for (int c = 0; c < z_next.channels; ++c) z_next.at(c, y, x) = bg_next.at(c, y, x);
            }
        }
        state.set_current(z_next);
    }

    diag.composition_forwards = diag.counters.denoiser_forwards - forwards_before;
    diag.counters.add_time("composition", seconds_since(t_comp));

    if (!saliency_steps.empty()) diag.saliency = average_saliency(saliency_steps);

    const auto t_dec = std::chrono::steady_clock::now();
    result.z0 = state.current();
    result.image = decode(result.z0, cfg.codec);
    for (float v : result.image.data) {
        const double excess = v < 0.0f ? -static_cast<double>(v) : (v > 1.0f ? v - 1.0 : 0.0);
        diag.out_of_range_magnitude = std::max(diag.out_of_range_magnitude, excess);
    }
    diag.counters.add_time("decode", seconds_since(t_dec));
    return result;
}

std::string format_ledger(const Diagnostics& diag) {
    std::string s;
    s += "ledger.denoiser_forwards=" + std::to_string(diag.counters.denoiser_forwards) + "\n";
    s += "ledger.inversion_forwards=" + std::to_string(diag.inversion_forwards) + "\n";
    s += "ledger.composition_forwards=" + std::to_string(diag.composition_forwards) + "\n";
    s += "ledger.cd_forwards=" + std::to_string(diag.counters.cd_forwards) + "\n";
    s += "ledger.cfg_branches=" + std::to_string(diag.counters.cfg_branches) + "\n";
    return s;
}

} // namespace prime
