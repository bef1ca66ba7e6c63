#include "prime/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "prime/compositor.hpp"
#include "prime/detail/rng.hpp"

namespace prime {

namespace {

LatentImage random_latent(std::mt19937_64& rng, int c, int h, int w) {
    std::normal_distribution<float> dist(0.0f, 1.0f);
    LatentImage z(c, h, w);
    for (float& v : z.data) v = dist(rng);
    return z;
}

BinaryMask random_mask(std::mt19937_64& rng, int h, int w) {
    std::bernoulli_distribution bit(0.4);
    BinaryMask m(h, w, 0, {ResolutionTag::Kind::latent, 0});
    for (auto& b : m.bits) b = bit(rng) ? 1 : 0;
    return m;
}

DenoiserConfig tiny_config() {
    DenoiserConfig cfg;
    cfg.base_width = 16;
    cfg.d_ctx = 16;
    cfg.time_dim = 32;
    cfg.weight_seed = 5;
    return cfg;
}

struct Runner {
    std::vector<SelfTestResult>& out;

    void check(const std::string& name, const std::function<std::string()>& fn) {
        SelfTestResult r;
        r.name = name;
        try {
            r.detail = fn(); // empty detail = pass
            r.pass = r.detail.empty();
        } catch (const std::exception& e) {
            r.pass = false;
            r.detail = e.what();
        }
        out.push_back(std::move(r));
    }
};

std::string check_close(double got, double want, double tol, const std::string& what) {
    if (std::abs(got - want) <= tol) return {};
    return what + ": got " + std::to_string(got) + ", want " + std::to_string(want);
}

} // namespace

std::vector<SelfTestResult> run_selftest(const std::optional<std::string>& weights_path) {
    std::vector<SelfTestResult> results;
    Runner run{results};

    run.check("core.segment_scatter_roundtrip", [] {
        auto rng = detail::seeded_rng(1, "st.core");
        for (int i = 0; i < 20; ++i) {
            LatentImage z = random_latent(rng, 3, 6, 6);
            BinaryMask m = random_mask(rng, 6, 6);
            LatentImage back = scatter(segment(z, m), m, z);
            if (back.data != z.data) return std::string("scatter(segment(z,M),M,z) != z");
        }
        return std::string{};
    });

    run.check("core.downsample_containment", [] {
        auto rng = detail::seeded_rng(2, "st.core2");
        for (int i = 0; i < 20; ++i) {
            BinaryMask outer = random_mask(rng, 8, 8);
            BinaryMask inner = outer;
            std::bernoulli_distribution keep(0.6);
            for (auto& b : inner.bits)
                if (b && !keep(rng)) b = 0;
            if (!mask_contained(downsample_mask(inner, 2), downsample_mask(outer, 2)))
                return std::string("OR-pool downsampling broke containment");
        }
        return std::string{};
    });

    run.check("core.token_map_popcount", [] {
        auto rng = detail::seeded_rng(3, "st.core3");
        BinaryMask m = random_mask(rng, 8, 8);
        for (int f : {1, 2, 4}) {
            BinaryMask d = downsample_mask(m, f);
            if (build_token_index_map(d).n() != static_cast<int>(d.popcount()))
                return std::string("token map n != popcount at factor " + std::to_string(f));
        }
        return std::string{};
    });

    run.check("prompt.tagged_example", [] {
        auto [words, idx] = parse_tagged_prompt("a cartoon animation of a <ref> white fox <ref> in the forest");
        if (words.size() != 10) return std::string("expected 10 words, got " + std::to_string(words.size()));
        if (idx != std::vector<int>{5, 6}) return std::string("object indices are not {5,6}");
        return std::string{};
    });

    run.check("prompt.embed_deterministic", [] {
        const std::vector<int> toks{1, 2, 3};
        TextEmbedding a = embed(toks, 16, 9);
        TextEmbedding b = embed(toks, 16, 9);
        if (a.matrix != b.matrix) return std::string("embed is not deterministic");
        TextEmbedding c = embed(toks, 16, 10);
        if (a.matrix == c.matrix) return std::string("different seeds gave identical embeddings");
        return std::string{};
    });

    run.check("codec.roundtrip", [] {
        auto rng = detail::seeded_rng(4, "st.codec");
        std::uniform_real_distribution<float> uf(0.0f, 1.0f);
        PixelImage img(8, 8, 3);
        for (float& v : img.data) v = uf(rng);
        for (CodecConfig cfg : {CodecConfig{}, CodecConfig{CodecKind::orthonormal_patchify, 2}}) {
            PixelImage back = decode(encode(img, cfg), cfg);
            double err = 0;
            for (size_t i = 0; i < img.data.size(); ++i)
                err = std::max(err, std::abs(static_cast<double>(back.data[i]) - img.data[i]));
            if (err > 1e-6) return std::string("codec round-trip error " + std::to_string(err));
        }
        return std::string{};
    });

    run.check("scheduler.alpha_bar_monotone", [] {
        NoiseSchedule s = build_schedule(100, 1e-4, 2e-2, 10);
        for (int t = 0; t < 100; ++t)
            if (!(s.alpha_bar(t + 1) < s.alpha_bar(t))) return std::string("alpha_bar not strictly decreasing");
        return check_close(s.alpha_bar(0), 1.0, 0.0, "alpha_bar(0)");
    });

    run.check("scheduler.fixed_oracle_roundtrip", [] {
        NoiseSchedule s = build_schedule(100, 1e-4, 2e-2, 10);
        auto rng = detail::seeded_rng(5, "st.sched");
        LatentImage x = random_latent(rng, 2, 4, 4);
        LatentImage eps_fixed = random_latent(rng, 2, 4, 4);
        SolverState inv(s, SolverDirection::invert, x);
        while (!inv.done()) inv.step(eps_fixed);
        SolverState den(s, SolverDirection::denoise, inv.current());
        while (!den.done()) den.step(eps_fixed);
        LatentImage back = den.current();
        double err = 0;
        for (size_t i = 0; i < x.data.size(); ++i)
            err = std::max(err, std::abs(static_cast<double>(back.data[i]) - x.data[i]));
        if (err > 1e-6) return std::string("invert+denoise round-trip error " + std::to_string(err));
        return std::string{};
    });

    run.check("denoiser.determinism", [] {
        const DenoiserConfig cfg = tiny_config();
        const Denoiser d(cfg);
        auto rng = detail::seeded_rng(6, "st.den");
        LatentImage z = random_latent(rng, 3, 8, 8);
        TextEmbedding ctx = embed({1, 2}, cfg.d_ctx, 3);
        CostCounter c1, c2;
        LatentImage a = d.forward(z, 50, ctx, {}, c1).eps;
        LatentImage b = d.forward(z, 50, ctx, {}, c2).eps;
        if (a.data != b.data) return std::string("forward is not deterministic");
        if (c1.denoiser_forwards != 1) return std::string("forward counter != 1");
        return std::string{};
    });

    run.check("denoiser.tap_row_stochastic", [] {
        const DenoiserConfig cfg = tiny_config();
        const Denoiser d(cfg);
        auto rng = detail::seeded_rng(7, "st.den2");
        LatentImage z = random_latent(rng, 3, 8, 8);
        AttentionTapSet taps;
        SelfAttnPlan plan;
        plan.add(0, 1, 0.7f);
        plan.add(2, 3, -0.5f);
        taps.self_plans[{LayerId::Half::encoder, 0, 0}] = plan;
        RecordRequest rec;
        rec.self_probs = true;
        CostCounter c;
        ForwardResult r = d.forward(z, 10, TextEmbedding::empty(cfg.d_ctx), taps, c, rec);
        for (const auto& [id, p] : r.record.self_probs) {
            for (Eigen::Index i = 0; i < p.rows(); ++i) {
                if (std::abs(p.row(i).sum() - 1.0f) > 1e-5f) return std::string("attention row sum != 1");
                if (p.row(i).minCoeff() < 0.0f) return std::string("negative attention weight");
            }
        }
        return std::string{};
    });

    run.check("denoiser.weights_file", [&]() -> std::string {
        if (weights_path) {
            WeightSet ws = WeightSet::load(*weights_path); // throws on corruption
            if (ws.tensors.empty()) return "weight file has no tensors";
            return {};
        }
        const DenoiserConfig cfg = tiny_config();
        WeightSet ws = Denoiser::init_weights(cfg);
        const std::string tmp = "/tmp/prime_selftest_weights.bin";
        ws.save(tmp);
        WeightSet lo = WeightSet::load(tmp);
        std::remove(tmp.c_str());
        std::remove((tmp + ".manifest").c_str());
        for (const auto& [name, t] : ws.tensors) {
            if (lo.tensors.at(name).m != t.m) return "weight round-trip mismatch at " + name;
        }
        return {};
    });

    run.check("steering.window_prefix", [] {
        for (int i = 0; i < 20; ++i) {
            const bool want = i < 4;
            if (infusion_window(i, 20, 0.2f) != want) return std::string("alpha=0.2 window wrong at step " + std::to_string(i));
        }
        return std::string{};
    });

    run.check("steering.rca_confinement", [] {
        auto rng = detail::seeded_rng(8, "st.steer");
        Eigen::MatrixXf logits(4, 3);
        std::normal_distribution<float> dist(0.0f, 1.0f);
        for (int i = 0; i < logits.size(); ++i) logits.data()[i] = dist(rng);
        BinaryMask m(2, 2, 0, {ResolutionTag::Kind::attention, 0});
        m.at(1, 1) = 1;
        Eigen::MatrixXf rect = rectify_cross_attention(logits, m, {1});
        Eigen::MatrixXf p = rect;
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            const float mx = p.row(r).maxCoeff();
            p.row(r) = (p.row(r).array() - mx).exp();
            p.row(r) /= p.row(r).sum();
        }
        for (int pos : {0, 1, 2}) {
            if (p(pos, 1) != 0.0f) return std::string("masked-out object weight not exactly 0");
        }
        if (rect.col(0) != logits.col(0) || rect.col(2) != logits.col(2))
            return std::string("non-object columns were modified");
        return std::string{};
    });

    run.check("steering.decoder_only_gating", [] {
        const DenoiserConfig cfg = tiny_config();
        const Denoiser d(cfg);
        SteeringPolicy policy = SteeringPolicy::for_denoiser(d, 0.2f, TapStage::pre_softmax);
        for (const auto& id : policy.obj_infusion_layers)
            if (!id.is_decoder()) return std::string("obj infusion layer outside decoder");
        return std::string{};
    });

    run.check("guidance.algebra", [] {
        LatentImage e(1, 2, 2, 0.3f);
        LatentImage out = extended_cfg(e, e, e, e, 2.5f);
        if (out.data != e.data) return std::string("equal branches did not cancel");
        LatentImage a(1, 2, 2, 0.1f), b(1, 2, 2, 0.9f);
        LatentImage ext = extended_cfg(a, b, a, b, 2.5f);
        LatentImage std_ = standard_cfg(a, b, 2.5f);
        if (ext.data != std_.data) return std::string("inert infusion did not reduce to standard CFG");
        return std::string{};
    });

    run.check("correlation.shape_law", [] {
        const DenoiserConfig cfg = tiny_config();
        const Denoiser d(cfg);
        auto rng = detail::seeded_rng(9, "st.corr");
        LatentImage z1 = random_latent(rng, 3, 8, 8);
        LatentImage z2 = random_latent(rng, 3, 8, 8);
        BinaryMask m(8, 8, 0, {ResolutionTag::Kind::latent, 0});
        m.at(3, 3) = m.at(3, 4) = m.at(4, 3) = 1;
        auto maps = token_maps_by_height(m, cfg.num_levels);
        CostCounter c;
        PriorAttentionBundle bundle = extract_prior_attention(d, z1, z2, 40, TextEmbedding::empty(cfg.d_ctx),
                                                              maps, {}, c);
        if (c.denoiser_forwards != 2 || c.cd_forwards != 2)
            return std::string("extract did not cost exactly 2 forwards");
        for (const auto& [id, layer] : bundle.layers) {
            const int hw = static_cast<int>(layer.a_cross.rows() + layer.a_obj.rows());
            const auto& map = maps.at(static_cast<int>(std::lround(std::sqrt(double(hw)))));
            if (layer.a_obj.rows() != map.n() || layer.a_cross.rows() != hw - map.n())
                return std::string("row partition shapes wrong at " + id.to_string());
        }
        return std::string{};
    });

    run.check("compositor.background_exact", [] {
        RunConfig cfg;
        cfg.schedule.num_solver_steps = 4;
        cfg.schedule.T = 100;
        cfg.denoiser = tiny_config();
        cfg.weight_seed = cfg.denoiser.weight_seed;
        CompositionRequest req;
        req.config = cfg;
        ShapesDataset ds{11, 8, 8};
        req.background = ds.sample(0);
        req.object_image = ds.sample(1);
        req.obj_mask = BinaryMask(8, 8, 0, {ResolutionTag::Kind::pixel, 0});
        req.fg_mask = BinaryMask(8, 8, 0, {ResolutionTag::Kind::pixel, 0});
        for (int y = 2; y < 6; ++y)
            for (int x = 2; x < 6; ++x) req.fg_mask.at(y, x) = 1;
        for (int y = 3; y < 5; ++y)
            for (int x = 3; x < 5; ++x) req.obj_mask.at(y, x) = 1;
        req.prompt = make_prompt_spec("a <ref> shape <ref> here", Vocabulary::builtin());
        ComposeResult r = compose(req);
        double err = 0;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                if (req.fg_mask.at(y, x)) continue;
                for (int c = 0; c < 3; ++c)
                    err = std::max(err, std::abs(static_cast<double>(r.image.at(x, y, c)) -
                                                 req.background.at(x, y, c)));
            }
        if (err > 1e-6) return std::string("background drifted by " + std::to_string(err));
        const int steered = steered_step_count(4, cfg.alpha);
        const long want = expected_composition_forwards(4, steered, SamplerVariant::two);
        if (r.diagnostics.composition_forwards != want)
            return std::string("ledger mismatch: got " + std::to_string(r.diagnostics.composition_forwards) +
                               ", want " + std::to_string(want));
        return std::string{};
    });

    return results;
}

} // namespace prime
