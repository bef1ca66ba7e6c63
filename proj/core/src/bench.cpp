#include "prime/bench.hpp"

#include <chrono>
#include <sstream>

#include "prime/compositor.hpp"

namespace prime {

namespace {

// Deterministic composition instance sized to the codec/denoiser geometry:
// shapes background, shapes object, centered ring masks.
CompositionRequest bench_request(const RunConfig& cfg, int image_size) {
    CompositionRequest req;
    req.config = cfg;
    req.config.denoiser.weight_seed = cfg.weight_seed;
    ShapesDataset ds{2024, image_size, image_size};
    req.background = ds.sample(0);
    req.object_image = ds.sample(1);

    BinaryMask obj(image_size, image_size, 0, {ResolutionTag::Kind::pixel, 0});
    BinaryMask fg(image_size, image_size, 0, {ResolutionTag::Kind::pixel, 0});
    const int q = image_size / 4;
    for (int y = 0; y < image_size; ++y) {
        for (int x = 0; x < image_size; ++x) {
            if (y >= q && y < image_size - q && x >= q && x < image_size - q) fg.at(y, x) = 1;
            const int m = q + image_size / 8;
            if (y >= m && y < image_size - m && x >= m && x < image_size - m) obj.at(y, x) = 1;
        }
    }
    req.obj_mask = obj;
    req.fg_mask = fg;

    const Vocabulary vocab = Vocabulary::builtin();
    req.prompt = make_prompt_spec("a <ref> red square <ref> on a scene", vocab);
    return req;
}

BenchVariant run_variant(const CompositionRequest& base, SamplerVariant variant, int repeats,
                         const std::string& name) {
    BenchVariant out;
    out.name = name;
    CompositionRequest req = base;
    req.config.sampler_variant = variant;
    const Denoiser denoiser(
        [&] {
            DenoiserConfig dc = req.config.denoiser;
            dc.weight_seed = req.config.weight_seed;
            return dc;
        }());
    for (int r = 0; r < repeats; ++r) {
        const auto start = std::chrono::steady_clock::now();
        ComposeResult result = compose(req, denoiser);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.per_repeat_seconds.push_back(secs);
        out.total_seconds += secs;
        out.composition_forwards = result.diagnostics.composition_forwards;
        out.total_forwards = result.diagnostics.counters.denoiser_forwards;
    }
    return out;
}

} // namespace

BenchReport run_bench(const RunConfig& base, int repeats, int image_size) {
    if (repeats < 1) throw domain_error("bench requires repeats >= 1");
    const CompositionRequest req = bench_request(base, image_size);

    BenchReport report;
    report.repeats = repeats;
    report.two_sampler = run_variant(req, SamplerVariant::two, repeats, "2-sampler");
    report.four_sampler = run_variant(req, SamplerVariant::four, repeats, "4-sampler");
    report.two_strictly_fewer_forwards =
        report.two_sampler.composition_forwards < report.four_sampler.composition_forwards;
    report.two_faster = report.two_sampler.total_seconds < report.four_sampler.total_seconds;
    const int steered = steered_step_count(base.schedule.num_solver_steps, base.alpha);
    if (steered > 0 && !report.two_strictly_fewer_forwards)
        throw validation_error("bench: 2-sampler variant did not use strictly fewer steered-step forwards");
    if (steered == 0 && report.two_sampler.composition_forwards != report.four_sampler.composition_forwards)
        throw validation_error("bench: variants should be identical with an empty steering window");
    return report;
}

std::string format_bench_report(const BenchReport& r) {
    std::ostringstream out;
    out.precision(6);
    for (const BenchVariant* v : {&r.two_sampler, &r.four_sampler}) {
        out << "bench." << v->name << ".composition_forwards=" << v->composition_forwards << '\n';
        out << "bench." << v->name << ".total_forwards=" << v->total_forwards << '\n';
        out << "bench." << v->name << ".total_seconds=" << v->total_seconds << '\n';
        out << "bench." << v->name << ".mean_seconds=" << v->total_seconds / r.repeats << '\n';
    }
    out << "bench.repeats=" << r.repeats << '\n';
    out << "bench.forward_ratio="
        << static_cast<double>(r.two_sampler.composition_forwards) /
               static_cast<double>(r.four_sampler.composition_forwards)
        << '\n';
    out << "bench.two_sampler_faster=" << (r.two_faster ? "yes" : "no") << '\n';
    return out.str();
}

} // namespace prime
