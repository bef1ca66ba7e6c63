// Command-line driver: compose / bench / selftest.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "prime/bench.hpp"
#include "prime/compositor.hpp"
#include "prime/image_io.hpp"
#include "prime/selftest.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;
constexpr int kExitConfig = 4;

std::string read_prompt_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw prime::io_error("cannot open prompt file: " + path);
    std::string line;
    std::getline(in, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

// PRIME_SEED overrides --seed when set.
std::optional<uint64_t> env_seed() {
    const char* v = std::getenv("PRIME_SEED");
    if (!v || !*v) return std::nullopt;
    return std::stoull(v);
}

struct ComposeArgs {
    std::string background, object, obj_mask, fg_mask, prompt, config, out;
    std::string dump_attn_dir, dump_saliency_path;
    std::optional<uint64_t> seed;
};

int cmd_compose(const ComposeArgs& args) {
    prime::RunConfig cfg;
    if (!args.config.empty()) cfg = prime::parse_run_config(args.config);
    if (auto s = env_seed()) cfg.noise_seed = *s;
    else if (args.seed) cfg.noise_seed = *args.seed;
    if (!args.dump_attn_dir.empty()) cfg.dump_attention = true;
    if (!args.dump_saliency_path.empty()) cfg.dump_saliency = true;
    cfg.denoiser.weight_seed = cfg.weight_seed;

    prime::CompositionRequest req;
    req.config = cfg;
    req.background = prime::load_image(args.background);
    req.object_image = prime::load_image(args.object);
    req.obj_mask = prime::load_mask_pgm(args.obj_mask);
    req.fg_mask = prime::load_mask_pgm(args.fg_mask);
    if (!prime::mask_contained(req.obj_mask, req.fg_mask))
        throw prime::validation_error("mask containment violated: " + args.obj_mask +
                                      " must be contained in " + args.fg_mask);

    const prime::Vocabulary vocab = cfg.vocab_path.empty()
                                        ? prime::Vocabulary::builtin()
                                        : prime::Vocabulary::from_file(cfg.vocab_path);
    req.prompt = prime::make_prompt_spec(read_prompt_file(args.prompt), vocab);

    prime::ComposeResult result = prime::compose(req);
    prime::save_image(result.image, args.out);
    prime::save_run_config(cfg, args.out + ".config");

    if (!args.dump_saliency_path.empty() && !result.diagnostics.saliency.values.empty()) {
        prime::SaliencyMap map = result.diagnostics.saliency;
        const auto [mn, mx] = prime::rescale_unit(map);
        prime::save_grayscale_png(map.values, map.height, map.width, args.dump_saliency_path);
        std::ofstream side(args.dump_saliency_path + ".range.txt");
        side << "min=" << mn << " max=" << mx << '\n';
    }

    if (!args.dump_attn_dir.empty()) {
        fs::create_directories(args.dump_attn_dir);
        std::ofstream side(fs::path(args.dump_attn_dir) / "attn_ranges.txt");
        // stable integer layer ids in forward order for the filename pattern
        std::map<prime::LayerId, int> layer_no;
        {
            prime::DenoiserConfig dc = cfg.denoiser;
            dc.weight_seed = cfg.weight_seed;
            prime::Denoiser d(dc);
            int no = 0;
            for (const auto& id : d.self_attention_layers()) layer_no[id] = no++;
        }
        for (const auto& dump : result.diagnostics.attention_dumps) {
            const std::string name =
                "attn_L" + std::to_string(layer_no.at(dump.layer)) + "_t" + std::to_string(dump.t) + ".png";
            const float mn = dump.map.minCoeff();
            const float mx = dump.map.maxCoeff();
            std::vector<float> vals(dump.map.size());
            const float span = mx > mn ? mx - mn : 1.0f;
            for (Eigen::Index r = 0; r < dump.map.rows(); ++r)
                for (Eigen::Index c = 0; c < dump.map.cols(); ++c)
                    vals[static_cast<size_t>(r) * dump.map.cols() + c] = (dump.map(r, c) - mn) / span;
            prime::save_grayscale_png(vals, static_cast<int>(dump.map.rows()),
                                      static_cast<int>(dump.map.cols()),
                                      (fs::path(args.dump_attn_dir) / name).string());
            side << name << " min=" << mn << " max=" << mx << " layer=" << dump.layer.to_string() << '\n';
        }
    }

    std::cout << prime::format_ledger(result.diagnostics);
    std::cout << "ledger.out_of_range_magnitude=" << result.diagnostics.out_of_range_magnitude << '\n';
    for (const auto& [phase, secs] : result.diagnostics.counters.wall_seconds)
        std::cout << "timing." << phase << "_seconds=" << secs << '\n';
    std::cout << "output=" << args.out << '\n';
    return 0;
}

int cmd_bench(const std::string& config_path, int repeats, int size) {
    prime::RunConfig cfg;
    if (!config_path.empty()) cfg = prime::parse_run_config(config_path);
    prime::BenchReport report = prime::run_bench(cfg, repeats, size);
    std::cout << prime::format_bench_report(report);
    return 0;
}

int cmd_selftest(const std::string& weights) {
    std::optional<std::string> wp;
    if (!weights.empty()) wp = weights;
    const auto results = prime::run_selftest(wp);
    int failures = 0;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name;
        if (!r.detail.empty()) std::cout << " -- " << r.detail;
        std::cout << '\n';
        failures += r.pass ? 0 : 1;
    }
    std::cout << results.size() - failures << "/" << results.size() << " checks passed\n";
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"training-free diffusion image compositor with attention steering"};
    app.require_subcommand(1);

    ComposeArgs cargs;
    uint64_t seed_flag = 0;
    auto* compose = app.add_subcommand("compose", "compose an object into a background");
    compose->add_option("--background", cargs.background, "background image (PNG or PPM)")->required();
    compose->add_option("--object", cargs.object, "object image (PNG or PPM)")->required();
    compose->add_option("--obj-mask", cargs.obj_mask, "object mask (PGM, threshold 128)")->required();
    compose->add_option("--fg-mask", cargs.fg_mask, "foreground mask (PGM, threshold 128)")->required();
    compose->add_option("--prompt", cargs.prompt, "prompt file (single UTF-8 line)")->required();
    compose->add_option("--config", cargs.config, "key=value config file");
    compose->add_option("--out", cargs.out, "output image path (PNG or PPM)")->required();
    compose->add_option("--dump-attn", cargs.dump_attn_dir, "directory for prior-attention dumps");
    compose->add_option("--dump-saliency", cargs.dump_saliency_path, "grayscale saliency PNG path");
    auto* seed_opt = compose->add_option("--seed", seed_flag, "noise seed (PRIME_SEED env overrides)");

    std::string bench_config;
    int bench_repeats = 10;
    int bench_size = 32;
    auto* bench = app.add_subcommand("bench", "compare 2-sampler pipeline vs 4-sampler ablation");
    bench->add_option("--config", bench_config, "key=value config file");
    bench->add_option("--repeats", bench_repeats, "repeats per variant");
    bench->add_option("--size", bench_size, "synthesized instance size in pixels");

    std::string selftest_weights;
    auto* selftest = app.add_subcommand("selftest", "run every module's property suite");
    selftest->add_option("--weights", selftest_weights, "validate this weight file instead of a fresh set");

    CLI11_PARSE(app, argc, argv);

    try {
        if (compose->parsed()) {
            if (seed_opt->count() > 0) cargs.seed = seed_flag;
            return cmd_compose(cargs);
        }
        if (bench->parsed()) return cmd_bench(bench_config, bench_repeats, bench_size);
        if (selftest->parsed()) return cmd_selftest(selftest_weights);
    } catch (const prime::validation_error& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const prime::io_error& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kExitIo;
    } catch (const prime::config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
