#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "prime/compositor.hpp"
#include "prime/image_io.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace prime;

namespace {

struct CliFixture {
    fs::path dir;

    CliFixture() {
        dir = fs::path("/tmp") / ("prime_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir);
        ShapesDataset ds{77, 8, 8};
        save_image(ds.sample(0), (dir / "bg.png").string());
        save_image(ds.sample(1), (dir / "obj.ppm").string());
        auto g = testsup::rng(77);
        auto [obj, fg] = testsup::ring_masks(g, 8, 8);
        save_mask_pgm(obj, (dir / "obj.pgm").string());
        save_mask_pgm(fg, (dir / "fg.pgm").string());
        std::ofstream prompt(dir / "prompt.txt");
        prompt << "a <ref> red square <ref> on a scene\n";
        std::ofstream cfg(dir / "run.cfg");
        cfg << "T=100\nsteps=4\nbase_width=16\nd_ctx=16\ntime_dim=32\n";
    }
    ~CliFixture() { fs::remove_all(dir); }

    std::string path(const std::string& name) const { return (dir / name).string(); }

    int run(const std::string& args, const std::string& log_name = "out.log",
            const std::string& env = "") const {
        const std::string cmd = env + " " + std::string(PRIMEC_PATH) + " " + args + " > " +
                                path(log_name) + " 2>&1";
        const int rc = std::system(cmd.c_str());
        return WEXITSTATUS(rc);
    }

    std::string log(const std::string& log_name = "out.log") const {
        std::ifstream in(path(log_name));
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    std::string compose_args(const std::string& out_name, const std::string& extra = "") const {
        return "compose --background " + path("bg.png") + " --object " + path("obj.ppm") +
               " --obj-mask " + path("obj.pgm") + " --fg-mask " + path("fg.pgm") + " --prompt " +
               path("prompt.txt") + " --config " + path("run.cfg") + " --out " + path(out_name) +
               " " + extra;
    }

    static std::vector<char> slurp(const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }
};

} // namespace

TEST_CASE("compose writes the output, the config echo, and the ledger") {
    CliFixture fx;
    const int rc = fx.run(fx.compose_args("out.png"));
    CAPTURE(fx.log());
    REQUIRE(rc == 0);
    CHECK(fs::exists(fx.path("out.png")));
    CHECK(fs::exists(fx.path("out.png.config")));
    const std::string log = fx.log();
    CHECK(log.find("ledger.denoiser_forwards=") != std::string::npos);
    CHECK(log.find("ledger.composition_forwards=12") != std::string::npos); // 1*6 + 3*2 at steps=4
    // the echoed config reproduces the run settings
    RunConfig echoed = parse_run_config(fx.path("out.png.config"));
    CHECK(echoed.schedule.num_solver_steps == 4);
    CHECK(echoed.denoiser.base_width == 16);
}

TEST_CASE("mask containment violations exit nonzero and cite the masks") {
    CliFixture fx;
    // poke the object mask outside the fg box
    BinaryMask obj = load_mask_pgm(fx.path("obj.pgm"));
    obj.at(0, 0) = 1;
    save_mask_pgm(obj, fx.path("obj.pgm"));
    const int rc = fx.run(fx.compose_args("out.png"));
    CHECK(rc == 2);
    CHECK(fx.log().find("containment") != std::string::npos);
    CHECK(fx.log().find("obj.pgm") != std::string::npos);
}

TEST_CASE("missing input files exit with the io status and the path") {
    CliFixture fx;
    fs::remove(fx.path("bg.png"));
    const int rc = fx.run(fx.compose_args("out.png"));
    CHECK(rc == 3);
    CHECK(fx.log().find("bg.png") != std::string::npos);
}

TEST_CASE("same seed gives byte-identical outputs; PRIME_SEED overrides --seed") {
    CliFixture fx;
    REQUIRE(fx.run(fx.compose_args("a.png", "--seed 5")) == 0);
    REQUIRE(fx.run(fx.compose_args("b.png", "--seed 5")) == 0);
    CHECK(CliFixture::slurp(fx.path("a.png")) == CliFixture::slurp(fx.path("b.png")));

    REQUIRE(fx.run(fx.compose_args("c.png", "--seed 6")) == 0);
    CHECK(CliFixture::slurp(fx.path("a.png")) != CliFixture::slurp(fx.path("c.png")));

    // env var wins over the flag
    REQUIRE(fx.run(fx.compose_args("d.png", "--seed 6"), "env.log", "PRIME_SEED=5") == 0);
    CHECK(CliFixture::slurp(fx.path("a.png")) == CliFixture::slurp(fx.path("d.png")));
}

TEST_CASE("saliency and attention dumps land where requested") {
    CliFixture fx;
    const int rc = fx.run(fx.compose_args(
        "out.png", "--dump-saliency " + fx.path("sal.png") + " --dump-attn " + fx.path("attn")));
    CAPTURE(fx.log());
    REQUIRE(rc == 0);
    CHECK(fs::exists(fx.path("sal.png")));
    CHECK(fs::exists(fx.path("sal.png.range.txt")));
    CHECK(fs::exists(fx.path("attn") + "/attn_ranges.txt"));
    int dumped = 0;
    for (const auto& e : fs::directory_iterator(fx.path("attn"))) {
        const std::string name = e.path().filename().string();
        if (name.rfind("attn_L", 0) == 0 && name.find("_t") != std::string::npos) ++dumped;
    }
    CHECK(dumped == 5); // 1 steered step x 5 self-attention layers
}

TEST_CASE("selftest reports per-check lines and exits zero") {
    CliFixture fx;
    const int rc = fx.run("selftest", "st.log");
    CHECK(rc == 0);
    const std::string log = fx.log("st.log");
    CHECK(log.find("PASS core.segment_scatter_roundtrip") != std::string::npos);
    CHECK(log.find("checks passed") != std::string::npos);
    CHECK(log.find("FAIL") == std::string::npos);
}

TEST_CASE("selftest flags a corrupted weight file while other checks still run") {
    CliFixture fx;
    // write a tiny weight set then corrupt the binary half
    DenoiserConfig cfg = testsup::tiny_denoiser();
    WeightSet ws = Denoiser::init_weights(cfg);
    const std::string wpath = fx.path("weights.bin");
    ws.save(wpath);
    {
        std::ofstream out(wpath, std::ios::binary | std::ios::trunc);
        out << "garbage";
    }
    const int rc = fx.run("selftest --weights " + wpath, "stw.log");
    CHECK(rc == 1);
    const std::string log = fx.log("stw.log");
    CHECK(log.find("FAIL denoiser.weights_file") != std::string::npos);
    CHECK(log.find("PASS core.segment_scatter_roundtrip") != std::string::npos);
    CHECK(log.find("PASS compositor.background_exact") != std::string::npos);
}

TEST_CASE("bench prints the forward ratio and the wall-time verdict") {
    CliFixture fx;
    const int rc = fx.run("bench --config " + fx.path("run.cfg") + " --repeats 2 --size 8", "bench.log");
    CAPTURE(fx.log("bench.log"));
    REQUIRE(rc == 0);
    const std::string log = fx.log("bench.log");
    CHECK(log.find("bench.2-sampler.composition_forwards=12") != std::string::npos);
    CHECK(log.find("bench.4-sampler.composition_forwards=14") != std::string::npos);
    CHECK(log.find("bench.forward_ratio=0.857143") != std::string::npos);
}
