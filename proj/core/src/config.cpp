#include "prime/config.hpp"

#include <fstream>
#include <sstream>

#include "prime/errors.hpp"

namespace prime {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

template <typename T>
T parse_num(const std::string& key, const std::string& v);

template <>
int parse_num<int>(const std::string& key, const std::string& v) {
    try {
        return std::stoi(v);
    } catch (...) {
        throw config_error("config key " + key + ": expected integer, got '" + v + "'");
    }
}

template <>
double parse_num<double>(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (...) {
        throw config_error("config key " + key + ": expected number, got '" + v + "'");
    }
}

template <>
float parse_num<float>(const std::string& key, const std::string& v) {
    return static_cast<float>(parse_num<double>(key, v));
}

template <>
uint64_t parse_num<uint64_t>(const std::string& key, const std::string& v) {
    try {
        return std::stoull(v);
    } catch (...) {
        throw config_error("config key " + key + ": expected unsigned integer, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw config_error("config key " + key + ": expected on/off, got '" + v + "'");
}

void apply_key(RunConfig& c, const std::string& key, const std::string& val) {
    if (key == "T") c.schedule.T = parse_num<int>(key, val);
    else if (key == "beta_min") c.schedule.beta_min = parse_num<double>(key, val);
    else if (key == "beta_max") c.schedule.beta_max = parse_num<double>(key, val);
    else if (key == "steps") c.schedule.num_solver_steps = parse_num<int>(key, val);
    else if (key == "alpha") c.alpha = parse_num<float>(key, val);
    else if (key == "guidance_scale") c.guidance_scale = parse_num<float>(key, val);
    else if (key == "weight_seed") c.weight_seed = parse_num<uint64_t>(key, val);
    else if (key == "noise_seed") c.noise_seed = parse_num<uint64_t>(key, val);
    else if (key == "embed_seed") c.embed_seed = parse_num<uint64_t>(key, val);
    else if (key == "bg_noise_seed") c.bg_noise_seed = parse_num<uint64_t>(key, val);
    else if (key == "codec") {
        if (val == "identity") c.codec.kind = CodecKind::identity;
        else if (val == "patchify") c.codec.kind = CodecKind::orthonormal_patchify;
        else throw config_error("config key codec: expected identity|patchify, got '" + val + "'");
    }
    else if (key == "patch_factor") c.codec.patch_factor = parse_num<int>(key, val);
    else if (key == "window") {
        if (val == "prefix") c.window = WindowMode::prefix;
        else if (val == "suffix") c.window = WindowMode::suffix;
        else throw config_error("config key window: expected prefix|suffix, got '" + val + "'");
    }
    else if (key == "stage") {
        if (val == "pre") c.stage = TapStage::pre_softmax;
        else if (val == "post") c.stage = TapStage::post_softmax_renormalize;
        else throw config_error("config key stage: expected pre|post, got '" + val + "'");
    }
    else if (key == "init") {
        if (val == "replace") c.init = InitMode::ring_replace;
        else if (val == "additive") c.init = InitMode::additive;
        else throw config_error("config key init: expected replace|additive, got '" + val + "'");
    }
    else if (key == "bg_noise") {
        if (val == "trajectory") c.bg_noise = BgNoiseMode::trajectory;
        else if (val == "qsample") c.bg_noise = BgNoiseMode::qsample;
        else throw config_error("config key bg_noise: expected trajectory|qsample, got '" + val + "'");
    }
    else if (key == "rca") c.rca = parse_bool(key, val);
    else if (key == "infusion") c.infusion = parse_bool(key, val);
    else if (key == "dump_attn") c.dump_attention = parse_bool(key, val);
    else if (key == "dump_saliency") c.dump_saliency = parse_bool(key, val);
    else if (key == "cd_features") {
        if (val == "full") c.cd_features = CdFeatureSource::full_forward;
        else if (val == "masked") c.cd_features = CdFeatureSource::masked_input;
        else throw config_error("config key cd_features: expected full|masked, got '" + val + "'");
    }
    else if (key == "sampler_variant") {
        const int n = parse_num<int>(key, val);
        if (n == 2) c.sampler_variant = SamplerVariant::two;
        else if (n == 4) c.sampler_variant = SamplerVariant::four;
        else throw config_error("config key sampler_variant: expected 2|4");
    }
    else if (key == "latent_channels") c.denoiser.latent_channels = parse_num<int>(key, val);
    else if (key == "base_width") c.denoiser.base_width = parse_num<int>(key, val);
    else if (key == "num_levels") c.denoiser.num_levels = parse_num<int>(key, val);
    else if (key == "channel_mult") {
        std::vector<int> mult;
        std::istringstream ss(val);
        std::string tok;
        while (std::getline(ss, tok, ',')) mult.push_back(parse_num<int>(key, trim(tok)));
        c.denoiser.channel_mult = std::move(mult);
    }
    else if (key == "heads") c.denoiser.heads = parse_num<int>(key, val);
    else if (key == "d_ctx") c.denoiser.d_ctx = parse_num<int>(key, val);
    else if (key == "time_dim") c.denoiser.time_dim = parse_num<int>(key, val);
    else if (key == "output_scale") c.denoiser.output_scale = parse_num<float>(key, val);
    else if (key == "zero_final") c.denoiser.zero_final = parse_bool(key, val);
    else if (key == "vocab") c.vocab_path = val;
    else if (key == "weights") c.weights_path = val;
    else throw config_error("unknown config key: " + key);
}

} // namespace

void RunConfig::validate() const {
    if (alpha < 0.0f || alpha > 1.0f) throw config_error("alpha outside [0,1]");
    if (!(guidance_scale > 0.0f)) throw config_error("guidance_scale must be > 0");
    denoiser.validate();
    if (codec.channel_out() != denoiser.latent_channels)
        throw config_error("codec channel_out " + std::to_string(codec.channel_out()) +
                           " does not match denoiser latent_channels " +
                           std::to_string(denoiser.latent_channels));
}

RunConfig parse_run_config_text(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string s = trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        const size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + " is not key=value: " + s);
        const std::string key = trim(s.substr(0, eq));
        const std::string val = trim(s.substr(eq + 1));
        apply_key(base, key, val);
    }
    // weight_seed also drives the denoiser init
    base.denoiser.weight_seed = base.weight_seed;
    return base;
}

RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config_text(ss.str());
}

std::string format_run_config(const RunConfig& c) {
    std::ostringstream out;
    out.precision(12);
    out << "T=" << c.schedule.T << '\n';
    out << "beta_min=" << c.schedule.beta_min << '\n';
    out << "beta_max=" << c.schedule.beta_max << '\n';
    out << "steps=" << c.schedule.num_solver_steps << '\n';
    out << "alpha=" << c.alpha << '\n';
    out << "guidance_scale=" << c.guidance_scale << '\n';
    out << "weight_seed=" << c.weight_seed << '\n';
    out << "noise_seed=" << c.noise_seed << '\n';
    out << "embed_seed=" << c.embed_seed << '\n';
    out << "bg_noise_seed=" << c.bg_noise_seed << '\n';
    out << "codec=" << (c.codec.kind == CodecKind::identity ? "identity" : "patchify") << '\n';
    out << "patch_factor=" << c.codec.patch_factor << '\n';
    out << "window=" << (c.window == WindowMode::prefix ? "prefix" : "suffix") << '\n';
    out << "stage=" << (c.stage == TapStage::pre_softmax ? "pre" : "post") << '\n';
    out << "init=" << (c.init == InitMode::ring_replace ? "replace" : "additive") << '\n';
    out << "bg_noise=" << (c.bg_noise == BgNoiseMode::trajectory ? "trajectory" : "qsample") << '\n';
    out << "rca=" << (c.rca ? "on" : "off") << '\n';
    out << "infusion=" << (c.infusion ? "on" : "off") << '\n';
    out << "dump_attn=" << (c.dump_attention ? "on" : "off") << '\n';
    out << "dump_saliency=" << (c.dump_saliency ? "on" : "off") << '\n';
    out << "cd_features=" << (c.cd_features == CdFeatureSource::full_forward ? "full" : "masked") << '\n';
    out << "sampler_variant=" << (c.sampler_variant == SamplerVariant::two ? 2 : 4) << '\n';
    out << "latent_channels=" << c.denoiser.latent_channels << '\n';
    out << "base_width=" << c.denoiser.base_width << '\n';
    out << "num_levels=" << c.denoiser.num_levels << '\n';
    out << "channel_mult=";
    for (size_t i = 0; i < c.denoiser.channel_mult.size(); ++i)
        out << (i ? "," : "") << c.denoiser.channel_mult[i];
    out << '\n';
    out << "heads=" << c.denoiser.heads << '\n';
    out << "d_ctx=" << c.denoiser.d_ctx << '\n';
    out << "time_dim=" << c.denoiser.time_dim << '\n';
    out << "output_scale=" << c.denoiser.output_scale << '\n';
    out << "zero_final=" << (c.denoiser.zero_final ? "on" : "off") << '\n';
    out << "vocab=" << c.vocab_path << '\n';
    out << "weights=" << c.weights_path << '\n';
    return out.str();
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write config file: " + path);
    out << format_run_config(cfg);
    if (!out) throw io_error("short write saving config to " + path);
}

} // namespace prime
