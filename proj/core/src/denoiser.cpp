#include "prime/denoiser.hpp"

#include <fstream>

#include "denoiser_internal.hpp"
#include "prime/detail/rng.hpp"
#include "prime/steering.hpp"

namespace prime {

using detail::Mat;
using detail::Vec;

std::string LayerId::to_string() const {
    return detail::block_prefix(half, level) + "." + (index == 0 ? "sattn" : "cattn");
}

void DenoiserConfig::validate() const {
    if (latent_channels < 1 || base_width < 1) throw config_error("denoiser: channels/width must be >= 1");
    if (num_levels < 1) throw config_error("denoiser: num_levels must be >= 1");
    if (static_cast<int>(channel_mult.size()) != num_levels)
        throw config_error("denoiser: channel_mult size must equal num_levels");
    if (time_dim % 2 != 0) throw config_error("denoiser: time_dim must be even");
    for (int l = 0; l < num_levels; ++l) {
        if (width(l) % heads != 0) throw config_error("denoiser: width not divisible by heads");
    }
}

namespace detail {
const WTensor& weight(const WeightSet& w, const std::string& name) {
    auto it = w.tensors.find(name);
    if (it == w.tensors.end()) throw config_error("weight set is missing tensor: " + name);
    return it->second;
}
} // namespace detail

namespace {

using detail::weight;

struct TensorSpec {
    std::string name;
    std::vector<int> shape;
    int fan_in;          // 0: zeros, -1: ones
    float scale = 1.0f;  // extra init scaling
};

std::vector<TensorSpec> tensor_specs(const DenoiserConfig& cfg) {
    std::vector<TensorSpec> specs;
    auto gn = [&](const std::string& p, int c) {
        specs.push_back({p + ".g", {c}, -1});
        specs.push_back({p + ".b", {c}, 0});
    };
    auto conv = [&](const std::string& p, int cin, int cout, float scale = 1.0f) {
        specs.push_back({p + ".w", {3, 3, cin, cout}, cin * 9, scale});
        specs.push_back({p + ".b", {cout}, 0});
    };
    auto res = [&](const std::string& p, int cin, int cout) {
        gn(p + ".gn1", cin);
        conv(p + ".conv1", cin, cout);
        specs.push_back({p + ".temb.w", {cfg.time_dim, cout}, cfg.time_dim});
        specs.push_back({p + ".temb.b", {cout}, 0});
        gn(p + ".gn2", cout);
        conv(p + ".conv2", cout, cout);
        if (cin != cout) specs.push_back({p + ".skip.w", {cin, cout}, cin});
    };
    auto sattn = [&](const std::string& p, int c) {
        gn(p + ".gn", c);
        for (const char* n : {".wq", ".wk", ".wv", ".wo"}) specs.push_back({p + n, {c, c}, c});
    };
    auto cattn = [&](const std::string& p, int c) {
        gn(p + ".gn", c);
        specs.push_back({p + ".wq", {c, c}, c});
        specs.push_back({p + ".wk", {cfg.d_ctx, c}, cfg.d_ctx});
        specs.push_back({p + ".wv", {cfg.d_ctx, c}, cfg.d_ctx});
        specs.push_back({p + ".wo", {c, c}, c});
    };

    conv("stem", cfg.latent_channels, cfg.width(0));
    specs.push_back({"temb.lin1.w", {cfg.time_dim, cfg.time_dim}, cfg.time_dim});
    specs.push_back({"temb.lin1.b", {cfg.time_dim}, 0});
    specs.push_back({"temb.lin2.w", {cfg.time_dim, cfg.time_dim}, cfg.time_dim});
    specs.push_back({"temb.lin2.b", {cfg.time_dim}, 0});

    for (int l = 0; l < cfg.num_levels; ++l) {
        if (l > 0) conv("down" + std::to_string(l - 1), cfg.width(l - 1), cfg.width(l));
        const std::string p = "enc" + std::to_string(l);
        res(p + ".res", cfg.width(l), cfg.width(l));
        sattn(p + ".sattn", cfg.width(l));
        cattn(p + ".cattn", cfg.width(l));
    }
    const int wm = cfg.width(cfg.num_levels - 1);
    res("mid.res", wm, wm);
    sattn("mid.sattn", wm);
    cattn("mid.cattn", wm);
    for (int l = cfg.num_levels - 1; l >= 0; --l) {
        const std::string p = "dec" + std::to_string(l);
        res(p + ".res", cfg.width(l) * 2, cfg.width(l));
        sattn(p + ".sattn", cfg.width(l));
        cattn(p + ".cattn", cfg.width(l));
        if (l > 0) conv("up" + std::to_string(l - 1), cfg.width(l), cfg.width(l - 1));
    }
    gn("head.gn", cfg.width(0));
    conv("head", cfg.width(0), cfg.latent_channels, cfg.zero_final ? 0.0f : cfg.output_scale);
    return specs;
}

std::pair<int, int> flat_dims(const std::vector<int>& shape) {
    if (shape.size() == 1) return {shape[0], 1};
    if (shape.size() == 2) return {shape[0], shape[1]};
    // conv {3,3,cin,cout} stored as (9*cin, cout)
    return {shape[0] * shape[1] * shape[2], shape[3]};
}

} // namespace

WeightSet Denoiser::init_weights(const DenoiserConfig& cfg) {
    cfg.validate();
    WeightSet ws;
    for (const auto& spec : tensor_specs(cfg)) {
        auto [rows, cols] = flat_dims(spec.shape);
        WTensor t;
        t.shape = spec.shape;
        t.m.resize(rows, cols);
        if (spec.fan_in == 0 || spec.scale == 0.0f) {
            t.m.setZero();
        } else if (spec.fan_in == -1) {
            t.m.setOnes();
        } else {
            auto rng = detail::seeded_rng(cfg.weight_seed, spec.name);
            std::normal_distribution<float> dist(0.0f, spec.scale / std::sqrt(static_cast<float>(spec.fan_in)));
            for (Eigen::Index j = 0; j < t.m.cols(); ++j)
                for (Eigen::Index i = 0; i < t.m.rows(); ++i) t.m(i, j) = dist(rng);
        }
        ws.tensors.emplace(spec.name, std::move(t));
    }
    return ws;
}

Denoiser::Denoiser(DenoiserConfig cfg, WeightSet weights) : cfg_(std::move(cfg)), weights_(std::move(weights)) {
    cfg_.validate();
    // Fail fast on missing or misshapen tensors.
    for (const auto& spec : tensor_specs(cfg_)) {
        const WTensor& t = weight(weights_, spec.name);
        auto [rows, cols] = flat_dims(spec.shape);
        if (t.m.rows() != rows || t.m.cols() != cols)
            throw config_error("weight tensor " + spec.name + " has wrong shape");
    }
}

std::vector<LayerId> Denoiser::self_attention_layers() const {
    std::vector<LayerId> out;
    for (int l = 0; l < cfg_.num_levels; ++l) out.push_back({LayerId::Half::encoder, l, 0});
    out.push_back({LayerId::Half::middle, cfg_.num_levels - 1, 0});
    for (int l = cfg_.num_levels - 1; l >= 0; --l) out.push_back({LayerId::Half::decoder, l, 0});
    return out;
}

std::vector<LayerId> Denoiser::cross_attention_layers() const {
    std::vector<LayerId> out;
    for (const auto& id : self_attention_layers()) out.push_back({id.half, id.level, 1});
    return out;
}

Denoiser::AttnProjection Denoiser::self_attn_projection(const LayerId& id) const {
    const std::string p = detail::block_prefix(id.half, id.level) + ".sattn";
    return {&weight(weights_, p + ".wq").m, &weight(weights_, p + ".wk").m, cfg_.heads};
}

namespace {

void apply_self_plan(Mat& m, const SelfAttnPlan& plan, int tokens, const LayerId& id) {
    for (size_t i = 0; i < plan.size(); ++i) {
        const int r = plan.rows[i];
        const int c = plan.cols[i];
        if (r < 0 || r >= tokens || c < 0 || c >= tokens)
            throw plan_error("self-attention plan addresses (" + std::to_string(r) + "," +
                             std::to_string(c) + ") outside " + std::to_string(tokens) +
                             " tokens at layer " + id.to_string());
        m(r, c) = plan.values[i];
    }
}

void renormalize_rows(Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const float sum = m.row(r).sum();
        if (sum <= 0.0f) throw plan_error("post-softmax renormalize hit a non-positive row sum");
        m.row(r) /= sum;
    }
}

struct ForwardCtx {
    const DenoiserConfig* cfg;
    const WeightSet* w;
    const AttentionTapSet* taps;
    const RecordRequest* rec;
    ForwardRecord* record;
    const Mat* ctx_mat; // p x d_ctx
    Vec temb;           // shared time embedding after the MLP
};

Mat resblock(const ForwardCtx& f, const std::string& p, const Mat& x, int H, int W) {
    const WeightSet& w = *f.w;
    Mat h = detail::group_norm(x, weight(w, p + ".gn1.g").m.col(0), weight(w, p + ".gn1.b").m.col(0));
    h = detail::conv3(detail::silu(h), H, W, weight(w, p + ".conv1.w").m, weight(w, p + ".conv1.b").m.col(0));
    const Vec tproj = weight(w, p + ".temb.w").m.transpose() * detail::silu(f.temb) +
                      weight(w, p + ".temb.b").m.col(0);
    h.rowwise() += tproj.transpose();
    h = detail::group_norm(h, weight(w, p + ".gn2.g").m.col(0), weight(w, p + ".gn2.b").m.col(0));
    h = detail::conv3(detail::silu(h), H, W, weight(w, p + ".conv2.w").m, weight(w, p + ".conv2.b").m.col(0));
    if (w.tensors.count(p + ".skip.w")) return h + x * weight(w, p + ".skip.w").m;
    return h + x;
}

Mat self_attention(const ForwardCtx& f, const LayerId& id, const Mat& x) {
    const std::string p = detail::block_prefix(id.half, id.level) + ".sattn";
    const WeightSet& w = *f.w;
    const int heads = f.cfg->heads;
    const int hw = static_cast<int>(x.rows());
    const int c = static_cast<int>(x.cols());
    const int hd = c / heads;

    Mat y = detail::group_norm(x, weight(w, p + ".gn.g").m.col(0), weight(w, p + ".gn.b").m.col(0));
    if (f.rec->self_features) f.record->self_features[id] = y;

    const Mat q = y * weight(w, p + ".wq").m;
    const Mat k = y * weight(w, p + ".wk").m;
    const Mat v = y * weight(w, p + ".wv").m;

    const SelfAttnPlan* plan = nullptr;
    if (f.taps) {
        auto it = f.taps->self_plans.find(id);
        if (it != f.taps->self_plans.end()) plan = &it->second;
    }
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

    Mat out(hw, c);
    Mat recorded;
    if (f.rec->self_probs) recorded.resize(heads * hw, hw);
    for (int hh = 0; hh < heads; ++hh) {
        Mat a = q.middleCols(hh * hd, hd) * k.middleCols(hh * hd, hd).transpose() * scale;
        if (plan && f.taps->stage == TapStage::pre_softmax) apply_self_plan(a, *plan, hw, id);
        detail::softmax_rows(a);
        if (plan && f.taps->stage == TapStage::post_softmax_renormalize) {
            apply_self_plan(a, *plan, hw, id);
            renormalize_rows(a);
        }
        if (f.rec->self_probs) recorded.middleRows(hh * hw, hw) = a;
        out.middleCols(hh * hd, hd) = a * v.middleCols(hh * hd, hd);
    }
    if (f.rec->self_probs) f.record->self_probs[id] = std::move(recorded);
    return x + out * weight(w, p + ".wo").m;
}

Mat cross_attention(const ForwardCtx& f, const LayerId& id, const Mat& x, int H, int W) {
    const Mat& ctx = *f.ctx_mat;
    if (ctx.rows() == 0) return x; // empty context: block is a no-op

    const std::string p = detail::block_prefix(id.half, id.level) + ".cattn";
    const WeightSet& w = *f.w;
    const int heads = f.cfg->heads;
    const int hw = static_cast<int>(x.rows());
    const int c = static_cast<int>(x.cols());
    const int hd = c / heads;
    const int ptok = static_cast<int>(ctx.rows());

    Mat y = detail::group_norm(x, weight(w, p + ".gn.g").m.col(0), weight(w, p + ".gn.b").m.col(0));
    const Mat q = y * weight(w, p + ".wq").m;
    const Mat k = ctx * weight(w, p + ".wk").m;
    const Mat v = ctx * weight(w, p + ".wv").m;

    const CrossRectifySpec* rect = nullptr;
    const BinaryMask* mask = nullptr;
    if (f.taps && f.taps->cross_rectify) {
        rect = &*f.taps->cross_rectify;
        auto it = rect->masks_by_height.find(H);
        if (it == rect->masks_by_height.end())
            throw plan_error("cross-attention rectify has no mask for resolution height " + std::to_string(H));
        mask = &it->second;
        if (mask->height != H || mask->width != W)
            throw plan_error("cross-attention rectify mask shape mismatch at layer " + id.to_string());
    }

    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    Mat out(hw, c);
    Mat recorded;
    if (f.rec->cross_probs) recorded.resize(heads * hw, ptok);
    for (int hh = 0; hh < heads; ++hh) {
        Mat a = q.middleCols(hh * hd, hd) * k.middleCols(hh * hd, hd).transpose() * scale;
        if (rect) a = rectify_cross_attention(a, *mask, rect->object_token_indices);
        detail::softmax_rows(a);
        if (f.rec->cross_probs) recorded.middleRows(hh * hw, hw) = a;
        out.middleCols(hh * hd, hd) = a * v.middleCols(hh * hd, hd);
    }
    if (f.rec->cross_probs) f.record->cross_probs[id] = std::move(recorded);
    return x + out * weight(w, p + ".wo").m;
}

} // namespace

ForwardResult Denoiser::forward(const LatentImage& z, int t, const TextEmbedding& ctx,
                                const AttentionTapSet& taps, CostCounter& counters,
                                const RecordRequest& rec) const {
    if (z.channels != cfg_.latent_channels)
        throw dimension_error("forward: latent channels do not match denoiser config");
    const int div = 1 << (cfg_.num_levels - 1);
    if (z.height % div != 0 || z.width % div != 0)
        throw dimension_error("forward: latent dims must be divisible by " + std::to_string(div));
    if (ctx.p > 0 && ctx.d_ctx != cfg_.d_ctx)
        throw dimension_error("forward: context width does not match d_ctx");

    ForwardResult result;
    ForwardCtx f;
    f.cfg = &cfg_;
    f.w = &weights_;
    f.taps = &taps;
    f.rec = &rec;
    f.record = &result.record;
    f.ctx_mat = &ctx.matrix;

    const Vec emb = detail::sinusoidal_embedding(static_cast<float>(t), cfg_.time_dim);
    Vec h1 = weight(weights_, "temb.lin1.w").m.transpose() * emb + weight(weights_, "temb.lin1.b").m.col(0);
    f.temb = weight(weights_, "temb.lin2.w").m.transpose() * detail::silu(h1) +
             weight(weights_, "temb.lin2.b").m.col(0);

    int H = z.height, W = z.width;
    Mat h = detail::conv3(detail::latent_to_mat(z), H, W, weight(weights_, "stem.w").m,
                          weight(weights_, "stem.b").m.col(0));

    std::vector<Mat> skips;
    for (int l = 0; l < cfg_.num_levels; ++l) {
        if (l > 0) {
            const std::string d = "down" + std::to_string(l - 1);
            h = detail::conv3(h, H, W, weight(weights_, d + ".w").m, weight(weights_, d + ".b").m.col(0), 2);
            H /= 2;
            W /= 2;
        }
        const std::string p = "enc" + std::to_string(l);
        h = resblock(f, p + ".res", h, H, W);
        h = self_attention(f, {LayerId::Half::encoder, l, 0}, h);
        h = cross_attention(f, {LayerId::Half::encoder, l, 1}, h, H, W);
        skips.push_back(h);
    }

    h = resblock(f, "mid.res", h, H, W);
    h = self_attention(f, {LayerId::Half::middle, cfg_.num_levels - 1, 0}, h);
    h = cross_attention(f, {LayerId::Half::middle, cfg_.num_levels - 1, 1}, h, H, W);

    for (int l = cfg_.num_levels - 1; l >= 0; --l) {
        Mat cat(h.rows(), h.cols() + skips[l].cols());
        cat << h, skips[l];
        const std::string p = "dec" + std::to_string(l);
        h = resblock(f, p + ".res", cat, H, W);
        h = self_attention(f, {LayerId::Half::decoder, l, 0}, h);
        h = cross_attention(f, {LayerId::Half::decoder, l, 1}, h, H, W);
        if (l > 0) {
            h = detail::upsample_nearest2(h, H, W);
            H *= 2;
            W *= 2;
            const std::string u = "up" + std::to_string(l - 1);
            h = detail::conv3(h, H, W, weight(weights_, u + ".w").m, weight(weights_, u + ".b").m.col(0));
        }
    }

    h = detail::group_norm(h, weight(weights_, "head.gn.g").m.col(0), weight(weights_, "head.gn.b").m.col(0));
    h = detail::conv3(detail::silu(h), H, W, weight(weights_, "head.w").m, weight(weights_, "head.b").m.col(0));

    result.eps = detail::mat_to_latent(h, z.height, z.width);
    result.eps.timestep_tag = t;
    ++counters.denoiser_forwards;
    return result;
}

void WeightSet::save(const std::string& path) const {
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw io_error("cannot write weight file: " + path);
    std::ofstream man(path + ".manifest");
    if (!man) throw io_error("cannot write weight manifest: " + path + ".manifest");
    size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        man << name;
        for (int d : t.shape) man << ' ' << d;
        man << " @" << offset << '\n';
        // column-major dump matches Eigen's storage
        bin.write(reinterpret_cast<const char*>(t.m.data()), sizeof(float) * t.m.size());
        offset += t.m.size();
    }
    if (!bin || !man) throw io_error("short write saving weights to " + path);
}

WeightSet WeightSet::load(const std::string& path) {
    std::ifstream man(path + ".manifest");
    if (!man) throw io_error("cannot open weight manifest: " + path + ".manifest");
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw io_error("cannot open weight file: " + path);

    WeightSet ws;
    std::string line;
    while (std::getline(man, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string name;
        ss >> name;
        std::vector<int> shape;
        std::string tok;
        size_t offset = 0;
        while (ss >> tok) {
            if (tok[0] == '@') {
                offset = std::stoull(tok.substr(1));
            } else {
                shape.push_back(std::stoi(tok));
            }
        }
        if (shape.empty()) throw io_error("manifest entry without shape: " + line);
        auto [rows, cols] = flat_dims(shape);
        WTensor t;
        t.shape = shape;
        t.m.resize(rows, cols);
        bin.seekg(static_cast<std::streamoff>(offset * sizeof(float)));
        bin.read(reinterpret_cast<char*>(t.m.data()), sizeof(float) * t.m.size());
        if (!bin) throw io_error("weight file truncated reading tensor " + name + " from " + path);
        for (Eigen::Index i = 0; i < t.m.size(); ++i) {
            if (!std::isfinite(t.m.data()[i]))
                throw io_error("weight tensor " + name + " contains non-finite values in " + path);
        }
        ws.tensors.emplace(name, std::move(t));
    }
    if (ws.tensors.empty()) throw io_error("weight manifest is empty: " + path + ".manifest");
    return ws;
}

} // namespace prime
