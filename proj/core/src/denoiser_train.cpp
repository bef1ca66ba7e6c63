#include <cmath>

#include "denoiser_internal.hpp"
#include "prime/codec.hpp"
#include "prime/detail/rng.hpp"
#include "prime/scheduler.hpp"

// Training-only machinery: a cached forward that mirrors the inference graph
// op-for-op (pinned bitwise by a unit test), hand-written backward, and Adam.
// Training runs unconditionally (empty text context), so cross-attention
// blocks are identity and receive no gradient.

namespace prime {

namespace {

using detail::Mat;
using detail::Vec;

struct GnCache {
    detail::GnStats stats;
};

struct ResCache {
    std::string prefix;
    int H = 0, W = 0;
    Mat x_in;
    GnCache gn1;
    Mat y1; // gn1 output (pre-silu)
    Mat s1; // conv1 input
    GnCache gn2;
    Mat h1; // conv1 out + temb (gn2 input)
    Mat y2; // gn2 output
    Mat s2; // conv2 input
};

struct AttnCache {
    std::string prefix;
    Mat x_in;
    GnCache gn;
    Mat y;
    Mat q, k, v;
    std::vector<Mat> probs; // per head
    Mat concat;             // pre-output-projection
};

struct ConvCache {
    std::string prefix;
    int H = 0, W = 0, stride = 1;
    Mat input;
};

struct Grads {
    std::map<std::string, Mat> g;

    Mat& at(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        auto it = g.find(name);
        if (it == g.end()) it = g.emplace(name, Mat::Zero(rows, cols)).first;
        return it->second;
    }
};

struct TrainGraph {
    const DenoiserConfig& cfg;
    const WeightSet& w;
    Grads grads;

    // per-forward caches
    Vec emb, th1, temb, silu_temb;
    Vec d_silu_temb_acc;
    ConvCache stem;
    std::vector<ConvCache> downs, ups;
    std::vector<ResCache> res_caches;   // enc0..encL-1, mid, decL-1..dec0 in forward order
    std::vector<AttnCache> attn_caches; // same order
    std::vector<Mat> skips;
    GnCache head_gn;
    Mat head_x, head_y, head_s;
    int Hout = 0, Wout = 0;

    const Mat& wm(const std::string& name) { return detail::weight(w, name).m; }
    Vec wv(const std::string& name) { return detail::weight(w, name).m.col(0); }

    Mat resblock_fwd(const std::string& p, const Mat& x, int H, int W) {
        ResCache rc;
        rc.prefix = p;
        rc.H = H;
        rc.W = W;
        rc.x_in = x;
        rc.y1 = detail::group_norm(x, wv(p + ".gn1.g"), wv(p + ".gn1.b"), &rc.gn1.stats);
        rc.s1 = detail::silu(rc.y1);
        Mat h = detail::conv3(rc.s1, H, W, wm(p + ".conv1.w"), wv(p + ".conv1.b"));
        const Vec tproj = wm(p + ".temb.w").transpose() * silu_temb + wv(p + ".temb.b");
        h.rowwise() += tproj.transpose();
        rc.h1 = h;
        rc.y2 = detail::group_norm(h, wv(p + ".gn2.g"), wv(p + ".gn2.b"), &rc.gn2.stats);
        rc.s2 = detail::silu(rc.y2);
        Mat out = detail::conv3(rc.s2, H, W, wm(p + ".conv2.w"), wv(p + ".conv2.b"));
        if (w.tensors.count(p + ".skip.w")) out = out + x * wm(p + ".skip.w");
        else out = out + x;
        res_caches.push_back(std::move(rc));
        return out;
    }

    Mat resblock_bwd(const ResCache& rc, const Mat& dout) {
        const std::string& p = rc.prefix;
        Mat dx;
        if (w.tensors.count(p + ".skip.w")) {
            grads.at(p + ".skip.w", wm(p + ".skip.w").rows(), wm(p + ".skip.w").cols()) +=
                rc.x_in.transpose() * dout;
            dx = dout * wm(p + ".skip.w").transpose();
        } else {
            dx = dout;
        }
        // conv2
        Mat cols2 = detail::im2col3(rc.s2, rc.H, rc.W, 1);
        grads.at(p + ".conv2.w", wm(p + ".conv2.w").rows(), wm(p + ".conv2.w").cols()) +=
            cols2.transpose() * dout;
        grads.at(p + ".conv2.b", dout.cols(), 1) += dout.colwise().sum().transpose();
        Mat ds2 = detail::col2im3(dout * wm(p + ".conv2.w").transpose(), rc.H, rc.W,
                                  static_cast<int>(rc.s2.cols()), 1);
        Mat dy2 = detail::silu_backward(rc.y2, ds2);
        Vec gg, gb;
        Mat dh1 = detail::group_norm_backward(dy2, rc.gn2.stats, wv(p + ".gn2.g"), gg, gb);
        grads.at(p + ".gn2.g", gg.size(), 1) += gg;
        grads.at(p + ".gn2.b", gb.size(), 1) += gb;
        // time projection: broadcast add over rows
        const Vec dtproj = dh1.colwise().sum().transpose();
        grads.at(p + ".temb.w", wm(p + ".temb.w").rows(), wm(p + ".temb.w").cols()) +=
            silu_temb * dtproj.transpose();
        grads.at(p + ".temb.b", dtproj.size(), 1) += dtproj;
        d_silu_temb_acc += wm(p + ".temb.w") * dtproj;
        // conv1
        Mat cols1 = detail::im2col3(rc.s1, rc.H, rc.W, 1);
        grads.at(p + ".conv1.w", wm(p + ".conv1.w").rows(), wm(p + ".conv1.w").cols()) +=
            cols1.transpose() * dh1;
        grads.at(p + ".conv1.b", dh1.cols(), 1) += dh1.colwise().sum().transpose();
        Mat ds1 = detail::col2im3(dh1 * wm(p + ".conv1.w").transpose(), rc.H, rc.W,
                                  static_cast<int>(rc.s1.cols()), 1);
        Mat dy1 = detail::silu_backward(rc.y1, ds1);
        Mat dxin = detail::group_norm_backward(dy1, rc.gn1.stats, wv(p + ".gn1.g"), gg, gb);
        grads.at(p + ".gn1.g", gg.size(), 1) += gg;
        grads.at(p + ".gn1.b", gb.size(), 1) += gb;
        return dx + dxin;
    }

    Mat sattn_fwd(const std::string& p, const Mat& x) {
        AttnCache ac;
        ac.prefix = p;
        ac.x_in = x;
        const int heads = cfg.heads;
        const int hw = static_cast<int>(x.rows());
        const int c = static_cast<int>(x.cols());
        const int hd = c / heads;
        ac.y = detail::group_norm(x, wv(p + ".gn.g"), wv(p + ".gn.b"), &ac.gn.stats);
        ac.q = ac.y * wm(p + ".wq");
        ac.k = ac.y * wm(p + ".wk");
        ac.v = ac.y * wm(p + ".wv");
        const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
        ac.concat.resize(hw, c);
        for (int hh = 0; hh < heads; ++hh) {
            Mat a = ac.q.middleCols(hh * hd, hd) * ac.k.middleCols(hh * hd, hd).transpose() * scale;
            detail::softmax_rows(a);
            ac.concat.middleCols(hh * hd, hd) = a * ac.v.middleCols(hh * hd, hd);
            ac.probs.push_back(std::move(a));
        }
        Mat out = x + ac.concat * wm(p + ".wo");
        attn_caches.push_back(std::move(ac));
        return out;
    }

    Mat sattn_bwd(const AttnCache& ac, const Mat& dout) {
        const std::string& p = ac.prefix;
        const int heads = cfg.heads;
        const int c = static_cast<int>(ac.x_in.cols());
        const int hd = c / heads;
        const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

        grads.at(p + ".wo", c, c) += ac.concat.transpose() * dout;
        Mat dconcat = dout * wm(p + ".wo").transpose();

        Mat dq = Mat::Zero(ac.q.rows(), c), dk = Mat::Zero(ac.k.rows(), c), dv = Mat::Zero(ac.v.rows(), c);
        for (int hh = 0; hh < heads; ++hh) {
            const Mat& pmat = ac.probs[hh];
            Mat do_h = dconcat.middleCols(hh * hd, hd);
            Mat dP = do_h * ac.v.middleCols(hh * hd, hd).transpose();
            dv.middleCols(hh * hd, hd) = pmat.transpose() * do_h;
            Mat da = detail::softmax_backward_rows(pmat, dP) * scale;
            dq.middleCols(hh * hd, hd) = da * ac.k.middleCols(hh * hd, hd);
            dk.middleCols(hh * hd, hd) = da.transpose() * ac.q.middleCols(hh * hd, hd);
        }
        grads.at(p + ".wq", c, c) += ac.y.transpose() * dq;
        grads.at(p + ".wk", c, c) += ac.y.transpose() * dk;
        grads.at(p + ".wv", c, c) += ac.y.transpose() * dv;
        Mat dy = dq * wm(p + ".wq").transpose() + dk * wm(p + ".wk").transpose() +
                 dv * wm(p + ".wv").transpose();
        Vec gg, gb;
        Mat dxin = detail::group_norm_backward(dy, ac.gn.stats, wv(p + ".gn.g"), gg, gb);
        grads.at(p + ".gn.g", gg.size(), 1) += gg;
        grads.at(p + ".gn.b", gb.size(), 1) += gb;
        return dout + dxin;
    }

    Mat conv_fwd(ConvCache& cc, const std::string& p, const Mat& x, int H, int W, int stride) {
        cc.prefix = p;
        cc.H = H;
        cc.W = W;
        cc.stride = stride;
        cc.input = x;
        return detail::conv3(x, H, W, wm(p + ".w"), wv(p + ".b"), stride);
    }

    Mat conv_bwd(const ConvCache& cc, const Mat& dout) {
        const std::string& p = cc.prefix;
        Mat cols = detail::im2col3(cc.input, cc.H, cc.W, cc.stride);
        grads.at(p + ".w", wm(p + ".w").rows(), wm(p + ".w").cols()) += cols.transpose() * dout;
        grads.at(p + ".b", dout.cols(), 1) += dout.colwise().sum().transpose();
        return detail::col2im3(dout * wm(p + ".w").transpose(), cc.H, cc.W,
                               static_cast<int>(cc.input.cols()), cc.stride);
    }

    Mat forward(const LatentImage& z, int t) {
        res_caches.clear();
        attn_caches.clear();
        skips.clear();
        downs.assign(cfg.num_levels > 1 ? cfg.num_levels - 1 : 0, {});
        ups.assign(cfg.num_levels > 1 ? cfg.num_levels - 1 : 0, {});

        emb = detail::sinusoidal_embedding(static_cast<float>(t), cfg.time_dim);
        th1 = wm("temb.lin1.w").transpose() * emb + wv("temb.lin1.b");
        temb = wm("temb.lin2.w").transpose() * detail::silu(th1) + wv("temb.lin2.b");
        silu_temb = detail::silu(temb);
        d_silu_temb_acc = Vec::Zero(temb.size());

        int H = z.height, W = z.width;
        Mat h = conv_fwd(stem, "stem", detail::latent_to_mat(z), H, W, 1);

        for (int l = 0; l < cfg.num_levels; ++l) {
            if (l > 0) {
                h = conv_fwd(downs[l - 1], "down" + std::to_string(l - 1), h, H, W, 2);
                H /= 2;
                W /= 2;
            }
            const std::string p = "enc" + std::to_string(l);
            h = resblock_fwd(p + ".res", h, H, W);
            h = sattn_fwd(p + ".sattn", h);
            skips.push_back(h);
        }

        h = resblock_fwd("mid.res", h, H, W);
        h = sattn_fwd("mid.sattn", h);

        for (int l = cfg.num_levels - 1; l >= 0; --l) {
            Mat cat(h.rows(), h.cols() + skips[l].cols());
            cat << h, skips[l];
            const std::string p = "dec" + std::to_string(l);
            h = resblock_fwd(p + ".res", cat, H, W);
            h = sattn_fwd(p + ".sattn", h);
            if (l > 0) {
                h = detail::upsample_nearest2(h, H, W);
                H *= 2;
                W *= 2;
                h = conv_fwd(ups[l - 1], "up" + std::to_string(l - 1), h, H, W, 1);
            }
        }

        head_x = h;
        head_y = detail::group_norm(h, wv("head.gn.g"), wv("head.gn.b"), &head_gn.stats);
        head_s = detail::silu(head_y);
        Hout = H;
        Wout = W;
        return detail::conv3(head_s, H, W, wm("head.w"), wv("head.b"));
    }

    void backward(const Mat& dpred) {
        int H = Hout, W = Wout;
        Mat cols = detail::im2col3(head_s, H, W, 1);
        grads.at("head.w", wm("head.w").rows(), wm("head.w").cols()) += cols.transpose() * dpred;
        grads.at("head.b", dpred.cols(), 1) += dpred.colwise().sum().transpose();
        Mat ds = detail::col2im3(dpred * wm("head.w").transpose(), H, W,
                                 static_cast<int>(head_s.cols()), 1);
        Mat dy = detail::silu_backward(head_y, ds);
        Vec gg, gb;
        Mat dh = detail::group_norm_backward(dy, head_gn.stats, wv("head.gn.g"), gg, gb);
        grads.at("head.gn.g", gg.size(), 1) += gg;
        grads.at("head.gn.b", gb.size(), 1) += gb;

        // decoder (reverse): attn caches and res caches pop from the back
        size_t ri = res_caches.size();
        size_t ai = attn_caches.size();
        std::vector<Mat> dskips(cfg.num_levels);

        for (int l = 0; l < cfg.num_levels; ++l) {
            if (l > 0) {
                dh = conv_bwd(ups[l - 1], dh);
                H /= 2;
                W /= 2;
                dh = detail::upsample_nearest2_backward(dh, H, W);
            }
            dh = sattn_bwd(attn_caches[--ai], dh);
            Mat dcat = resblock_bwd(res_caches[--ri], dh);
            const int hc = static_cast<int>(dcat.cols()) - static_cast<int>(skips[l].cols());
            dh = dcat.leftCols(hc);
            dskips[l] = dcat.rightCols(skips[l].cols());
        }

        dh = sattn_bwd(attn_caches[--ai], dh);
        dh = resblock_bwd(res_caches[--ri], dh);

        for (int l = cfg.num_levels - 1; l >= 0; --l) {
            dh += dskips[l];
            dh = sattn_bwd(attn_caches[--ai], dh);
            dh = resblock_bwd(res_caches[--ri], dh);
            if (l > 0) {
                dh = conv_bwd(downs[l - 1], dh);
                H *= 2;
                W *= 2;
            }
        }
        conv_bwd(stem, dh); // input grad discarded

        // shared time-embedding MLP
        Vec dtemb = temb.unaryExpr([](float v) {
                            const float s = 1.0f / (1.0f + std::exp(-v));
                            return s * (1.0f + v * (1.0f - s));
                        })
                        .cwiseProduct(d_silu_temb_acc);
        const Vec s1t = detail::silu(th1);
        grads.at("temb.lin2.w", wm("temb.lin2.w").rows(), wm("temb.lin2.w").cols()) +=
            s1t * dtemb.transpose();
        grads.at("temb.lin2.b", dtemb.size(), 1) += dtemb;
        Vec ds1t = wm("temb.lin2.w") * dtemb;
        Vec dth1 = th1.unaryExpr([](float v) {
                           const float s = 1.0f / (1.0f + std::exp(-v));
                           return s * (1.0f + v * (1.0f - s));
                       })
                       .cwiseProduct(ds1t);
        grads.at("temb.lin1.w", wm("temb.lin1.w").rows(), wm("temb.lin1.w").cols()) +=
            emb * dth1.transpose();
        grads.at("temb.lin1.b", dth1.size(), 1) += dth1;
    }
};

struct AdamState {
    std::map<std::string, Mat> m, v;
    long step = 0;
};

void adam_update(WeightSet& w, const Grads& grads, AdamState& state, float lr) {
    constexpr float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    ++state.step;
    const float bc1 = 1.0f - std::pow(b1, static_cast<float>(state.step));
    const float bc2 = 1.0f - std::pow(b2, static_cast<float>(state.step));
    for (const auto& [name, g] : grads.g) {
        Mat& mm = state.m.try_emplace(name, Mat::Zero(g.rows(), g.cols())).first->second;
        Mat& vv = state.v.try_emplace(name, Mat::Zero(g.rows(), g.cols())).first->second;
        mm = b1 * mm + (1.0f - b1) * g;
        vv = b2 * vv + (1.0f - b2) * g.cwiseProduct(g);
        Mat mhat = mm / bc1;
        Mat vhat = vv / bc2;
        w.tensors.at(name).m -=
            lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps).matrix());
    }
}

} // namespace

LatentImage forward_training_path(const Denoiser& d, const LatentImage& z, int t) {
    TrainGraph graph{d.config(), d.weights(), {}};
    Mat out = graph.forward(z, t);
    LatentImage eps = detail::mat_to_latent(out, z.height, z.width);
    eps.timestep_tag = t;
    return eps;
}

std::pair<double, std::map<std::string, Eigen::MatrixXf>> training_loss_and_grads(
    const Denoiser& d, const LatentImage& zt, int t, const LatentImage& target) {
    TrainGraph graph{d.config(), d.weights(), {}};
    Mat pred = graph.forward(zt, t);
    Mat diff = pred - detail::latent_to_mat(target);
    const double loss = diff.squaredNorm() / static_cast<double>(diff.size());
    Mat dpred = diff * (2.0f / static_cast<float>(diff.size()));
    graph.backward(dpred);
    return {loss, std::move(graph.grads.g)};
}

std::pair<WeightSet, TrainReport> train_toy(const DenoiserConfig& cfg, const ShapesDataset& dataset,
                                            const TrainConfig& train, const NoiseSchedule& sched) {
    cfg.validate();
    WeightSet weights = Denoiser::init_weights(cfg);
    TrainReport report;
    if (train.steps == 0) return {std::move(weights), report};

    const CodecConfig codec; // identity: dataset images are latent-sized
    AdamState adam;
    std::uniform_int_distribution<int> ut(1, sched.T);
    std::normal_distribution<float> un(0.0f, 1.0f);

    for (long step = 0; step < train.steps; ++step) {
        TrainGraph graph{cfg, weights, {}};
        double loss_acc = 0.0;
        for (int b = 0; b < train.batch; ++b) {
            const long idx = step * train.batch + b;
            const PixelImage img = dataset.sample(idx);
            const LatentImage z0 = encode(img, codec);

            auto rng = detail::seeded_rng(train.seed, detail::hash_combine(static_cast<uint64_t>(step),
                                                                           static_cast<uint64_t>(b)));
            const int t = ut(rng);
            LatentImage noise(z0.channels, z0.height, z0.width);
            for (float& x : noise.data) x = un(rng);
            const LatentImage zt = add_noise(z0, t, noise, sched);

            Mat pred = graph.forward(zt, t);
            const Mat target = detail::latent_to_mat(noise);
            Mat diff = pred - target;
            const double loss = diff.squaredNorm() / static_cast<double>(diff.size());
            loss_acc += loss;
            Mat dpred = diff * (2.0f / static_cast<float>(diff.size()));
            graph.backward(dpred);
        }
        const double loss = loss_acc / train.batch;
        if (!std::isfinite(loss)) throw training_error("training diverged at step " + std::to_string(step));
        report.loss_history.push_back(loss);
        // mean gradient over the batch
        for (auto& [name, g] : graph.grads.g) g /= static_cast<float>(train.batch);
        adam_update(weights, graph.grads, adam, train.learning_rate);
    }

    const size_t window = std::min<size_t>(100, report.loss_history.size());
    double first = 0.0, last = 0.0;
    for (size_t i = 0; i < window; ++i) {
        first += report.loss_history[i];
        last += report.loss_history[report.loss_history.size() - 1 - i];
    }
    report.initial_loss = first / window;
    report.final_loss = last / window;
    return {std::move(weights), report};
}

} // namespace prime
