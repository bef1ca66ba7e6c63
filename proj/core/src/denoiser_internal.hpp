#pragma once

// Shared primitives for the denoiser's inference and training paths.
// Feature maps are (hw x C) matrices, one row per spatial position in raster
// order, one column per channel.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "prime/denoiser.hpp"
#include "prime/errors.hpp"

namespace prime::detail {

using Mat = Eigen::MatrixXf;
using Vec = Eigen::VectorXf;

inline float silu_scalar(float x) { return x / (1.0f + std::exp(-x)); }

inline Mat silu(const Mat& x) {
    return x.unaryExpr([](float v) { return silu_scalar(v); });
}

inline Mat silu_backward(const Mat& x, const Mat& grad_out) {
    Mat g = x.unaryExpr([](float v) {
        const float s = 1.0f / (1.0f + std::exp(-v));
        return s * (1.0f + v * (1.0f - s));
    });
    return g.cwiseProduct(grad_out);
}

// cos-first sinusoidal embedding of the (float) timestep.
inline Vec sinusoidal_embedding(float t, int dim) {
    const int half = dim / 2;
    Vec out(dim);
    const float log_base = std::log(10000.0f) / static_cast<float>(half);
    for (int i = 0; i < half; ++i) {
        const float angle = t * std::exp(-static_cast<float>(i) * log_base);
        out(i) = std::cos(angle);
        out(i + half) = std::sin(angle);
    }
    return out;
}

// 3x3 same-padding im2col; stride 1 or 2. Output rows follow the strided
// output raster order, columns are (dy, dx, channel)-major patches.
inline Mat im2col3(const Mat& x, int H, int W, int stride) {
    const int C = static_cast<int>(x.cols());
    const int Ho = (H + stride - 1) / stride;
    const int Wo = (W + stride - 1) / stride;
    Mat out(Ho * Wo, 9 * C);
    out.setZero();
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            const int row = oy * Wo + ox;
            int col = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int sy = oy * stride + dy;
                    const int sx = ox * stride + dx;
                    if (sy >= 0 && sy < H && sx >= 0 && sx < W) {
                        out.block(row, col, 1, C) = x.row(sy * W + sx);
                    }
                    col += C;
                }
            }
        }
    }
    return out;
}

// Scatter-add transpose of im2col3: accumulates patch-column grads back onto
// input positions.
inline Mat col2im3(const Mat& cols, int H, int W, int C, int stride) {
    const int Ho = (H + stride - 1) / stride;
    const int Wo = (W + stride - 1) / stride;
    Mat out = Mat::Zero(H * W, C);
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            const int row = oy * Wo + ox;
            int col = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int sy = oy * stride + dy;
                    const int sx = ox * stride + dx;
                    if (sy >= 0 && sy < H && sx >= 0 && sx < W) {
                        out.row(sy * W + sx) += cols.block(row, col, 1, C);
                    }
                    col += C;
                }
            }
        }
    }
    return out;
}

inline Mat conv3(const Mat& x, int H, int W, const Mat& w, const Vec& b, int stride = 1) {
    Mat cols = im2col3(x, H, W, stride);
    Mat out = cols * w;
    out.rowwise() += b.transpose();
    return out;
}

struct GnStats {
    Vec mean;   // per group
    Vec invstd; // per group
    Mat xhat;   // normalized pre-affine values (kept for backward)
};

inline int gn_groups(int channels) {
    int g = channels >= 8 ? 8 : channels;
    while (channels % g != 0) --g;
    return g;
}

inline Mat group_norm(const Mat& x, const Vec& gamma, const Vec& beta, GnStats* stats = nullptr) {
    const int C = static_cast<int>(x.cols());
    const int G = gn_groups(C);
    const int cg = C / G;
    const auto n = static_cast<float>(x.rows() * cg);
    Mat out(x.rows(), C);
    Vec mean(G), invstd(G);
    Mat xhat;
    if (stats) xhat.resize(x.rows(), C);
    for (int g = 0; g < G; ++g) {
        auto blk = x.middleCols(g * cg, cg);
        const float mu = blk.mean();
        const float var = (blk.array() - mu).square().sum() / n;
        const float is = 1.0f / std::sqrt(var + 1e-5f);
        mean(g) = mu;
        invstd(g) = is;
        for (int c = 0; c < cg; ++c) {
            const int ch = g * cg + c;
            auto norm = (x.col(ch).array() - mu) * is;
            if (stats) xhat.col(ch) = norm.matrix();
            out.col(ch) = (norm * gamma(ch) + beta(ch)).matrix();
        }
    }
    if (stats) {
        stats->mean = std::move(mean);
        stats->invstd = std::move(invstd);
        stats->xhat = std::move(xhat);
    }
    return out;
}

inline Mat group_norm_backward(const Mat& grad_out, const GnStats& stats, const Vec& gamma,
                               Vec& grad_gamma, Vec& grad_beta) {
    const int C = static_cast<int>(grad_out.cols());
    const int G = gn_groups(C);
    const int cg = C / G;
    const auto n = static_cast<float>(grad_out.rows() * cg);
    grad_gamma.resize(C);
    grad_beta.resize(C);
    Mat grad_in(grad_out.rows(), C);
    for (int c = 0; c < C; ++c) {
        grad_gamma(c) = (grad_out.col(c).array() * stats.xhat.col(c).array()).sum();
        grad_beta(c) = grad_out.col(c).sum();
    }
    for (int g = 0; g < G; ++g) {
        // d xhat for the whole group, then the standard groupnorm input grad.
        Mat dxhat(grad_out.rows(), cg);
        for (int c = 0; c < cg; ++c) {
            const int ch = g * cg + c;
            dxhat.col(c) = grad_out.col(ch) * gamma(ch);
        }
        auto xhat_g = stats.xhat.middleCols(g * cg, cg);
        const float sum_dxhat = dxhat.sum();
        const float sum_dxhat_xhat = (dxhat.array() * xhat_g.array()).sum();
        for (int c = 0; c < cg; ++c) {
            const int ch = g * cg + c;
            grad_in.col(ch) =
                (stats.invstd(g) / n) *
                (n * dxhat.col(c).array() - sum_dxhat - xhat_g.col(c).array() * sum_dxhat_xhat)
                    .matrix();
        }
    }
    return grad_in;
}

inline void softmax_rows(Mat& m) {
    const Vec mx = m.rowwise().maxCoeff();
    m = ((m.colwise() - mx).array().exp()).matrix();
    const Vec sum = m.rowwise().sum();
    m.array().colwise() /= sum.array();
}

// grad of softmax given post-softmax values p and upstream grad g:
// dlogits = p .* (g - rowdot(g, p))
inline Mat softmax_backward_rows(const Mat& p, const Mat& g) {
    Mat out(p.rows(), p.cols());
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const float dot = p.row(r).dot(g.row(r));
        out.row(r) = (p.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
    return out;
}

inline Mat upsample_nearest2(const Mat& x, int H, int W) {
    const int C = static_cast<int>(x.cols());
    Mat out(H * 2 * W * 2, C);
    for (int y = 0; y < H * 2; ++y) {
        for (int xx = 0; xx < W * 2; ++xx) {
            out.row(y * W * 2 + xx) = x.row((y / 2) * W + (xx / 2));
        }
    }
    return out;
}

inline Mat upsample_nearest2_backward(const Mat& grad_out, int H, int W) {
    const int C = static_cast<int>(grad_out.cols());
    Mat out = Mat::Zero(H * W, C);
    for (int y = 0; y < H * 2; ++y) {
        for (int xx = 0; xx < W * 2; ++xx) {
            out.row((y / 2) * W + (xx / 2)) += grad_out.row(y * W * 2 + xx);
        }
    }
    return out;
}

// latent (CHW) <-> feature matrix (hw x C)
inline Mat latent_to_mat(const LatentImage& z) {
    Mat m(z.height * z.width, z.channels);
    for (int c = 0; c < z.channels; ++c)
        for (int y = 0; y < z.height; ++y)
            for (int x = 0; x < z.width; ++x) m(y * z.width + x, c) = z.at(c, y, x);
    return m;
}

inline LatentImage mat_to_latent(const Mat& m, int H, int W) {
    LatentImage z(static_cast<int>(m.cols()), H, W);
    for (int c = 0; c < z.channels; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) z.at(c, y, x) = m(y * W + x, c);
    return z;
}

// Block naming shared by init, forward, and training.
inline std::string block_prefix(LayerId::Half half, int level) {
    switch (half) {
        case LayerId::Half::encoder: return "enc" + std::to_string(level);
        case LayerId::Half::middle:  return "mid";
        case LayerId::Half::decoder: return "dec" + std::to_string(level);
    }
    return "?";
}

const WTensor& weight(const WeightSet& w, const std::string& name);

} // namespace prime::detail
