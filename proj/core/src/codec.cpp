#include "prime/codec.hpp"

#include <Eigen/Dense>

#include "prime/detail/rng.hpp"

namespace prime {

namespace {

// Seeded random matrix orthonormalized by (stable) Gram-Schmidt in double.
Eigen::MatrixXd channel_rotation(int dim, uint64_t seed) {
    auto rng = detail::seeded_rng(seed, "codec.rotation");
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::MatrixXd m(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) m(i, j) = dist(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    Eigen::MatrixXd q = qr.householderQ();
    // Fix column signs so the rotation is a deterministic function of the seed
    // rather than of QR internals.
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < dim; ++j) {
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    }
    return q;
}

void check_identity_dims(const CodecConfig& cfg) {
    if (cfg.kind == CodecKind::orthonormal_patchify && cfg.patch_factor < 1)
        throw config_error("patchify codec requires patch_factor >= 1");
}

} // namespace

LatentImage encode(const PixelImage& img, const CodecConfig& cfg) {
    check_identity_dims(cfg);
    if (img.channels != 3) throw dimension_error("encode expects a 3-channel image");
    if (cfg.kind == CodecKind::identity) {
        LatentImage z(3, img.height, img.width);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x)
                    z.at(c, y, x) = static_cast<float>(2.0 * static_cast<double>(img.at(x, y, c)) - 1.0);
        z.timestep_tag = 0;
        return z;
    }

    const int f = cfg.patch_factor;
    if (img.height % f != 0 || img.width % f != 0)
        throw dimension_error("image dims not divisible by patch_factor " + std::to_string(f));
    const int ch = 3 * f * f;
    const int lh = img.height / f;
    const int lw = img.width / f;
    const Eigen::MatrixXd rot = channel_rotation(ch, cfg.rotation_seed);

    LatentImage z(ch, lh, lw);
    Eigen::VectorXd v(ch);
    for (int y = 0; y < lh; ++y) {
        for (int x = 0; x < lw; ++x) {
            int k = 0;
            for (int dy = 0; dy < f; ++dy)
                for (int dx = 0; dx < f; ++dx)
                    for (int c = 0; c < 3; ++c)
                        v(k++) = 2.0 * static_cast<double>(img.at(x * f + dx, y * f + dy, c)) - 1.0;
            Eigen::VectorXd w = rot * v;
            for (int c = 0; c < ch; ++c) z.at(c, y, x) = static_cast<float>(w(c));
        }
    }
    z.timestep_tag = 0;
    return z;
}

PixelImage decode(const LatentImage& z, const CodecConfig& cfg) {
    check_identity_dims(cfg);
    if (z.channels != cfg.channel_out())
        throw dimension_error("decode: latent channel count " + std::to_string(z.channels) +
                              " does not match codec channel_out " + std::to_string(cfg.channel_out()));
    if (cfg.kind == CodecKind::identity) {
        PixelImage img(z.width, z.height, 3);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < z.height; ++y)
                for (int x = 0; x < z.width; ++x)
                    img.at(x, y, c) = static_cast<float>((static_cast<double>(z.at(c, y, x)) + 1.0) / 2.0);
        return img;
    }

    const int f = cfg.patch_factor;
    const int ch = z.channels;
    const Eigen::MatrixXd rot = channel_rotation(ch, cfg.rotation_seed);
    PixelImage img(z.width * f, z.height * f, 3);
    Eigen::VectorXd w(ch);
    for (int y = 0; y < z.height; ++y) {
        for (int x = 0; x < z.width; ++x) {
            for (int c = 0; c < ch; ++c) w(c) = static_cast<double>(z.at(c, y, x));
            Eigen::VectorXd v = rot.transpose() * w; // inverse of an orthonormal rotation
            int k = 0;
            for (int dy = 0; dy < f; ++dy)
                for (int dx = 0; dx < f; ++dx)
                    for (int c = 0; c < 3; ++c)
                        img.at(x * f + dx, y * f + dy, c) = static_cast<float>((v(k++) + 1.0) / 2.0);
        }
    }
    return img;
}

} // namespace prime
