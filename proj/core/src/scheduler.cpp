#include "prime/scheduler.hpp"

#include <cmath>
#include <limits>

namespace prime {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > T) throw domain_error("timestep " + std::to_string(t) + " outside [0, T]");
    return alpha_bars[t];
}

double NoiseSchedule::signal(int t) const { return std::sqrt(alpha_bar(t)); }

double NoiseSchedule::sigma(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

double NoiseSchedule::log_snr(int t) const {
    const double s = sigma(t);
    if (s == 0.0) return kInf;
    return std::log(signal(t) / s);
}

NoiseSchedule build_schedule(int T, double beta_min, double beta_max, int num_solver_steps) {
    if (T < 1) throw config_error("schedule requires T >= 1");
    if (!(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0))
        throw config_error("schedule requires 0 < beta_min <= beta_max < 1");
    if (num_solver_steps < 2) throw config_error("schedule requires num_solver_steps >= 2");
    if (num_solver_steps > T) throw config_error("num_solver_steps cannot exceed T");

    NoiseSchedule s;
    s.T = T;
    s.betas.resize(T);
    s.alphas.resize(T);
    s.alpha_bars.resize(T + 1);
    s.alpha_bars[0] = 1.0;
    for (int i = 0; i < T; ++i) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
        s.betas[i] = beta_min + frac * (beta_max - beta_min);
        s.alphas[i] = 1.0 - s.betas[i];
        s.alpha_bars[i + 1] = s.alpha_bars[i] * s.alphas[i];
    }

    // Strictly decreasing selection of levels from T to 0, linear in level so
    // halved step counts give nested grids.
    s.timesteps.resize(num_solver_steps + 1);
    for (int i = 0; i <= num_solver_steps; ++i) {
        s.timesteps[i] = static_cast<int>(std::lround(
            static_cast<double>(T) * (1.0 - static_cast<double>(i) / num_solver_steps)));
    }
    for (int i = 0; i < num_solver_steps; ++i) {
        if (s.timesteps[i] <= s.timesteps[i + 1])
            throw config_error("solver grid is not strictly decreasing; reduce num_solver_steps");
    }
    return s;
}

LatentImage add_noise(const LatentImage& x0, int t, const LatentImage& eps, const NoiseSchedule& sched) {
    if (t < 0 || t > sched.T) throw domain_error("add_noise: t outside [0, T]");
    if (!x0.same_shape(eps)) throw dimension_error("add_noise: eps shape does not match x0");
    const double a = sched.signal(t);
    const double s = sched.sigma(t);
    LatentImage out = x0;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = static_cast<float>(a * static_cast<double>(x0.data[i]) +
                                         s * static_cast<double>(eps.data[i]));
    }
    out.timestep_tag = t;
    return out;
}

LatentImage ddpm_posterior_mean(const LatentImage& z, int t, const LatentImage& eps,
                                const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) throw domain_error("ddpm_posterior_mean: t outside [1, T]");
    if (!z.same_shape(eps)) throw dimension_error("ddpm_posterior_mean: shape mismatch");
    const double beta = sched.betas[t - 1];
    const double alpha = sched.alphas[t - 1];
    const double sig = sched.sigma(t);
    LatentImage out = z;
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    const double coeff = beta / sig;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = static_cast<float>(inv_sqrt_alpha *
                                         (static_cast<double>(z.data[i]) - coeff * static_cast<double>(eps.data[i])));
    }
    out.timestep_tag = t - 1;
    return out;
}

SolverState::SolverState(const NoiseSchedule& sched, SolverDirection direction, const LatentImage& start)
    : sched_(&sched),
      direction_(direction),
      grid_(sched.timesteps),
      channels_(start.channels),
      height_(start.height),
      width_(start.width) {
    if (direction == SolverDirection::invert) {
        grid_.assign(sched.timesteps.rbegin(), sched.timesteps.rend());
    }
    z_.resize(start.data.size());
    for (size_t i = 0; i < z_.size(); ++i) z_[i] = static_cast<double>(start.data[i]);
}

LatentImage SolverState::current() const {
    LatentImage out(channels_, height_, width_);
    for (size_t i = 0; i < z_.size(); ++i) out.data[i] = static_cast<float>(z_[i]);
    out.timestep_tag = current_level();
    return out;
}

void SolverState::set_current(const LatentImage& z) {
    if (z.channels != channels_ || z.height != height_ || z.width != width_)
        throw dimension_error("set_current: latent shape does not match solver state");
    for (size_t i = 0; i < z_.size(); ++i) z_[i] = static_cast<double>(z.data[i]);
}

void SolverState::step(const LatentImage& model_eps) {
    if (done()) throw sequencing_error("solver grid exhausted");
    if (model_eps.channels != channels_ || model_eps.height != height_ || model_eps.width != width_)
        throw dimension_error("solver step: eps shape does not match state");

    const int t = grid_[index_];
    const int tn = grid_[index_ + 1];
    const double a_t = sched_->signal(t), s_t = sched_->sigma(t);
    const double a_n = sched_->signal(tn), s_n = sched_->sigma(tn);
    const double h = sched_->log_snr(tn) - sched_->log_snr(t); // +-inf at the clean boundary

    const size_t size = z_.size();
    std::vector<double> x0(size);
    if (s_t == 0.0) {
        x0 = z_;
    } else {
        for (size_t i = 0; i < size; ++i) x0[i] = (z_[i] - s_t * static_cast<double>(model_eps.data[i])) / a_t;
    }

    if (s_n == 0.0) {
        // First-order final step; the sigma -> 0 limit of the update is x0.
        z_ = x0;
    } else if (!has_prev_ || !std::isfinite(prev_h_) || !std::isfinite(h)) {
        for (size_t i = 0; i < size; ++i)
            z_[i] = a_n * x0[i] + s_n * static_cast<double>(model_eps.data[i]);
    } else {
        const double c = h / (2.0 * prev_h_);
        const double ratio = s_n / s_t;
        const double gain = a_n * (1.0 - std::exp(-h));
        for (size_t i = 0; i < size; ++i) {
            const double d = (1.0 + c) * x0[i] - c * prev_x0_[i];
            z_[i] = ratio * z_[i] + gain * d;
        }
    }

    prev_x0_ = std::move(x0);
    has_prev_ = true;
    prev_h_ = h;
    ++index_;
}

} // namespace prime
