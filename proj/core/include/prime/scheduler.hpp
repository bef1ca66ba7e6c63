#pragma once

#include <vector>

#include "prime/types.hpp"

namespace prime {

// Linear-beta noise schedule over T discrete levels plus the solver grid.
// alpha_bar(0) == 1 by convention; alpha_bar is strictly decreasing in t.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;      // size T; betas[i] is beta at level i+1
    std::vector<double> alphas;     // 1 - beta
    std::vector<double> alpha_bars; // size T+1, indexed by level, alpha_bars[0] = 1
    std::vector<int> timesteps;     // solver grid, strictly decreasing T..0, size steps+1

    double alpha_bar(int t) const;
    double signal(int t) const;  // sqrt(alpha_bar)
    double sigma(int t) const;   // sqrt(1 - alpha_bar)
    double log_snr(int t) const; // log(signal/sigma); +inf at t = 0
    int num_solver_steps() const { return static_cast<int>(timesteps.size()) - 1; }
};

NoiseSchedule build_schedule(int T, double beta_min, double beta_max, int num_solver_steps);

// Closed-form forward noising: sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
LatentImage add_noise(const LatentImage& x0, int t, const LatentImage& eps, const NoiseSchedule& sched);

// Ancestral reverse-step mean for a given eps; reference oracle only, the
// pipeline samples with the deterministic solver below.
LatentImage ddpm_posterior_mean(const LatentImage& z, int t, const LatentImage& eps,
                                const NoiseSchedule& sched);

enum class SolverDirection { denoise, invert };

// Deterministic second-order multistep solver state (data-prediction variant).
// Inversion runs the identical recurrence on the reversed grid. One state per
// trajectory; internal arithmetic is double precision.
class SolverState {
public:
    SolverState(const NoiseSchedule& sched, SolverDirection direction, const LatentImage& start);

    const std::vector<int>& grid() const { return grid_; }
    SolverDirection direction() const { return direction_; }
    int step_index() const { return index_; }
    int current_level() const { return grid_[index_]; }
    bool done() const { return index_ + 1 >= static_cast<int>(grid_.size()); }

    LatentImage current() const;              // float snapshot tagged with the level
    void set_current(const LatentImage& z);   // e.g. after a masked combine

    // Fresh state over the same schedule in the given direction, seeded with
    // this state's full-precision latent (inversion -> sampling handoff).
    SolverState continue_as(SolverDirection direction) const;

    // Consumes the model's eps prediction at the current level and advances one
    // grid step. First step (and steps touching the clean boundary) use the
    // first-order rule; otherwise the second-order multistep rule in log-SNR time.
    void step(const LatentImage& model_eps);

private:
    const NoiseSchedule* sched_;
    SolverDirection direction_;
    std::vector<int> grid_;
    int index_ = 0;
    int channels_, height_, width_;
    std::vector<double> z_;
    std::vector<double> prev_x0_;
    bool has_prev_ = false;
    double prev_h_ = 0.0;
};

} // namespace prime
