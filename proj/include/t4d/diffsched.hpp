#pragma once

// Diffusion-schedule maths around an opaque noise predictor.
//
// Timesteps run 0..T with t = 0 the clean state (beta_0 = 0, alpha_bar_0 = 1).
// alpha_t = sqrt(alpha_bar_t) scales the signal and sigma_t =
// sqrt(1 - alpha_bar_t) the noise, for both the noising and the clean-latent
// estimate.

#include "t4d/core.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <vector>

namespace t4d {

struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;      // DDPM variance increment, index 0..T
    std::vector<double> alpha_bar; // cumulative product of (1 - beta)
    std::vector<double> alpha;     // sqrt(alpha_bar)
    std::vector<double> sigma;     // sqrt(1 - alpha_bar)
    std::vector<double> beta_cond; // first-frame noise scale

    void check_t(int t) const;
};

// Linear betas from beta_min (t = 1) to beta_max (t = T); beta_cond linear
// from 0 to beta_cond_max. Throws InvalidRange.
NoiseSchedule build_schedule(int T = 1000, double beta_min = 1e-4, double beta_max = 0.02,
                             double beta_cond_max = 0.1);

// CSV columns t, beta_ddpm, alpha_bar, alpha, sigma, beta_cond.
void write_schedule_csv(const NoiseSchedule& s, std::ostream& out);

// Dense [view][frame][channel][row][col] tensor.
class LatentVideo {
public:
    LatentVideo() = default;
    LatentVideo(int views, int frames, int channels, int height, int width, double fill = 0.0);

    std::array<int, 5> shape() const { return {n_, f_, c_, h_, w_}; }
    int views() const { return n_; }
    int frames() const { return f_; }
    int channels() const { return c_; }
    int height() const { return h_; }
    int width() const { return w_; }
    std::size_t size() const { return data_.size(); }

    double& at(int i, int j, int c, int r, int x) { return data_[index(i, j, c, r, x)]; }
    double at(int i, int j, int c, int r, int x) const { return data_[index(i, j, c, r, x)]; }

    Eigen::Map<VecX> flat() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
    Eigen::Map<const VecX> flat() const {
        return {data_.data(), static_cast<Eigen::Index>(data_.size())};
    }

    bool same_shape(const LatentVideo& o) const { return shape() == o.shape(); }

    // Frames [first, last) of every view.
    LatentVideo frames_slice(int first, int last) const;

    static LatentVideo randn(int views, int frames, int channels, int height, int width,
                             std::uint64_t seed);

private:
    std::size_t index(int i, int j, int c, int r, int x) const {
        return ((((static_cast<std::size_t>(i) * f_ + j) * c_ + c) * h_ + r) * w_) + x;
    }

    int n_ = 0, f_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<double> data_;
};

struct Conditioning {
    VecX text_embedding;
    std::vector<Camera> cameras;
};

// Noise predictor interface. Implementations must be deterministic and safe
// for concurrent const calls.
class DenoiserOracle {
public:
    virtual ~DenoiserOracle() = default;
    // Returns a prediction with the shape of z_t.
    virtual LatentVideo predict(const LatentVideo& z_cond, const LatentVideo& z_t, int t,
                                const Conditioning& y) const = 0;
};

// Returns a stored answer. In noise mode the stored tensor is the true noise;
// in clean mode it is the clean latent z0 and the prediction is the noise
// that makes z0_estimate return z0 exactly.
class CheatingDenoiser final : public DenoiserOracle {
public:
    static CheatingDenoiser from_noise(LatentVideo eps);
    static CheatingDenoiser from_clean(LatentVideo z0, const NoiseSchedule& schedule);

    LatentVideo predict(const LatentVideo& z_cond, const LatentVideo& z_t, int t,
                        const Conditioning& y) const override;

private:
    CheatingDenoiser() = default;
    LatentVideo stored_;
    bool clean_ = false;
    const NoiseSchedule* schedule_ = nullptr;
};

class ZeroDenoiser final : public DenoiserOracle {
public:
    LatentVideo predict(const LatentVideo& z_cond, const LatentVideo& z_t, int t,
                        const Conditioning& y) const override;
};

// Per-pixel channel mixing eps[c] = sum_c' W[c][c'] z_t[c'] + b[c] with
// fixed random weights.
class LinearDenoiser final : public DenoiserOracle {
public:
    LinearDenoiser(int channels, std::uint64_t seed);

    LatentVideo predict(const LatentVideo& z_cond, const LatentVideo& z_t, int t,
                        const Conditioning& y) const override;

    const Eigen::MatrixXd& weights() const { return w_; }
    const VecX& bias() const { return b_; }

private:
    Eigen::MatrixXd w_;
    VecX b_;
};

// sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps.
LatentVideo forward_diffuse(const NoiseSchedule& s, const LatentVideo& z0, int t,
                            const LatentVideo& eps);
// z0 + beta_cond_t eps'.
LatentVideo condition_noise(const NoiseSchedule& s, const LatentVideo& z0_first, int t,
                            const LatentVideo& eps);
// Mean squared error over all elements.
double diffusion_loss(const LatentVideo& eps, const LatentVideo& eps_pred);
// (z_t - sigma_t eps_pred) / alpha_t. Throws DegenerateSignal when alpha_t <= 1e-8.
LatentVideo z0_estimate(const NoiseSchedule& s, const LatentVideo& z_t, const LatentVideo& eps_pred,
                        int t);
// Mean squared error between a rendered latent and the clean estimate.
double sds_loss(const LatentVideo& z, const LatentVideo& z0_hat);
// d(sds_loss)/dz with z0_hat held constant.
LatentVideo sds_loss_grad(const LatentVideo& z, const LatentVideo& z0_hat);

} // namespace t4d
