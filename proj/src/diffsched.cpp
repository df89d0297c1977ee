#include "t4d/diffsched.hpp"

#include "t4d/rng.hpp"

#include <cmath>
#include <ostream>
#include <string>

namespace t4d {

void NoiseSchedule::check_t(int t) const {
    if (t < 0 || t > T) throw InvalidRange("timestep " + std::to_string(t) + " outside [0, T]");
}

NoiseSchedule build_schedule(int T, double beta_min, double beta_max, double beta_cond_max) {
    if (T < 1) throw InvalidRange("schedule needs T >= 1");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
        throw InvalidRange("schedule needs 0 < beta_min <= beta_max < 1");
    if (!(beta_cond_max >= 0.0)) throw InvalidRange("beta_cond_max must be >= 0");
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(T + 1, 0.0);
    s.alpha_bar.assign(T + 1, 1.0);
    s.alpha.assign(T + 1, 1.0);
    s.sigma.assign(T + 1, 0.0);
    s.beta_cond.assign(T + 1, 0.0);
    for (int t = 1; t <= T; ++t) {
        s.beta[t] = T == 1 ? beta_min : beta_min + (beta_max - beta_min) * (t - 1) / (T - 1);
        s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
        s.alpha[t] = std::sqrt(s.alpha_bar[t]);
        s.sigma[t] = std::sqrt(1.0 - s.alpha_bar[t]);
        s.beta_cond[t] = beta_cond_max * t / T;
    }
    return s;
}

void write_schedule_csv(const NoiseSchedule& s, std::ostream& out) {
    out << "t,beta_ddpm,alpha_bar,alpha,sigma,beta_cond\n";
    out.precision(17);
    for (int t = 0; t <= s.T; ++t)
        out << t << ',' << s.beta[t] << ',' << s.alpha_bar[t] << ',' << s.alpha[t] << ','
            << s.sigma[t] << ',' << s.beta_cond[t] << '\n';
}

// ------------------------------------------------------------ LatentVideo

LatentVideo::LatentVideo(int views, int frames, int channels, int height, int width, double fill)
    : n_(views), f_(frames), c_(channels), h_(height), w_(width) {
    if (views < 0 || frames < 0 || channels < 0 || height < 0 || width < 0)
        throw InvalidArgument("LatentVideo: negative dimension");
    data_.assign(static_cast<std::size_t>(views) * frames * channels * height * width, fill);
}

LatentVideo LatentVideo::frames_slice(int first, int last) const {
    if (first < 0 || last > f_ || first > last) throw InvalidArgument("frames_slice: bad range");
    LatentVideo out(n_, last - first, c_, h_, w_);
    const std::size_t per_frame = static_cast<std::size_t>(c_) * h_ * w_;
    for (int i = 0; i < n_; ++i)
        for (int j = first; j < last; ++j)
            std::copy_n(data_.begin() + index(i, j, 0, 0, 0), per_frame,
                        out.data_.begin() + out.index(i, j - first, 0, 0, 0));
    return out;
}

LatentVideo LatentVideo::randn(int views, int frames, int channels, int height, int width,
                               std::uint64_t seed) {
    LatentVideo z(views, frames, channels, height, width);
    Rng rng(seed);
    for (double& v : z.data_) v = rng.normal();
    return z;
}

// ---------------------------------------------------------------- oracles

CheatingDenoiser CheatingDenoiser::from_noise(LatentVideo eps) {
    CheatingDenoiser d;
    d.stored_ = std::move(eps);
    return d;
}

CheatingDenoiser CheatingDenoiser::from_clean(LatentVideo z0, const NoiseSchedule& schedule) {
    CheatingDenoiser d;
    d.stored_ = std::move(z0);
    d.clean_ = true;
    d.schedule_ = &schedule;
    return d;
}

LatentVideo CheatingDenoiser::predict(const LatentVideo&, const LatentVideo& z_t, int t,
                                      const Conditioning&) const {
    if (!stored_.same_shape(z_t)) throw ShapeMismatch("CheatingDenoiser: stored tensor shape");
    if (!clean_) return stored_;
    schedule_->check_t(t);
    LatentVideo eps(z_t.views(), z_t.frames(), z_t.channels(), z_t.height(), z_t.width());
    const double a = schedule_->alpha[t], s = schedule_->sigma[t];
    // At t = 0 there is no noise to explain; any prediction gives back z_t.
    if (s > 0.0) eps.flat() = (z_t.flat() - a * stored_.flat()) / s;
    return eps;
}

LatentVideo ZeroDenoiser::predict(const LatentVideo&, const LatentVideo& z_t, int,
                                  const Conditioning&) const {
    return LatentVideo(z_t.views(), z_t.frames(), z_t.channels(), z_t.height(), z_t.width());
}

LinearDenoiser::LinearDenoiser(int channels, std::uint64_t seed) {
    if (channels < 1) throw InvalidArgument("LinearDenoiser: channels must be >= 1");
    Rng rng(seed);
    w_.resize(channels, channels);
    b_.resize(channels);
    const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
    for (int r = 0; r < channels; ++r) {
        for (int c = 0; c < channels; ++c) w_(r, c) = scale * rng.normal();
        b_[r] = 0.1 * rng.normal();
    }
}

LatentVideo LinearDenoiser::predict(const LatentVideo&, const LatentVideo& z_t, int,
                                    const Conditioning&) const {
    if (z_t.channels() != w_.rows()) throw ShapeMismatch("LinearDenoiser: channel count");
    LatentVideo out(z_t.views(), z_t.frames(), z_t.channels(), z_t.height(), z_t.width());
    VecX px(z_t.channels());
    for (int i = 0; i < z_t.views(); ++i)
        for (int j = 0; j < z_t.frames(); ++j)
            for (int r = 0; r < z_t.height(); ++r)
                for (int x = 0; x < z_t.width(); ++x) {
                    for (int c = 0; c < z_t.channels(); ++c) px[c] = z_t.at(i, j, c, r, x);
                    const VecX e = w_ * px + b_;
                    for (int c = 0; c < z_t.channels(); ++c) out.at(i, j, c, r, x) = e[c];
                }
    return out;
}

// ------------------------------------------------------------- operations

namespace {

void require_same(const LatentVideo& a, const LatentVideo& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeMismatch(std::string(what) + ": tensor shapes differ");
}

} // namespace

LatentVideo forward_diffuse(const NoiseSchedule& s, const LatentVideo& z0, int t,
                            const LatentVideo& eps) {
    require_same(z0, eps, "forward_diffuse");
    s.check_t(t);
    LatentVideo out = z0;
    out.flat() = s.alpha[t] * z0.flat() + s.sigma[t] * eps.flat();
    return out;
}

LatentVideo condition_noise(const NoiseSchedule& s, const LatentVideo& z0_first, int t,
                            const LatentVideo& eps) {
    require_same(z0_first, eps, "condition_noise");
    s.check_t(t);
    LatentVideo out = z0_first;
    out.flat() += s.beta_cond[t] * eps.flat();
    return out;
}

double diffusion_loss(const LatentVideo& eps, const LatentVideo& eps_pred) {
    require_same(eps, eps_pred, "diffusion_loss");
    if (eps.size() == 0) return 0.0;
    return (eps.flat() - eps_pred.flat()).squaredNorm() / static_cast<double>(eps.size());
}

LatentVideo z0_estimate(const NoiseSchedule& s, const LatentVideo& z_t, const LatentVideo& eps_pred,
                        int t) {
    require_same(z_t, eps_pred, "z0_estimate");
    s.check_t(t);
    if (!(s.alpha[t] > 1e-8)) throw DegenerateSignal("alpha_t too small to invert");
    LatentVideo out = z_t;
    out.flat() = (z_t.flat() - s.sigma[t] * eps_pred.flat()) / s.alpha[t];
    return out;
}

double sds_loss(const LatentVideo& z, const LatentVideo& z0_hat) {
    require_same(z, z0_hat, "sds_loss");
    if (z.size() == 0) return 0.0;
    return (z.flat() - z0_hat.flat()).squaredNorm() / static_cast<double>(z.size());
}

LatentVideo sds_loss_grad(const LatentVideo& z, const LatentVideo& z0_hat) {
    require_same(z, z0_hat, "sds_loss_grad");
    LatentVideo g = z;
    if (z.size()) g.flat() = (2.0 / static_cast<double>(z.size())) * (z.flat() - z0_hat.flat());
    return g;
}

} // namespace t4d
