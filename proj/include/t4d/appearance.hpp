#pragma once

// Time-varying spherical-harmonics colour. Each SH coefficient k_l^m is a
// truncated cosine series in the frame index; colour is the SH expansion
// evaluated along the viewing direction, shifted by 0.5 and clamped.

#include <Eigen/Core>

#include <array>
#include <span>
#include <vector>

namespace t4d {

inline constexpr int kMaxRenderShDegree = 3;

inline constexpr int sh_index(int l, int m) { return l * l + l + m; }
inline constexpr int sh_count(int l_max) { return (l_max + 1) * (l_max + 1); }

// Fourier weights for every (channel, l, m) slot. Layout: [channel][lm][i].
class SH4DCoeffs {
public:
    static constexpr int kChannels = 3;

    SH4DCoeffs() = default;
    SH4DCoeffs(int l_max, int terms, int n_frames);

    // Static colour: only the DC band, only the i = 0 weight.
    static SH4DCoeffs from_rgb(const Eigen::Vector3d& rgb, int l_max, int terms, int n_frames);

    int l_max() const { return l_max_; }
    int terms() const { return terms_; }
    int n_frames() const { return n_frames_; }
    std::size_t size() const { return weights_.size(); }

    double& at(int channel, int lm, int i) { return weights_[offset(channel, lm) + i]; }
    double at(int channel, int lm, int i) const { return weights_[offset(channel, lm) + i]; }

    std::span<const double> fourier(int channel, int lm) const {
        return {weights_.data() + offset(channel, lm), static_cast<std::size_t>(terms_)};
    }

    std::span<double> weights() { return weights_; }
    std::span<const double> weights() const { return weights_; }

private:
    std::size_t offset(int channel, int lm) const {
        return (static_cast<std::size_t>(channel) * sh_count(l_max_) + lm) * terms_;
    }

    int l_max_ = 0;
    int terms_ = 1;
    int n_frames_ = 1;
    std::vector<double> weights_;
};

// Real SH with orthonormal normalisation, evaluated through associated
// Legendre polynomials (no Condon-Shortley phase). psi is azimuth, gamma is
// the polar angle from +z. Any l >= 0.
double sh_basis(int l, int m, double psi, double gamma);

// Cartesian closed forms for l <= 3 on a unit direction, with the gradient of
// each basis function w.r.t. the direction. Must agree with sh_basis.
struct ShCartesian {
    std::array<double, 16> value{};
    std::array<Eigen::Vector3d, 16> grad{};
};
ShCartesian sh_basis_cartesian(int l_max, const Eigen::Vector3d& dir);

Eigen::Vector3d direction_from_angles(double psi, double gamma);
// Returns (psi in [0, 2pi), gamma in [0, pi]).
std::pair<double, double> angles_from_direction(const Eigen::Vector3d& dir);

double fourier_coeff(std::span<const double> weights, double t, int n_frames);

// Pre-clamp SH expansion, per channel.
Eigen::Vector3d eval_color_4d_raw(const SH4DCoeffs& coeffs, double psi, double gamma, double t);
// clamp(0.5 + raw, 0, 1).
Eigen::Vector3d eval_color_4d(const SH4DCoeffs& coeffs, double psi, double gamma, double t);

// Rendering path: colour of a Gaussian seen along `view` (unnormalised
// centre-minus-camera vector), with what the backward pass needs.
struct ColorEval {
    Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
    Eigen::Vector3d raw = Eigen::Vector3d::Zero();
    Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();
    double view_norm = 1.0;
    double t = 0.0;
    ShCartesian basis;
};
ColorEval eval_color_view(const SH4DCoeffs& coeffs, const Eigen::Vector3d& view, double t);

// Backpropagates d(loss)/d(rgb). Weight gradients are accumulated into
// `grad_weights` (same layout as coeffs.weights()); the gradient w.r.t. the
// unnormalised view vector is returned. Clamped channels pass no gradient.
Eigen::Vector3d eval_color_view_backward(const SH4DCoeffs& coeffs, const ColorEval& eval,
                                         const Eigen::Vector3d& grad_rgb,
                                         std::span<double> grad_weights);

} // namespace t4d
