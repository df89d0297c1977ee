#include "t4d/appearance.hpp"

#include "t4d/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace t4d {

namespace {

constexpr double kPi = std::numbers::pi;

double factorial_ratio(int l, int m) {
    // (l - m)! / (l + m)! for m >= 0
    double r = 1.0;
    for (int k = l - m + 1; k <= l + m; ++k) r /= k;
    return r;
}

// Associated Legendre P_l^m(x), m >= 0, without the (-1)^m phase.
double assoc_legendre(int l, int m, double x) {
    double pmm = 1.0;
    if (m > 0) {
        const double s = std::sqrt(std::max(0.0, (1.0 - x) * (1.0 + x)));
        double odd = 1.0;
        for (int k = 1; k <= m; ++k) {
            pmm *= odd * s;
            odd += 2.0;
        }
    }
    if (l == m) return pmm;
    double pmm1 = x * (2.0 * m + 1.0) * pmm;
    if (l == m + 1) return pmm1;
    double pll = 0.0;
    for (int ll = m + 2; ll <= l; ++ll) {
        pll = ((2.0 * ll - 1.0) * x * pmm1 - (ll + m - 1.0) * pmm) / (ll - m);
        pmm = pmm1;
        pmm1 = pll;
    }
    return pll;
}

} // namespace

SH4DCoeffs::SH4DCoeffs(int l_max, int terms, int n_frames)
    : l_max_(l_max), terms_(terms), n_frames_(n_frames) {
    if (l_max < 0 || terms < 1 || n_frames < 1)
        throw InvalidArgument("SH4DCoeffs: need l_max >= 0, terms >= 1, n_frames >= 1");
    weights_.assign(static_cast<std::size_t>(kChannels) * sh_count(l_max) * terms, 0.0);
}

SH4DCoeffs SH4DCoeffs::from_rgb(const Eigen::Vector3d& rgb, int l_max, int terms, int n_frames) {
    SH4DCoeffs c(l_max, terms, n_frames);
    const double y00 = 0.5 / std::sqrt(kPi);
    for (int ch = 0; ch < kChannels; ++ch) c.at(ch, 0, 0) = (rgb[ch] - 0.5) / y00;
    return c;
}

double sh_basis(int l, int m, double psi, double gamma) {
    if (l < 0 || m < -l || m > l)
        throw IndexOutOfRange("sh_basis: require l >= 0 and -l <= m <= l");
    const int am = std::abs(m);
    const double k = std::sqrt((2.0 * l + 1.0) / (4.0 * kPi) * factorial_ratio(l, am));
    const double p = assoc_legendre(l, am, std::cos(gamma));
    if (m == 0) return k * p;
    if (m > 0) return std::numbers::sqrt2 * k * std::cos(am * psi) * p;
    return std::numbers::sqrt2 * k * std::sin(am * psi) * p;
}

ShCartesian sh_basis_cartesian(int l_max, const Eigen::Vector3d& d) {
    if (l_max < 0 || l_max > kMaxRenderShDegree)
        throw IndexOutOfRange("sh_basis_cartesian supports 0 <= l_max <= 3");
    ShCartesian out;
    const double x = d.x(), y = d.y(), z = d.z();
    using V = Eigen::Vector3d;

    out.value[0] = 0.5 / std::sqrt(kPi);
    out.grad[0] = V::Zero();
    if (l_max < 1) return out;

    const double c1 = std::sqrt(3.0 / (4.0 * kPi));
    out.value[1] = c1 * y;  out.grad[1] = V(0, c1, 0);
    out.value[2] = c1 * z;  out.grad[2] = V(0, 0, c1);
    out.value[3] = c1 * x;  out.grad[3] = V(c1, 0, 0);
    if (l_max < 2) return out;

    const double c2a = 0.5 * std::sqrt(15.0 / kPi);
    const double c2b = 0.25 * std::sqrt(5.0 / kPi);
    const double c2c = 0.25 * std::sqrt(15.0 / kPi);
    out.value[4] = c2a * x * y;                 out.grad[4] = V(c2a * y, c2a * x, 0);
    out.value[5] = c2a * y * z;                 out.grad[5] = V(0, c2a * z, c2a * y);
    out.value[6] = c2b * (3.0 * z * z - 1.0);   out.grad[6] = V(0, 0, 6.0 * c2b * z);
    out.value[7] = c2a * x * z;                 out.grad[7] = V(c2a * z, 0, c2a * x);
    out.value[8] = c2c * (x * x - y * y);       out.grad[8] = V(2 * c2c * x, -2 * c2c * y, 0);
    if (l_max < 3) return out;

    const double c3a = 0.25 * std::sqrt(35.0 / (2.0 * kPi));
    const double c3b = 0.5 * std::sqrt(105.0 / kPi);
    const double c3c = 0.25 * std::sqrt(21.0 / (2.0 * kPi));
    const double c3d = 0.25 * std::sqrt(7.0 / kPi);
    const double c3e = 0.25 * std::sqrt(105.0 / kPi);
    out.value[9] = c3a * y * (3 * x * x - y * y);
    out.grad[9] = V(6 * c3a * x * y, c3a * (3 * x * x - 3 * y * y), 0);
    out.value[10] = c3b * x * y * z;
    out.grad[10] = V(c3b * y * z, c3b * x * z, c3b * x * y);
    out.value[11] = c3c * y * (5 * z * z - 1);
    out.grad[11] = V(0, c3c * (5 * z * z - 1), 10 * c3c * y * z);
    out.value[12] = c3d * z * (5 * z * z - 3);
    out.grad[12] = V(0, 0, c3d * (15 * z * z - 3));
    out.value[13] = c3c * x * (5 * z * z - 1);
    out.grad[13] = V(c3c * (5 * z * z - 1), 0, 10 * c3c * x * z);
    out.value[14] = c3e * z * (x * x - y * y);
    out.grad[14] = V(2 * c3e * x * z, -2 * c3e * y * z, c3e * (x * x - y * y));
    out.value[15] = c3a * x * (x * x - 3 * y * y);
    out.grad[15] = V(c3a * (3 * x * x - 3 * y * y), -6 * c3a * x * y, 0);
    return out;
}

Eigen::Vector3d direction_from_angles(double psi, double gamma) {
    return {std::sin(gamma) * std::cos(psi), std::sin(gamma) * std::sin(psi), std::cos(gamma)};
}

std::pair<double, double> angles_from_direction(const Eigen::Vector3d& dir) {
    const Eigen::Vector3d d = dir.normalized();
    double psi = std::atan2(d.y(), d.x());
    if (psi < 0.0) psi += 2.0 * kPi;
    const double gamma = std::acos(std::clamp(d.z(), -1.0, 1.0));
    return {psi, gamma};
}

double fourier_coeff(std::span<const double> weights, double t, int n_frames) {
    double k = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i)
        k += weights[i] * std::cos(static_cast<double>(i) * kPi / n_frames * t);
    return k;
}

Eigen::Vector3d eval_color_4d_raw(const SH4DCoeffs& coeffs, double psi, double gamma, double t) {
    Eigen::Vector3d raw = Eigen::Vector3d::Zero();
    for (int l = 0; l <= coeffs.l_max(); ++l) {
        for (int m = -l; m <= l; ++m) {
            const double y = sh_basis(l, m, psi, gamma);
            for (int ch = 0; ch < SH4DCoeffs::kChannels; ++ch)
                raw[ch] += fourier_coeff(coeffs.fourier(ch, sh_index(l, m)), t, coeffs.n_frames()) * y;
        }
    }
    return raw;
}

Eigen::Vector3d eval_color_4d(const SH4DCoeffs& coeffs, double psi, double gamma, double t) {
    const Eigen::Vector3d raw = eval_color_4d_raw(coeffs, psi, gamma, t);
    return (raw.array() + 0.5).cwiseMax(0.0).cwiseMin(1.0);
}

ColorEval eval_color_view(const SH4DCoeffs& coeffs, const Eigen::Vector3d& view, double t) {
    ColorEval e;
    e.view_norm = view.norm();
    e.dir = e.view_norm > 0.0 ? Eigen::Vector3d(view / e.view_norm) : Eigen::Vector3d::UnitZ();
    e.t = t;
    e.basis = sh_basis_cartesian(coeffs.l_max(), e.dir);
    const int n_sh = sh_count(coeffs.l_max());
    for (int ch = 0; ch < SH4DCoeffs::kChannels; ++ch) {
        double v = 0.0;
        for (int lm = 0; lm < n_sh; ++lm)
            v += fourier_coeff(coeffs.fourier(ch, lm), t, coeffs.n_frames()) * e.basis.value[lm];
        e.raw[ch] = v;
        e.rgb[ch] = std::clamp(0.5 + v, 0.0, 1.0);
    }
    return e;
}

Eigen::Vector3d eval_color_view_backward(const SH4DCoeffs& coeffs, const ColorEval& e,
                                         const Eigen::Vector3d& grad_rgb,
                                         std::span<double> grad_weights) {
    const int n_sh = sh_count(coeffs.l_max());
    const int w = coeffs.terms();
    std::array<double, 32> cosines{};
    std::vector<double> cos_storage;
    std::span<double> cs(cosines.data(), std::min<std::size_t>(w, cosines.size()));
    if (w > static_cast<int>(cosines.size())) {
        cos_storage.resize(w);
        cs = cos_storage;
    }
    for (int i = 0; i < w; ++i) cs[i] = std::cos(i * kPi / coeffs.n_frames() * e.t);

    Eigen::Vector3d grad_dir = Eigen::Vector3d::Zero();
    for (int ch = 0; ch < SH4DCoeffs::kChannels; ++ch) {
        const double v = 0.5 + e.raw[ch];
        if (!(v > 0.0 && v < 1.0)) continue;
        const double g = grad_rgb[ch];
        if (g == 0.0) continue;
        for (int lm = 0; lm < n_sh; ++lm) {
            const std::size_t base = (static_cast<std::size_t>(ch) * n_sh + lm) * w;
            double k = 0.0;
            for (int i = 0; i < w; ++i) {
                grad_weights[base + i] += g * e.basis.value[lm] * cs[i];
                k += coeffs.weights()[base + i] * cs[i];
            }
            grad_dir += g * k * e.basis.grad[lm];
        }
    }
    if (e.view_norm <= 0.0) return Eigen::Vector3d::Zero();
    return (grad_dir - e.dir * e.dir.dot(grad_dir)) / e.view_norm;
}

} // namespace t4d
