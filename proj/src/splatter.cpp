#include "t4d/splatter.hpp"

#include <algorithm>
#include <cmath>

namespace t4d {

void RenderScene::resize(std::size_t n, int ch) {
    channels = ch;
    positions.assign(n, Vec3::Zero());
    rotations.assign(n, quat_identity());
    scales.assign(n, Vec3::Constant(0.1));
    opacities.assign(n, 1.0);
    colors.assign(n * static_cast<std::size_t>(ch), 0.0);
}

void RenderScene::validate() const {
    const std::size_t n = positions.size();
    if (rotations.size() != n || scales.size() != n || opacities.size() != n ||
        colors.size() != n * static_cast<std::size_t>(channels) || channels < 1)
        throw ShapeMismatch("RenderScene arrays disagree in length");
}

void RenderGrads::reset(std::size_t n, int channels) {
    positions.assign(n, Vec3::Zero());
    rotations.assign(n, Vec4::Zero());
    scales.assign(n, Vec3::Zero());
    opacities.assign(n, 0.0);
    colors.assign(n * static_cast<std::size_t>(channels), 0.0);
}

Mat3 gaussian_covariance(const Vec4& rotation, const Vec3& scale) {
    const Mat3 m = quat_to_rotation(rotation) * scale.asDiagonal();
    return m * m.transpose();
}

namespace {

Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& t) {
    Eigen::Matrix<double, 2, 3> j;
    const double iz = 1.0 / t.z();
    j << cam.fx() * iz, 0.0, -cam.fx() * t.x() * iz * iz,
         0.0, cam.fy() * iz, -cam.fy() * t.y() * iz * iz;
    return j;
}

} // namespace

Splat2D project_gaussian(const Vec3& position, const Vec4& rotation, const Vec3& scale,
                         double opacity, const Camera& cam, const RenderSettings& settings) {
    const Vec3 t = cam.to_camera(position);
    if (!(t.z() > settings.near_plane)) throw BehindNearPlane("Gaussian centre behind near plane");
    const Eigen::Matrix<double, 2, 3> j = projection_jacobian(cam, t);
    const Mat3 w = cam.rotation();
    const Mat3 sigma_cam = w * gaussian_covariance(rotation, scale) * w.transpose();
    Splat2D s;
    s.cov = j * sigma_cam * j.transpose() + settings.cov_floor * Mat2::Identity();
    s.cov(0, 1) = s.cov(1, 0) = 0.5 * (s.cov(0, 1) + s.cov(1, 0));
    s.conic = s.cov.inverse();
    s.mean = Vec2(cam.fx() * t.x() / t.z() + cam.cx(), cam.fy() * t.y() / t.z() + cam.cy());
    s.depth = t.z();
    s.opacity = opacity;
    const double mid = 0.5 * (s.cov(0, 0) + s.cov(1, 1));
    const double det = s.cov.determinant();
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    s.radius = settings.cutoff_sigma * std::sqrt(lambda_max);
    return s;
}

namespace detail {

ProjectedScene project_scene(const RenderScene& scene, const Camera& cam,
                             const RenderSettings& settings) {
    scene.validate();
    ProjectedScene out;
    out.splats.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (!(scene.opacities[i] > 0.0)) continue;
        Splat2D s;
        try {
            s = project_gaussian(scene.positions[i], scene.rotations[i], scene.scales[i],
                                 scene.opacities[i], cam, settings);
        } catch (const BehindNearPlane&) {
            continue;
        }
        if (!std::isfinite(s.mean.x()) || !std::isfinite(s.mean.y())) continue;
        if (s.mean.x() + s.radius < 0.0 || s.mean.x() - s.radius > cam.width - 1 ||
            s.mean.y() + s.radius < 0.0 || s.mean.y() - s.radius > cam.height - 1)
            continue;
        s.index = static_cast<int>(i);
        out.splats.push_back(s);
    }
    std::stable_sort(out.splats.begin(), out.splats.end(), [](const Splat2D& a, const Splat2D& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.index < b.index;
    });
    return out;
}

void backprop_projection(const RenderScene& scene, const Camera& cam,
                         const RenderSettings& settings, const ProjectedScene& projected,
                         const std::vector<ScreenGrad>& screen, RenderGrads& out) {
    const Mat3 w = cam.rotation();
    const int n = static_cast<int>(projected.splats.size());
#pragma omp parallel for schedule(static)
    for (int k = 0; k < n; ++k) {
        const Splat2D& s = projected.splats[k];
        const ScreenGrad& g = screen[k];
        const int i = s.index;
        const Vec3 t = cam.to_camera(scene.positions[i]);
        const Eigen::Matrix<double, 2, 3> j = projection_jacobian(cam, t);
        const Mat3 rot = quat_to_rotation(scene.rotations[i]);
        const Vec3& sc = scene.scales[i];
        const Mat3 m = rot * sc.asDiagonal();
        const Mat3 sigma = m * m.transpose();
        const Mat3 sigma_cam = w * sigma * w.transpose();

        const Mat2 g_cov = -s.conic * g.conic * s.conic;
        const Eigen::Matrix<double, 2, 3> g_j = 2.0 * g_cov * j * sigma_cam;
        const Mat3 g_sigma_cam = j.transpose() * g_cov * j;
        const Mat3 g_sigma = w.transpose() * g_sigma_cam * w;
        const Mat3 g_m = 2.0 * g_sigma * m;

        Mat3 g_rot;
        Vec3 g_scale;
        for (int c = 0; c < 3; ++c) {
            g_rot.col(c) = g_m.col(c) * sc[c];
            g_scale[c] = g_m.col(c).dot(rot.col(c));
        }

        Vec3 g_t = j.transpose() * g.mean;
        const double iz = 1.0 / t.z();
        const double iz2 = iz * iz;
        const double fx = cam.fx(), fy = cam.fy();
        g_t.x() += g_j(0, 2) * (-fx * iz2);
        g_t.y() += g_j(1, 2) * (-fy * iz2);
        g_t.z() += g_j(0, 0) * (-fx * iz2) + g_j(0, 2) * (2.0 * fx * t.x() * iz2 * iz) +
                   g_j(1, 1) * (-fy * iz2) + g_j(1, 2) * (2.0 * fy * t.y() * iz2 * iz);
        g_t.z() += g.depth;

        out.positions[i] += w.transpose() * g_t;
        out.rotations[i] += quat_to_rotation_backward(scene.rotations[i], g_rot);
        out.scales[i] += g_scale;
        out.opacities[i] += g.opacity;
    }
    (void)settings;
}

} // namespace detail

namespace {

using detail::ProjectedScene;
using detail::ScreenGrad;

struct TileGrid {
    int size = 16;
    int cols = 0;
    int rows = 0;
    std::vector<std::vector<int>> lists; // splat ranks, front to back

    int count() const { return cols * rows; }
};

TileGrid bin_splats(const ProjectedScene& ps, const Camera& cam, int tile_size) {
    TileGrid g;
    g.size = std::max(1, tile_size);
    g.cols = (cam.width + g.size - 1) / g.size;
    g.rows = (cam.height + g.size - 1) / g.size;
    g.lists.assign(static_cast<std::size_t>(g.count()), {});
    for (int k = 0; k < static_cast<int>(ps.splats.size()); ++k) {
        const Splat2D& s = ps.splats[k];
        const int c0 = std::max(0, static_cast<int>(std::ceil(s.mean.x() - s.radius)));
        const int c1 = std::min(cam.width - 1, static_cast<int>(std::floor(s.mean.x() + s.radius)));
        const int r0 = std::max(0, static_cast<int>(std::ceil(s.mean.y() - s.radius)));
        const int r1 = std::min(cam.height - 1, static_cast<int>(std::floor(s.mean.y() + s.radius)));
        if (c0 > c1 || r0 > r1) continue;
        for (int ty = r0 / g.size; ty <= r1 / g.size; ++ty)
            for (int tx = c0 / g.size; tx <= c1 / g.size; ++tx) g.lists[ty * g.cols + tx].push_back(k);
    }
    return g;
}

struct Contribution {
    int rank;   // position in the tile list
    double a;   // opacity * G
    double g;   // G
    double t;   // transmittance before this splat
    double dx, dy;
};

} // namespace

RenderOutput render(const RenderScene& scene, const Camera& cam, const RenderSettings& settings) {
    cam.validate();
    const ProjectedScene ps = detail::project_scene(scene, cam, settings);
    const TileGrid grid = bin_splats(ps, cam, settings.tile_size);
    const int ch = scene.channels;
    const double cutoff_power = -0.5 * settings.cutoff_sigma * settings.cutoff_sigma;

    RenderOutput out;
    out.color = ImagePlane(cam.height, cam.width, ch,
                           ch == 3 ? ChannelKind::Rgb : ChannelKind::Feature);
    out.alpha = ImagePlane(cam.height, cam.width, 1, ChannelKind::Alpha);
    out.depth = ImagePlane(cam.height, cam.width, 1, ChannelKind::Depth);
    if (settings.hit_depth)
        out.hit_depth = ImagePlane(cam.height, cam.width, 1, ChannelKind::Depth,
                                   std::numeric_limits<double>::infinity());

#pragma omp parallel for schedule(dynamic)
    for (int tile = 0; tile < grid.count(); ++tile) {
        const int tx = tile % grid.cols, ty = tile / grid.cols;
        const auto& list = grid.lists[tile];
        std::vector<double> acc(ch);
        for (int row = ty * grid.size; row < std::min(cam.height, (ty + 1) * grid.size); ++row) {
            for (int col = tx * grid.size; col < std::min(cam.width, (tx + 1) * grid.size); ++col) {
                double trans = 1.0;
                double depth_sum = 0.0;
                double hit = std::numeric_limits<double>::infinity();
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int k : list) {
                    const Splat2D& s = ps.splats[k];
                    const double power = detail::gaussian_power(s, col, row);
                    if (power < cutoff_power) continue;
                    const double a = s.opacity * std::exp(power);
                    if (!(a > 0.0)) continue;
                    const double w = a * trans;
                    const double* c = scene.color(s.index);
                    for (int q = 0; q < ch; ++q) acc[q] += c[q] * w;
                    depth_sum += s.depth * w;
                    trans *= 1.0 - a;
                    if (std::isinf(hit) && 1.0 - trans >= settings.hit_threshold) hit = s.depth;
                }
                for (int q = 0; q < ch; ++q) out.color.at(row, col, q) = acc[q];
                const double alpha = 1.0 - trans;
                out.alpha.at(row, col) = alpha;
                out.depth.at(row, col) = alpha > 1e-10 ? depth_sum / alpha : 0.0;
                if (out.hit_depth) out.hit_depth->at(row, col) = hit;
            }
        }
    }
    return out;
}

RenderGrads render_backward(const RenderScene& scene, const Camera& cam,
                            const RenderGradIn& up, const RenderSettings& settings) {
    cam.validate();
    const ProjectedScene ps = detail::project_scene(scene, cam, settings);
    const TileGrid grid = bin_splats(ps, cam, settings.tile_size);
    const int ch = scene.channels;
    const double cutoff_power = -0.5 * settings.cutoff_sigma * settings.cutoff_sigma;
    const bool has_color = up.color.size() > 0;
    const bool has_alpha = up.alpha.size() > 0;
    const bool has_depth = up.depth.size() > 0;
    if ((has_color && (up.color.height() != cam.height || up.color.width() != cam.width ||
                       up.color.channels() != ch)) ||
        (has_alpha && (up.alpha.height() != cam.height || up.alpha.width() != cam.width)) ||
        (has_depth && (up.depth.height() != cam.height || up.depth.width() != cam.width)))
        throw ShapeMismatch("render_backward: upstream gradient shape mismatch");

    // Per-tile buffers, indexed like the tile lists.
    std::vector<std::vector<ScreenGrad>> tile_screen(grid.count());
    std::vector<std::vector<double>> tile_color(grid.count());

#pragma omp parallel for schedule(dynamic)
    for (int tile = 0; tile < grid.count(); ++tile) {
        const int tx = tile % grid.cols, ty = tile / grid.cols;
        const auto& list = grid.lists[tile];
        auto& sg = tile_screen[tile];
        auto& cg = tile_color[tile];
        sg.assign(list.size(), ScreenGrad{});
        cg.assign(list.size() * ch, 0.0);
        std::vector<Contribution> contrib;
        contrib.reserve(list.size());
        std::vector<double> behind(ch + 2), gout(ch + 2);

        for (int row = ty * grid.size; row < std::min(cam.height, (ty + 1) * grid.size); ++row) {
            for (int col = tx * grid.size; col < std::min(cam.width, (tx + 1) * grid.size); ++col) {
                contrib.clear();
                double trans = 1.0;
                double depth_sum = 0.0;
                for (int r = 0; r < static_cast<int>(list.size()); ++r) {
                    const Splat2D& s = ps.splats[list[r]];
                    const double power = detail::gaussian_power(s, col, row);
                    if (power < cutoff_power) continue;
                    const double g = std::exp(power);
                    const double a = s.opacity * g;
                    if (!(a > 0.0)) continue;
                    contrib.push_back({r, a, g, trans, col - s.mean.x(), row - s.mean.y()});
                    depth_sum += s.depth * a * trans;
                    trans *= 1.0 - a;
                }
                if (contrib.empty()) continue;
                const double alpha = 1.0 - trans;

                for (int q = 0; q < ch; ++q) gout[q] = has_color ? up.color.at(row, col, q) : 0.0;
                double g_alpha = has_alpha ? up.alpha.at(row, col) : 0.0;
                double g_nsum = 0.0;
                if (has_depth && alpha > 1e-10) {
                    const double gd = up.depth.at(row, col);
                    g_nsum = gd / alpha;
                    g_alpha -= gd * depth_sum / (alpha * alpha);
                }
                gout[ch] = g_alpha;
                gout[ch + 1] = g_nsum;

                std::fill(behind.begin(), behind.end(), 0.0);
                for (auto it = contrib.rbegin(); it != contrib.rend(); ++it) {
                    const Splat2D& s = ps.splats[list[it->rank]];
                    const double* c = scene.color(s.index);
                    double g_a = 0.0;
                    for (int q = 0; q < ch; ++q) g_a += gout[q] * (c[q] - behind[q]);
                    g_a += gout[ch] * (1.0 - behind[ch]);
                    g_a += gout[ch + 1] * (s.depth - behind[ch + 1]);
                    g_a *= it->t;

                    const double wgt = it->a * it->t;
                    double* cgr = cg.data() + static_cast<std::size_t>(it->rank) * ch;
                    for (int q = 0; q < ch; ++q) cgr[q] += gout[q] * wgt;
                    ScreenGrad& out = sg[it->rank];
                    out.depth += gout[ch + 1] * wgt;

                    for (int q = 0; q < ch; ++q) behind[q] = it->a * c[q] + (1.0 - it->a) * behind[q];
                    behind[ch] = it->a + (1.0 - it->a) * behind[ch];
                    behind[ch + 1] = it->a * s.depth + (1.0 - it->a) * behind[ch + 1];

                    out.opacity += g_a * it->g;
                    const double g_power = g_a * s.opacity * it->g;
                    const Vec2 d(it->dx, it->dy);
                    out.mean += g_power * (s.conic * d);
                    out.conic += (-0.5 * g_power) * (d * d.transpose());
                }
            }
        }
    }

    std::vector<ScreenGrad> screen(ps.splats.size());
    RenderGrads grads;
    grads.reset(scene.size(), ch);
    for (int tile = 0; tile < grid.count(); ++tile) {
        const auto& list = grid.lists[tile];
        for (std::size_t r = 0; r < list.size(); ++r) {
            const ScreenGrad& src = tile_screen[tile][r];
            ScreenGrad& dst = screen[list[r]];
            dst.mean += src.mean;
            dst.conic += src.conic;
            dst.depth += src.depth;
            dst.opacity += src.opacity;
            double* cdst = grads.color(ps.splats[list[r]].index, ch);
            const double* csrc = tile_color[tile].data() + r * ch;
            for (int q = 0; q < ch; ++q) cdst[q] += csrc[q];
        }
    }
    detail::backprop_projection(scene, cam, settings, ps, screen, grads);
    return grads;
}

int dominant_gaussian(const RenderScene& scene, const Camera& cam, int col, int row,
                      const RenderSettings& settings) {
    const ProjectedScene ps = detail::project_scene(scene, cam, settings);
    const double cutoff_power = -0.5 * settings.cutoff_sigma * settings.cutoff_sigma;
    double trans = 1.0;
    double best = 0.0;
    int best_index = -1;
    for (const Splat2D& s : ps.splats) {
        const double power = detail::gaussian_power(s, col, row);
        if (power < cutoff_power) continue;
        const double a = s.opacity * std::exp(power);
        const double w = a * trans;
        if (w > best) {
            best = w;
            best_index = s.index;
        }
        trans *= 1.0 - a;
    }
    return best_index;
}

} // namespace t4d
