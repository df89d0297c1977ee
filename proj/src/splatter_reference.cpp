// Serial reference rasteriser: every pixel walks the full sorted splat list,
// no tiling, no threads. Kept to cross-check the tiled kernels.

#include "t4d/splatter.hpp"

#include <cmath>

namespace t4d {

RenderOutput render_reference(const RenderScene& scene, const Camera& cam,
                              const RenderSettings& settings) {
    cam.validate();
    const auto ps = detail::project_scene(scene, cam, settings);
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

    for (int row = 0; row < cam.height; ++row) {
        for (int col = 0; col < cam.width; ++col) {
            double trans = 1.0;
            double depth_sum = 0.0;
            bool hit = false;
            for (const Splat2D& s : ps.splats) {
                const double power = detail::gaussian_power(s, col, row);
                if (power < cutoff_power) continue;
                const double a = s.opacity * std::exp(power);
                if (!(a > 0.0)) continue;
                const double w = a * trans;
                for (int q = 0; q < ch; ++q) out.color.at(row, col, q) += scene.color(s.index)[q] * w;
                depth_sum += s.depth * w;
                trans *= 1.0 - a;
                if (!hit && 1.0 - trans >= settings.hit_threshold) {
                    hit = true;
                    if (out.hit_depth) out.hit_depth->at(row, col) = s.depth;
                }
            }
            const double alpha = 1.0 - trans;
            out.alpha.at(row, col) = alpha;
            out.depth.at(row, col) = alpha > 1e-10 ? depth_sum / alpha : 0.0;
        }
    }
    return out;
}

RenderGrads render_backward_reference(const RenderScene& scene, const Camera& cam,
                                      const RenderGradIn& up, const RenderSettings& settings) {
    cam.validate();
    const auto ps = detail::project_scene(scene, cam, settings);
    const int ch = scene.channels;
    const double cutoff_power = -0.5 * settings.cutoff_sigma * settings.cutoff_sigma;
    const int n = static_cast<int>(ps.splats.size());

    RenderGrads grads;
    grads.reset(scene.size(), ch);
    std::vector<detail::ScreenGrad> screen(n);

    std::vector<double> a(n), g(n), t(n);
    std::vector<char> active(n);
    for (int row = 0; row < cam.height; ++row) {
        for (int col = 0; col < cam.width; ++col) {
            // Forward again, remembering each splat's state at this pixel.
            double trans = 1.0;
            double depth_sum = 0.0;
            for (int k = 0; k < n; ++k) {
                const Splat2D& s = ps.splats[k];
                const double power = detail::gaussian_power(s, col, row);
                active[k] = 0;
                if (power < cutoff_power) continue;
                g[k] = std::exp(power);
                a[k] = s.opacity * g[k];
                if (!(a[k] > 0.0)) continue;
                active[k] = 1;
                t[k] = trans;
                depth_sum += s.depth * a[k] * trans;
                trans *= 1.0 - a[k];
            }
            const double alpha = 1.0 - trans;
            double g_alpha = up.alpha.size() ? up.alpha.at(row, col) : 0.0;
            double g_nsum = 0.0;
            if (up.depth.size() && alpha > 1e-10) {
                g_nsum = up.depth.at(row, col) / alpha;
                g_alpha -= up.depth.at(row, col) * depth_sum / (alpha * alpha);
            }

            // d out / d a_k = T_k (f_k - behind_k), behind_k being the composite of
            // everything after splat k.
            std::vector<double> behind(ch + 2, 0.0);
            for (int k = n - 1; k >= 0; --k) {
                if (!active[k]) continue;
                const Splat2D& s = ps.splats[k];
                const double* c = scene.color(s.index);
                double ga = 0.0;
                for (int q = 0; q < ch; ++q) {
                    const double gc = up.color.size() ? up.color.at(row, col, q) : 0.0;
                    ga += gc * (c[q] - behind[q]);
                    grads.color(s.index, ch)[q] += gc * a[k] * t[k];
                }
                ga += g_alpha * (1.0 - behind[ch]);
                ga += g_nsum * (s.depth - behind[ch + 1]);
                ga *= t[k];
                screen[k].depth += g_nsum * a[k] * t[k];
                for (int q = 0; q < ch; ++q) behind[q] = a[k] * c[q] + (1.0 - a[k]) * behind[q];
                behind[ch] = a[k] + (1.0 - a[k]) * behind[ch];
                behind[ch + 1] = a[k] * s.depth + (1.0 - a[k]) * behind[ch + 1];

                screen[k].opacity += ga * g[k];
                const double gp = ga * s.opacity * g[k];
                const Vec2 d(col - s.mean.x(), row - s.mean.y());
                screen[k].mean += gp * (s.conic * d);
                screen[k].conic += (-0.5 * gp) * (d * d.transpose());
            }
        }
    }
    detail::backprop_projection(scene, cam, settings, ps, screen, grads);
    return grads;
}

} // namespace t4d
