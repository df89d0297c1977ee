#include "t4d/gradcheck.hpp"

#include "t4d/appearance.hpp"
#include "t4d/losses.hpp"
#include "t4d/pipeline.hpp"
#include "t4d/rng.hpp"
#include "t4d/trackmath.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace t4d {

namespace {

struct Probe {
    double* param = nullptr;
    double analytic = 0.0;
    double h = 1e-5;
    int group = 0;
};

// Central differences for every probe; returns the worst relative error.
double compare(std::vector<Probe>& probes, const std::function<double()>& loss) {
    std::map<int, double> group_max;
    for (const Probe& p : probes) group_max[p.group] = std::max(group_max[p.group], std::abs(p.analytic));
    double worst = 0.0;
    for (Probe& p : probes) {
        const double keep = *p.param;
        *p.param = keep + p.h;
        const double up = loss();
        *p.param = keep - p.h;
        const double down = loss();
        *p.param = keep;
        const double numeric = (up - down) / (2.0 * p.h);
        const double denom =
            std::max({std::abs(p.analytic), std::abs(numeric), 1e-3 * group_max[p.group] + 1e-12});
        worst = std::max(worst, std::abs(p.analytic - numeric) / denom);
    }
    return worst;
}

Vec4 random_quat(Rng& rng) {
    return quat_normalize(Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
}

ImagePlane random_plane(Rng& rng, int h, int w, int c) {
    ImagePlane p(h, w, c, ChannelKind::Feature);
    for (double& v : p.data()) v = rng.uniform(-1.0, 1.0);
    return p;
}

double dot(const ImagePlane& a, const ImagePlane& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

Camera test_camera(int w, int h, double f) {
    return Camera::look_at(Vec3(0.3, -4.0, 0.8), Vec3::Zero(), Vec3::UnitZ(), f, f, 0.5 * w - 0.5,
                           0.5 * h - 0.5, w, h);
}

// Settings that keep the footprint smooth enough for finite differences.
RenderSettings smooth_settings() {
    RenderSettings s;
    s.cutoff_sigma = 8.0;
    return s;
}

} // namespace

GradCheckResult gradcheck_render(std::uint64_t seed) {
    Rng rng(seed);
    const Camera cam = test_camera(40, 40, 45.0);
    const RenderSettings settings = smooth_settings();
    RenderScene scene;
    scene.resize(8, 3);
    for (int i = 0; i < 8; ++i) {
        scene.positions[i] = Vec3(rng.uniform(-0.6, 0.6), rng.uniform(-0.4, 0.4), rng.uniform(-0.5, 0.5));
        scene.rotations[i] = random_quat(rng);
        scene.scales[i] = Vec3(rng.uniform(0.12, 0.35), rng.uniform(0.12, 0.35), rng.uniform(0.12, 0.35));
        scene.opacities[i] = rng.uniform(0.3, 0.8);
        for (int q = 0; q < 3; ++q) scene.color(i)[q] = rng.uniform(0.0, 1.0);
    }
    RenderGradIn up;
    up.color = random_plane(rng, cam.height, cam.width, 3);
    up.alpha = random_plane(rng, cam.height, cam.width, 1);
    up.depth = random_plane(rng, cam.height, cam.width, 1);
    // Depth is N / alpha and snaps to 0 below alpha = 1e-10, which the
    // footprint tails cross; only probe it where coverage is substantial.
    const RenderOutput base = render(scene, cam, settings);
    for (std::size_t i = 0; i < up.depth.size(); ++i)
        up.depth.data()[i] *= base.alpha.data()[i] > 1e-3 ? 0.1 : 0.0;
    auto loss = [&] {
        const RenderOutput o = render(scene, cam, settings);
        return dot(o.color, up.color) + dot(o.alpha, up.alpha) + dot(o.depth, up.depth);
    };
    const RenderGrads g = render_backward(scene, cam, up, settings);
    std::vector<Probe> probes;
    for (int i = 0; i < 8; ++i) {
        for (int a = 0; a < 3; ++a) probes.push_back({&scene.positions[i][a], g.positions[i][a], 1e-5, 0});
        for (int a = 0; a < 4; ++a) probes.push_back({&scene.rotations[i][a], g.rotations[i][a], 1e-5, 1});
        for (int a = 0; a < 3; ++a) probes.push_back({&scene.scales[i][a], g.scales[i][a], 1e-6, 2});
        probes.push_back({&scene.opacities[i], g.opacities[i], 1e-6, 3});
        for (int q = 0; q < 3; ++q) probes.push_back({scene.color(i) + q, g.colors[3 * i + q], 1e-4, 4});
    }
    GradCheckResult r{"render", 0.0, 1e-3, static_cast<int>(probes.size())};
    r.max_rel_error = compare(probes, loss);
    return r;
}

GradCheckResult gradcheck_hexplane(std::uint64_t seed) {
    Rng rng(seed);
    const HexPlaneConfig cfg{2, 9, 5, 4};
    BoundingBox box{Vec3(-1.0, -0.5, -0.8), Vec3(1.0, 0.7, 0.6)};
    HexPlaneField field = HexPlaneField::initialized(cfg, box, 6, seed);
    for (double& v : field.parameters()) v = rng.uniform(0.2, 1.2);
    Vec3 x(rng.uniform(-0.9, 0.9), rng.uniform(-0.4, 0.6), rng.uniform(-0.7, 0.5));
    const double frame = 2.37;
    VecX w(field.output_dims());
    for (int i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1.0, 1.0);

    std::vector<double> gp(field.parameters().size(), 0.0);
    Vec3 gx = Vec3::Zero();
    hexplane_backward(field, x, frame, w, gp, &gx);
    auto loss = [&] { return w.dot(hexplane_interp(field, x, frame)); };
    std::vector<Probe> probes;
    for (std::size_t i = 0; i < gp.size(); ++i)
        if (gp[i] != 0.0) probes.push_back({&field.parameters()[i], gp[i], 1e-5, 0});
    for (int a = 0; a < 3; ++a) probes.push_back({&x[a], gx[a], 1e-6, 1});
    GradCheckResult r{"hexplane", 0.0, 1e-4, static_cast<int>(probes.size())};
    r.max_rel_error = compare(probes, loss);
    return r;
}

GradCheckResult gradcheck_decoder(std::uint64_t seed) {
    Rng rng(seed);
    DeformationDecoder dec(10, 12, seed);
    for (double& v : dec.parameters()) v = rng.uniform(-0.5, 0.5);
    Eigen::MatrixXd f(10, 3);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.uniform(-1.0, 1.0);
    std::array<Eigen::MatrixXd, 3> w;
    for (int h = 0; h < 3; ++h) {
        w[h].resize(DeformationDecoder::kHeadDims[h], 3);
        for (Eigen::Index i = 0; i < w[h].size(); ++i) w[h].data()[i] = rng.uniform(-1.0, 1.0);
    }
    auto loss = [&] {
        const auto c = dec.forward(f);
        double s = 0.0;
        for (int h = 0; h < 3; ++h) s += c.out[h].cwiseProduct(w[h]).sum();
        return s;
    };
    std::vector<double> gp(dec.parameters().size(), 0.0);
    const Eigen::MatrixXd gf = dec.backward(f, dec.forward(f), w, gp);
    std::vector<Probe> probes;
    for (std::size_t i = 0; i < gp.size(); ++i) probes.push_back({&dec.parameters()[i], gp[i], 1e-5, 0});
    for (Eigen::Index i = 0; i < f.size(); ++i) probes.push_back({f.data() + i, gf.data()[i], 1e-5, 1});
    GradCheckResult r{"decoder", 0.0, 1e-4, static_cast<int>(probes.size())};
    r.max_rel_error = compare(probes, loss);
    return r;
}

GradCheckResult gradcheck_color(std::uint64_t seed) {
    Rng rng(seed);
    SH4DCoeffs c(2, 4, 12);
    for (double& v : c.weights()) v = rng.uniform(-0.3, 0.3);
    const double psi = rng.uniform(0.0, 6.0), gamma = rng.uniform(0.2, 2.9), t = 5.0;
    const Vec3 w(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    auto loss = [&] { return w.dot(eval_color_4d_raw(c, psi, gamma, t)); };
    // The pre-clamp colour is linear in the weights: d/d fr = w_ch Y cos(...).
    std::vector<Probe> probes;
    for (int ch = 0; ch < 3; ++ch)
        for (int l = 0; l <= c.l_max(); ++l)
            for (int m = -l; m <= l; ++m)
                for (int i = 0; i < c.terms(); ++i) {
                    const double a = w[ch] * sh_basis(l, m, psi, gamma) *
                                     std::cos(i * std::numbers::pi * t / c.n_frames());
                    probes.push_back({&c.at(ch, sh_index(l, m), i), a, 1e-4, 0});
                }
    GradCheckResult r{"color_weights", 0.0, 1e-6, static_cast<int>(probes.size())};
    r.max_rel_error = compare(probes, loss);
    return r;
}

GradCheckResult gradcheck_color_view(std::uint64_t seed) {
    Rng rng(seed);
    SH4DCoeffs c(3, 3, 8);
    for (double& v : c.weights()) v = rng.uniform(-0.08, 0.08);
    Vec3 view(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    const double t = 3.0;
    const Vec3 w(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    auto loss = [&] { return w.dot(eval_color_view(c, view, t).rgb); };
    std::vector<double> gw(c.size(), 0.0);
    const Vec3 gv = eval_color_view_backward(c, eval_color_view(c, view, t), w, gw);
    std::vector<Probe> probes;
    for (std::size_t i = 0; i < gw.size(); ++i) probes.push_back({&c.weights()[i], gw[i], 1e-5, 0});
    for (int a = 0; a < 3; ++a) probes.push_back({&view[a], gv[a], 1e-6, 1});
    GradCheckResult r{"color_view", 0.0, 1e-4, static_cast<int>(probes.size())};
    r.max_rel_error = compare(probes, loss);
    return r;
}

GradCheckResult gradcheck_position_loss(std::uint64_t seed) {
    Rng rng(seed);
    const int n = 2, pts = 3, f = 4;
    TrackSet tracked(n), predicted(n);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < pts; ++k) {
            Track t, p;
            for (int j = 0; j < f; ++j) {
                const Vec2 base(rng.uniform(0, 10), rng.uniform(0, 10));
                // Alternate residual sizes so both Huber branches are exercised.
                const double scale = (i + k + j) % 2 ? 0.4 : 2.5;
                t.positions.push_back(base);
                p.positions.push_back(base + scale * Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1)));
            }
            tracked[i].push_back(t);
            predicted[i].push_back(p);
        }
    std::vector<std::vector<std::vector<Vec2>>> g;
    position_loss(tracked, predicted, 1.0, &g);
    std::vector<Probe> probes;
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < pts; ++k)
            for (int j = 1; j < f; ++j)
                for (int a = 0; a < 2; ++a)
                    probes.push_back({&predicted[i][k].positions[j][a], g[i][k][j][a], 1e-6, 0});
    GradCheckResult r{"position_loss", 0.0, 1e-4, static_cast<int>(probes.size())};
    r.max_rel_error = compare(probes, [&] { return position_loss(tracked, predicted, 1.0); });
    return r;
}

GradCheckResult gradcheck_correspondence(std::uint64_t seed) {
    Rng rng(seed);
    DescriptorSet h(2, std::vector<std::vector<VecX>>(2, std::vector<VecX>(3)));
    for (auto& v : h)
        for (auto& p : v)
            for (auto& d : p) {
                d.resize(5);
                for (int c = 0; c < 5; ++c) d[c] = rng.normal();
            }
    DescriptorSet g;
    correspondence_loss(h, nullptr, &g);
    std::vector<Probe> probes;
    for (std::size_t i = 0; i < h.size(); ++i)
        for (std::size_t k = 0; k < h[i].size(); ++k)
            for (std::size_t j = 0; j < h[i][k].size(); ++j)
                for (int c = 0; c < 5; ++c) probes.push_back({&h[i][k][j][c], g[i][k][j][c], 1e-6, 0});
    GradCheckResult r{"correspondence_loss", 0.0, 1e-4, static_cast<int>(probes.size())};
    r.max_rel_error = compare(probes, [&] { return correspondence_loss(h); });
    return r;
}

GradCheckResult gradcheck_arap(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Vec3> rest(12), moved(12);
    for (int i = 0; i < 12; ++i) {
        rest[i] = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        moved[i] = 1.2 * rest[i] + 0.15 * Vec3(rng.normal(), rng.normal(), rng.normal());
    }
    const RigidityGraph graph = build_rigidity_graph(rest, 4);
    std::vector<Vec3> g;
    arap_loss(graph, rest, moved, &g);
    std::vector<Probe> probes;
    for (int i = 0; i < 12; ++i)
        for (int a = 0; a < 3; ++a) probes.push_back({&moved[i][a], g[i][a], 1e-6, 0});
    GradCheckResult r{"arap", 0.0, 1e-4, static_cast<int>(probes.size())};
    r.max_rel_error = compare(probes, [&] { return arap_loss(graph, rest, moved); });
    return r;
}

GradCheckResult gradcheck_full_chain(std::uint64_t seed) {
    Rng rng(seed);
    const int frames = 3;
    std::vector<Gaussian3D> gs(4);
    for (auto& g : gs) {
        g.position = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
        g.rotation = random_quat(rng);
        g.scale = Vec3(rng.uniform(0.2, 0.4), rng.uniform(0.2, 0.4), rng.uniform(0.2, 0.4));
        g.opacity = rng.uniform(0.4, 0.8);
        g.sh = SH4DCoeffs(1, 2, frames);
        for (double& v : g.sh.weights()) v = rng.uniform(-0.15, 0.15);
    }
    ModelConfig cfg;
    cfg.hex = {2, 6, 3, 3};
    cfg.hidden = 6;
    cfg.render = smooth_settings();
    DynamicModel model = DynamicModel::create(gs, nullptr, frames, cfg, seed);
    for (double& v : model.decoder.parameters()) v = rng.uniform(-0.3, 0.3);
    const std::vector<Camera> cams{test_camera(24, 24, 26.0),
                                   Camera::look_at(Vec3(-3.5, 1.5, 1.0), Vec3::Zero(), Vec3::UnitZ(),
                                                   24.0, 24.0, 11.5, 11.5, 24, 24)};
    std::vector<ImagePlane> targets, target_masks;
    for (const Camera& c : cams) {
        ImagePlane t(c.height, c.width, 3, ChannelKind::Rgb), m(c.height, c.width, 1, ChannelKind::Alpha);
        for (double& v : t.data()) v = rng.uniform(0.0, 1.0);
        for (double& v : m.data()) v = rng.uniform(0.0, 1.0);
        targets.push_back(t);
        target_masks.push_back(m);
    }
    const double frame = 1.0;

    auto loss_and_grad = [&](ModelGrads* grads) {
        const FrameState s = deform(model, frame);
        std::vector<RenderScene> scenes(cams.size());
        std::vector<std::vector<ColorEval>> evals(cams.size());
        std::vector<ImagePlane> colors, alphas;
        for (std::size_t v = 0; v < cams.size(); ++v) {
            scenes[v] = shade(model, s, cams[v], &evals[v]);
            const RenderOutput o = render(scenes[v], cams[v], model.render);
            colors.push_back(o.color);
            alphas.push_back(o.alpha);
        }
        ReconGrads rg;
        const double l = reconstruction_loss(colors, targets, alphas, target_masks, grads ? &rg : nullptr);
        if (grads) {
            grads->reset(model);
            GeometryGrads geo;
            geo.reset(model.canonical.size());
            for (std::size_t v = 0; v < cams.size(); ++v) {
                const RenderGradIn up{rg.color[v], rg.alpha[v], {}};
                const RenderGrads g = render_backward(scenes[v], cams[v], up, model.render);
                accumulate_view(model, s, cams[v], evals[v], g, geo, *grads);
            }
            backprop_deform(model, s, geo, *grads);
        }
        return l;
    };
    ModelGrads g;
    loss_and_grad(&g);

    std::vector<Probe> probes;
    for (std::size_t i = 0; i < g.hex.size(); ++i)
        if (g.hex[i] != 0.0) probes.push_back({&model.hex.parameters()[i], g.hex[i], 1e-4, 0});
    for (std::size_t i = 0; i < g.decoder.size(); ++i)
        probes.push_back({&model.decoder.parameters()[i], g.decoder[i], 1e-4, 1});
    std::size_t o = 0;
    for (auto& gauss : model.canonical)
        for (double& w : gauss.sh.weights()) probes.push_back({&w, g.sh[o++], 1e-4, 2});
    GradCheckResult r{"full_rec_chain", 0.0, 1e-3, static_cast<int>(probes.size())};
    r.max_rel_error = compare(probes, [&] { return loss_and_grad(nullptr); });
    return r;
}

std::vector<GradCheckResult> gradcheck_all() {
    return {gradcheck_render(),          gradcheck_hexplane(),   gradcheck_decoder(),
            gradcheck_color(),           gradcheck_color_view(), gradcheck_position_loss(),
            gradcheck_correspondence(), gradcheck_arap(),       gradcheck_full_chain()};
}

} // namespace t4d
