#include "helpers.hpp"

#include "t4d/splatter.hpp"

#include <algorithm>
#include <numeric>

using namespace t4d;
using namespace t4d::test;

namespace {

Camera axis_camera(int w = 32, int h = 32, double f = 40.0) {
    // Looks down +y from the origin side so the world origin is on the optical axis.
    return Camera::look_at(Vec3(0, -4, 0), Vec3::Zero(), Vec3::UnitZ(), f, f, 0.5 * w - 0.5, 0.5 * h - 0.5, w, h);
}

RenderScene random_scene(Rng& rng, int n, int channels = 3) {
    RenderScene s;
    s.resize(n, channels);
    for (int i = 0; i < n; ++i) {
        s.positions[i] = random_vec(rng, -0.6, 0.6);
        s.rotations[i] = random_quat(rng);
        s.scales[i] = random_vec(rng, 0.1, 0.3);
        s.opacities[i] = rng.uniform(0.3, 0.9);
        for (int c = 0; c < channels; ++c) s.color(i)[c] = rng.uniform(0, 1);
    }
    return s;
}

RenderScene single(const Vec3& pos, double scale, double opacity, const Vec3& rgb) {
    RenderScene s;
    s.resize(1, 3);
    s.positions[0] = pos;
    s.scales[0] = Vec3::Constant(scale);
    s.opacities[0] = opacity;
    for (int c = 0; c < 3; ++c) s.color(0)[c] = rgb[c];
    return s;
}

RenderScene concat(const RenderScene& a, const RenderScene& b) {
    RenderScene s = a;
    s.positions.insert(s.positions.end(), b.positions.begin(), b.positions.end());
    s.rotations.insert(s.rotations.end(), b.rotations.begin(), b.rotations.end());
    s.scales.insert(s.scales.end(), b.scales.begin(), b.scales.end());
    s.opacities.insert(s.opacities.end(), b.opacities.begin(), b.opacities.end());
    s.colors.insert(s.colors.end(), b.colors.begin(), b.colors.end());
    return s;
}

bool identical(const ImagePlane& a, const ImagePlane& b) {
    return a.same_shape(b) && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

} // namespace

TEST_CASE("isotropic Gaussian on the axis projects to (f sigma / d)^2 I") {
    const Camera cam = axis_camera(64, 64, 80);
    const RenderSettings st;
    Rng rng(1);
    const double sigma = 0.2;
    const Splat2D s = project_gaussian(Vec3::Zero(), random_quat(rng), Vec3::Constant(sigma), 0.5, cam, st);
    const double expect = std::pow(80 * sigma / 4.0, 2);
    CHECK(s.cov(0, 0) - st.cov_floor == doctest::Approx(expect).epsilon(0.01));
    CHECK(s.cov(1, 1) - st.cov_floor == doctest::Approx(expect).epsilon(0.01));
    CHECK(std::abs(s.cov(0, 1)) < 1e-9 * expect);
    CHECK(s.depth == doctest::Approx(4.0));
}

TEST_CASE("axis-aligned scales give a diagonal covariance") {
    const Mat3 sigma = gaussian_covariance(quat_identity(), Vec3(0.1, 0.2, 0.3));
    CHECK(sigma(0, 0) == doctest::Approx(0.01));
    CHECK(sigma(1, 1) == doctest::Approx(0.04));
    CHECK(sigma(2, 2) == doctest::Approx(0.09));
    CHECK(std::abs(sigma(0, 1)) + std::abs(sigma(0, 2)) + std::abs(sigma(1, 2)) == 0.0);
}

TEST_CASE("projected covariance matches the sample covariance of projected points") {
    Rng rng(2);
    RenderSettings st;
    st.cov_floor = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
        const Camera cam = orbit_camera(rng.uniform(0, 6), rng.uniform(-0.5, 0.8), 5.0, 64, 64, 70);
        const Vec3 mu = random_vec(rng, -0.5, 0.5);
        const Vec4 q = random_quat(rng);
        const Vec3 sc = random_vec(rng, 0.01, 0.04);
        const Splat2D s = project_gaussian(mu, q, sc, 1.0, cam, st);
        const Mat3 m = quat_to_rotation(q) * sc.asDiagonal();
        const int n = 100000;
        Vec2 mean = Vec2::Zero();
        Mat2 second = Mat2::Zero();
        std::vector<Vec2> pts(n);
        for (int k = 0; k < n; ++k) {
            const Vec3 x = mu + m * Vec3(rng.normal(), rng.normal(), rng.normal());
            const Projection p = project_point(cam, x);
            pts[k] = Vec2(p.u, p.v);
            mean += pts[k];
        }
        mean /= n;
        for (const Vec2& p : pts) second += (p - mean) * (p - mean).transpose();
        second /= n - 1;
        CHECK((second - s.cov).norm() < 0.02 * s.cov.norm());
    }
}

TEST_CASE("project_gaussian culls behind the near plane") {
    const Camera cam = axis_camera();
    CHECK_THROWS_AS(project_gaussian(Vec3(0, -4.005, 0), quat_identity(), Vec3::Constant(0.1), 1, cam, {}),
                    BehindNearPlane);
}

TEST_CASE("opaque Gaussian centred on a pixel returns its colour there") {
    const Camera cam = axis_camera(33, 33, 40);
    const RenderOutput o = render(single(Vec3::Zero(), 0.2, 1.0, Vec3(0.2, 0.4, 0.8)), cam);
    // Principal point (16, 16) is a pixel centre.
    CHECK(o.alpha.at(16, 16) == doctest::Approx(1.0));
    CHECK(o.color.at(16, 16, 0) == doctest::Approx(0.2));
    CHECK(o.color.at(16, 16, 2) == doctest::Approx(0.8));
    CHECK(o.depth.at(16, 16) == doctest::Approx(4.0));
}

TEST_CASE("a fully opaque front Gaussian hides the one behind") {
    const Camera cam = axis_camera(33, 33, 40);
    const RenderScene s = concat(single(Vec3(0, 1, 0), 0.3, 0.6, Vec3(0, 1, 0)),
                                 single(Vec3(0, 0, 0), 0.3, 1.0, Vec3(1, 0, 0)));
    const RenderOutput o = render(s, cam);
    CHECK(o.color.at(16, 16, 0) == doctest::Approx(1.0));
    CHECK(o.color.at(16, 16, 1) == doctest::Approx(0.0));
}

TEST_CASE("two half-transparent layers composite front to back") {
    const Camera cam = axis_camera(33, 33, 40);
    const RenderScene s = concat(single(Vec3(0, 1, 0), 0.2, 0.5, Vec3(0, 1, 0)),
                                 single(Vec3(0, 0, 0), 0.2, 0.5, Vec3(1, 0, 0)));
    const RenderOutput o = render(s, cam);
    CHECK(o.color.at(16, 16, 0) == doctest::Approx(0.5));
    CHECK(o.color.at(16, 16, 1) == doctest::Approx(0.25));
    CHECK(o.color.at(16, 16, 2) == doctest::Approx(0.0));
    CHECK(o.alpha.at(16, 16) == doctest::Approx(0.75));
}

TEST_CASE("empty scene renders black with zero alpha") {
    const RenderOutput o = render(RenderScene{}, axis_camera());
    CHECK(std::all_of(o.color.data().begin(), o.color.data().end(), [](double v) { return v == 0; }));
    CHECK(std::all_of(o.alpha.data().begin(), o.alpha.data().end(), [](double v) { return v == 0; }));
}

TEST_CASE("footprint is limited to the cutoff ellipse") {
    const Camera cam = axis_camera(65, 65, 40);
    const RenderOutput o = render(single(Vec3::Zero(), 0.1, 1.0, Vec3(1, 1, 1)), cam);
    const double sigma_px = std::sqrt(std::pow(40 * 0.1 / 4, 2) + 0.3);
    for (int r = 0; r < 65; ++r)
        for (int c = 0; c < 65; ++c) {
            const double d = std::hypot(r - 32.0, c - 32.0);
            if (d > 3.0 * sigma_px + 1e-9) CHECK(o.alpha.at(r, c) == 0.0);
        }
}

TEST_CASE("alpha never decreases when a Gaussian is added") {
    Rng rng(3);
    const Camera cam = orbit_camera(0.3, 0.3, 4, 40, 40, 50);
    RenderScene s = random_scene(rng, 10);
    RenderOutput before = render(s, cam);
    for (int k = 0; k < 5; ++k) {
        s = concat(s, random_scene(rng, 1));
        const RenderOutput after = render(s, cam);
        for (std::size_t i = 0; i < after.alpha.size(); ++i) {
            CHECK(after.alpha.data()[i] >= before.alpha.data()[i] - 1e-15);
            CHECK(after.alpha.data()[i] <= 1.0);
        }
        before = after;
    }
}

TEST_CASE("render is invariant to input order") {
    Rng rng(4);
    const Camera cam = orbit_camera(1.0, 0.2, 4, 40, 40, 50);
    const RenderScene s = random_scene(rng, 20);
    std::vector<int> perm(20);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<int>(perm));
    RenderScene p;
    p.resize(20, 3);
    for (int i = 0; i < 20; ++i) {
        p.positions[i] = s.positions[perm[i]];
        p.rotations[i] = s.rotations[perm[i]];
        p.scales[i] = s.scales[perm[i]];
        p.opacities[i] = s.opacities[perm[i]];
        for (int c = 0; c < 3; ++c) p.color(i)[c] = s.color(perm[i])[c];
    }
    const RenderOutput a = render(s, cam), b = render(p, cam);
    CHECK(identical(a.color, b.color));
    CHECK(identical(a.alpha, b.alpha));
    CHECK(identical(a.depth, b.depth));
}

TEST_CASE("tiled renderer agrees with the serial reference") {
    Rng rng(5);
    const Camera cam = orbit_camera(2.0, 0.4, 4, 45, 37, 50);
    const RenderScene s = random_scene(rng, 25);
    const RenderOutput a = render(s, cam), b = render_reference(s, cam);
    CHECK(identical(a.color, b.color));
    CHECK(identical(a.alpha, b.alpha));
    CHECK(identical(a.depth, b.depth));

    RenderGradIn up;
    up.color = ImagePlane(37, 45, 3, ChannelKind::Feature);
    up.alpha = ImagePlane(37, 45, 1, ChannelKind::Feature);
    for (double& v : up.color.data()) v = rng.uniform(-1, 1);
    for (double& v : up.alpha.data()) v = rng.uniform(-1, 1);
    const RenderGrads ga = render_backward(s, cam, up), gb = render_backward_reference(s, cam, up);
    for (int i = 0; i < 25; ++i) {
        CHECK((ga.positions[i] - gb.positions[i]).norm() <= 1e-10 * (1 + gb.positions[i].norm()));
        CHECK((ga.scales[i] - gb.scales[i]).norm() <= 1e-10 * (1 + gb.scales[i].norm()));
        CHECK((ga.rotations[i] - gb.rotations[i]).norm() <= 1e-10 * (1 + gb.rotations[i].norm()));
        CHECK(std::abs(ga.opacities[i] - gb.opacities[i]) <= 1e-10 * (1 + std::abs(gb.opacities[i])));
    }
}

TEST_CASE("render_backward with zero upstream gives zero gradients") {
    Rng rng(6);
    const Camera cam = orbit_camera(0.0, 0.2, 4, 32, 32, 40);
    const RenderScene s = random_scene(rng, 6);
    const RenderGrads g = render_backward(s, cam, RenderGradIn{});
    for (int i = 0; i < 6; ++i) {
        CHECK(g.positions[i].norm() == 0.0);
        CHECK(g.rotations[i].norm() == 0.0);
        CHECK(g.scales[i].norm() == 0.0);
        CHECK(g.opacities[i] == 0.0);
    }
    CHECK(std::all_of(g.colors.begin(), g.colors.end(), [](double v) { return v == 0; }));
}

TEST_CASE("colour gradient at the centre equals alpha times G") {
    const Camera cam = axis_camera(33, 33, 40);
    const RenderScene s = single(Vec3::Zero(), 0.2, 0.7, Vec3(0.3, 0.3, 0.3));
    RenderGradIn up;
    up.color = ImagePlane(33, 33, 3, ChannelKind::Feature);
    up.color.at(16, 16, 1) = 1.0;
    const RenderGrads g = render_backward(s, cam, up);
    CHECK(g.colors[1] == doctest::Approx(0.7));
    CHECK(g.colors[0] == 0.0);
}

TEST_CASE("render gradients match finite differences for the mean intensity loss") {
    Rng rng(7);
    const Camera cam = orbit_camera(0.7, 0.3, 4, 36, 36, 45);
    RenderSettings st;
    st.cutoff_sigma = 8.0; // smooth footprint edges for finite differences
    RenderScene s = random_scene(rng, 8);
    const double n_px = 36.0 * 36.0 * 3.0;
    auto loss = [&] {
        const RenderOutput o = render(s, cam, st);
        double sum = 0;
        for (double v : o.color.data()) sum += v;
        return sum / n_px;
    };
    RenderGradIn up;
    up.color = ImagePlane(36, 36, 3, ChannelKind::Feature, 1.0 / n_px);
    const RenderGrads g = render_backward(s, cam, up, st);
    auto check = [&](double& param, double analytic, double scale, double group_max) {
        const double h = 1e-4 * scale, keep = param;
        param = keep + h;
        const double a = loss();
        param = keep - h;
        const double b = loss();
        param = keep;
        const double fd = (a - b) / (2 * h);
        const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-3 * group_max});
        CHECK(std::abs(analytic - fd) / denom < 1e-3);
    };
    auto group_max = [](auto&& range) {
        double m = 0;
        for (const auto& v : range) m = std::max(m, std::abs(v));
        return m;
    };
    std::vector<double> gp, gr, gs;
    for (int i = 0; i < 8; ++i)
        for (int a = 0; a < 3; ++a) {
            gp.push_back(g.positions[i][a]);
            gs.push_back(g.scales[i][a]);
        }
    for (int i = 0; i < 8; ++i)
        for (int a = 0; a < 4; ++a) gr.push_back(g.rotations[i][a]);
    const double mp = group_max(gp), mr = group_max(gr), ms = group_max(gs);
    const double mo = group_max(g.opacities), mc = group_max(g.colors);
    for (int i = 0; i < 8; ++i) {
        for (int a = 0; a < 3; ++a) check(s.positions[i][a], g.positions[i][a], 1.0, mp);
        for (int a = 0; a < 4; ++a) check(s.rotations[i][a], g.rotations[i][a], 1.0, mr);
        for (int a = 0; a < 3; ++a) check(s.scales[i][a], g.scales[i][a], s.scales[i][a], ms);
        check(s.opacities[i], g.opacities[i], s.opacities[i], mo);
        for (int c = 0; c < 3; ++c) check(s.color(i)[c], g.colors[3 * i + c], 1.0, mc);
    }
}

TEST_CASE("multi-channel descriptors render through the same path") {
    Rng rng(8);
    const Camera cam = orbit_camera(0.1, 0.2, 4, 24, 24, 30);
    const RenderScene s = random_scene(rng, 5, 7);
    const RenderOutput o = render(s, cam);
    CHECK(o.color.channels() == 7);
    RenderScene first = s;
    first.channels = 3;
    first.colors.clear();
    for (int i = 0; i < 5; ++i)
        for (int c = 0; c < 3; ++c) first.colors.push_back(s.color(i)[c]);
    const RenderOutput o3 = render(first, cam);
    for (int r = 0; r < 24; ++r)
        for (int c = 0; c < 24; ++c)
            for (int k = 0; k < 3; ++k) CHECK(o.color.at(r, c, k) == o3.color.at(r, c, k));
}

TEST_CASE("hit depth marks the first splat that makes the pixel half opaque") {
    const Camera cam = axis_camera(33, 33, 40);
    RenderSettings st;
    st.hit_depth = true;
    const RenderScene s = concat(single(Vec3(0, 1, 0), 0.3, 0.3, Vec3(0, 1, 0)),
                                 single(Vec3(0, 0, 0), 0.3, 0.9, Vec3(1, 0, 0)));
    const RenderOutput o = render(s, cam, st);
    REQUIRE(o.hit_depth.has_value());
    // 0.3 alone stays below 0.5; together 1 - 0.7 * 0.1 = 0.93.
    CHECK(o.hit_depth->at(16, 16) == doctest::Approx(4.0));
    CHECK(std::isinf(o.hit_depth->at(0, 0)));
}

TEST_CASE("dominant_gaussian picks the largest blending weight") {
    const Camera cam = axis_camera(33, 33, 40);
    const RenderScene s = concat(single(Vec3(0, 1, 0), 0.3, 0.2, Vec3(0, 1, 0)),
                                 single(Vec3(0, 0, 0), 0.3, 0.9, Vec3(1, 0, 0)));
    CHECK(dominant_gaussian(s, cam, 16, 16) == 1);
    CHECK(dominant_gaussian(s, cam, 0, 0) == -1);
}

TEST_CASE("render is deterministic across calls") {
    Rng rng(9);
    const Camera cam = orbit_camera(2.5, 0.1, 4, 50, 50, 60);
    const RenderScene s = random_scene(rng, 30);
    const RenderOutput a = render(s, cam), b = render(s, cam);
    CHECK(identical(a.color, b.color));
    RenderGradIn up;
    up.alpha = ImagePlane(50, 50, 1, ChannelKind::Feature, 1.0);
    const RenderGrads ga = render_backward(s, cam, up), gb = render_backward(s, cam, up);
    for (int i = 0; i < 30; ++i) CHECK(ga.positions[i] == gb.positions[i]);
}
