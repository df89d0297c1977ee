#include "helpers.hpp"

#include "t4d/motionfield.hpp"

#include <algorithm>

using namespace t4d;
using namespace t4d::test;

namespace {

BoundingBox unit_box() {
    BoundingBox b;
    b.min = Vec3(-1, -0.5, -2);
    b.max = Vec3(1, 1.5, 0);
    return b;
}

HexPlaneField random_field(Rng& rng, const HexPlaneConfig& cfg, int n_frames, double lo = 0.2,
                           double hi = 1.2) {
    HexPlaneField f(cfg, unit_box(), n_frames);
    for (double& v : f.parameters()) v = rng.uniform(lo, hi);
    return f;
}

Vec3 point_in(Rng& rng, const BoundingBox& b) {
    return Vec3(rng.uniform(b.min.x(), b.max.x()), rng.uniform(b.min.y(), b.max.y()),
                rng.uniform(b.min.z(), b.max.z()));
}

// Independent sampler: explicit corner lookup through HexPlaneField::entry.
VecX brute_force_hex(HexPlaneField& f, const Vec3& x, double frame) {
    const auto& cfg = f.config();
    const BoundingBox& b = f.box();
    const double u[4] = {(x.x() - b.min.x()) / (b.max.x() - b.min.x()),
                         (x.y() - b.min.y()) / (b.max.y() - b.min.y()),
                         (x.z() - b.min.z()) / (b.max.z() - b.min.z()), frame / (f.n_frames() - 1)};
    VecX out = VecX::Ones(cfg.levels * cfg.channels);
    for (int l = 0; l < cfg.levels; ++l)
        for (int k = 0; k < 6; ++k) {
            const int a0 = HexPlaneField::kPairs[k][0], a1 = HexPlaneField::kPairs[k][1];
            const int rows = f.axis_res(l, a0), cols = f.axis_res(l, a1);
            const double gr = u[a0] * (rows - 1), gc = u[a1] * (cols - 1);
            const int r0 = std::min(static_cast<int>(gr), rows - 2), c0 = std::min(static_cast<int>(gc), cols - 2);
            const double fr = gr - r0, fc = gc - c0;
            for (int c = 0; c < cfg.channels; ++c) {
                const double v = (1 - fr) * (1 - fc) * f.entry(l, k, r0, c0, c) +
                                 (1 - fr) * fc * f.entry(l, k, r0, c0 + 1, c) +
                                 fr * (1 - fc) * f.entry(l, k, r0 + 1, c0, c) +
                                 fr * fc * f.entry(l, k, r0 + 1, c0 + 1, c);
                out[l * cfg.channels + c] *= v;
            }
        }
    return out;
}

Gaussian3D blob(const Vec3& pos, double scale, double opacity) {
    Gaussian3D g;
    g.position = pos;
    g.scale = Vec3::Constant(scale);
    g.opacity = opacity;
    return g;
}

FeatureMap random_map(Rng& rng, int h, int w, int d) {
    FeatureMap m(h, w, d);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int k = 0; k < d; ++k) m.at(r, c, k) = rng.uniform(-1, 1);
    return m;
}

// Hand-written bilinear lookup at continuous feature coordinates.
VecX manual_bilinear(const FeatureMap& m, const Vec2& q) {
    const int x0 = std::min(static_cast<int>(q.x()), m.width() - 2);
    const int y0 = std::min(static_cast<int>(q.y()), m.height() - 2);
    const double fx = q.x() - x0, fy = q.y() - y0;
    VecX v(m.dims());
    for (int k = 0; k < m.dims(); ++k)
        v[k] = (1 - fx) * (1 - fy) * m.at(y0, x0, k) + fx * (1 - fy) * m.at(y0, x0 + 1, k) +
               (1 - fx) * fy * m.at(y0 + 1, x0, k) + fx * fy * m.at(y0 + 1, x0 + 1, k);
    return v;
}

} // namespace

TEST_CASE("constant-one planes give an all-ones feature") {
    HexPlaneField f(HexPlaneConfig{2, 8, 4, 5}, unit_box(), 6);
    for (double& v : f.parameters()) v = 1.0;
    const VecX out = hexplane_interp(f, Vec3(0.1, 0.2, -1.0), 2.5);
    REQUIRE(out.size() == 10);
    CHECK((out - VecX::Ones(10)).norm() == 0.0);
}

TEST_CASE("a zero plane annihilates its resolution only") {
    Rng rng(1);
    HexPlaneField f = random_field(rng, {2, 8, 4, 3}, 5);
    for (int r = 0; r < f.plane(0, 4).rows; ++r)
        for (int c = 0; c < f.plane(0, 4).cols; ++c)
            for (int k = 0; k < 3; ++k) f.entry(0, 4, r, c, k) = 0.0;
    const VecX out = hexplane_interp(f, Vec3(0.3, 0.7, -0.4), 1.3);
    for (int k = 0; k < 3; ++k) {
        CHECK(out[k] == 0.0);
        CHECK(out[3 + k] != 0.0);
    }
}

TEST_CASE("hexplane_interp matches a brute-force per-plane sampler") {
    Rng rng(2);
    HexPlaneField f = random_field(rng, {2, 9, 5, 4}, 7);
    for (int trial = 0; trial < 50; ++trial) {
        const Vec3 x = point_in(rng, f.box());
        const double t = rng.uniform(0, 6);
        CHECK((hexplane_interp(f, x, t) - brute_force_hex(f, x, t)).norm() < 1e-10);
    }
    // Box corners and the last frame hit the upper grid edge.
    CHECK((hexplane_interp(f, f.box().max, 6.0) - brute_force_hex(f, f.box().max, 6.0)).norm() < 1e-10);
}

TEST_CASE("hexplane resolutions halve per level") {
    HexPlaneField f(HexPlaneConfig{3, 100, 8, 16}, unit_box(), 8);
    CHECK(f.axis_res(0, 0) == 100);
    CHECK(f.axis_res(1, 1) == 50);
    CHECK(f.axis_res(2, 2) == 25);
    CHECK(f.axis_res(0, 3) == 8);
    CHECK(f.axis_res(2, 3) == 2);
    CHECK(f.output_dims() == 48);
}

TEST_CASE("hexplane_interp rejects points outside the box") {
    HexPlaneField f(HexPlaneConfig{1, 4, 4, 2}, unit_box(), 4);
    CHECK_THROWS_AS(hexplane_interp(f, Vec3(1.5, 0, -1), 0), OutOfBox);
    CHECK_THROWS_AS(hexplane_interp(f, Vec3(0, 0, -1), 3.5), OutOfBox);
}

TEST_CASE("initialized field: spatial planes in [0.1, 0.5], temporal planes one") {
    const HexPlaneField f = HexPlaneField::initialized({2, 6, 4, 3}, unit_box(), 5, 42);
    const auto params = f.parameters();
    for (int l = 0; l < 2; ++l)
        for (int k = 0; k < 6; ++k) {
            const auto& p = f.plane(l, k);
            for (std::size_t i = 0; i < static_cast<std::size_t>(p.rows * p.cols * 3); ++i) {
                const double v = params[p.offset + i];
                if (k < 3) {
                    CHECK(v >= 0.1);
                    CHECK(v <= 0.5);
                } else {
                    CHECK(v == 1.0);
                }
            }
        }
}

TEST_CASE("hexplane_interp is Lipschitz along random segments") {
    Rng rng(3);
    HexPlaneField f = random_field(rng, {2, 9, 5, 3}, 6);
    const BoundingBox& b = f.box();
    // Each plane sample is bounded by M and has slope at most 2 M (R - 1) per unit
    // normalised coordinate, so the product moves by at most 6 M^6 2 (R - 1) / extent.
    const double m = 1.2;
    const double lip = 6 * std::pow(m, 6) * 2 * (9 - 1) / b.extent().minCoeff();
    for (int seg = 0; seg < 10; ++seg) {
        const Vec3 a = point_in(rng, b), c = point_in(rng, b);
        const int steps = 2000;
        VecX prev = hexplane_interp(f, a, 2.0);
        for (int s = 1; s <= steps; ++s) {
            const Vec3 x = a + (c - a) * (static_cast<double>(s) / steps);
            const VecX cur = hexplane_interp(f, x, 2.0);
            CHECK((cur - prev).lpNorm<Eigen::Infinity>() <= lip * (c - a).norm() / steps + 1e-12);
            prev = cur;
        }
    }
}

TEST_CASE("hexplane_backward matches finite differences") {
    Rng rng(4);
    HexPlaneField f = random_field(rng, {2, 7, 4, 3}, 5);
    VecX w(6);
    for (int i = 0; i < 6; ++i) w[i] = rng.uniform(-1, 1);
    const Vec3 x(0.13, 0.41, -0.77);
    const double t = 1.7;
    std::vector<double> g(f.parameters().size(), 0.0);
    Vec3 gx = Vec3::Zero();
    hexplane_backward(f, x, t, w, g, &gx);
    auto loss = [&](const Vec3& p) { return w.dot(hexplane_interp(f, p, t)); };
    const double h = 1e-6;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double& e = f.parameters()[i];
        const double keep = e;
        e = keep + h;
        const double up = loss(x);
        e = keep - h;
        const double dn = loss(x);
        e = keep;
        const double fd = (up - dn) / (2 * h);
        CHECK(std::abs(g[i] - fd) <= 1e-4 * std::max({std::abs(g[i]), std::abs(fd), 1e-6}));
    }
    for (int a = 0; a < 3; ++a) {
        Vec3 up = x, dn = x;
        up[a] += h;
        dn[a] -= h;
        const double fd = (loss(up) - loss(dn)) / (2 * h);
        CHECK(std::abs(gx[a] - fd) <= 1e-4 * std::max(std::abs(fd), 1e-6));
    }
}

TEST_CASE("batched interpolation equals per-point calls") {
    Rng rng(5);
    const HexPlaneField f = random_field(rng, {2, 8, 4, 4}, 6);
    std::vector<Vec3> pts(40);
    for (Vec3& p : pts) p = point_in(rng, f.box());
    const Eigen::MatrixXd a = hexplane_interp_batch(f, pts, 3.2);
    const Eigen::MatrixXd b = hexplane_interp_batch_serial(f, pts, 3.2);
    CHECK(a == b);
    for (int i = 0; i < 40; ++i) CHECK(a.col(i) == hexplane_interp(f, pts[i], 3.2));
}

TEST_CASE("visibility: a lone Gaussian centre is visible") {
    const std::vector<Gaussian3D> g{blob(Vec3::Zero(), 0.2, 0.9)};
    const Camera cam = orbit_camera(0.5, 0.2, 4, 32, 32, 40);
    CHECK(visibility_check(Gaussian4DState::canonical(g), cam, Vec3::Zero(), 0.03));
}

TEST_CASE("visibility: a point behind an opaque Gaussian is occluded") {
    const std::vector<Gaussian3D> g{blob(Vec3::Zero(), 0.3, 1.0)};
    const Camera cam = orbit_camera(0.0, 0.0, 4, 32, 32, 40);
    // Camera sits on +x; the point lies further along the same ray.
    CHECK_FALSE(visibility_check(Gaussian4DState::canonical(g), cam, Vec3(-1.0, 0, 0), 0.03));
    CHECK(visibility_check(Gaussian4DState::canonical(g), cam, Vec3(1.0, 0, 0), 0.03));
}

TEST_CASE("visibility throws for points behind the camera") {
    const std::vector<Gaussian3D> g{blob(Vec3::Zero(), 0.3, 1.0)};
    const Camera cam = orbit_camera(0.0, 0.0, 4, 32, 32, 40);
    CHECK_THROWS_AS(visibility_check(Gaussian4DState::canonical(g), cam, Vec3(6, 0, 0), 0.03),
                    PointBehindCamera);
}

TEST_CASE("visibility agrees with a ray-marching oracle") {
    Rng rng(6);
    std::vector<Gaussian3D> g;
    for (int i = 0; i < 20; ++i) {
        Gaussian3D b = blob(random_vec(rng, -0.7, 0.7), 0.1, rng.uniform(0.5, 1.0));
        b.scale = random_vec(rng, 0.08, 0.25);
        b.rotation = random_quat(rng);
        g.push_back(b);
    }
    const Camera cam = orbit_camera(0.8, 0.3, 4, 64, 64, 70);
    const double extent = 2.0 * std::sqrt(3.0) * 0.7;
    const double eps = 0.01 * extent, step = 1e-3 * extent;
    const auto state = Gaussian4DState::canonical(g);
    const VisibilityMap vis = VisibilityMap::build(compose_geometry(state), cam, eps);

    // Each Gaussian contributes opacity * exp(-m^2 / 2) at the point of its peak
    // density along the ray, m being the smallest Mahalanobis distance on the ray.
    auto oracle_visible = [&](const Vec3& x) {
        const Projection p = project_point(cam, x);
        const Vec3 pix(std::round(p.u), std::round(p.v), 1.0);
        const Vec3 dir_cam = cam.K.inverse() * pix; // camera-space ray with z = 1
        const Vec3 origin = cam.center();
        const Vec3 dir = cam.rotation().transpose() * dir_cam;
        struct Hit { double z, alpha; };
        std::vector<Hit> hits;
        for (const Gaussian3D& gi : g) {
            const Mat3 inv = gaussian_covariance(gi.rotation, gi.scale).inverse();
            const Vec3 o = origin - gi.position;
            const double z = -dir.dot(inv * o) / dir.dot(inv * dir);
            const Vec3 q = o + z * dir;
            const double m2 = q.dot(inv * q);
            if (m2 <= 9.0) hits.push_back({z, gi.opacity * std::exp(-0.5 * m2)});
        }
        double transmit = 1.0;
        for (double z = 0.0; z < 10.0; z += step) {
            for (const Hit& h : hits)
                if (h.z >= z && h.z < z + step) transmit *= 1.0 - h.alpha;
            if (1.0 - transmit >= 0.5) return p.depth <= z + eps;
        }
        return true;
    };
    int agree = 0;
    for (int k = 0; k < 50; ++k) {
        // Mix of points near Gaussians and free-space points.
        const Vec3 x = k % 2 ? g[k % 20].position + random_vec(rng, -0.15, 0.15) : random_vec(rng, -0.8, 0.8);
        agree += vis.visible(x) == oracle_visible(x);
    }
    CHECK(agree >= 48);
}

TEST_CASE("feature sample of a constant map in a single view") {
    FeatureVideo fv;
    fv.cameras.push_back(orbit_camera(0.3, 0.1, 4, 32, 32, 40));
    FeatureMap m(8, 8, 3);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c)
            for (int k = 0; k < 3; ++k) m.at(r, c, k) = 0.25 * (k + 1);
    fv.maps.push_back({m, m});
    const std::vector<Gaussian3D> g{blob(Vec3::Zero(), 0.2, 0.9)};
    const FeatureSample s = feature_plane_sample(fv, Gaussian4DState::canonical(g), Vec3::Zero(), 1.0, 0.03);
    CHECK_FALSE(s.occluded);
    CHECK(s.views_used == 1);
    CHECK((s.value - Vec3(0.25, 0.5, 0.75)).norm() < 1e-12);
}

TEST_CASE("points occluded in every view give zero and the flag") {
    FeatureVideo fv;
    const std::vector<Gaussian3D> g{blob(Vec3::Zero(), 0.3, 1.0)};
    Rng rng(7);
    for (double az : {0.0, 0.1}) {
        fv.cameras.push_back(orbit_camera(az, 0.0, 4, 32, 32, 40));
        fv.maps.push_back({random_map(rng, 8, 8, 4)});
    }
    const FeatureSample s = feature_plane_sample(fv, Gaussian4DState::canonical(g), Vec3(-1.2, 0, 0), 0.0, 0.03);
    CHECK(s.occluded);
    CHECK(s.views_used == 0);
    CHECK(s.value.norm() == 0.0);
}

TEST_CASE("two visible views average manual projections") {
    Rng rng(8);
    FeatureVideo fv;
    for (double az : {0.4, 2.0}) {
        fv.cameras.push_back(orbit_camera(az, 0.3, 4, 40, 30, 45));
        fv.maps.push_back({random_map(rng, 10, 12, 5)});
    }
    const std::vector<Gaussian3D> g{blob(Vec3(0.5, 0.5, 0.5), 0.05, 0.5)};
    const auto state = Gaussian4DState::canonical(g);
    for (int trial = 0; trial < 10; ++trial) {
        const Vec3 x = random_vec(rng, -0.4, 0.2);
        VecX expect = VecX::Zero(5);
        for (int v = 0; v < 2; ++v) {
            const Camera& cam = fv.cameras[v];
            const Vec3 c = cam.K * cam.to_camera(x);
            const double u = c.x() / c.z(), w = c.y() / c.z();
            // Feature texel centres sit at pixel (q + 0.5) * 40 / 12 - 0.5 and likewise in y.
            const Vec2 q((u + 0.5) * 12.0 / 40.0 - 0.5, (w + 0.5) * 10.0 / 30.0 - 0.5);
            expect += manual_bilinear(fv.maps[v][0], q.cwiseMax(0.0).cwiseMin(Vec2(11, 9)));
        }
        expect /= 2;
        const FeatureSample s = feature_plane_sample(fv, state, x, 0.0, 0.03);
        REQUIRE(s.views_used == 2);
        CHECK((s.value - expect).norm() < 1e-12);
    }
}

TEST_CASE("an all-occluded extra view does not change the sample") {
    Rng rng(9);
    FeatureVideo fv;
    fv.cameras.push_back(orbit_camera(0.0, 0.2, 4, 32, 32, 40));
    fv.maps.push_back({random_map(rng, 8, 8, 3)});
    const Vec3 x(0.1, -0.1, 0.0);
    const Camera extra = orbit_camera(2.5, 0.0, 4, 32, 32, 40);
    // Opaque blocker halfway between the extra camera and x: it sits well off the
    // first camera's line of sight.
    const std::vector<Gaussian3D> g{blob(0.5 * (extra.center() + x), 0.3, 1.0)};
    const auto state = Gaussian4DState::canonical(g);
    const FeatureSample a = feature_plane_sample(fv, state, x, 0.0, 0.03);
    fv.cameras.push_back(extra);
    fv.maps.push_back({random_map(rng, 8, 8, 3)});
    const FeatureSample b = feature_plane_sample(fv, state, x, 0.0, 0.03);
    REQUIRE(a.views_used == 1);
    CHECK(b.views_used == 1);
    CHECK(a.value == b.value);
}

TEST_CASE("feature lookup is linear in time between frames") {
    Rng rng(10);
    FeatureVideo fv;
    fv.cameras.push_back(orbit_camera(1.0, 0.2, 4, 32, 32, 40));
    fv.maps.push_back({random_map(rng, 8, 8, 3), random_map(rng, 8, 8, 3), random_map(rng, 8, 8, 3)});
    const std::vector<Gaussian3D> g{blob(Vec3::Zero(), 0.05, 0.3)};
    const auto state = Gaussian4DState::canonical(g);
    const Vec3 x(0.2, 0.1, -0.1);
    const VecX a = feature_plane_sample(fv, state, x, 1.0, 0.03).value;
    const VecX b = feature_plane_sample(fv, state, x, 2.0, 0.03).value;
    for (double w : {0.25, 0.5, 0.9}) {
        const VecX m = feature_plane_sample(fv, state, x, 1.0 + w, 0.03).value;
        CHECK((m - ((1 - w) * a + w * b)).norm() < 1e-12);
    }
}

TEST_CASE("hybrid feature concatenates the two parts") {
    Rng rng(11);
    FeatureVideo fv;
    fv.cameras.push_back(orbit_camera(0.2, 0.2, 4, 32, 32, 40));
    FeatureMap ones(8, 8, 8);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c)
            for (int k = 0; k < 8; ++k) ones.at(r, c, k) = 1.0;
    fv.maps.push_back({ones, ones});
    const std::vector<Gaussian3D> g{blob(Vec3(0.5, 0.5, -1.5), 0.05, 0.3)};
    const std::vector<VisibilityMap> vis{VisibilityMap::build(compose_geometry(Gaussian4DState::canonical(g)), fv.cameras[0], 0.03)};

    const HexPlaneField zero(HexPlaneConfig{1, 6, 3, 16}, unit_box(), 2);
    const VecX f0 = hybrid_feature(zero, fv, vis, Vec3(0, 0.5, -1), 0.5);
    REQUIRE(f0.size() == 24);
    CHECK(f0.head(16).norm() == 0.0);
    CHECK((f0.tail(8) - VecX::Ones(8)).norm() < 1e-12);

    fv.maps[0] = {random_map(rng, 8, 8, 8), random_map(rng, 8, 8, 8)};
    const HexPlaneField f = random_field(rng, {2, 6, 3, 4}, 2);
    for (int trial = 0; trial < 10; ++trial) {
        const Vec3 x = point_in(rng, f.box());
        const double t = rng.uniform(0, 1);
        const VecX h = hexplane_interp(f, x, t);
        const VecX d = feature_plane_sample(fv, vis, x, t).value;
        const VecX got = hybrid_feature(f, fv, vis, x, t);
        CHECK(got.head(h.size()) == h);
        CHECK(got.tail(d.size()) == d);
    }
}

TEST_CASE("fresh decoder outputs zero deltas") {
    Rng rng(12);
    const DeformationDecoder dec(10, 16, 3);
    for (int trial = 0; trial < 5; ++trial) {
        VecX f(10);
        for (int i = 0; i < 10; ++i) f[i] = rng.uniform(-2, 2);
        const DecoderDeltas d = deform_decode(dec, f);
        CHECK(d.position.norm() == 0.0);
        CHECK(d.rotation.norm() == 0.0);
        CHECK(d.scale.norm() == 0.0);
    }
    CHECK_THROWS_AS(deform_decode(dec, VecX::Zero(9)), ShapeMismatch);
}

TEST_CASE("tiny decoder on zero input is determined by the biases") {
    DeformationDecoder dec(2, 2, 1);
    auto p = dec.parameters();
    const auto& lay = dec.layout();
    auto silu = [](double z) { return z / (1 + std::exp(-z)); };
    // Trunk bias b0 = (0.5, -1); head h: W1 = [[1, h], [0, 1]], b1 = (0.1 h, 0),
    // W2 entries (r, c) = 0.1 (r + 1) (c + 2), b2 = 0.01 (r + 1).
    p[lay.trunk_b] = 0.5;
    p[lay.trunk_b + 1] = -1.0;
    for (int h = 0; h < 3; ++h) {
        // Column-major 2x2.
        p[lay.w1[h] + 0] = 1.0;
        p[lay.w1[h] + 1] = 0.0;
        p[lay.w1[h] + 2] = h;
        p[lay.w1[h] + 3] = 1.0;
        p[lay.b1[h]] = 0.1 * h;
        p[lay.b1[h] + 1] = 0.0;
        const int rows = DeformationDecoder::kHeadDims[h];
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < 2; ++c) p[lay.w2[h] + c * rows + r] = 0.1 * (r + 1) * (c + 2);
            p[lay.b2[h] + r] = 0.01 * (r + 1);
        }
    }
    const double a0 = silu(0.5), a1 = silu(-1.0);
    auto head = [&](int h, int r) {
        const double z0 = silu(a0 + h * a1 + 0.1 * h), z1 = silu(a1);
        return 0.1 * (r + 1) * 2 * z0 + 0.1 * (r + 1) * 3 * z1 + 0.01 * (r + 1);
    };
    const DecoderDeltas d = deform_decode(dec, VecX::Zero(2));
    for (int r = 0; r < 3; ++r) CHECK(d.position[r] == doctest::Approx(head(0, r)).epsilon(1e-12));
    for (int r = 0; r < 4; ++r) CHECK(d.rotation[r] == doctest::Approx(head(1, r)).epsilon(1e-12));
    for (int r = 0; r < 3; ++r) CHECK(d.scale[r] == doctest::Approx(head(2, r)).epsilon(1e-12));
}

TEST_CASE("decoder gradient w.r.t. features matches finite differences") {
    Rng rng(13);
    DeformationDecoder dec(7, 9, 5);
    for (double& w : dec.parameters()) w = rng.uniform(-0.7, 0.7);
    Eigen::MatrixXd f(7, 1);
    for (int i = 0; i < 7; ++i) f(i, 0) = rng.uniform(-1, 1);
    std::array<Eigen::MatrixXd, 3> up;
    for (int h = 0; h < 3; ++h) {
        up[h] = Eigen::MatrixXd(DeformationDecoder::kHeadDims[h], 1);
        for (int r = 0; r < up[h].rows(); ++r) up[h](r, 0) = rng.uniform(-1, 1);
    }
    auto loss = [&](const Eigen::MatrixXd& x) {
        const auto c = dec.forward(x);
        double s = 0;
        for (int h = 0; h < 3; ++h) s += (c.out[h].array() * up[h].array()).sum();
        return s;
    };
    std::vector<double> gp(dec.parameters().size(), 0.0);
    const Eigen::MatrixXd gf = dec.backward(f, dec.forward(f), up, gp);
    const double h = 1e-4;
    for (int i = 0; i < 7; ++i) {
        Eigen::MatrixXd a = f, b = f;
        a(i, 0) += h;
        b(i, 0) -= h;
        const double fd = (loss(a) - loss(b)) / (2 * h);
        CHECK(std::abs(gf(i, 0) - fd) <= 1e-4 * std::max(std::abs(fd), 1e-6));
    }
}

TEST_CASE("apply_deformation follows the additive update") {
    Gaussian3D g = blob(Vec3::Zero(), 0.2, 0.6);
    g.rotation = quat_normalize(Vec4(0.9, 0.1, -0.2, 0.3));
    const DeformedGaussian same = apply_deformation(g, Vec3::Zero(), Vec4::Zero(), Vec3::Zero(), Vec3(0.1, 0.2, 0.3));
    CHECK(same.position == g.position);
    CHECK((same.rotation - g.rotation).norm() < 1e-15);
    CHECK(same.scale == g.scale);
    CHECK(same.opacity == 0.6);
    CHECK(same.color == Vec3(0.1, 0.2, 0.3));

    const DeformedGaussian moved = apply_deformation(g, Vec3(1, 0, 0), Vec4(0.1, 0, 0, 0), Vec3(-0.5, 0.1, 0), Vec3::Zero());
    CHECK(moved.position == Vec3(1, 0, 0));
    CHECK(moved.scale[0] == kMinScale);
    CHECK(moved.scale[1] == doctest::Approx(0.3));
    CHECK((moved.rotation - quat_normalize(g.rotation + Vec4(0.1, 0, 0, 0))).norm() < 1e-15);
}

TEST_CASE("hex -> decoder -> deformation chain is differentiable end to end") {
    Rng rng(14);
    HexPlaneField field = random_field(rng, {2, 5, 3, 3}, 4, 0.5, 1.0);
    DeformationDecoder dec(field.output_dims(), 8, 2);
    for (double& w : dec.parameters()) w = rng.uniform(-0.5, 0.5);
    std::vector<Gaussian3D> g;
    for (int i = 0; i < 4; ++i) g.push_back(blob(point_in(rng, field.box()), 0.1, 0.5));
    const double t = 1.6;

    // Probe: sum of deformed positions over Gaussians.
    auto probe = [&] {
        double s = 0;
        for (const Gaussian3D& gi : g) {
            const DecoderDeltas d = deform_decode(dec, hexplane_interp(field, gi.position, t));
            s += apply_deformation(gi, d.position, d.rotation, d.scale, Vec3::Zero()).position.sum();
        }
        return s;
    };
    std::vector<double> g_hex(field.parameters().size(), 0.0), g_dec(dec.parameters().size(), 0.0);
    for (const Gaussian3D& gi : g) {
        Eigen::MatrixXd f = hexplane_interp(field, gi.position, t);
        const auto cache = dec.forward(f);
        std::array<Eigen::MatrixXd, 3> up{Eigen::MatrixXd::Ones(3, 1), Eigen::MatrixXd::Zero(4, 1),
                                          Eigen::MatrixXd::Zero(3, 1)};
        const Eigen::MatrixXd gf = dec.backward(f, cache, up, g_dec);
        hexplane_backward(field, gi.position, t, gf.col(0), g_hex);
    }
    auto check = [&](std::span<double> params, const std::vector<double>& grad) {
        double gmax = 0;
        for (double v : grad) gmax = std::max(gmax, std::abs(v));
        for (std::size_t i = 0; i < params.size(); i += 3) {
            const double keep = params[i], h = 1e-5;
            params[i] = keep + h;
            const double up = probe();
            params[i] = keep - h;
            const double dn = probe();
            params[i] = keep;
            const double fd = (up - dn) / (2 * h);
            CHECK(std::abs(grad[i] - fd) <= 1e-3 * std::max({std::abs(grad[i]), std::abs(fd), 1e-3 * gmax}));
        }
    };
    check(field.parameters(), g_hex);
    check(dec.parameters(), g_dec);
}
