#include "t4d/motionfield.hpp"

#include "t4d/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace t4d {

BoundingBox BoundingBox::around(std::span<const Vec3> points, double margin) {
    BoundingBox b;
    if (points.empty()) return b;
    b.min = b.max = points.front();
    for (const Vec3& p : points) {
        b.min = b.min.cwiseMin(p);
        b.max = b.max.cwiseMax(p);
    }
    const Vec3 pad = Vec3::Constant(margin * std::max(1e-9, (b.max - b.min).maxCoeff()));
    b.min -= pad;
    b.max += pad;
    return b;
}

// ---------------------------------------------------------------- Hex-plane

HexPlaneField::HexPlaneField(const HexPlaneConfig& config, const BoundingBox& box, int n_frames)
    : config_(config), box_(box), n_frames_(n_frames) {
    if (config.levels < 1 || config.spatial_res < 1 || config.temporal_res < 1 || config.channels < 1)
        throw InvalidArgument("HexPlaneField: resolutions and channels must be >= 1");
    if (n_frames < 1) throw InvalidArgument("HexPlaneField: n_frames must be >= 1");
    if (!((box.max - box.min).minCoeff() > 0.0))
        throw InvalidArgument("HexPlaneField: degenerate bounding box");
    std::size_t offset = 0;
    for (int l = 0; l < config.levels; ++l) {
        for (const auto& pair : kPairs) {
            PlaneView p;
            p.rows = axis_res(l, pair[0]);
            p.cols = axis_res(l, pair[1]);
            p.offset = offset;
            offset += static_cast<std::size_t>(p.rows) * p.cols * config.channels;
            planes_.push_back(p);
        }
    }
    params_.assign(offset, 0.0);
}

HexPlaneField HexPlaneField::initialized(const HexPlaneConfig& config, const BoundingBox& box,
                                         int n_frames, std::uint64_t seed) {
    HexPlaneField f(config, box, n_frames);
    Rng rng(seed);
    for (int l = 0; l < config.levels; ++l) {
        for (int k = 0; k < 6; ++k) {
            const PlaneView& p = f.plane(l, k);
            const bool temporal = kPairs[k][1] == 3;
            const std::size_t n = static_cast<std::size_t>(p.rows) * p.cols * config.channels;
            for (std::size_t i = 0; i < n; ++i)
                f.params_[p.offset + i] = temporal ? 1.0 : rng.uniform(0.1, 0.5);
        }
    }
    return f;
}

int HexPlaneField::axis_res(int level, int axis) const {
    const int base = axis == 3 ? config_.temporal_res : config_.spatial_res;
    return std::max(std::min(base, 2), base >> level);
}

Vec4 HexPlaneField::normalize(const Vec3& x, double frame) const {
    constexpr double tol = 1e-9;
    Vec4 u;
    for (int a = 0; a < 3; ++a) {
        u[a] = (x[a] - box_.min[a]) / (box_.max[a] - box_.min[a]);
        if (!(u[a] >= -tol && u[a] <= 1.0 + tol))
            throw OutOfBox("point outside the Hex-plane bounding box");
        u[a] = std::clamp(u[a], 0.0, 1.0);
    }
    if (!(frame >= -tol && frame <= (n_frames_ - 1) + tol))
        throw OutOfBox("frame " + std::to_string(frame) + " outside [0, N_t)");
    u[3] = n_frames_ > 1 ? std::clamp(frame / (n_frames_ - 1), 0.0, 1.0) : 0.0;
    return u;
}

namespace {

struct PlaneSample {
    BilinearStencil st;
    std::size_t offset = 0;
    int cols = 0;
};

PlaneSample locate(const HexPlaneField& field, int level, int k, const Vec4& u) {
    const auto& p = field.plane(level, k);
    const auto& pair = HexPlaneField::kPairs[k];
    const Vec2 g(u[pair[1]] * (p.cols - 1), u[pair[0]] * (p.rows - 1));
    return {bilinear_stencil(p.rows, p.cols, g), p.offset, p.cols};
}

inline void sample_into(std::span<const double> params, const PlaneSample& s, int channels,
                        double* out) {
    const auto w = s.st.weights();
    const double* t00 = params.data() + s.offset + (static_cast<std::size_t>(s.st.y0) * s.cols + s.st.x0) * channels;
    const double* t10 = params.data() + s.offset + (static_cast<std::size_t>(s.st.y0) * s.cols + s.st.x1) * channels;
    const double* t01 = params.data() + s.offset + (static_cast<std::size_t>(s.st.y1) * s.cols + s.st.x0) * channels;
    const double* t11 = params.data() + s.offset + (static_cast<std::size_t>(s.st.y1) * s.cols + s.st.x1) * channels;
    for (int c = 0; c < channels; ++c)
        out[c] = w[0] * t00[c] + w[1] * t10[c] + w[2] * t01[c] + w[3] * t11[c];
}

} // namespace

VecX hexplane_interp(const HexPlaneField& field, const Vec3& x, double frame) {
    const Vec4 u = field.normalize(x, frame);
    const int d = field.config().channels;
    VecX out = VecX::Ones(field.output_dims());
    std::vector<double> s(d);
    for (int l = 0; l < field.config().levels; ++l) {
        for (int k = 0; k < 6; ++k) {
            sample_into(field.parameters(), locate(field, l, k, u), d, s.data());
            for (int c = 0; c < d; ++c) out[l * d + c] *= s[c];
        }
    }
    return out;
}

void hexplane_backward(const HexPlaneField& field, const Vec3& x, double frame,
                       const VecX& grad_out, std::span<double> grad_params, Vec3* grad_x) {
    if (grad_out.size() != field.output_dims())
        throw ShapeMismatch("hexplane_backward: gradient length mismatch");
    if (grad_params.size() != field.parameters().size())
        throw ShapeMismatch("hexplane_backward: parameter gradient buffer mismatch");
    const Vec4 u = field.normalize(x, frame);
    const int d = field.config().channels;
    const auto params = field.parameters();

    std::array<PlaneSample, 6> loc;
    std::vector<double> samples(6 * d), others(6 * d);
    for (int l = 0; l < field.config().levels; ++l) {
        for (int k = 0; k < 6; ++k) {
            loc[k] = locate(field, l, k, u);
            sample_into(params, loc[k], d, samples.data() + k * d);
        }
        // Product of the other five samples, via prefix and suffix products.
        for (int c = 0; c < d; ++c) {
            double prefix = 1.0;
            for (int k = 0; k < 6; ++k) {
                others[k * d + c] = prefix;
                prefix *= samples[k * d + c];
            }
            double suffix = 1.0;
            for (int k = 5; k >= 0; --k) {
                others[k * d + c] *= suffix;
                suffix *= samples[k * d + c];
            }
        }
        for (int k = 0; k < 6; ++k) {
            const PlaneSample& s = loc[k];
            const auto w = s.st.weights();
            const std::array<std::size_t, 4> tex{
                s.offset + (static_cast<std::size_t>(s.st.y0) * s.cols + s.st.x0) * d,
                s.offset + (static_cast<std::size_t>(s.st.y0) * s.cols + s.st.x1) * d,
                s.offset + (static_cast<std::size_t>(s.st.y1) * s.cols + s.st.x0) * d,
                s.offset + (static_cast<std::size_t>(s.st.y1) * s.cols + s.st.x1) * d};
            double g_col = 0.0, g_row = 0.0; // d loss / d grid coordinate
            for (int c = 0; c < d; ++c) {
                const double g = grad_out[l * d + c] * others[k * d + c];
                if (g == 0.0) continue;
                for (int q = 0; q < 4; ++q) grad_params[tex[q] + c] += g * w[q];
                if (grad_x) {
                    const double f00 = params[tex[0] + c], f10 = params[tex[1] + c];
                    const double f01 = params[tex[2] + c], f11 = params[tex[3] + c];
                    if (s.st.x1 != s.st.x0)
                        g_col += g * ((1 - s.st.wy) * (f10 - f00) + s.st.wy * (f11 - f01));
                    if (s.st.y1 != s.st.y0)
                        g_row += g * ((1 - s.st.wx) * (f01 - f00) + s.st.wx * (f11 - f10));
                }
            }
            if (grad_x) {
                const auto& pair = HexPlaneField::kPairs[k];
                const auto& p = field.plane(l, k);
                const Vec3 ext = field.box().extent();
                if (pair[1] < 3) (*grad_x)[pair[1]] += g_col * (p.cols - 1) / ext[pair[1]];
                if (pair[0] < 3) (*grad_x)[pair[0]] += g_row * (p.rows - 1) / ext[pair[0]];
            }
        }
    }
}

Eigen::MatrixXd hexplane_interp_batch(const HexPlaneField& field, std::span<const Vec3> positions,
                                      double frame) {
    Eigen::MatrixXd out(field.output_dims(), static_cast<Eigen::Index>(positions.size()));
    const int n = static_cast<int>(positions.size());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) out.col(i) = hexplane_interp(field, positions[i], frame);
    return out;
}

Eigen::MatrixXd hexplane_interp_batch_serial(const HexPlaneField& field,
                                             std::span<const Vec3> positions, double frame) {
    Eigen::MatrixXd out(field.output_dims(), static_cast<Eigen::Index>(positions.size()));
    for (std::size_t i = 0; i < positions.size(); ++i)
        out.col(static_cast<Eigen::Index>(i)) = hexplane_interp(field, positions[i], frame);
    return out;
}

// ---------------------------------------------------------- feature video

void FeatureVideo::validate() const {
    if (cameras.size() != maps.size()) throw ShapeMismatch("FeatureVideo: camera count != view count");
    const int f = frames();
    const int d = dims();
    for (const auto& view : maps) {
        if (static_cast<int>(view.size()) != f) throw ShapeMismatch("FeatureVideo: ragged frames");
        for (const auto& m : view)
            if (m.dims() != d) throw ShapeMismatch("FeatureVideo: descriptor width differs");
    }
}

VisibilityMap VisibilityMap::build(const RenderScene& gaussians, const Camera& cam,
                                   double eps_depth, const RenderSettings& settings) {
    RenderSettings s = settings;
    s.hit_depth = true;
    VisibilityMap v;
    v.cam_ = cam;
    v.eps_ = eps_depth;
    v.hit_ = *render(gaussians, cam, s).hit_depth;
    return v;
}

bool VisibilityMap::visible(const Vec3& x) const {
    const Projection p = project_point(cam_, x);
    const long col = std::lround(p.u);
    const long row = std::lround(p.v);
    if (col < 0 || row < 0 || col >= cam_.width || row >= cam_.height) return true;
    return p.depth <= hit_.at(static_cast<int>(row), static_cast<int>(col)) + eps_;
}

RenderScene compose_geometry(const Gaussian4DState& state) {
    RenderScene s;
    s.resize(state.base.size(), 1);
    for (std::size_t i = 0; i < state.base.size(); ++i) {
        const Gaussian3D& g = state.base[i];
        const Vec3 dx = i < state.delta_position.size() ? state.delta_position[i] : Vec3::Zero();
        const Vec4 dr = i < state.delta_rotation.size() ? state.delta_rotation[i] : Vec4::Zero();
        const Vec3 ds = i < state.delta_scale.size() ? state.delta_scale[i] : Vec3::Zero();
        const DeformedGaussian d = apply_deformation(g, dx, dr, ds, Vec3::Zero());
        s.positions[i] = d.position;
        s.rotations[i] = d.rotation;
        s.scales[i] = d.scale;
        s.opacities[i] = d.opacity;
    }
    return s;
}

bool visibility_check(const Gaussian4DState& gaussians, const Camera& cam, const Vec3& x,
                      double eps_depth, const RenderSettings& settings) {
    return VisibilityMap::build(compose_geometry(gaussians), cam, eps_depth, settings).visible(x);
}

namespace {

// Mean over visible views of one integer frame.
FeatureSample sample_frame(const FeatureVideo& fv, std::span<const VisibilityMap> vis,
                           const Vec3& x, int frame) {
    FeatureSample out;
    out.value = VecX::Zero(fv.dims());
    for (int v = 0; v < fv.views(); ++v) {
        const Camera& cam = fv.cameras[v];
        const Vec3 c = cam.to_camera(x);
        if (!(c.z() > kMinProjectDepth)) continue;
        const Projection p = project_point(cam, x);
        if (p.u < -0.5 || p.v < -0.5 || p.u > cam.width - 0.5 || p.v > cam.height - 0.5) continue;
        if (!vis[v].visible(x)) continue;
        const FeatureMap& m = fv.maps[v][frame];
        const Dims2 feat{m.width(), m.height()};
        const Vec2 q = clamp_to_map(pixel_to_feature_coords({p.u, p.v}, {cam.width, cam.height}, feat), feat);
        out.value += bilinear_sample(m, q);
        ++out.views_used;
    }
    if (out.views_used > 0) out.value /= out.views_used;
    out.occluded = out.views_used == 0;
    return out;
}

} // namespace

FeatureSample feature_plane_sample(const FeatureVideo& fv, std::span<const VisibilityMap> vis,
                                   const Vec3& x, double frame) {
    if (static_cast<int>(vis.size()) != fv.views())
        throw ShapeMismatch("feature_plane_sample: one visibility map per view required");
    if (!(frame >= 0.0 && frame <= fv.frames() - 1))
        throw InvalidArgument("feature_plane_sample: frame out of range");
    const int f0 = static_cast<int>(std::floor(frame));
    const double w = frame - f0;
    FeatureSample a = sample_frame(fv, vis, x, f0);
    if (w == 0.0 || f0 + 1 >= fv.frames()) return a;
    const FeatureSample b = sample_frame(fv, vis, x, f0 + 1);
    a.value = (1.0 - w) * a.value + w * b.value;
    a.views_used = std::max(a.views_used, b.views_used);
    a.occluded = a.occluded && b.occluded;
    return a;
}

FeatureSample feature_plane_sample(const FeatureVideo& fv, const Gaussian4DState& gaussians,
                                   const Vec3& x, double frame, double eps_depth) {
    const RenderScene geom = compose_geometry(gaussians);
    std::vector<VisibilityMap> vis;
    for (const Camera& cam : fv.cameras) vis.push_back(VisibilityMap::build(geom, cam, eps_depth));
    return feature_plane_sample(fv, vis, x, frame);
}

VecX hybrid_feature(const HexPlaneField& field, const FeatureVideo& fv,
                    std::span<const VisibilityMap> visibility, const Vec3& x, double frame) {
    const VecX h = hexplane_interp(field, x, frame);
    const VecX d = feature_plane_sample(fv, visibility, x, frame).value;
    VecX out(h.size() + d.size());
    out << h, d;
    return out;
}

Eigen::MatrixXd FeatureCache::at(double frame) const {
    if (per_frame.empty()) return {};
    const double f = std::clamp(frame, 0.0, static_cast<double>(frames() - 1));
    const int f0 = static_cast<int>(std::floor(f));
    const double w = f - f0;
    if (w == 0.0 || f0 + 1 >= frames()) return per_frame[f0];
    return (1.0 - w) * per_frame[f0] + w * per_frame[f0 + 1];
}

FeatureCache build_feature_cache(const FeatureVideo& fv, std::span<const VisibilityMap> visibility,
                                 std::span<const Vec3> positions) {
    FeatureCache cache;
    cache.dims = fv.dims();
    const int n = static_cast<int>(positions.size());
    cache.per_frame.assign(fv.frames(), Eigen::MatrixXd::Zero(cache.dims, n));
    cache.occluded.assign(fv.frames(), std::vector<char>(n, 0));
    for (int f = 0; f < fv.frames(); ++f) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) {
            const FeatureSample s = sample_frame(fv, visibility, positions[i], f);
            cache.per_frame[f].col(i) = s.value;
            cache.occluded[f][i] = s.occluded;
        }
    }
    return cache;
}

// ---------------------------------------------------------------- decoder

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Eigen::MatrixXd silu(const Eigen::MatrixXd& z) {
    return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

Eigen::MatrixXd silu_grad(const Eigen::MatrixXd& z) {
    return z.unaryExpr([](double v) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
    });
}

} // namespace

void DeformationDecoder::build_layout() {
    std::size_t o = 0;
    auto take = [&o](std::size_t n) {
        const std::size_t at = o;
        o += n;
        return at;
    };
    const std::size_t h = hidden_;
    layout_.trunk_w = take(h * in_dim_);
    layout_.trunk_b = take(h);
    for (int k = 0; k < 3; ++k) {
        layout_.w1[k] = take(h * h);
        layout_.b1[k] = take(h);
        layout_.w2[k] = take(static_cast<std::size_t>(kHeadDims[k]) * h);
        layout_.b2[k] = take(kHeadDims[k]);
    }
    layout_.total = o;
}

DeformationDecoder::DeformationDecoder(int in_dim, int hidden, std::uint64_t seed)
    : in_dim_(in_dim), hidden_(hidden) {
    if (in_dim < 1 || hidden < 1) throw InvalidArgument("DeformationDecoder: sizes must be >= 1");
    build_layout();
    params_.assign(layout_.total, 0.0);
    Rng rng(seed);
    auto fill = [&](std::size_t at, std::size_t n, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < n; ++i) params_[at + i] = rng.uniform(-bound, bound);
    };
    fill(layout_.trunk_w, static_cast<std::size_t>(hidden) * in_dim, in_dim);
    fill(layout_.trunk_b, hidden, in_dim);
    for (int k = 0; k < 3; ++k) {
        fill(layout_.w1[k], static_cast<std::size_t>(hidden) * hidden, hidden);
        fill(layout_.b1[k], hidden, hidden);
    }
}

DeformationDecoder::Cache DeformationDecoder::forward(const Eigen::MatrixXd& features) const {
    if (features.rows() != in_dim_) throw ShapeMismatch("decoder input width mismatch");
    Cache c;
    c.trunk_pre = (trunk_w() * features).colwise() + trunk_b();
    c.trunk_act = silu(c.trunk_pre);
    for (int k = 0; k < 3; ++k) {
        c.head_pre[k] = (head_w1(k) * c.trunk_act).colwise() + head_b1(k);
        c.head_act[k] = silu(c.head_pre[k]);
        c.out[k] = (head_w2(k) * c.head_act[k]).colwise() + head_b2(k);
    }
    return c;
}

Eigen::MatrixXd DeformationDecoder::backward(const Eigen::MatrixXd& features, const Cache& c,
                                             const std::array<Eigen::MatrixXd, 3>& grad_out,
                                             std::span<double> grad) const {
    if (grad.size() != params_.size()) throw ShapeMismatch("decoder gradient buffer mismatch");
    Eigen::MatrixXd g_trunk_act = Eigen::MatrixXd::Zero(hidden_, features.cols());
    for (int k = 0; k < 3; ++k) {
        const Eigen::MatrixXd& go = grad_out[k];
        MatMap(grad.data() + layout_.w2[k], kHeadDims[k], hidden_) += go * c.head_act[k].transpose();
        VecMap(grad.data() + layout_.b2[k], kHeadDims[k]) += go.rowwise().sum();
        const Eigen::MatrixXd g_pre =
            (head_w2(k).transpose() * go).cwiseProduct(silu_grad(c.head_pre[k]));
        MatMap(grad.data() + layout_.w1[k], hidden_, hidden_) += g_pre * c.trunk_act.transpose();
        VecMap(grad.data() + layout_.b1[k], hidden_) += g_pre.rowwise().sum();
        g_trunk_act += head_w1(k).transpose() * g_pre;
    }
    const Eigen::MatrixXd g_pre = g_trunk_act.cwiseProduct(silu_grad(c.trunk_pre));
    MatMap(grad.data() + layout_.trunk_w, hidden_, in_dim_) += g_pre * features.transpose();
    VecMap(grad.data() + layout_.trunk_b, hidden_) += g_pre.rowwise().sum();
    return trunk_w().transpose() * g_pre;
}

DecoderDeltas deform_decode(const DeformationDecoder& dec, const VecX& features) {
    if (features.size() != dec.in_dim()) throw ShapeMismatch("deform_decode: feature width mismatch");
    const Eigen::MatrixXd f = features;
    const auto c = dec.forward(f);
    DecoderDeltas d;
    d.position = c.out[0].col(0);
    d.rotation = c.out[1].col(0);
    d.scale = c.out[2].col(0);
    return d;
}

DeformedGaussian apply_deformation(const Gaussian3D& g, const Vec3& dx, const Vec4& dr,
                                   const Vec3& ds, const Vec3& c4d) {
    DeformedGaussian d;
    d.position = g.position + dx;
    d.rotation = quat_normalize(g.rotation + dr);
    d.scale = (g.scale + ds).cwiseMax(kMinScale);
    d.opacity = g.opacity;
    d.color = c4d;
    return d;
}

} // namespace t4d
