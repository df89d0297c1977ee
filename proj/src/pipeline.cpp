#include "t4d/pipeline.hpp"

#include <algorithm>

namespace t4d {

namespace {

void snap(std::span<double> v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

} // namespace

DynamicModel DynamicModel::create(std::vector<Gaussian3D> canonical, const FeatureVideo* video,
                                  int n_frames, const ModelConfig& config, std::uint64_t seed) {
    if (canonical.empty()) throw TooFewGaussians("model needs at least one Gaussian");
    DynamicModel m;
    m.canonical = std::move(canonical);
    m.n_frames = n_frames;
    m.render = config.render;
    const auto pos = m.canonical_positions();
    m.hex = HexPlaneField::initialized(config.hex, BoundingBox::around(pos, config.bbox_margin),
                                       n_frames, seed);
    m.attach_features(video);
    m.decoder = DeformationDecoder(m.input_dims(), config.hidden, seed ^ 0x9e3779b97f4a7c15ULL);
    m.snap_to_float();
    return m;
}

void DynamicModel::attach_features(const FeatureVideo* video) {
    features = {};
    feature_dims = 0;
    if (!video || video->views() == 0) return;
    video->validate();
    if (video->frames() != n_frames)
        throw ShapeMismatch("feature video frame count differs from the model");
    feature_dims = video->dims();
    RenderScene geom;
    geom.resize(canonical.size(), 1);
    for (std::size_t i = 0; i < canonical.size(); ++i) {
        geom.positions[i] = canonical[i].position;
        geom.rotations[i] = canonical[i].rotation;
        geom.scales[i] = canonical[i].scale;
        geom.opacities[i] = canonical[i].opacity;
    }
    const double eps = 0.01 * hex.box().diagonal();
    std::vector<VisibilityMap> vis;
    for (const Camera& cam : video->cameras) vis.push_back(VisibilityMap::build(geom, cam, eps, render));
    features = build_feature_cache(*video, vis, canonical_positions());
}

std::vector<Vec3> DynamicModel::canonical_positions() const {
    std::vector<Vec3> p;
    p.reserve(canonical.size());
    for (const auto& g : canonical) p.push_back(g.position);
    return p;
}

Eigen::MatrixXd DynamicModel::features_at(double frame) const {
    const auto pos = canonical_positions();
    const Eigen::MatrixXd h = hexplane_interp_batch(hex, pos, frame);
    if (feature_dims == 0) return h;
    Eigen::MatrixXd f(input_dims(), h.cols());
    f.topRows(h.rows()) = h;
    f.bottomRows(feature_dims) = features.at(frame);
    return f;
}

std::size_t DynamicModel::sh_size() const {
    std::size_t n = 0;
    for (const auto& g : canonical) n += g.sh.size();
    return n;
}

std::vector<double> DynamicModel::sh_flat() const {
    std::vector<double> w;
    w.reserve(sh_size());
    for (const auto& g : canonical) w.insert(w.end(), g.sh.weights().begin(), g.sh.weights().end());
    return w;
}

void DynamicModel::set_sh_flat(std::span<const double> w) {
    if (w.size() != sh_size()) throw ShapeMismatch("SH weight count differs from the model");
    std::size_t o = 0;
    for (auto& g : canonical) {
        auto dst = g.sh.weights();
        std::copy_n(w.begin() + o, dst.size(), dst.begin());
        o += dst.size();
    }
}

void DynamicModel::snap_to_float() {
    snap(hex.parameters());
    snap(decoder.parameters());
    for (auto& g : canonical) snap(g.sh.weights());
}

// ------------------------------------------------------------------ forward

FrameState deform(const DynamicModel& model, double frame) {
    FrameState s;
    s.frame = frame;
    s.features = model.features_at(frame);
    s.cache = model.decoder.forward(s.features);
    const std::size_t n = model.canonical.size();
    s.positions.resize(n);
    s.rotations.resize(n);
    s.scales.resize(n);
    s.scale_free.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        const Gaussian3D& g = model.canonical[i];
        s.positions[i] = g.position + s.cache.out[0].col(c);
        s.rotations[i] = g.rotation + s.cache.out[1].col(c);
        const Vec3 raw = g.scale + s.cache.out[2].col(c);
        for (int a = 0; a < 3; ++a) {
            s.scale_free[i][a] = raw[a] > kMinScale;
            s.scales[i][a] = std::max(raw[a], kMinScale);
        }
    }
    return s;
}

RenderScene shade(const DynamicModel& model, const FrameState& state, const Camera& cam,
                  std::vector<ColorEval>* evals) {
    const std::size_t n = model.canonical.size();
    RenderScene scene;
    scene.resize(n, 3);
    scene.positions = state.positions;
    scene.rotations = state.rotations;
    scene.scales = state.scales;
    if (evals) evals->resize(n);
    const Vec3 eye = cam.center();
    for (std::size_t i = 0; i < n; ++i) {
        scene.opacities[i] = model.canonical[i].opacity;
        const ColorEval e = eval_color_view(model.canonical[i].sh, state.positions[i] - eye, state.frame);
        for (int q = 0; q < 3; ++q) scene.color(i)[q] = e.rgb[q];
        if (evals) (*evals)[i] = e;
    }
    return scene;
}

RenderOutput render_model(const DynamicModel& model, double frame, const Camera& cam) {
    return render(shade(model, deform(model, frame), cam), cam, model.render);
}

// ------------------------------------------------------------------ reverse

void ModelGrads::reset(const DynamicModel& model) {
    hex.assign(model.hex.parameters().size(), 0.0);
    decoder.assign(model.decoder.parameters().size(), 0.0);
    sh.assign(model.sh_size(), 0.0);
}

void ModelGrads::add(const ModelGrads& o) {
    for (std::size_t i = 0; i < hex.size(); ++i) hex[i] += o.hex[i];
    for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i] += o.decoder[i];
    for (std::size_t i = 0; i < sh.size(); ++i) sh[i] += o.sh[i];
}

void GeometryGrads::reset(std::size_t n) {
    positions.assign(n, Vec3::Zero());
    rotations.assign(n, Vec4::Zero());
    scales.assign(n, Vec3::Zero());
}

void accumulate_view(const DynamicModel& model, const FrameState&, const Camera&,
                     const std::vector<ColorEval>& evals, const RenderGrads& rg, GeometryGrads& geo,
                     ModelGrads& grads) {
    std::size_t sh_offset = 0;
    for (std::size_t i = 0; i < model.canonical.size(); ++i) {
        const SH4DCoeffs& sh = model.canonical[i].sh;
        const Vec3 g_rgb(rg.colors[3 * i], rg.colors[3 * i + 1], rg.colors[3 * i + 2]);
        geo.positions[i] += rg.positions[i];
        geo.rotations[i] += rg.rotations[i];
        geo.scales[i] += rg.scales[i];
        if (g_rgb != Vec3::Zero()) {
            std::span<double> gw(grads.sh.data() + sh_offset, sh.size());
            geo.positions[i] += eval_color_view_backward(sh, evals[i], g_rgb, gw);
        }
        sh_offset += sh.size();
    }
}

void backprop_deform(const DynamicModel& model, const FrameState& state, const GeometryGrads& geo,
                     ModelGrads& grads) {
    const auto n = static_cast<Eigen::Index>(model.canonical.size());
    std::array<Eigen::MatrixXd, 3> g_out{Eigen::MatrixXd(3, n), Eigen::MatrixXd(4, n),
                                         Eigen::MatrixXd(3, n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        g_out[0].col(i) = geo.positions[i];
        g_out[1].col(i) = geo.rotations[i];
        for (int a = 0; a < 3; ++a) g_out[2](a, i) = state.scale_free[i][a] ? geo.scales[i][a] : 0.0;
    }
    const Eigen::MatrixXd g_f = model.decoder.backward(state.features, state.cache, g_out, grads.decoder);
    const int hd = model.hex.output_dims();
    for (Eigen::Index i = 0; i < n; ++i) {
        const VecX g = g_f.col(i).head(hd);
        if (g.isZero(0.0)) continue;
        hexplane_backward(model.hex, model.canonical[i].position, state.frame, g, grads.hex);
    }
}

} // namespace t4d
