#include "t4d/harness.hpp"

#include "t4d/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace t4d {

namespace {

template <typename E>
struct Named {
    E value;
    const char* name;
};

constexpr Named<ObjectPreset> kObjects[] = {{ObjectPreset::SphereShell, "sphere-shell"},
                                           {ObjectPreset::TwoBlob, "two-blob"},
                                           {ObjectPreset::Ring, "ring"}};
constexpr Named<MotionPreset> kMotions[] = {{MotionPreset::Static, "static"},
                                           {MotionPreset::RigidTranslate, "rigid-translate"},
                                           {MotionPreset::RigidRotate, "rigid-rotate"},
                                           {MotionPreset::TwoPart, "two-part"},
                                           {MotionPreset::SinusoidalBend, "sinusoidal-bend"}};
constexpr Named<FeatureMode> kFeatureModes[] = {{FeatureMode::Rendered, "rendered"},
                                               {FeatureMode::FromFile, "file"},
                                               {FeatureMode::None, "none"}};

template <typename E, std::size_t N>
E parse_named(const Named<E> (&table)[N], const std::string& s, const char* what) {
    for (const auto& e : table)
        if (s == e.name) return e.value;
    std::string options;
    for (const auto& e : table) options += std::string(options.empty() ? "" : ", ") + e.name;
    throw InvalidArgument(std::string("unknown ") + what + " '" + s + "' (expected " + options + ")");
}

template <typename E, std::size_t N>
std::string name_of(const Named<E> (&table)[N], E v) {
    for (const auto& e : table)
        if (e.value == v) return e.name;
    return "?";
}

Vec4 to_wxyz(const Eigen::Quaterniond& q) { return {q.w(), q.x(), q.y(), q.z()}; }

double snap_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

Vec3 random_unit(Rng& rng) {
    Vec3 v;
    do {
        v = Vec3(rng.normal(), rng.normal(), rng.normal());
    } while (v.norm() < 1e-6);
    return v.normalized();
}

} // namespace

std::string to_string(ObjectPreset p) { return name_of(kObjects, p); }
std::string to_string(MotionPreset p) { return name_of(kMotions, p); }
std::string to_string(FeatureMode m) { return name_of(kFeatureModes, m); }

// ------------------------------------------------------------ SceneSpec

SceneSpec SceneSpec::from_config(const Config& c) {
    c.require_known({"scene.object", "scene.gaussians", "scene.seed", "scene.sh_degree",
                     "scene.sh_terms", "motion.preset", "motion.amplitude", "render.frames",
                     "render.views", "render.heldout_views", "render.radius", "render.elevation",
                     "render.heldout_elevation", "render.width", "render.height", "render.focal",
                     "features.mode", "features.dims", "features.downsample", "features.dir",
                     "tracks.grid"});
    SceneSpec s;
    s.object = parse_named(kObjects, c.get("scene.object", to_string(s.object)), "object preset");
    s.gaussians = c.get_int("scene.gaussians", s.gaussians);
    s.seed = c.get_u64("scene.seed", s.seed);
    s.sh_degree = c.get_int("scene.sh_degree", s.sh_degree);
    s.sh_terms = c.get_int("scene.sh_terms", s.sh_terms);
    s.motion = parse_named(kMotions, c.get("motion.preset", to_string(s.motion)), "motion preset");
    s.amplitude = c.get_double("motion.amplitude", s.amplitude);
    s.frames = c.get_int("render.frames", s.frames);
    s.views = c.get_int("render.views", s.views);
    s.heldout_views = c.get_int("render.heldout_views", s.heldout_views);
    s.radius = c.get_double("render.radius", s.radius);
    s.elevation = c.get_double("render.elevation", s.elevation);
    s.heldout_elevation = c.get_double("render.heldout_elevation", s.heldout_elevation);
    s.width = c.get_int("render.width", s.width);
    s.height = c.get_int("render.height", s.height);
    s.focal = c.get_double("render.focal", s.focal);
    s.feature_mode = parse_named(kFeatureModes, c.get("features.mode", to_string(s.feature_mode)),
                                 "feature mode");
    s.feature_dims = c.get_int("features.dims", s.feature_dims);
    s.feature_downsample = c.get_int("features.downsample", s.feature_downsample);
    s.feature_dir = c.get("features.dir", s.feature_dir);
    s.query_grid = c.get_int("tracks.grid", s.query_grid);
    s.validate();
    return s;
}

Config SceneSpec::to_config() const {
    Config c;
    auto num = [](double v) {
        std::ostringstream o;
        o.precision(17);
        o << v;
        return o.str();
    };
    c.set("scene.object", to_string(object));
    c.set("scene.gaussians", std::to_string(gaussians));
    c.set("scene.seed", std::to_string(seed));
    c.set("scene.sh_degree", std::to_string(sh_degree));
    c.set("scene.sh_terms", std::to_string(sh_terms));
    c.set("motion.preset", to_string(motion));
    c.set("motion.amplitude", num(amplitude));
    c.set("render.frames", std::to_string(frames));
    c.set("render.views", std::to_string(views));
    c.set("render.heldout_views", std::to_string(heldout_views));
    c.set("render.radius", num(radius));
    c.set("render.elevation", num(elevation));
    c.set("render.heldout_elevation", num(heldout_elevation));
    c.set("render.width", std::to_string(width));
    c.set("render.height", std::to_string(height));
    c.set("render.focal", num(focal));
    c.set("features.mode", to_string(feature_mode));
    c.set("features.dims", std::to_string(feature_dims));
    c.set("features.downsample", std::to_string(feature_downsample));
    if (!feature_dir.empty()) c.set("features.dir", feature_dir);
    c.set("tracks.grid", std::to_string(query_grid));
    return c;
}

void SceneSpec::validate() const {
    if (gaussians < 1) throw InvalidArgument("scene.gaussians must be >= 1");
    if (frames < 1) throw InvalidArgument("render.frames must be >= 1");
    if (views < 1) throw InvalidArgument("render.views must be >= 1");
    if (heldout_views < 0) throw InvalidArgument("render.heldout_views must be >= 0");
    if (width < 1 || height < 1) throw InvalidArgument("render.width and render.height must be >= 1");
    if (!(focal > 0.0)) throw InvalidArgument("render.focal must be > 0");
    if (!(radius > 0.0)) throw InvalidArgument("render.radius must be > 0");
    if (!std::isfinite(amplitude)) throw InvalidArgument("motion.amplitude must be finite");
    if (sh_degree < 0 || sh_degree > kMaxRenderShDegree)
        throw InvalidArgument("scene.sh_degree must be in [0, 3]");
    if (sh_terms < 1) throw InvalidArgument("scene.sh_terms must be >= 1");
    if (feature_dims < 1) throw InvalidArgument("features.dims must be >= 1");
    if (feature_downsample < 1) throw InvalidArgument("features.downsample must be >= 1");
    if (feature_mode == FeatureMode::FromFile && feature_dir.empty())
        throw InvalidArgument("features.mode = file needs features.dir");
    if (query_grid < 1) throw InvalidArgument("tracks.grid must be >= 1");
}

// ------------------------------------------------------------- motion

MotionFunction::MotionFunction(MotionPreset preset, double amplitude, int frames, Vec3 centre,
                               double half_width, std::vector<int> part)
    : preset_(preset), amplitude_(amplitude), frames_(frames), centre_(centre),
      half_width_(half_width), part_(std::move(part)) {}

Pose MotionFunction::at(std::size_t index, const Gaussian3D& g, double frame) const {
    const double s = frames_ > 1 ? frame / (frames_ - 1) : 0.0;
    Pose p{g.position, g.rotation, g.scale};
    auto rotate_about = [&](const Vec3& axis, const Vec3& pivot, double angle) {
        const Vec4 q = quat_from_axis_angle(axis, angle);
        p.position = pivot + quat_to_rotation(q) * (g.position - pivot);
        p.rotation = quat_normalize(quat_multiply(q, g.rotation));
    };
    switch (preset_) {
    case MotionPreset::Static:
        break;
    case MotionPreset::RigidTranslate:
        p.position = g.position + amplitude_ * s * Vec3::UnitX();
        break;
    case MotionPreset::RigidRotate:
        rotate_about(Vec3::UnitZ(), centre_, amplitude_ * s);
        break;
    case MotionPreset::TwoPart:
        if (part(index) == 1) rotate_about(Vec3::UnitY(), centre_, amplitude_ * s);
        break;
    case MotionPreset::SinusoidalBend: {
        const double u = (g.position.x() - centre_.x()) / half_width_;
        p.position = g.position + Vec3::UnitZ() * amplitude_ * std::sin(std::numbers::pi * s) * u * u;
        break;
    }
    }
    return p;
}

// -------------------------------------------------------------- scenes

SynthScene synth_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    SynthScene out;
    const int n = spec.gaussians;
    std::vector<int> part(n, 0);
    out.gaussians.resize(n);
    for (int i = 0; i < n; ++i) {
        Gaussian3D& g = out.gaussians[i];
        switch (spec.object) {
        case ObjectPreset::SphereShell: {
            const Vec3 normal = random_unit(rng);
            g.position = normal;
            const double sigma = 0.5 * std::sqrt(4.0 * std::numbers::pi / n);
            g.scale = Vec3(sigma, sigma, 0.35 * sigma);
            g.rotation = to_wxyz(Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), normal));
            part[i] = normal.x() > 0.0 ? 1 : 0;
            break;
        }
        case ObjectPreset::TwoBlob: {
            part[i] = i % 2;
            const Vec3 centre((part[i] ? 0.55 : -0.55), 0.0, 0.0);
            Vec3 off;
            do {
                off = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
            } while (off.norm() > 1.0);
            g.position = centre + 0.42 * off;
            const double spacing = std::cbrt(2.0 * 4.0 / 3.0 * std::numbers::pi * std::pow(0.45, 3) / n);
            g.scale = Vec3::Constant(0.75 * spacing);
            g.rotation = quat_normalize(Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
            break;
        }
        case ObjectPreset::Ring: {
            const double a = 2.0 * std::numbers::pi * (i + rng.uniform(-0.3, 0.3)) / n;
            const double b = 2.0 * std::numbers::pi * rng.uniform();
            const Vec3 radial(std::cos(a), std::sin(a), 0.0);
            g.position = 0.9 * radial + 0.18 * (std::cos(b) * radial + std::sin(b) * Vec3::UnitZ());
            const double spacing = 2.0 * std::numbers::pi * 0.9 / n;
            g.scale = Vec3(0.8 * spacing, 0.8 * spacing, 0.2);
            g.rotation = quat_from_axis_angle(Vec3::UnitZ(), a);
            part[i] = g.position.x() > 0.0 ? 1 : 0;
            break;
        }
        }
        g.opacity = rng.uniform(0.75, 0.95);
        const Vec3 rgb(rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95));
        g.sh = SH4DCoeffs::from_rgb(rgb, spec.sh_degree, spec.sh_terms, spec.frames);
        // Learnable weights are stored as f32, so the ground truth starts representable.
        for (double& w : g.sh.weights()) w = snap_f32(w);
        g.validate();
    }
    out.descriptors.resize(n);
    for (int i = 0; i < n; ++i) {
        VecX d(spec.feature_dims);
        for (int c = 0; c < spec.feature_dims; ++c) d[c] = rng.normal();
        out.descriptors[i] = d.normalized();
    }
    std::vector<Vec3> pos;
    for (const auto& g : out.gaussians) pos.push_back(g.position);
    const BoundingBox box = BoundingBox::around(pos, 0.0);
    const Vec3 centre = 0.5 * (box.min + box.max);
    out.motion = MotionFunction(spec.motion, spec.amplitude, spec.frames, centre,
                                std::max(1e-6, 0.5 * box.extent().x()), part);
    return out;
}

std::vector<CameraRecord> rig_cameras(const SceneSpec& spec) {
    std::vector<CameraRecord> cams;
    const double cx = 0.5 * spec.width - 0.5, cy = 0.5 * spec.height - 0.5;
    auto make = [&](double azimuth, double elevation_deg, bool heldout) {
        const double el = elevation_deg * std::numbers::pi / 180.0;
        const Vec3 eye(spec.radius * std::cos(el) * std::cos(azimuth),
                       spec.radius * std::cos(el) * std::sin(azimuth), spec.radius * std::sin(el));
        cams.push_back({Camera::look_at(eye, Vec3::Zero(), Vec3::UnitZ(), spec.focal, spec.focal, cx,
                                        cy, spec.width, spec.height),
                        heldout});
    };
    for (int i = 0; i < spec.views; ++i) make(2.0 * std::numbers::pi * i / spec.views, spec.elevation, false);
    for (int i = 0; i < spec.heldout_views; ++i)
        make(2.0 * std::numbers::pi * (i + 0.5) / std::max(1, spec.heldout_views) + 0.3,
             spec.heldout_elevation, true);
    return cams;
}

RenderScene posed_scene(const SynthScene& scene, double frame, const Camera* rgb_camera) {
    const std::size_t n = scene.gaussians.size();
    RenderScene s;
    s.resize(n, rgb_camera ? 3 : static_cast<int>(scene.descriptors.front().size()));
    for (std::size_t i = 0; i < n; ++i) {
        const Gaussian3D& g = scene.gaussians[i];
        const Pose p = scene.motion.at(i, g, frame);
        s.positions[i] = p.position;
        s.rotations[i] = p.rotation;
        s.scales[i] = p.scale;
        s.opacities[i] = g.opacity;
        if (rgb_camera) {
            const ColorEval e = eval_color_view(g.sh, p.position - rgb_camera->center(), frame);
            for (int q = 0; q < 3; ++q) s.color(i)[q] = e.rgb[q];
        } else {
            for (int q = 0; q < s.channels; ++q) s.color(i)[q] = scene.descriptors[i][q];
        }
    }
    return s;
}

// ------------------------------------------------------------- dataset

std::vector<int> Dataset::train_views() const {
    std::vector<int> v;
    for (std::size_t i = 0; i < cameras.size(); ++i)
        if (!cameras[i].heldout) v.push_back(static_cast<int>(i));
    return v;
}

std::vector<int> Dataset::heldout_views() const {
    std::vector<int> v;
    for (std::size_t i = 0; i < cameras.size(); ++i)
        if (cameras[i].heldout) v.push_back(static_cast<int>(i));
    return v;
}

FeatureVideo Dataset::feature_video(const std::vector<int>& cams) const {
    FeatureVideo fv;
    if (features.empty()) return fv;
    for (int c : cams) {
        const FeatureMap& m0 = features[c].front();
        fv.cameras.push_back(cameras[c].camera.rescaled(m0.width(), m0.height()));
        fv.maps.push_back(features[c]);
    }
    return fv;
}

TrainingData Dataset::training() const {
    TrainingData t;
    const auto views = train_views();
    for (int v : views) {
        t.cameras.push_back(cameras[v].camera);
        t.rgb.push_back(rgb[v]);
        t.mask.push_back(mask[v]);
    }
    t.features = feature_video(views);
    return t;
}

TrackSet ground_truth_tracks(const SynthScene& scene, const Dataset& d, int grid_n) {
    const auto views = d.train_views();
    const int f = d.frames();
    // Depth maps of every frame for every training view.
    std::vector<Vec3> pos;
    for (const auto& g : scene.gaussians) pos.push_back(g.position);
    const double eps = 0.01 * BoundingBox::around(pos, 0.0).diagonal();
    std::vector<RenderScene> geoms;
    for (int j = 0; j < f; ++j) geoms.push_back(posed_scene(scene, j, nullptr));

    TrackSet set(views.size());
    for (std::size_t vi = 0; vi < views.size(); ++vi) {
        const Camera& cam = d.cameras[views[vi]].camera;
        std::vector<VisibilityMap> vis;
        for (int j = 0; j < f; ++j) vis.push_back(VisibilityMap::build(geoms[j], cam, eps));
        const auto queries = sample_query_grid(d.mask[views[vi]][0], grid_n, static_cast<int>(vi));
        int id = 0;
        for (const QueryPoint& q : queries) {
            const int col = std::clamp(static_cast<int>(std::lround(q.p.x())), 0, cam.width - 1);
            const int row = std::clamp(static_cast<int>(std::lround(q.p.y())), 0, cam.height - 1);
            const int g = dominant_gaussian(geoms[0], cam, col, row);
            if (g < 0) continue;
            Track t;
            t.view = static_cast<int>(vi);
            t.id = id++;
            const Projection p0 = project_point(cam, geoms[0].positions[g]);
            for (int j = 0; j < f; ++j) {
                const Vec3& x = geoms[j].positions[g];
                const Projection pj = project_point(cam, x);
                t.positions.push_back(q.p + Vec2(pj.u - p0.u, pj.v - p0.v));
                t.visible.push_back(vis[j].visible(x) ? 1 : 0);
            }
            set[vi].push_back(std::move(t));
        }
    }
    return set;
}

Dataset render_dataset(const SynthScene& scene, const SceneSpec& spec) {
    spec.validate();
    Dataset d;
    d.spec = spec.to_config();
    d.cameras = rig_cameras(spec);
    d.canonical = scene.gaussians;
    const int f = spec.frames;
    const std::size_t nc = d.cameras.size();
    d.rgb.assign(nc, std::vector<ImagePlane>(f));
    d.mask.assign(nc, std::vector<ImagePlane>(f));
    if (spec.feature_mode != FeatureMode::None) d.features.assign(nc, std::vector<FeatureMap>(f));

    d.motion.positions.resize(f);
    d.motion.rotations.resize(f);
    d.motion.scales.resize(f);
    for (int j = 0; j < f; ++j)
        for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
            const Pose p = scene.motion.at(i, scene.gaussians[i], j);
            d.motion.positions[j].push_back(p.position);
            d.motion.rotations[j].push_back(p.rotation);
            d.motion.scales[j].push_back(p.scale);
        }

    const int fw = std::max(1, spec.width / spec.feature_downsample);
    const int fh = std::max(1, spec.height / spec.feature_downsample);
    for (int j = 0; j < f; ++j) {
        const RenderScene geom = spec.feature_mode == FeatureMode::Rendered
                                     ? posed_scene(scene, j, nullptr)
                                     : RenderScene{};
        for (std::size_t c = 0; c < nc; ++c) {
            const Camera& cam = d.cameras[c].camera;
            RenderOutput out = render(posed_scene(scene, j, &cam), cam);
            d.rgb[c][j] = std::move(out.color);
            d.mask[c][j] = std::move(out.alpha);
            if (spec.feature_mode == FeatureMode::Rendered) {
                const Camera fcam = cam.rescaled(fw, fh);
                ImagePlane fm = render(geom, fcam).color;
                d.features[c][j] = FeatureMap(std::move(fm), j, static_cast<int>(c));
            } else if (spec.feature_mode == FeatureMode::FromFile) {
                const fs::path p = fs::path(spec.feature_dir) / ("cam_" + std::to_string(c)) /
                                   ("feat_" + std::to_string(j) + ".imgf");
                d.features[c][j] = FeatureMap(read_imgf(p, ChannelKind::Feature), j, static_cast<int>(c));
            }
        }
    }
    d.tracks = ground_truth_tracks(scene, d, spec.query_grid);
    return d;
}

// ----------------------------------------------------------- directory

void write_dataset(const Dataset& d, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_text(dir / "dataset.ini", d.spec.dump());
    write_cameras_csv(dir / "cameras.csv", d.cameras);
    write_gaussians(dir / "gaussians.bin", d.canonical);
    write_motion_csv(dir / "gt_motion.csv", d.motion);
    write_tracks(dir / "tracks.txt", d.tracks);
    for (std::size_t c = 0; c < d.cameras.size(); ++c) {
        const fs::path cd = dir / ("cam_" + std::to_string(c));
        fs::create_directories(cd, ec);
        if (ec) throw IoError("cannot create " + cd.string() + ": " + ec.message());
        for (int j = 0; j < d.frames(); ++j) {
            const std::string js = std::to_string(j);
            write_png(cd / ("frame_" + js + ".png"), d.rgb[c][j]);
            write_imgf(cd / ("frame_" + js + ".imgf"), d.rgb[c][j]);
            write_imgf(cd / ("mask_" + js + ".imgf"), d.mask[c][j]);
            if (!d.features.empty()) write_imgf(cd / ("feat_" + js + ".imgf"), d.features[c][j].plane());
        }
    }
}

Dataset read_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
    Dataset d;
    d.spec = Config::load(dir / "dataset.ini");
    const SceneSpec spec = SceneSpec::from_config(d.spec);
    d.cameras = read_cameras_csv(dir / "cameras.csv");
    d.canonical = read_gaussians(dir / "gaussians.bin");
    d.motion = read_motion_csv(dir / "gt_motion.csv");
    const int f = spec.frames;
    const bool with_features = spec.feature_mode != FeatureMode::None;
    d.rgb.assign(d.cameras.size(), std::vector<ImagePlane>(f));
    d.mask.assign(d.cameras.size(), std::vector<ImagePlane>(f));
    if (with_features) d.features.assign(d.cameras.size(), std::vector<FeatureMap>(f));
    for (std::size_t c = 0; c < d.cameras.size(); ++c) {
        const fs::path cd = dir / ("cam_" + std::to_string(c));
        for (int j = 0; j < f; ++j) {
            const std::string js = std::to_string(j);
            d.rgb[c][j] = read_imgf(cd / ("frame_" + js + ".imgf"), ChannelKind::Rgb);
            d.mask[c][j] = read_imgf(cd / ("mask_" + js + ".imgf"), ChannelKind::Alpha);
            if (with_features)
                d.features[c][j] = FeatureMap(read_imgf(cd / ("feat_" + js + ".imgf"), ChannelKind::Feature),
                                              j, static_cast<int>(c));
        }
    }
    d.tracks = read_tracks(dir / "tracks.txt", static_cast<int>(d.train_views().size()));
    if (d.motion.frames() != f) throw IoError("gt_motion.csv frame count differs from dataset.ini");
    return d;
}

} // namespace t4d
