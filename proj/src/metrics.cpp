#include "t4d/metrics.hpp"

#include <json.hpp>

#include <cmath>

namespace t4d {

double mse(const ImagePlane& a, const ImagePlane& b) {
    if (!a.same_shape(b)) throw ShapeMismatch("mse: image shapes differ");
    if (a.size() == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

namespace {

double psnr_from_mse(double m) {
    if (!(m > 0.0)) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(m));
}

} // namespace

double psnr(const ImagePlane& a, const ImagePlane& b) { return psnr_from_mse(mse(a, b)); }

double masked_psnr(const ImagePlane& render, const ImagePlane& gt, const ImagePlane& render_alpha,
                   const ImagePlane& gt_mask) {
    if (!render.same_shape(gt) || !render_alpha.same_shape(gt_mask) ||
        gt_mask.width() != gt.width() || gt_mask.height() != gt.height())
        throw ShapeMismatch("masked_psnr: image shapes differ");
    double s = 0.0;
    long count = 0;
    for (int r = 0; r < gt.height(); ++r)
        for (int c = 0; c < gt.width(); ++c) {
            if (gt_mask.at(r, c) < 0.5 && render_alpha.at(r, c) < 0.5) continue;
            for (int q = 0; q < gt.channels(); ++q) {
                const double d = render.at(r, c, q) - gt.at(r, c, q);
                s += d * d;
                ++count;
            }
        }
    return count ? psnr_from_mse(s / count) : kPsnrCap;
}

double scene_extent(std::span<const Gaussian3D> canonical) {
    std::vector<Vec3> p;
    for (const auto& g : canonical) p.push_back(g.position);
    return BoundingBox::around(p, 0.0).diagonal();
}

TrajectoryError trajectory_error(const DynamicModel& model, const MotionTable& gt) {
    if (gt.frames() != model.n_frames) throw ShapeMismatch("trajectory_error: frame counts differ");
    TrajectoryError e;
    long count = 0;
    for (int j = 0; j < gt.frames(); ++j) {
        if (gt.positions[j].size() != model.canonical.size())
            throw ShapeMismatch("trajectory_error: Gaussian counts differ");
        const FrameState s = deform(model, j);
        for (std::size_t i = 0; i < s.positions.size(); ++i) {
            e.mean += (s.positions[i] - gt.positions[j][i]).norm();
            ++count;
        }
    }
    if (count) e.mean /= count;
    const double ext = scene_extent(model.canonical);
    e.percent = ext > 0.0 ? 100.0 * e.mean / ext : 0.0;
    return e;
}

DriftStats track_drift(const Dataset& d, double tau) {
    DriftStats st;
    if (d.features.empty()) return st;
    const auto views = d.train_views();
    double sum = 0.0;
    for (std::size_t vi = 0; vi < views.size() && vi < d.tracks.size(); ++vi) {
        const auto& maps = d.features[views[vi]];
        const Camera& cam = d.cameras[views[vi]].camera;
        const Dims2 img{cam.width, cam.height};
        const Dims2 feat{maps.front().width(), maps.front().height()};
        for (const Track& gt_track : d.tracks[vi]) {
            QueryPoint q{static_cast<int>(vi), gt_track.positions.front()};
            const Vec2 q_feat = clamp_to_map(pixel_to_feature_coords(q.p, img, feat), feat);
            const VecX desc = bilinear_sample(maps.front(), q_feat);
            if (!(desc.norm() > 1e-12)) continue;
            const Track tr = nn_track(maps, q, img, tau);
            const Vec2 base = soft_argmax(cosine_similarity_map(maps.front(), desc), tau);
            const Vec2 gt0 = pixel_to_feature_coords(gt_track.positions.front(), img, feat);
            for (int j = 1; j < tr.frames(); ++j) {
                if (!gt_track.visible_at(j)) continue;
                const Vec2 gtj = pixel_to_feature_coords(gt_track.positions[j], img, feat);
                const double e = ((tr.positions[j] - base) - (gtj - gt0)).norm();
                sum += e;
                st.max = std::max(st.max, e);
                ++st.samples;
            }
        }
    }
    if (st.samples) st.mean = sum / st.samples;
    return st;
}

double correspondence_on_tracks(const Dataset& d) {
    if (d.features.empty()) return 0.0;
    const auto views = d.train_views();
    DescriptorSet h(views.size());
    TrackSet used(views.size());
    for (std::size_t vi = 0; vi < views.size() && vi < d.tracks.size(); ++vi) {
        const auto& maps = d.features[views[vi]];
        const Camera& cam = d.cameras[views[vi]].camera;
        const Dims2 img{cam.width, cam.height};
        const Dims2 feat{maps.front().width(), maps.front().height()};
        for (const Track& t : d.tracks[vi]) {
            std::vector<VecX> per_frame;
            bool ok = true;
            for (int j = 0; j < t.frames() && ok; ++j) {
                const Vec2 p = clamp_to_map(pixel_to_feature_coords(t.positions[j], img, feat), feat);
                per_frame.push_back(bilinear_sample(maps[j], p));
                ok = per_frame.back().norm() > 1e-12;
            }
            if (!ok) continue;
            h[vi].push_back(std::move(per_frame));
            used[vi].push_back(t);
        }
    }
    return correspondence_loss(h, &used);
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["heldout_psnr"] = heldout_psnr;
    j["heldout_masked_psnr"] = heldout_masked_psnr;
    j["train_psnr"] = train_psnr;
    j["trajectory_error"] = {{"mean", trajectory.mean}, {"percent_of_extent", trajectory.percent}};
    j["scene_extent"] = extent;
    j["track_drift_texels"] = {{"mean", drift.mean}, {"max", drift.max}, {"samples", drift.samples}};
    j["correspondence_loss_gt_tracks"] = correspondence;
    auto& v = j["views"];
    v = nlohmann::json::array();
    for (const auto& s : views)
        v.push_back({{"camera", s.camera},
                     {"split", s.heldout ? "heldout" : "train"},
                     {"psnr", s.psnr},
                     {"masked_psnr", s.masked_psnr}});
    return j.dump(2);
}

EvalReport evaluate(const DynamicModel& model, const Dataset& d, double tau) {
    if (d.frames() != model.n_frames) throw ShapeMismatch("evaluate: frame counts differ");
    EvalReport rep;
    rep.extent = scene_extent(model.canonical);
    int heldout = 0, train = 0;
    std::vector<FrameState> states;
    for (int j = 0; j < d.frames(); ++j) states.push_back(deform(model, j));
    for (std::size_t c = 0; c < d.cameras.size(); ++c) {
        const Camera& cam = d.cameras[c].camera;
        ViewScore s;
        s.camera = static_cast<int>(c);
        s.heldout = d.cameras[c].heldout;
        for (int j = 0; j < d.frames(); ++j) {
            const RenderOutput out = render(shade(model, states[j], cam), cam, model.render);
            s.psnr += psnr(out.color, d.rgb[c][j]);
            s.masked_psnr += masked_psnr(out.color, d.rgb[c][j], out.alpha, d.mask[c][j]);
        }
        s.psnr /= d.frames();
        s.masked_psnr /= d.frames();
        if (s.heldout) {
            rep.heldout_psnr += s.psnr;
            rep.heldout_masked_psnr += s.masked_psnr;
            ++heldout;
        } else {
            rep.train_psnr += s.psnr;
            ++train;
        }
        rep.views.push_back(s);
    }
    if (heldout) {
        rep.heldout_psnr /= heldout;
        rep.heldout_masked_psnr /= heldout;
    }
    if (train) rep.train_psnr /= train;
    rep.trajectory = trajectory_error(model, d.motion);
    rep.drift = track_drift(d, tau);
    rep.correspondence = correspondence_on_tracks(d);
    return rep;
}

} // namespace t4d
