#include "t4d/train.hpp"

#include "t4d/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace t4d {

void TrainConfig::validate() const {
    if (lambda_rec < 0 || lambda_sds < 0 || lambda_arap < 0)
        throw InvalidArgument("loss weights must be >= 0");
    if (iterations_rec < 0 || iterations_sds < 0) throw InvalidArgument("iteration counts must be >= 0");
    if (lr_hex < 0 || lr_decoder < 0 || lr_sh < 0) throw InvalidArgument("learning rates must be >= 0");
    if (!(lr_final_ratio > 0.0 && lr_final_ratio <= 1.0))
        throw InvalidArgument("lr_final_ratio must lie in (0, 1]");
    if (batch_views < 1 || batch_frames < 1) throw InvalidArgument("batch sizes must be >= 1");
    if (latent_factor < 1) throw InvalidArgument("latent_factor must be >= 1");
    if (sds_t_min < 0 || sds_t_max > schedule_steps || sds_t_min > sds_t_max)
        throw InvalidArgument("SDS timestep range must lie inside [0, schedule_steps]");
    if (arap_k < 3) throw InvalidArgument("arap_k must be >= 3");
}

void TrainingData::validate() const {
    if (cameras.empty()) throw InvalidArgument("training data has no views");
    if (rgb.size() != cameras.size() || mask.size() != cameras.size())
        throw ShapeMismatch("training data: per-view lists differ in length");
    const int f = frames();
    if (f < 1) throw InvalidArgument("training data has no frames");
    for (std::size_t v = 0; v < cameras.size(); ++v) {
        if (static_cast<int>(rgb[v].size()) != f || static_cast<int>(mask[v].size()) != f)
            throw ShapeMismatch("training data: ragged frame counts");
        for (int j = 0; j < f; ++j) {
            const ImagePlane& c = rgb[v][j];
            const ImagePlane& m = mask[v][j];
            if (c.width() != cameras[v].width || c.height() != cameras[v].height || c.channels() != 3 ||
                m.width() != c.width() || m.height() != c.height() || m.channels() != 1)
                throw ShapeMismatch("training data: image does not match its camera");
        }
    }
    if (features.views()) {
        features.validate();
        if (features.frames() != f) throw ShapeMismatch("feature video frame count differs");
    }
}

void write_loss_log(const std::vector<LossRecord>& log, std::ostream& out) {
    out << "step,phase,l_rec,l_sds,l_arap,total\n";
    out.precision(17);
    for (const auto& r : log)
        out << r.step << ',' << r.phase << ',' << r.l_rec << ',' << r.l_sds << ',' << r.l_arap << ','
            << r.total << '\n';
}

CurriculumWindow curriculum_window(int step, int iterations_rec, int frames) {
    CurriculumWindow w;
    w.frames = frames;
    const int ramp = std::max(1, iterations_rec / 2);
    if (frames <= 2 || step >= ramp) return w;
    const double length = 2.0 + static_cast<double>(frames - 2) * step / ramp;
    const int whole = static_cast<int>(std::floor(length));
    const double frac = length - whole;
    if (frac > 0.0) {
        w.frames = std::min(frames, whole + 1);
        w.frontier_weight = frac;
    } else {
        w.frames = whole;
    }
    return w;
}

LatentVideo encode_latent(std::span<const ImagePlane> rgb, std::span<const ImagePlane> alpha,
                          int views, int frames, int factor) {
    if (rgb.size() != alpha.size() || static_cast<int>(rgb.size()) != views * frames)
        throw ShapeMismatch("encode_latent: item count");
    if (rgb.empty()) return {};
    const int h = rgb.front().height() / factor, w = rgb.front().width() / factor;
    if (h < 1 || w < 1) throw InvalidArgument("encode_latent: image smaller than the pooling factor");
    LatentVideo z(views, frames, 4, h, w);
    const double inv = 1.0 / (factor * factor);
    for (int k = 0; k < views * frames; ++k) {
        const int i = k / frames, j = k % frames;
        for (int r = 0; r < h; ++r)
            for (int x = 0; x < w; ++x) {
                std::array<double, 4> acc{};
                for (int dr = 0; dr < factor; ++dr)
                    for (int dx = 0; dx < factor; ++dx) {
                        const int pr = r * factor + dr, px = x * factor + dx;
                        for (int q = 0; q < 3; ++q) acc[q] += rgb[k].at(pr, px, q);
                        acc[3] += alpha[k].at(pr, px);
                    }
                for (int q = 0; q < 4; ++q) z.at(i, j, q, r, x) = acc[q] * inv;
            }
    }
    return z;
}

void decode_latent_grad(const LatentVideo& g, int view, int frame, int factor, ImagePlane& grad_rgb,
                        ImagePlane& grad_alpha) {
    const double inv = 1.0 / (factor * factor);
    for (int r = 0; r < g.height(); ++r)
        for (int x = 0; x < g.width(); ++x)
            for (int dr = 0; dr < factor; ++dr)
                for (int dx = 0; dx < factor; ++dx) {
                    const int pr = r * factor + dr, px = x * factor + dx;
                    for (int q = 0; q < 3; ++q) grad_rgb.at(pr, px, q) += g.at(view, frame, q, r, x) * inv;
                    grad_alpha.at(pr, px) += g.at(view, frame, 3, r, x) * inv;
                }
}

namespace {

std::vector<int> pick(Rng& rng, int available, int count) {
    std::vector<int> idx(available);
    std::iota(idx.begin(), idx.end(), 0);
    if (count < available) {
        rng.shuffle(std::span<int>(idx));
        idx.resize(count);
    }
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Temporal cells that no frame of the window reaches yet hold the value of
// the last reached cell, so a frame entering the window starts from its
// predecessor's deformation instead of the untouched initialisation.
void hold_unreached_time_cells(HexPlaneField& field, int window_frames) {
    const int n_frames = field.n_frames();
    if (n_frames < 2 || window_frames >= n_frames) return;
    const double t_last = static_cast<double>(window_frames - 1) / (n_frames - 1);
    for (int l = 0; l < field.config().levels; ++l)
        for (int k = 3; k < 6; ++k) {
            const auto& p = field.plane(l, k);
            const int reached = std::min(p.cols - 1, static_cast<int>(std::ceil(t_last * (p.cols - 1) - 1e-9)));
            for (int r = 0; r < p.rows; ++r)
                for (int col = reached + 1; col < p.cols; ++col)
                    for (int c = 0; c < field.config().channels; ++c)
                        field.entry(l, k, r, col, c) = field.entry(l, k, r, reached, c);
        }
}

struct ViewPass {
    std::vector<ColorEval> evals;
    RenderScene scene;
    RenderOutput out;
};

} // namespace

TrainResult train(std::vector<Gaussian3D> canonical, const TrainingData& data, const TrainConfig& cfg,
                  const DenoiserOracle* denoiser, const StepCallback& on_step) {
    cfg.validate();
    data.validate();
    const int n_frames = data.frames();
    const FeatureVideo* video = data.features.views() ? &data.features : nullptr;

    TrainResult result;
    result.model = DynamicModel::create(std::move(canonical), video, n_frames, cfg.model, cfg.seed);
    DynamicModel& model = result.model;
    const std::size_t n = model.canonical.size();

    Adam adam_hex(model.hex.parameters().size(), cfg.lr_hex);
    Adam adam_dec(model.decoder.parameters().size(), cfg.lr_decoder);
    Adam adam_sh(model.sh_size(), cfg.lr_sh);

    const int total_steps = cfg.iterations_rec + cfg.iterations_sds;
    RigidityGraph graph;
    NoiseSchedule schedule;
    if (cfg.iterations_sds > 0) {
        if (cfg.lambda_arap > 0) graph = build_rigidity_graph(model.canonical_positions(), cfg.arap_k);
        schedule = build_schedule(cfg.schedule_steps, cfg.beta_min, cfg.beta_max, cfg.beta_cond_max);
    }
    const auto canon_pos = model.canonical_positions();

    Rng rng(cfg.seed);
    ModelGrads grads;
    std::vector<double> sh(model.sh_size());

    for (int step = 0; step < total_steps; ++step) {
        const int phase = step < cfg.iterations_rec ? 1 : 2;
        const CurriculumWindow window = phase == 1 && cfg.curriculum
                                            ? curriculum_window(step, cfg.iterations_rec, n_frames)
                                            : CurriculumWindow{n_frames, 1.0};
        const int f_cur = window.frames;
        const std::vector<int> views = pick(rng, data.views(), std::min(cfg.batch_views, data.views()));
        const std::vector<int> frames = pick(rng, f_cur, std::min(cfg.batch_frames, f_cur));
        const int nv = static_cast<int>(views.size()), nf = static_cast<int>(frames.size());
        const int items = nv * nf;

        // Forward every (frame, view) of the batch. Item k = view-major.
        std::vector<FrameState> states(nf);
        std::vector<ViewPass> passes(items);
        for (int b = 0; b < nf; ++b) {
            states[b] = deform(model, frames[b]);
            for (int a = 0; a < nv; ++a) {
                ViewPass& p = passes[a * nf + b];
                const Camera& cam = data.cameras[views[a]];
                p.scene = shade(model, states[b], cam, &p.evals);
                p.out = render(p.scene, cam, model.render);
            }
        }

        LossRecord rec;
        rec.step = step;
        rec.phase = phase;

        // Reconstruction.
        std::vector<ImagePlane> r_c, r_a, g_c, g_a;
        std::vector<double> weights;
        for (int a = 0; a < nv; ++a)
            for (int b = 0; b < nf; ++b) {
                weights.push_back(window.weight(frames[b]));
                const ViewPass& p = passes[a * nf + b];
                r_c.push_back(p.out.color);
                r_a.push_back(p.out.alpha);
                g_c.push_back(data.rgb[views[a]][frames[b]]);
                g_a.push_back(data.mask[views[a]][frames[b]]);
            }
        ReconGrads rgrad;
        rec.l_rec = reconstruction_loss(r_c, g_c, r_a, g_a, &rgrad, weights);
        std::vector<RenderGradIn> upstream(items);
        for (int k = 0; k < items; ++k) {
            upstream[k].color = std::move(rgrad.color[k]);
            upstream[k].alpha = std::move(rgrad.alpha[k]);
            for (double& v : upstream[k].color.data()) v *= cfg.lambda_rec;
            for (double& v : upstream[k].alpha.data()) v *= cfg.lambda_rec;
        }

        std::vector<std::vector<Vec3>> arap_grads(nf);
        if (phase == 2) {
            if (cfg.lambda_sds > 0) {
                const LatentVideo z = encode_latent(r_c, r_a, nv, nf, cfg.latent_factor);
                std::vector<ImagePlane> masked_gt(items);
                for (int k = 0; k < items; ++k) {
                    masked_gt[k] = g_c[k];
                    for (int r = 0; r < masked_gt[k].height(); ++r)
                        for (int x = 0; x < masked_gt[k].width(); ++x)
                            for (int q = 0; q < 3; ++q) masked_gt[k].at(r, x, q) *= g_a[k].at(r, x);
                }
                const int t = cfg.sds_t_min + static_cast<int>(rng.below(cfg.sds_t_max - cfg.sds_t_min + 1));
                const LatentVideo eps = LatentVideo::randn(nv, nf, 4, z.height(), z.width(), rng.next());
                const LatentVideo eps_c = LatentVideo::randn(nv, 1, 4, z.height(), z.width(), rng.next());
                const LatentVideo z_t = forward_diffuse(schedule, z, t, eps);
                const LatentVideo z_cond = condition_noise(schedule, z.frames_slice(0, 1), t, eps_c);
                Conditioning y;
                for (int a : views) y.cameras.push_back(data.cameras[a]);
                LatentVideo eps_pred;
                if (denoiser) {
                    eps_pred = denoiser->predict(z_cond, z_t, t, y);
                } else {
                    const auto oracle = CheatingDenoiser::from_clean(
                        encode_latent(masked_gt, g_a, nv, nf, cfg.latent_factor), schedule);
                    eps_pred = oracle.predict(z_cond, z_t, t, y);
                }
                const LatentVideo z0_hat = z0_estimate(schedule, z_t, eps_pred, t);
                rec.l_sds = sds_loss(z, z0_hat);
                LatentVideo g = sds_loss_grad(z, z0_hat);
                g.flat() *= cfg.lambda_sds;
                for (int a = 0; a < nv; ++a)
                    for (int b = 0; b < nf; ++b)
                        decode_latent_grad(g, a, b, cfg.latent_factor, upstream[a * nf + b].color,
                                           upstream[a * nf + b].alpha);
            }
            if (cfg.lambda_arap > 0) {
                for (int b = 0; b < nf; ++b) {
                    rec.l_arap += arap_loss(graph, canon_pos, states[b].positions, &arap_grads[b]) / nf;
                    for (auto& v : arap_grads[b]) v *= cfg.lambda_arap / nf;
                }
            }
        }
        rec.total = phase == 1 ? cfg.lambda_rec * rec.l_rec
                               : stage_two_objective(rec.l_rec, rec.l_sds, rec.l_arap, cfg.lambda_rec,
                                                     cfg.lambda_sds, cfg.lambda_arap);

        // Reverse pass.
        grads.reset(model);
        for (int b = 0; b < nf; ++b) {
            GeometryGrads geo;
            geo.reset(n);
            if (!arap_grads[b].empty())
                for (std::size_t i = 0; i < n; ++i) geo.positions[i] += arap_grads[b][i];
            for (int a = 0; a < nv; ++a) {
                const int k = a * nf + b;
                const Camera& cam = data.cameras[views[a]];
                const RenderGrads rg = render_backward(passes[k].scene, cam, upstream[k], model.render);
                accumulate_view(model, states[b], cam, passes[k].evals, rg, geo, grads);
            }
            backprop_deform(model, states[b], geo, grads);
        }

        const double decay =
            total_steps > 1 ? std::pow(cfg.lr_final_ratio, static_cast<double>(step) / (total_steps - 1)) : 1.0;
        adam_hex.set_lr(cfg.lr_hex * decay);
        adam_dec.set_lr(cfg.lr_decoder * decay);
        adam_sh.set_lr(cfg.lr_sh * decay);
        adam_hex.step(model.hex.parameters(), grads.hex);
        if (phase == 1 && cfg.curriculum) hold_unreached_time_cells(model.hex, window.frames);
        adam_dec.step(model.decoder.parameters(), grads.decoder);
        sh = model.sh_flat();
        adam_sh.step(sh, grads.sh);
        model.set_sh_flat(sh);

        result.log.push_back(rec);
        if (on_step) on_step(rec);
    }
    model.snap_to_float();
    return result;
}

} // namespace t4d
