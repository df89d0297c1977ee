#include "t4d/cli.hpp"

#include "t4d/error.hpp"
#include "t4d/gradcheck.hpp"
#include "t4d/harness.hpp"
#include "t4d/io.hpp"
#include "t4d/metrics.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace t4d {

namespace {

const std::set<std::string> kTrainKeys{
    "train.lambda_rec",     "train.lambda_sds",     "train.lambda_arap",   "train.iterations_rec",
    "train.iterations_sds", "train.lr_hex",         "train.lr_decoder",    "train.lr_sh",
    "train.lr_final_ratio", "train.batch_views",    "train.batch_frames",  "train.curriculum",
    "train.arap_k",         "train.latent_factor",  "train.sds_t_min",     "train.sds_t_max",
    "train.schedule_steps", "train.beta_min",       "train.beta_max",      "train.beta_cond_max",
    "train.seed",           "model.levels",         "model.spatial_res",   "model.temporal_res",
    "model.channels",       "model.hidden",         "model.bbox_margin",   "render.cutoff_sigma",
    "render.cov_floor",     "render.tile_size"};

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

DynamicModel load_model(const fs::path& checkpoint, const Dataset& d) {
    const CheckpointShape shape = read_checkpoint_shape(checkpoint);
    ModelConfig cfg;
    cfg.hex = shape.hex;
    cfg.hidden = shape.decoder_hidden;
    const TrainingData td = d.training();
    const FeatureVideo* video = td.features.views() ? &td.features : nullptr;
    DynamicModel m = DynamicModel::create(d.canonical, video, shape.n_frames, cfg, 0);
    load_checkpoint(checkpoint, m);
    m.attach_features(video);
    return m;
}

void set_threads(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

int cmd_synth(const fs::path& spec_path, const fs::path& out) {
    const SceneSpec spec = SceneSpec::from_config(Config::load(spec_path));
    spec.validate();
    const SynthScene scene = synth_scene(spec);
    const Dataset d = render_dataset(scene, spec);
    write_dataset(d, out);
    std::cout << "wrote " << d.cameras.size() << " cameras x " << d.frames() << " frames to " << out.string()
              << "\n";
    return 0;
}

int cmd_track(const fs::path& data, const fs::path& out, double tau) {
    const Dataset d = read_dataset(data);
    if (d.features.empty()) throw InvalidArgument("dataset has no feature video");
    const auto views = d.train_views();
    TrackSet tracked(views.size()), tracked_feat(views.size()), gt_feat(views.size());
    DescriptorSet desc(views.size());
    for (std::size_t vi = 0; vi < views.size() && vi < d.tracks.size(); ++vi) {
        const auto& maps = d.features[views[vi]];
        const Camera& cam = d.cameras[views[vi]].camera;
        const Dims2 img{cam.width, cam.height};
        const Dims2 feat{maps.front().width(), maps.front().height()};
        for (const Track& gt : d.tracks[vi]) {
            const QueryPoint q{static_cast<int>(vi), gt.positions.front()};
            const Vec2 q_feat = clamp_to_map(pixel_to_feature_coords(q.p, img, feat), feat);
            if (!(bilinear_sample(maps.front(), q_feat).norm() > 1e-12)) continue;
            Track t = nn_track(maps, q, img, tau);
            t.id = gt.id;
            std::vector<VecX> along;
            Track gt_f = gt, px = t;
            for (int j = 0; j < t.frames(); ++j) {
                along.push_back(bilinear_sample(maps[j], clamp_to_map(t.positions[j], feat)));
                gt_f.positions[j] = pixel_to_feature_coords(gt.positions[j], img, feat);
                px.positions[j] = feature_to_pixel_coords(t.positions[j], img, feat);
            }
            desc[vi].push_back(std::move(along));
            tracked_feat[vi].push_back(t);
            gt_feat[vi].push_back(gt_f);
            tracked[vi].push_back(px);
        }
    }
    fs::create_directories(out);
    write_tracks(out / "tracks.txt", tracked);
    const double l_corr = correspondence_loss(desc);
    // Ground truth plays the tracker and the nearest-neighbour tracks play the prediction.
    const double l_pos = position_loss(gt_feat, tracked_feat);
    const DriftStats drift = track_drift(d, tau);
    nlohmann::json j;
    j["tau"] = tau;
    j["l_corr"] = l_corr;
    j["l_pos_vs_ground_truth"] = l_pos;
    j["drift_texels"] = {{"mean", drift.mean}, {"max", drift.max}, {"samples", drift.samples}};
    write_text(out / "track_losses.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_reconstruct(const fs::path& data, const fs::path& config, const fs::path& out, int iters_rec,
                    int iters_sds, bool quiet) {
    const Dataset d = read_dataset(data);
    TrainConfig cfg = config.empty() ? TrainConfig{} : train_config_from(Config::load(config));
    if (iters_rec >= 0) cfg.iterations_rec = iters_rec;
    if (iters_sds >= 0) cfg.iterations_sds = iters_sds;
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const int total = cfg.iterations_rec + cfg.iterations_sds;
    auto report = [&](const LossRecord& r) {
        if (quiet || (r.step % 50 != 0 && r.step + 1 != total)) return;
        std::cerr << "step " << r.step << " phase " << r.phase << " l_rec " << r.l_rec << " l_sds " << r.l_sds
                  << " l_arap " << r.l_arap << "\n";
    };
    const TrainResult res = train(d.canonical, d.training(), cfg, nullptr, report);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    fs::create_directories(out);
    save_checkpoint(out / "checkpoint.bin", res.model);
    std::ofstream log(out / "losses.csv", std::ios::binary);
    if (!log) throw IoError("cannot write " + (out / "losses.csv").string());
    write_loss_log(res.log, log);
    write_text(out / "train.ini", to_config(cfg).dump());
    std::cout << "trained " << total << " steps in " << std::fixed << std::setprecision(1) << secs << " s\n";
    return 0;
}

int cmd_render(const fs::path& checkpoint, const fs::path& data, int camera, double t, const fs::path& out) {
    const Dataset d = read_dataset(data);
    if (camera < 0 || camera >= static_cast<int>(d.cameras.size()))
        throw InvalidArgument("camera index out of range");
    const DynamicModel m = load_model(checkpoint, d);
    if (!(t >= 0.0 && t <= m.n_frames - 1)) throw InvalidArgument("t must lie in [0, frames - 1]");
    const RenderOutput o = render_model(m, t, d.cameras[camera].camera);
    fs::create_directories(out);
    write_png(out / "color.png", o.color);
    write_png(out / "alpha.png", o.alpha);
    write_imgf(out / "color.imgf", o.color);
    write_imgf(out / "alpha.imgf", o.alpha);
    std::cout << "rendered camera " << camera << " at t = " << t << " to " << out.string() << "\n";
    return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data, const fs::path& out, double tau) {
    const Dataset d = read_dataset(data);
    const DynamicModel m = load_model(checkpoint, d);
    const std::string report = evaluate(m, d, tau).to_json();
    if (!out.empty()) write_text(out, report + "\n");
    std::cout << report << "\n";
    return 0;
}

int cmd_gradcheck() {
    bool ok = true;
    const auto start = std::chrono::steady_clock::now();
    for (const auto& r : gradcheck_all()) {
        std::printf("%-22s %5d entries  max rel err %.3e  tol %.0e  %s\n", r.name.c_str(), r.checked,
                    r.max_rel_error, r.tolerance, r.passed() ? "ok" : "FAIL");
        ok = ok && r.passed();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("total %.1f s\n", secs);
    return ok ? 0 : 1;
}

int cmd_schedule(int steps, double beta_min, double beta_max, double beta_cond, const fs::path& out) {
    const NoiseSchedule s = build_schedule(steps, beta_min, beta_max, beta_cond);
    if (out.empty()) {
        write_schedule_csv(s, std::cout);
        return 0;
    }
    std::ofstream f(out, std::ios::binary);
    if (!f) throw IoError("cannot write " + out.string());
    write_schedule_csv(s, f);
    return 0;
}

} // namespace

TrainConfig train_config_from(const Config& c) {
    c.require_known(kTrainKeys);
    TrainConfig t;
    t.lambda_rec = c.get_double("train.lambda_rec", t.lambda_rec);
    t.lambda_sds = c.get_double("train.lambda_sds", t.lambda_sds);
    t.lambda_arap = c.get_double("train.lambda_arap", t.lambda_arap);
    t.iterations_rec = c.get_int("train.iterations_rec", t.iterations_rec);
    t.iterations_sds = c.get_int("train.iterations_sds", t.iterations_sds);
    t.lr_hex = c.get_double("train.lr_hex", t.lr_hex);
    t.lr_decoder = c.get_double("train.lr_decoder", t.lr_decoder);
    t.lr_sh = c.get_double("train.lr_sh", t.lr_sh);
    t.lr_final_ratio = c.get_double("train.lr_final_ratio", t.lr_final_ratio);
    t.batch_views = c.get_int("train.batch_views", t.batch_views);
    t.batch_frames = c.get_int("train.batch_frames", t.batch_frames);
    t.curriculum = c.get_bool("train.curriculum", t.curriculum);
    t.arap_k = c.get_int("train.arap_k", t.arap_k);
    t.latent_factor = c.get_int("train.latent_factor", t.latent_factor);
    t.sds_t_min = c.get_int("train.sds_t_min", t.sds_t_min);
    t.sds_t_max = c.get_int("train.sds_t_max", t.sds_t_max);
    t.schedule_steps = c.get_int("train.schedule_steps", t.schedule_steps);
    t.beta_min = c.get_double("train.beta_min", t.beta_min);
    t.beta_max = c.get_double("train.beta_max", t.beta_max);
    t.beta_cond_max = c.get_double("train.beta_cond_max", t.beta_cond_max);
    t.seed = c.get_u64("train.seed", t.seed);
    auto& m = t.model;
    m.hex.levels = c.get_int("model.levels", m.hex.levels);
    m.hex.spatial_res = c.get_int("model.spatial_res", m.hex.spatial_res);
    m.hex.temporal_res = c.get_int("model.temporal_res", m.hex.temporal_res);
    m.hex.channels = c.get_int("model.channels", m.hex.channels);
    m.hidden = c.get_int("model.hidden", m.hidden);
    m.bbox_margin = c.get_double("model.bbox_margin", m.bbox_margin);
    m.render.cutoff_sigma = c.get_double("render.cutoff_sigma", m.render.cutoff_sigma);
    m.render.cov_floor = c.get_double("render.cov_floor", m.render.cov_floor);
    m.render.tile_size = c.get_int("render.tile_size", m.render.tile_size);
    t.validate();
    return t;
}

Config to_config(const TrainConfig& t) {
    Config c;
    c.set("train.lambda_rec", fmt(t.lambda_rec));
    c.set("train.lambda_sds", fmt(t.lambda_sds));
    c.set("train.lambda_arap", fmt(t.lambda_arap));
    c.set("train.iterations_rec", std::to_string(t.iterations_rec));
    c.set("train.iterations_sds", std::to_string(t.iterations_sds));
    c.set("train.lr_hex", fmt(t.lr_hex));
    c.set("train.lr_decoder", fmt(t.lr_decoder));
    c.set("train.lr_sh", fmt(t.lr_sh));
    c.set("train.lr_final_ratio", fmt(t.lr_final_ratio));
    c.set("train.batch_views", std::to_string(t.batch_views));
    c.set("train.batch_frames", std::to_string(t.batch_frames));
    c.set("train.curriculum", t.curriculum ? "true" : "false");
    c.set("train.arap_k", std::to_string(t.arap_k));
    c.set("train.latent_factor", std::to_string(t.latent_factor));
    c.set("train.sds_t_min", std::to_string(t.sds_t_min));
    c.set("train.sds_t_max", std::to_string(t.sds_t_max));
    c.set("train.schedule_steps", std::to_string(t.schedule_steps));
    c.set("train.beta_min", fmt(t.beta_min));
    c.set("train.beta_max", fmt(t.beta_max));
    c.set("train.beta_cond_max", fmt(t.beta_cond_max));
    c.set("train.seed", std::to_string(t.seed));
    c.set("model.levels", std::to_string(t.model.hex.levels));
    c.set("model.spatial_res", std::to_string(t.model.hex.spatial_res));
    c.set("model.temporal_res", std::to_string(t.model.hex.temporal_res));
    c.set("model.channels", std::to_string(t.model.hex.channels));
    c.set("model.hidden", std::to_string(t.model.hidden));
    c.set("model.bbox_margin", fmt(t.model.bbox_margin));
    c.set("render.cutoff_sigma", fmt(t.model.render.cutoff_sigma));
    c.set("render.cov_floor", fmt(t.model.render.cov_floor));
    c.set("render.tile_size", std::to_string(t.model.render.tile_size));
    return c;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"t4d: dynamic Gaussian splatting toolkit on synthetic scenes"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "OpenMP thread count (0 keeps the runtime default)");

    fs::path spec, out, data, config, checkpoint;
    double tau = kDefaultTemperature, t = 0.0;
    int camera = 0, iters_rec = -1, iters_sds = -1;
    bool quiet = false;
    int steps = 1000;
    double beta_min = 1e-4, beta_max = 0.02, beta_cond = 0.1;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset from a scene spec");
    synth->add_option("--spec", spec, "Scene spec file")->required();
    synth->add_option("--out", out, "Dataset directory")->required();

    auto* track = app.add_subcommand("track", "Nearest-neighbour tracks and tracking losses");
    track->add_option("--data", data, "Dataset directory")->required();
    track->add_option("--out", out, "Output directory")->required();
    track->add_option("--tau", tau, "Soft-argmax temperature");

    auto* recon = app.add_subcommand("reconstruct", "Fit the dynamic model to a dataset");
    recon->add_option("--data", data, "Dataset directory")->required();
    recon->add_option("--config", config, "Training config file");
    recon->add_option("--out", out, "Output directory")->required();
    recon->add_option("--iterations-rec", iters_rec, "Override phase-1 step count");
    recon->add_option("--iterations-sds", iters_sds, "Override phase-2 step count");
    recon->add_flag("--quiet", quiet, "No progress output");

    auto* rend = app.add_subcommand("render", "Render a trained model");
    rend->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    rend->add_option("--data", data, "Dataset the model was trained on")->required();
    rend->add_option("--camera", camera, "Camera index in cameras.csv");
    rend->add_option("--t", t, "Frame time in [0, frames - 1]");
    rend->add_option("--out", out, "Output directory")->required();

    auto* ev = app.add_subcommand("eval", "Score a trained model against its dataset");
    ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    ev->add_option("--data", data, "Dataset directory")->required();
    ev->add_option("--out", out, "Report file (JSON)");
    ev->add_option("--tau", tau, "Soft-argmax temperature for track drift");

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks of every analytic gradient");

    auto* sched = app.add_subcommand("schedule", "Dump the noise schedule as CSV");
    sched->add_option("--steps", steps, "Number of diffusion steps T");
    sched->add_option("--beta-min", beta_min);
    sched->add_option("--beta-max", beta_max);
    sched->add_option("--beta-cond-max", beta_cond);
    sched->add_option("--out", out, "CSV file (standard output when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e, std::cerr, std::cerr);
        return 1;
    }

    try {
        set_threads(threads);
        if (*synth) return cmd_synth(spec, out);
        if (*track) return cmd_track(data, out, tau);
        if (*recon) return cmd_reconstruct(data, config, out, iters_rec, iters_sds, quiet);
        if (*rend) return cmd_render(checkpoint, data, camera, t, out);
        if (*ev) return cmd_eval(checkpoint, data, out, tau);
        if (*gc) return cmd_gradcheck();
        if (*sched) return cmd_schedule(steps, beta_min, beta_max, beta_cond, out);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

} // namespace t4d
