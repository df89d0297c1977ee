#pragma once

#include "t4d/harness.hpp"

#include <string>
#include <vector>

namespace t4d {

inline constexpr double kPsnrCap = 99.0;

double mse(const ImagePlane& a, const ImagePlane& b);
// 10 log10(1 / MSE) for signals in [0, 1], capped at kPsnrCap.
double psnr(const ImagePlane& a, const ImagePlane& b);
// PSNR over pixels where either mask is at least 0.5; kPsnrCap when no pixel qualifies.
double masked_psnr(const ImagePlane& render, const ImagePlane& gt, const ImagePlane& render_alpha,
                   const ImagePlane& gt_mask);

// Diagonal of the canonical bounding box.
double scene_extent(std::span<const Gaussian3D> canonical);

struct TrajectoryError {
    double mean = 0.0;    // world units, over Gaussians and frames
    double percent = 0.0; // of scene_extent
};
TrajectoryError trajectory_error(const DynamicModel& model, const MotionTable& gt);

struct DriftStats {
    double mean = 0.0; // texels
    double max = 0.0;
    int samples = 0;
};
// Drift of nn_track against ground-truth tracks. Both trajectories are taken
// relative to their own frame-0 estimate (soft-argmax of the frame-0 map for
// the tracker), so a tracker with a constant localisation bias has zero
// drift. Frames not visible in the ground truth are skipped.
DriftStats track_drift(const Dataset& d, double tau);

// correspondence_loss of descriptors sampled along the ground-truth tracks.
double correspondence_on_tracks(const Dataset& d);

struct ViewScore {
    int camera = 0;
    bool heldout = false;
    double psnr = 0.0;
    double masked_psnr = 0.0;
};

struct EvalReport {
    std::vector<ViewScore> views;
    double heldout_psnr = 0.0;        // mean over held-out views and frames
    double heldout_masked_psnr = 0.0;
    double train_psnr = 0.0;
    TrajectoryError trajectory;
    DriftStats drift;
    double correspondence = 0.0;
    double extent = 0.0;

    std::string to_json() const;
};

EvalReport evaluate(const DynamicModel& model, const Dataset& d, double tau = kDefaultTemperature);

} // namespace t4d
