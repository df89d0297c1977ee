#pragma once

// Two-phase optimisation of the dynamic model against multi-view videos.
// Phase 1 fits the masked reconstruction loss with a growing frame window;
// phase 2 adds the latent SDS term and the rigidity regulariser.

#include "t4d/diffsched.hpp"
#include "t4d/losses.hpp"
#include "t4d/pipeline.hpp"

#include <functional>
#include <iosfwd>
#include <vector>

namespace t4d {

struct TrainConfig {
    double lambda_rec = kLambdaRec;
    double lambda_sds = kLambdaSds;
    double lambda_arap = kLambdaArap;
    int iterations_rec = 750;
    int iterations_sds = 250;
    double lr_hex = 0.01;
    double lr_decoder = 1e-4;
    double lr_sh = 2.5e-3;
    // Every learning rate decays exponentially to this fraction at the last step.
    double lr_final_ratio = 0.1;
    int batch_views = 4;
    int batch_frames = 16;
    bool curriculum = true;
    int arap_k = 8;
    int latent_factor = 8;
    int sds_t_min = 20;
    int sds_t_max = 980;
    int schedule_steps = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.02;
    double beta_cond_max = 0.1;
    std::uint64_t seed = 0;
    ModelConfig model;

    void validate() const;
};

struct TrainingData {
    std::vector<Camera> cameras;              // training views
    std::vector<std::vector<ImagePlane>> rgb;  // [view][frame]
    std::vector<std::vector<ImagePlane>> mask; // [view][frame]
    FeatureVideo features;                     // may hold no views

    int views() const { return static_cast<int>(cameras.size()); }
    int frames() const { return rgb.empty() ? 0 : static_cast<int>(rgb.front().size()); }
    void validate() const;
};

struct LossRecord {
    int step = 0;
    int phase = 1;
    double l_rec = 0.0;
    double l_sds = 0.0;
    double l_arap = 0.0;
    double total = 0.0;
};

void write_loss_log(const std::vector<LossRecord>& log, std::ostream& out);

struct TrainResult {
    DynamicModel model;
    std::vector<LossRecord> log;
};

// Frame window of a phase-1 step. The window length grows linearly from 2
// to `frames` over the first half of phase 1; its fractional part becomes the
// loss weight of the newest frame so that frames fade in instead of
// arriving at full weight.
struct CurriculumWindow {
    int frames = 1;              // leading frames a batch may sample
    double frontier_weight = 1;  // loss weight of frame `frames - 1`
    double weight(int frame) const { return frame == frames - 1 ? frontier_weight : 1.0; }
};
CurriculumWindow curriculum_window(int step, int iterations_rec, int frames);

// Average-pool rgb and alpha by `factor` into a 4-channel latent; item k of
// the inputs is view k / frames, frame k % frames.
LatentVideo encode_latent(std::span<const ImagePlane> rgb, std::span<const ImagePlane> alpha,
                          int views, int frames, int factor);
// Adjoint of encode_latent for one item: spreads the latent gradient back
// over the pooled pixels.
void decode_latent_grad(const LatentVideo& grad, int view, int frame, int factor,
                        ImagePlane& grad_rgb, ImagePlane& grad_alpha);

using StepCallback = std::function<void(const LossRecord&)>;

// With `denoiser` null the SDS term uses a CheatingDenoiser holding the
// dataset's own latents, so the clean estimate is the ground truth.
TrainResult train(std::vector<Gaussian3D> canonical, const TrainingData& data,
                  const TrainConfig& cfg, const DenoiserOracle* denoiser = nullptr,
                  const StepCallback& on_step = {});

} // namespace t4d
