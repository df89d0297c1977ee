#pragma once

// The dynamic model end to end: canonical Gaussians, the hybrid motion
// field and its decoder, time-varying SH colour, rendered through the
// splatter. Forward and reverse passes are split per frame (one decoder pass
// serves every view of that frame) and per view.

#include "t4d/motionfield.hpp"
#include "t4d/splatter.hpp"

#include <cstdint>
#include <vector>

namespace t4d {

struct ModelConfig {
    HexPlaneConfig hex;
    int hidden = 64;
    double bbox_margin = 0.1; // fraction of the largest canonical extent
    RenderSettings render;
};

class DynamicModel {
public:
    std::vector<Gaussian3D> canonical;
    HexPlaneField hex;
    DeformationDecoder decoder;
    FeatureCache features; // empty when the model has no feature video
    int feature_dims = 0;
    int n_frames = 1;
    RenderSettings render;

    // Parameters are rounded to f32 on creation so that checkpoints
    // reproduce them exactly.
    static DynamicModel create(std::vector<Gaussian3D> canonical, const FeatureVideo* video,
                               int n_frames, const ModelConfig& config, std::uint64_t seed);

    // Rebuilds the feature cache (after loading parameters from disk).
    void attach_features(const FeatureVideo* video);

    std::vector<Vec3> canonical_positions() const;
    BoundingBox canonical_box() const { return hex.box(); }

    int input_dims() const { return hex.output_dims() + feature_dims; }
    // Hybrid features of every canonical centre, input_dims() x N.
    Eigen::MatrixXd features_at(double frame) const;

    std::size_t sh_size() const;
    std::vector<double> sh_flat() const;
    void set_sh_flat(std::span<const double> w);

    void snap_to_float();
};

// Decoded geometry of one frame plus what its reverse pass needs.
struct FrameState {
    double frame = 0.0;
    Eigen::MatrixXd features;
    DeformationDecoder::Cache cache;
    std::vector<Vec3> positions;
    std::vector<Vec4> rotations; // r + dr, normalised by the renderer
    std::vector<Vec3> scales;
    std::vector<std::array<bool, 3>> scale_free; // false where the scale clamp is active
};

FrameState deform(const DynamicModel& model, double frame);

// Geometry of `state` coloured for `cam`. `evals` (optional) keeps the
// per-Gaussian colour evaluations for the reverse pass.
RenderScene shade(const DynamicModel& model, const FrameState& state, const Camera& cam,
                  std::vector<ColorEval>* evals = nullptr);

RenderOutput render_model(const DynamicModel& model, double frame, const Camera& cam);

// Flat gradient buffers matching the learnable parameters.
struct ModelGrads {
    std::vector<double> hex, decoder, sh;
    void reset(const DynamicModel& model);
    void add(const ModelGrads& o);
};

// Gradients w.r.t. the deformed geometry of one frame.
struct GeometryGrads {
    std::vector<Vec3> positions;
    std::vector<Vec4> rotations;
    std::vector<Vec3> scales;
    void reset(std::size_t n);
};

// Folds one view's render gradients into `geo` (position, rotation, scale,
// including the view-direction term of the colour) and the SH gradients.
void accumulate_view(const DynamicModel& model, const FrameState& state, const Camera& cam,
                     const std::vector<ColorEval>& evals, const RenderGrads& render_grads,
                     GeometryGrads& geo, ModelGrads& grads);

// Chains geometry gradients through the deformation, decoder and Hex-plane.
void backprop_deform(const DynamicModel& model, const FrameState& state, const GeometryGrads& geo,
                     ModelGrads& grads);

} // namespace t4d
