#pragma once

// Hybrid motion field. A Gaussian centre X at frame f is described by
//   - a multi-resolution Hex-plane feature: six axis-pair planes over
//     (x, y, z, t), sampled bilinearly, multiplied elementwise within a
//     resolution and concatenated across resolutions;
//   - a diffusion-style feature: X projected into every view's feature map
//     for frame f, kept only where the projection is not occluded, averaged
//     over the contributing views.
// The concatenation feeds a three-head MLP that predicts position, rotation
// and scale offsets.

#include "t4d/core.hpp"
#include "t4d/splatter.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace t4d {

struct BoundingBox {
    Vec3 min = Vec3::Constant(-1.0);
    Vec3 max = Vec3::Constant(1.0);

    Vec3 extent() const { return max - min; }
    double diagonal() const { return extent().norm(); }
    static BoundingBox around(std::span<const Vec3> points, double margin);
};

struct HexPlaneConfig {
    int levels = 2;
    int spatial_res = 100;
    int temporal_res = 8;
    int channels = 16;
};

class HexPlaneField {
public:
    // Axis pairs over (x, y, z, t) = (0, 1, 2, 3) in checkpoint order.
    static constexpr std::array<std::array<int, 2>, 6> kPairs{
        {{0, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}}};

    struct PlaneView {
        int rows = 0; // along the first axis of the pair
        int cols = 0; // along the second axis
        std::size_t offset = 0;
    };

    HexPlaneField() = default;
    // All entries zero.
    HexPlaneField(const HexPlaneConfig& config, const BoundingBox& box, int n_frames);
    // Spatial planes uniform in [0.1, 0.5], space-time planes 1.
    static HexPlaneField initialized(const HexPlaneConfig& config, const BoundingBox& box,
                                     int n_frames, std::uint64_t seed);

    const HexPlaneConfig& config() const { return config_; }
    const BoundingBox& box() const { return box_; }
    int n_frames() const { return n_frames_; }
    int output_dims() const { return config_.levels * config_.channels; }

    // Grid resolution of one axis at one level.
    int axis_res(int level, int axis) const;
    const PlaneView& plane(int level, int k) const { return planes_[level * 6 + k]; }
    double& entry(int level, int k, int row, int col, int c) {
        const PlaneView& p = plane(level, k);
        return params_[p.offset + (static_cast<std::size_t>(row) * p.cols + col) * config_.channels + c];
    }

    std::span<double> parameters() { return params_; }
    std::span<const double> parameters() const { return params_; }

    // (x, y, z, t) in [0, 1]^4. Throws OutOfBox.
    Vec4 normalize(const Vec3& x, double frame) const;

private:
    HexPlaneConfig config_;
    BoundingBox box_;
    int n_frames_ = 1;
    std::vector<PlaneView> planes_;
    std::vector<double> params_;
};

VecX hexplane_interp(const HexPlaneField& field, const Vec3& x, double frame);

// Accumulates d(loss)/d(plane entries) into `grad_params` (same layout as
// field.parameters()). When `grad_x` is non-null, d(loss)/dx is added to it.
void hexplane_backward(const HexPlaneField& field, const Vec3& x, double frame,
                       const VecX& grad_out, std::span<double> grad_params, Vec3* grad_x = nullptr);

// Column i is hexplane_interp(field, positions[i], frame). OpenMP over columns.
Eigen::MatrixXd hexplane_interp_batch(const HexPlaneField& field, std::span<const Vec3> positions,
                                      double frame);
// Serial column loop of the same.
Eigen::MatrixXd hexplane_interp_batch_serial(const HexPlaneField& field,
                                             std::span<const Vec3> positions, double frame);

// ---------------------------------------------------------- feature video

struct FeatureVideo {
    std::vector<Camera> cameras;                 // image-space camera per view
    std::vector<std::vector<FeatureMap>> maps;   // [view][frame]

    int views() const { return static_cast<int>(maps.size()); }
    int frames() const { return maps.empty() ? 0 : static_cast<int>(maps.front().size()); }
    int dims() const { return frames() ? maps.front().front().dims() : 0; }
    void validate() const;
};

// Depth-test helper around a first-hit depth map of one camera.
class VisibilityMap {
public:
    VisibilityMap() = default;
    static VisibilityMap build(const RenderScene& gaussians, const Camera& cam, double eps_depth,
                               const RenderSettings& settings = {});

    // Throws PointBehindCamera. Points projecting outside the image count as visible.
    bool visible(const Vec3& x) const;
    const Camera& camera() const { return cam_; }
    const ImagePlane& hit_depth() const { return hit_; }

private:
    Camera cam_;
    ImagePlane hit_;
    double eps_ = 0.0;
};

// Positions, rotations, scales and opacities of a deformed state; colours zero.
RenderScene compose_geometry(const Gaussian4DState& state);

bool visibility_check(const Gaussian4DState& gaussians, const Camera& cam, const Vec3& x,
                      double eps_depth, const RenderSettings& settings = {});

struct FeatureSample {
    VecX value;
    bool occluded = false;
    int views_used = 0;
};

// `visibility` holds one map per view of `fv`. Non-integer frames blend the
// two neighbouring frames linearly.
FeatureSample feature_plane_sample(const FeatureVideo& fv, std::span<const VisibilityMap> visibility,
                                   const Vec3& x, double frame);

// Convenience overload that builds the visibility maps from `gaussians`.
FeatureSample feature_plane_sample(const FeatureVideo& fv, const Gaussian4DState& gaussians,
                                   const Vec3& x, double frame, double eps_depth);

VecX hybrid_feature(const HexPlaneField& field, const FeatureVideo& fv,
                    std::span<const VisibilityMap> visibility, const Vec3& x, double frame);

// Feature-plane samples of fixed canonical centres for every integer frame.
struct FeatureCache {
    int dims = 0;
    std::vector<Eigen::MatrixXd> per_frame; // dims x n_gaussians
    std::vector<std::vector<char>> occluded;

    int frames() const { return static_cast<int>(per_frame.size()); }
    // Linear blend between neighbouring frames.
    Eigen::MatrixXd at(double frame) const;
};
FeatureCache build_feature_cache(const FeatureVideo& fv, std::span<const VisibilityMap> visibility,
                                 std::span<const Vec3> positions);

// ---------------------------------------------------------------- decoder

struct DecoderDeltas {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4::Zero();
    Vec3 scale = Vec3::Zero();
};

// Shared trunk Linear(in, hidden) + SiLU, then three heads
// Linear(hidden, hidden) + SiLU + Linear(hidden, out) with out = 3, 4, 3.
// The final layer of every head starts at zero.
class DeformationDecoder {
public:
    static constexpr std::array<int, 3> kHeadDims{3, 4, 3};

    DeformationDecoder() = default;
    DeformationDecoder(int in_dim, int hidden, std::uint64_t seed);

    int in_dim() const { return in_dim_; }
    int hidden() const { return hidden_; }

    std::span<double> parameters() { return params_; }
    std::span<const double> parameters() const { return params_; }

    struct Cache {
        Eigen::MatrixXd trunk_pre, trunk_act;
        std::array<Eigen::MatrixXd, 3> head_pre, head_act, out;
    };

    // Columns of `features` are samples. out[h] is kHeadDims[h] x N.
    Cache forward(const Eigen::MatrixXd& features) const;

    // Accumulates weight gradients into grad_params and returns d(loss)/d(features).
    Eigen::MatrixXd backward(const Eigen::MatrixXd& features, const Cache& cache,
                             const std::array<Eigen::MatrixXd, 3>& grad_out,
                             std::span<double> grad_params) const;

    using MatMap = Eigen::Map<Eigen::MatrixXd>;
    using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
    using VecMap = Eigen::Map<VecX>;
    using ConstVecMap = Eigen::Map<const VecX>;

    // Views into a parameter (or gradient) buffer laid out like parameters().
    struct Layout {
        std::size_t trunk_w = 0, trunk_b = 0;
        std::array<std::size_t, 3> w1{}, b1{}, w2{}, b2{};
        std::size_t total = 0;
    };
    const Layout& layout() const { return layout_; }

    ConstMatMap trunk_w() const { return {params_.data() + layout_.trunk_w, hidden_, in_dim_}; }
    ConstVecMap trunk_b() const { return {params_.data() + layout_.trunk_b, hidden_}; }
    ConstMatMap head_w1(int h) const { return {params_.data() + layout_.w1[h], hidden_, hidden_}; }
    ConstVecMap head_b1(int h) const { return {params_.data() + layout_.b1[h], hidden_}; }
    ConstMatMap head_w2(int h) const { return {params_.data() + layout_.w2[h], kHeadDims[h], hidden_}; }
    ConstVecMap head_b2(int h) const { return {params_.data() + layout_.b2[h], kHeadDims[h]}; }
    MatMap head_w2(int h) { return {params_.data() + layout_.w2[h], kHeadDims[h], hidden_}; }
    VecMap head_b2(int h) { return {params_.data() + layout_.b2[h], kHeadDims[h]}; }

private:
    void build_layout();

    int in_dim_ = 0;
    int hidden_ = 0;
    Layout layout_;
    std::vector<double> params_;
};

// Throws ShapeMismatch when F does not match the trunk input width.
DecoderDeltas deform_decode(const DeformationDecoder& dec, const VecX& features);

struct DeformedGaussian {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = quat_identity();
    Vec3 scale = Vec3::Ones();
    double opacity = 1.0;
    Vec3 color = Vec3::Zero();
};

inline constexpr double kMinScale = 1e-6;

// X + dX, normalize(r + dr), max(s + ds, 1e-6), same opacity, colour c4d.
DeformedGaussian apply_deformation(const Gaussian3D& g, const Vec3& dx, const Vec4& dr,
                                   const Vec3& ds, const Vec3& c4d);

} // namespace t4d
