#pragma once

// CPU Gaussian splatting: EWA projection, depth-sorted front-to-back
// compositing on 16x16 tiles, and exact reverse-mode gradients.
//
// The tiled path is parallel over tiles with OpenMP. Backward gradients are
// written to per-tile buffers and merged in tile order, so results do not
// depend on the thread count. splatter_reference.cpp keeps a plain serial
// per-pixel implementation of both passes for testing and benchmarking.

#include "t4d/core.hpp"

#include <limits>
#include <optional>
#include <vector>

namespace t4d {

struct RenderSettings {
    double cutoff_sigma = 3.0;  // footprint radius in standard deviations
    double cov_floor = 0.3;     // px^2 added to the 2D covariance diagonal
    double near_plane = 0.01;
    int tile_size = 16;
    bool hit_depth = false;     // also produce the first-hit depth map
    double hit_threshold = 0.5; // accumulated opacity defining the hit
};

// Already deformed Gaussians in struct-of-arrays form. `colors` holds
// `channels` values per Gaussian, so the same path renders rgb and
// feature descriptors.
struct RenderScene {
    int channels = 3;
    std::vector<Vec3> positions;
    std::vector<Vec4> rotations;
    std::vector<Vec3> scales;
    std::vector<double> opacities;
    std::vector<double> colors;

    std::size_t size() const { return positions.size(); }
    void resize(std::size_t n, int channels);
    double* color(std::size_t i) { return colors.data() + i * channels; }
    const double* color(std::size_t i) const { return colors.data() + i * channels; }
    void validate() const;
};

struct Splat2D {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();
    Mat2 conic = Mat2::Identity();
    double depth = 0.0;
    double opacity = 0.0;
    double radius = 0.0; // pixel radius of the cutoff footprint
    int index = -1;
};

// Throws BehindNearPlane when the centre's camera depth is below the near plane.
Splat2D project_gaussian(const Vec3& position, const Vec4& rotation, const Vec3& scale,
                         double opacity, const Camera& cam, const RenderSettings& settings);

// R diag(s)^2 R^T
Mat3 gaussian_covariance(const Vec4& rotation, const Vec3& scale);

struct RenderOutput {
    ImagePlane color; // `channels` channels, premultiplied over black
    ImagePlane alpha; // accumulated opacity
    ImagePlane depth; // alpha-normalised expected depth, 0 where alpha is 0
    std::optional<ImagePlane> hit_depth; // +inf where opacity never reaches the threshold
};

// Upstream gradient for render_backward. Empty planes mean zero.
struct RenderGradIn {
    ImagePlane color;
    ImagePlane alpha;
    ImagePlane depth;
};

struct RenderGrads {
    std::vector<Vec3> positions;
    std::vector<Vec4> rotations;
    std::vector<Vec3> scales;
    std::vector<double> opacities;
    std::vector<double> colors;

    void reset(std::size_t n, int channels);
    double* color(std::size_t i, int channels) { return colors.data() + i * channels; }
};

RenderOutput render(const RenderScene& scene, const Camera& cam,
                    const RenderSettings& settings = {});
RenderGrads render_backward(const RenderScene& scene, const Camera& cam,
                            const RenderGradIn& upstream, const RenderSettings& settings = {});

// Serial per-pixel reference implementation of the same maths.
RenderOutput render_reference(const RenderScene& scene, const Camera& cam,
                              const RenderSettings& settings = {});
RenderGrads render_backward_reference(const RenderScene& scene, const Camera& cam,
                                      const RenderGradIn& upstream,
                                      const RenderSettings& settings = {});

// Index of the Gaussian with the largest blending weight at a pixel, or -1.
int dominant_gaussian(const RenderScene& scene, const Camera& cam, int col, int row,
                      const RenderSettings& settings = {});

namespace detail {

// Shared between the tiled and reference paths.
struct ProjectedScene {
    std::vector<Splat2D> splats; // sorted front to back, (depth, index)
};
ProjectedScene project_scene(const RenderScene& scene, const Camera& cam,
                             const RenderSettings& settings);

// Per-splat 2D gradient accumulators.
struct ScreenGrad {
    Vec2 mean = Vec2::Zero();
    Mat2 conic = Mat2::Zero(); // full-matrix gradient w.r.t. the conic
    double depth = 0.0;
    double opacity = 0.0;
};

// Chains 2D gradients back to the 3D attributes of every Gaussian.
void backprop_projection(const RenderScene& scene, const Camera& cam,
                         const RenderSettings& settings, const ProjectedScene& projected,
                         const std::vector<ScreenGrad>& screen, RenderGrads& out);

inline double gaussian_power(const Splat2D& s, double px, double py) {
    const double dx = px - s.mean.x();
    const double dy = py - s.mean.y();
    return -0.5 * (s.conic(0, 0) * dx * dx + 2.0 * s.conic(0, 1) * dx * dy +
                   s.conic(1, 1) * dy * dy);
}

} // namespace detail

} // namespace t4d
