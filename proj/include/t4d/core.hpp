#pragma once

// Shared geometric primitives: pinhole cameras, Gaussians, image planes,
// feature maps and bilinear sampling.
//
// Pixel convention: continuous image coordinates place the centre of pixel
// (col, row) at (col, row). Feature maps address texel centres at integer
// coordinates the same way, so a map rendered at image resolution samples
// identically to the image.

#include "t4d/appearance.hpp"
#include "t4d/error.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <span>
#include <vector>

namespace t4d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d; // quaternions are stored (w, x, y, z)
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;

// ---------------------------------------------------------------- quaternions

Vec4 quat_identity();
Vec4 quat_normalize(const Vec4& q);
// Hamilton product a * b.
Vec4 quat_multiply(const Vec4& a, const Vec4& b);
Vec4 quat_from_axis_angle(const Vec3& axis, double angle);
// Rotation matrix of q / |q|.
Mat3 quat_to_rotation(const Vec4& q);
// d(R(q/|q|)) / dq contracted with an upstream matrix gradient dL/dR.
Vec4 quat_to_rotation_backward(const Vec4& q, const Mat3& grad_r);
// Applies `delta` by left multiplication and renormalises.
Vec4 quat_compose(const Vec4& delta, const Vec4& q);

// --------------------------------------------------------------------- camera

struct Camera {
    Mat3 K = Mat3::Identity();
    Mat4 E = Mat4::Identity(); // world -> camera
    int width = 1;
    int height = 1;

    // Camera at `eye` looking at `target`; +y of the image points along -up.
    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx,
                          double fy, double cx, double cy, int width, int height);

    Mat3 rotation() const { return E.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return E.topRightCorner<3, 1>(); }
    Vec3 to_camera(const Vec3& x) const { return rotation() * x + translation(); }
    Vec3 center() const { return -rotation().transpose() * translation(); }
    double fx() const { return K(0, 0); }
    double fy() const { return K(1, 1); }
    double cx() const { return K(0, 2); }
    double cy() const { return K(1, 2); }

    // Same view at another resolution, keeping pixel centres aligned with
    // pixel_to_feature_coords.
    Camera rescaled(int new_width, int new_height) const;

    // Throws InvalidArgument when an invariant fails.
    void validate() const;
};

struct Projection {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
};

inline constexpr double kMinProjectDepth = 1e-6;

// Throws PointBehindCamera when the camera-space depth is <= 1e-6.
Projection project_point(const Camera& cam, const Vec3& x);
Vec3 unproject(const Camera& cam, double u, double v, double depth);

// ------------------------------------------------------------------ Gaussians

struct Gaussian3D {
    Vec3 position = Vec3::Zero();
    SH4DCoeffs sh;
    double opacity = 1.0;
    Vec4 rotation = quat_identity();
    Vec3 scale = Vec3::Constant(0.1);

    void validate() const;
};

// Time-deformed view of a canonical set: per-Gaussian deltas at one frame.
struct Gaussian4DState {
    std::span<const Gaussian3D> base;
    std::vector<Vec3> delta_position;
    std::vector<Vec4> delta_rotation;
    std::vector<Vec3> delta_scale;
    double frame = 0.0;

    static Gaussian4DState canonical(std::span<const Gaussian3D> base, double frame = 0.0);
};

// ----------------------------------------------------------------- 2D planes

enum class ChannelKind { Rgb, Alpha, Depth, Feature };

class ImagePlane {
public:
    ImagePlane() = default;
    ImagePlane(int height, int width, int channels, ChannelKind kind, double fill = 0.0);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    ChannelKind kind() const { return kind_; }
    std::size_t size() const { return data_.size(); }

    double& at(int row, int col, int c = 0) { return data_[index(row, col, c)]; }
    double at(int row, int col, int c = 0) const { return data_[index(row, col, c)]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }

    bool same_shape(const ImagePlane& o) const {
        return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
    }
    // Finite entries, and rgb within [0, 1].
    bool valid() const;

private:
    std::size_t index(int row, int col, int c) const {
        return (static_cast<std::size_t>(row) * width_ + col) * channels_ + c;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    ChannelKind kind_ = ChannelKind::Rgb;
    std::vector<double> data_;
};

class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(int height, int width, int dims, int frame = 0, int view = 0);
    FeatureMap(ImagePlane plane, int frame, int view);

    int height() const { return plane_.height(); }
    int width() const { return plane_.width(); }
    int dims() const { return plane_.channels(); }
    int frame() const { return frame_; }
    int view() const { return view_; }

    double& at(int row, int col, int c) { return plane_.at(row, col, c); }
    double at(int row, int col, int c) const { return plane_.at(row, col, c); }
    std::span<const double> texel(int row, int col) const {
        return plane_.data().subspan((static_cast<std::size_t>(row) * width() + col) * dims(),
                                     dims());
    }

    const ImagePlane& plane() const { return plane_; }
    ImagePlane& plane() { return plane_; }

private:
    ImagePlane plane_;
    int frame_ = 0;
    int view_ = 0;
};

// -------------------------------------------------------------- bilinear math

// The four texels around a continuous point and their blend weights.
// value = (1-wx)(1-wy) f(x0,y0) + wx(1-wy) f(x1,y0) + (1-wx)wy f(x0,y1) + wx wy f(x1,y1)
struct BilinearStencil {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double wx = 0.0, wy = 0.0;

    std::array<double, 4> weights() const {
        return {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
    }
};

// Grid with `cols` x `rows` nodes; p = (x along cols, y along rows). Throws
// OutOfBounds outside [0, cols-1] x [0, rows-1].
BilinearStencil bilinear_stencil(int rows, int cols, const Vec2& p);

VecX bilinear_sample(const FeatureMap& map, const Vec2& p);

// d(sample)/dp as a D x 2 matrix, valid away from texel boundaries.
Eigen::MatrixXd bilinear_sample_jacobian(const FeatureMap& map, const Vec2& p);

struct Dims2 {
    int width = 1;
    int height = 1;
};

Vec2 pixel_to_feature_coords(const Vec2& p_img, Dims2 img, Dims2 feat);
Vec2 feature_to_pixel_coords(const Vec2& p_feat, Dims2 img, Dims2 feat);
// Clamps into [0, W-1] x [0, H-1].
Vec2 clamp_to_map(const Vec2& p, Dims2 feat);

} // namespace t4d
