#include "t4d/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace t4d {

// ---------------------------------------------------------------- quaternions

Vec4 quat_identity() { return {1.0, 0.0, 0.0, 0.0}; }

Vec4 quat_normalize(const Vec4& q) {
    const double n = q.norm();
    if (!(n > 0.0)) return quat_identity();
    return q / n;
}

Vec4 quat_multiply(const Vec4& a, const Vec4& b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Vec4 quat_from_axis_angle(const Vec3& axis, double angle) {
    const Vec3 a = axis.normalized();
    const double s = std::sin(0.5 * angle);
    return {std::cos(0.5 * angle), a.x() * s, a.y() * s, a.z() * s};
}

Mat3 quat_to_rotation(const Vec4& q_raw) {
    const Vec4 q = quat_normalize(q_raw);
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Vec4 quat_to_rotation_backward(const Vec4& q_raw, const Mat3& g) {
    const double n = q_raw.norm();
    const Vec4 q = quat_normalize(q_raw);
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 dw, dx, dy, dz;
    dw << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
    dx << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
    dy << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
    dz << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
    const Vec4 gq(g.cwiseProduct(dw).sum(), g.cwiseProduct(dx).sum(), g.cwiseProduct(dy).sum(),
                  g.cwiseProduct(dz).sum());
    if (!(n > 0.0)) return Vec4::Zero();
    return (gq - q * q.dot(gq)) / n;
}

Vec4 quat_compose(const Vec4& delta, const Vec4& q) {
    return quat_normalize(quat_multiply(delta, q));
}

// --------------------------------------------------------------------- camera

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx, double fy,
                       double cx, double cy, int width, int height) {
    const Vec3 f = (target - eye).normalized();
    const Vec3 r = f.cross(up).normalized();
    const Vec3 d = f.cross(r);
    Camera cam;
    Mat3 rot;
    rot.row(0) = r.transpose();
    rot.row(1) = d.transpose();
    rot.row(2) = f.transpose();
    cam.E.setIdentity();
    cam.E.topLeftCorner<3, 3>() = rot;
    cam.E.topRightCorner<3, 1>() = -rot * eye;
    cam.K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    cam.width = width;
    cam.height = height;
    return cam;
}

Camera Camera::rescaled(int new_width, int new_height) const {
    Camera c = *this;
    const double sx = static_cast<double>(new_width) / width;
    const double sy = static_cast<double>(new_height) / height;
    c.K(0, 0) = fx() * sx;
    c.K(1, 1) = fy() * sy;
    c.K(0, 2) = (cx() + 0.5) * sx - 0.5;
    c.K(1, 2) = (cy() + 0.5) * sy - 0.5;
    c.width = new_width;
    c.height = new_height;
    return c;
}

void Camera::validate() const {
    if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0))
        throw InvalidArgument("camera focal lengths must be positive");
    if (width < 1 || height < 1) throw InvalidArgument("camera image size must be >= 1");
    const Mat3 r = rotation();
    const double err = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(err < 1e-6)) throw InvalidArgument("camera rotation is not orthonormal");
}

Projection project_point(const Camera& cam, const Vec3& x) {
    const Vec3 c = cam.to_camera(x);
    if (!(c.z() > kMinProjectDepth))
        throw PointBehindCamera("point has camera depth " + std::to_string(c.z()));
    const Vec3 p = cam.K * c;
    return {p.x() / p.z(), p.y() / p.z(), c.z()};
}

Vec3 unproject(const Camera& cam, double u, double v, double depth) {
    const Vec3 c = cam.K.inverse() * Vec3(u * depth, v * depth, depth);
    return cam.rotation().transpose() * (c - cam.translation());
}

// ------------------------------------------------------------------ Gaussians

void Gaussian3D::validate() const {
    if (std::abs(rotation.norm() - 1.0) > 1e-6) throw InvalidArgument("rotation is not unit length");
    if (!(scale.minCoeff() > 0.0)) throw InvalidArgument("scale must be positive");
    if (!(opacity >= 0.0 && opacity <= 1.0)) throw InvalidArgument("opacity outside [0, 1]");
}

Gaussian4DState Gaussian4DState::canonical(std::span<const Gaussian3D> base, double frame) {
    Gaussian4DState s;
    s.base = base;
    s.delta_position.assign(base.size(), Vec3::Zero());
    s.delta_rotation.assign(base.size(), Vec4::Zero());
    s.delta_scale.assign(base.size(), Vec3::Zero());
    s.frame = frame;
    return s;
}

// ----------------------------------------------------------------- 2D planes

ImagePlane::ImagePlane(int height, int width, int channels, ChannelKind kind, double fill)
    : height_(height), width_(width), channels_(channels), kind_(kind) {
    if (height < 0 || width < 0 || channels < 1)
        throw InvalidArgument("ImagePlane: bad dimensions");
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

bool ImagePlane::valid() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
        if (kind_ == ChannelKind::Rgb && (v < 0.0 || v > 1.0)) return false;
    }
    return true;
}

FeatureMap::FeatureMap(int height, int width, int dims, int frame, int view)
    : plane_(height, width, dims, ChannelKind::Feature), frame_(frame), view_(view) {}

FeatureMap::FeatureMap(ImagePlane plane, int frame, int view)
    : plane_(std::move(plane)), frame_(frame), view_(view) {}

// -------------------------------------------------------------- bilinear math

namespace {

void axis_stencil(int n, double p, int& i0, int& i1, double& w) {
    if (n == 1) {
        i0 = i1 = 0;
        w = 0.0;
        return;
    }
    i0 = std::min(static_cast<int>(std::floor(p)), n - 2);
    i1 = i0 + 1;
    w = p - i0;
}

} // namespace

BilinearStencil bilinear_stencil(int rows, int cols, const Vec2& p) {
    if (!(p.x() >= 0.0 && p.x() <= cols - 1 && p.y() >= 0.0 && p.y() <= rows - 1))
        throw OutOfBounds("bilinear sample at (" + std::to_string(p.x()) + ", " +
                          std::to_string(p.y()) + ") outside the grid");
    BilinearStencil s;
    axis_stencil(cols, p.x(), s.x0, s.x1, s.wx);
    axis_stencil(rows, p.y(), s.y0, s.y1, s.wy);
    return s;
}

VecX bilinear_sample(const FeatureMap& map, const Vec2& p) {
    const BilinearStencil s = bilinear_stencil(map.height(), map.width(), p);
    const auto w = s.weights();
    VecX out(map.dims());
    for (int c = 0; c < map.dims(); ++c) {
        out[c] = w[0] * map.at(s.y0, s.x0, c) + w[1] * map.at(s.y0, s.x1, c) +
                 w[2] * map.at(s.y1, s.x0, c) + w[3] * map.at(s.y1, s.x1, c);
    }
    return out;
}

Eigen::MatrixXd bilinear_sample_jacobian(const FeatureMap& map, const Vec2& p) {
    const BilinearStencil s = bilinear_stencil(map.height(), map.width(), p);
    Eigen::MatrixXd j(map.dims(), 2);
    const double ddx = map.width() > 1 ? 1.0 : 0.0;
    const double ddy = map.height() > 1 ? 1.0 : 0.0;
    for (int c = 0; c < map.dims(); ++c) {
        const double f00 = map.at(s.y0, s.x0, c), f10 = map.at(s.y0, s.x1, c);
        const double f01 = map.at(s.y1, s.x0, c), f11 = map.at(s.y1, s.x1, c);
        j(c, 0) = ddx * ((1 - s.wy) * (f10 - f00) + s.wy * (f11 - f01));
        j(c, 1) = ddy * ((1 - s.wx) * (f01 - f00) + s.wx * (f11 - f10));
    }
    return j;
}

Vec2 pixel_to_feature_coords(const Vec2& p, Dims2 img, Dims2 feat) {
    return {(p.x() + 0.5) * feat.width / img.width - 0.5,
            (p.y() + 0.5) * feat.height / img.height - 0.5};
}

Vec2 feature_to_pixel_coords(const Vec2& p, Dims2 img, Dims2 feat) {
    return {(p.x() + 0.5) * img.width / feat.width - 0.5,
            (p.y() + 0.5) * img.height / feat.height - 0.5};
}

Vec2 clamp_to_map(const Vec2& p, Dims2 feat) {
    return {std::clamp(p.x(), 0.0, static_cast<double>(feat.width - 1)),
            std::clamp(p.y(), 0.0, static_cast<double>(feat.height - 1))};
}

} // namespace t4d
