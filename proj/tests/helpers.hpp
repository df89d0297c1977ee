#pragma once

#include "t4d/core.hpp"
#include "t4d/rng.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

namespace t4d::test {

inline Vec4 random_quat(Rng& rng) {
    return quat_normalize(Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
}

inline Vec3 random_vec(Rng& rng, double lo, double hi) {
    return Vec3(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi));
}

// Fresh empty directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("t4d_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline Camera orbit_camera(double azimuth, double elevation, double radius, int w, int h, double f) {
    const Vec3 eye(radius * std::cos(elevation) * std::cos(azimuth),
                   radius * std::cos(elevation) * std::sin(azimuth), radius * std::sin(elevation));
    return Camera::look_at(eye, Vec3::Zero(), Vec3::UnitZ(), f, f, 0.5 * w - 0.5, 0.5 * h - 0.5, w, h);
}

} // namespace t4d::test
