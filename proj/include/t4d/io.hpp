#pragma once

// On-disk formats. Binary files are little-endian.
//
//   IMGF        "IMGF", u32 H, u32 W, u32 C, then H*W*C f32 row-major.
//   gaussians   "GS4D", u32 N, u32 l_max, u32 terms, u32 n_frames, then per
//               Gaussian f64 position[3], opacity, rotation[4] (w,x,y,z),
//               scale[3] and the SH weights in [channel][lm][i] order.
//   checkpoint  three sections back to back:
//               "HEX4", u32 L, 12 u32 (rows, cols) of the six level-0
//               planes, u32 channels, u32 n_frames, 6 f64 bbox
//               (min xyz, max xyz), then every plane of every level in
//               pair order as f32;
//               "DEC1", u32 in_dim, u32 hidden, u32 heads, u32 dims of
//               each head, then the f32 weights in parameter order;
//               "SH4D", u32 N, u32 channels, u32 l_max, u32 terms,
//               u32 n_frames, then f32 weights Gaussian by Gaussian.
//   cameras.csv view,split,width,height,fx,fy,cx,cy,e00..e23 (rows of the
//               3x4 world-to-camera block).
//   tracks.txt  per point a line "view id", then one line "j u v visible"
//               per frame, pixel coordinates.
//   gt_motion   frame,gaussian,x,y,z,qw,qx,qy,qz,sx,sy,sz.

#include "t4d/pipeline.hpp"
#include "t4d/trackmath.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace t4d {

namespace fs = std::filesystem;

void write_imgf(const fs::path& path, const ImagePlane& img);
ImagePlane read_imgf(const fs::path& path, ChannelKind kind);

// 8-bit PNG of a 1- or 3-channel plane, values clamped to [0, 1].
void write_png(const fs::path& path, const ImagePlane& img);

void write_gaussians(const fs::path& path, std::span<const Gaussian3D> gaussians);
std::vector<Gaussian3D> read_gaussians(const fs::path& path);

struct CameraRecord {
    Camera camera;
    bool heldout = false;
};
void write_cameras_csv(const fs::path& path, std::span<const CameraRecord> cams);
std::vector<CameraRecord> read_cameras_csv(const fs::path& path);

void write_tracks(const fs::path& path, const TrackSet& tracks);
// `views` sizes the result; records for views outside [0, views) are an error.
TrackSet read_tracks(const fs::path& path, int views);

// positions[frame][gaussian], rotations and scales likewise.
struct MotionTable {
    std::vector<std::vector<Vec3>> positions;
    std::vector<std::vector<Vec4>> rotations;
    std::vector<std::vector<Vec3>> scales;
    int frames() const { return static_cast<int>(positions.size()); }
};
void write_motion_csv(const fs::path& path, const MotionTable& motion);
MotionTable read_motion_csv(const fs::path& path);

void save_checkpoint(const fs::path& path, const DynamicModel& model);
// Replaces the learnable parameters of `model` (built for the same canonical
// set and configuration) with those stored at `path`. Throws ShapeMismatch
// when the layouts disagree.
void load_checkpoint(const fs::path& path, DynamicModel& model);
// Reads the HEX4 / DEC1 headers only, enough to rebuild a matching model.
struct CheckpointShape {
    HexPlaneConfig hex;
    BoundingBox box;
    int n_frames = 0;
    int decoder_in = 0;
    int decoder_hidden = 0;
};
CheckpointShape read_checkpoint_shape(const fs::path& path);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

} // namespace t4d
