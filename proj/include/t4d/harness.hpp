#pragma once

// Synthetic scenes with known motion, rendered into multi-view datasets
// with masks, feature videos and ground-truth tracks.
//
// World +z is up. Cameras sit on a circle around the object centre and look
// at it. Frames are 0-based; frame j of N has normalised time j / (N - 1).

#include "t4d/config.hpp"
#include "t4d/io.hpp"
#include "t4d/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace t4d {

enum class ObjectPreset { SphereShell, TwoBlob, Ring };
enum class MotionPreset { Static, RigidTranslate, RigidRotate, TwoPart, SinusoidalBend };
enum class FeatureMode { Rendered, FromFile, None };

std::string to_string(ObjectPreset p);
std::string to_string(MotionPreset p);
std::string to_string(FeatureMode m);

struct SceneSpec {
    ObjectPreset object = ObjectPreset::SphereShell;
    int gaussians = 64;
    MotionPreset motion = MotionPreset::RigidTranslate;
    double amplitude = 0.5;
    int frames = 16;
    int views = 4;
    int heldout_views = 2;
    double radius = 4.0;        // camera circle radius
    double elevation = 20.0;    // degrees
    double heldout_elevation = 35.0;
    int width = 64;
    int height = 64;
    double focal = 80.0;        // pixels
    FeatureMode feature_mode = FeatureMode::Rendered;
    int feature_dims = 8;
    int feature_downsample = 2;
    std::string feature_dir;    // FromFile: a dataset-style directory with cam_i/feat_j.imgf
    int sh_degree = 1;
    int sh_terms = 4;
    int query_grid = 15;
    std::uint64_t seed = 1;

    static SceneSpec from_config(const Config& c);
    Config to_config() const;
    void validate() const;
};

struct Pose {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = quat_identity();
    Vec3 scale = Vec3::Ones();
};

// Exact per-Gaussian pose as a function of frame.
class MotionFunction {
public:
    MotionFunction() = default;
    MotionFunction(MotionPreset preset, double amplitude, int frames, Vec3 centre, double half_width,
                   std::vector<int> part);

    Pose at(std::size_t index, const Gaussian3D& g, double frame) const;
    MotionPreset preset() const { return preset_; }
    int part(std::size_t index) const { return part_.empty() ? 0 : part_[index]; }

private:
    MotionPreset preset_ = MotionPreset::Static;
    double amplitude_ = 0.0;
    int frames_ = 1;
    Vec3 centre_ = Vec3::Zero();
    double half_width_ = 1.0;
    std::vector<int> part_;
};

struct SynthScene {
    std::vector<Gaussian3D> gaussians;
    MotionFunction motion;
    std::vector<VecX> descriptors; // unit feature descriptor per Gaussian
};

// Deterministic from spec.seed.
SynthScene synth_scene(const SceneSpec& spec);

// Training cameras first, held-out cameras after.
std::vector<CameraRecord> rig_cameras(const SceneSpec& spec);

// Geometry (and colours when `rgb`) of the scene at one frame.
RenderScene posed_scene(const SynthScene& scene, double frame, const Camera* rgb_camera);

struct Dataset {
    Config spec;
    std::vector<CameraRecord> cameras;
    std::vector<std::vector<ImagePlane>> rgb;       // [camera][frame]
    std::vector<std::vector<ImagePlane>> mask;      // [camera][frame]
    std::vector<std::vector<FeatureMap>> features;  // [camera][frame]; empty without features
    TrackSet tracks;                                // [training view][point], pixels
    MotionTable motion;
    std::vector<Gaussian3D> canonical;

    int frames() const { return rgb.empty() ? 0 : static_cast<int>(rgb.front().size()); }
    std::vector<int> train_views() const;
    std::vector<int> heldout_views() const;
    // Feature video of the listed cameras, each camera rescaled to its maps.
    FeatureVideo feature_video(const std::vector<int>& cams) const;
    TrainingData training() const;
};

Dataset render_dataset(const SynthScene& scene, const SceneSpec& spec);

// Layout: cam_{i}/frame_{j}.png, cam_{i}/frame_{j}.imgf, cam_{i}/mask_{j}.imgf,
// cam_{i}/feat_{j}.imgf, cameras.csv, tracks.txt, gt_motion.csv,
// gaussians.bin and dataset.ini.
void write_dataset(const Dataset& d, const fs::path& dir);
Dataset read_dataset(const fs::path& dir);

// Ground-truth tracks for the masked query grid of every training view of
// an already rendered dataset.
TrackSet ground_truth_tracks(const SynthScene& scene, const Dataset& d, int grid_n);

} // namespace t4d
