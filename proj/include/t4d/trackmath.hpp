#pragma once

// Feature-space point tracking and the two tracking losses used in the first
// stage: query-grid sampling, cosine-similarity matching, soft-argmax
// localisation, the adjacent-frame correspondence loss and the Huber
// position loss.
//
// Frames are 0-based. Track positions produced by nn_track live in feature
// map coordinates; tracks read from a dataset live in image pixels.

#include "t4d/core.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace t4d {

struct QueryPoint {
    int view = 0;
    Vec2 p = Vec2::Zero();
};

struct Track {
    int view = 0;
    int id = 0;
    std::vector<Vec2> positions;
    std::vector<char> visible;

    int frames() const { return static_cast<int>(positions.size()); }
    bool visible_at(int j) const { return visible.empty() || visible[j] != 0; }
};

// [view][point]
using TrackSet = std::vector<std::vector<Track>>;

struct SimilarityMap {
    Eigen::MatrixXd values; // rows = map height, cols = map width

    int height() const { return static_cast<int>(values.rows()); }
    int width() const { return static_cast<int>(values.cols()); }
};

inline constexpr double kDefaultTemperature = 0.07;
inline constexpr double kDefaultHuberDelta = 1.0;

// grid_n x grid_n cell centres, row-major, dropping points where the mask
// (read at the nearest pixel) is below 0.5.
std::vector<QueryPoint> sample_query_grid(const ImagePlane& mask, int grid_n, int view = 0);

// k points without replacement (Fisher-Yates on a seeded generator), or all
// of them when k >= points.size(). Order follows the shuffle.
std::vector<QueryPoint> select_training_points(std::span<const QueryPoint> points, int k,
                                               std::uint64_t seed);

// Throws ZeroDescriptor when |d| <= 1e-12. Zero-norm texels score 0.
SimilarityMap cosine_similarity_map(const FeatureMap& fm, const VecX& d);

// Softmax(sm / tau)-weighted mean of texel coordinates, as (x = col, y = row).
Vec2 soft_argmax(const SimilarityMap& sm, double tau);
// d(loss)/d(sm) given d(loss)/d(output).
SimilarityMap soft_argmax_backward(const SimilarityMap& sm, double tau, const Vec2& grad_out);

// Tracks the descriptor under `q` (image pixels of an image of size `img`)
// through a per-frame feature video. Frame 0 is q mapped to feature
// coordinates; later frames are soft-argmax matches against the frame-0
// descriptor.
Track nn_track(std::span<const FeatureMap> video, const QueryPoint& q, Dims2 img,
               double tau = kDefaultTemperature);

// descriptors[i][k][j]: view i, point k, frame j.
using DescriptorSet = std::vector<std::vector<std::vector<VecX>>>;

// (1 / (n f)) sum_i mean_k sum_{j < f-1} (1 - cos(h_{i,k,j}, h_{i,k,j+1})).
// Pairs touching a frame flagged invisible in `tracks` ([view][point]) are
// dropped without changing the normalisation. When `grad` is non-null it
// receives d(loss)/d(descriptor) with the same shape as `h`.
double correspondence_loss(const DescriptorSet& h, const TrackSet* tracks = nullptr,
                           DescriptorSet* grad = nullptr);

double huber(double r, double delta);

// (1 / (n f)) sum_i mean_k sum_{j >= 1} Huber(|p - p_hat|; delta), frames
// invisible in `tracked` dropped. `grad`, when non-null, is resized to
// [view][point][frame] and receives d(loss)/d(predicted position).
double position_loss(const TrackSet& tracked, const TrackSet& predicted,
                     double delta = kDefaultHuberDelta,
                     std::vector<std::vector<std::vector<Vec2>>>* grad = nullptr);

double stage_one_objective(double l_diff, double l_corr, double l_pos, double lambda1,
                           double lambda2, double lambda3);

// Weights used by the first stage: diffusion, correspondence, position.
inline constexpr double kLambdaDiff = 1.0;
inline constexpr double kLambdaCorr = 0.1;
inline constexpr double kLambdaPos = 10.0;

} // namespace t4d
