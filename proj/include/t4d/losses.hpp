#pragma once

// Second-stage objectives: masked reconstruction, as-rigid-as-possible
// regularisation over a kNN graph, their weighted combination, and the Adam
// optimiser that trains the motion field.

#include "t4d/core.hpp"

#include <span>
#include <vector>

namespace t4d {

// Gradients of reconstruction_loss, one entry per (view, frame) item.
struct ReconGrads {
    std::vector<ImagePlane> color; // d/d rendered colour
    std::vector<ImagePlane> alpha; // d/d rendered mask
};

// (1 / items) sum over items of |M C - M_hat C_hat|^2, squared error summed
// over pixels and channels. Each span holds the same n * f items in the same
// order. With `weights` (one per item, summing to > 0) the plain mean becomes
// the weighted mean sum w_k L_k / sum w_k. Throws ShapeMismatch.
double reconstruction_loss(std::span<const ImagePlane> renders, std::span<const ImagePlane> gts,
                           std::span<const ImagePlane> render_masks,
                           std::span<const ImagePlane> gt_masks, ReconGrads* grads = nullptr,
                           std::span<const double> weights = {});

struct RigidityGraph {
    int k = 0;
    std::vector<std::vector<int>> neighbors;  // per Gaussian, nearest first
    std::vector<std::vector<Vec3>> rest_edges; // X_j - X_i in the canonical pose

    std::size_t size() const { return neighbors.size(); }
    std::size_t edges() const { return size() * static_cast<std::size_t>(k); }
};

// Exact kNN under Euclidean distance, ties broken by index. Throws
// TooFewGaussians when there are not k + 1 points, InvalidArgument for k < 1.
RigidityGraph build_rigidity_graph(std::span<const Vec3> canonical, int k = 8);

// Best rotation R with R e ~ d over paired edges (det-corrected Procrustes).
// Returns false when the cross-covariance is numerically zero.
bool fit_rotation(std::span<const Vec3> rest, std::span<const Vec3> deformed, Mat3& R);

// Mean over edges of |R_i (X_j - X_i) - (X'_j - X'_i)|^2, with R_i fitted per
// Gaussian. A point whose cross-covariance vanishes contributes 0. `grad`
// (resized to N) receives d/dX'. Rotations are optimal, so they carry no
// first-order term.
double arap_loss(const RigidityGraph& graph, std::span<const Vec3> canonical,
                 std::span<const Vec3> deformed, std::vector<Vec3>* grad = nullptr);

double stage_two_objective(double l_rec, double l_sds, double l_arap, double lambda4,
                           double lambda5, double lambda6);

inline constexpr double kLambdaRec = 100.0;
inline constexpr double kLambdaSds = 0.01;
inline constexpr double kLambdaArap = 10.0;

class Adam {
public:
    Adam() = default;
    Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(std::span<double> params, std::span<const double> grads);
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    long steps() const { return t_; }

private:
    double lr_ = 1e-3, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
    std::vector<double> m_, v_;
};

} // namespace t4d
