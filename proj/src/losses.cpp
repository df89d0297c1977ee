#include "t4d/losses.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace t4d {

double reconstruction_loss(std::span<const ImagePlane> renders, std::span<const ImagePlane> gts,
                           std::span<const ImagePlane> render_masks,
                           std::span<const ImagePlane> gt_masks, ReconGrads* grads,
                           std::span<const double> weights) {
    const std::size_t n = renders.size();
    if (gts.size() != n || render_masks.size() != n || gt_masks.size() != n ||
        (!weights.empty() && weights.size() != n))
        throw ShapeMismatch("reconstruction_loss: item counts differ");
    double weight_sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw InvalidArgument("reconstruction_loss: weights must be >= 0");
        weight_sum += w;
    }
    if (!weights.empty() && !(weight_sum > 0.0))
        throw InvalidArgument("reconstruction_loss: weights sum to zero");
    if (grads) {
        grads->color.clear();
        grads->alpha.clear();
    }
    if (n == 0) return 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double norm = weights.empty() ? 1.0 / static_cast<double>(n) : weights[k] / weight_sum;
        const ImagePlane& c_hat = renders[k];
        const ImagePlane& c = gts[k];
        const ImagePlane& m_hat = render_masks[k];
        const ImagePlane& m = gt_masks[k];
        if (!c_hat.same_shape(c) || !m_hat.same_shape(m) || m.channels() != 1 ||
            m.height() != c.height() || m.width() != c.width())
            throw ShapeMismatch("reconstruction_loss: image shapes differ");
        const int ch = c.channels();
        ImagePlane gc, ga;
        if (grads) {
            gc = ImagePlane(c.height(), c.width(), ch, c.kind());
            ga = ImagePlane(c.height(), c.width(), 1, ChannelKind::Alpha);
        }
        double sum = 0.0;
        for (int r = 0; r < c.height(); ++r) {
            for (int x = 0; x < c.width(); ++x) {
                const double mk = m.at(r, x), mh = m_hat.at(r, x);
                for (int q = 0; q < ch; ++q) {
                    const double res = mk * c.at(r, x, q) - mh * c_hat.at(r, x, q);
                    sum += res * res;
                    if (grads) {
                        gc.at(r, x, q) = -2.0 * norm * res * mh;
                        ga.at(r, x) += -2.0 * norm * res * c_hat.at(r, x, q);
                    }
                }
            }
        }
        total += norm * sum;
        if (grads) {
            grads->color.push_back(std::move(gc));
            grads->alpha.push_back(std::move(ga));
        }
    }
    return total;
}

RigidityGraph build_rigidity_graph(std::span<const Vec3> canonical, int k) {
    if (k < 1) throw InvalidArgument("build_rigidity_graph: k must be >= 1");
    const int n = static_cast<int>(canonical.size());
    if (n < k + 1)
        throw TooFewGaussians("rigidity graph needs " + std::to_string(k + 1) + " Gaussians, got " +
                              std::to_string(n));
    RigidityGraph g;
    g.k = k;
    g.neighbors.resize(n);
    g.rest_edges.resize(n);
    std::vector<int> order(n);
    std::vector<double> d2(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) d2[j] = (canonical[j] - canonical[i]).squaredNorm();
        std::iota(order.begin(), order.end(), 0);
        std::erase(order, i);
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
            return d2[a] < d2[b] || (d2[a] == d2[b] && a < b);
        });
        order.resize(k);
        g.neighbors[i] = order;
        for (int j : order) g.rest_edges[i].push_back(canonical[j] - canonical[i]);
        order.resize(n);
    }
    return g;
}

bool fit_rotation(std::span<const Vec3> rest, std::span<const Vec3> deformed, Mat3& R) {
    Mat3 h = Mat3::Zero();
    double scale = 0.0;
    for (std::size_t e = 0; e < rest.size(); ++e) {
        h += deformed[e] * rest[e].transpose();
        scale += rest[e].squaredNorm() + deformed[e].squaredNorm();
    }
    if (!(h.cwiseAbs().maxCoeff() > 1e-14 * std::max(scale, 1e-300))) {
        R.setIdentity();
        return false;
    }
    const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
    R = svd.matrixU() * d * svd.matrixV().transpose();
    return true;
}

double arap_loss(const RigidityGraph& graph, std::span<const Vec3> canonical,
                 std::span<const Vec3> deformed, std::vector<Vec3>* grad) {
    const std::size_t n = graph.size();
    if (canonical.size() != n || deformed.size() != n)
        throw ShapeMismatch("arap_loss: point counts differ from the graph");
    if (grad) grad->assign(n, Vec3::Zero());
    if (n == 0) return 0.0;
    const double norm = 1.0 / static_cast<double>(graph.edges());
    double total = 0.0;
    std::vector<Vec3> d(graph.k);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& nb = graph.neighbors[i];
        for (int e = 0; e < graph.k; ++e) d[e] = deformed[nb[e]] - deformed[i];
        Mat3 R;
        if (!fit_rotation(graph.rest_edges[i], d, R)) continue;
        for (int e = 0; e < graph.k; ++e) {
            const Vec3 r = R * graph.rest_edges[i][e] - d[e];
            total += norm * r.squaredNorm();
            if (grad) {
                (*grad)[nb[e]] -= 2.0 * norm * r;
                (*grad)[i] += 2.0 * norm * r;
            }
        }
    }
    return total;
}

double stage_two_objective(double l_rec, double l_sds, double l_arap, double lambda4,
                           double lambda5, double lambda6) {
    if (lambda4 < 0 || lambda5 < 0 || lambda6 < 0)
        throw InvalidArgument("stage_two_objective: weights must be >= 0");
    return lambda4 * l_rec + lambda5 * l_sds + lambda6 * l_arap;
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {
    if (!(lr >= 0.0)) throw InvalidArgument("Adam: learning rate must be >= 0");
}

void Adam::step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw ShapeMismatch("Adam: parameter count changed");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
        v_[i] = b2_ * v_[i] + (1.0 - b2_) * g * g;
        params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

} // namespace t4d
