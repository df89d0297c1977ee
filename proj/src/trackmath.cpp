#include "t4d/trackmath.hpp"

#include "t4d/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace t4d {

std::vector<QueryPoint> sample_query_grid(const ImagePlane& mask, int grid_n, int view) {
    if (grid_n < 1) throw InvalidArgument("sample_query_grid: grid_n must be >= 1");
    std::vector<QueryPoint> out;
    const int w = mask.width(), h = mask.height();
    if (w == 0 || h == 0) return out;
    for (int r = 0; r < grid_n; ++r) {
        const double v = (r + 0.5) * h / grid_n - 0.5;
        const int row = std::clamp(static_cast<int>(std::lround(v)), 0, h - 1);
        for (int c = 0; c < grid_n; ++c) {
            const double u = (c + 0.5) * w / grid_n - 0.5;
            const int col = std::clamp(static_cast<int>(std::lround(u)), 0, w - 1);
            if (mask.at(row, col) >= 0.5) out.push_back({view, Vec2(u, v)});
        }
    }
    return out;
}

std::vector<QueryPoint> select_training_points(std::span<const QueryPoint> points, int k,
                                               std::uint64_t seed) {
    std::vector<QueryPoint> all(points.begin(), points.end());
    if (k < 0) throw InvalidArgument("select_training_points: k must be >= 0");
    if (static_cast<std::size_t>(k) >= all.size()) return all;
    Rng rng(seed);
    rng.shuffle(std::span<QueryPoint>(all));
    all.resize(k);
    return all;
}

SimilarityMap cosine_similarity_map(const FeatureMap& fm, const VecX& d) {
    if (d.size() != fm.dims()) throw ShapeMismatch("cosine_similarity_map: descriptor width");
    const double dn = d.norm();
    if (!(dn > 1e-12)) throw ZeroDescriptor("query descriptor has zero norm");
    SimilarityMap sm;
    sm.values = Eigen::MatrixXd::Zero(fm.height(), fm.width());
    for (int r = 0; r < fm.height(); ++r) {
        for (int c = 0; c < fm.width(); ++c) {
            const auto t = fm.texel(r, c);
            const Eigen::Map<const VecX> tv(t.data(), static_cast<Eigen::Index>(t.size()));
            const double tn = tv.norm();
            if (tn > 1e-12) sm.values(r, c) = std::clamp(tv.dot(d) / (tn * dn), -1.0, 1.0);
        }
    }
    return sm;
}

namespace {

Eigen::MatrixXd softmax_weights(const SimilarityMap& sm, double tau) {
    if (!(tau > 0.0)) throw InvalidArgument("soft_argmax: temperature must be > 0");
    if (sm.values.size() == 0) throw InvalidArgument("soft_argmax: empty map");
    const double top = sm.values.maxCoeff();
    Eigen::MatrixXd w = ((sm.values.array() - top) / tau).exp().matrix();
    return w / w.sum();
}

} // namespace

Vec2 soft_argmax(const SimilarityMap& sm, double tau) {
    const Eigen::MatrixXd w = softmax_weights(sm, tau);
    Vec2 out = Vec2::Zero();
    for (int r = 0; r < sm.height(); ++r)
        for (int c = 0; c < sm.width(); ++c) out += w(r, c) * Vec2(c, r);
    return out;
}

SimilarityMap soft_argmax_backward(const SimilarityMap& sm, double tau, const Vec2& grad_out) {
    const Eigen::MatrixXd w = softmax_weights(sm, tau);
    Vec2 mean = Vec2::Zero();
    for (int r = 0; r < sm.height(); ++r)
        for (int c = 0; c < sm.width(); ++c) mean += w(r, c) * Vec2(c, r);
    SimilarityMap g;
    g.values.resize(sm.height(), sm.width());
    for (int r = 0; r < sm.height(); ++r)
        for (int c = 0; c < sm.width(); ++c)
            g.values(r, c) = w(r, c) * grad_out.dot(Vec2(c, r) - mean) / tau;
    return g;
}

Track nn_track(std::span<const FeatureMap> video, const QueryPoint& q, Dims2 img, double tau) {
    Track t;
    t.view = q.view;
    if (video.empty()) return t;
    const Dims2 feat{video.front().width(), video.front().height()};
    const Vec2 q_feat = clamp_to_map(pixel_to_feature_coords(q.p, img, feat), feat);
    const VecX d = bilinear_sample(video.front(), q_feat);
    t.positions.push_back(q_feat);
    t.visible.push_back(1);
    for (std::size_t j = 1; j < video.size(); ++j) {
        t.positions.push_back(soft_argmax(cosine_similarity_map(video[j], d), tau));
        t.visible.push_back(1);
    }
    return t;
}

namespace {

double cosine(const VecX& a, const VecX& b, VecX* ga, VecX* gb, double scale) {
    const double na = a.norm(), nb = b.norm();
    if (!(na > 1e-12) || !(nb > 1e-12)) throw ZeroDescriptor("descriptor has zero norm");
    const double c = a.dot(b) / (na * nb);
    if (ga) *ga += scale * (b / (na * nb) - c * a / (na * na));
    if (gb) *gb += scale * (a / (na * nb) - c * b / (nb * nb));
    return c;
}

} // namespace

double correspondence_loss(const DescriptorSet& h, const TrackSet* tracks, DescriptorSet* grad) {
    const int n = static_cast<int>(h.size());
    if (n == 0) return 0.0;
    int f = -1;
    for (const auto& view : h)
        for (const auto& pt : view) {
            if (f < 0) f = static_cast<int>(pt.size());
            if (static_cast<int>(pt.size()) != f)
                throw ShapeMismatch("correspondence_loss: ragged frame counts");
        }
    if (f <= 0) return 0.0;
    if (tracks && static_cast<int>(tracks->size()) != n)
        throw ShapeMismatch("correspondence_loss: track set does not match descriptors");
    if (grad) {
        *grad = h;
        for (auto& view : *grad)
            for (auto& pt : view)
                for (auto& d : pt) d.setZero();
    }
    const double norm = 1.0 / (static_cast<double>(n) * f);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const int pts = static_cast<int>(h[i].size());
        if (pts == 0) continue;
        if (tracks && static_cast<int>((*tracks)[i].size()) != pts)
            throw ShapeMismatch("correspondence_loss: point count mismatch");
        for (int k = 0; k < pts; ++k) {
            const Track* tr = tracks ? &(*tracks)[i][k] : nullptr;
            for (int j = 0; j + 1 < f; ++j) {
                if (tr && (!tr->visible_at(j) || !tr->visible_at(j + 1))) continue;
                const double s = norm / pts;
                VecX* ga = grad ? &(*grad)[i][k][j] : nullptr;
                VecX* gb = grad ? &(*grad)[i][k][j + 1] : nullptr;
                total += s * (1.0 - cosine(h[i][k][j], h[i][k][j + 1], ga, gb, -s));
            }
        }
    }
    return total;
}

double huber(double r, double delta) {
    const double a = std::abs(r);
    return a <= delta ? 0.5 * a * a : delta * (a - 0.5 * delta);
}

double position_loss(const TrackSet& tracked, const TrackSet& predicted, double delta,
                     std::vector<std::vector<std::vector<Vec2>>>* grad) {
    if (!(delta > 0.0)) throw InvalidArgument("position_loss: delta must be > 0");
    if (tracked.size() != predicted.size()) throw ShapeMismatch("position_loss: view counts differ");
    const int n = static_cast<int>(tracked.size());
    if (grad) grad->assign(n, {});
    int f = -1;
    for (int i = 0; i < n; ++i) {
        if (tracked[i].size() != predicted[i].size())
            throw ShapeMismatch("position_loss: point counts differ");
        for (std::size_t k = 0; k < tracked[i].size(); ++k) {
            const int fi = tracked[i][k].frames();
            if (predicted[i][k].frames() != fi) throw ShapeMismatch("position_loss: frame counts differ");
            if (f < 0) f = fi;
            if (fi != f) throw ShapeMismatch("position_loss: ragged frame counts");
        }
    }
    if (n == 0 || f <= 0) return 0.0;
    const double norm = 1.0 / (static_cast<double>(n) * f);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const int pts = static_cast<int>(tracked[i].size());
        if (grad) (*grad)[i].assign(pts, std::vector<Vec2>(f, Vec2::Zero()));
        for (int k = 0; k < pts; ++k) {
            const Track& t = tracked[i][k];
            const Track& p = predicted[i][k];
            for (int j = 1; j < f; ++j) {
                if (!t.visible_at(j)) continue;
                const Vec2 res = p.positions[j] - t.positions[j];
                const double r = res.norm();
                const double s = norm / pts;
                total += s * huber(r, delta);
                if (grad && r > 0.0) {
                    // d Huber / d r is r in the quadratic branch, delta beyond it.
                    const double dr = r <= delta ? r : delta;
                    (*grad)[i][k][j] += s * dr * res / r;
                }
            }
        }
    }
    return total;
}

double stage_one_objective(double l_diff, double l_corr, double l_pos, double lambda1,
                           double lambda2, double lambda3) {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
        throw InvalidArgument("stage_one_objective: weights must be >= 0");
    return lambda1 * l_diff + lambda2 * l_corr + lambda3 * l_pos;
}

} // namespace t4d
