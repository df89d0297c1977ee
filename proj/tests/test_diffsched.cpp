#include "helpers.hpp"

#include "t4d/diffsched.hpp"
#include "t4d/trackmath.hpp"

#include <sstream>

using namespace t4d;
using namespace t4d::test;

namespace {

int nearest_t(const NoiseSchedule& s, double target) {
    int best = 0;
    for (int t = 0; t <= s.T; ++t)
        if (std::abs(s.alpha_bar[t] - target) < std::abs(s.alpha_bar[best] - target)) best = t;
    return best;
}

LatentVideo small_random(std::uint64_t seed) { return LatentVideo::randn(2, 3, 4, 5, 6, seed); }

} // namespace

TEST_CASE("default schedule matches a direct product") {
    const NoiseSchedule s = build_schedule(1000, 1e-4, 0.02, 0.1);
    REQUIRE(s.alpha_bar.size() == 1001);
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        const double beta = 1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0;
        CHECK(s.beta[t] == doctest::Approx(beta).epsilon(1e-12));
        prod *= 1.0 - beta;
        CHECK(s.alpha_bar[t] == doctest::Approx(prod).epsilon(1e-10));
        CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        CHECK(s.beta_cond[t] >= s.beta_cond[t - 1]);
    }
    CHECK(s.alpha_bar[1000] == doctest::Approx(4.0e-5).epsilon(0.05));
    CHECK(s.alpha_bar[0] == 1.0);
    CHECK(s.beta_cond[0] == 0.0);
    CHECK(s.beta_cond[500] == doctest::Approx(0.05));
    for (int t = 0; t <= 1000; ++t) CHECK(std::abs(s.alpha[t] * s.alpha[t] + s.sigma[t] * s.sigma[t] - 1) < 1e-9);
}

TEST_CASE("single-step schedule and invalid ranges") {
    const NoiseSchedule s = build_schedule(1, 1e-3, 0.02, 0.1);
    CHECK(s.alpha_bar[1] == doctest::Approx(1 - 1e-3).epsilon(1e-14));
    CHECK_THROWS_AS(build_schedule(0), InvalidRange);
    CHECK_THROWS_AS(build_schedule(10, 0.0, 0.02), InvalidRange);
    CHECK_THROWS_AS(build_schedule(10, 0.03, 0.02), InvalidRange);
    CHECK_THROWS_AS(build_schedule(10, 1e-4, 1.0), InvalidRange);
    CHECK_THROWS_AS(s.check_t(2), InvalidRange);
}

TEST_CASE("schedule CSV has the documented columns") {
    std::ostringstream out;
    write_schedule_csv(build_schedule(5), out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,beta_ddpm,alpha_bar,alpha,sigma,beta_cond");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 6);
}

TEST_CASE("forward_diffuse endpoints and shape checks") {
    const NoiseSchedule s = build_schedule();
    const LatentVideo z0 = small_random(1), eps = small_random(2);
    const LatentVideo at0 = forward_diffuse(s, z0, 0, eps);
    CHECK(at0.flat() == z0.flat());
    // alpha_bar never reaches exactly 0, so check against the closed form at T.
    const LatentVideo at_t = forward_diffuse(s, z0, 1000, eps);
    CHECK((at_t.flat() - (s.alpha[1000] * z0.flat() + s.sigma[1000] * eps.flat())).norm() < 1e-12);
    CHECK((at_t.flat() - eps.flat()).lpNorm<Eigen::Infinity>() < 0.03);
    CHECK_THROWS_AS(forward_diffuse(s, z0, 3, LatentVideo::randn(2, 3, 4, 5, 5, 3)), ShapeMismatch);
}

TEST_CASE("noised latents keep unit variance") {
    const NoiseSchedule s = build_schedule();
    const int t = nearest_t(s, 0.5);
    CHECK(s.alpha_bar[t] == doctest::Approx(0.5).epsilon(0.01));
    const LatentVideo z0 = LatentVideo::randn(1, 1, 1, 1, 100000, 3);
    const LatentVideo eps = LatentVideo::randn(1, 1, 1, 1, 100000, 4);
    const VecX z = forward_diffuse(s, z0, t, eps).flat();
    const double mean = z.mean();
    const double var = (z.array() - mean).square().sum() / (z.size() - 1);
    CHECK(var == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("condition_noise") {
    const NoiseSchedule s = build_schedule(1000, 1e-4, 0.02, 0.1);
    const LatentVideo z0 = small_random(5), eps = small_random(6);
    CHECK(condition_noise(s, z0, 0, eps).flat() == z0.flat());

    const NoiseSchedule unit = build_schedule(10, 1e-4, 0.02, 1.0);
    LatentVideo neg = z0;
    neg.flat() *= -1.0;
    CHECK(condition_noise(unit, z0, 10, neg).flat().norm() == 0.0);

    const LatentVideo big0(1, 1, 1, 1, 100000, 0.0);
    const LatentVideo e = LatentVideo::randn(1, 1, 1, 1, 100000, 7);
    const VecX d = condition_noise(s, big0, 500, e).flat();
    const double sd = std::sqrt((d.array() - d.mean()).square().sum() / (d.size() - 1));
    CHECK(sd == doctest::Approx(0.05).epsilon(0.02));
    CHECK_THROWS_AS(condition_noise(s, z0, 1, LatentVideo::randn(1, 3, 4, 5, 6, 1)), ShapeMismatch);
}

TEST_CASE("diffusion loss and sds loss") {
    const LatentVideo a = small_random(8), b = small_random(9);
    CHECK(diffusion_loss(a, a) == 0.0);
    const LatentVideo zero(1, 2, 3, 4, 5, 0.0), ones(1, 2, 3, 4, 5, 1.0);
    CHECK(diffusion_loss(zero, ones) == doctest::Approx(1.0));
    CHECK(sds_loss(ones, zero) == doctest::Approx(1.0));
    CHECK(sds_loss(a, a) == 0.0);
    double oracle = 0;
    for (std::size_t i = 0; i < a.size(); ++i) oracle += std::pow(a.flat()[i] - b.flat()[i], 2);
    oracle /= a.size();
    CHECK(std::abs(diffusion_loss(a, b) - oracle) < 1e-12);
    CHECK(std::abs(sds_loss(a, b) - oracle) < 1e-12);
    CHECK(diffusion_loss(a, b) == sds_loss(b, a));
    CHECK_THROWS_AS(diffusion_loss(a, zero), ShapeMismatch);
    CHECK_THROWS_AS(sds_loss(a, zero), ShapeMismatch);
}

TEST_CASE("sds gradient matches finite differences") {
    LatentVideo z = LatentVideo::randn(1, 2, 2, 3, 3, 10);
    const LatentVideo z0 = LatentVideo::randn(1, 2, 2, 3, 3, 11);
    const LatentVideo g = sds_loss_grad(z, z0);
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double keep = z.flat()[i];
        z.flat()[i] = keep + 1e-6;
        const double up = sds_loss(z, z0);
        z.flat()[i] = keep - 1e-6;
        const double dn = sds_loss(z, z0);
        z.flat()[i] = keep;
        CHECK(g.flat()[i] == doctest::Approx((up - dn) / 2e-6).epsilon(1e-6));
    }
}

TEST_CASE("z0_estimate inverts forward_diffuse") {
    const NoiseSchedule s = build_schedule();
    const LatentVideo z0 = small_random(12), eps = small_random(13);
    for (int t = 0; t <= s.T; t += 7) {
        if (s.alpha[t] <= 1e-4) continue;
        const LatentVideo est = z0_estimate(s, forward_diffuse(s, z0, t, eps), eps, t);
        CHECK((est.flat() - z0.flat()).lpNorm<Eigen::Infinity>() < 1e-9);
    }
    const LatentVideo zt = small_random(14);
    CHECK(z0_estimate(s, zt, eps, 0).flat() == zt.flat());
    const int t = 321;
    const LatentVideo est = z0_estimate(s, zt, eps, t);
    for (std::size_t i = 0; i < zt.size(); i += 11)
        CHECK(std::abs(est.flat()[i] - (zt.flat()[i] - s.sigma[t] * eps.flat()[i]) / s.alpha[t]) < 1e-12);
}

TEST_CASE("z0_estimate rejects a vanishing signal") {
    NoiseSchedule s = build_schedule(10);
    s.alpha[10] = 1e-9;
    const LatentVideo z = small_random(15);
    CHECK_THROWS_AS(z0_estimate(s, z, z, 10), DegenerateSignal);
}

TEST_CASE("cheating denoisers") {
    const NoiseSchedule s = build_schedule();
    const LatentVideo z0 = small_random(16), eps = small_random(17), cond = LatentVideo::randn(2, 1, 4, 5, 6, 18);
    const Conditioning y;
    const int t = 400;
    const LatentVideo zt = forward_diffuse(s, z0, t, eps);

    const CheatingDenoiser noise = CheatingDenoiser::from_noise(eps);
    const LatentVideo pred = noise.predict(cond, zt, t, y);
    CHECK(pred.flat() == eps.flat());
    // The diffusion term vanishes and the first-stage objective keeps only the tracking terms.
    const double l_diff = diffusion_loss(eps, pred);
    CHECK(l_diff == 0.0);
    CHECK(stage_one_objective(l_diff, 0.3, 0.7, kLambdaDiff, kLambdaCorr, kLambdaPos) ==
          kLambdaCorr * 0.3 + kLambdaPos * 0.7);

    const CheatingDenoiser clean = CheatingDenoiser::from_clean(z0, s);
    const LatentVideo other = small_random(19);
    const LatentVideo zt2 = forward_diffuse(s, other, t, eps);
    const LatentVideo z0_hat = z0_estimate(s, zt2, clean.predict(cond, zt2, t, y), t);
    CHECK((z0_hat.flat() - z0.flat()).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK(sds_loss(other, z0_hat) == doctest::Approx(sds_loss(other, z0)).epsilon(1e-9));
}

TEST_CASE("zero and linear denoisers") {
    const LatentVideo zt = small_random(20), cond = LatentVideo::randn(2, 1, 4, 5, 6, 21);
    const Conditioning y;
    const LatentVideo z = ZeroDenoiser().predict(cond, zt, 10, y);
    CHECK(z.same_shape(zt));
    CHECK(z.flat().norm() == 0.0);

    const LinearDenoiser lin(4, 5);
    const LatentVideo p = lin.predict(cond, zt, 10, y);
    REQUIRE(p.same_shape(zt));
    for (int c = 0; c < 4; ++c) {
        double expect = lin.bias()[c];
        for (int k = 0; k < 4; ++k) expect += lin.weights()(c, k) * zt.at(1, 2, k, 3, 4);
        CHECK(p.at(1, 2, c, 3, 4) == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(lin.predict(cond, zt, 10, y).flat() == p.flat());
}

TEST_CASE("LatentVideo frame slices") {
    const LatentVideo v = LatentVideo::randn(2, 5, 3, 2, 2, 22);
    const LatentVideo s = v.frames_slice(1, 4);
    CHECK(s.frames() == 3);
    CHECK(s.at(1, 0, 2, 1, 1) == v.at(1, 1, 2, 1, 1));
    CHECK(s.at(0, 2, 0, 0, 1) == v.at(0, 3, 0, 0, 1));
}
