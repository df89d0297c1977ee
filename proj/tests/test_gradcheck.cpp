#include "helpers.hpp"

#include "t4d/gradcheck.hpp"

using namespace t4d;

TEST_CASE("every analytic gradient agrees with central differences") {
    const std::vector<GradCheckResult> all = gradcheck_all();
    CHECK(all.size() == 9);
    for (const GradCheckResult& r : all) {
        INFO(r.name << ": rel " << r.max_rel_error << " tol " << r.tolerance << " over " << r.checked);
        CHECK(r.checked > 0);
        CHECK(r.tolerance <= 1e-3);
        CHECK(r.passed());
    }
}

TEST_CASE("suites are reproducible for a fixed seed") {
    const GradCheckResult a = gradcheck_hexplane(5), b = gradcheck_hexplane(5);
    CHECK(a.max_rel_error == b.max_rel_error);
    CHECK(a.checked == b.checked);
    CHECK(gradcheck_arap(6).passed());
    CHECK(gradcheck_render(7).passed());
}
