#pragma once

// Central finite-difference checks of every analytic gradient in the
// library. Each suite reports the worst relative error over the entries it
// probes:
//   rel = |analytic - numeric| / max(|analytic|, |numeric|, 1e-3 * group_max)
// where group_max is the largest analytic magnitude within the parameter
// group, so entries that are zero up to rounding do not dominate.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace t4d {

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    int checked = 0;
    bool passed() const { return checked > 0 && max_rel_error < tolerance; }
};

GradCheckResult gradcheck_render(std::uint64_t seed = 11);
GradCheckResult gradcheck_hexplane(std::uint64_t seed = 12);
GradCheckResult gradcheck_decoder(std::uint64_t seed = 13);
GradCheckResult gradcheck_color(std::uint64_t seed = 14);
GradCheckResult gradcheck_color_view(std::uint64_t seed = 15);
GradCheckResult gradcheck_position_loss(std::uint64_t seed = 16);
GradCheckResult gradcheck_correspondence(std::uint64_t seed = 17);
GradCheckResult gradcheck_arap(std::uint64_t seed = 18);
GradCheckResult gradcheck_full_chain(std::uint64_t seed = 19);

std::vector<GradCheckResult> gradcheck_all();

} // namespace t4d
