#pragma once

#include <string>
#include <vector>

namespace hairseg {

struct GradCheckCase {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    bool pass = false;
};

// 64-bit central-difference checks (h = 1e-5) over every differentiable
// primitive (every coordinate) and the full tiny-preset model (sampled
// coordinates per tensor, all tensors covered). `corrupt_one` injects an op
// with a deliberately wrong backward to prove the checker reacts.
std::vector<GradCheckCase> run_gradcheck_suite(bool corrupt_one = false);

bool all_passed(const std::vector<GradCheckCase>& cases);

} // namespace hairseg
