#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace onsetnet {

struct OpCheck {
    std::string op;
    double max_rel_error = 0.0;
    double threshold = 1e-4;
    bool pass = false;
};

// Finite-difference verification of every backward pass at tiny
// double-precision shapes: each op once, then the composed model loss.
// fault_op names an op whose analytic gradient gets deliberately corrupted
// before checking; it exercises the failure path end to end.
std::vector<OpCheck> run_gradcheck_suite(std::uint64_t seed, const std::string& fault_op = "");

bool all_pass(const std::vector<OpCheck>& checks);

}  // namespace onsetnet
