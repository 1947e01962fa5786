#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biounet/grad_check.hpp"

namespace biounet::testing {

struct GradCase {
  std::string name;
  GradCheckReport report;
};

/// Finite-difference checks at 64-bit of every differentiable kernel, every
/// loss, and the three model compositions, with inputs drawn from `seed`.
std::vector<GradCase> run_grad_suite(std::uint64_t seed);

}  // namespace biounet::testing
