#pragma once

#include <functional>
#include <string>
#include <vector>

#include "epg/autodiff.hpp"

namespace epg::ad {

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central finite-difference comparison at 64-bit precision. The builder must
// reconstruct the scalar loss from the leaves' current values on every call.
double finite_difference_max_error(
    const std::vector<NodePtr<double>>& leaves,
    const std::function<NodePtr<double>()>& build_loss, double h = 1e-5);

// Checks every differentiable operation plus a 3-block composite network.
std::vector<GradCheckReport> run_gradient_checks();

bool all_pass(const std::vector<GradCheckReport>& reports);

}  // namespace epg::ad
