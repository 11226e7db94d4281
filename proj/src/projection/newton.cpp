#include "daehn/projection/newton.hpp"

#include <string>

namespace daehn::proj {

void ProjectionConfig::validate() const {
  if (!(newton_step_length > 0.0 && newton_step_length <= 1.0))
    throw std::invalid_argument("newton_step_length must lie in (0, 1], got " + std::to_string(newton_step_length));
  if (max_newton_iter < 1)
    throw std::invalid_argument("max_newton_iter must be >= 1, got " + std::to_string(max_newton_iter));
  if (!(residual_tol > 0.0)) throw std::invalid_argument("residual_tol must be positive");
  if (!(jacobian_regularization > 0.0)) throw std::invalid_argument("jacobian_regularization must be positive");
}

std::vector<ProjectionResult> project_batch(const std::vector<BackboneBundle<double>>& bundles,
                                            const sym::KktSystem& sys, std::span<const double> params,
                                            const ProjectionConfig& config) {
  config.validate();
  std::vector<ProjectionResult> out;
  out.reserve(bundles.size());
  for (const auto& b : bundles) out.push_back(project(sys, b, params, config));
  return out;
}

}  // namespace daehn::proj
