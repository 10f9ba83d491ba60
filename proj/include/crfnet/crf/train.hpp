#pragma once

#include <utility>

#include "crfnet/crf/model.hpp"
#include "crfnet/crf/objective.hpp"
#include "crfnet/optim/lbfgs.hpp"

namespace crfnet {

struct CrfTrainResult {
  CrfModel model;
  OptimReport report;
};

/// Batch training: every evaluation of the objective covers the whole
/// training set. The optimizer minimizes -L(theta).
inline CrfTrainResult train_crf(const RegularizedDataset& data, const CrfModel& init,
                                const OptimConfig& config) {
  check_dataset(init, data);
  CrfModel scratch = init;
  auto negated = [&](std::span<const double> theta) {
    scratch.assign(theta);
    ObjectiveValue ov = objective_with_gradient(scratch, data);
    Evaluation e{-ov.value, std::move(ov.gradient)};
    for (double& g : e.gradient) g = -g;
    return e;
  };
  OptimResult r = lbfgs_minimize(negated, init.flatten(), config);
  return {CrfModel::from_flat(init.labels(), init.dim(), r.solution), std::move(r.report)};
}

/// Zero-initialized model (the uniform conditional distribution).
inline CrfModel zero_model(const LabelSet& labels, std::size_t dim) {
  return CrfModel(labels, dim);
}

}  // namespace crfnet
