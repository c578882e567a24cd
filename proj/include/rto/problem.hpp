#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rto/density_simp.hpp"
#include "rto/mesh_fem.hpp"
#include "rto/stochastic_loads.hpp"

namespace rto {

/// A fully specified structural problem: domain, supports, random loads and material.
struct ProblemSpec {
  std::string name;
  std::shared_ptr<const fem::Mesh> mesh;
  std::vector<int> fixed_dofs;
  LoadModel loads;
  double volume_fraction = 0.3;
  MaterialModel material;
  double poisson = 0.3;
  RadiusSchedule filter;
  bool symmetric = false;

  FemContext make_context(fem::SolverOptions opts = {}, int workers = 1) const {
    return FemContext(*mesh, fixed_dofs, loads, material, poisson, opts, workers);
  }

  Vector element_volumes() const {
    return Vector::Constant(mesh->num_elements(), mesh->element_volume());
  }
};

}  // namespace rto
