#pragma once

#include <cmath>

#include "rto/error.hpp"

namespace rto {

/// Modified SIMP material: E = E_min + xbar^p (E0 - E_min).
struct MaterialModel {
  double E0 = 1.0;
  double E_min = 1e-4;
  double penal = 3.0;

  void validate() const {
    if (!(E0 > E_min) || !(E_min > 0.0)) {
      throw ParameterError("material requires E0 > E_min > 0");
    }
    if (!(penal >= 1.0)) throw ParameterError("SIMP penalization must be >= 1");
  }

  double modulus(double xbar) const { return E_min + std::pow(xbar, penal) * (E0 - E_min); }

  /// dE/dxbar
  double modulus_slope(double xbar) const {
    return penal * std::pow(xbar, penal - 1.0) * (E0 - E_min);
  }
};

}  // namespace rto
