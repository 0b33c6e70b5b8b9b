#pragma once

#include <vector>

namespace ouhjb {

struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Nodes/weights for E[f(Z)], Z ~ N(0,1) (probabilists' Hermite).
// Exact for polynomials of degree <= 2n-1.
GaussRule gauss_hermite(int n);

// Nodes/weights for the integral of f over [0,1].
GaussRule gauss_legendre01(int n);

struct QuadSpec {
  int gh_nodes = 9;      // nodes per dimension in tensor Gauss-Hermite
  int max_support = 8;   // reject cylindrical integrands wider than this
};

}  // namespace ouhjb
