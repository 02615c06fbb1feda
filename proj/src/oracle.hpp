#pragma once

#include "jet.hpp"

namespace ct {

// Gram matrix of the six tangent images. Solves go through the spectral
// factorization so near-singular systems are rejected once, at construction.
struct GramMatrix {
    Eigen::Matrix<double, 6, 6> gamma = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 6> eigvecs = Eigen::Matrix<double, 6, 6>::Zero();
    Vec6 eigvals = Vec6::Zero();

    LocalCoords solve(const LocalCoords& rhs) const;
};

GramMatrix gram_matrix(const ImageJet& jet);

struct OracleExpansion {
    LocalCoords dnu1 = LocalCoords::Zero();
    LocalCoords dnu2 = LocalCoords::Zero();
    Vec9 dO1 = Vec9::Zero();
    Vec9 dO2 = Vec9::Zero();
};

// Tangent response to an image-space direction: solves the Gram system for
// dnu1 and maps it to the nine tracked coordinates.
OracleExpansion first_directional(const ImageJet& jet, const Image& dir);

// Adds the curvature response dnu2/dO2; requires an order-2 jet.
OracleExpansion second_directional(const ImageJet& jet, const Image& dir);

// Image-space gradient of tracked coordinate out_idx (1-based, 1..9).
Image oracle_gradient(const ImageJet& jet, int out_idx);

// Second-order Taylor estimate of the nearest cube under an additive image
// perturbation taken at full strength; requires an order-2 jet.
Vec9 noise_adjusted_oracle(const ImageJet& jet, const Image& noise);

// Derivative-free nearest-cube search: Nelder-Mead over local coordinates
// around init (initial simplex scale 1e-2, three shrinking restarts,
// converged when the final simplex diameter falls below 1e-9). Renders with
// the fixed-rule rasterizer so the objective is smooth in the pose.
Cube brute_force_oracle(const Image& target, const Cube& init, const Camera& cam, double sigma);

}  // namespace ct
