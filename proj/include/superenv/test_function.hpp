#pragma once

#include "superenv/grid.hpp"

#include <Eigen/Dense>

#include <string>

namespace superenv {

enum class TestKind { Bump, TruncGauss };

std::string to_string(TestKind k);
TestKind test_kind_from_string(const std::string& s);

// Radial, compactly supported test function around `center`:
//   Bump:       A (1 - r^2/K^2)^2 on r <= K
//   TruncGauss: A (exp(-r^2/2s^2) - exp(-K^2/2s^2)) on r <= K, with s = K/6
struct TestFunction {
    TestKind kind = TestKind::Bump;
    Eigen::VectorXd center;
    double radius = 1.0;
    double amplitude = 1.0;

    int dim() const { return static_cast<int>(center.size()); }
    double gauss_sigma() const { return radius / 6.0; }

    double profile(double r) const;
    double operator()(const double* x) const;
    double operator()(const Eigen::VectorXd& x) const { return (*this)(x.data()); }
};

TestFunction make_test_function(TestKind kind, int dim, double radius, double amplitude = 1.0);

// <lambda, phi> over R^d, closed form.
double total_mass(const TestFunction& phi);

// <lambda_box, phi>: closed form when the support sits inside the box, tensor quadrature otherwise.
double box_mass(const TestFunction& phi, const GridSpec& grid);

// Cell averages of phi (finite-volume source); h^d * sum equals box_mass up to cell quadrature error.
Eigen::VectorXd cell_average(const TestFunction& phi, const GridSpec& grid, int nodes_per_axis = 0);

// phi sampled at cell centres.
Eigen::VectorXd cell_sample(const TestFunction& phi, const GridSpec& grid);

} // namespace superenv
