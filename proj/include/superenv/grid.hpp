#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <vector>

namespace superenv {

// Box [-L, L]^d split into m cells per axis. Cell index is row-major: axis 0 varies slowest.
struct GridSpec {
    int dim = 3;
    double half_width = 4.0;
    int cells_per_axis = 8;

    double h() const { return 2.0 * half_width / cells_per_axis; }
    double cell_volume() const { return std::pow(h(), dim); }
    double box_volume() const { return std::pow(2.0 * half_width, dim); }
    std::size_t n_cells() const
    {
        std::size_t n = 1;
        for (int a = 0; a < dim; ++a)
            n *= static_cast<std::size_t>(cells_per_axis);
        return n;
    }
    std::size_t stride(int axis) const
    {
        std::size_t s = 1;
        for (int a = dim - 1; a > axis; --a)
            s *= static_cast<std::size_t>(cells_per_axis);
        return s;
    }
    double axis_center(int i) const { return -half_width + (i + 0.5) * h(); }

    Eigen::VectorXd center(std::size_t idx) const
    {
        Eigen::VectorXd c(dim);
        for (int a = dim - 1; a >= 0; --a) {
            c[a] = axis_center(static_cast<int>(idx % cells_per_axis));
            idx /= cells_per_axis;
        }
        return c;
    }

    Eigen::MatrixXd centers() const
    {
        Eigen::MatrixXd c(dim, static_cast<Eigen::Index>(n_cells()));
        for (std::size_t i = 0; i < n_cells(); ++i)
            c.col(static_cast<Eigen::Index>(i)) = center(i);
        return c;
    }

    // -1 when x lies outside the closed box.
    long cell_of(const double* x) const
    {
        const double inv_h = cells_per_axis / (2.0 * half_width);
        long idx = 0;
        for (int a = 0; a < dim; ++a) {
            double u = (x[a] + half_width) * inv_h;
            if (!(u >= 0.0) || u > cells_per_axis)
                return -1;
            long i = static_cast<long>(u);
            if (i == cells_per_axis)
                i = cells_per_axis - 1;
            idx = idx * cells_per_axis + i;
        }
        return idx;
    }

    bool operator==(const GridSpec& o) const
    {
        return dim == o.dim && half_width == o.half_width && cells_per_axis == o.cells_per_axis;
    }
};

} // namespace superenv
