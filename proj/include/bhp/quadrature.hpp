#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "bhp/errors.hpp"

namespace bhp {

// Gauss–Legendre nodes and weights on [-1, 1], computed by Newton iteration
// on the Legendre recurrence. Deterministic, accurate to machine precision.
struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;
};
GaussLegendre gauss_legendre(int n);

namespace detail {

// 15-point Kronrod extension of 7-point Gauss (positive abscissae).
inline constexpr double kGK15Nodes[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144838258730, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr double kGK15Weights[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr double kG7Weights[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <typename F>
void gk15(const F& f, double a, double b, double& value, double& error) {
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    double result_k = 0.0;
    double result_g = 0.0;
    for (int i = 0; i < 8; ++i) {
        const double dx = h * kGK15Nodes[i];
        double fsum;
        if (i < 7) {
            fsum = f(c - dx) + f(c + dx);
        } else {
            fsum = f(c);
        }
        result_k += kGK15Weights[i] * fsum;
        if (i % 2 == 1) result_g += kG7Weights[i / 2] * fsum;
    }
    value = result_k * h;
    error = std::fabs((result_k - result_g) * h);
}

}  // namespace detail

// Adaptive Gauss–Kronrod integration of f over [a, b]. Intervals are
// bisected until the local GK15 error estimate meets the tolerance budget
// rel_tol * |integral| + abs_tol (shared across subintervals).
template <typename F>
double integrate(const F& f, double a, double b, double rel_tol = 1e-10,
                 double abs_tol = 0.0) {
    if (!(b >= a)) throw input_error("integrate: bad interval");
    if (a == b) return 0.0;

    struct Interval {
        double a, b, value, error;
    };
    double v0, e0;
    detail::gk15(f, a, b, v0, e0);
    std::vector<Interval> heap{{a, b, v0, e0}};
    double total = v0;
    double total_err = e0;

    const int max_intervals = 20000;
    for (int iter = 0; iter < max_intervals; ++iter) {
        const double tol = std::max(abs_tol, rel_tol * std::fabs(total));
        if (total_err <= tol) return total;

        // split the interval with the largest error estimate
        std::size_t worst = 0;
        for (std::size_t i = 1; i < heap.size(); ++i)
            if (heap[i].error > heap[worst].error) worst = i;
        const Interval cur = heap[worst];
        const double mid = 0.5 * (cur.a + cur.b);
        if (mid <= cur.a || mid >= cur.b) {
            // interval no longer splittable at double precision
            return total;
        }
        Interval left{cur.a, mid, 0, 0};
        Interval right{mid, cur.b, 0, 0};
        detail::gk15(f, left.a, left.b, left.value, left.error);
        detail::gk15(f, right.a, right.b, right.value, right.error);
        total += left.value + right.value - cur.value;
        total_err += left.error + right.error - cur.error;
        heap[worst] = left;
        heap.push_back(right);
    }
    throw numeric_error("integrate: adaptive quadrature did not converge");
}

}  // namespace bhp
