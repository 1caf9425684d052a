#include "bhp/quadrature.hpp"

#include <cmath>

namespace bhp {

GaussLegendre gauss_legendre(int n) {
    if (n < 1) throw input_error("gauss_legendre: need n >= 1");
    GaussLegendre out;
    out.nodes.resize(n);
    out.weights.resize(n);
    const int m = (n + 1) / 2;
    const double pi = 3.14159265358979323846;
    for (int i = 0; i < m; ++i) {
        // Tricomi initial guess, then Newton on P_n(x) = 0.
        double x = std::cos(pi * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0;
            double p1 = x;
            if (n == 1) {
                p1 = x;  // P_1
            }
            for (int j = 2; j <= n; ++j) {
                const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(x), p0 = P_{n-1}(x)
            pp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / pp;
            x -= dx;
            if (std::fabs(dx) < 1e-15) break;
        }
        out.nodes[i] = -x;
        out.nodes[n - 1 - i] = x;
        const double w = 2.0 / ((1.0 - x * x) * pp * pp);
        out.weights[i] = w;
        out.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) out.nodes[n / 2] = 0.0;
    return out;
}

}  // namespace bhp
