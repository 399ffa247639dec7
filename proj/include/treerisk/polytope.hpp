#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "treerisk/errors.hpp"

namespace treerisk {

/// max sum_a w_a z_a l_a over densities 0 <= z <= 1/lambda with sum w_a z_a = 1:
/// the tail-average dual of AV@R on weighted atoms.  Greedy cap-filling from
/// the largest loss down is exact for this box-capped simplex.
inline double capped_linear_max(const std::vector<double>& losses,
                                const std::vector<double>& weights, double lambda) {
    if (!(lambda > 0.0) || lambda > 1.0 + 1e-12)
        throw MalformedSpec("AV@R level must lie in (0, 1]");
    std::vector<std::size_t> order(losses.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
    double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (total <= 0.0) throw BadDensity("atom weights must have positive total mass");
    double remaining = 1.0, value = 0.0;
    for (std::size_t a : order) {
        if (remaining <= 0.0) break;
        double take = std::min(remaining, (weights[a] / total) / lambda);
        value += take * losses[a];
        remaining -= take;
    }
    return value;
}

/// Vertices of the capped simplex {m >= 0, sum m = 1, m_a <= cap_a} in mass
/// coordinates.  Each vertex saturates a subset of coordinates and puts the
/// remainder on at most one more; enumeration is pruned by the running cap sum.
inline std::vector<std::vector<double>> capped_simplex_vertices(
    const std::vector<double>& caps) {
    const std::size_t k = caps.size();
    if (k > 22) throw OptimizerFailed("capped-simplex vertex enumeration limited to 22 atoms");
    if (std::accumulate(caps.begin(), caps.end(), 0.0) < 1.0 - 1e-12)
        throw InfeasibleFamily("caps sum to less than 1: empty constraint set");
    std::vector<std::vector<double>> verts;
    std::vector<std::size_t> at_cap;
    auto emit = [&](std::size_t frac, double rest) {
        std::vector<double> v(k, 0.0);
        for (std::size_t a : at_cap) v[a] = caps[a];
        if (frac < k) v[frac] = rest;
        verts.push_back(std::move(v));
    };
    // recursive subset enumeration with cap-sum pruning; the fractional
    // coordinate may sit anywhere outside the at-cap subset
    std::vector<char> used(k, 0);
    auto rec = [&](auto&& self, std::size_t next, double sum) -> void {
        if (std::abs(sum - 1.0) <= 1e-12) {
            emit(k, 0.0);
            return;
        }
        if (sum < 1.0) {
            double rest = 1.0 - sum;
            for (std::size_t j = 0; j < k; ++j)
                if (!used[j] && rest < caps[j] - 1e-12) emit(j, rest);
        }
        for (std::size_t j = next; j < k; ++j) {
            if (sum + caps[j] > 1.0 + 1e-12) continue;
            at_cap.push_back(j);
            used[j] = 1;
            self(self, j + 1, sum + caps[j]);
            used[j] = 0;
            at_cap.pop_back();
        }
    };
    rec(rec, 0, 0.0);
    return verts;
}

/// Solve the square system A x = b by Gaussian elimination with partial
/// pivoting; returns false when A is (numerically) singular.
inline bool solve_square(std::vector<std::vector<double>> a, std::vector<double> b,
                         std::vector<double>& x) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-12) return false;
        std::swap(a[piv], a[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    x.resize(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = b[i] / a[i][i];
    return true;
}

/// Vertices of {x : A x = b, 0 <= x <= cap} by basic-feasible-solution
/// enumeration: every choice of basic columns plus lower/upper pattern for the
/// nonbasic ones.  Intended for small systems (columns <= 18).
inline std::vector<std::vector<double>> bounded_polytope_vertices(
    const std::vector<std::vector<double>>& a, const std::vector<double>& b,
    const std::vector<double>& cap) {
    const std::size_t rows = a.size(), cols = cap.size();
    if (cols > 18) throw OptimizerFailed("polytope vertex enumeration limited to 18 columns");

    std::vector<std::vector<double>> verts;
    std::vector<std::size_t> basis;
    std::vector<char> is_basic(cols, 0);

    auto try_patterns = [&]() {
        const std::size_t nfree = cols - basis.size();
        std::vector<std::size_t> free_cols;
        for (std::size_t c = 0; c < cols; ++c)
            if (!is_basic[c]) free_cols.push_back(c);
        for (std::size_t mask = 0; mask < (1ull << nfree); ++mask) {
            std::vector<double> x(cols, 0.0);
            std::vector<double> rhs = b;
            for (std::size_t j = 0; j < nfree; ++j) {
                double v = (mask >> j) & 1 ? cap[free_cols[j]] : 0.0;
                x[free_cols[j]] = v;
                if (v != 0.0)
                    for (std::size_t r = 0; r < rows; ++r) rhs[r] -= a[r][free_cols[j]] * v;
            }
            std::vector<std::vector<double>> ab(rows, std::vector<double>(basis.size()));
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < basis.size(); ++j) ab[r][j] = a[r][basis[j]];
            std::vector<double> xb;
            if (!solve_square(ab, rhs, xb)) continue;
            bool ok = true;
            for (std::size_t j = 0; j < basis.size() && ok; ++j) {
                if (xb[j] < -1e-10 || xb[j] > cap[basis[j]] + 1e-10) ok = false;
                x[basis[j]] = std::clamp(xb[j], 0.0, cap[basis[j]]);
            }
            if (ok) verts.push_back(x);
        }
    };

    auto rec = [&](auto&& self, std::size_t next, std::size_t need) -> void {
        if (need == 0) {
            try_patterns();
            return;
        }
        if (cols - next < need) return;
        for (std::size_t c = next; c < cols; ++c) {
            basis.push_back(c);
            is_basic[c] = 1;
            self(self, c + 1, need - 1);
            basis.pop_back();
            is_basic[c] = 0;
        }
    };
    rec(rec, 0, rows);

    // deduplicate (the same vertex arises from many bases)
    std::sort(verts.begin(), verts.end());
    verts.erase(std::unique(verts.begin(), verts.end(),
                            [](const std::vector<double>& p, const std::vector<double>& q) {
                                for (std::size_t i = 0; i < p.size(); ++i)
                                    if (std::abs(p[i] - q[i]) > 1e-9) return false;
                                return true;
                            }),
                verts.end());
    return verts;
}

/// Feasibility of z in the convex hull of `points`, decided by a phase-1
/// simplex run on { lambda >= 0, sum lambda = 1, sum lambda v_i = z }.
inline bool in_convex_hull(const std::vector<std::vector<double>>& points,
                           const std::vector<double>& z, double tol = 1e-12) {
    if (points.empty()) return false;
    const std::size_t dim = z.size(), n = points.size(), rows = dim + 1;
    // tableau with artificial variables; all rhs made nonnegative
    std::vector<std::vector<double>> tab(rows, std::vector<double>(n + rows + 1, 0.0));
    for (std::size_t r = 0; r < rows; ++r) {
        double rhs = r < dim ? z[r] : 1.0;
        for (std::size_t j = 0; j < n; ++j) tab[r][j] = r < dim ? points[j][r] : 1.0;
        if (rhs < 0.0) {
            for (std::size_t j = 0; j < n; ++j) tab[r][j] = -tab[r][j];
            rhs = -rhs;
        }
        tab[r][n + r] = 1.0;
        tab[r][n + rows] = rhs;
    }
    std::vector<std::size_t> basis(rows);
    for (std::size_t r = 0; r < rows; ++r) basis[r] = n + r;
    // objective: minimize the sum of artificials (stored negated as reduced costs)
    std::vector<double> cost(n + rows + 1, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j <= n + rows; ++j) cost[j] += tab[r][j];

    for (int iter = 0; iter < 10000; ++iter) {
        std::size_t enter = n + rows;
        for (std::size_t j = 0; j < n + rows; ++j)
            if (cost[j] > 1e-11) {  // Bland: smallest improving index
                enter = j;
                break;
            }
        if (enter == n + rows) break;
        std::size_t leave = rows;
        double best = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            if (tab[r][enter] <= 1e-11) continue;
            double ratio = tab[r][n + rows] / tab[r][enter];
            if (leave == rows || ratio < best - 1e-14 ||
                (std::abs(ratio - best) <= 1e-14 && basis[r] < basis[leave])) {
                best = ratio;
                leave = r;
            }
        }
        if (leave == rows) break;  // unbounded cannot happen in phase 1
        double piv = tab[leave][enter];
        for (auto& vcell : tab[leave]) vcell /= piv;
        for (std::size_t r = 0; r < rows; ++r) {
            if (r == leave || tab[r][enter] == 0.0) continue;
            double f = tab[r][enter];
            for (std::size_t j = 0; j <= n + rows; ++j) tab[r][j] -= f * tab[leave][j];
        }
        double f = cost[enter];
        for (std::size_t j = 0; j <= n + rows; ++j) cost[j] -= f * tab[leave][j];
        basis[leave] = enter;
    }
    double infeasibility = 0.0;
    for (std::size_t r = 0; r < rows; ++r)
        if (basis[r] >= n) infeasibility += tab[r][n + rows];
    return infeasibility <= tol;
}

}  // namespace treerisk
