#include "rbocpd/lbfgs_box.hpp"

#include <cmath>
#include <deque>

namespace rbocpd {

namespace {

struct Pair {
    Vector s;
    Vector y;
    double rho;
};

Vector project(const Vector &x, const Vector &lower) { return x.cwiseMax(lower); }

double projected_gradient_norm(const Vector &x, const Vector &g, const Vector &lower) {
    double out = 0.0;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        if (x(j) <= lower(j) && g(j) > 0.0) continue;
        out = std::max(out, std::abs(g(j)));
    }
    return out;
}

Vector two_loop(const Vector &g, const std::deque<Pair> &mem, const Eigen::Array<bool, Eigen::Dynamic, 1> &free) {
    Vector q = free.select(g, 0.0);
    std::vector<double> alpha(mem.size());
    for (std::size_t k = mem.size(); k-- > 0;) {
        const Vector s = free.select(mem[k].s, 0.0);
        const Vector y = free.select(mem[k].y, 0.0);
        alpha[k] = mem[k].rho * s.dot(q);
        q -= alpha[k] * y;
    }
    if (!mem.empty()) {
        const Pair &last = mem.back();
        q *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (std::size_t k = 0; k < mem.size(); ++k) {
        const Vector s = free.select(mem[k].s, 0.0);
        const Vector y = free.select(mem[k].y, 0.0);
        const double beta = mem[k].rho * y.dot(q);
        q += (alpha[k] - beta) * s;
    }
    return -free.select(q, 0.0);
}

} // namespace

BoxMinimizeResult minimize_box(const Objective &f, const Vector &x0, const Vector &lower, double tol, int max_iter,
                               int memory) {
    const Eigen::Index n = x0.size();
    BoxMinimizeResult res;
    Vector x = project(x0, lower);
    Vector g(n);
    double fx = f(x, g);
    if (!std::isfinite(fx) || !g.allFinite()) throw DomainError("objective is not finite at the starting point");
    std::deque<Pair> mem;
    int stalls = 0;
    for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
        res.proj_grad_norm = projected_gradient_norm(x, g, lower);
        if (res.proj_grad_norm <= tol) {
            res.converged = true;
            break;
        }
        Eigen::Array<bool, Eigen::Dynamic, 1> free(n);
        for (Eigen::Index j = 0; j < n; ++j) free(j) = !(x(j) <= lower(j) && g(j) > 0.0);
        Vector dir = two_loop(g, mem, free);
        if (!(g.dot(dir) < 0.0)) {
            mem.clear();
            dir = -free.select(g, 0.0);
        }
        double step = 1.0;
        if (mem.empty()) step = std::min(1.0, 1.0 / dir.cwiseAbs().maxCoeff());
        bool accepted = false;
        Vector xn(n), gn(n);
        double fn = fx;
        for (int ls = 0; ls < 60; ++ls) {
            xn = project(x + step * dir, lower);
            const Vector dx = xn - x;
            if (dx.cwiseAbs().maxCoeff() == 0.0) break;
            fn = f(xn, gn);
            if (std::isfinite(fn) && gn.allFinite()) {
                const bool armijo = fn <= fx + 1e-4 * g.dot(dx);
                const bool within_noise = fn <= fx + 1e-13 * std::max(1.0, std::abs(fx)) &&
                                          projected_gradient_norm(xn, gn, lower) < res.proj_grad_norm;
                if (armijo || within_noise) {
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (!mem.empty()) {
                mem.clear();
                continue;
            }
            break;
        }
        Pair pr{xn - x, gn - g, 0.0};
        const double sy = pr.s.dot(pr.y);
        if (sy > 1e-12 * pr.s.norm() * pr.y.norm()) {
            pr.rho = 1.0 / sy;
            mem.push_back(std::move(pr));
            if (static_cast<int>(mem.size()) > memory) mem.pop_front();
        }
        const double change = fx - fn;
        x = xn;
        g = gn;
        fx = fn;
        stalls = std::abs(change) <= 1e-15 * std::max(1.0, std::abs(fx)) ? stalls + 1 : 0;
        if (stalls >= 20) break;
    }
    res.proj_grad_norm = projected_gradient_norm(x, g, lower);
    res.converged = res.converged || res.proj_grad_norm <= tol;
    res.x = x;
    res.f = fx;
    return res;
}

} // namespace rbocpd
