#include "matrix.hpp"

#include <numeric>

namespace graphfm {

const char* status_name(Status s) {
    switch (s) {
        case Status::ok: return "ok";
        case Status::invalid_argument: return "invalid_argument";
        case Status::io_error: return "io_error";
        case Status::parse_error: return "parse_error";
        case Status::bounds_error: return "bounds_error";
        case Status::shape_error: return "shape_error";
        case Status::numeric_error: return "numeric_error";
        case Status::config_error: return "config_error";
        case Status::state_error: return "state_error";
        case Status::provider_error: return "provider_error";
        case Status::format_error: return "format_error";
        case Status::unsupported: return "unsupported";
        case Status::internal_error: return "internal_error";
    }
    return "unknown";
}

void orthonormalize_columns(MatD& a, Rng& rng) {
    const std::int64_t n = a.rows();
    const std::int64_t k = a.cols();
    require(k <= n, Status::shape_error, "orthonormalize: more columns than rows");

    auto col_dot = [&](std::int64_t ci, std::int64_t cj) {
        double acc = 0.0;
        for (std::int64_t r = 0; r < n; ++r) acc += a(r, ci) * a(r, cj);
        return acc;
    };
    auto col_axpy = [&](std::int64_t ci, std::int64_t cj, double s) {
        for (std::int64_t r = 0; r < n; ++r) a(r, ci) += s * a(r, cj);
    };

    for (std::int64_t j = 0; j < k; ++j) {
        for (int attempt = 0; attempt < 64; ++attempt) {
            // Two MGS passes against earlier columns.
            for (int pass = 0; pass < 2; ++pass)
                for (std::int64_t i = 0; i < j; ++i) col_axpy(j, i, -col_dot(j, i));
            const double norm = std::sqrt(col_dot(j, j));
            if (norm > 1e-12) {
                const double inv = 1.0 / norm;
                for (std::int64_t r = 0; r < n; ++r) a(r, j) *= inv;
                break;
            }
            // Rank-deficient direction: replace with a fresh random column.
            for (std::int64_t r = 0; r < n; ++r) a(r, j) = rng.normal();
        }
    }
}

EigResult jacobi_eigh(MatD a) {
    require(a.rows() == a.cols(), Status::shape_error, "jacobi_eigh: matrix not square");
    const std::int64_t n = a.rows();
    MatD v(n, n);
    for (std::int64_t i = 0; i < n; ++i) v(i, i) = 1.0;

    auto off_diag = [&]() {
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = i + 1; j < n; ++j) acc += a(i, j) * a(i, j);
        return acc;
    };

    const double tol = 1e-28 * std::max(1.0, frob_norm(a) * frob_norm(a));
    for (int sweep = 0; sweep < 100 && off_diag() > tol; ++sweep) {
        for (std::int64_t p = 0; p < n - 1; ++p) {
            for (std::int64_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::int64_t i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (std::int64_t i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
                for (std::int64_t i = 0; i < n; ++i) {
                    const double vip = v(i, p), viq = v(i, q);
                    v(i, p) = c * vip - s * viq;
                    v(i, q) = s * vip + c * viq;
                }
            }
        }
    }

    std::vector<std::int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::int64_t x, std::int64_t y) { return a(x, x) > a(y, y); });

    EigResult out;
    out.values.resize(n);
    out.vectors = MatD(n, n);
    for (std::int64_t j = 0; j < n; ++j) {
        out.values[j] = a(order[j], order[j]);
        for (std::int64_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
    }
    return out;
}

}  // namespace graphfm
