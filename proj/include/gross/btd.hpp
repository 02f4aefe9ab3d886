#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gross/rng.hpp"
#include "gross/tensor.hpp"

namespace gross {

// Rank of one block term: channels per group on the input (t') and output
// (u') side of the grouped convolution it induces.
struct RankPair {
    int t_prime = 1;
    int u_prime = 1;
};

struct BtdTerm {
    DTensor core;  // t' x u' x v x w
    DTensor b;     // t x t'
    DTensor c;     // u x u'
};

// Sum of R Tucker-2 terms approximating a 4-mode convolution weight
// (in_channels x out_channels x kh x kw).
struct BlockTermDecomposition {
    std::vector<BtdTerm> terms;
    RankPair rank;
    std::vector<int> source_shape;  // {t, u, v, w}

    int group_count() const { return static_cast<int>(terms.size()); }
};

struct DecomposeOptions {
    double tol = 1e-6;       // stop when the per-sweep error decrease falls below this
    int max_steps = 500000;  // one step = one full ALS sweep (B, C, then cores)
    std::uint64_t seed = 0;
};

namespace detail {

inline Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
as_matrix(const DTensor& t) {
    return {t.data(), t.extent(0), t.extent(1)};
}

inline DTensor reconstruct_term(const BtdTerm& term) {
    return mode_n_product(mode_n_product(term.core, term.b, 0), term.c, 1);
}

}  // namespace detail

inline DTensor reconstruct(const BlockTermDecomposition& d) {
    if (d.terms.empty()) throw std::invalid_argument("reconstruct: decomposition has no terms");
    const std::vector<int>& core_shape = d.terms.front().core.shape();
    for (std::size_t r = 0; r < d.terms.size(); ++r) {
        const BtdTerm& t = d.terms[r];
        if (t.core.shape() != core_shape || t.b.extent(1) != core_shape[0] ||
            t.c.extent(1) != core_shape[1] || t.b.extent(0) != d.source_shape[0] ||
            t.c.extent(0) != d.source_shape[1]) {
            throw std::invalid_argument("reconstruct: term " + std::to_string(r) +
                                        " has inconsistent shapes");
        }
    }
    DTensor out(d.source_shape);
    for (const BtdTerm& term : d.terms) {
        DTensor t = detail::reconstruct_term(term);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += t[i];
    }
    return out;
}

namespace detail {

// Ridge term on every least-squares solve; keeps the normal equations
// invertible when terms are linearly dependent.
constexpr double kAlsRidge = 1e-10;

// Joint ridge least-squares update for the stacked side factors.  Solves
// min || Xn - Fcat * Mstack ||^2 + ridge ||Fcat||^2 over Fcat and scatters the
// column blocks back into the per-term factors.
inline void update_factors_joint(const Eigen::MatrixXd& xn, const Eigen::MatrixXd& mstack,
                                 std::vector<BtdTerm>& terms, bool update_b) {
    const Eigen::Index cols = mstack.rows();
    Eigen::MatrixXd gram = mstack * mstack.transpose();
    gram.diagonal().array() += kAlsRidge;
    const Eigen::MatrixXd rhs = mstack * xn.transpose();  // cols x d
    const Eigen::MatrixXd fcat_t = gram.ldlt().solve(rhs);
    const int block = update_b ? terms.front().core.extent(0) : terms.front().core.extent(1);
    for (std::size_t r = 0; r < terms.size(); ++r) {
        DTensor& f = update_b ? terms[r].b : terms[r].c;
        for (int row = 0; row < f.extent(0); ++row) {
            for (int col = 0; col < block; ++col) {
                f(row, col) = fcat_t(static_cast<Eigen::Index>(r) * block + col, row);
            }
        }
    }
    (void)cols;
}

// Exact ridge solve for one term's core given its factors:
//   (C'C (x) B'B + ridge I) vec(G_slice) = vec(B' E_slice C)   per kernel cell.
// Solved through the eigendecompositions of the two small Gram matrices.
inline void update_core(const DTensor& residual, BtdTerm& term) {
    const int t = residual.extent(0);
    const int u = residual.extent(1);
    const int v = residual.extent(2);
    const int w = residual.extent(3);
    const int tp = term.core.extent(0);
    const int up = term.core.extent(1);

    const auto bmat = as_matrix(term.b);
    const auto cmat = as_matrix(term.c);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_b(bmat.transpose() * bmat);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_c(cmat.transpose() * cmat);
    if (eig_b.info() != Eigen::Success || eig_c.info() != Eigen::Success) {
        throw std::runtime_error("decompose: eigensolver failed on a core update");
    }
    const Eigen::MatrixXd& ub = eig_b.eigenvectors();
    const Eigen::MatrixXd& uc = eig_c.eigenvectors();
    const Eigen::VectorXd& lb = eig_b.eigenvalues();
    const Eigen::VectorXd& lc = eig_c.eigenvalues();

    Eigen::MatrixXd slice(t, u);
    for (int y = 0; y < v; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int a = 0; a < t; ++a) {
                for (int b = 0; b < u; ++b) slice(a, b) = residual(a, b, y, x);
            }
            Eigen::MatrixXd s = ub.transpose() * (bmat.transpose() * slice * cmat) * uc;
            for (int i = 0; i < tp; ++i) {
                for (int j = 0; j < up; ++j) s(i, j) /= lb(i) * lc(j) + kAlsRidge;
            }
            const Eigen::MatrixXd g = ub * s * uc.transpose();
            for (int i = 0; i < tp; ++i) {
                for (int j = 0; j < up; ++j) term.core(i, j, y, x) = g(i, j);
            }
        }
    }
}

}  // namespace detail

// Alternating least squares for the block-term decomposition of a 4-mode
// weight into R terms of rank (t', u').  Each sweep updates the input-side
// factors jointly, then the output-side factors jointly, then each core in
// turn against the residual of the other terms.  Deterministic given the
// seed.  Returns the decomposition and the relative-error trace; trace[0] is
// the error of the random initialization, trace[k] the error after sweep k.
inline std::pair<BlockTermDecomposition, std::vector<double>> decompose(
    const DTensor& x, int group_count, RankPair rank, const DecomposeOptions& opts) {
    if (x.rank() != 4) throw std::invalid_argument("decompose: weight must have 4 modes");
    if (group_count < 1) throw std::invalid_argument("decompose: group count must be >= 1");
    if (rank.t_prime < 1 || rank.u_prime < 1 || rank.t_prime > x.extent(0) ||
        rank.u_prime > x.extent(1)) {
        throw std::invalid_argument(
            "decompose: rank (" + std::to_string(rank.t_prime) + "," +
            std::to_string(rank.u_prime) + ") does not fit weight " +
            std::to_string(x.extent(0)) + "x" + std::to_string(x.extent(1)));
    }
    if (opts.tol <= 0.0 || opts.max_steps < 1) {
        throw std::invalid_argument("decompose: tol must be positive and max_steps >= 1");
    }

    const int t = x.extent(0), u = x.extent(1), v = x.extent(2), w = x.extent(3);
    const int tp = rank.t_prime, up = rank.u_prime;

    BlockTermDecomposition d;
    d.rank = rank;
    d.source_shape = x.shape();
    d.terms.resize(static_cast<std::size_t>(group_count));

    // Seeded normal init, scaled by 1/sqrt(fan-in) of the map each factor
    // realizes: t' for B, u' for C, t'*v*w for the core.
    Rng rng(opts.seed);
    for (BtdTerm& term : d.terms) {
        term.b = DTensor({t, tp});
        term.c = DTensor({u, up});
        term.core = DTensor({tp, up, v, w});
        const double sb = 1.0 / std::sqrt(static_cast<double>(tp));
        const double sc = 1.0 / std::sqrt(static_cast<double>(up));
        const double sg = 1.0 / std::sqrt(static_cast<double>(tp) * v * w);
        for (std::size_t i = 0; i < term.b.size(); ++i) term.b[i] = rng.normal(0.0, sb);
        for (std::size_t i = 0; i < term.c.size(); ++i) term.c[i] = rng.normal(0.0, sc);
        for (std::size_t i = 0; i < term.core.size(); ++i) term.core[i] = rng.normal(0.0, sg);
    }

    const DTensor x1 = unfold(x, 0);
    const DTensor x2 = unfold(x, 1);
    const Eigen::MatrixXd x1m = detail::as_matrix(x1);
    const Eigen::MatrixXd x2m = detail::as_matrix(x2);

    std::vector<double> trace;
    trace.push_back(relative_approx_error(x, reconstruct(d)));

    std::vector<DTensor> term_recon(d.terms.size());
    for (int sweep = 1; sweep <= opts.max_steps; ++sweep) {
        // Input-side factors.
        {
            Eigen::MatrixXd mstack(static_cast<Eigen::Index>(group_count) * tp,
                                   static_cast<Eigen::Index>(u) * v * w);
            for (int r = 0; r < group_count; ++r) {
                const DTensor m = unfold(mode_n_product(d.terms[r].core, d.terms[r].c, 1), 0);
                for (int i = 0; i < tp; ++i) {
                    for (Eigen::Index j = 0; j < mstack.cols(); ++j) {
                        mstack(static_cast<Eigen::Index>(r) * tp + i, j) =
                            m(i, static_cast<int>(j));
                    }
                }
            }
            detail::update_factors_joint(x1m, mstack, d.terms, /*update_b=*/true);
        }
        // Output-side factors.
        {
            Eigen::MatrixXd nstack(static_cast<Eigen::Index>(group_count) * up,
                                   static_cast<Eigen::Index>(t) * v * w);
            for (int r = 0; r < group_count; ++r) {
                const DTensor n = unfold(mode_n_product(d.terms[r].core, d.terms[r].b, 0), 1);
                for (int j = 0; j < up; ++j) {
                    for (Eigen::Index k = 0; k < nstack.cols(); ++k) {
                        nstack(static_cast<Eigen::Index>(r) * up + j, k) =
                            n(j, static_cast<int>(k));
                    }
                }
            }
            detail::update_factors_joint(x2m, nstack, d.terms, /*update_b=*/false);
        }
        // Cores, one term at a time against the residual of the others.
        {
            for (std::size_t r = 0; r < d.terms.size(); ++r) {
                term_recon[r] = detail::reconstruct_term(d.terms[r]);
            }
            DTensor full(x.shape());
            for (std::size_t r = 0; r < d.terms.size(); ++r) {
                for (std::size_t i = 0; i < full.size(); ++i) full[i] += term_recon[r][i];
            }
            DTensor residual(x.shape());
            for (std::size_t r = 0; r < d.terms.size(); ++r) {
                for (std::size_t i = 0; i < residual.size(); ++i) {
                    residual[i] = x[i] - full[i] + term_recon[r][i];
                }
                detail::update_core(residual, d.terms[r]);
                const DTensor updated = detail::reconstruct_term(d.terms[r]);
                for (std::size_t i = 0; i < full.size(); ++i) {
                    full[i] += updated[i] - term_recon[r][i];
                }
                term_recon[r] = updated;
            }
        }

        DTensor approx(x.shape());
        for (std::size_t r = 0; r < d.terms.size(); ++r) {
            for (std::size_t i = 0; i < approx.size(); ++i) approx[i] += term_recon[r][i];
        }
        const double err = relative_approx_error(x, approx);
        if (!std::isfinite(err)) {
            throw std::runtime_error("decompose: non-finite error at sweep " +
                                     std::to_string(sweep));
        }
        trace.push_back(err);
        if (sweep >= 2 && trace[trace.size() - 2] - err < opts.tol) break;
    }
    return {std::move(d), std::move(trace)};
}

}  // namespace gross
