#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <numeric>
#include <vector>

#include "latgp/errors.hpp"
#include "latgp/fft.hpp"
#include "latgp/lattice.hpp"

namespace latgp {

using FieldVector = std::vector<double>;
using ComplexField = std::vector<std::complex<double>>;

/// Eigenvalues of the block-circulant embedding correlation matrix, i.e.
/// the 2-D forward FFT of its first column. All matrix operations reduce to
/// elementwise work on this spectrum plus FFTs.
///
/// Transform convention: forward unnormalized, inverse carries 1/N. Under
/// it the matrix acts as  C x = inverse_fft(values .* forward_fft(x)), the
/// identity matrix has all eigenvalues 1, and 1'C^{-1}1 = N / values[0].
struct EigenSpectrum {
    int N1 = 0;
    int N2 = 0;
    std::vector<double> values;
    double min_eig = 0.0;
    std::shared_ptr<const Fft2> fft;

    int size() const { return N1 * N2; }
    bool positive() const { return min_eig > 0.0; }

    void require_positive() const {
        if (!positive()) throw NegativeEigenvalueError(min_eig);
    }
    void require_nonnegative() const {
        if (min_eig < 0.0) throw NegativeEigenvalueError(min_eig);
    }
};

namespace detail {

inline constexpr double kImagTol = 1e-8;  // relative imaginary-residue gate

inline double max_abs_imag(const ComplexField& z) {
    double m = 0.0;
    for (const auto& v : z) m = std::max(m, std::fabs(v.imag()));
    return m;
}

inline double max_abs_real(const ComplexField& z) {
    double m = 0.0;
    for (const auto& v : z) m = std::max(m, std::fabs(v.real()));
    return m;
}

}  // namespace detail

inline EigenSpectrum eigenvalues(const FieldVector& base, int N1, int N2) {
    if (static_cast<int>(base.size()) != N1 * N2)
        throw DimensionError("eigenvalues: base vector size mismatch");
    EigenSpectrum spec;
    spec.N1 = N1;
    spec.N2 = N2;
    spec.fft = fft_plan(N1, N2);
    ComplexField z(base.begin(), base.end());
    spec.fft->forward(z);
    const double scale = detail::max_abs_real(z);
    if (detail::max_abs_imag(z) > detail::kImagTol * std::max(scale, 1e-300))
        throw NonSymmetricBaseError("base vector lacks BCCB reflection symmetry");
    spec.values.resize(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) spec.values[k] = z[k].real();
    spec.min_eig = *std::min_element(spec.values.begin(), spec.values.end());
    return spec;
}

inline EigenSpectrum eigenvalues(const FieldVector& base, const EmbeddingSpec& emb) {
    return eigenvalues(base, emb.N1, emb.N2);
}

/// C x for real x.
inline FieldVector matvec(const EigenSpectrum& spec, const FieldVector& x) {
    if (static_cast<int>(x.size()) != spec.size())
        throw DimensionError("matvec: vector length mismatch");
    ComplexField z(x.begin(), x.end());
    spec.fft->forward(z);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] *= spec.values[k];
    spec.fft->inverse(z);
    const double scale = detail::max_abs_real(z);
    if (detail::max_abs_imag(z) > detail::kImagTol * std::max(scale, 1e-300))
        throw NonSymmetricBaseError("matvec produced a non-real result");
    FieldVector out(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k].real();
    return out;
}

/// Cholesky-style coloring: maps complex standard normal noise to a complex
/// field whose real and imaginary parts are two independent N(0, C) draws.
inline ComplexField color(const EigenSpectrum& spec, const ComplexField& eps) {
    if (static_cast<int>(eps.size()) != spec.size())
        throw DimensionError("color: vector length mismatch");
    spec.require_nonnegative();
    ComplexField z(eps.size());
    for (std::size_t k = 0; k < z.size(); ++k)
        z[k] = eps[k] * std::sqrt(spec.values[k]);
    spec.fft->forward(z);
    const double scale = 1.0 / std::sqrt(static_cast<double>(spec.size()));
    for (auto& v : z) v *= scale;
    return z;
}

/// Inverse of color: recovers the noise vector from a colored field.
inline ComplexField whiten(const EigenSpectrum& spec, const ComplexField& field) {
    if (static_cast<int>(field.size()) != spec.size())
        throw DimensionError("whiten: vector length mismatch");
    spec.require_positive();
    ComplexField z(field);
    spec.fft->inverse(z);
    const double scale = std::sqrt(static_cast<double>(spec.size()));
    for (std::size_t k = 0; k < z.size(); ++k)
        z[k] *= scale / std::sqrt(spec.values[k]);
    return z;
}

/// x' C^{-1} x >= 0 via the whitening transform.
inline double inv_quad_form(const EigenSpectrum& spec, const FieldVector& x) {
    if (static_cast<int>(x.size()) != spec.size())
        throw DimensionError("inv_quad_form: vector length mismatch");
    spec.require_positive();
    ComplexField z(x.begin(), x.end());
    spec.fft->forward(z);
    double acc = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) acc += std::norm(z[k]) / spec.values[k];
    return acc / static_cast<double>(spec.size());
}

inline double logdet(const EigenSpectrum& spec) {
    spec.require_positive();
    double acc = 0.0;
    for (double v : spec.values) acc += std::log(v);
    return acc;
}

/// 1' C^{-1} 1, free from the zero-frequency eigenvalue since the constant
/// vector is an eigenvector of every BCCB matrix.
inline double inv_quad_ones(const EigenSpectrum& spec) {
    spec.require_positive();
    return static_cast<double>(spec.size()) / spec.values[0];
}

struct PartitionedProduct {
    FieldVector observed;    // C_oo x
    FieldVector unobserved;  // C_uo x
};

/// Applies the observed-column block of C to x_o by zero-padding to the
/// full lattice, multiplying, and scattering: two FFTs total.
inline PartitionedProduct partitioned_matvec(const EigenSpectrum& spec,
                                             const ObservationMask& mask,
                                             const FieldVector& x_o) {
    if (static_cast<int>(x_o.size()) != mask.n)
        throw DimensionError("partitioned_matvec: observed length mismatch");
    FieldVector padded(spec.size(), 0.0);
    for (int i = 0; i < mask.n; ++i) padded[mask.observed[i]] = x_o[i];
    FieldVector w = matvec(spec, padded);
    PartitionedProduct out;
    out.observed.resize(mask.observed.size());
    out.unobserved.resize(mask.unobserved.size());
    for (std::size_t i = 0; i < mask.observed.size(); ++i)
        out.observed[i] = w[mask.observed[i]];
    for (std::size_t i = 0; i < mask.unobserved.size(); ++i)
        out.unobserved[i] = w[mask.unobserved[i]];
    return out;
}

}  // namespace latgp
