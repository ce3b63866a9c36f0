#pragma once

#include "fprobe/common.hpp"

#include <iosfwd>
#include <vector>

namespace fprobe {

enum class WaveKind { constant, sin, cos };

struct BasisRow {
    int row = 0;
    WaveKind kind = WaveKind::constant;
    int component = 0;
    double frequency = 0.0;  // k / (p - 1)
    double period = 0.0;     // (p - 1) / k, +inf for the constant row
};

/// Real Fourier basis over the number tokens 0..p-1.
///
/// Row 0 is the constant wave sqrt(1/(p-1)); row i >= 1 belongs to component
/// k = (i + 1) / 2 and is sqrt(2/(p-1)) * sin (odd i) or cos (even i) of
/// 2*pi*k*x/(p-1). Frequencies use p-1 as the period base but are sampled at p
/// points, so the matrix is only approximately orthonormal. At the top component
/// k = (p-1)/2 the sin row vanishes identically (sin(pi*x) = 0) and the cos row
/// has squared norm 2p/(p-1).
///
/// Public APIs speak in component numbers k; row indices stay internal.
class FourierBasis {
public:
    explicit FourierBasis(int p);

    int p() const { return p_; }
    int max_component() const { return (p_ - 1) / 2; }
    const Eigen::MatrixXd& matrix() const { return matrix_; }
    const std::vector<BasisRow>& rows() const { return rows_; }

    double period(int k) const;

    static int component_of_row(int row) { return (row + 1) / 2; }
    // Row indices {sin, cos} for k >= 1; {0, -1} for the constant.
    static std::pair<int, int> rows_of_component(int k);

private:
    int p_;
    Eigen::MatrixXd matrix_;
    std::vector<BasisRow> rows_;
};

FourierBasis build_basis(int p);

/// Logits in Fourier space. `raw` is F*u; `magnitudes[k]` folds the sin/cos pair
/// of component k. Averaged spectra carry magnitudes only and leave `raw` empty.
struct Spectrum {
    int p = 0;
    Eigen::VectorXd raw;
    Eigen::VectorXd magnitudes;
};

Eigen::VectorXd fold_magnitudes(int p, const Eigen::Ref<const Eigen::VectorXd>& raw);

Spectrum dft(const FourierBasis& basis, const Eigen::Ref<const Eigen::VectorXd>& u);
Eigen::VectorXd idft(const FourierBasis& basis, const Spectrum& s);

struct ComponentPeak {
    int k = 0;
    double period = 0.0;
    double magnitude = 0.0;
};

/// Up to n components with k >= min_component, largest magnitude first; ties go to
/// the smaller k.
std::vector<ComponentPeak> top_outlier_components(const Spectrum& s, int n, int min_component);

/// Components k >= min_component whose magnitude exceeds mean + n_sigma * stddev
/// of the magnitudes in that band (population stddev).
std::vector<ComponentPeak> sigma_outliers(const Spectrum& s, int min_component, double n_sigma = 4.0);

double component_period(int p, int k);

/// CSV with columns component_k, period, magnitude; constant row first.
void write_spectrum_csv(std::ostream& os, const Spectrum& s);

}  // namespace fprobe
