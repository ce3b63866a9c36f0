#include "fprobe/fourier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

namespace fprobe {

FourierBasis::FourierBasis(int p) : p_(p) {
    if (p < 3 || p % 2 == 0) {
        throw std::invalid_argument("FourierBasis: p must be an odd integer >= 3, got " +
                                    std::to_string(p));
    }
    const double base = static_cast<double>(p - 1);
    matrix_.resize(p, p);
    rows_.reserve(static_cast<size_t>(p));

    matrix_.row(0).setConstant(std::sqrt(1.0 / base));
    rows_.push_back({0, WaveKind::constant, 0, 0.0, std::numeric_limits<double>::infinity()});

    const double scale = std::sqrt(2.0 / base);
    for (int i = 1; i < p; ++i) {
        const int k = component_of_row(i);
        const bool is_sin = (i % 2) == 1;
        const double omega = 2.0 * std::numbers::pi * k / base;
        for (int x = 0; x < p; ++x) {
            const double phase = omega * x;
            matrix_(i, x) = scale * (is_sin ? std::sin(phase) : std::cos(phase));
        }
        rows_.push_back({i, is_sin ? WaveKind::sin : WaveKind::cos, k, k / base, base / k});
    }
}

double FourierBasis::period(int k) const { return component_period(p_, k); }

std::pair<int, int> FourierBasis::rows_of_component(int k) {
    if (k == 0) {
        return {0, -1};
    }
    return {2 * k - 1, 2 * k};
}

FourierBasis build_basis(int p) { return FourierBasis(p); }

double component_period(int p, int k) {
    if (k == 0) {
        return std::numeric_limits<double>::infinity();
    }
    return static_cast<double>(p - 1) / k;
}

Eigen::VectorXd fold_magnitudes(int p, const Eigen::Ref<const Eigen::VectorXd>& raw) {
    const int n_comp = (p - 1) / 2 + 1;
    Eigen::VectorXd m(n_comp);
    m[0] = std::abs(raw[0]);
    for (int k = 1; k < n_comp; ++k) {
        const double s = raw[2 * k - 1];
        const double c = raw[2 * k];
        m[k] = std::sqrt(s * s + c * c);
    }
    return m;
}

Spectrum dft(const FourierBasis& basis, const Eigen::Ref<const Eigen::VectorXd>& u) {
    if (u.size() != basis.p()) {
        throw std::invalid_argument("dft: vector length " + std::to_string(u.size()) +
                                    " does not match p=" + std::to_string(basis.p()));
    }
    Spectrum s;
    s.p = basis.p();
    s.raw = basis.matrix() * u;
    s.magnitudes = fold_magnitudes(s.p, s.raw);
    return s;
}

Eigen::VectorXd idft(const FourierBasis& basis, const Spectrum& s) {
    if (s.p != basis.p() || s.raw.size() != basis.p()) {
        throw std::invalid_argument("idft: spectrum size does not match basis p=" +
                                    std::to_string(basis.p()));
    }
    return basis.matrix().transpose() * s.raw;
}

std::vector<ComponentPeak> top_outlier_components(const Spectrum& s, int n, int min_component) {
    const int n_comp = static_cast<int>(s.magnitudes.size());
    if (n < 1) {
        throw std::invalid_argument("top_outlier_components: n must be >= 1");
    }
    if (min_component < 0 || min_component >= n_comp) {
        throw std::invalid_argument("top_outlier_components: min_component out of range");
    }
    std::vector<ComponentPeak> peaks;
    for (int k = min_component; k < n_comp; ++k) {
        if (s.magnitudes[k] > 0.0) {
            peaks.push_back({k, component_period(s.p, k), s.magnitudes[k]});
        }
    }
    std::stable_sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) {
        if (a.magnitude != b.magnitude) {
            return a.magnitude > b.magnitude;
        }
        return a.k < b.k;
    });
    if (static_cast<int>(peaks.size()) > n) {
        peaks.resize(static_cast<size_t>(n));
    }
    return peaks;
}

std::vector<ComponentPeak> sigma_outliers(const Spectrum& s, int min_component, double n_sigma) {
    const int n_comp = static_cast<int>(s.magnitudes.size());
    if (min_component < 0 || min_component >= n_comp) {
        throw std::invalid_argument("sigma_outliers: min_component out of range");
    }
    const auto band = s.magnitudes.segment(min_component, n_comp - min_component);
    const double mean = band.mean();
    const double var = (band.array() - mean).square().mean();
    const double threshold = mean + n_sigma * std::sqrt(var);
    std::vector<ComponentPeak> out;
    for (int k = min_component; k < n_comp; ++k) {
        if (s.magnitudes[k] > threshold) {
            out.push_back({k, component_period(s.p, k), s.magnitudes[k]});
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.magnitude > b.magnitude; });
    return out;
}

void write_spectrum_csv(std::ostream& os, const Spectrum& s) {
    os << "component_k,period,magnitude\n";
    char buf[64];
    for (int k = 0; k < s.magnitudes.size(); ++k) {
        os << k << ',';
        if (k == 0) {
            os << "inf";
        } else {
            std::snprintf(buf, sizeof buf, "%.17g", component_period(s.p, k));
            os << buf;
        }
        std::snprintf(buf, sizeof buf, "%.17g", s.magnitudes[k]);
        os << ',' << buf << '\n';
    }
}

}  // namespace fprobe
