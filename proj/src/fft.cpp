#include "fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <mutex>

namespace envtrack::detail {

namespace {

std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

struct PlanGuard {
    fftw_plan plan = nullptr;
    ~PlanGuard() {
        if (plan) {
            std::lock_guard lock(planner_mutex());
            fftw_destroy_plan(plan);
        }
    }
};

}  // namespace

std::vector<std::complex<double>> rfft(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<double> in(x.begin(), x.end());
    std::vector<std::complex<double>> out(n / 2 + 1);
    if (n == 0) return out;
    PlanGuard g;
    {
        std::lock_guard lock(planner_mutex());
        g.plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(),
                                      reinterpret_cast<fftw_complex*>(out.data()), FFTW_ESTIMATE);
    }
    fftw_execute(g.plan);
    return out;
}

std::vector<double> irfft(std::span<const std::complex<double>> bins, std::size_t n) {
    std::vector<std::complex<double>> in(bins.begin(), bins.end());
    in.resize(n / 2 + 1);
    std::vector<double> out(n);
    if (n == 0) return out;
    PlanGuard g;
    {
        std::lock_guard lock(planner_mutex());
        g.plan = fftw_plan_dft_c2r_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(in.data()),
                                      out.data(), FFTW_ESTIMATE);
    }
    fftw_execute(g.plan);
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : out) v *= scale;
    return out;
}

std::size_t good_fft_size(std::size_t n) {
    if (n <= 1) return 1;
    for (std::size_t m = n;; ++m) {
        std::size_t r = m;
        for (std::size_t p : {2, 3, 5, 7})
            while (r % p == 0) r /= p;
        if (r == 1) return m;
    }
}

std::vector<double> fft_convolve(std::span<const double> x, std::span<const double> h) {
    if (x.empty() || h.empty()) return {};
    const std::size_t out_len = x.size() + h.size() - 1;
    if (std::min(x.size(), h.size()) <= 32) {
        std::vector<double> y(out_len, 0.0);
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t k = 0; k < h.size(); ++k) y[i + k] += x[i] * h[k];
        return y;
    }
    const std::size_t n = good_fft_size(out_len);
    std::vector<double> xp(n, 0.0), hp(n, 0.0);
    std::copy(x.begin(), x.end(), xp.begin());
    std::copy(h.begin(), h.end(), hp.begin());
    auto X = rfft(xp);
    const auto H = rfft(hp);
    for (std::size_t i = 0; i < X.size(); ++i) X[i] *= H[i];
    auto y = irfft(X, n);
    y.resize(out_len);
    return y;
}

}  // namespace envtrack::detail
